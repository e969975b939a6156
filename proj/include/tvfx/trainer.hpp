// Copyright 2026 the tvfx authors
// SPDX-License-Identifier: Apache-2.0
//
// Training orchestration: window batching over dataset takes, the
// adversarial phase (alternating critic/generator steps with balanced
// hinge + spectral + optional mode-seeking objectives), state-predictor
// pre-training over frozen features, generator fine-tuning, windowed-
// target evaluation, modulation-loss evaluation on the chirp segment,
// checkpoint selection rules, and an append-only JSONL metrics log.
//
// Every stochastic draw during training derives from (seed, purpose,
// iteration) through a splittable hash rather than a consumed stream, so
// interrupting at any checkpoint and resuming reproduces the uninterrupted
// trajectory exactly.
//
// Window pairing: a target slice [s, s+W) trains against the input slice
// [s - left, s + W + right), where right is the output FIR's group delay
// (the dataset's own lowpass is delay-compensated, so input and target are
// center-aligned) and left covers the remaining causal context the
// generator consumes.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "tvfx/checkpoint.hpp"
#include "tvfx/common.hpp"
#include "tvfx/config.hpp"
#include "tvfx/dataset.hpp"
#include "tvfx/discriminator.hpp"
#include "tvfx/dsp.hpp"
#include "tvfx/generator.hpp"
#include "tvfx/losses.hpp"
#include "tvfx/metric.hpp"
#include "tvfx/optim.hpp"
#include "tvfx/train_config.hpp"

namespace tvfx::train {

using Mat = nn::Mat<double>;
using Batch = nn::Batch<double>;

inline constexpr const char* kPhaseAdversarial = "adversarial";
inline constexpr const char* kPhaseSpnPretrain = "spn-pretrain";
inline constexpr const char* kPhaseFinetune = "finetune";

// ---------------------------------------------------------------------------
// Window arithmetic.
// ---------------------------------------------------------------------------

struct WindowPlan {
  std::int64_t window = 0;
  std::int64_t hop = 0;
  std::int64_t left = 0;   // past context prepended to the input slice
  std::int64_t right = 0;  // future context appended (FIR group delay)

  static WindowPlan make(const gen::GeneratorConfig& g, int window, int hop) {
    WindowPlan p;
    p.window = window;
    p.hop = hop;
    const auto required = static_cast<std::int64_t>(
        gen::Generator<double>::required_input_length(
            g, static_cast<std::size_t>(window)));
    const std::int64_t delay = g.fir_taps > 0 ? (g.fir_taps - 1) / 2 : 0;
    p.right = delay;
    p.left = required - window - delay;
    check(p.left >= 0, "window plan: negative left context");
    return p;
  }

  [[nodiscard]] std::int64_t input_length() const {
    return left + window + right;
  }

  // Valid target-slice starts within a take of the given length.
  [[nodiscard]] std::vector<std::int64_t> starts(std::int64_t take_len) const {
    std::vector<std::int64_t> out;
    for (std::int64_t s = left; s + window + right <= take_len; s += hop) {
      out.push_back(s);
    }
    return out;
  }
};

struct WindowRef {
  std::size_t take = 0;
  std::int64_t start = 0;  // target start within the take
};

struct BatchData {
  Batch x_in;   // generator input slices (window + context)
  Batch x_cond; // dry audio aligned with the target, for the critic
  Batch y;      // target slices
  Mat phi;      // one control row per item
};

// Loads a split's takes once and serves shuffled window batches in a
// deterministic, seed-derived per-epoch order.
class WindowSampler {
 public:
  WindowSampler(const data::DatasetView& ds, data::Split split,
                WindowPlan plan, std::uint64_t seed)
      : plan_(plan), seed_(seed) {
    const std::size_t n = ds.take_count(split);
    check_data(n > 0, "window sampler: split has no takes");
    for (std::size_t i = 0; i < n; ++i) {
      takes_.push_back(ds.load(split, i));
      const auto len = static_cast<std::int64_t>(takes_.back().x.size());
      for (std::int64_t s : plan_.starts(len)) refs_.push_back({i, s});
    }
    check_data(!refs_.empty(),
               "window sampler: takes too short for one window plus the "
               "generator's input context");
  }

  [[nodiscard]] std::size_t count() const { return refs_.size(); }
  [[nodiscard]] const std::vector<WindowRef>& refs() const { return refs_; }
  [[nodiscard]] const data::TakeView& take(std::size_t i) const {
    return takes_.at(i);
  }
  [[nodiscard]] const WindowPlan& plan() const { return plan_; }

  [[nodiscard]] std::vector<WindowRef> epoch_order(std::int64_t epoch) const {
    std::vector<WindowRef> order = refs_;
    Rng rng(derive_seed(seed_, "epoch-order",
                        static_cast<std::uint64_t>(epoch)));
    rng.shuffle(order);
    return order;
  }

  [[nodiscard]] BatchData gather(const WindowRef* refs, std::size_t count,
                                 int control_dim) const {
    check(count > 0, "window sampler: empty batch");
    BatchData bd;
    bd.x_in.reserve(count);
    bd.x_cond.reserve(count);
    bd.y.reserve(count);
    bd.phi.resize(static_cast<Eigen::Index>(count), control_dim);
    for (std::size_t i = 0; i < count; ++i) {
      const auto& t = takes_.at(refs[i].take);
      check(static_cast<int>(t.phi.size()) == control_dim,
            "window sampler: control vector width mismatch");
      const std::int64_t s = refs[i].start;
      bd.x_in.push_back(slice(t.x, s - plan_.left, plan_.input_length()));
      bd.x_cond.push_back(slice(t.x, s, plan_.window));
      bd.y.push_back(slice(t.y, s, plan_.window));
      for (int c = 0; c < control_dim; ++c) {
        bd.phi(static_cast<Eigen::Index>(i), c) =
            t.phi[static_cast<std::size_t>(c)];
      }
    }
    return bd;
  }

 private:
  static Mat slice(const AudioBuffer& buf, std::int64_t start,
                   std::int64_t len) {
    check(start >= 0 &&
              static_cast<std::size_t>(start + len) <= buf.size(),
          "window sampler: slice outside the take");
    Mat m(static_cast<Eigen::Index>(len), 1);
    for (std::int64_t i = 0; i < len; ++i) {
      m(static_cast<Eigen::Index>(i), 0) =
          buf.samples[static_cast<std::size_t>(start + i)];
    }
    return m;
  }

  WindowPlan plan_;
  std::uint64_t seed_;
  std::vector<data::TakeView> takes_;
  std::vector<WindowRef> refs_;
};

// ---------------------------------------------------------------------------
// State-bundle batch helpers (pairing for mode seeking).
// ---------------------------------------------------------------------------

namespace detail {

inline gen::StateBundle<double> concat_states(
    const gen::StateBundle<double>& a, const gen::StateBundle<double>& b) {
  gen::StateBundle<double> out;
  check(a.h.size() == b.h.size() && a.c.size() == b.c.size(),
        "concat_states: block count mismatch");
  for (std::size_t j = 0; j < a.h.size(); ++j) {
    Mat h(a.h[j].rows() + b.h[j].rows(), a.h[j].cols());
    h << a.h[j], b.h[j];
    out.h.push_back(std::move(h));
    Mat c(a.c[j].rows() + b.c[j].rows(), a.c[j].cols());
    c << a.c[j], b.c[j];
    out.c.push_back(std::move(c));
  }
  return out;
}

// Folds gradient rows of [states; rotate_batch(states)] back onto the
// original bundle: rotated row i came from row (i+1) mod b.
inline gen::StateGrads<double> fold_pair_grads(
    const gen::StateGrads<double>& sg, Eigen::Index b) {
  gen::StateGrads<double> out;
  for (std::size_t j = 0; j < sg.h.size(); ++j) {
    check(sg.h[j].rows() == 2 * b, "fold_pair_grads: unexpected batch size");
    Mat h = sg.h[j].topRows(b);
    Mat c = sg.c[j].topRows(b);
    for (Eigen::Index i = 0; i < b; ++i) {
      h.row((i + 1) % b) += sg.h[j].row(b + i);
      c.row((i + 1) % b) += sg.c[j].row(b + i);
    }
    out.h.push_back(std::move(h));
    out.c.push_back(std::move(c));
  }
  return out;
}

inline Batch concat_batch(const Batch& a, const Batch& b) {
  Batch out = a;
  out.insert(out.end(), b.begin(), b.end());
  return out;
}

inline Mat vstack(const Mat& a, const Mat& b) {
  Mat out(a.rows() + b.rows(), a.cols());
  out << a, b;
  return out;
}

inline bool all_finite(std::initializer_list<double> values) {
  for (double v : values) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Evaluation report.
// ---------------------------------------------------------------------------

struct EvalReport {
  double l_mod = 0.0;
  double l_mod_p = 0.0;
  double l_mod_w = 0.0;
  double wt_mrstft = 0.0;
  std::int64_t wt_windows = 0;
  bool spn_states = false;  // false: fixed seeded stochastic states
};

// ---------------------------------------------------------------------------
// Trainer.
// ---------------------------------------------------------------------------

class Trainer {
 public:
  Trainer(gen::GeneratorConfig gcfg, disc::DiscriminatorConfig dcfg,
          disc::StatePredictorConfig scfg, TrainConfig tcfg,
          const data::DatasetView& dataset, std::filesystem::path out_dir)
      : gcfg_(gcfg),
        dcfg_(dcfg),
        scfg_(scfg),
        tcfg_(tcfg),
        dataset_(dataset),
        out_dir_(std::move(out_dir)),
        rng_(derive_seed(tcfg.seed, "trainer-stream")),
        balancer_(make_balancer()) {
    gcfg_.validate();
    dcfg_.validate();
    tcfg_.validate();
    check_config(gcfg_.sample_rate == dataset_.sample_rate(),
                 "trainer: generator and dataset sample rates disagree");
    check_config(tcfg_.state_init != "angle" || gcfg_.latent_dim == 2,
                 "trainer: angle state init needs latent_dim == 2");
    static_cast<void>(dcfg_.feature_lengths(
        static_cast<std::size_t>(tcfg_.window_size)));
    std::filesystem::create_directories(out_dir_);

    gen_ = std::make_unique<gen::Generator<double>>(
        gcfg_, derive_seed(tcfg_.seed, "generator-init"));
    disc_ = std::make_unique<disc::Discriminator<double>>(
        dcfg_, derive_seed(tcfg_.seed, "discriminator-init"));

    plan_ = WindowPlan::make(gcfg_, tcfg_.window_size, tcfg_.hop);
    train_sampler_ = std::make_unique<WindowSampler>(
        dataset_, data::Split::Train, plan_,
        derive_seed(tcfg_.seed, "train-windows"));
    WindowPlan vplan = plan_;
    vplan.hop = tcfg_.window_size;  // windowed-target eval: non-overlapping
    val_sampler_ = std::make_unique<WindowSampler>(
        dataset_, data::Split::Validation, vplan,
        derive_seed(tcfg_.seed, "val-windows"));

    spec_cfg_.windows = tcfg_.stft_windows;
    spec_cfg_.sample_rate = dataset_.sample_rate();
    spec_cfg_.band_limit_hz = tcfg_.band_limit_hz;
    spec_cfg_.validate();

    reset_optimizers();
  }

  // --- phases ---------------------------------------------------------------

  // Adversarial phase from freshly initialized models.
  ckpt::Checkpoint train_phase1() {
    phase_ = kPhaseAdversarial;
    disc_->set_frozen(disc::Component::All, false);
    spn_.reset();
    reset_optimizers();
    balancer_ = make_balancer();
    history_ = nlohmann::json::array();
    return run_loop(tcfg_.phase1_max_iters, 0);
  }

  // State-predictor pre-training over a Phase I checkpoint: everything but
  // the SPN is frozen.
  ckpt::Checkpoint pretrain_spn(const ckpt::Checkpoint& from) {
    check_data(from.phase == kPhaseAdversarial,
               "pretrain_spn: needs an adversarial-phase checkpoint");
    load_models(from);
    spn_ = std::make_unique<disc::StatePredictor<double>>(
        dcfg_, scfg_, gcfg_.n_blocks, gcfg_.lstm_hidden,
        derive_seed(tcfg_.seed, "spn-init"));
    disc_->set_frozen(disc::Component::All, true);
    phase_ = kPhaseSpnPretrain;
    reset_optimizers();
    balancer_ = make_balancer();
    history_ = nlohmann::json::array();
    frozen_gen_hash_ = ckpt::param_hash(ckpt::capture_params(*gen_));
    frozen_disc_hash_ = ckpt::param_hash(ckpt::capture_params(*disc_));
    return run_loop(tcfg_.spn_pretrain_iters, 0);
  }

  // Fine-tuning: generator and SPN learn, feature blocks stay frozen, no
  // adversarial objective. Accepts a pre-trained SPN checkpoint, or an
  // adversarial checkpoint for the fresh-SPN ablation arm.
  ckpt::Checkpoint finetune(const ckpt::Checkpoint& from) {
    check_data(from.phase == kPhaseSpnPretrain ||
                   from.phase == kPhaseAdversarial,
               "finetune: needs a pre-training or adversarial checkpoint");
    load_models(from);
    if (!from.has_spn) {
      spn_ = std::make_unique<disc::StatePredictor<double>>(
          dcfg_, scfg_, gcfg_.n_blocks, gcfg_.lstm_hidden,
          derive_seed(tcfg_.seed, "spn-init"));
    }
    disc_->set_frozen(disc::Component::All, true);
    phase_ = kPhaseFinetune;
    reset_optimizers();
    balancer_ = make_balancer();
    history_ = nlohmann::json::array();
    frozen_disc_hash_ = ckpt::param_hash(ckpt::capture_params(*disc_));
    return run_loop(tcfg_.finetune_max_iters, 0);
  }

  // Continues a checkpoint's phase from its saved iteration; with the same
  // seed this reproduces the uninterrupted run's trajectory exactly. The
  // trainer must point at the run's original output directory: earlier
  // snapshots referenced by the restored history are expected to be there.
  ckpt::Checkpoint resume(const ckpt::Checkpoint& ck) {
    load_models(ck);
    phase_ = ck.phase;
    std::int64_t budget = 0;
    if (phase_ == kPhaseAdversarial) {
      disc_->set_frozen(disc::Component::All, false);
      budget = tcfg_.phase1_max_iters;
    } else if (phase_ == kPhaseSpnPretrain) {
      check_data(ck.has_spn, "resume: pre-training checkpoint without SPN");
      disc_->set_frozen(disc::Component::All, true);
      budget = tcfg_.spn_pretrain_iters;
      frozen_gen_hash_ = ckpt::param_hash(ckpt::capture_params(*gen_));
      frozen_disc_hash_ = ckpt::param_hash(ckpt::capture_params(*disc_));
    } else if (phase_ == kPhaseFinetune) {
      check_data(ck.has_spn, "resume: fine-tune checkpoint without SPN");
      disc_->set_frozen(disc::Component::All, true);
      budget = tcfg_.finetune_max_iters;
      frozen_disc_hash_ = ckpt::param_hash(ckpt::capture_params(*disc_));
    } else {
      throw DataError("resume: unknown phase " + phase_);
    }
    g_opt_->restore(ck.g_opt);
    d_opt_->restore(ck.d_opt);
    balancer_.restore(ck.balancer);
    rng_.restore(ck.rng_state, ck.rng_has_spare, ck.rng_spare);
    history_ = ck.history;
    return run_loop(budget, ck.iteration);
  }

  // --- evaluation -----------------------------------------------------------

  // Loads a checkpoint's parameters for evaluation or rendering without
  // starting a phase. State-predictor checkpoints freeze the critic so the
  // predictor can read its feature pyramid.
  void attach(const ckpt::Checkpoint& ck) {
    load_models(ck);
    if (ck.has_spn) disc_->set_frozen(disc::Component::All, true);
    phase_ = ck.phase;
    history_ = ck.history;
  }

  EvalReport evaluate() { return run_validation(); }

  // Generator output for the validation chirp segment, with the reference
  // slice and chirp spec used; shared by evaluation, reports, and plots.
  struct ChirpRender {
    AudioBuffer reference;
    AudioBuffer rendered;
    AudioBuffer dry;
    dsp::ChirpSpec chirp;
  };
  ChirpRender render_chirp_segment() {
    const data::TakeView& v = val_sampler_->take(0);
    const int fs = dataset_.sample_rate();
    dsp::ChirpSpec cs;
    cs.f0 = dataset_.chirp_f0();
    cs.f1 = fs / 2.0;
    cs.chirp_duration = dataset_.chirp_duration();
    const auto chirp_len =
        static_cast<std::int64_t>(dsp::chirp_length(cs, fs));
    const auto total_chirps = static_cast<std::int64_t>(
        std::llround(dataset_.chirp_seconds() / dataset_.chirp_duration()));
    // Skip whole chirps at the front until the generator's left context
    // fits; chirps are identical, so alignment survives.
    const std::int64_t j0 = (plan_.left + chirp_len - 1) / chirp_len;
    const std::int64_t n_eval = total_chirps - j0;
    check_data(n_eval >= 2, "chirp segment too short for the input context");
    cs.n_repeats = static_cast<int>(n_eval);
    const std::int64_t s = j0 * chirp_len;
    const std::int64_t len = n_eval * chirp_len;
    check_data(static_cast<std::size_t>(s + len + plan_.right) <= v.x.size(),
               "validation take too short for the chirp segment");

    Mat x_in(plan_.left + len + plan_.right, 1);
    for (std::int64_t i = 0; i < x_in.rows(); ++i) {
      x_in(i, 0) = v.x.samples[static_cast<std::size_t>(s - plan_.left + i)];
    }
    Mat phi(1, gcfg_.control_dim);
    for (int c = 0; c < gcfg_.control_dim; ++c) {
      phi(0, c) = v.phi[static_cast<std::size_t>(c)];
    }
    gen::StateBundle<double> st;
    if (spn_) {
      Mat xc(len, 1), yc(len, 1);
      for (std::int64_t i = 0; i < len; ++i) {
        xc(i, 0) = v.x.samples[static_cast<std::size_t>(s + i)];
        yc(i, 0) = v.y.samples[static_cast<std::size_t>(s + i)];
      }
      st = spn_->predict_states(*disc_, {xc}, {yc}, phi);
    } else {
      st = eval_states(1, derive_seed(tcfg_.seed, "mod-eval-states"));
    }
    Batch out = gen_->forward({x_in}, phi, st);

    ChirpRender r;
    r.chirp = cs;
    r.reference.sample_rate = fs;
    r.rendered.sample_rate = fs;
    r.dry.sample_rate = fs;
    r.reference.samples.resize(static_cast<std::size_t>(len));
    r.dry.samples.resize(static_cast<std::size_t>(len));
    r.rendered.samples.resize(static_cast<std::size_t>(len));
    for (std::int64_t i = 0; i < len; ++i) {
      r.reference.samples[static_cast<std::size_t>(i)] =
          v.y.samples[static_cast<std::size_t>(s + i)];
      r.dry.samples[static_cast<std::size_t>(i)] =
          v.x.samples[static_cast<std::size_t>(s + i)];
      r.rendered.samples[static_cast<std::size_t>(i)] = out[0](i, 0);
    }
    return r;
  }

  // --- accessors ------------------------------------------------------------

  gen::Generator<double>& generator() { return *gen_; }
  disc::Discriminator<double>& discriminator() { return *disc_; }
  disc::StatePredictor<double>* spn() { return spn_.get(); }
  [[nodiscard]] const nlohmann::json& history() const { return history_; }
  [[nodiscard]] const WindowPlan& plan() const { return plan_; }
  [[nodiscard]] const loss::SpectralLossConfig& spectral_config() const {
    return spec_cfg_;
  }
  WindowSampler& train_sampler() { return *train_sampler_; }
  WindowSampler& validation_sampler() { return *val_sampler_; }

  // Rebuilds models from a checkpoint's own config snapshot (CLI eval and
  // rendering paths).
  struct Restored {
    gen::GeneratorConfig gcfg;
    disc::DiscriminatorConfig dcfg;
    disc::StatePredictorConfig scfg;
    TrainConfig tcfg;
    std::unique_ptr<gen::Generator<double>> gen;
    std::unique_ptr<disc::Discriminator<double>> disc;
    std::unique_ptr<disc::StatePredictor<double>> spn;
  };
  static Restored restore_models(const ckpt::Checkpoint& ck) {
    Restored r;
    cfg::read_generator(ck.configs.at("generator"), r.gcfg, "checkpoint.generator");
    cfg::read_discriminator(ck.configs.at("discriminator"), r.dcfg,
                            "checkpoint.discriminator");
    cfg::read_spn(ck.configs.at("spn"), r.scfg, "checkpoint.spn");
    cfg::read_train(ck.configs.at("train"), r.tcfg, "checkpoint.train");
    r.gen = std::make_unique<gen::Generator<double>>(
        r.gcfg, derive_seed(r.tcfg.seed, "generator-init"));
    r.disc = std::make_unique<disc::Discriminator<double>>(
        r.dcfg, derive_seed(r.tcfg.seed, "discriminator-init"));
    ckpt::restore_params(*r.gen, ck.generator);
    ckpt::restore_params(*r.disc, ck.discriminator);
    if (ck.has_spn) {
      r.spn = std::make_unique<disc::StatePredictor<double>>(
          r.dcfg, r.scfg, r.gcfg.n_blocks, r.gcfg.lstm_hidden,
          derive_seed(r.tcfg.seed, "spn-init"));
      ckpt::restore_params(*r.spn, ck.spn);
    }
    return r;
  }

 private:
  // --- setup helpers --------------------------------------------------------

  loss::Balancer make_balancer() {
    return loss::Balancer(0.99, [this](const std::string& msg) {
      nlohmann::json rec{{"type", "warning"}, {"message", msg}};
      write_metrics_line(rec);
    });
  }

  void reset_optimizers() {
    opt::AdamConfig g{tcfg_.g_lr, tcfg_.adam_beta1, tcfg_.adam_beta2,
                      tcfg_.adam_eps};
    opt::AdamConfig d{tcfg_.d_lr, tcfg_.adam_beta1, tcfg_.adam_beta2,
                      tcfg_.adam_eps};
    g_opt_ = std::make_unique<opt::Adam>(g);
    d_opt_ = std::make_unique<opt::Adam>(d);
  }

  void load_models(const ckpt::Checkpoint& ck) {
    // The checkpoint must have been produced by this model configuration;
    // training knobs (budgets, rates) may differ across sessions.
    check_data(ck.configs.at("generator") == cfg::generator_to_json(gcfg_),
               "trainer: checkpoint generator config differs");
    check_data(ck.configs.at("discriminator") ==
                   cfg::discriminator_to_json(dcfg_),
               "trainer: checkpoint discriminator config differs");
    ckpt::restore_params(*gen_, ck.generator);
    ckpt::restore_params(*disc_, ck.discriminator);
    if (ck.has_spn) {
      check_data(ck.configs.at("spn") == cfg::spn_to_json(scfg_),
                 "trainer: checkpoint SPN config differs");
      spn_ = std::make_unique<disc::StatePredictor<double>>(
          dcfg_, scfg_, gcfg_.n_blocks, gcfg_.lstm_hidden,
          derive_seed(tcfg_.seed, "spn-init"));
      ckpt::restore_params(*spn_, ck.spn);
    } else {
      spn_.reset();
    }
  }

  // --- stochastic state draws (pure functions of seed and purpose) ----------

  std::pair<Mat, gen::StateBundle<double>> draw_latent_states(
      int batch, const char* purpose, std::int64_t iter) {
    const std::uint64_t s = derive_seed(tcfg_.seed, purpose,
                                        static_cast<std::uint64_t>(iter));
    Mat u = tcfg_.state_init == "angle" ? gen_->sample_angle_latent(batch, s)
                                        : gen_->sample_normal_latent(batch, s);
    return {u, gen_->states_from_latent(u)};
  }

  gen::StateBundle<double> eval_states(int batch, std::uint64_t seed) {
    Mat u = tcfg_.state_init == "angle" ? gen_->sample_angle_latent(batch, seed)
                                        : gen_->sample_normal_latent(batch, seed);
    return gen_->states_from_latent(u);
  }

  // --- phase steps ----------------------------------------------------------

  nlohmann::json step_adversarial(const BatchData& bd, std::int64_t iter) {
    const int b = tcfg_.batch_size;

    // Critic step: one real and one fake pass; the generator only supplies
    // samples here, so its gradients are never taken.
    disc_->zero_grad();
    Mat s_real = disc_->discriminate(bd.x_cond, bd.y, bd.phi);
    disc_->backward(loss::hinge_discriminator_real_grad(s_real));
    auto [u_d, st_d] =
        draw_latent_states(b, "critic-fake-states", iter);
    static_cast<void>(u_d);
    Batch yhat_d = gen_->forward(bd.x_in, bd.phi, st_d);
    Mat s_fake_d = disc_->discriminate(bd.x_cond, yhat_d, bd.phi);
    disc_->backward(loss::hinge_discriminator_fake_grad(s_fake_d));
    const double d_loss = loss::hinge_discriminator(s_real, s_fake_d);
    d_opt_->step([&](const nn::ParamFn<double>& f) {
      disc_->visit_trainable(f);
    });

    // Generator step. With mode seeking the batch is doubled: the second
    // half reruns the same inputs under batch-rotated states, and the pair
    // objective pushes the two renderings apart.
    gen_->zero_grad();
    disc_->zero_grad();
    const bool ms = tcfg_.ms_enabled;
    auto [u, st1] = draw_latent_states(b, "generator-states", iter);
    static_cast<void>(u);
    Batch yhat = ms ? gen_->forward(detail::concat_batch(bd.x_in, bd.x_in),
                                    detail::vstack(bd.phi, bd.phi),
                                    detail::concat_states(
                                        st1, loss::rotate_batch(st1)))
                    : gen_->forward(bd.x_in, bd.phi, st1);
    Batch yhat1(yhat.begin(), yhat.begin() + b);

    Mat s_fake = disc_->discriminate(bd.x_cond, yhat1, bd.phi);
    const double l_adv = loss::hinge_generator(s_fake);
    auto [dxc, dy_adv] =
        disc_->backward(loss::hinge_generator_grad(s_fake));
    static_cast<void>(dxc);

    Batch dy_spec;
    const double l_spec =
        loss::mrstft_batch(bd.y, yhat1, spec_cfg_, &dy_spec);

    // Pad the data-half gradients with zeros over the rotated half so all
    // terms share one output-gradient shape for the balancer.
    auto pad = [&](Batch& g) {
      if (!ms) return;
      for (int i = 0; i < b; ++i) {
        g.push_back(Mat::Zero(plan_.window, 1));
      }
    };
    pad(dy_adv);
    pad(dy_spec);

    double l_ms = 0.0;
    Batch dy_ms;
    if (ms) {
      dy_ms.assign(static_cast<std::size_t>(2 * b),
                   Mat::Zero(plan_.window, 1));
      for (int i = 0; i < b; ++i) {
        Mat g1, g2;
        const double d = loss::mrstft(yhat[static_cast<std::size_t>(i)],
                                      yhat[static_cast<std::size_t>(b + i)],
                                      spec_cfg_, &g1, &g2);
        l_ms += loss::mode_seeking(d, tcfg_.ms_epsilon) / b;
        const double outer =
            loss::mode_seeking_grad(d, tcfg_.ms_epsilon) / b;
        dy_ms[static_cast<std::size_t>(i)] = outer * g1;
        dy_ms[static_cast<std::size_t>(b + i)] = outer * g2;
      }
    }

    std::vector<loss::LossTerm> terms;
    terms.push_back({"adversarial", tcfg_.lambda_adv, std::move(dy_adv)});
    terms.push_back({"spectral", tcfg_.lambda_spectral, std::move(dy_spec)});
    if (ms) terms.push_back({"mode-seeking", tcfg_.ms_weight, std::move(dy_ms)});

    nlohmann::json norms = nlohmann::json::object();
    for (const auto& t : terms) {
      norms[t.name] = loss::Balancer::batch_norm(t.grad);
    }

    Batch combined = balancer_.combine(terms);
    gen::StateGrads<double> sg = gen_->backward(combined);
    gen::StateGrads<double> d_st1 =
        ms ? detail::fold_pair_grads(sg, b) : std::move(sg);
    gen_->latent_backward(d_st1);
    g_opt_->step([&](const nn::ParamFn<double>& f) { gen_->visit(f); });

    nlohmann::json ema = nlohmann::json::object();
    for (const auto& [name, v] : balancer_.state()) ema[name] = v;
    return {{"type", "step"},
            {"phase", phase_},
            {"iter", iter},
            {"d_loss", d_loss},
            {"g_adv", l_adv},
            {"g_spec", l_spec},
            {"g_ms", l_ms},
            {"finite", detail::all_finite({d_loss, l_adv, l_spec, l_ms})},
            {"grad_norms", std::move(norms)},
            {"balancer_ema", std::move(ema)}};
  }

  nlohmann::json step_spn(const BatchData& bd, std::int64_t iter) {
    gen::StateBundle<double> st =
        spn_->predict_states(*disc_, bd.x_cond, bd.y, bd.phi);
    Batch yhat = gen_->forward(bd.x_in, bd.phi, st);
    Batch dy;
    const double l = loss::mrstft_batch(bd.y, yhat, spec_cfg_, &dy);
    gen_->zero_grad();
    disc_->zero_grad();
    spn_->zero_grad();
    gen::StateGrads<double> sg = gen_->backward(dy);
    spn_->backward(sg);
    // The SPN learns alone; generator and critic tensors are not visited.
    g_opt_->step([&](const nn::ParamFn<double>& f) { spn_->visit(f); });
    return {{"type", "step"},
            {"phase", phase_},
            {"iter", iter},
            {"spn_mrstft", l},
            {"finite", detail::all_finite({l})},
            {"grad_norm", loss::Balancer::batch_norm(dy)}};
  }

  nlohmann::json step_finetune(const BatchData& bd, std::int64_t iter) {
    static_cast<void>(iter);
    const int b = tcfg_.batch_size;
    const bool ms = tcfg_.ms_enabled;
    gen_->zero_grad();
    disc_->zero_grad();
    spn_->zero_grad();

    gen::StateBundle<double> st1 =
        spn_->predict_states(*disc_, bd.x_cond, bd.y, bd.phi);
    Batch yhat = ms ? gen_->forward(detail::concat_batch(bd.x_in, bd.x_in),
                                    detail::vstack(bd.phi, bd.phi),
                                    detail::concat_states(
                                        st1, loss::rotate_batch(st1)))
                    : gen_->forward(bd.x_in, bd.phi, st1);
    Batch yhat1(yhat.begin(), yhat.begin() + b);

    Batch dy_spec;
    const double l_spec =
        loss::mrstft_batch(bd.y, yhat1, spec_cfg_, &dy_spec);
    if (ms) {
      for (int i = 0; i < b; ++i) dy_spec.push_back(Mat::Zero(plan_.window, 1));
    }

    double l_ms = 0.0;
    Batch dy_ms;
    if (ms) {
      dy_ms.assign(static_cast<std::size_t>(2 * b),
                   Mat::Zero(plan_.window, 1));
      for (int i = 0; i < b; ++i) {
        Mat g1, g2;
        const double d = loss::mrstft(yhat[static_cast<std::size_t>(i)],
                                      yhat[static_cast<std::size_t>(b + i)],
                                      spec_cfg_, &g1, &g2);
        l_ms += loss::mode_seeking(d, tcfg_.ms_epsilon) / b;
        const double outer =
            loss::mode_seeking_grad(d, tcfg_.ms_epsilon) / b;
        dy_ms[static_cast<std::size_t>(i)] = outer * g1;
        dy_ms[static_cast<std::size_t>(b + i)] = outer * g2;
      }
    }

    std::vector<loss::LossTerm> terms;
    terms.push_back({"spectral", 1.0, std::move(dy_spec)});
    if (ms) terms.push_back({"mode-seeking", tcfg_.ms_weight, std::move(dy_ms)});
    nlohmann::json norms = nlohmann::json::object();
    for (const auto& t : terms) {
      norms[t.name] = loss::Balancer::batch_norm(t.grad);
    }
    Batch combined = balancer_.combine(terms);
    gen::StateGrads<double> sg = gen_->backward(combined);
    gen::StateGrads<double> d_st1 =
        ms ? detail::fold_pair_grads(sg, b) : std::move(sg);
    spn_->backward(d_st1);
    g_opt_->step([&](const nn::ParamFn<double>& f) {
      gen_->visit(f);
      spn_->visit(f);
    });

    nlohmann::json ema = nlohmann::json::object();
    for (const auto& [name, v] : balancer_.state()) ema[name] = v;
    return {{"type", "step"},
            {"phase", phase_},
            {"iter", iter},
            {"g_spec", l_spec},
            {"g_ms", l_ms},
            {"finite", detail::all_finite({l_spec, l_ms})},
            {"grad_norms", std::move(norms)},
            {"balancer_ema", std::move(ema)}};
  }

  // --- validation -----------------------------------------------------------

  EvalReport run_validation() {
    EvalReport r;
    r.spn_states = (spn_ != nullptr);

    const auto& refs = val_sampler_->refs();
    const auto b = static_cast<std::size_t>(tcfg_.batch_size);
    double total = 0.0;
    for (std::size_t at = 0; at < refs.size(); at += b) {
      const std::size_t n = std::min(b, refs.size() - at);
      BatchData bd = val_sampler_->gather(&refs[at], n, gcfg_.control_dim);
      gen::StateBundle<double> st =
          spn_ ? spn_->predict_states(*disc_, bd.x_cond, bd.y, bd.phi)
               : eval_states(static_cast<int>(n),
                             derive_seed(tcfg_.seed, "wt-eval-states", at));
      Batch yhat = gen_->forward(bd.x_in, bd.phi, st);
      for (std::size_t i = 0; i < n; ++i) {
        total += loss::mrstft(bd.y[i], yhat[i], spec_cfg_);
      }
    }
    r.wt_windows = static_cast<std::int64_t>(refs.size());
    r.wt_mrstft = total / static_cast<double>(refs.size());

    ChirpRender cr = render_chirp_segment();
    const metric::ModMetricResult m =
        metric::mod_metric(cr.reference, cr.rendered, cr.chirp);
    r.l_mod = m.l_mod;
    r.l_mod_p = m.l_mod_p;
    r.l_mod_w = m.l_mod_w;
    return r;
  }

  // --- loop scaffolding -----------------------------------------------------

  void write_metrics_line(const nlohmann::json& rec) {
    if (!metrics_.is_open()) return;
    metrics_ << rec.dump() << "\n";
    metrics_.flush();
  }

  ckpt::Checkpoint snapshot(std::int64_t iter, std::int64_t epoch) {
    ckpt::Checkpoint ck;
    ck.phase = phase_;
    ck.iteration = iter;
    ck.epoch = epoch;
    ck.generator = ckpt::capture_params(*gen_);
    ck.discriminator = ckpt::capture_params(*disc_);
    if (spn_) {
      ck.spn = ckpt::capture_params(*spn_);
      ck.has_spn = true;
    }
    ck.g_opt = g_opt_->state();
    ck.d_opt = d_opt_->state();
    ck.balancer = balancer_.state();
    ck.rng_state = rng_.state();
    ck.rng_has_spare = rng_.has_spare();
    ck.rng_spare = rng_.spare();
    ck.configs = {{"generator", cfg::generator_to_json(gcfg_)},
                  {"discriminator", cfg::discriminator_to_json(dcfg_)},
                  {"spn", cfg::spn_to_json(scfg_)},
                  {"train", cfg::train_to_json(tcfg_)}};
    ck.history = history_;
    return ck;
  }

  // Lower is better; fine-tuning additionally requires the modulation
  // constraint, and any constrained record beats every unconstrained one.
  [[nodiscard]] bool improves(const nlohmann::json& rec,
                              const nlohmann::json& best) const {
    if (phase_ == kPhaseAdversarial) {
      return rec.at("l_mod").get<double>() < best.at("l_mod").get<double>();
    }
    if (phase_ == kPhaseSpnPretrain) {
      return rec.at("wt_mrstft").get<double>() <
             best.at("wt_mrstft").get<double>();
    }
    const bool rec_ok = rec.at("l_mod").get<double>() < 0.9;
    const bool best_ok = best.at("l_mod").get<double>() < 0.9;
    if (rec_ok != best_ok) return rec_ok;
    return rec.at("wt_mrstft").get<double>() <
           best.at("wt_mrstft").get<double>();
  }

  void evaluate_and_snapshot(std::int64_t iter, std::int64_t epoch) {
    if (iter == last_eval_iter_) return;
    last_eval_iter_ = iter;
    // A model whose rendering breaks validation (non-finite audio, empty
    // modulation spectrum) has diverged even if the step losses were still
    // finite; keep the post-mortem-snapshot contract either way.
    EvalReport r;
    try {
      r = run_validation();
    } catch (const std::exception& e) {
      const std::string file = "diverged_" + phase_ + ".ck";
      ckpt::save_checkpoint(out_dir_ / file, snapshot(iter, epoch));
      throw DivergenceError(
          "trainer: evaluation failed at iteration " + std::to_string(iter) +
          " (" + phase_ + "): " + e.what() + "; state saved to " + file);
    }
    if (!detail::all_finite({r.l_mod, r.wt_mrstft})) {
      const std::string file = "diverged_" + phase_ + ".ck";
      ckpt::save_checkpoint(out_dir_ / file, snapshot(iter, epoch));
      throw DivergenceError("trainer: non-finite validation at iteration " +
                            std::to_string(iter) + " (" + phase_ +
                            "); state saved to " + file);
    }
    const std::string file =
        "ckpt_" + phase_ + "_iter" + std::to_string(iter) + ".ck";
    nlohmann::json rec{{"type", "eval"},       {"phase", phase_},
                       {"iter", iter},         {"epoch", epoch},
                       {"l_mod", r.l_mod},     {"l_mod_p", r.l_mod_p},
                       {"l_mod_w", r.l_mod_w}, {"wt_mrstft", r.wt_mrstft},
                       {"wt_windows", r.wt_windows},
                       {"spn_states", r.spn_states},
                       {"file", file}};
    history_.push_back(rec);
    ckpt::save_checkpoint(out_dir_ / file, snapshot(iter, epoch));
    write_metrics_line(rec);
  }

  [[nodiscard]] std::optional<nlohmann::json> best_record() const {
    std::optional<nlohmann::json> best;
    for (const auto& rec : history_) {
      if (rec.value("type", "") != "eval") continue;
      if (rec.value("phase", "") != phase_) continue;
      if (!best || improves(rec, *best)) best = rec;
    }
    return best;
  }

  ckpt::Checkpoint run_loop(std::int64_t max_iters, std::int64_t start_iter) {
    const int b = tcfg_.batch_size;
    const auto ipe =
        static_cast<std::int64_t>(train_sampler_->count()) / b;
    check_data(ipe >= 1,
               "trainer: training split provides fewer windows than one batch");
    metrics_.close();
    metrics_.open(out_dir_ / ("metrics_" + phase_ + ".jsonl"),
                  std::ios::app);
    check(metrics_.good(), "trainer: cannot open the metrics log");
    last_eval_iter_ = -1;

    if (start_iter == 0) evaluate_and_snapshot(0, 0);

    std::vector<WindowRef> order;
    std::int64_t order_epoch = -1;
    for (std::int64_t iter = start_iter; iter < max_iters; ++iter) {
      const std::int64_t epoch = iter / ipe;
      const std::int64_t pos = iter % ipe;
      if (epoch != order_epoch) {
        order = train_sampler_->epoch_order(epoch);
        order_epoch = epoch;
      }
      BatchData bd = train_sampler_->gather(
          &order[static_cast<std::size_t>(pos * b)],
          static_cast<std::size_t>(b), gcfg_.control_dim);

      nlohmann::json rec;
      if (phase_ == kPhaseAdversarial) {
        rec = step_adversarial(bd, iter);
      } else if (phase_ == kPhaseSpnPretrain) {
        rec = step_spn(bd, iter);
      } else {
        rec = step_finetune(bd, iter);
      }
      rec["epoch"] = epoch;
      write_metrics_line(rec);

      if (!rec.at("finite").get<bool>()) {
        const std::string file = "diverged_" + phase_ + ".ck";
        ckpt::save_checkpoint(out_dir_ / file, snapshot(iter, epoch));
        throw DivergenceError("trainer: non-finite loss at iteration " +
                              std::to_string(iter) + " (" + phase_ +
                              "); state saved to " + file);
      }

      const std::int64_t done = iter + 1;
      if (done % ipe == 0 && done < max_iters) {
        const std::int64_t e = done / ipe;
        if (e % tcfg_.eval_interval_epochs == 0) {
          evaluate_and_snapshot(done, e);
        }
      }
    }
    evaluate_and_snapshot(std::max(max_iters, start_iter),
                          std::max(max_iters, start_iter) / ipe);

    if (phase_ == kPhaseSpnPretrain) {
      check(ckpt::param_hash(ckpt::capture_params(*gen_)) == frozen_gen_hash_,
            "trainer: frozen generator drifted during SPN pre-training");
    }
    if (phase_ != kPhaseAdversarial) {
      check(ckpt::param_hash(ckpt::capture_params(*disc_)) ==
                frozen_disc_hash_,
            "trainer: frozen critic drifted");
    }

    const auto best = best_record();
    check(best.has_value(), "trainer: no evaluation records");
    return ckpt::load_checkpoint(out_dir_ /
                                 best->at("file").get<std::string>());
  }

  // --- members --------------------------------------------------------------

  gen::GeneratorConfig gcfg_;
  disc::DiscriminatorConfig dcfg_;
  disc::StatePredictorConfig scfg_;
  TrainConfig tcfg_;
  const data::DatasetView& dataset_;
  std::filesystem::path out_dir_;

  std::unique_ptr<gen::Generator<double>> gen_;
  std::unique_ptr<disc::Discriminator<double>> disc_;
  std::unique_ptr<disc::StatePredictor<double>> spn_;
  std::unique_ptr<opt::Adam> g_opt_;
  std::unique_ptr<opt::Adam> d_opt_;

  WindowPlan plan_;
  std::unique_ptr<WindowSampler> train_sampler_;
  std::unique_ptr<WindowSampler> val_sampler_;
  loss::SpectralLossConfig spec_cfg_;

  Rng rng_;
  loss::Balancer balancer_;
  std::string phase_ = kPhaseAdversarial;
  nlohmann::json history_ = nlohmann::json::array();
  std::ofstream metrics_;
  std::int64_t last_eval_iter_ = -1;
  std::uint64_t frozen_gen_hash_ = 0;
  std::uint64_t frozen_disc_hash_ = 0;
};

}  // namespace tvfx::train

// Copyright 2026 the tvfx authors
// SPDX-License-Identifier: Apache-2.0
//
// Convolutional critic over (input, output) audio pairs, and the state
// predictor that reuses its feature pyramid.
//
// The critic stacks the dry input x and the (real or generated) output y as
// a two-channel signal and applies a cascade of feature blocks, each
// conv -> PReLU -> control FiLM (bypassed in snapshot mode) -> average pool.
// Every block's feature map feeds a 1x1 convolution and a global average
// pool; the pooled vectors are summed across blocks and scored by a small
// fully-connected network with PReLU hidden layers.
//
// The state predictor consumes the same per-block features - extracted with
// the feature blocks FROZEN so the representation is stable - through its
// own 1x1 + global-pool branches and fully-connected network, ending in a
// linear layer of width 2 * n_blocks * lstm_hidden that is split into tanh-
// squashed h states and unbounded c states.  Its backward pass treats the
// features as constants: no gradient ever reaches the frozen feature
// blocks.  Its parameters are stepped by the same optimizer that trains the
// generator.
//
// Freezing is expressed through two parameter views: visit() walks every
// parameter (serialization), visit_trainable() walks only unfrozen groups
// (what an optimizer should step).

#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "tvfx/common.hpp"
#include "tvfx/generator.hpp"
#include "tvfx/nn.hpp"
#include "tvfx/rng.hpp"

namespace tvfx::disc {

struct DiscriminatorConfig {
  int n_featblocks = 6;
  int channels = 24;
  std::vector<int> kernel_sizes = {8, 8, 8, 12, 16, 16};
  int pooling = 4;
  int head_hidden = 24;
  int head_layers = 2;
  bool film_enabled = false;
  int control_dim = 5;

  void validate() const {
    check_config(n_featblocks > 0 && channels > 0 && pooling > 0 &&
                     head_hidden > 0 && head_layers >= 0,
                 "discriminator config: counts must be positive");
    check_config(kernel_sizes.size() == static_cast<std::size_t>(n_featblocks),
                 "discriminator config: one kernel size per feature block");
    for (int k : kernel_sizes) {
      check_config(k > 0, "discriminator config: kernel sizes must be > 0");
    }
    check_config(!film_enabled || control_dim >= 1,
                 "discriminator config: control_dim must be >= 1 when FiLM "
                 "is enabled");
  }

  // Per-block feature lengths for a given input length; throws if any block
  // would be starved.  L' = floor((L - kernel + 1) / pooling).
  [[nodiscard]] std::vector<std::size_t> feature_lengths(
      std::size_t input_len) const {
    std::vector<std::size_t> out;
    std::size_t len = input_len;
    for (int k : kernel_sizes) {
      check(len >= static_cast<std::size_t>(k),
            "discriminator: input too short for the feature cascade");
      len = (len - static_cast<std::size_t>(k) + 1) /
            static_cast<std::size_t>(pooling);
      check(len >= 1, "discriminator: pooling exhausted the signal");
      out.push_back(len);
    }
    return out;
  }
};

// Per-block feature maps: features[j][item] is [time_j x channels].
template <typename S>
using FeatureSet = std::vector<nn::Batch<S>>;

enum class Component { FeatBlocks, Head, All };

namespace detail {

// Global average pool over time: [T x C] per item -> one row per item.
template <typename S>
nn::Mat<S> global_pool(const nn::Batch<S>& x) {
  nn::Mat<S> out(static_cast<Eigen::Index>(x.size()), x[0].cols());
  for (std::size_t i = 0; i < x.size(); ++i) {
    out.row(static_cast<Eigen::Index>(i)) = x[i].colwise().mean();
  }
  return out;
}

template <typename S>
nn::Batch<S> global_pool_backward(const nn::Mat<S>& grad_rows,
                                  const std::vector<Eigen::Index>& times) {
  nn::Batch<S> out(times.size());
  for (std::size_t i = 0; i < times.size(); ++i) {
    const S inv = S(1) / static_cast<S>(times[i]);
    out[i] = (grad_rows.row(static_cast<Eigen::Index>(i)) * inv)
                 .replicate(times[i], 1);
  }
  return out;
}

// Fully-connected trunk shared by the critic head and the state predictor:
// `layers` hidden Linear+PReLU stages of width `hidden`, then one Linear to
// `out_width` (no activation).
template <typename S>
struct Mlp {
  std::vector<nn::Linear<S>> hidden;
  std::vector<nn::PRelu<S>> act;
  std::unique_ptr<nn::Linear<S>> out;

  Mlp(int in_width, int hidden_width, int layers, int out_width, Rng& rng) {
    int w = in_width;
    for (int l = 0; l < layers; ++l) {
      hidden.emplace_back(w, hidden_width);
      hidden.back().init(rng);
      act.emplace_back(hidden_width);
      w = hidden_width;
    }
    out = std::make_unique<nn::Linear<S>>(w, out_width);
    out->init(rng);
  }

  nn::Mat<S> forward(const nn::Mat<S>& x) {
    nn::Mat<S> h = x;
    for (std::size_t l = 0; l < hidden.size(); ++l) {
      h = act[l].forward({hidden[l].forward(h)})[0];
    }
    return out->forward(h);
  }

  nn::Mat<S> backward(const nn::Mat<S>& grad_out) {
    nn::Mat<S> g = out->backward(grad_out);
    for (std::size_t l = hidden.size(); l-- > 0;) {
      g = hidden[l].backward(act[l].backward({g})[0]);
    }
    return g;
  }

  void visit(const std::string& prefix, const nn::ParamFn<S>& fn) {
    for (std::size_t l = 0; l < hidden.size(); ++l) {
      hidden[l].visit(prefix + ".fc" + std::to_string(l), fn);
      act[l].visit(prefix + ".act" + std::to_string(l), fn);
    }
    out->visit(prefix + ".out", fn);
  }

  void zero_grad() {
    for (auto& h : hidden) h.zero_grad();
    for (auto& a : act) a.zero_grad();
    out->zero_grad();
  }
};

}  // namespace detail

template <typename S>
class Discriminator {
 public:
  Discriminator(const DiscriminatorConfig& config, std::uint64_t seed)
      : cfg_(config) {
    cfg_.validate();
    Rng rng(derive_seed(seed, "discriminator-init"));
    for (int j = 0; j < cfg_.n_featblocks; ++j) {
      const int in_ch = (j == 0) ? 2 : cfg_.channels;
      FeatBlock fb{nn::Conv1d<S>(in_ch, cfg_.channels, cfg_.kernel_sizes[j]),
                   nn::PRelu<S>(cfg_.channels),
                   nn::ControlFilm<S>(cfg_.film_enabled ? cfg_.control_dim : 0,
                                      cfg_.channels),
                   nn::AvgPool1d<S>(cfg_.pooling)};
      fb.conv.init(rng);
      fb.film.init(rng);
      blocks_.push_back(std::move(fb));
      branch_.emplace_back(cfg_.channels, cfg_.channels, 1);
      branch_.back().init(rng);
    }
    head_ = std::make_unique<detail::Mlp<S>>(cfg_.channels, cfg_.head_hidden,
                                             cfg_.head_layers, 1, rng);
  }

  // Runs the feature cascade on the stacked (x, y) pair and returns each
  // block's output.  Overwrites the layer caches of the previous pass.
  FeatureSet<S> extract_features(const nn::Batch<S>& x, const nn::Batch<S>& y,
                                 const nn::Mat<S>& phi) {
    check(!x.empty() && x.size() == y.size(),
          "discriminator: batch sizes of x and y must match and be nonzero");
    nn::Batch<S> cur(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
      check(x[i].cols() == 1 && y[i].cols() == 1,
            "discriminator: inputs must be mono");
      check(x[i].rows() == y[i].rows() && x[i].rows() == x[0].rows(),
            "discriminator: window length mismatch");
      cur[i].resize(x[i].rows(), 2);
      cur[i].col(0) = x[i];
      cur[i].col(1) = y[i];
    }
    // Validates that no block is starved before any compute happens.
    static_cast<void>(
        cfg_.feature_lengths(static_cast<std::size_t>(x[0].rows())));
    if (cfg_.film_enabled) {
      check(static_cast<std::size_t>(phi.rows()) == x.size() &&
                phi.cols() == cfg_.control_dim,
            "discriminator: control vector batch mismatch");
    }
    FeatureSet<S> features;
    features.reserve(blocks_.size());
    for (auto& fb : blocks_) {
      cur = fb.pool.forward(
          fb.film.forward(fb.act.forward(fb.conv.forward(cur)), phi));
      features.push_back(cur);
    }
    return features;
  }

  // Branch + head scoring of an already-extracted feature set.  Forward
  // only; used for scoring variants of the features (and by discriminate).
  nn::Mat<S> score_from_features(const FeatureSet<S>& features) {
    check(features.size() == blocks_.size(),
          "discriminator: feature set block count mismatch");
    branch_times_.assign(blocks_.size(), {});
    nn::Mat<S> summed;
    for (std::size_t j = 0; j < blocks_.size(); ++j) {
      const nn::Batch<S> b = branch_[j].forward(features[j]);
      branch_times_[j].clear();
      for (const auto& item : b) branch_times_[j].push_back(item.rows());
      const nn::Mat<S> pooled = detail::global_pool(b);
      if (j == 0) {
        summed = pooled;
      } else {
        summed += pooled;
      }
    }
    return head_->forward(summed);
  }

  // Full scoring pass: one unbounded realness score per batch item (higher
  // reads as more real).
  nn::Mat<S> discriminate(const nn::Batch<S>& x, const nn::Batch<S>& y,
                          const nn::Mat<S>& phi) {
    return score_from_features(extract_features(x, y, phi));
  }

  // Backward through the most recent discriminate() call.  grad_score is
  // [batch x 1]; returns the gradients w.r.t. x and y.  Parameter gradients
  // accumulate for every group; the optimizer view (visit_trainable) is
  // what enforces freezing.
  std::pair<nn::Batch<S>, nn::Batch<S>> backward(const nn::Mat<S>& grad_score) {
    nn::Mat<S> dsum = head_->backward(grad_score);
    nn::Batch<S> dcur;  // gradient flowing down the feature cascade
    for (std::size_t j = blocks_.size(); j-- > 0;) {
      nn::Batch<S> db =
          detail::global_pool_backward(dsum, branch_times_[j]);
      nn::Batch<S> dz = branch_[j].backward(db);
      if (!dcur.empty()) {
        for (std::size_t i = 0; i < dz.size(); ++i) dz[i] += dcur[i];
      }
      FeatBlock& fb = blocks_[j];
      dcur = fb.conv.backward(
          fb.act.backward(fb.film.backward(fb.pool.backward(dz))));
    }
    nn::Batch<S> dx(dcur.size());
    nn::Batch<S> dy(dcur.size());
    for (std::size_t i = 0; i < dcur.size(); ++i) {
      dx[i] = dcur[i].col(0);
      dy[i] = dcur[i].col(1);
    }
    return {std::move(dx), std::move(dy)};
  }

  void set_frozen(Component component, bool frozen) {
    if (component == Component::FeatBlocks || component == Component::All) {
      featblocks_frozen_ = frozen;
    }
    if (component == Component::Head || component == Component::All) {
      head_frozen_ = frozen;
    }
  }

  [[nodiscard]] bool featblocks_frozen() const { return featblocks_frozen_; }
  [[nodiscard]] bool head_frozen() const { return head_frozen_; }

  // Every parameter (for serialization).
  void visit(const nn::ParamFn<S>& fn) { visit_impl(fn, false); }
  // Only parameters an optimizer may step (respects freezing).
  void visit_trainable(const nn::ParamFn<S>& fn) { visit_impl(fn, true); }

  void zero_grad() {
    for (auto& fb : blocks_) {
      fb.conv.zero_grad();
      fb.act.zero_grad();
      fb.film.zero_grad();
    }
    for (auto& b : branch_) b.zero_grad();
    head_->zero_grad();
  }

  [[nodiscard]] std::size_t param_count() {
    std::size_t n = 0;
    visit([&n](const std::string&, nn::Mat<S>& v, nn::Mat<S>&) {
      n += static_cast<std::size_t>(v.size());
    });
    return n;
  }

  [[nodiscard]] const DiscriminatorConfig& config() const { return cfg_; }

 private:
  struct FeatBlock {
    nn::Conv1d<S> conv;
    nn::PRelu<S> act;
    nn::ControlFilm<S> film;
    nn::AvgPool1d<S> pool;
  };

  void visit_impl(const nn::ParamFn<S>& fn, bool trainable_only) {
    if (!(trainable_only && featblocks_frozen_)) {
      for (std::size_t j = 0; j < blocks_.size(); ++j) {
        const std::string p = "feat" + std::to_string(j);
        blocks_[j].conv.visit(p + ".conv", fn);
        blocks_[j].act.visit(p + ".act", fn);
        blocks_[j].film.visit(p + ".film", fn);
      }
    }
    if (!(trainable_only && head_frozen_)) {
      for (std::size_t j = 0; j < branch_.size(); ++j) {
        branch_[j].visit("branch" + std::to_string(j), fn);
      }
      head_->visit("head", fn);
    }
  }

  DiscriminatorConfig cfg_;
  std::vector<FeatBlock> blocks_;
  std::vector<nn::Conv1d<S>> branch_;  // per-block 1x1, scoring side
  std::unique_ptr<detail::Mlp<S>> head_;
  std::vector<std::vector<Eigen::Index>> branch_times_;
  bool featblocks_frozen_ = false;
  bool head_frozen_ = false;
};

// Sizes of the state predictor's fully-connected trunk.
struct StatePredictorConfig {
  int hidden = 24;
  int layers = 2;

  void validate() const {
    check_config(hidden > 0 && layers >= 0,
                 "state predictor config: bad trunk sizes");
  }
};

// Predicts the generator's per-block initial LSTM states from the frozen
// feature pyramid of a processing window.
template <typename S>
class StatePredictor {
 public:
  StatePredictor(const DiscriminatorConfig& disc_config,
                 const StatePredictorConfig& config, int n_blocks,
                 int lstm_hidden, std::uint64_t seed)
      : cfg_(config),
        channels_(disc_config.channels),
        n_blocks_(n_blocks),
        lstm_hidden_(lstm_hidden) {
    disc_config.validate();
    cfg_.validate();
    check_config(n_blocks > 0 && lstm_hidden > 0,
                 "state predictor: target state sizes must be positive");
    Rng rng(derive_seed(seed, "state-predictor-init"));
    for (int j = 0; j < disc_config.n_featblocks; ++j) {
      branch_.emplace_back(channels_, channels_, 1);
      branch_.back().init(rng);
    }
    trunk_ = std::make_unique<detail::Mlp<S>>(
        channels_, cfg_.hidden, cfg_.layers, 2 * n_blocks * lstm_hidden, rng);
  }

  // Predicts states from features extracted by `critic` on (x, y, phi).
  // The critic's feature blocks must be frozen: the predictor is trained
  // against a stable representation, and its backward pass never reaches
  // them.
  gen::StateBundle<S> predict_states(Discriminator<S>& critic,
                                     const nn::Batch<S>& x,
                                     const nn::Batch<S>& y,
                                     const nn::Mat<S>& phi) {
    check(critic.featblocks_frozen(),
          "state predictor: feature blocks must be frozen before "
          "predict_states (unstable features otherwise)");
    return predict_from_features(critic.extract_features(x, y, phi));
  }

  gen::StateBundle<S> predict_from_features(const FeatureSet<S>& features) {
    check(features.size() == branch_.size(),
          "state predictor: feature set block count mismatch");
    branch_times_.assign(branch_.size(), {});
    nn::Mat<S> summed;
    for (std::size_t j = 0; j < branch_.size(); ++j) {
      const nn::Batch<S> b = branch_[j].forward(features[j]);
      branch_times_[j].clear();
      for (const auto& item : b) branch_times_[j].push_back(item.rows());
      const nn::Mat<S> pooled = detail::global_pool(b);
      if (j == 0) {
        summed = pooled;
      } else {
        summed += pooled;
      }
    }
    const nn::Mat<S> raw = trunk_->forward(summed);
    const int h_width = n_blocks_ * lstm_hidden_;
    state_tanh_ = raw.leftCols(h_width).array().tanh().matrix();
    gen::StateBundle<S> states;
    states.h.resize(n_blocks_);
    states.c.resize(n_blocks_);
    for (int j = 0; j < n_blocks_; ++j) {
      states.h[j] = state_tanh_.middleCols(j * lstm_hidden_, lstm_hidden_);
      states.c[j] =
          raw.middleCols(h_width + j * lstm_hidden_, lstm_hidden_);
    }
    return states;
  }

  // Backward through the most recent prediction.  Accumulates this
  // predictor's parameter gradients only; the features are constants.
  void backward(const gen::StateGrads<S>& grads) {
    check(state_tanh_.size() > 0, "state predictor: backward before predict");
    const int h_width = n_blocks_ * lstm_hidden_;
    nn::Mat<S> draw(state_tanh_.rows(), 2 * h_width);
    for (int j = 0; j < n_blocks_; ++j) {
      const auto t =
          state_tanh_.middleCols(j * lstm_hidden_, lstm_hidden_).array();
      draw.middleCols(j * lstm_hidden_, lstm_hidden_) =
          (grads.h[j].array() * (S(1) - t * t)).matrix();
      draw.middleCols(h_width + j * lstm_hidden_, lstm_hidden_) = grads.c[j];
    }
    nn::Mat<S> dsum = trunk_->backward(draw);
    for (std::size_t j = branch_.size(); j-- > 0;) {
      branch_[j].backward(
          detail::global_pool_backward(dsum, branch_times_[j]));
    }
  }

  void visit(const nn::ParamFn<S>& fn) {
    for (std::size_t j = 0; j < branch_.size(); ++j) {
      branch_[j].visit("spn.branch" + std::to_string(j), fn);
    }
    trunk_->visit("spn.trunk", fn);
  }

  void zero_grad() {
    for (auto& b : branch_) b.zero_grad();
    trunk_->zero_grad();
  }

  [[nodiscard]] std::size_t param_count() {
    std::size_t n = 0;
    visit([&n](const std::string&, nn::Mat<S>& v, nn::Mat<S>&) {
      n += static_cast<std::size_t>(v.size());
    });
    return n;
  }

 private:
  StatePredictorConfig cfg_;
  int channels_;
  int n_blocks_;
  int lstm_hidden_;
  std::vector<nn::Conv1d<S>> branch_;  // predictor-owned 1x1 layers
  std::unique_ptr<detail::Mlp<S>> trunk_;
  std::vector<std::vector<Eigen::Index>> branch_times_;
  nn::Mat<S> state_tanh_;
};

}  // namespace tvfx::disc

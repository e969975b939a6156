// Copyright 2026 the tvfx authors
// SPDX-License-Identifier: Apache-2.0
//
// Time-varying effect model: a modulation path of recurrent ModBlocks
// produces feature-wise modulation tensors that drive an audio path of
// dilated-convolutional FXBlocks.
//
// Audio path, block j (valid convolutions, no padding anywhere):
//   cascade = dense conv -> depthwise dilated convs (dilation base^(k-1))
//   out     = crop_front(input, T) + PReLU(film(cascade, mu_j))
// where T is the cascade's total trim.  Block 1 maps the mono input to
// audio_channels, so its residual skip goes through a 1x1 projection; later
// blocks add the skip directly.  The output stage is a trainable 1x1 down
// to one channel followed by a fixed anti-aliasing FIR.
//
// Modulation path, block j:
//   a_j    = PReLU(conv(s_{j-1}))            (s_0 is a zero-filled signal)
//   branch = avg-pool -> LSTM(h0_j, c0_j) -> two parallel 1x1 maps
//   mu_j   = upsample(mu-map(branch));  r_j = upsample(res-map(branch))
//   s_j    = a_j (cropped to r_j's length) + r_j
// The 1x1 maps run at the pooled rate; because linear interpolation and a
// 1x1 map are both row-linear they commute exactly, and the pooled order is
// cheaper.  The LSTM initial states are injected per forward call and their
// gradients are returned, so the states can be trained externally.
//
// Time alignment uses causal (window-end) labels: cascade output sample i of
// block j corresponds to absolute input time i + j*T, a mod-path sample at
// buffer position p to time p + j*(mod_kernel-1).  Pairing the two gives the
// FiLM crop offset o_j = j*(T - (mod_kernel-1)).  The mod-path input is
// longer than the audio input by n_blocks*(mod_pooling-1) zeros so that the
// pooling tail-trims can never starve the audio path of modulation samples.
//
// The whole modulation path depends only on the states, parameters, and
// input LENGTH - never on the audio samples - which streaming exploits by
// computing it one-shot and streaming only the audio path with per-layer
// cached padding.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "tvfx/common.hpp"
#include "tvfx/dsp.hpp"
#include "tvfx/nn.hpp"
#include "tvfx/rng.hpp"

namespace tvfx::gen {

struct GeneratorConfig {
  int n_blocks = 3;
  int audio_channels = 16;
  int audio_kernel = 16;
  int convs_per_fxblock = 4;
  int dilation_base = 4;
  int mod_channels = 16;
  int mod_kernel = 16;
  int mod_pooling = 64;
  int lstm_hidden = 32;
  bool film_enabled = false;
  int control_dim = 5;  // width of the user-control vector (when enabled)
  int latent_dim = 2;   // width of the stochastic state input u
  int sample_rate = 44100;
  int fir_taps = 1024;  // output-stage FIR; 0 disables the stage
  double fir_cutoff = 17800.0;
  double fir_attenuation_db = 100.0;

  // Total temporal trim of one FXBlock's conv cascade.
  [[nodiscard]] std::size_t fx_trim() const {
    std::size_t trim = 0;
    std::size_t dilation = 1;
    for (int k = 0; k < convs_per_fxblock; ++k) {
      trim += static_cast<std::size_t>(audio_kernel - 1) * dilation;
      dilation *= static_cast<std::size_t>(dilation_base);
    }
    return trim;
  }

  [[nodiscard]] std::size_t mod_trim() const {
    return static_cast<std::size_t>(mod_kernel - 1);
  }

  [[nodiscard]] std::size_t fir_trim() const {
    return fir_taps > 0 ? static_cast<std::size_t>(fir_taps - 1) : 0;
  }

  void validate() const {
    check_config(n_blocks > 0 && audio_channels > 0 && audio_kernel > 0 &&
                     convs_per_fxblock > 0 && dilation_base > 0 &&
                     mod_channels > 0 && mod_kernel > 0 && mod_pooling > 0 &&
                     lstm_hidden > 0,
                 "generator config: counts must be positive");
    check_config(latent_dim >= 1, "generator config: latent_dim must be >= 1");
    check_config(!film_enabled || control_dim >= 1,
                 "generator config: control_dim must be >= 1 when FiLM is "
                 "enabled");
    check_config(fir_taps >= 0, "generator config: fir_taps must be >= 0");
    check_config(sample_rate > 0, "generator config: bad sample rate");
    check_config(fx_trim() >= mod_trim(),
                 "generator config: mod kernel span exceeds the audio "
                 "cascade's receptive field (negative modulation offset)");
  }
};

// Per-block LSTM initial states, one row per batch item.
template <typename S>
struct StateBundle {
  std::vector<nn::Mat<S>> h;  // n_blocks entries of [batch x lstm_hidden]
  std::vector<nn::Mat<S>> c;
};

// Gradients with respect to a StateBundle, same shapes.
template <typename S>
using StateGrads = StateBundle<S>;

template <typename S>
class Generator {
 public:
  Generator(const GeneratorConfig& config, std::uint64_t seed)
      : cfg_(config) {
    cfg_.validate();
    Rng rng(derive_seed(seed, "generator-init"));
    for (int j = 0; j < cfg_.n_blocks; ++j) {
      const int mod_in = (j == 0) ? 1 : cfg_.mod_channels;
      ModBlock mb{
          nn::Conv1d<S>(mod_in, cfg_.mod_channels, cfg_.mod_kernel),
          nn::PRelu<S>(cfg_.mod_channels),
          nn::ControlFilm<S>(cfg_.film_enabled ? cfg_.control_dim : 0,
                             cfg_.mod_channels),
          nn::AvgPool1d<S>(cfg_.mod_pooling),
          nn::Lstm<S>(cfg_.mod_channels, cfg_.lstm_hidden),
          nn::Conv1d<S>(cfg_.lstm_hidden, 2 * cfg_.audio_channels, 1),
          nn::Conv1d<S>(cfg_.lstm_hidden, cfg_.mod_channels, 1),
          nn::LerpUpsample<S>(cfg_.mod_pooling),
          nn::LerpUpsample<S>(cfg_.mod_pooling)};
      mb.conv.init(rng);
      mb.film.init(rng);
      mb.lstm.init(rng);
      mb.mu_proj.init(rng);
      mb.res_proj.init(rng);
      mod_.push_back(std::move(mb));

      const int audio_in = (j == 0) ? 1 : cfg_.audio_channels;
      FxBlock fb;
      fb.conv0 = std::make_unique<nn::Conv1d<S>>(
          audio_in, cfg_.audio_channels, cfg_.audio_kernel, 1);
      fb.conv0->init(rng);
      int dilation = cfg_.dilation_base;
      for (int k = 1; k < cfg_.convs_per_fxblock; ++k) {
        fb.dws.emplace_back(cfg_.audio_channels, cfg_.audio_kernel, dilation);
        fb.dws.back().init(rng);
        dilation *= cfg_.dilation_base;
      }
      fb.act = std::make_unique<nn::PRelu<S>>(cfg_.audio_channels);
      if (j == 0) {
        fb.skip_proj =
            std::make_unique<nn::Conv1d<S>>(1, cfg_.audio_channels, 1);
        fb.skip_proj->init(rng);
      }
      fx_.push_back(std::move(fb));
    }
    out_proj_ = std::make_unique<nn::Conv1d<S>>(cfg_.audio_channels, 1, 1);
    out_proj_->init(rng);
    if (cfg_.fir_taps > 0) {
      fir_ = std::make_unique<nn::Conv1d<S>>(1, 1, cfg_.fir_taps, 1,
                                             /*trainable=*/false);
      fir_->set_fixed_taps(dsp::design_antialias_fir(
                               cfg_.sample_rate, cfg_.fir_cutoff,
                               static_cast<std::size_t>(cfg_.fir_taps),
                               cfg_.fir_attenuation_db)
                               .taps);
    }
    state_map_ = std::make_unique<nn::Linear<S>>(
        cfg_.latent_dim, 2 * cfg_.n_blocks * cfg_.lstm_hidden);
    state_map_->init(rng);
  }

  // Input samples needed to produce exactly output_len output samples.
  static std::size_t required_input_length(const GeneratorConfig& config,
                                           std::size_t output_len) {
    check(output_len >= 1, "required_input_length: output_len must be >= 1");
    return output_len +
           static_cast<std::size_t>(config.n_blocks) * config.fx_trim() +
           config.fir_trim();
  }

  [[nodiscard]] std::size_t required_input_length(
      std::size_t output_len) const {
    return required_input_length(cfg_, output_len);
  }

  // x: batch of [input_len x 1] buffers (equal lengths).  phi: one row of
  // user controls per item (ignored when FiLM is disabled).  states: one
  // (h, c) pair per block.  Returns [output_len x 1] buffers.
  nn::Batch<S> forward(const nn::Batch<S>& x, const nn::Mat<S>& phi,
                       const StateBundle<S>& states) {
    check(!x.empty(), "generator: empty batch");
    const Eigen::Index in_len = x[0].rows();
    for (const auto& item : x) {
      check(item.cols() == 1, "generator: input must be mono");
      check(item.rows() == in_len, "generator: ragged batch lengths");
    }
    check(static_cast<std::size_t>(in_len) >= required_input_length(1),
          "generator: input shorter than the minimum receptive field; "
          "feed required_input_length(target) samples");
    validate_states(states, x.size());
    if (cfg_.film_enabled) {
      check(static_cast<std::size_t>(phi.rows()) == x.size() &&
                phi.cols() == cfg_.control_dim,
            "generator: control vector batch mismatch");
    }

    // ----- modulation path (audio-independent) -----
    const std::vector<nn::Batch<S>> mus =
        run_mod_path(x.size(), static_cast<std::size_t>(in_len), phi, states,
                     /*keep_caches=*/true);

    // ----- audio path -----
    const std::size_t trim = cfg_.fx_trim();
    nn::Batch<S> cur = x;
    film_x_.assign(cfg_.n_blocks, {});
    film_mu_.assign(cfg_.n_blocks, {});
    mu_rows_.assign(cfg_.n_blocks, 0);
    for (int j = 0; j < cfg_.n_blocks; ++j) {
      FxBlock& fb = fx_[j];
      nn::Batch<S> cas = fb.conv0->forward(cur);
      for (auto& dw : fb.dws) cas = dw.forward(cas);

      // FiLM with the block's modulation tensor, cropped to the causal
      // alignment offset.
      const std::size_t offset =
          static_cast<std::size_t>(j + 1) * (trim - cfg_.mod_trim());
      const Eigen::Index cas_rows = cas[0].rows();
      nn::Batch<S> mu_crop(cas.size());
      for (std::size_t i = 0; i < cas.size(); ++i) {
        check(static_cast<std::size_t>(mus[j][i].rows()) >=
                  offset + static_cast<std::size_t>(cas_rows),
              "generator: modulation tensor too short (pooling starved the "
              "audio path)");
        mu_crop[i] = mus[j][i].middleRows(
            static_cast<Eigen::Index>(offset), cas_rows);
      }
      mu_rows_[j] = mus[j][0].rows();
      film_x_[j] = cas;
      film_mu_[j] = mu_crop;
      nn::Batch<S> f(cas.size());
      for (std::size_t i = 0; i < cas.size(); ++i) {
        f[i] = nn::film_forward(cas[i], mu_crop[i]);
      }
      f = fb.act->forward(f);

      // Residual skip: drop the first `trim` input samples (causal pairing).
      nn::Batch<S> skip(cur.size());
      for (std::size_t i = 0; i < cur.size(); ++i) {
        skip[i] = cur[i].bottomRows(cas_rows);
      }
      if (fb.skip_proj) skip = fb.skip_proj->forward(skip);
      for (std::size_t i = 0; i < f.size(); ++i) f[i] += skip[i];
      cur = std::move(f);
    }
    cur = out_proj_->forward(cur);
    if (fir_) cur = fir_->forward(cur);
    return cur;
  }

  // Backward through the most recent forward.  Returns gradients for the
  // injected initial states; parameter gradients accumulate inside layers.
  StateGrads<S> backward(const nn::Batch<S>& grad_out) {
    check(!film_x_.empty() && !film_x_[0].empty(),
          "generator: backward without forward");
    nn::Batch<S> dy = grad_out;
    if (fir_) dy = fir_->backward(dy);
    dy = out_proj_->backward(dy);

    // Audio path, last block first; collect each block's modulation grads.
    std::vector<nn::Batch<S>> dmu_full(cfg_.n_blocks);
    const std::size_t trim = cfg_.fx_trim();
    for (int j = cfg_.n_blocks - 1; j >= 0; --j) {
      FxBlock& fb = fx_[j];
      const std::size_t offset =
          static_cast<std::size_t>(j + 1) * (trim - cfg_.mod_trim());

      // Main branch: PReLU -> FiLM -> conv cascade.
      nn::Batch<S> df = fb.act->backward(dy);
      nn::Batch<S> dcas(df.size());
      dmu_full[j].resize(df.size());
      for (std::size_t i = 0; i < df.size(); ++i) {
        nn::Mat<S> dmu_crop;
        nn::film_backward(film_x_[j][i], film_mu_[j][i], df[i], dcas[i],
                          dmu_crop);
        dmu_full[j][i].setZero(mu_rows_[j], dmu_crop.cols());
        dmu_full[j][i].middleRows(static_cast<Eigen::Index>(offset),
                                  dmu_crop.rows()) = dmu_crop;
      }
      for (auto it = fb.dws.rbegin(); it != fb.dws.rend(); ++it) {
        dcas = it->backward(dcas);
      }
      nn::Batch<S> dx = fb.conv0->backward(dcas);

      // Skip branch adds into the cropped tail of the block input.
      nn::Batch<S> dskip = dy;
      if (fb.skip_proj) dskip = fb.skip_proj->backward(dskip);
      for (std::size_t i = 0; i < dx.size(); ++i) {
        dx[i].bottomRows(dskip[i].rows()) += dskip[i];
      }
      dy = std::move(dx);
    }

    // Modulation path, last block first; ds chains block j to block j-1.
    StateGrads<S> grads;
    grads.h.resize(cfg_.n_blocks);
    grads.c.resize(cfg_.n_blocks);
    nn::Batch<S> ds;  // gradient w.r.t. s_j; empty means zero (last block)
    for (int j = cfg_.n_blocks - 1; j >= 0; --j) {
      ModBlock& mb = mod_[j];
      nn::Batch<S> dres(dmu_full[j].size());
      nn::Batch<S> da(dmu_full[j].size());
      for (std::size_t i = 0; i < dres.size(); ++i) {
        const Eigen::Index s_rows = s_rows_[j];
        if (ds.empty()) {
          dres[i].setZero(s_rows, cfg_.mod_channels);
        } else {
          dres[i] = ds[i];
        }
        da[i].setZero(a_rows_[j], cfg_.mod_channels);
        da[i].topRows(s_rows) = dres[i];  // main branch, cropped to s_j
      }
      nn::Batch<S> dres_low = mb.up_res.backward(dres);
      nn::Batch<S> dmu_low = mb.up_mu.backward(dmu_full[j]);
      nn::Batch<S> dlstm = mb.res_proj.backward(dres_low);
      const nn::Batch<S> dlstm_mu = mb.mu_proj.backward(dmu_low);
      for (std::size_t i = 0; i < dlstm.size(); ++i) dlstm[i] += dlstm_mu[i];
      nn::LstmStateGrad<S> lg = mb.lstm.backward(dlstm);
      grads.h[j] = std::move(lg.h0);
      grads.c[j] = std::move(lg.c0);
      nn::Batch<S> dcf = mb.pool.backward(lg.input);
      dcf = mb.film.backward(dcf);
      for (std::size_t i = 0; i < da.size(); ++i) da[i] += dcf[i];
      da = mb.act.backward(da);
      ds = mb.conv.backward(da);  // becomes ds_{j-1}; discarded at j = 0
    }
    return grads;
  }

  // Streaming inference with cached padding: the concatenation of the
  // returned chunks is the one-shot forward of the concatenated input.  The
  // modulation path is computed one-shot (it never sees the audio); the
  // audio path keeps per-conv caches, a per-block skip queue, and a global
  // emit position for modulation cropping.  Early chunks may come back
  // empty while caches warm up.
  std::vector<nn::Batch<S>> streaming_forward(
      const std::vector<nn::Batch<S>>& chunks, const nn::Mat<S>& phi,
      const StateBundle<S>& states) {
    check(!chunks.empty() && !chunks[0].empty(),
          "generator: empty streaming input");
    const std::size_t batch = chunks[0].size();
    std::size_t total = 0;
    for (const auto& chunk : chunks) {
      check(chunk.size() == batch, "generator: ragged streaming batch");
      for (const auto& item : chunk) {
        check(item.cols() == 1 && item.rows() == chunk[0].rows(),
              "generator: ragged streaming chunk");
      }
      total += static_cast<std::size_t>(chunk[0].rows());
    }
    check(total >= required_input_length(1),
          "generator: streamed input shorter than the minimum receptive "
          "field");
    validate_states(states, batch);

    const std::vector<nn::Batch<S>> mus =
        run_mod_path(batch, total, phi, states, /*keep_caches=*/false);

    // Per-block, per-conv cached tails; per-block skip queues and counters.
    struct BlockStream {
      std::vector<nn::Mat<S>> conv_cache;  // one per conv in the cascade
      nn::Mat<S> skip_queue;               // rows awaiting pairing
      std::size_t skip_discard = 0;        // leading rows still to drop
      std::size_t emitted = 0;             // cascade rows emitted so far
    };
    std::vector<std::vector<BlockStream>> streams(
        batch, std::vector<BlockStream>(cfg_.n_blocks));
    std::vector<nn::Mat<S>> fir_cache(batch);
    const std::size_t trim = cfg_.fx_trim();
    for (std::size_t i = 0; i < batch; ++i) {
      for (int j = 0; j < cfg_.n_blocks; ++j) {
        streams[i][j].conv_cache.assign(
            static_cast<std::size_t>(cfg_.convs_per_fxblock), nn::Mat<S>());
        streams[i][j].skip_discard = trim;
      }
    }

    auto stream_conv = [](nn::Mat<S>& cache, const nn::Mat<S>& in,
                          Eigen::Index span, auto&& apply) -> nn::Mat<S> {
      nn::Mat<S> ext(cache.rows() + in.rows(), in.cols());
      if (cache.rows() > 0) ext.topRows(cache.rows()) = cache;
      ext.bottomRows(in.rows()) = in;
      nn::Mat<S> out;
      if (ext.rows() > span) {
        out = apply(ext);
      } else {
        out.resize(0, in.cols());
      }
      const Eigen::Index keep = std::min(ext.rows(), span);
      cache = ext.bottomRows(keep);
      return out;
    };

    std::vector<nn::Batch<S>> outputs;
    outputs.reserve(chunks.size());
    for (const auto& chunk : chunks) {
      nn::Batch<S> out_chunk(batch);
      for (std::size_t i = 0; i < batch; ++i) {
        nn::Mat<S> cur = chunk[i];
        for (int j = 0; j < cfg_.n_blocks; ++j) {
          BlockStream& bs = streams[i][j];
          // Queue this chunk for the skip path (minus the leading trim).
          {
            Eigen::Index take_from = 0;
            if (bs.skip_discard > 0) {
              const Eigen::Index drop = std::min(
                  static_cast<Eigen::Index>(bs.skip_discard), cur.rows());
              bs.skip_discard -= static_cast<std::size_t>(drop);
              take_from = drop;
            }
            if (cur.rows() > take_from) {
              const Eigen::Index add = cur.rows() - take_from;
              nn::Mat<S> q(bs.skip_queue.rows() + add, cur.cols());
              if (bs.skip_queue.rows() > 0) {
                q.topRows(bs.skip_queue.rows()) = bs.skip_queue;
              }
              q.bottomRows(add) = cur.bottomRows(add);
              bs.skip_queue = std::move(q);
            }
          }
          // Conv cascade with cached tails.
          FxBlock& fb = fx_[j];
          nn::Mat<S> cas = stream_conv(
              bs.conv_cache[0], cur, fb.conv0->trim(), [&](nn::Mat<S>& ext) {
                return fb.conv0->forward({ext})[0];
              });
          for (std::size_t d = 0; d < fb.dws.size(); ++d) {
            cas = stream_conv(bs.conv_cache[d + 1], cas, fb.dws[d].trim(),
                              [&](nn::Mat<S>& ext) {
                                return fb.dws[d].forward({ext})[0];
                              });
          }
          if (cas.rows() == 0) {
            cur.resize(0, 1);
            break;  // deeper blocks have nothing to consume either
          }
          // FiLM against the globally positioned modulation slice.
          const std::size_t offset =
              static_cast<std::size_t>(j + 1) * (trim - cfg_.mod_trim());
          const nn::Mat<S> mu_crop = mus[j][i].middleRows(
              static_cast<Eigen::Index>(offset + bs.emitted), cas.rows());
          nn::Mat<S> f = nn::film_forward(cas, mu_crop);
          f = fb.act->forward({f})[0];
          nn::Mat<S> skip = bs.skip_queue.topRows(cas.rows());
          bs.skip_queue = nn::Mat<S>(
              bs.skip_queue.bottomRows(bs.skip_queue.rows() - cas.rows()));
          if (fb.skip_proj) skip = fb.skip_proj->forward({skip})[0];
          bs.emitted += static_cast<std::size_t>(cas.rows());
          cur = f + skip;
        }
        if (cur.rows() > 0) {
          cur = out_proj_->forward({cur})[0];
          if (fir_) {
            cur = stream_conv(fir_cache[i], cur, fir_->trim(),
                              [&](nn::Mat<S>& ext) {
                                return fir_->forward({ext})[0];
                              });
          }
        }
        out_chunk[i] = std::move(cur);
      }
      outputs.push_back(std::move(out_chunk));
    }
    return outputs;
  }

  // --- stochastic initial states -------------------------------------------
  // A latent vector u is drawn per batch item and passed through a trainable
  // linear map; the first half of the output becomes the h states (tanh, to
  // stay in the LSTM's output range), the second half the c states
  // (identity, the cell is unbounded).

  [[nodiscard]] nn::Mat<S> sample_angle_latent(int batch,
                                               std::uint64_t seed) const {
    check(cfg_.latent_dim == 2,
          "angle state init requires latent_dim == 2 (cos, sin)");
    check(batch >= 1, "sample_angle_latent: batch must be >= 1");
    Rng rng(derive_seed(seed, "angle-latent"));
    nn::Mat<S> u(batch, 2);
    for (int b = 0; b < batch; ++b) {
      const double theta = rng.uniform() * kTwoPi;
      u(b, 0) = static_cast<S>(std::cos(theta));
      u(b, 1) = static_cast<S>(std::sin(theta));
    }
    return u;
  }

  [[nodiscard]] nn::Mat<S> sample_normal_latent(int batch,
                                                std::uint64_t seed) const {
    check(batch >= 1, "sample_normal_latent: batch must be >= 1");
    Rng rng(derive_seed(seed, "normal-latent"));
    nn::Mat<S> u(batch, cfg_.latent_dim);
    for (int b = 0; b < batch; ++b) {
      for (int d = 0; d < cfg_.latent_dim; ++d) {
        u(b, d) = static_cast<S>(rng.normal());
      }
    }
    return u;
  }

  StateBundle<S> states_from_latent(const nn::Mat<S>& u) {
    check(u.cols() == cfg_.latent_dim, "states_from_latent: latent width");
    const nn::Mat<S> raw = state_map_->forward(u);
    const int h_width = cfg_.n_blocks * cfg_.lstm_hidden;
    state_tanh_ = raw.leftCols(h_width).array().tanh().matrix();
    StateBundle<S> states;
    states.h.resize(cfg_.n_blocks);
    states.c.resize(cfg_.n_blocks);
    for (int j = 0; j < cfg_.n_blocks; ++j) {
      states.h[j] = state_tanh_.middleCols(j * cfg_.lstm_hidden,
                                           cfg_.lstm_hidden);
      states.c[j] = raw.middleCols(h_width + j * cfg_.lstm_hidden,
                                   cfg_.lstm_hidden);
    }
    return states;
  }

  // Backward through states_from_latent; accumulates into the state map and
  // returns the gradient w.r.t. the latent input.
  nn::Mat<S> latent_backward(const StateGrads<S>& grads) {
    check(state_tanh_.size() > 0, "latent_backward without states_from_latent");
    const int h_width = cfg_.n_blocks * cfg_.lstm_hidden;
    nn::Mat<S> draw(state_tanh_.rows(), 2 * h_width);
    for (int j = 0; j < cfg_.n_blocks; ++j) {
      const auto t =
          state_tanh_.middleCols(j * cfg_.lstm_hidden, cfg_.lstm_hidden)
              .array();
      draw.middleCols(j * cfg_.lstm_hidden, cfg_.lstm_hidden) =
          (grads.h[j].array() * (S(1) - t * t)).matrix();
      draw.middleCols(h_width + j * cfg_.lstm_hidden, cfg_.lstm_hidden) =
          grads.c[j];
    }
    return state_map_->backward(draw);
  }

  StateBundle<S> init_states_angle(int batch, std::uint64_t seed) {
    return states_from_latent(sample_angle_latent(batch, seed));
  }

  StateBundle<S> init_states_normal(int batch, std::uint64_t seed) {
    return states_from_latent(sample_normal_latent(batch, seed));
  }

  // --- parameter traversal -------------------------------------------------

  void visit(const nn::ParamFn<S>& fn) {
    for (int j = 0; j < cfg_.n_blocks; ++j) {
      const std::string mp = "mod" + std::to_string(j);
      mod_[j].conv.visit(mp + ".conv", fn);
      mod_[j].act.visit(mp + ".act", fn);
      mod_[j].film.visit(mp + ".film", fn);
      mod_[j].lstm.visit(mp + ".lstm", fn);
      mod_[j].mu_proj.visit(mp + ".mu_proj", fn);
      mod_[j].res_proj.visit(mp + ".res_proj", fn);
      const std::string fp = "fx" + std::to_string(j);
      fx_[j].conv0->visit(fp + ".conv0", fn);
      for (std::size_t d = 0; d < fx_[j].dws.size(); ++d) {
        fx_[j].dws[d].visit(fp + ".conv" + std::to_string(d + 1), fn);
      }
      fx_[j].act->visit(fp + ".act", fn);
      if (fx_[j].skip_proj) fx_[j].skip_proj->visit(fp + ".skip_proj", fn);
    }
    out_proj_->visit("out.proj", fn);
    state_map_->visit("state_map", fn);
  }

  void zero_grad() {
    for (auto& mb : mod_) {
      mb.conv.zero_grad();
      mb.act.zero_grad();
      mb.film.zero_grad();
      mb.lstm.zero_grad();
      mb.mu_proj.zero_grad();
      mb.res_proj.zero_grad();
    }
    for (auto& fb : fx_) {
      fb.conv0->zero_grad();
      for (auto& dw : fb.dws) dw.zero_grad();
      fb.act->zero_grad();
      if (fb.skip_proj) fb.skip_proj->zero_grad();
    }
    out_proj_->zero_grad();
    state_map_->zero_grad();
  }

  [[nodiscard]] std::size_t param_count() {
    std::size_t n = 0;
    visit([&n](const std::string&, nn::Mat<S>& v, nn::Mat<S>&) {
      n += static_cast<std::size_t>(v.size());
    });
    return n;
  }

  [[nodiscard]] const GeneratorConfig& config() const { return cfg_; }

 private:
  struct ModBlock {
    nn::Conv1d<S> conv;
    nn::PRelu<S> act;
    nn::ControlFilm<S> film;
    nn::AvgPool1d<S> pool;
    nn::Lstm<S> lstm;
    nn::Conv1d<S> mu_proj;
    nn::Conv1d<S> res_proj;
    nn::LerpUpsample<S> up_mu;
    nn::LerpUpsample<S> up_res;
  };
  struct FxBlock {
    std::unique_ptr<nn::Conv1d<S>> conv0;
    std::vector<nn::DepthwiseConv1d<S>> dws;
    std::unique_ptr<nn::PRelu<S>> act;
    std::unique_ptr<nn::Conv1d<S>> skip_proj;  // block 0 only
  };

  void validate_states(const StateBundle<S>& states, std::size_t batch) const {
    check(states.h.size() == static_cast<std::size_t>(cfg_.n_blocks) &&
              states.c.size() == static_cast<std::size_t>(cfg_.n_blocks),
          "generator: state bundle must hold one (h, c) pair per block");
    for (int j = 0; j < cfg_.n_blocks; ++j) {
      check(static_cast<std::size_t>(states.h[j].rows()) == batch &&
                static_cast<std::size_t>(states.c[j].rows()) == batch &&
                states.h[j].cols() == cfg_.lstm_hidden &&
                states.c[j].cols() == cfg_.lstm_hidden,
            "generator: state bundle shape mismatch");
      check(states.h[j].allFinite() && states.c[j].allFinite(),
            "generator: non-finite initial states");
    }
  }

  // Runs the modulation path for an audio input of length in_len, returning
  // each block's upsampled modulation tensor.  The path input is a zero
  // signal extended by n_blocks*(mod_pooling-1) samples so pooling
  // tail-trims cannot starve the audio path.
  std::vector<nn::Batch<S>> run_mod_path(std::size_t batch,
                                         std::size_t in_len,
                                         const nn::Mat<S>& phi,
                                         const StateBundle<S>& states,
                                         bool keep_caches) {
    const std::size_t zeros_len =
        in_len + static_cast<std::size_t>(cfg_.n_blocks) *
                     static_cast<std::size_t>(cfg_.mod_pooling - 1);
    nn::Batch<S> s(batch);
    for (auto& item : s) {
      item.setZero(static_cast<Eigen::Index>(zeros_len), 1);
    }
    std::vector<nn::Batch<S>> mus(cfg_.n_blocks);
    if (keep_caches) {
      a_rows_.assign(cfg_.n_blocks, 0);
      s_rows_.assign(cfg_.n_blocks, 0);
    }
    for (int j = 0; j < cfg_.n_blocks; ++j) {
      ModBlock& mb = mod_[j];
      nn::Batch<S> a = mb.act.forward(mb.conv.forward(s));
      if (keep_caches) a_rows_[j] = a[0].rows();
      nn::Batch<S> branch = mb.film.forward(a, phi);
      branch = mb.pool.forward(branch);
      branch = mb.lstm.forward(branch, states.h[j], states.c[j]);
      mus[j] = mb.up_mu.forward(mb.mu_proj.forward(branch));
      const nn::Batch<S> res = mb.up_res.forward(mb.res_proj.forward(branch));
      if (keep_caches) s_rows_[j] = res[0].rows();
      nn::Batch<S> next(batch);
      for (std::size_t i = 0; i < batch; ++i) {
        next[i] = a[i].topRows(res[i].rows()) + res[i];
      }
      s = std::move(next);
    }
    return mus;
  }

  GeneratorConfig cfg_;
  std::vector<ModBlock> mod_;
  std::vector<FxBlock> fx_;
  std::unique_ptr<nn::Conv1d<S>> out_proj_;
  std::unique_ptr<nn::Conv1d<S>> fir_;
  std::unique_ptr<nn::Linear<S>> state_map_;

  // Forward caches for backward (FiLM operands, crop geometry).
  std::vector<nn::Batch<S>> film_x_, film_mu_;
  std::vector<Eigen::Index> mu_rows_;
  std::vector<Eigen::Index> a_rows_, s_rows_;
  nn::Mat<S> state_tanh_;
};

}  // namespace tvfx::gen

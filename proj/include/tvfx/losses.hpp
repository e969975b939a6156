// Copyright 2026 the tvfx authors
// SPDX-License-Identifier: Apache-2.0
//
// Training objectives and their analytic gradients:
//   - hinge adversarial pair (generator and critic sides),
//   - single- and multi-resolution STFT spectral losses,
//   - adaptive gradient balancing at the generator output,
//   - the mode-seeking regularizer over output pairs.
//
// Spectral loss per resolution, over the frequency band of interest:
//     ||Y| - |Yh||_F / ||Y||_F  +  (1/L) * || log|Y| - log|Yh| ||_1
// with L the window size, magnitudes floored before the log, frames of
// periodic Hann windows at hop = L/4, and bins above the band limit
// excluded.  Gradients with respect to either signal are assembled by
// chaining through magnitudes and the real-FFT adjoint (Hermitian middle
// bins halved), then overlap-adding windowed frame gradients.
//
// The balancer implements per-term gradient normalization at the point the
// losses are taken (the generator's output signal): each term's gradient is
// divided by an exponential moving average of its own norm and weighted by
// lambda_i / sum(lambda).  All losses here are plain doubles over
// double-precision signals.

#pragma once

#include <cmath>
#include <complex>
#include <cstddef>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "tvfx/common.hpp"
#include "tvfx/dsp.hpp"
#include "tvfx/fft.hpp"
#include "tvfx/generator.hpp"
#include "tvfx/nn.hpp"

namespace tvfx::loss {

using Mat = nn::Mat<double>;
using Batch = nn::Batch<double>;

// ---------------------------------------------------------------------------
// Hinge adversarial pair.  Scores are [batch x 1]; losses are batch means.
// ---------------------------------------------------------------------------

inline double hinge_generator(const Mat& fake_score) {
  check(fake_score.size() > 0 && fake_score.allFinite(),
        "hinge_generator: scores must be finite and nonempty");
  return (1.0 - fake_score.array()).max(0.0).mean();
}

// d loss / d fake_score.
inline Mat hinge_generator_grad(const Mat& fake_score) {
  const double inv = 1.0 / static_cast<double>(fake_score.rows());
  return (fake_score.array() < 1.0)
      .select(Mat::Constant(fake_score.rows(), fake_score.cols(), -inv),
              Mat::Zero(fake_score.rows(), fake_score.cols()));
}

inline double hinge_discriminator(const Mat& real_score,
                                  const Mat& fake_score) {
  check(real_score.size() > 0 && real_score.rows() == fake_score.rows(),
        "hinge_discriminator: score batches must match");
  check(real_score.allFinite() && fake_score.allFinite(),
        "hinge_discriminator: scores must be finite");
  return ((1.0 - real_score.array()).max(0.0) +
          (1.0 + fake_score.array()).max(0.0))
      .mean();
}

// The two sides separately, so a trainer can backpropagate the real pass
// before the fake forward replaces the critic's caches.
inline Mat hinge_discriminator_real_grad(const Mat& real_score) {
  const double inv = 1.0 / static_cast<double>(real_score.rows());
  return (real_score.array() < 1.0)
      .select(Mat::Constant(real_score.rows(), 1, -inv),
              Mat::Zero(real_score.rows(), 1));
}

inline Mat hinge_discriminator_fake_grad(const Mat& fake_score) {
  const double inv = 1.0 / static_cast<double>(fake_score.rows());
  return (fake_score.array() > -1.0)
      .select(Mat::Constant(fake_score.rows(), 1, inv),
              Mat::Zero(fake_score.rows(), 1));
}

// (d/d real_score, d/d fake_score).
inline std::pair<Mat, Mat> hinge_discriminator_grad(const Mat& real_score,
                                                    const Mat& fake_score) {
  return {hinge_discriminator_real_grad(real_score),
          hinge_discriminator_fake_grad(fake_score)};
}

// ---------------------------------------------------------------------------
// Spectral losses.
// ---------------------------------------------------------------------------

struct SpectralLossConfig {
  std::vector<int> windows = {512, 1024, 2048};
  int sample_rate = 44100;
  double band_limit_hz = 17800.0;  // <= 0 disables the band limit
  double eps_log = 1e-8;           // magnitude floor inside the log term

  void validate() const {
    check_config(!windows.empty(), "spectral loss: no windows configured");
    for (int w : windows) {
      check_config(w >= 8 && w % 4 == 0,
                   "spectral loss: windows must be >= 8 and divisible by 4 "
                   "(hop = window/4)");
    }
    check_config(sample_rate > 0, "spectral loss: bad sample rate");
    check_config(eps_log > 0.0, "spectral loss: eps_log must be positive");
  }
};

namespace detail {

// One resolution's STFT magnitudes over the retained band, plus everything
// needed to push gradients back to the time domain.
struct StftPlan {
  int window = 0;
  int hop = 0;
  std::size_t frames = 0;
  std::size_t bins = 0;  // retained low-frequency bins
  std::vector<double> win;
  Eigen::MatrixXcd spectrum;   // bins x frames (retained band only)
  Eigen::MatrixXd magnitude;   // bins x frames
};

inline StftPlan stft_forward(const Mat& x, int window, int hop,
                             const SpectralLossConfig& cfg) {
  check(x.cols() == 1, "spectral loss: signals must be mono");
  check(x.rows() >= window,
        "spectral loss: signal shorter than the analysis window");
  StftPlan plan;
  plan.window = window;
  plan.hop = hop;
  plan.frames =
      static_cast<std::size_t>((x.rows() - window) / hop) + 1;
  const std::size_t all_bins = static_cast<std::size_t>(window) / 2 + 1;
  plan.bins = all_bins;
  if (cfg.band_limit_hz > 0.0) {
    // Keep bins with center frequency k * fs / window <= band limit.
    const double max_k = cfg.band_limit_hz * window / cfg.sample_rate;
    plan.bins = std::min<std::size_t>(
        all_bins, static_cast<std::size_t>(std::floor(max_k)) + 1);
    check(plan.bins >= 1, "spectral loss: band limit excludes every bin");
  }
  plan.win = dsp::make_window(dsp::Window::Hann, window);
  plan.spectrum.resize(static_cast<Eigen::Index>(plan.bins),
                       static_cast<Eigen::Index>(plan.frames));
  plan.magnitude.resize(plan.spectrum.rows(), plan.spectrum.cols());
  auto& engine = Fft<double>::instance();
  std::vector<double> frame(window);
  std::vector<std::complex<double>> spec(all_bins);
  for (std::size_t f = 0; f < plan.frames; ++f) {
    const double* src = x.data() + f * plan.hop;
    for (int i = 0; i < window; ++i) frame[i] = src[i] * plan.win[i];
    engine.rfft(frame.data(), window, spec.data());
    for (std::size_t k = 0; k < plan.bins; ++k) {
      plan.spectrum(static_cast<Eigen::Index>(k),
                    static_cast<Eigen::Index>(f)) = spec[k];
      plan.magnitude(static_cast<Eigen::Index>(k),
                     static_cast<Eigen::Index>(f)) = std::abs(spec[k]);
    }
  }
  return plan;
}

// Pushes a magnitude-domain gradient back to the time domain:
// d mag -> d complex bins -> (real-FFT adjoint) -> d frames -> d signal.
inline void stft_backward(const StftPlan& plan, const Eigen::MatrixXd& dmag,
                          Mat& dx) {
  const std::size_t all_bins = static_cast<std::size_t>(plan.window) / 2 + 1;
  auto& engine = Fft<double>::instance();
  std::vector<std::complex<double>> bins(all_bins);
  std::vector<double> frame(plan.window);
  for (std::size_t f = 0; f < plan.frames; ++f) {
    for (std::size_t k = 0; k < all_bins; ++k) bins[k] = {0.0, 0.0};
    for (std::size_t k = 0; k < plan.bins; ++k) {
      const auto ki = static_cast<Eigen::Index>(k);
      const auto fi = static_cast<Eigen::Index>(f);
      const double m = plan.magnitude(ki, fi);
      if (m <= 0.0) continue;  // |.| has zero subgradient at the origin
      // d|c|/dc = c / |c|; the adjoint of the real FFT weights interior
      // bins by 1/2 (each interior bin represents a conjugate pair).
      std::complex<double> g = plan.spectrum(ki, fi) * (dmag(ki, fi) / m);
      if (k != 0 && !(plan.window % 2 == 0 && k == all_bins - 1)) {
        g *= 0.5;
      } else {
        g = {g.real(), 0.0};  // DC/Nyquist bins are purely real
      }
      bins[k] = g;
    }
    engine.irfft(bins.data(), plan.window, frame.data());
    double* dst = dx.data() + f * plan.hop;
    for (int i = 0; i < plan.window; ++i) dst[i] += frame[i] * plan.win[i];
  }
}

}  // namespace detail

// Single-resolution spectral loss between reference y and estimate y_hat.
// Optional output gradients (accumulated from zero) with respect to either
// signal; pass nullptr for the ones not needed.
inline double stft_loss(const Mat& y, const Mat& y_hat, int window,
                        const SpectralLossConfig& cfg, Mat* grad_y = nullptr,
                        Mat* grad_y_hat = nullptr) {
  cfg.validate();
  check(y.rows() == y_hat.rows() && y.cols() == 1 && y_hat.cols() == 1,
        "spectral loss: signals must be mono and equally long");
  const int hop = window / 4;
  const detail::StftPlan py = detail::stft_forward(y, window, hop, cfg);
  const detail::StftPlan ph = detail::stft_forward(y_hat, window, hop, cfg);

  const Eigen::MatrixXd diff = py.magnitude - ph.magnitude;
  const double ref_norm = py.magnitude.norm();
  check_data(ref_norm > 0.0,
             "spectral loss: reference signal has zero spectral energy "
             "(relative norm undefined)");
  const double diff_norm = diff.norm();
  const double frob_term = diff_norm / ref_norm;

  const double eps = cfg.eps_log;
  const Eigen::MatrixXd log_y =
      py.magnitude.cwiseMax(eps).array().log().matrix();
  const Eigen::MatrixXd log_h =
      ph.magnitude.cwiseMax(eps).array().log().matrix();
  const Eigen::MatrixXd log_diff = log_y - log_h;
  const double log_term = log_diff.cwiseAbs().sum() / window;

  if (grad_y_hat != nullptr) {
    Eigen::MatrixXd dmag(ph.magnitude.rows(), ph.magnitude.cols());
    for (Eigen::Index c = 0; c < dmag.cols(); ++c) {
      for (Eigen::Index r = 0; r < dmag.rows(); ++r) {
        double g = 0.0;
        if (diff_norm > 0.0) {
          g += -diff(r, c) / (diff_norm * ref_norm);
        }
        const double mh = ph.magnitude(r, c);
        if (mh > eps && log_diff(r, c) != 0.0) {
          g += (log_diff(r, c) > 0.0 ? -1.0 : 1.0) / (mh * window);
        }
        dmag(r, c) = g;
      }
    }
    grad_y_hat->setZero(y_hat.rows(), 1);
    detail::stft_backward(ph, dmag, *grad_y_hat);
  }
  if (grad_y != nullptr) {
    Eigen::MatrixXd dmag(py.magnitude.rows(), py.magnitude.cols());
    const double r3 = ref_norm * ref_norm * ref_norm;
    for (Eigen::Index c = 0; c < dmag.cols(); ++c) {
      for (Eigen::Index r = 0; r < dmag.rows(); ++r) {
        double g = 0.0;
        if (diff_norm > 0.0) {
          g += diff(r, c) / (diff_norm * ref_norm);
        }
        g += -diff_norm * py.magnitude(r, c) / r3;
        const double my = py.magnitude(r, c);
        if (my > eps && log_diff(r, c) != 0.0) {
          g += (log_diff(r, c) > 0.0 ? 1.0 : -1.0) / (my * window);
        }
        dmag(r, c) = g;
      }
    }
    grad_y->setZero(y.rows(), 1);
    detail::stft_backward(py, dmag, *grad_y);
  }
  return frob_term + log_term;
}

// Mean of the single-resolution losses over the configured window sizes.
// Gradients, when requested, are the means of the per-resolution gradients.
inline double mrstft(const Mat& y, const Mat& y_hat,
                     const SpectralLossConfig& cfg, Mat* grad_y = nullptr,
                     Mat* grad_y_hat = nullptr) {
  cfg.validate();
  if (grad_y != nullptr) grad_y->setZero(y.rows(), 1);
  if (grad_y_hat != nullptr) grad_y_hat->setZero(y_hat.rows(), 1);
  double total = 0.0;
  Mat gy, gh;
  for (int w : cfg.windows) {
    total += stft_loss(y, y_hat, w, cfg, grad_y ? &gy : nullptr,
                       grad_y_hat ? &gh : nullptr);
    if (grad_y != nullptr) *grad_y += gy;
    if (grad_y_hat != nullptr) *grad_y_hat += gh;
  }
  const double inv = 1.0 / static_cast<double>(cfg.windows.size());
  if (grad_y != nullptr) *grad_y *= inv;
  if (grad_y_hat != nullptr) *grad_y_hat *= inv;
  return total * inv;
}

// Batch mean of mrstft with per-item gradients (already scaled by 1/batch).
inline double mrstft_batch(const Batch& y, const Batch& y_hat,
                           const SpectralLossConfig& cfg,
                           Batch* grad_y_hat = nullptr) {
  check(!y.empty() && y.size() == y_hat.size(),
        "spectral loss: batch sizes must match and be nonzero");
  const double inv = 1.0 / static_cast<double>(y.size());
  if (grad_y_hat != nullptr) grad_y_hat->resize(y.size());
  double total = 0.0;
  Mat g;
  for (std::size_t i = 0; i < y.size(); ++i) {
    total +=
        mrstft(y[i], y_hat[i], cfg, nullptr, grad_y_hat ? &g : nullptr);
    if (grad_y_hat != nullptr) (*grad_y_hat)[i] = g * inv;
  }
  return total * inv;
}

// ---------------------------------------------------------------------------
// Mode seeking.
// ---------------------------------------------------------------------------

// epsilon / (epsilon + distance) in (0, 1]; pushes paired outputs apart.
inline double mode_seeking(double distance, double epsilon) {
  check(distance >= 0.0 && epsilon > 0.0,
        "mode_seeking: distance must be >= 0 and epsilon > 0");
  return epsilon / (epsilon + distance);
}

// d mode_seeking / d distance.
inline double mode_seeking_grad(double distance, double epsilon) {
  check(distance >= 0.0 && epsilon > 0.0,
        "mode_seeking: distance must be >= 0 and epsilon > 0");
  const double denom = epsilon + distance;
  return -epsilon / (denom * denom);
}

// Fixed derangement used to build the "other" state bundle of a pair:
// batch row i takes row i+1 (wrapping), so no element pairs with itself.
template <typename S>
gen::StateBundle<S> rotate_batch(const gen::StateBundle<S>& states) {
  for (const auto& h : states.h) {
    check(h.rows() >= 2,
          "rotate_batch: need at least two batch items for a derangement");
  }
  gen::StateBundle<S> out;
  out.h.reserve(states.h.size());
  out.c.reserve(states.c.size());
  auto rotate = [](const nn::Mat<S>& m) {
    nn::Mat<S> r(m.rows(), m.cols());
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      r.row(i) = m.row((i + 1) % m.rows());
    }
    return r;
  };
  for (const auto& h : states.h) out.h.push_back(rotate(h));
  for (const auto& c : states.c) out.c.push_back(rotate(c));
  return out;
}

// ---------------------------------------------------------------------------
// Gradient balancing.
// ---------------------------------------------------------------------------

struct LossWeights {
  double lambda_adv = 1.0;
  double lambda_spectral = 0.005;
  double lambda_ms = 0.0;

  void validate() const {
    check_config(lambda_adv >= 0.0 && lambda_spectral >= 0.0 &&
                     lambda_ms >= 0.0,
                 "loss weights must be non-negative");
    check_config(lambda_adv + lambda_spectral + lambda_ms > 0.0,
                 "at least one loss weight must be positive");
  }
};

// One generator-output gradient entering the balancer.
struct LossTerm {
  std::string name;
  double weight = 0.0;
  Batch grad;
};

// Normalizes each term's output-gradient by an exponential moving average
// of its own norm and combines them with lambda_i / sum(lambda) weights.
class Balancer {
 public:
  explicit Balancer(double decay = 0.99,
                    std::function<void(const std::string&)> warn = nullptr)
      : decay_(decay), warn_(std::move(warn)) {
    check_config(decay > 0.0 && decay < 1.0,
                 "balancer decay must be in (0, 1)");
  }

  // Scaled sum of the term gradients; updates each term's EMA afterwards.
  Batch combine(const std::vector<LossTerm>& terms) {
    check(!terms.empty(), "balancer: no loss terms");
    double weight_sum = 0.0;
    for (const auto& t : terms) {
      check(t.weight >= 0.0, "balancer: negative loss weight");
      weight_sum += t.weight;
    }
    check(weight_sum > 0.0, "balancer: all loss weights are zero");

    Batch combined(terms[0].grad.size());
    for (std::size_t i = 0; i < combined.size(); ++i) {
      combined[i].setZero(terms[0].grad[i].rows(), terms[0].grad[i].cols());
    }
    for (const auto& t : terms) {
      check(t.grad.size() == combined.size(),
            "balancer: term batch sizes must match");
      const double norm = batch_norm(t.grad);
      const double lambda = t.weight / weight_sum;
      if (norm <= kTinyNorm) {
        if (warn_) {
          warn_("balancer: zero gradient norm for term '" + t.name +
                "', skipping normalization this step");
        }
        for (std::size_t i = 0; i < combined.size(); ++i) {
          combined[i] += lambda * t.grad[i];
        }
        continue;  // EMA untouched: zero would poison the running scale
      }
      auto [it, fresh] = ema_.try_emplace(t.name, norm);
      const double scale = lambda / it->second;
      for (std::size_t i = 0; i < combined.size(); ++i) {
        combined[i] += scale * t.grad[i];
      }
      if (!fresh) {
        it->second = decay_ * it->second + (1.0 - decay_) * norm;
      }
    }
    return combined;
  }

  [[nodiscard]] const std::map<std::string, double>& state() const {
    return ema_;
  }
  void restore(std::map<std::string, double> state) {
    for (const auto& [name, v] : state) {
      check(v > 0.0, "balancer: restored EMA must be positive");
    }
    ema_ = std::move(state);
  }

  static double batch_norm(const Batch& grad) {
    double sq = 0.0;
    for (const auto& item : grad) sq += item.squaredNorm();
    return std::sqrt(sq);
  }

 private:
  static constexpr double kTinyNorm = 1e-300;
  double decay_;
  std::map<std::string, double> ema_;
  std::function<void(const std::string&)> warn_;
};

}  // namespace tvfx::loss

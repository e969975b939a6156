// Copyright 2026 the tvfx authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "tvfx/common.hpp"

namespace tvfx::phaser {

// Synthetic white-box LFO phaser: a cascade of first-order allpass sections
// whose shared break frequency tracks the LFO exponentially, mixed
// depth/2 wet against (1 - depth/2) dry, with optional feedback around the
// chain. Serves as the modeling target and ground-truth oracle.

enum class LfoShape { Sine, Triangle };

struct PhaserParams {
  int n_stages = 4;          // even count of allpass sections
  double lfo_rate = 1.0;     // Hz
  double lfo_width = 0.5;    // fraction [0, 1] of the sweep span
  double lfo_center = 0.5;   // fraction [0, 1]; log-mapped 100 Hz .. 8 kHz
  double depth = 1.0;        // wet mix [0, 1]
  double feedback = 0.0;     // [0, 1)
  LfoShape lfo_shape = LfoShape::Sine;
};

// Snapshot presets; LFO periods 1.3 s (slow) and 0.3 s (fast).
inline PhaserParams slow_lfo_preset() {
  PhaserParams p;
  p.lfo_rate = 1.0 / 1.3;
  return p;
}
inline PhaserParams fast_lfo_preset() {
  PhaserParams p;
  p.lfo_rate = 1.0 / 0.3;
  return p;
}

inline PhaserParams preset_by_name(const std::string& name) {
  if (name == "slow-lfo") return slow_lfo_preset();
  if (name == "fast-lfo") return fast_lfo_preset();
  throw ConfigError("unknown phaser preset: " + name);
}

// LFO sample in [-1, 1]; periodic with period 1/rate; sine starts at 0
// rising, triangle likewise.
inline double lfo_value(double t, double rate, LfoShape shape, double phase0) {
  check(rate > 0.0, "lfo_value: rate must be positive");
  if (shape == LfoShape::Sine) return std::sin(kTwoPi * rate * t + phase0);
  double p = rate * t + phase0 / kTwoPi;
  p -= std::floor(p);
  if (p < 0.25) return 4.0 * p;
  if (p < 0.75) return 2.0 - 4.0 * p;
  return 4.0 * p - 4.0;
}

namespace detail {

constexpr double kSweepLowHz = 100.0;
constexpr double kSweepHighHz = 8000.0;

// Control fraction in [0, 1] -> break frequency, log-spaced over the span.
inline double break_frequency(double u) {
  return kSweepLowHz * std::pow(kSweepHighHz / kSweepLowHz, u);
}

}  // namespace detail

inline AudioBuffer phaser_process(const AudioBuffer& x, const PhaserParams& p, double phase0) {
  check_config(p.n_stages > 0 && p.n_stages % 2 == 0, "phaser: n_stages must be a positive even count");
  check_config(p.lfo_rate > 0.0, "phaser: lfo_rate must be positive");
  check_config(p.lfo_width >= 0.0 && p.lfo_width <= 1.0, "phaser: lfo_width outside [0, 1]");
  check_config(p.lfo_center >= 0.0 && p.lfo_center <= 1.0, "phaser: lfo_center outside [0, 1]");
  check_config(p.depth >= 0.0 && p.depth <= 1.0, "phaser: depth outside [0, 1]");
  check_config(p.feedback >= 0.0 && p.feedback < 1.0, "phaser: feedback outside [0, 1)");
  const double fs = x.sample_rate;

  // The sweep must stay clearly below Nyquist or the bilinear tan mapping
  // degenerates. Refuse rather than clamp.
  const double u_max = std::min(1.0, p.lfo_center + p.lfo_width / 2.0);
  const double u_min = std::max(0.0, p.lfo_center - p.lfo_width / 2.0);
  const double fb_max = detail::break_frequency(u_max);
  if (fb_max >= 0.497 * fs)
    throw Error("phaser: sweep reaches " + std::to_string(fb_max) +
                " Hz, too close to Nyquist at fs " + std::to_string(x.sample_rate));

  AudioBuffer out;
  out.sample_rate = x.sample_rate;
  out.samples.resize(x.size());

  std::vector<double> x_state(p.n_stages, 0.0), y_state(p.n_stages, 0.0);
  double fb_sample = 0.0;  // previous chain output, for the feedback path
  const double dry = 1.0 - p.depth / 2.0, wet = p.depth / 2.0;

  for (std::size_t n = 0; n < x.size(); ++n) {
    const double t = static_cast<double>(n) / fs;
    const double u = std::clamp(p.lfo_center + 0.5 * p.lfo_width *
                                    lfo_value(t, p.lfo_rate, p.lfo_shape, phase0),
                                u_min, u_max);
    const double fb_hz = detail::break_frequency(u);
    const double tan_w = std::tan(kPi * fb_hz / fs);
    const double c = (tan_w - 1.0) / (tan_w + 1.0);

    double v = x.samples[n] + p.feedback * fb_sample;
    for (int s = 0; s < p.n_stages; ++s) {
      // First-order allpass, H(z) = (c + z^-1)/(1 + c z^-1).
      const double w = c * v + x_state[s] - c * y_state[s];
      x_state[s] = v;
      y_state[s] = w;
      v = w;
    }
    fb_sample = v;
    out.samples[n] = dry * x.samples[n] + wet * v;
  }
  return out;
}

// Phase response of the static allpass chain at angular frequency w (rad/sample),
// on the continuous branch starting at 0. Used by tests to locate notches.
inline double allpass_chain_phase(double w, double coeff, int n_stages) {
  // One stage: angle of (c + e^-jw)/(1 + c e^-jw), unwrapped to (-pi, 0].
  const double num_re = coeff + std::cos(w), num_im = -std::sin(w);
  const double den_re = 1.0 + coeff * std::cos(w), den_im = -coeff * std::sin(w);
  double phi = std::atan2(num_im, num_re) - std::atan2(den_im, den_re);
  while (phi > 1e-12) phi -= kTwoPi;
  while (phi <= -kTwoPi) phi += kTwoPi;
  return n_stages * phi;
}

}  // namespace tvfx::phaser

// Copyright 2026 the tvfx authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <vector>

#include <Eigen/Dense>

#include "tvfx/common.hpp"
#include "tvfx/fft.hpp"

namespace tvfx::dsp {

// ---------------------------------------------------------------------------
// Windows

enum class Window { Hann, Boxcar };

inline std::vector<double> make_window(Window w, std::size_t n) {
  std::vector<double> out(n, 1.0);
  if (w == Window::Hann) {
    // Periodic Hann, the STFT convention.
    for (std::size_t i = 0; i < n; ++i)
      out[i] = 0.5 - 0.5 * std::cos(kTwoPi * static_cast<double>(i) / static_cast<double>(n));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Chirp train

struct ChirpSpec {
  double f0 = 20.0;             // Hz
  double f1 = 0.0;              // Hz; callers usually pass Nyquist
  double chirp_duration = 1.0 / 33.0;  // seconds
  int n_repeats = 1;
};

inline std::size_t chirp_length(const ChirpSpec& spec, int sample_rate) {
  return static_cast<std::size_t>(std::llround(spec.chirp_duration * sample_rate));
}

// One logarithmic sweep: x[n] = sin(2*pi*f0*(k^(n/fs) - 1)/log k) with
// k = (f1/f0)^(fs/N). Phase resets at each repetition, so all chirps in the
// train are sample-identical.
inline AudioBuffer gen_chirp_train(const ChirpSpec& spec, int sample_rate) {
  check(std::isfinite(spec.f0) && std::isfinite(spec.f1) && std::isfinite(spec.chirp_duration),
        "gen_chirp_train: non-finite parameters");
  check(spec.f0 > 0.0 && spec.f1 > spec.f0, "gen_chirp_train: need 0 < f0 < f1");
  check(spec.f1 <= sample_rate / 2.0, "gen_chirp_train: f1 above Nyquist");
  check(spec.n_repeats >= 1, "gen_chirp_train: n_repeats must be >= 1");
  const std::size_t n = chirp_length(spec, sample_rate);
  check(n >= 2, "gen_chirp_train: chirp shorter than 2 samples");

  // log k = (fs/N) * log(f1/f0); the per-sample phase exponent is log(f1/f0)/N.
  const double log_k = (static_cast<double>(sample_rate) / static_cast<double>(n)) *
                       std::log(spec.f1 / spec.f0);
  const double c = log_k / sample_rate;
  std::vector<double> chirp(n);
  for (std::size_t i = 0; i < n; ++i)
    chirp[i] = std::sin(kTwoPi * spec.f0 * std::expm1(c * static_cast<double>(i)) / log_k);

  AudioBuffer out;
  out.sample_rate = sample_rate;
  out.samples.reserve(n * spec.n_repeats);
  for (int r = 0; r < spec.n_repeats; ++r)
    out.samples.insert(out.samples.end(), chirp.begin(), chirp.end());
  return out;
}

// ---------------------------------------------------------------------------
// Anti-alias FIR

struct FirFilter {
  std::vector<double> taps;
  int sample_rate = 0;
  double cutoff = 0.0;                 // Hz; stopband starts here
  double stopband_attenuation = 0.0;   // dB, positive number
  double passband_ripple_db = 0.0;     // measured on the design grid
};

namespace detail {

inline double bessel_i0(double x) {
  // Power series; converges fast for the beta range used here.
  double sum = 1.0, term = 1.0;
  const double half_x = x / 2.0;
  for (int k = 1; k < 200; ++k) {
    term *= (half_x / k) * (half_x / k);
    sum += term;
    if (term < 1e-18 * sum) break;
  }
  return sum;
}

// |H(f)| of a symmetric (linear-phase) tap set, evaluated directly.
inline double fir_magnitude(const std::vector<double>& taps, double freq, int fs) {
  const double center = (static_cast<double>(taps.size()) - 1.0) / 2.0;
  double re = 0.0, im = 0.0;
  for (std::size_t i = 0; i < taps.size(); ++i) {
    double ang = -kTwoPi * freq * (static_cast<double>(i) - center) / fs;
    re += taps[i] * std::cos(ang);
    im += taps[i] * std::sin(ang);
  }
  return std::hypot(re, im);
}

}  // namespace detail

// Kaiser windowed-sinc lowpass. `attenuation` is the stopband floor in dB
// (positive); the design is verified on a dense grid and rejected if the spec
// is unreachable with the given tap count.
inline FirFilter design_antialias_fir(int sample_rate, double cutoff, std::size_t num_taps,
                                      double attenuation) {
  check(num_taps >= 2, "design_antialias_fir: need at least 2 taps");
  check(cutoff > 0.0 && cutoff < sample_rate / 2.0, "design_antialias_fir: cutoff out of range");

  const double a_design = attenuation + 5.0;  // headroom over the Kaiser estimate
  const double beta = a_design > 50.0
                          ? 0.1102 * (a_design - 8.7)
                          : a_design >= 21.0
                                ? 0.5842 * std::pow(a_design - 21.0, 0.4) + 0.07886 * (a_design - 21.0)
                                : 0.0;
  const double m = static_cast<double>(num_taps) - 1.0;
  // Kaiser main-lobe width estimate; the ideal edge sits half a transition
  // band below the requested stopband start.
  const double delta_w = (a_design - 8.0) / (2.285 * m);

  // Feasibility: a too-short filter can technically reach the attenuation by
  // pushing its transition band deep into the passband. Reject designs whose
  // transition exceeds a quarter of the passband width.
  const double delta_f_hz = delta_w * sample_rate / kTwoPi;
  if (delta_f_hz > 0.25 * cutoff)
    throw Error("design_antialias_fir: " + std::to_string(num_taps) +
                " taps cannot reach " + std::to_string(attenuation) +
                " dB without destroying the passband");

  const double nyquist = sample_rate / 2.0;
  FirFilter fir;
  fir.sample_rate = sample_rate;
  fir.cutoff = cutoff;
  fir.stopband_attenuation = attenuation;

  for (double margin : {1.0, 1.2, 1.5, 2.0, 3.0}) {
    const double wc = kTwoPi * cutoff / sample_rate - margin * delta_w / 2.0;
    if (wc <= 0.0) continue;
    const double i0_beta = detail::bessel_i0(beta);
    fir.taps.assign(num_taps, 0.0);
    // Compute one half and mirror it, making the linear-phase symmetry exact.
    for (std::size_t i = 0; i < (num_taps + 1) / 2; ++i) {
      const double t = static_cast<double>(i) - m / 2.0;
      const double sinc = t == 0.0 ? wc / kPi : std::sin(wc * t) / (kPi * t);
      const double r = 2.0 * static_cast<double>(i) / m - 1.0;
      const double w = detail::bessel_i0(beta * std::sqrt(std::max(0.0, 1.0 - r * r))) / i0_beta;
      fir.taps[i] = sinc * w;
      fir.taps[num_taps - 1 - i] = sinc * w;
    }

    // Stopband verification grid: dense sweep from cutoff to Nyquist.
    const int grid = 4096;
    bool ok = true;
    const double floor_lin = db_to_lin(-attenuation);
    for (int g = 0; g < grid && ok; ++g) {
      double f = cutoff + (nyquist - cutoff) * g / (grid - 1.0);
      if (detail::fir_magnitude(fir.taps, f, sample_rate) > floor_lin) ok = false;
    }
    if (!ok) continue;

    // Passband ripple, measured up to one transition band below the edge.
    const double pass_edge = cutoff - margin * delta_w * sample_rate / kTwoPi;
    double ripple = 0.0;
    for (int g = 0; g < 512; ++g) {
      double f = pass_edge * g / 511.0;
      ripple = std::max(ripple, std::abs(lin_to_db(detail::fir_magnitude(fir.taps, f, sample_rate))));
    }
    fir.passband_ripple_db = ripple;
    return fir;
  }
  throw Error("design_antialias_fir: attenuation spec unreachable with " +
              std::to_string(num_taps) + " taps");
}

// ---------------------------------------------------------------------------
// FIR application (overlap-add FFT convolution)

enum class FirMode { Full, SameLength };

inline AudioBuffer apply_fir(const AudioBuffer& x, const FirFilter& fir, FirMode mode) {
  check(x.sample_rate == fir.sample_rate, "apply_fir: sample-rate mismatch");
  const std::size_t n = x.size(), t = fir.taps.size();
  if (n == 0) return {std::vector<double>{}, x.sample_rate};

  const std::size_t full_len = n + t - 1;
  std::vector<double> full(full_len, 0.0);

  if (t <= 64 || n < 4 * t) {
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = 0; k < t; ++k) full[i + k] += x.samples[i] * fir.taps[k];
  } else {
    // Overlap-add with a power-of-two FFT comfortably above the tap count.
    std::size_t nfft = 1;
    while (nfft < 8 * t) nfft <<= 1;
    const std::size_t block = nfft - t + 1;
    const std::size_t bins = nfft / 2 + 1;
    auto& engine = Fft<double>::instance();

    std::vector<double> padded(nfft, 0.0);
    std::copy(fir.taps.begin(), fir.taps.end(), padded.begin());
    std::vector<std::complex<double>> fir_spec(bins), seg_spec(bins);
    engine.rfft(padded.data(), nfft, fir_spec.data());

    std::vector<double> seg(nfft), conv(nfft);
    for (std::size_t start = 0; start < n; start += block) {
      const std::size_t len = std::min(block, n - start);
      std::fill(seg.begin(), seg.end(), 0.0);
      std::copy(x.samples.begin() + start, x.samples.begin() + start + len, seg.begin());
      engine.rfft(seg.data(), nfft, seg_spec.data());
      for (std::size_t b = 0; b < bins; ++b) seg_spec[b] *= fir_spec[b];
      engine.irfft(seg_spec.data(), nfft, conv.data());
      const std::size_t out_len = std::min(len + t - 1, full_len - start);
      for (std::size_t i = 0; i < out_len; ++i) full[start + i] += conv[i] / nfft;
    }
  }

  if (mode == FirMode::Full) return {std::move(full), x.sample_rate};
  // Same-length: compensate the (t-1)/2 group delay by cropping. Even tap
  // counts have a residual half-sample delay that cannot be cropped away.
  const std::size_t delay = (t - 1) / 2;
  std::vector<double> same(full.begin() + delay, full.begin() + delay + n);
  return {std::move(same), x.sample_rate};
}

// ---------------------------------------------------------------------------
// Gain envelope

inline AudioBuffer apply_gain_envelope(const AudioBuffer& x, double start_db, double end_db) {
  check(!x.samples.empty(), "apply_gain_envelope: empty buffer");
  AudioBuffer out = x;
  const std::size_t n = x.size();
  const double denom = n > 1 ? static_cast<double>(n - 1) : 1.0;
  for (std::size_t i = 0; i < n; ++i) {
    double g = start_db + (end_db - start_db) * static_cast<double>(i) / denom;
    out.samples[i] *= db_to_lin(g);
  }
  return out;
}

// ---------------------------------------------------------------------------
// STFT magnitude (double-precision analysis path)

// Rows are frequency bins (window_size/2 + 1), columns are frames.
inline Eigen::MatrixXd stft_mag(const AudioBuffer& x, std::size_t window_size, std::size_t hop,
                                Window window = Window::Hann) {
  check(window_size >= 2, "stft_mag: window too small");
  check(hop >= 1, "stft_mag: hop must be >= 1");
  check(x.size() >= window_size, "stft_mag: buffer shorter than one window");

  const std::size_t frames = (x.size() - window_size) / hop + 1;
  const std::size_t bins = window_size / 2 + 1;
  const std::vector<double> win = make_window(window, window_size);
  auto& engine = Fft<double>::instance();

  Eigen::MatrixXd mag(bins, frames);
  std::vector<double> frame(window_size);
  std::vector<std::complex<double>> spec(bins);
  for (std::size_t f = 0; f < frames; ++f) {
    for (std::size_t i = 0; i < window_size; ++i) frame[i] = x.samples[f * hop + i] * win[i];
    engine.rfft(frame.data(), window_size, spec.data());
    for (std::size_t b = 0; b < bins; ++b) mag(b, f) = std::abs(spec[b]);
  }
  return mag;
}

}  // namespace tvfx::dsp

// Copyright 2026 the tvfx authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <complex>
#include <vector>

#include "tvfx/dsp.hpp"
#include "tvfx/rng.hpp"

using namespace tvfx;
using Catch::Approx;

namespace {

// ===========================================================================
// Oracle: instantaneous frequency from samples alone.
//
// For a locally sinusoidal signal, x[n-1] + x[n+1] = 2 cos(dphi) x[n] where
// dphi is the per-sample phase step. A single 3-point estimate is noisy when
// the phase step drifts, so estimates average the lag-1 autocorrelation over
// a window, which cancels the drift-induced bias.
double three_point_freq(const std::vector<double>& x, std::size_t n, double fs) {
  double v = (x[n - 1] + x[n + 1]) / (2.0 * x[n]);
  return std::acos(std::clamp(v, -1.0, 1.0)) * fs / tvfx::kTwoPi;
}

double windowed_freq(const std::vector<double>& x, std::size_t lo, std::size_t hi, double fs) {
  double num = 0.0, den = 0.0;
  for (std::size_t n = lo; n < hi; ++n) {
    num += x[n] * (x[n + 1] + x[n - 1]);
    den += 2.0 * x[n] * x[n];
  }
  return std::acos(std::clamp(num / den, -1.0, 1.0)) * fs / tvfx::kTwoPi;
}

// Frequency at the last chirp sample. Direct measurement at Nyquist is
// ill-conditioned (acos blows up at dphi = pi), so anchor two windowed
// estimates where conditioning is good, fit the geometric growth between
// them, and extrapolate the short remaining distance to n = N-1.
double chirp_end_freq(const std::vector<double>& x, std::size_t chirp_len, double fs) {
  const std::size_t w = 11;
  auto raw_cos = [&](std::size_t lo) {
    double num = 0.0, den = 0.0;
    for (std::size_t n = lo; n < lo + w; ++n) {
      num += x[n] * (x[n + 1] + x[n - 1]);
      den += 2.0 * x[n] * x[n];
    }
    return num / den;
  };
  // Last window whose phase step is comfortably away from 0 and pi.
  std::size_t lo_a = chirp_len - 1 - w;
  while (lo_a > 2 * w && std::abs(raw_cos(lo_a)) > 0.84) --lo_a;
  REQUIRE(lo_a > 2 * w);
  const std::size_t lo_b = lo_a - 90;
  double fa = windowed_freq(x, lo_a, lo_a + w, fs);
  double fb = windowed_freq(x, lo_b, lo_b + w, fs);
  double center_a = static_cast<double>(lo_a) + (w - 1.0) / 2.0;
  double growth_per_sample = std::log(fa / fb) / static_cast<double>(lo_a - lo_b);
  return fa * std::exp(growth_per_sample * (static_cast<double>(chirp_len - 1) - center_a));
}

}  // namespace

// ===========================================================================

TEST_CASE("chirp train sweeps f0 to f1 and repeats exactly", "[dsp][chirp]") {
  const int fs = 44100;
  dsp::ChirpSpec spec;
  spec.f0 = 20.0;
  spec.f1 = fs / 2.0;
  spec.chirp_duration = 1.0 / 33.0;
  spec.n_repeats = 132;

  const std::size_t chirp_len = dsp::chirp_length(spec, fs);
  REQUIRE(chirp_len == 1336);

  AudioBuffer train = dsp::gen_chirp_train(spec, fs);
  REQUIRE(train.size() == chirp_len * 132);

  SECTION("phase starts at zero") { REQUIRE(train.samples[0] == 0.0); }

  SECTION("instantaneous frequency at the start is f0 within 1%") {
    // Near the start the phase is tiny, so asin recovers it directly.
    double phi1 = std::asin(train.samples[1]);
    double f_start = phi1 * fs / tvfx::kTwoPi;
    REQUIRE(f_start == Approx(20.0).epsilon(0.01));
  }

  SECTION("instantaneous frequency at the end is f1 within 1%") {
    std::vector<double> chirp(train.samples.begin(), train.samples.begin() + chirp_len);
    double f_end = chirp_end_freq(chirp, chirp_len, fs);
    REQUIRE(f_end == Approx(fs / 2.0).epsilon(0.01));
  }

  SECTION("all repetitions are bit-identical") {
    for (int r = 1; r < 132; ++r)
      for (std::size_t i = 0; i < chirp_len; ++i)
        REQUIRE(train.samples[r * chirp_len + i] == train.samples[i]);
  }

  SECTION("rejects f1 above Nyquist") {
    dsp::ChirpSpec bad = spec;
    bad.f1 = fs;  // 2x Nyquist
    REQUIRE_THROWS_AS(dsp::gen_chirp_train(bad, fs), Error);
  }
}

TEST_CASE("chirp frequency tracks a log sweep mid-signal", "[dsp][chirp]") {
  const int fs = 16000;
  dsp::ChirpSpec spec;
  spec.f0 = 100.0;
  spec.f1 = 4000.0;
  spec.chirp_duration = 0.25;
  spec.n_repeats = 1;
  AudioBuffer x = dsp::gen_chirp_train(spec, fs);
  const std::size_t n = x.size();

  // At the sweep midpoint the log-sweep frequency is the geometric mean.
  std::size_t mid = n / 2;
  while (std::abs(x.samples[mid]) < 0.3) ++mid;
  double f_mid = three_point_freq(x.samples, mid, fs);
  double expected = std::sqrt(spec.f0 * spec.f1) *
                    std::pow(spec.f1 / spec.f0, (static_cast<double>(mid) - n / 2.0) / n);
  REQUIRE(f_mid == Approx(expected).epsilon(0.02));
}

// ===========================================================================

TEST_CASE("anti-alias FIR meets the stopband spec", "[dsp][fir]") {
  const int fs = 44100;
  dsp::FirFilter fir = dsp::design_antialias_fir(fs, 17800.0, 1024, 100.0);

  SECTION("taps are exactly symmetric") {
    for (std::size_t i = 0; i < fir.taps.size(); ++i)
      REQUIRE(fir.taps[i] == fir.taps[fir.taps.size() - 1 - i]);
  }

  SECTION("stopband is at or below -100 dB on a dense grid") {
    for (int g = 0; g < 4096; ++g) {
      double f = 17800.0 + (22050.0 - 17800.0) * g / 4095.0;
      double mag = dsp::detail::fir_magnitude(fir.taps, f, fs);
      REQUIRE(lin_to_db(mag) <= -100.0);
    }
  }

  SECTION("DC gain is 0 dB within 0.1 dB") {
    double dc = dsp::detail::fir_magnitude(fir.taps, 0.0, fs);
    REQUIRE(std::abs(lin_to_db(dc)) < 0.1);
  }

  SECTION("passband ripple is small and recorded") {
    REQUIRE(fir.passband_ripple_db < 0.1);
  }

  SECTION("unreachable spec is rejected") {
    REQUIRE_THROWS_AS(dsp::design_antialias_fir(fs, 17800.0, 32, 100.0), Error);
  }
}

TEST_CASE("FIR application modes", "[dsp][fir]") {
  const int fs = 44100;
  dsp::FirFilter fir = dsp::design_antialias_fir(fs, 17800.0, 1024, 100.0);

  SECTION("unit impulse reproduces the taps in full mode") {
    AudioBuffer imp{std::vector<double>(64, 0.0), fs};
    imp.samples[0] = 1.0;
    AudioBuffer out = dsp::apply_fir(imp, fir, dsp::FirMode::Full);
    REQUIRE(out.size() == 64 + 1024 - 1);
    for (std::size_t i = 0; i < 1024; ++i) REQUIRE(out.samples[i] == Approx(fir.taps[i]).margin(1e-15));
  }

  SECTION("a 20 kHz tone is attenuated below -100 dB") {
    std::vector<double> tone(8192);
    for (std::size_t i = 0; i < tone.size(); ++i)
      tone[i] = std::sin(tvfx::kTwoPi * 20000.0 * i / fs);
    AudioBuffer out = dsp::apply_fir({tone, fs}, fir, dsp::FirMode::SameLength);
    // Skip the transient edges when measuring.
    std::vector<double> core(out.samples.begin() + 1024, out.samples.end() - 1024);
    std::vector<double> ref(tone.begin() + 1024, tone.end() - 1024);
    REQUIRE(lin_to_db(rms(core) / rms(ref)) <= -100.0);
  }

  SECTION("a 1 kHz tone passes at unity within ripple") {
    std::vector<double> tone(16384);
    for (std::size_t i = 0; i < tone.size(); ++i)
      tone[i] = std::sin(tvfx::kTwoPi * 1000.0 * i / fs);
    AudioBuffer out = dsp::apply_fir({tone, fs}, fir, dsp::FirMode::SameLength);
    std::vector<double> core(out.samples.begin() + 1024, out.samples.end() - 1024);
    std::vector<double> ref(tone.begin() + 1024, tone.end() - 1024);
    REQUIRE(std::abs(lin_to_db(rms(core) / rms(ref))) < 0.05);
  }

  SECTION("same-length mode preserves length") {
    AudioBuffer x{std::vector<double>(5000, 0.25), fs};
    REQUIRE(dsp::apply_fir(x, fir, dsp::FirMode::SameLength).size() == 5000);
  }

  SECTION("filtering is linear") {
    Rng rng(derive_seed(7, "fir-linearity"));
    std::vector<double> a(3000), b(3000);
    for (auto& v : a) v = rng.normal();
    for (auto& v : b) v = rng.normal();
    std::vector<double> mix(3000);
    for (std::size_t i = 0; i < mix.size(); ++i) mix[i] = 0.7 * a[i] - 1.3 * b[i];
    auto fa = dsp::apply_fir({a, fs}, fir, dsp::FirMode::Full);
    auto fb = dsp::apply_fir({b, fs}, fir, dsp::FirMode::Full);
    auto fm = dsp::apply_fir({mix, fs}, fir, dsp::FirMode::Full);
    double max_err = 0.0, max_ref = 0.0;
    for (std::size_t i = 0; i < fm.size(); ++i) {
      max_err = std::max(max_err, std::abs(fm.samples[i] - (0.7 * fa.samples[i] - 1.3 * fb.samples[i])));
      max_ref = std::max(max_ref, std::abs(fm.samples[i]));
    }
    REQUIRE(max_err / max_ref < 1e-6);
  }
}

// ===========================================================================

TEST_CASE("gain envelope interpolates in dB", "[dsp][envelope]") {
  AudioBuffer x{std::vector<double>(1001, 1.0), 44100};
  AudioBuffer out = dsp::apply_gain_envelope(x, -20.0, 0.0);

  REQUIRE(out.samples.front() == Approx(0.1));
  REQUIRE(out.samples.back() == Approx(1.0));
  // dB-linear means the midpoint sits at -10 dB.
  REQUIRE(out.samples[500] == Approx(db_to_lin(-10.0)));

  SECTION("identity envelope leaves samples untouched") {
    AudioBuffer same = dsp::apply_gain_envelope(x, 0.0, 0.0);
    for (std::size_t i = 0; i < x.size(); ++i) REQUIRE(same.samples[i] == x.samples[i]);
  }
}

// ===========================================================================

TEST_CASE("STFT magnitude basics", "[dsp][stft]") {
  const int fs = 16000;
  const std::size_t w = 256, hop = 64;

  SECTION("zero signal gives a zero matrix") {
    AudioBuffer x{std::vector<double>(1024, 0.0), fs};
    Eigen::MatrixXd m = dsp::stft_mag(x, w, hop, dsp::Window::Boxcar);
    REQUIRE(m.rows() == 129);
    REQUIRE(m.cols() == (1024 - 256) / 64 + 1);
    REQUIRE(m.maxCoeff() == 0.0);
  }

  SECTION("bin-centered sine concentrates in one bin under boxcar") {
    const int bin = 10;
    std::vector<double> x(1024);
    for (std::size_t i = 0; i < x.size(); ++i)
      x[i] = std::sin(tvfx::kTwoPi * bin * static_cast<double>(i) / w);
    Eigen::MatrixXd m = dsp::stft_mag({x, fs}, w, hop, dsp::Window::Boxcar);
    for (int f = 0; f < m.cols(); ++f) {
      for (int b = 0; b < m.rows(); ++b) {
        if (b == bin)
          REQUIRE(m(b, f) == Approx(w / 2.0).epsilon(1e-9));
        else
          REQUIRE(m(b, f) < 1e-6 * (w / 2.0));
      }
    }
  }

  SECTION("Parseval holds per boxcar frame") {
    Rng rng(derive_seed(11, "stft-parseval"));
    std::vector<double> x(512);
    for (auto& v : x) v = rng.normal();
    Eigen::MatrixXd m = dsp::stft_mag({x, fs}, w, w, dsp::Window::Boxcar);
    for (int f = 0; f < m.cols(); ++f) {
      double time_energy = 0.0;
      for (std::size_t i = 0; i < w; ++i) time_energy += x[f * w + i] * x[f * w + i];
      // One-sided spectrum: interior bins count twice.
      double spec_energy = m(0, f) * m(0, f) + m(m.rows() - 1, f) * m(m.rows() - 1, f);
      for (int b = 1; b < m.rows() - 1; ++b) spec_energy += 2.0 * m(b, f) * m(b, f);
      REQUIRE(spec_energy / w == Approx(time_energy).epsilon(1e-9));
    }
  }

  SECTION("hop-shifted input shifts frames under boxcar") {
    Rng rng(derive_seed(12, "stft-shift"));
    std::vector<double> x(2048);
    for (auto& v : x) v = rng.normal();
    Eigen::MatrixXd m1 = dsp::stft_mag({x, fs}, w, hop, dsp::Window::Boxcar);
    std::vector<double> shifted(x.begin() + hop, x.end());
    Eigen::MatrixXd m2 = dsp::stft_mag({shifted, fs}, w, hop, dsp::Window::Boxcar);
    for (int f = 0; f < m2.cols(); ++f)
      for (int b = 0; b < m2.rows(); ++b) REQUIRE(m2(b, f) == Approx(m1(b, f + 1)).margin(1e-12));
  }

  SECTION("buffer shorter than a window is rejected") {
    AudioBuffer x{std::vector<double>(100, 0.0), fs};
    REQUIRE_THROWS_AS(dsp::stft_mag(x, 256, 64), Error);
  }
}

// ===========================================================================

TEST_CASE("seeded RNG streams are stable and well-behaved", "[rng]") {
  SECTION("derive_seed separates purposes and counters") {
    REQUIRE(derive_seed(1, "a") != derive_seed(1, "b"));
    REQUIRE(derive_seed(1, "a", 0) != derive_seed(1, "a", 1));
    REQUIRE(derive_seed(1, "a", 2, 3) == derive_seed(1, "a", 2, 3));
    REQUIRE(derive_seed(1, "a") != derive_seed(2, "a"));
  }

  SECTION("normal moments at 1e5 samples") {
    Rng rng(derive_seed(99, "normal-moments"));
    double sum = 0.0, sum2 = 0.0;
    const int n = 100000;
    for (int i = 0; i < n; ++i) {
      double v = rng.normal();
      sum += v;
      sum2 += v * v;
    }
    REQUIRE(std::abs(sum / n) < 0.02);
    REQUIRE(std::abs(sum2 / n - 1.0) < 0.05);
  }

  SECTION("uniform_int stays in range and covers it") {
    Rng rng(derive_seed(5, "uniform-int"));
    std::vector<int> hits(7, 0);
    for (int i = 0; i < 7000; ++i) ++hits[rng.uniform_int(7)];
    for (int h : hits) REQUIRE(h > 700);
  }

  SECTION("state save/restore resumes the exact stream") {
    Rng rng(derive_seed(3, "resume"));
    rng.normal();  // leave a spare cached
    auto state = rng.state();
    bool spare = rng.has_spare();
    double spare_v = rng.spare();
    std::vector<double> expect;
    for (int i = 0; i < 10; ++i) expect.push_back(rng.normal());
    Rng fresh(0);
    fresh.restore(state, spare, spare_v);
    for (int i = 0; i < 10; ++i) REQUIRE(fresh.normal() == expect[i]);
  }
}

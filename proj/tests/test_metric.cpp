// Copyright 2026 the tvfx authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <vector>

#include <catch2/catch_amalgamated.hpp>

#include "tvfx/common.hpp"
#include "tvfx/dsp.hpp"
#include "tvfx/metric.hpp"
#include "tvfx/phaser.hpp"
#include "tvfx/rng.hpp"

namespace {

using tvfx::AudioBuffer;
using tvfx::metric::ModulationSpectrum;

// Uniform 0.25 Hz modulation grid (132 chirps at 33 chirps/s), bins 1..66.
ModulationSpectrum make_spectrum(const std::vector<double>& mags) {
  ModulationSpectrum s;
  s.mags = mags;
  s.freqs.resize(mags.size());
  for (std::size_t i = 0; i < mags.size(); ++i) {
    s.freqs[i] = 0.25 * static_cast<double>(i + 1);
  }
  return s;
}

// Exact 1-Wasserstein distance between two discrete distributions on a
// shared uniform grid, via the cumulative-difference identity
//   W1 = step * sum_k |A_k - B_k|
// where A, B are the unit-mass cumulative sums.  This is an independent
// computation path from the quantile-based estimate under test.
double transport_w1(const ModulationSpectrum& a, const ModulationSpectrum& b) {
  REQUIRE(a.freqs == b.freqs);
  const double total_a = std::accumulate(a.mags.begin(), a.mags.end(), 0.0);
  const double total_b = std::accumulate(b.mags.begin(), b.mags.end(), 0.0);
  const double step = a.freqs[1] - a.freqs[0];
  double cum_a = 0.0;
  double cum_b = 0.0;
  double dist = 0.0;
  for (std::size_t i = 0; i < a.mags.size(); ++i) {
    cum_a += a.mags[i] / total_a;
    cum_b += b.mags[i] / total_b;
    dist += std::abs(cum_a - cum_b) * step;
  }
  return dist;
}

AudioBuffer chirp_probe(int sample_rate, int n_repeats) {
  tvfx::dsp::ChirpSpec spec;
  spec.f0 = 20.0;
  spec.f1 = 17800.0;
  spec.chirp_duration = 1.0 / 33.0;
  spec.n_repeats = n_repeats;
  return tvfx::dsp::gen_chirp_train(spec, sample_rate);
}

}  // namespace

TEST_CASE("chirp-aligned spectrogram of an unprocessed train has identical "
          "columns") {
  const AudioBuffer train = chirp_probe(44100, 8);
  const std::size_t chirp_len = 1336;
  REQUIRE(train.size() == 8 * chirp_len);
  const Eigen::MatrixXd spec =
      tvfx::metric::chirp_aligned_spectrogram(train, chirp_len);
  REQUIRE(spec.cols() == 8);
  REQUIRE(spec.rows() == static_cast<Eigen::Index>(chirp_len / 2 + 1));
  for (Eigen::Index c = 1; c < spec.cols(); ++c) {
    REQUIRE((spec.col(c) - spec.col(0)).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("chirp-aligned spectrogram rejects signals shorter than one chirp") {
  AudioBuffer y;
  y.sample_rate = 44100;
  y.samples.assign(500, 0.0);
  REQUIRE_THROWS_AS(tvfx::metric::chirp_aligned_spectrogram(y, 1336),
                    tvfx::DataError);
}

TEST_CASE("frequency-frequency transform matches the analytic DFT of a "
          "cosine row") {
  // Row amplitude 1 + 0.5*cos(2*pi*3Hz*t) sampled at the 33 Hz chirp rate
  // over 132 chirps: one-sided DFT magnitude 132*0.25 = 33 at bin 12 (3 Hz),
  // zero elsewhere once DC is removed.
  const int n_chirps = 132;
  Eigen::MatrixXd spec(3, n_chirps);
  for (int c = 0; c < n_chirps; ++c) {
    const double t = static_cast<double>(c) / 33.0;
    const double v = 1.0 + 0.5 * std::cos(2.0 * tvfx::kPi * 3.0 * t);
    for (int r = 0; r < 3; ++r) spec(r, c) = v;
  }
  const Eigen::MatrixXd ff = tvfx::metric::frequency_frequency(spec);
  REQUIRE(ff.rows() == 3);
  REQUIRE(ff.cols() == n_chirps / 2);
  for (int r = 0; r < 3; ++r) {
    for (int k = 0; k < ff.cols(); ++k) {
      if (k == 11) {  // column k holds modulation bin k+1
        REQUIRE(ff(r, k) == Catch::Approx(33.0).epsilon(1e-9));
      } else {
        REQUIRE(ff(r, k) < 33.0 * 1e-6);
      }
    }
  }
}

TEST_CASE("frequency-frequency transform removes DC: constant rows map to "
          "zero") {
  Eigen::MatrixXd spec(4, 16);
  for (int r = 0; r < 4; ++r) spec.row(r).setConstant(1.0 + r);
  const Eigen::MatrixXd ff = tvfx::metric::frequency_frequency(spec);
  REQUIRE(ff.cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("frequency-frequency transform needs at least two chirps") {
  Eigen::MatrixXd spec(4, 1);
  spec.setOnes();
  REQUIRE_THROWS_AS(tvfx::metric::frequency_frequency(spec), tvfx::DataError);
}

TEST_CASE("modulation spectrum sums over audio frequency and is independent "
          "of row order") {
  tvfx::Rng rng(tvfx::derive_seed(99, "metric-rows"));
  Eigen::MatrixXd ff(7, 5);
  for (Eigen::Index r = 0; r < ff.rows(); ++r) {
    for (Eigen::Index c = 0; c < ff.cols(); ++c) {
      ff(r, c) = std::abs(rng.normal());
    }
  }
  const auto spectrum = tvfx::metric::modulation_spectrum(ff, 0.5);
  REQUIRE(spectrum.size() == 5);
  for (std::size_t k = 0; k < 5; ++k) {
    REQUIRE(spectrum.freqs[k] ==
            Catch::Approx(0.5 * static_cast<double>(k + 1)));
    REQUIRE(spectrum.mags[k] ==
            Catch::Approx(ff.col(static_cast<Eigen::Index>(k)).sum()));
  }

  // Permuting audio-frequency rows must not change the spectrum.
  Eigen::MatrixXd shuffled = ff;
  shuffled.row(0).swap(shuffled.row(6));
  shuffled.row(2).swap(shuffled.row(4));
  const auto spectrum2 = tvfx::metric::modulation_spectrum(shuffled, 0.5);
  for (std::size_t k = 0; k < 5; ++k) {
    REQUIRE(spectrum2.mags[k] == Catch::Approx(spectrum.mags[k]).epsilon(1e-12));
  }

  // Single nonzero cell: the spectrum carries exactly that value.
  Eigen::MatrixXd single = Eigen::MatrixXd::Zero(7, 5);
  single(3, 2) = 4.25;
  const auto spectrum3 = tvfx::metric::modulation_spectrum(single, 0.5);
  for (std::size_t k = 0; k < 5; ++k) {
    REQUIRE(spectrum3.mags[k] == (k == 2 ? 4.25 : 0.0));
  }
}

TEST_CASE("energy term matches its closed forms") {
  std::vector<double> mags(66, 0.0);
  mags[10] = 2.0;
  mags[30] = 1.0;
  const ModulationSpectrum ref = make_spectrum(mags);

  SECTION("identical spectra give zero") {
    REQUIRE(tvfx::metric::mod_p(ref, ref) == 0.0);
  }
  SECTION("zero test spectrum gives one") {
    const ModulationSpectrum silent = make_spectrum(std::vector<double>(66, 0.0));
    REQUIRE(tvfx::metric::mod_p(ref, silent) == 1.0);
  }
  SECTION("scaling the test spectrum by a gives |1 - a|") {
    for (double a : {2.0, 0.25, 1.7}) {
      std::vector<double> scaled = mags;
      for (double& m : scaled) m *= a;
      REQUIRE(tvfx::metric::mod_p(ref, make_spectrum(scaled)) ==
              Catch::Approx(std::abs(1.0 - a)).margin(1e-12));
    }
  }
  SECTION("zero-energy reference is rejected") {
    const ModulationSpectrum silent = make_spectrum(std::vector<double>(66, 0.0));
    REQUIRE_THROWS_AS(tvfx::metric::mod_p(silent, ref), tvfx::DataError);
  }
}

TEST_CASE("shape term: point masses two hertz apart are two hertz apart") {
  std::vector<double> at_1hz(66, 0.0);
  std::vector<double> at_3hz(66, 0.0);
  at_1hz[3] = 1.0;   // 0.25 * 4 = 1.0 Hz
  at_3hz[11] = 1.0;  // 0.25 * 12 = 3.0 Hz
  const ModulationSpectrum a = make_spectrum(at_1hz);
  const ModulationSpectrum b = make_spectrum(at_3hz);

  const double exact = transport_w1(a, b);
  REQUIRE(exact == Catch::Approx(2.0).margin(1e-12));

  // The 99-quantile estimate truncates the top percentile of mass, so it
  // carries a systematic ~1% underestimate; 0.05 Hz covers it.
  const double w = tvfx::metric::mod_w(a, b);
  REQUIRE(w == Catch::Approx(2.0).margin(0.05));
  REQUIRE(tvfx::metric::mod_w(b, a) == w);  // symmetric
}

TEST_CASE("shape term is zero for identical spectra and invariant to gain") {
  tvfx::Rng rng(tvfx::derive_seed(7, "metric-gain"));
  std::vector<double> mags(66);
  for (double& m : mags) m = std::abs(rng.normal());
  const ModulationSpectrum a = make_spectrum(mags);
  REQUIRE(tvfx::metric::mod_w(a, a) == 0.0);

  std::vector<double> other(66);
  for (double& m : other) m = std::abs(rng.normal());
  const ModulationSpectrum b = make_spectrum(other);
  const double w = tvfx::metric::mod_w(a, b);
  for (double gain : {7.3, 0.004, 1234.5}) {
    std::vector<double> scaled = other;
    for (double& m : scaled) m *= gain;
    REQUIRE(tvfx::metric::mod_w(a, make_spectrum(scaled)) ==
            Catch::Approx(w).margin(1e-10));
  }
}

TEST_CASE("shape term tracks an exhaustive transport computation on random "
          "spectra") {
  // Right-endpoint quantile sum over r = 0.01..0.99 versus the exact
  // cumulative-difference transport distance.  The estimate's bias is
  // bounded by roughly (quantile step + truncated top percentile) times the
  // grid range, so 2% of the 16.5 Hz range is an honest tolerance.
  for (std::uint64_t trial = 0; trial < 6; ++trial) {
    tvfx::Rng rng(tvfx::derive_seed(41, "metric-transport", trial));
    std::vector<double> ma(66);
    std::vector<double> mb(66);
    for (double& m : ma) m = std::abs(rng.normal());
    for (double& m : mb) m = std::abs(rng.normal());
    const ModulationSpectrum a = make_spectrum(ma);
    const ModulationSpectrum b = make_spectrum(mb);
    const double exact = transport_w1(a, b);
    const double approx = tvfx::metric::mod_w(a, b);
    REQUIRE(approx == Catch::Approx(exact).margin(0.02 * 16.5));
  }
}

TEST_CASE("shape term rejects zero-mass spectra") {
  const ModulationSpectrum silent = make_spectrum(std::vector<double>(66, 0.0));
  std::vector<double> mags(66, 0.0);
  mags[5] = 1.0;
  REQUIRE_THROWS_AS(tvfx::metric::mod_w(make_spectrum(mags), silent),
                    tvfx::DataError);
}

TEST_CASE("modulation spectrum of a phaser output peaks at the rate of its "
          "sweep") {
  const int fs = 44100;
  const AudioBuffer train = chirp_probe(fs, 132);
  const std::size_t chirp_len = 1336;
  const std::size_t n_chirps = train.size() / chirp_len;
  const double resolution = 33.0 / static_cast<double>(n_chirps);  // 0.25 Hz

  for (double rate : {1.0, 2.0, 3.0, 5.0}) {
    tvfx::phaser::PhaserParams params = tvfx::phaser::fast_lfo_preset();
    params.lfo_rate = rate;
    const AudioBuffer wet = tvfx::phaser::phaser_process(train, params, 0.0);
    const auto spectrum = tvfx::metric::modulation_spectrum(
        tvfx::metric::frequency_frequency(
            tvfx::metric::chirp_aligned_spectrogram(wet, chirp_len)),
        resolution);
    const double peak_freq = spectrum.freqs[spectrum.argmax()];
    INFO("rate " << rate << " Hz peaked at " << peak_freq << " Hz");
    REQUIRE(std::abs(peak_freq - rate) <= resolution + 1e-9);
  }
}

TEST_CASE("combined metric: reference against itself is exactly zero") {
  const AudioBuffer train = chirp_probe(44100, 16);
  tvfx::dsp::ChirpSpec spec;
  spec.f0 = 20.0;
  spec.f1 = 17800.0;
  spec.chirp_duration = 1.0 / 33.0;
  spec.n_repeats = 16;
  const AudioBuffer wet =
      tvfx::phaser::phaser_process(train, tvfx::phaser::fast_lfo_preset(), 0.0);
  const auto result = tvfx::metric::mod_metric(wet, wet, spec);
  REQUIRE(result.l_mod_p == 0.0);
  REQUIRE(result.l_mod_w == 0.0);
  REQUIRE(result.l_mod == 0.0);
}

TEST_CASE("combined metric flags an unmodulated test signal") {
  const AudioBuffer train = chirp_probe(44100, 132);
  tvfx::dsp::ChirpSpec spec;
  spec.f0 = 20.0;
  spec.f1 = 17800.0;
  spec.chirp_duration = 1.0 / 33.0;
  spec.n_repeats = 132;
  const AudioBuffer wet =
      tvfx::phaser::phaser_process(train, tvfx::phaser::fast_lfo_preset(), 0.0);

  SECTION("dry chirp train as the test signal") {
    const auto result = tvfx::metric::mod_metric(wet, train, spec);
    INFO("l_mod = " << result.l_mod << " (p " << result.l_mod_p << ", w "
                    << result.l_mod_w << ")");
    REQUIRE(result.l_mod >= 0.8);
  }
  SECTION("silence as the test signal has unit energy loss and no shape "
          "term") {
    AudioBuffer silent = train;
    std::fill(silent.samples.begin(), silent.samples.end(), 0.0);
    const auto result = tvfx::metric::mod_metric(wet, silent, spec);
    REQUIRE(result.l_mod_p == 1.0);
    REQUIRE(result.l_mod_w == 0.0);
    REQUIRE(result.l_mod == 1.0);
  }
}

TEST_CASE("combined metric validates its input pair") {
  const AudioBuffer train = chirp_probe(44100, 4);
  tvfx::dsp::ChirpSpec spec;
  spec.f0 = 20.0;
  spec.f1 = 17800.0;
  spec.chirp_duration = 1.0 / 33.0;
  spec.n_repeats = 4;

  AudioBuffer shorter = train;
  shorter.samples.resize(train.size() - 100);
  REQUIRE_THROWS_AS(tvfx::metric::mod_metric(train, shorter, spec),
                    tvfx::DataError);

  AudioBuffer wrong_rate = train;
  wrong_rate.sample_rate = 16000;
  REQUIRE_THROWS_AS(tvfx::metric::mod_metric(train, wrong_rate, spec),
                    tvfx::DataError);

  AudioBuffer tiny;
  tiny.sample_rate = 44100;
  tiny.samples.assign(1500, 0.1);  // more than one chirp, fewer than two
  REQUIRE_THROWS_AS(tvfx::metric::mod_metric(tiny, tiny, spec),
                    tvfx::DataError);
}

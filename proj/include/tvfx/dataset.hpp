// Copyright 2026 the tvfx authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "tvfx/common.hpp"
#include "tvfx/dsp.hpp"
#include "tvfx/phaser.hpp"
#include "tvfx/rng.hpp"
#include "tvfx/wav.hpp"

namespace tvfx::data {

// Dataset construction: each take is a continuous recording whose input is a
// 4-second chirp train followed by synthesized program material, both under a
// -20 -> 0 dB gain envelope. Input and output are low-passed by the same
// anti-alias FIR that terminates the model, and the output is the reference
// phaser driven from a per-take random LFO phase.

struct DatasetSpec {
  int sample_rate = 16000;
  double train_seconds = 120.0;
  double validation_seconds = 30.0;
  int train_takes = 1;
  int validation_takes = 1;
  double chirp_seconds = 4.0;
  double chirp_f0 = 20.0;
  double chirp_duration = 1.0 / 33.0;
  double segment_seconds = 4.0;  // program-material segment length
  double fir_cutoff = 7200.0;    // anti-alias edge; 17800 at the 44.1 kHz scale
  std::size_t fir_taps = 257;    // 1024 at the 44.1 kHz scale
  double fir_attenuation = 100.0;
};

inline DatasetSpec paper_scale_spec() {
  DatasetSpec s;
  s.sample_rate = 44100;
  s.train_seconds = 620.0;
  s.validation_seconds = 144.0;
  s.fir_cutoff = 17800.0;
  s.fir_taps = 1024;
  return s;
}

enum class Split { Train, Validation };

inline const char* split_name(Split s) { return s == Split::Train ? "train" : "validation"; }

// What training code is allowed to see: audio pair plus the fixed control
// vector. Ground-truth LFO phase stays out of this type on purpose.
struct TakeView {
  AudioBuffer x;
  AudioBuffer y;
  std::vector<double> phi;
};

namespace detail {

// --- program material ------------------------------------------------------

inline std::vector<double> pink_noise_burst(std::size_t n, int fs, Rng& rng) {
  // White noise through the classic three-pole pinking approximation,
  // gated by a few attack/decay envelopes.
  std::vector<double> seg(n, 0.0);
  double b0 = 0, b1 = 0, b2 = 0;
  for (auto& s : seg) {
    double w = rng.normal();
    b0 = 0.99765 * b0 + w * 0.0990460;
    b1 = 0.96300 * b1 + w * 0.2965164;
    b2 = 0.57000 * b2 + w * 1.0526913;
    s = 0.05 * (b0 + b1 + b2 + 0.1848 * w);
  }
  const int bursts = 3 + static_cast<int>(rng.uniform_int(4));
  std::vector<double> gate(n, 0.0);
  for (int b = 0; b < bursts; ++b) {
    std::size_t start = rng.uniform_int(n * 3 / 4);
    std::size_t len = fs / 8 + rng.uniform_int(fs);
    double attack = 0.005 * fs, decay = 0.1 * fs + rng.uniform(0.0, 0.3) * fs;
    for (std::size_t i = start; i < std::min(n, start + len); ++i) {
      double a = std::min(1.0, (i - start) / attack);
      double d = std::exp(-static_cast<double>(i - start) / decay);
      gate[i] = std::max(gate[i], a * d);
    }
  }
  for (std::size_t i = 0; i < n; ++i) seg[i] *= gate[i];
  return seg;
}

inline std::vector<double> sawtooth_melody(std::size_t n, int fs, Rng& rng) {
  // polyBLEP sawtooth over a random minor-pentatonic walk; the residual
  // aliasing sits above the anti-alias cutoff and is removed downstream.
  static constexpr double kSemis[] = {0, 3, 5, 7, 10, 12, 15, 17};
  const double base = 110.0 * std::pow(2.0, rng.uniform(0.0, 1.0));
  const std::size_t note_len = static_cast<std::size_t>(fs * rng.uniform(0.18, 0.35));
  std::vector<double> seg(n);
  double phase = 0.0;
  double freq = base;
  for (std::size_t i = 0; i < n; ++i) {
    if (i % note_len == 0)
      freq = base * std::pow(2.0, kSemis[rng.uniform_int(8)] / 12.0);
    const double dt = freq / fs;
    phase += dt;
    if (phase >= 1.0) phase -= 1.0;
    double v = 2.0 * phase - 1.0;
    // polyBLEP corner smoothing at the wrap.
    if (phase < dt) {
      double t = phase / dt;
      v -= 2.0 * t - t * t - 1.0;
    } else if (phase > 1.0 - dt) {
      double t = (phase - 1.0) / dt;
      v -= t * t + 2.0 * t + 1.0;
    }
    double env = std::min({1.0, i / (0.01 * fs), (n - 1.0 - i) / (0.05 * fs)});
    seg[i] = 0.25 * v * std::max(0.0, env);
  }
  return seg;
}

inline std::vector<double> am_tones(std::size_t n, int fs, Rng& rng) {
  const int voices = 2 + static_cast<int>(rng.uniform_int(2));
  std::vector<double> seg(n, 0.0);
  for (int v = 0; v < voices; ++v) {
    const double fc = rng.uniform(180.0, 1800.0);
    const double fm = rng.uniform(0.5, 8.0);
    const double depth = rng.uniform(0.4, 1.0);
    const double phase = rng.uniform(0.0, kTwoPi);
    for (std::size_t i = 0; i < n; ++i) {
      double t = static_cast<double>(i) / fs;
      double am = 1.0 + depth * std::sin(kTwoPi * fm * t + phase);
      seg[i] += 0.12 * am * std::sin(kTwoPi * fc * t);
    }
  }
  double fade = 0.02 * fs;
  for (std::size_t i = 0; i < n; ++i) {
    double env = std::min({1.0, i / fade, (n - 1.0 - i) / fade});
    seg[i] *= std::max(0.0, env);
  }
  return seg;
}

inline std::vector<double> program_material(std::size_t n, int fs, double segment_seconds,
                                            Rng& rng) {
  std::vector<double> out;
  out.reserve(n);
  const auto seg_len = static_cast<std::size_t>(segment_seconds * fs);
  int kind = static_cast<int>(rng.uniform_int(3));
  while (out.size() < n) {
    std::size_t len = std::min(seg_len, n - out.size());
    std::vector<double> seg;
    switch (kind) {
      case 0: seg = pink_noise_burst(len, fs, rng); break;
      case 1: seg = sawtooth_melody(len, fs, rng); break;
      default: seg = am_tones(len, fs, rng); break;
    }
    // Keep a deterministic rotation with a random phase so every take mixes
    // all three materials.
    kind = (kind + 1 + static_cast<int>(rng.uniform_int(2))) % 3;
    double peak = 0.0;
    for (double s : seg) peak = std::max(peak, std::abs(s));
    double norm = peak > 1e-9 ? 0.7 / peak : 0.0;
    for (double s : seg) out.push_back(s * norm);
  }
  return out;
}

}  // namespace detail

// Input audio for one take: enveloped chirp train, then enveloped program
// material, low-passed by the dataset FIR.
inline AudioBuffer build_take_input(const DatasetSpec& spec, const dsp::FirFilter& fir,
                                    double take_seconds, std::uint64_t seed) {
  const int fs = spec.sample_rate;
  dsp::ChirpSpec chirp;
  chirp.f0 = spec.chirp_f0;
  chirp.f1 = fs / 2.0;
  chirp.chirp_duration = spec.chirp_duration;
  chirp.n_repeats = static_cast<int>(spec.chirp_seconds / spec.chirp_duration);
  AudioBuffer train = dsp::gen_chirp_train(chirp, fs);
  train = dsp::apply_gain_envelope(train, -20.0, 0.0);

  const auto total = static_cast<std::size_t>(take_seconds * fs);
  check(total > train.size(), "build_take_input: take shorter than the chirp section");
  Rng rng(derive_seed(seed, "program-material"));
  std::vector<double> prog = detail::program_material(total - train.size(), fs,
                                                      spec.segment_seconds, rng);
  AudioBuffer music{std::move(prog), fs};
  music = dsp::apply_gain_envelope(music, -20.0, 0.0);

  AudioBuffer x;
  x.sample_rate = fs;
  x.samples = std::move(train.samples);
  x.samples.insert(x.samples.end(), music.samples.begin(), music.samples.end());
  return dsp::apply_fir(x, fir, dsp::FirMode::SameLength);
}

// Fixed per-snapshot control vector; FiLM is bypassed, so models never read
// it, but it travels with every take as the (x, y, phi) contract requires.
inline std::vector<double> snapshot_phi(const phaser::PhaserParams& p) {
  return {p.lfo_rate / 10.0, p.lfo_width, p.lfo_center, p.depth, p.feedback};
}

inline nlohmann::json build_split(const std::filesystem::path& dir, const DatasetSpec& spec,
                                  const phaser::PhaserParams& params, Split split,
                                  std::uint64_t seed) {
  std::filesystem::create_directories(dir);
  const dsp::FirFilter fir =
      dsp::design_antialias_fir(spec.sample_rate, spec.fir_cutoff, spec.fir_taps,
                                spec.fir_attenuation);
  const int takes = split == Split::Train ? spec.train_takes : spec.validation_takes;
  const double seconds = (split == Split::Train ? spec.train_seconds : spec.validation_seconds) /
                         std::max(1, takes);

  nlohmann::json take_list = nlohmann::json::array();
  for (int t = 0; t < takes; ++t) {
    const std::uint64_t take_seed = derive_seed(seed, split_name(split), t);
    AudioBuffer x = build_take_input(spec, fir, seconds, take_seed);
    Rng phase_rng(derive_seed(take_seed, "lfo-phase0"));
    const double phase0 = phase_rng.uniform(0.0, kTwoPi);
    AudioBuffer wet = phaser::phaser_process(x, params, phase0);
    AudioBuffer y = dsp::apply_fir(wet, fir, dsp::FirMode::SameLength);

    char xname[32], yname[32];
    std::snprintf(xname, sizeof xname, "take_%04d_x.wav", t);
    std::snprintf(yname, sizeof yname, "take_%04d_y.wav", t);
    io::write_wav(dir / xname, x);
    io::write_wav(dir / yname, y);
    take_list.push_back({{"x", xname},
                         {"y", yname},
                         {"seconds", seconds},
                         {"seed", take_seed},
                         {"lfo_phase0", phase0}});
  }
  return take_list;
}

// Builds both splits plus the manifest. Train and validation seeds must be
// disjoint so their program material cannot coincide.
inline void build_dataset(const std::filesystem::path& dir, const DatasetSpec& spec,
                          const phaser::PhaserParams& params, const std::string& preset_name,
                          std::uint64_t train_seed, std::uint64_t validation_seed) {
  check_data(train_seed != validation_seed,
             "build_dataset: train and validation splits must use disjoint seeds");

  nlohmann::json manifest;
  manifest["schema_version"] = 1;
  manifest["sample_rate"] = spec.sample_rate;
  manifest["preset"] = preset_name;
  manifest["phaser"] = {{"n_stages", params.n_stages},
                        {"lfo_rate_hz", params.lfo_rate},
                        {"lfo_period_s", 1.0 / params.lfo_rate},
                        {"lfo_width", params.lfo_width},
                        {"lfo_center", params.lfo_center},
                        {"depth", params.depth},
                        {"feedback", params.feedback},
                        {"lfo_shape", params.lfo_shape == phaser::LfoShape::Sine ? "sine" : "triangle"}};
  manifest["chirp"] = {{"f0_hz", spec.chirp_f0},
                       {"f1_hz", spec.sample_rate / 2.0},
                       {"duration_s", spec.chirp_duration},
                       {"seconds", spec.chirp_seconds}};
  manifest["fir"] = {{"cutoff_hz", spec.fir_cutoff},
                     {"taps", spec.fir_taps},
                     {"attenuation_db", spec.fir_attenuation}};
  manifest["phi"] = snapshot_phi(params);
  manifest["splits"]["train"] = {{"seed", train_seed},
                                 {"seconds", spec.train_seconds},
                                 {"takes", build_split(dir, spec, params, Split::Train, train_seed)}};
  // Validation takes land in a subdirectory to keep file names disjoint.
  manifest["splits"]["validation"] = {
      {"seed", validation_seed},
      {"seconds", spec.validation_seconds},
      {"takes", build_split(dir / "validation", spec, params, Split::Validation, validation_seed)}};

  std::ofstream out(dir / "manifest.json");
  check(out.good(), "build_dataset: cannot write manifest");
  out << manifest.dump(2) << "\n";
}

// Read-only access for training and evaluation. Exposes (x, y, phi) only;
// the diagnostic LFO phase in the manifest is deliberately unreachable here.
class DatasetView {
 public:
  explicit DatasetView(const std::filesystem::path& dir) : dir_(dir) {
    std::ifstream in(dir / "manifest.json");
    if (!in.good())
      throw MissingArtifactError("DatasetView: no manifest.json under " + dir.string());
    in >> manifest_;
    check_data(manifest_.value("schema_version", 0) == 1, "DatasetView: unsupported manifest schema");
  }

  int sample_rate() const { return manifest_.at("sample_rate").get<int>(); }
  std::string preset() const { return manifest_.at("preset").get<std::string>(); }
  double lfo_rate_hz() const { return manifest_.at("phaser").at("lfo_rate_hz").get<double>(); }
  double chirp_seconds() const { return manifest_.at("chirp").at("seconds").get<double>(); }
  double chirp_duration() const { return manifest_.at("chirp").at("duration_s").get<double>(); }
  double chirp_f0() const { return manifest_.at("chirp").at("f0_hz").get<double>(); }

  std::size_t take_count(Split split) const {
    return manifest_.at("splits").at(split_name(split)).at("takes").size();
  }

  TakeView load(Split split, std::size_t index) const {
    const auto& takes = manifest_.at("splits").at(split_name(split)).at("takes");
    check_data(index < takes.size(), "DatasetView: take index out of range");
    const auto& t = takes.at(index);
    std::filesystem::path base = split == Split::Train ? dir_ : dir_ / "validation";
    TakeView view;
    view.x = io::read_wav(base / t.at("x").get<std::string>());
    view.y = io::read_wav(base / t.at("y").get<std::string>());
    check_data(view.x.size() == view.y.size() && view.x.sample_rate == view.y.sample_rate,
               "DatasetView: x/y shape mismatch");
    view.phi = manifest_.at("phi").get<std::vector<double>>();
    return view;
  }

 private:
  std::filesystem::path dir_;
  nlohmann::json manifest_;
};

}  // namespace tvfx::data

// Copyright 2026 the tvfx authors
// SPDX-License-Identifier: Apache-2.0
//
// Experiment configuration: a single JSON document covering the dataset,
// effect preset, model sizes, and training recipe. Parsing is strict —
// unknown keys are errors, which catches typos in experiment grids — and
// layered: profile defaults ("desk-scale" or "paper-scale"), then the
// file, then dotted-path command-line overrides. A parsed config
// round-trips to JSON and back without loss.

#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "tvfx/common.hpp"
#include "tvfx/dataset.hpp"
#include "tvfx/discriminator.hpp"
#include "tvfx/generator.hpp"
#include "tvfx/phaser.hpp"
#include "tvfx/train_config.hpp"

namespace tvfx::cfg {

using nlohmann::json;

// --- strict object reader ---------------------------------------------------

namespace detail {

class StrictReader {
 public:
  StrictReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    check_config(j_.is_object(), "config: " + path_ + " must be an object");
  }

  template <typename T>
  void field(const char* key, T& dst) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      dst = j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError("config: bad value type for " + path_ + "." + key);
    }
  }

  // Returns the sub-object for `key` (empty object if absent) for nesting.
  json sub(const char* key) {
    seen_.insert(key);
    if (!j_.contains(key)) return json::object();
    check_config(j_.at(key).is_object(),
                 "config: " + path_ + "." + key + " must be an object");
    return j_.at(key);
  }

  void finish() const {
    for (const auto& item : j_.items()) {
      check_config(seen_.count(item.key()) > 0,
                   "config: unknown key " + path_ + "." + item.key());
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

}  // namespace detail

// --- per-struct readers and writers ----------------------------------------
// Readers update the passed struct in place, so whatever the caller seeded
// (profile defaults, presets) survives for keys the document omits.

inline void read_phaser(const json& j, phaser::PhaserParams& p,
                        const std::string& path) {
  detail::StrictReader r(j, path);
  r.field("n_stages", p.n_stages);
  r.field("lfo_rate_hz", p.lfo_rate);
  r.field("lfo_width", p.lfo_width);
  r.field("lfo_center", p.lfo_center);
  r.field("depth", p.depth);
  r.field("feedback", p.feedback);
  std::string shape =
      p.lfo_shape == phaser::LfoShape::Sine ? "sine" : "triangle";
  r.field("lfo_shape", shape);
  if (shape == "sine") {
    p.lfo_shape = phaser::LfoShape::Sine;
  } else if (shape == "triangle") {
    p.lfo_shape = phaser::LfoShape::Triangle;
  } else {
    throw ConfigError("config: " + path + ".lfo_shape must be sine|triangle");
  }
  r.finish();
}

inline json phaser_to_json(const phaser::PhaserParams& p) {
  return {{"n_stages", p.n_stages},
          {"lfo_rate_hz", p.lfo_rate},
          {"lfo_width", p.lfo_width},
          {"lfo_center", p.lfo_center},
          {"depth", p.depth},
          {"feedback", p.feedback},
          {"lfo_shape",
           p.lfo_shape == phaser::LfoShape::Sine ? "sine" : "triangle"}};
}

inline void read_dataset(const json& j, data::DatasetSpec& d,
                         const std::string& path) {
  detail::StrictReader r(j, path);
  r.field("sample_rate", d.sample_rate);
  r.field("train_seconds", d.train_seconds);
  r.field("validation_seconds", d.validation_seconds);
  r.field("train_takes", d.train_takes);
  r.field("validation_takes", d.validation_takes);
  r.field("chirp_seconds", d.chirp_seconds);
  r.field("chirp_f0", d.chirp_f0);
  r.field("chirp_duration", d.chirp_duration);
  r.field("segment_seconds", d.segment_seconds);
  r.field("fir_cutoff", d.fir_cutoff);
  r.field("fir_taps", d.fir_taps);
  r.field("fir_attenuation", d.fir_attenuation);
  r.finish();
}

inline json dataset_to_json(const data::DatasetSpec& d) {
  return {{"sample_rate", d.sample_rate},
          {"train_seconds", d.train_seconds},
          {"validation_seconds", d.validation_seconds},
          {"train_takes", d.train_takes},
          {"validation_takes", d.validation_takes},
          {"chirp_seconds", d.chirp_seconds},
          {"chirp_f0", d.chirp_f0},
          {"chirp_duration", d.chirp_duration},
          {"segment_seconds", d.segment_seconds},
          {"fir_cutoff", d.fir_cutoff},
          {"fir_taps", d.fir_taps},
          {"fir_attenuation", d.fir_attenuation}};
}

inline void read_generator(const json& j, gen::GeneratorConfig& g,
                           const std::string& path) {
  detail::StrictReader r(j, path);
  r.field("n_blocks", g.n_blocks);
  r.field("audio_channels", g.audio_channels);
  r.field("audio_kernel", g.audio_kernel);
  r.field("convs_per_fxblock", g.convs_per_fxblock);
  r.field("dilation_base", g.dilation_base);
  r.field("mod_channels", g.mod_channels);
  r.field("mod_kernel", g.mod_kernel);
  r.field("mod_pooling", g.mod_pooling);
  r.field("lstm_hidden", g.lstm_hidden);
  r.field("film_enabled", g.film_enabled);
  r.field("control_dim", g.control_dim);
  r.field("latent_dim", g.latent_dim);
  r.field("sample_rate", g.sample_rate);
  r.field("fir_taps", g.fir_taps);
  r.field("fir_cutoff", g.fir_cutoff);
  r.field("fir_attenuation_db", g.fir_attenuation_db);
  r.finish();
}

inline json generator_to_json(const gen::GeneratorConfig& g) {
  return {{"n_blocks", g.n_blocks},
          {"audio_channels", g.audio_channels},
          {"audio_kernel", g.audio_kernel},
          {"convs_per_fxblock", g.convs_per_fxblock},
          {"dilation_base", g.dilation_base},
          {"mod_channels", g.mod_channels},
          {"mod_kernel", g.mod_kernel},
          {"mod_pooling", g.mod_pooling},
          {"lstm_hidden", g.lstm_hidden},
          {"film_enabled", g.film_enabled},
          {"control_dim", g.control_dim},
          {"latent_dim", g.latent_dim},
          {"sample_rate", g.sample_rate},
          {"fir_taps", g.fir_taps},
          {"fir_cutoff", g.fir_cutoff},
          {"fir_attenuation_db", g.fir_attenuation_db}};
}

inline void read_discriminator(const json& j, disc::DiscriminatorConfig& d,
                               const std::string& path) {
  detail::StrictReader r(j, path);
  r.field("n_featblocks", d.n_featblocks);
  r.field("channels", d.channels);
  r.field("kernel_sizes", d.kernel_sizes);
  r.field("pooling", d.pooling);
  r.field("head_hidden", d.head_hidden);
  r.field("head_layers", d.head_layers);
  r.field("film_enabled", d.film_enabled);
  r.field("control_dim", d.control_dim);
  r.finish();
}

inline json discriminator_to_json(const disc::DiscriminatorConfig& d) {
  return {{"n_featblocks", d.n_featblocks},
          {"channels", d.channels},
          {"kernel_sizes", d.kernel_sizes},
          {"pooling", d.pooling},
          {"head_hidden", d.head_hidden},
          {"head_layers", d.head_layers},
          {"film_enabled", d.film_enabled},
          {"control_dim", d.control_dim}};
}

inline void read_spn(const json& j, disc::StatePredictorConfig& s,
                     const std::string& path) {
  detail::StrictReader r(j, path);
  r.field("hidden", s.hidden);
  r.field("layers", s.layers);
  r.finish();
}

inline json spn_to_json(const disc::StatePredictorConfig& s) {
  return {{"hidden", s.hidden}, {"layers", s.layers}};
}

inline void read_train(const json& j, train::TrainConfig& t,
                       const std::string& path) {
  detail::StrictReader r(j, path);
  r.field("window_size", t.window_size);
  r.field("hop", t.hop);
  r.field("batch_size", t.batch_size);
  r.field("g_lr", t.g_lr);
  r.field("d_lr", t.d_lr);
  r.field("adam_beta1", t.adam_beta1);
  r.field("adam_beta2", t.adam_beta2);
  r.field("adam_eps", t.adam_eps);
  r.field("lambda_adv", t.lambda_adv);
  r.field("lambda_spectral", t.lambda_spectral);
  r.field("ms_enabled", t.ms_enabled);
  r.field("ms_weight", t.ms_weight);
  r.field("ms_epsilon", t.ms_epsilon);
  r.field("stft_windows", t.stft_windows);
  r.field("band_limit_hz", t.band_limit_hz);
  r.field("eval_interval_epochs", t.eval_interval_epochs);
  r.field("phase1_max_iters", t.phase1_max_iters);
  r.field("spn_pretrain_iters", t.spn_pretrain_iters);
  r.field("finetune_max_iters", t.finetune_max_iters);
  r.field("state_init", t.state_init);
  r.field("seed", t.seed);
  r.finish();
}

inline json train_to_json(const train::TrainConfig& t) {
  return {{"window_size", t.window_size},
          {"hop", t.hop},
          {"batch_size", t.batch_size},
          {"g_lr", t.g_lr},
          {"d_lr", t.d_lr},
          {"adam_beta1", t.adam_beta1},
          {"adam_beta2", t.adam_beta2},
          {"adam_eps", t.adam_eps},
          {"lambda_adv", t.lambda_adv},
          {"lambda_spectral", t.lambda_spectral},
          {"ms_enabled", t.ms_enabled},
          {"ms_weight", t.ms_weight},
          {"ms_epsilon", t.ms_epsilon},
          {"stft_windows", t.stft_windows},
          {"band_limit_hz", t.band_limit_hz},
          {"eval_interval_epochs", t.eval_interval_epochs},
          {"phase1_max_iters", t.phase1_max_iters},
          {"spn_pretrain_iters", t.spn_pretrain_iters},
          {"finetune_max_iters", t.finetune_max_iters},
          {"state_init", t.state_init},
          {"seed", t.seed}};
}

// --- experiment aggregate ---------------------------------------------------

struct ExperimentConfig {
  std::string profile = "desk-scale";
  std::string preset = "fast-lfo";  // slow-lfo | fast-lfo | custom
  std::string out_dir = "out";
  phaser::PhaserParams phaser;
  data::DatasetSpec dataset;
  gen::GeneratorConfig generator;
  disc::DiscriminatorConfig discriminator;
  disc::StatePredictorConfig spn;
  train::TrainConfig train;

  void validate() const {
    check_config(profile == "desk-scale" || profile == "paper-scale",
                 "config: profile must be desk-scale|paper-scale");
    check_config(preset == "slow-lfo" || preset == "fast-lfo" ||
                     preset == "custom",
                 "config: preset must be slow-lfo|fast-lfo|custom");
    check_config(!out_dir.empty(), "config: out_dir must not be empty");
    generator.validate();
    discriminator.validate();
    train.validate();
    check_config(generator.sample_rate == dataset.sample_rate,
                 "config: generator and dataset sample rates disagree");
    check_config(train.band_limit_hz <= dataset.sample_rate / 2.0,
                 "config: spectral band limit above Nyquist");
    // The critic must survive the training window without starving.
    static_cast<void>(discriminator.feature_lengths(
        static_cast<std::size_t>(train.window_size)));
    for (int w : train.stft_windows) {
      check_config(w <= train.window_size,
                   "config: spectral resolution exceeds the training window");
    }
  }
};

// Baseline values for the two scales. "paper-scale" matches the published
// sizes; "desk-scale" is the reduced profile that keeps every code path but
// fits a single CPU core.
inline void apply_profile(ExperimentConfig& c, const std::string& profile) {
  if (profile == "paper-scale") {
    c.dataset = data::paper_scale_spec();
    c.generator = gen::GeneratorConfig{};  // defaults are the published sizes
    c.discriminator = disc::DiscriminatorConfig{};
    c.train = train::TrainConfig{};
    c.train.phase1_max_iters = 400000;
    c.train.finetune_max_iters = 100000;
  } else if (profile == "desk-scale") {
    c.dataset = data::DatasetSpec{};  // defaults are the desk sizes
    gen::GeneratorConfig g;
    g.n_blocks = 2;
    g.audio_channels = 8;
    g.audio_kernel = 8;
    g.convs_per_fxblock = 3;
    g.dilation_base = 4;
    g.mod_channels = 8;
    g.mod_kernel = 8;
    g.mod_pooling = 32;
    g.lstm_hidden = 16;
    g.sample_rate = 16000;
    g.fir_taps = 257;
    g.fir_cutoff = 7200.0;
    c.generator = g;
    disc::DiscriminatorConfig d;
    d.n_featblocks = 5;
    d.channels = 16;
    d.kernel_sizes = {8, 8, 8, 12, 16};
    c.discriminator = d;
    train::TrainConfig t;
    t.window_size = 8192;
    t.hop = 1024;
    t.band_limit_hz = 7200.0;
    t.eval_interval_epochs = 2;
    t.phase1_max_iters = 2000;
    t.spn_pretrain_iters = 1500;
    t.finetune_max_iters = 1000;
    c.train = t;
  } else {
    throw ConfigError("config: unknown profile " + profile);
  }
  c.profile = profile;
}

inline json experiment_to_json(const ExperimentConfig& c) {
  return {{"profile", c.profile},
          {"preset", c.preset},
          {"out_dir", c.out_dir},
          {"phaser", phaser_to_json(c.phaser)},
          {"dataset", dataset_to_json(c.dataset)},
          {"generator", generator_to_json(c.generator)},
          {"discriminator", discriminator_to_json(c.discriminator)},
          {"spn", spn_to_json(c.spn)},
          {"train", train_to_json(c.train)}};
}

inline ExperimentConfig experiment_from_json(const json& j) {
  check_config(j.is_object(), "config: document root must be an object");
  ExperimentConfig c;
  // Layering: profile defaults, then the effect preset, then the document.
  std::string profile = c.profile;
  if (j.contains("profile")) {
    check_config(j.at("profile").is_string(), "config: profile must be a string");
    profile = j.at("profile").get<std::string>();
  }
  apply_profile(c, profile);
  if (j.contains("preset")) {
    check_config(j.at("preset").is_string(), "config: preset must be a string");
    c.preset = j.at("preset").get<std::string>();
  }
  if (c.preset != "custom") c.phaser = phaser::preset_by_name(c.preset);

  detail::StrictReader r(j, "root");
  r.field("profile", c.profile);
  r.field("preset", c.preset);
  r.field("out_dir", c.out_dir);
  read_phaser(r.sub("phaser"), c.phaser, "phaser");
  read_dataset(r.sub("dataset"), c.dataset, "dataset");
  read_generator(r.sub("generator"), c.generator, "generator");
  read_discriminator(r.sub("discriminator"), c.discriminator, "discriminator");
  read_spn(r.sub("spn"), c.spn, "spn");
  read_train(r.sub("train"), c.train, "train");
  r.finish();
  c.validate();
  return c;
}

// --- dotted-path overrides --------------------------------------------------

// "train.batch_size=8" -> {"train": {"batch_size": 8}}. Values parse as
// JSON when possible (numbers, bools, arrays) and fall back to strings.
inline json override_to_tree(const std::string& spec) {
  const auto eq = spec.find('=');
  check_config(eq != std::string::npos && eq > 0,
               "config: override must look like key.path=value: " + spec);
  const std::string path = spec.substr(0, eq);
  const std::string value_text = spec.substr(eq + 1);
  json value;
  try {
    value = json::parse(value_text);
  } catch (const json::exception&) {
    value = value_text;  // unquoted strings like fast-lfo
  }
  std::vector<std::string> parts;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const std::string part = path.substr(
        start, dot == std::string::npos ? std::string::npos : dot - start);
    check_config(!part.empty(), "config: empty path segment in " + spec);
    parts.push_back(part);
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  json tree = value;
  for (auto it = parts.rbegin(); it != parts.rend(); ++it) {
    tree = json{{*it, std::move(tree)}};
  }
  return tree;
}

inline void deep_merge(json& base, const json& overlay) {
  if (!overlay.is_object() || !base.is_object()) {
    base = overlay;
    return;
  }
  for (const auto& item : overlay.items()) {
    if (base.contains(item.key())) {
      deep_merge(base[item.key()], item.value());
    } else {
      base[item.key()] = item.value();
    }
  }
}

// Document + overrides -> validated config.
inline ExperimentConfig load_experiment(
    const json& document, const std::vector<std::string>& overrides = {}) {
  json merged = document.is_null() ? json::object() : document;
  for (const auto& o : overrides) deep_merge(merged, override_to_tree(o));
  return experiment_from_json(merged);
}

inline ExperimentConfig load_experiment_file(
    const std::filesystem::path& path,
    const std::vector<std::string>& overrides = {}) {
  std::ifstream in(path);
  if (!in.good()) {
    throw MissingArtifactError("config: cannot open " + path.string());
  }
  json document;
  try {
    in >> document;
  } catch (const json::exception& e) {
    throw ConfigError("config: invalid JSON in " + path.string() + ": " +
                      e.what());
  }
  return load_experiment(document, overrides);
}

}  // namespace tvfx::cfg

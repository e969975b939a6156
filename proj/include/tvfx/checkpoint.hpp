// Copyright 2026 the tvfx authors
// SPDX-License-Identifier: Apache-2.0
//
// Checkpoint container: name-addressed parameter tensors for the generator,
// critic, and state predictor, both optimizer states, the balancer's EMA
// table, counters, RNG state, a config snapshot, and the validation metric
// history. Serialized as schema-versioned MessagePack with raw
// little-endian tensor payloads; save -> load -> save is byte-stable.

#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "tvfx/common.hpp"
#include "tvfx/nn.hpp"
#include "tvfx/optim.hpp"

namespace tvfx::ckpt {

using Mat = nn::Mat<double>;
using ParamMap = std::map<std::string, Mat>;

inline constexpr int kSchemaVersion = 1;
inline constexpr const char* kMagic = "tvfx-checkpoint";

struct Checkpoint {
  std::string phase;  // "adversarial" | "spn-pretrain" | "finetune"
  std::int64_t iteration = 0;
  std::int64_t epoch = 0;
  ParamMap generator;
  ParamMap discriminator;
  ParamMap spn;  // empty until the state predictor exists
  bool has_spn = false;
  opt::AdamState g_opt;
  opt::AdamState d_opt;
  std::map<std::string, double> balancer;
  std::uint64_t rng_state = 0;
  bool rng_has_spare = false;
  double rng_spare = 0.0;
  nlohmann::json configs;  // generator/discriminator/spn/train snapshot
  nlohmann::json history = nlohmann::json::array();  // validation records
};

// --- parameter capture / restore -------------------------------------------

// Copies every (name, value) pair a model's visit exposes.
template <typename Model>
ParamMap capture_params(Model& model) {
  ParamMap out;
  model.visit([&](const std::string& name, Mat& value, Mat&) {
    auto [it, fresh] = out.try_emplace(name, value);
    check(fresh, "capture_params: duplicate parameter name " + name);
    static_cast<void>(it);
  });
  return out;
}

// Writes stored tensors back into the model; the name sets must match
// exactly and every shape must agree.
template <typename Model>
void restore_params(Model& model, const ParamMap& params) {
  std::size_t seen = 0;
  model.visit([&](const std::string& name, Mat& value, Mat&) {
    auto it = params.find(name);
    check(it != params.end(), "restore_params: missing tensor " + name);
    check(it->second.rows() == value.rows() && it->second.cols() == value.cols(),
          "restore_params: shape mismatch for " + name);
    value = it->second;
    ++seen;
  });
  check(seen == params.size(),
        "restore_params: checkpoint holds tensors the model does not");
}

// FNV-1a over names and raw tensor bytes; used to assert freeze contracts.
inline std::uint64_t param_hash(const ParamMap& params) {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= p[i];
      h *= 1099511628211ULL;
    }
  };
  for (const auto& [name, m] : params) {
    mix(name.data(), name.size());
    mix(m.data(), sizeof(double) * static_cast<std::size_t>(m.size()));
  }
  return h;
}

// --- serialization ----------------------------------------------------------

namespace detail {

inline nlohmann::json mat_to_json(const Mat& m) {
  std::vector<std::uint8_t> bytes(sizeof(double) *
                                  static_cast<std::size_t>(m.size()));
  if (!bytes.empty()) std::memcpy(bytes.data(), m.data(), bytes.size());
  return {{"rows", m.rows()},
          {"cols", m.cols()},
          {"data", nlohmann::json::binary(std::move(bytes))}};
}

inline Mat mat_from_json(const nlohmann::json& j) {
  const auto rows = j.at("rows").get<Eigen::Index>();
  const auto cols = j.at("cols").get<Eigen::Index>();
  check(rows >= 0 && cols >= 0, "checkpoint: negative tensor shape");
  const auto& bytes = j.at("data").get_binary();
  Mat m(rows, cols);
  check(bytes.size() == sizeof(double) * static_cast<std::size_t>(m.size()),
        "checkpoint: tensor payload size mismatch");
  if (!bytes.empty()) std::memcpy(m.data(), bytes.data(), bytes.size());
  return m;
}

inline nlohmann::json params_to_json(const ParamMap& params) {
  nlohmann::json out = nlohmann::json::object();
  for (const auto& [name, m] : params) out[name] = mat_to_json(m);
  return out;
}

inline ParamMap params_from_json(const nlohmann::json& j) {
  ParamMap out;
  for (auto it = j.begin(); it != j.end(); ++it) {
    out.emplace(it.key(), mat_from_json(it.value()));
  }
  return out;
}

inline nlohmann::json adam_to_json(const opt::AdamState& st) {
  nlohmann::json moments = nlohmann::json::object();
  for (const auto& [name, mv] : st.moments) {
    moments[name] = {{"m", mat_to_json(mv.first)}, {"v", mat_to_json(mv.second)}};
  }
  return {{"step_count", st.step_count}, {"moments", std::move(moments)}};
}

inline opt::AdamState adam_from_json(const nlohmann::json& j) {
  opt::AdamState st;
  st.step_count = j.at("step_count").get<std::int64_t>();
  const auto& moments = j.at("moments");
  for (auto it = moments.begin(); it != moments.end(); ++it) {
    st.moments.emplace(it.key(),
                       std::make_pair(mat_from_json(it.value().at("m")),
                                      mat_from_json(it.value().at("v"))));
  }
  return st;
}

}  // namespace detail

inline void save_checkpoint(const std::filesystem::path& path,
                            const Checkpoint& ck) {
  nlohmann::json j;
  j["magic"] = kMagic;
  j["schema_version"] = kSchemaVersion;
  j["phase"] = ck.phase;
  j["iteration"] = ck.iteration;
  j["epoch"] = ck.epoch;
  j["generator"] = detail::params_to_json(ck.generator);
  j["discriminator"] = detail::params_to_json(ck.discriminator);
  j["spn"] = detail::params_to_json(ck.spn);
  j["has_spn"] = ck.has_spn;
  j["g_opt"] = detail::adam_to_json(ck.g_opt);
  j["d_opt"] = detail::adam_to_json(ck.d_opt);
  j["balancer"] = ck.balancer;
  j["rng"] = {{"state", ck.rng_state},
              {"has_spare", ck.rng_has_spare},
              {"spare", ck.rng_spare}};
  j["configs"] = ck.configs;
  j["history"] = ck.history;

  const std::vector<std::uint8_t> packed = nlohmann::json::to_msgpack(j);
  std::ofstream out(path, std::ios::binary);
  check(out.good(), "save_checkpoint: cannot open " + path.string());
  out.write(reinterpret_cast<const char*>(packed.data()),
            static_cast<std::streamsize>(packed.size()));
  check(out.good(), "save_checkpoint: write failed for " + path.string());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in.good()) {
    throw MissingArtifactError("load_checkpoint: cannot open " + path.string());
  }
  std::vector<std::uint8_t> packed((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  nlohmann::json j;
  try {
    j = nlohmann::json::from_msgpack(packed);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("load_checkpoint: not a checkpoint file (" +
                    std::string(e.what()) + ")");
  }
  check_data(j.value("magic", std::string()) == kMagic,
             "load_checkpoint: bad magic");
  check_data(j.value("schema_version", 0) == kSchemaVersion,
             "load_checkpoint: unsupported schema version");

  Checkpoint ck;
  ck.phase = j.at("phase").get<std::string>();
  ck.iteration = j.at("iteration").get<std::int64_t>();
  ck.epoch = j.at("epoch").get<std::int64_t>();
  ck.generator = detail::params_from_json(j.at("generator"));
  ck.discriminator = detail::params_from_json(j.at("discriminator"));
  ck.spn = detail::params_from_json(j.at("spn"));
  ck.has_spn = j.at("has_spn").get<bool>();
  ck.g_opt = detail::adam_from_json(j.at("g_opt"));
  ck.d_opt = detail::adam_from_json(j.at("d_opt"));
  ck.balancer = j.at("balancer").get<std::map<std::string, double>>();
  ck.rng_state = j.at("rng").at("state").get<std::uint64_t>();
  ck.rng_has_spare = j.at("rng").at("has_spare").get<bool>();
  ck.rng_spare = j.at("rng").at("spare").get<double>();
  ck.configs = j.at("configs");
  ck.history = j.at("history");
  return ck;
}

}  // namespace tvfx::ckpt

// Copyright 2026 the tvfx authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace tvfx {

// Error taxonomy. The CLI maps these onto exit codes:
// ConfigError -> 2, DivergenceError -> 3, MissingArtifactError -> 4,
// anything else derived from Error -> 1.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ConfigError : Error {
  using Error::Error;
};
struct DivergenceError : Error {
  using Error::Error;
};
struct MissingArtifactError : Error {
  using Error::Error;
};
struct DataError : Error {
  using Error::Error;
};

inline void check(bool cond, const std::string& msg) {
  if (!cond) throw Error(msg);
}
inline void check_config(bool cond, const std::string& msg) {
  if (!cond) throw ConfigError(msg);
}
inline void check_data(bool cond, const std::string& msg) {
  if (!cond) throw DataError(msg);
}

// Mono waveform at full scale +-1.0. DSP runs in double precision; buffers are
// cast to single precision only at the model boundary.
struct AudioBuffer {
  std::vector<double> samples;
  int sample_rate = 0;

  AudioBuffer() = default;
  AudioBuffer(std::vector<double> s, int sr) : samples(std::move(s)), sample_rate(sr) {}

  std::size_t size() const { return samples.size(); }
  double duration() const { return static_cast<double>(samples.size()) / sample_rate; }
};

inline double db_to_lin(double db) { return std::pow(10.0, db / 20.0); }
inline double lin_to_db(double lin) { return 20.0 * std::log10(lin); }

inline double rms(const std::vector<double>& v) {
  double acc = 0.0;
  for (double s : v) acc += s * s;
  return v.empty() ? 0.0 : std::sqrt(acc / v.size());
}

constexpr double kPi = 3.14159265358979323846;
constexpr double kTwoPi = 2.0 * kPi;

}  // namespace tvfx

// Copyright 2026 the tvfx authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "tvfx/common.hpp"

namespace tvfx::io {

// Mono RIFF/WAVE read and write: 16/24-bit PCM and 32-bit IEEE float.
// Float32 files round-trip bit-exactly. Little-endian hosts only (asserted
// implicitly by the raw-byte layout below; every target we build on is LE).

enum class WavFormat { Pcm16, Pcm24, Float32 };

namespace detail {

inline void put_u32(std::vector<std::uint8_t>& b, std::uint32_t v) {
  b.push_back(v & 0xFF);
  b.push_back((v >> 8) & 0xFF);
  b.push_back((v >> 16) & 0xFF);
  b.push_back((v >> 24) & 0xFF);
}
inline void put_u16(std::vector<std::uint8_t>& b, std::uint16_t v) {
  b.push_back(v & 0xFF);
  b.push_back((v >> 8) & 0xFF);
}
inline void put_tag(std::vector<std::uint8_t>& b, const char* tag) {
  b.insert(b.end(), tag, tag + 4);
}
inline std::uint32_t get_u32(const std::uint8_t* p) {
  return p[0] | (p[1] << 8) | (p[2] << 16) | (std::uint32_t(p[3]) << 24);
}
inline std::uint16_t get_u16(const std::uint8_t* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

}  // namespace detail

inline void write_wav(const std::filesystem::path& path, const AudioBuffer& audio,
                      WavFormat format = WavFormat::Float32) {
  using namespace detail;
  check(audio.sample_rate > 0, "write_wav: sample rate must be positive");

  const std::uint16_t fmt_code = format == WavFormat::Float32 ? 3 : 1;
  const std::uint16_t bits = format == WavFormat::Pcm16 ? 16 : format == WavFormat::Pcm24 ? 24 : 32;
  const std::uint16_t block = bits / 8;
  const std::uint32_t n = static_cast<std::uint32_t>(audio.size());
  const std::uint32_t data_bytes = n * block;

  std::vector<std::uint8_t> out;
  out.reserve(64 + data_bytes);
  put_tag(out, "RIFF");
  // fmt(18) + fact(4) + data chunks, plus "WAVE" and chunk headers.
  put_u32(out, 4 + (8 + 18) + (8 + 4) + (8 + data_bytes));
  put_tag(out, "WAVE");

  put_tag(out, "fmt ");
  put_u32(out, 18);
  put_u16(out, fmt_code);
  put_u16(out, 1);  // mono
  put_u32(out, static_cast<std::uint32_t>(audio.sample_rate));
  put_u32(out, static_cast<std::uint32_t>(audio.sample_rate) * block);
  put_u16(out, block);
  put_u16(out, bits);
  put_u16(out, 0);  // cbSize

  put_tag(out, "fact");
  put_u32(out, 4);
  put_u32(out, n);

  put_tag(out, "data");
  put_u32(out, data_bytes);
  for (double s : audio.samples) {
    switch (format) {
      case WavFormat::Float32: {
        float f = static_cast<float>(s);
        std::uint32_t u;
        std::memcpy(&u, &f, 4);
        put_u32(out, u);
        break;
      }
      case WavFormat::Pcm16: {
        double c = s < -1.0 ? -1.0 : s > 1.0 ? 1.0 : s;
        auto q = static_cast<std::int32_t>(std::lrint(c * 32767.0));
        put_u16(out, static_cast<std::uint16_t>(q & 0xFFFF));
        break;
      }
      case WavFormat::Pcm24: {
        double c = s < -1.0 ? -1.0 : s > 1.0 ? 1.0 : s;
        auto q = static_cast<std::int32_t>(std::lrint(c * 8388607.0));
        out.push_back(q & 0xFF);
        out.push_back((q >> 8) & 0xFF);
        out.push_back((q >> 16) & 0xFF);
        break;
      }
    }
  }

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  check(f.good(), "write_wav: cannot open " + path.string());
  f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
  check(f.good(), "write_wav: short write to " + path.string());
}

inline AudioBuffer read_wav(const std::filesystem::path& path) {
  using namespace detail;
  std::ifstream f(path, std::ios::binary);
  if (!f.good()) throw MissingArtifactError("read_wav: cannot open " + path.string());
  std::vector<std::uint8_t> raw((std::istreambuf_iterator<char>(f)),
                                std::istreambuf_iterator<char>());
  check_data(raw.size() >= 12 && !std::memcmp(raw.data(), "RIFF", 4) &&
                 !std::memcmp(raw.data() + 8, "WAVE", 4),
             "read_wav: not a RIFF/WAVE file: " + path.string());

  std::uint16_t fmt_code = 0, channels = 0, bits = 0;
  std::uint32_t sample_rate = 0;
  const std::uint8_t* data = nullptr;
  std::uint32_t data_len = 0;

  std::size_t pos = 12;
  while (pos + 8 <= raw.size()) {
    const std::uint8_t* hdr = raw.data() + pos;
    std::uint32_t len = get_u32(hdr + 4);
    const std::uint8_t* body = hdr + 8;
    check_data(pos + 8 + len <= raw.size(), "read_wav: truncated chunk in " + path.string());
    if (!std::memcmp(hdr, "fmt ", 4)) {
      check_data(len >= 16, "read_wav: short fmt chunk");
      fmt_code = get_u16(body);
      channels = get_u16(body + 2);
      sample_rate = get_u32(body + 4);
      bits = get_u16(body + 14);
    } else if (!std::memcmp(hdr, "data", 4)) {
      data = body;
      data_len = len;
    }
    pos += 8 + len + (len & 1);  // chunks are word-aligned
  }

  check_data(fmt_code == 1 || fmt_code == 3, "read_wav: unsupported format code");
  check_data(channels == 1, "read_wav: only mono files are supported");
  check_data(data != nullptr, "read_wav: missing data chunk");

  AudioBuffer audio;
  audio.sample_rate = static_cast<int>(sample_rate);
  if (fmt_code == 3) {
    check_data(bits == 32, "read_wav: float WAV must be 32-bit");
    std::size_t n = data_len / 4;
    audio.samples.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      float v;
      std::memcpy(&v, data + 4 * i, 4);
      audio.samples[i] = v;
    }
  } else if (bits == 16) {
    std::size_t n = data_len / 2;
    audio.samples.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      auto v = static_cast<std::int16_t>(get_u16(data + 2 * i));
      audio.samples[i] = v / 32767.0;
    }
  } else if (bits == 24) {
    std::size_t n = data_len / 3;
    audio.samples.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      std::int32_t v = data[3 * i] | (data[3 * i + 1] << 8) | (data[3 * i + 2] << 16);
      if (v & 0x800000) v |= ~0xFFFFFF;  // sign-extend
      audio.samples[i] = v / 8388607.0;
    }
  } else {
    throw DataError("read_wav: unsupported PCM bit depth");
  }
  return audio;
}

}  // namespace tvfx::io

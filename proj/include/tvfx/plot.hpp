// Copyright 2026 the tvfx authors
// SPDX-License-Identifier: Apache-2.0
//
// Deterministic plot rendering to PNG: spectrogram heatmaps on a
// log-frequency display axis, generic matrix heatmaps (frequency-frequency
// maps), and polyline charts (modulation spectra, loss curves). The encoder
// writes 8-bit RGB PNGs through zlib; identical inputs produce identical
// bytes, so rendered plots are safe to diff in tests.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <zlib.h>

#include <Eigen/Dense>

#include "tvfx/common.hpp"
#include "tvfx/dsp.hpp"

namespace tvfx::plot {

using Rgb = std::array<unsigned char, 3>;

// ---------------------------------------------------------------------------
// Image buffer and PNG encoding.
// ---------------------------------------------------------------------------

struct Image {
  int width = 0;
  int height = 0;
  std::vector<unsigned char> rgb;  // row-major, top row first

  static Image filled(int w, int h, Rgb color) {
    check(w > 0 && h > 0, "image: dimensions must be positive");
    Image img;
    img.width = w;
    img.height = h;
    img.rgb.resize(static_cast<std::size_t>(w) * h * 3);
    for (std::size_t i = 0; i < img.rgb.size(); i += 3) {
      img.rgb[i] = color[0];
      img.rgb[i + 1] = color[1];
      img.rgb[i + 2] = color[2];
    }
    return img;
  }

  void set(int x, int y, Rgb color) {
    if (x < 0 || y < 0 || x >= width || y >= height) return;
    const std::size_t at =
        (static_cast<std::size_t>(y) * width + static_cast<std::size_t>(x)) * 3;
    rgb[at] = color[0];
    rgb[at + 1] = color[1];
    rgb[at + 2] = color[2];
  }

  // Copies `src` into this image with its top-left corner at (x0, y0).
  void blit(const Image& src, int x0, int y0) {
    for (int y = 0; y < src.height; ++y) {
      for (int x = 0; x < src.width; ++x) {
        const std::size_t at =
            (static_cast<std::size_t>(y) * src.width + x) * 3;
        set(x0 + x, y0 + y, {src.rgb[at], src.rgb[at + 1], src.rgb[at + 2]});
      }
    }
  }
};

namespace detail {

inline void put_be32(std::vector<unsigned char>& out, std::uint32_t v) {
  out.push_back(static_cast<unsigned char>((v >> 24) & 0xFF));
  out.push_back(static_cast<unsigned char>((v >> 16) & 0xFF));
  out.push_back(static_cast<unsigned char>((v >> 8) & 0xFF));
  out.push_back(static_cast<unsigned char>(v & 0xFF));
}

inline void put_chunk(std::vector<unsigned char>& out, const char type[4],
                      const std::vector<unsigned char>& data) {
  put_be32(out, static_cast<std::uint32_t>(data.size()));
  const std::size_t type_at = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), data.begin(), data.end());
  const auto crc = ::crc32(
      0L, out.data() + type_at, static_cast<uInt>(4 + data.size()));
  put_be32(out, static_cast<std::uint32_t>(crc));
}

}  // namespace detail

inline void write_png(const std::filesystem::path& path, const Image& img) {
  check(img.width > 0 && img.height > 0 &&
            img.rgb.size() ==
                static_cast<std::size_t>(img.width) * img.height * 3,
        "write_png: inconsistent image buffer");

  // One filter byte (0 = none) in front of every scanline.
  std::vector<unsigned char> raw;
  raw.reserve(static_cast<std::size_t>(img.height) * (1 + img.width * 3));
  for (int y = 0; y < img.height; ++y) {
    raw.push_back(0);
    const std::size_t row = static_cast<std::size_t>(y) * img.width * 3;
    raw.insert(raw.end(), img.rgb.begin() + static_cast<std::ptrdiff_t>(row),
               img.rgb.begin() + static_cast<std::ptrdiff_t>(row) +
                   static_cast<std::ptrdiff_t>(img.width) * 3);
  }
  uLongf bound = ::compressBound(static_cast<uLong>(raw.size()));
  std::vector<unsigned char> compressed(bound);
  check(::compress2(compressed.data(), &bound, raw.data(),
                    static_cast<uLong>(raw.size()), 9) == Z_OK,
        "write_png: deflate failed");
  compressed.resize(bound);

  std::vector<unsigned char> file = {0x89, 'P',  'N',  'G',
                                     0x0D, 0x0A, 0x1A, 0x0A};
  std::vector<unsigned char> ihdr;
  detail::put_be32(ihdr, static_cast<std::uint32_t>(img.width));
  detail::put_be32(ihdr, static_cast<std::uint32_t>(img.height));
  ihdr.push_back(8);  // bit depth
  ihdr.push_back(2);  // color type: truecolor
  ihdr.push_back(0);  // compression
  ihdr.push_back(0);  // filter
  ihdr.push_back(0);  // interlace
  detail::put_chunk(file, "IHDR", ihdr);
  detail::put_chunk(file, "IDAT", compressed);
  detail::put_chunk(file, "IEND", {});

  std::ofstream out(path, std::ios::binary);
  check(out.good(), "write_png: cannot open " + path.string());
  out.write(reinterpret_cast<const char*>(file.data()),
            static_cast<std::streamsize>(file.size()));
  check(out.good(), "write_png: short write to " + path.string());
}

// ---------------------------------------------------------------------------
// Color mapping.
// ---------------------------------------------------------------------------

// Perceptually ordered dark-to-bright map (viridis anchor points, linearly
// interpolated). t is clamped to [0, 1].
inline Rgb colormap(double t) {
  static constexpr std::array<std::array<double, 3>, 9> anchors = {{
      {68, 1, 84},
      {71, 44, 122},
      {59, 81, 139},
      {44, 113, 142},
      {33, 144, 141},
      {39, 173, 129},
      {92, 200, 99},
      {170, 220, 50},
      {253, 231, 37},
  }};
  t = std::clamp(t, 0.0, 1.0);
  const double pos = t * (anchors.size() - 1);
  const auto lo = static_cast<std::size_t>(pos);
  const std::size_t hi = std::min(lo + 1, anchors.size() - 1);
  const double f = pos - static_cast<double>(lo);
  Rgb c;
  for (int i = 0; i < 3; ++i) {
    c[static_cast<std::size_t>(i)] = static_cast<unsigned char>(std::lround(
        anchors[lo][static_cast<std::size_t>(i)] * (1.0 - f) +
        anchors[hi][static_cast<std::size_t>(i)] * f));
  }
  return c;
}

// ---------------------------------------------------------------------------
// Heatmaps.
// ---------------------------------------------------------------------------

// Renders a matrix with row 0 at the BOTTOM (frequency axes grow upward).
// Values map linearly from [lo, hi] onto the colormap; cells are sampled
// nearest-neighbor onto the pixel grid.
inline Image heatmap(const Eigen::MatrixXd& m, int width, int height,
                     double lo, double hi) {
  check(m.rows() > 0 && m.cols() > 0, "heatmap: empty matrix");
  check(hi > lo, "heatmap: empty value range");
  Image img = Image::filled(width, height, {255, 255, 255});
  for (int y = 0; y < height; ++y) {
    // Pixel row 0 is the top of the image = last matrix row.
    const auto r = static_cast<Eigen::Index>(
        (static_cast<double>(height - 1 - y) + 0.5) / height *
        static_cast<double>(m.rows()));
    for (int x = 0; x < width; ++x) {
      const auto c = static_cast<Eigen::Index>(
          (static_cast<double>(x) + 0.5) / width * static_cast<double>(m.cols()));
      const double v =
          (m(std::min(r, m.rows() - 1), std::min(c, m.cols() - 1)) - lo) /
          (hi - lo);
      img.set(x, y, colormap(v));
    }
  }
  return img;
}

// Magnitude matrix in decibels relative to its own peak, floored at
// -db_range. Zero-only input maps to the floor everywhere.
inline Eigen::MatrixXd to_db(const Eigen::MatrixXd& mag, double db_range) {
  check(db_range > 0.0, "to_db: range must be positive");
  const double peak = mag.maxCoeff();
  Eigen::MatrixXd out(mag.rows(), mag.cols());
  const double floor_db = -db_range;
  for (Eigen::Index r = 0; r < mag.rows(); ++r) {
    for (Eigen::Index c = 0; c < mag.cols(); ++c) {
      const double v = mag(r, c);
      out(r, c) = (peak <= 0.0 || v <= 0.0)
                      ? floor_db
                      : std::max(floor_db, 20.0 * std::log10(v / peak));
    }
  }
  return out;
}

struct SpectrogramOptions {
  std::size_t window = 1024;
  std::size_t hop = 256;
  double f_lo_hz = 40.0;      // log-frequency display range
  double f_hi_hz = 17000.0;   // clamped to Nyquist
  double db_range = 80.0;
  int width = 640;
  int height = 360;
};

// STFT magnitude resampled onto a logarithmic frequency axis and rendered
// as a heatmap. The display range follows the options, clamped to the
// signal's Nyquist; rows outside the STFT grid take the nearest bin.
inline Image spectrogram(const AudioBuffer& y, const SpectrogramOptions& opt) {
  check(opt.f_lo_hz > 0.0 && opt.f_hi_hz > opt.f_lo_hz,
        "spectrogram: bad display range");
  const Eigen::MatrixXd mag =
      dsp::stft_mag(y, opt.window, opt.hop, dsp::Window::Hann);
  const Eigen::MatrixXd db = to_db(mag, opt.db_range);
  const double f_hi = std::min(opt.f_hi_hz, y.sample_rate / 2.0);
  const double ratio = f_hi / opt.f_lo_hz;

  // Resample bins (linear Hz) onto the display grid (log Hz), bottom-up.
  Eigen::MatrixXd display(opt.height, db.cols());
  for (int r = 0; r < opt.height; ++r) {
    const double f =
        opt.f_lo_hz *
        std::pow(ratio, static_cast<double>(r) /
                            static_cast<double>(std::max(1, opt.height - 1)));
    const auto bin = static_cast<Eigen::Index>(std::llround(
        f / y.sample_rate * static_cast<double>(opt.window)));
    display.row(r) = db.row(std::clamp<Eigen::Index>(bin, 0, db.rows() - 1));
  }
  return heatmap(display, opt.width, opt.height, -opt.db_range, 0.0);
}

// Two panels stacked vertically with a divider; both share pixel size.
inline Image stack(const Image& top, const Image& bottom, int divider = 4) {
  check(top.width == bottom.width, "stack: width mismatch");
  Image out = Image::filled(top.width, top.height + divider + bottom.height,
                            {255, 255, 255});
  out.blit(top, 0, 0);
  out.blit(bottom, 0, top.height + divider);
  return out;
}

// ---------------------------------------------------------------------------
// Line charts.
// ---------------------------------------------------------------------------

struct Series {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
  Rgb color = {31, 119, 180};
};

struct ChartOptions {
  int width = 640;
  int height = 360;
  bool log_x = false;
  bool log_y = false;
  int margin = 24;
};

// Well-separated default series colors.
inline Rgb series_color(std::size_t index) {
  static constexpr std::array<Rgb, 6> palette = {{{31, 119, 180},
                                                  {255, 127, 14},
                                                  {44, 160, 44},
                                                  {214, 39, 40},
                                                  {148, 103, 189},
                                                  {140, 86, 75}}};
  return palette[index % palette.size()];
}

namespace detail {

inline void draw_line(Image& img, int x0, int y0, int x1, int y1, Rgb color) {
  const int dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
  const int sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
  int err = dx + dy;
  for (;;) {
    img.set(x0, y0, color);
    if (x0 == x1 && y0 == y1) break;
    const int e2 = 2 * err;
    if (e2 >= dy) {
      err += dy;
      x0 += sx;
    }
    if (e2 <= dx) {
      err += dx;
      y0 += sy;
    }
  }
}

}  // namespace detail

// Polyline chart with auto-scaled axes and a light grid. Log axes drop
// non-positive samples (they have no position on the axis).
inline Image line_chart(const std::vector<Series>& series,
                        const ChartOptions& opt = {}) {
  check(!series.empty(), "line_chart: no series");
  auto tx = [&](double v) { return opt.log_x ? std::log10(v) : v; };
  auto ty = [&](double v) { return opt.log_y ? std::log10(v) : v; };
  auto usable = [&](double x, double y) {
    return std::isfinite(x) && std::isfinite(y) && (!opt.log_x || x > 0.0) &&
           (!opt.log_y || y > 0.0);
  };

  double x_min = 0, x_max = 0, y_min = 0, y_max = 0;
  bool any = false;
  for (const auto& s : series) {
    check(s.x.size() == s.y.size(), "line_chart: ragged series " + s.name);
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!usable(s.x[i], s.y[i])) continue;
      const double xv = tx(s.x[i]), yv = ty(s.y[i]);
      if (!any) {
        x_min = x_max = xv;
        y_min = y_max = yv;
        any = true;
      } else {
        x_min = std::min(x_min, xv);
        x_max = std::max(x_max, xv);
        y_min = std::min(y_min, yv);
        y_max = std::max(y_max, yv);
      }
    }
  }
  check_data(any, "line_chart: no plottable points");
  if (x_max == x_min) x_max = x_min + 1.0;
  if (y_max == y_min) y_max = y_min + 1.0;

  Image img = Image::filled(opt.width, opt.height, {255, 255, 255});
  const int m = opt.margin;
  const int w = opt.width - 2 * m, h = opt.height - 2 * m;
  check(w > 1 && h > 1, "line_chart: margins leave no plot area");
  auto px = [&](double v) {
    return m + static_cast<int>(
                   std::lround((tx(v) - x_min) / (x_max - x_min) * (w - 1)));
  };
  auto py = [&](double v) {
    return opt.height - 1 - m -
           static_cast<int>(
               std::lround((ty(v) - y_min) / (y_max - y_min) * (h - 1)));
  };

  const Rgb grid = {225, 225, 225};
  const Rgb axis = {120, 120, 120};
  for (int g = 0; g <= 10; ++g) {
    const int gx = m + g * (w - 1) / 10;
    const int gy = m + g * (h - 1) / 10;
    detail::draw_line(img, gx, m, gx, opt.height - 1 - m, grid);
    detail::draw_line(img, m, gy, opt.width - 1 - m, gy, grid);
  }
  detail::draw_line(img, m, m, m, opt.height - 1 - m, axis);
  detail::draw_line(img, m, opt.height - 1 - m, opt.width - 1 - m,
                    opt.height - 1 - m, axis);

  for (const auto& s : series) {
    bool has_prev = false;
    int prev_x = 0, prev_y = 0;
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!usable(s.x[i], s.y[i])) {
        has_prev = false;  // break the polyline at gaps
        continue;
      }
      const int cx = px(s.x[i]), cy = py(s.y[i]);
      if (has_prev) detail::draw_line(img, prev_x, prev_y, cx, cy, s.color);
      prev_x = cx;
      prev_y = cy;
      has_prev = true;
    }
    // Lone points still get a visible mark.
    if (has_prev) {
      img.set(prev_x, prev_y, s.color);
    }
  }
  return img;
}

}  // namespace tvfx::plot

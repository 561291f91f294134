// Copyright 2026 The voximp Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// Minimal raster plots written as PNG. No text rendering; axes, grid
// lines and marks only. Output is deterministic for identical input.

#include <png.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <vector>

#include "voximp/ag/graph.hpp"
#include "voximp/error.hpp"

namespace voximp::plot {

using ag::Index;
using Rgb = std::array<std::uint8_t, 3>;

inline constexpr Rgb kWhite{255, 255, 255};
inline constexpr Rgb kBlack{0, 0, 0};
inline constexpr Rgb kGrey{200, 200, 200};
inline constexpr Rgb kBlue{31, 119, 180};
inline constexpr Rgb kOrange{255, 127, 14};
inline constexpr Rgb kRed{214, 39, 40};

class Canvas {
 public:
  Canvas(int width, int height, Rgb bg = kWhite)
      : w_(width), h_(height), px_(static_cast<std::size_t>(width) * height, bg) {}

  int width() const { return w_; }
  int height() const { return h_; }

  void set(int x, int y, Rgb c) {
    if (x >= 0 && y >= 0 && x < w_ && y < h_) px_[static_cast<std::size_t>(y) * w_ + x] = c;
  }
  Rgb get(int x, int y) const { return px_.at(static_cast<std::size_t>(y) * w_ + x); }

  void fill_rect(int x0, int y0, int x1, int y1, Rgb c) {
    if (x0 > x1) std::swap(x0, x1);
    if (y0 > y1) std::swap(y0, y1);
    for (int y = y0; y <= y1; ++y) {
      for (int x = x0; x <= x1; ++x) set(x, y, c);
    }
  }

  void line(int x0, int y0, int x1, int y1, Rgb c, int thickness = 1) {
    const int dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
    const int sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
    int err = dx + dy;
    const int r = thickness / 2;
    while (true) {
      fill_rect(x0 - r, y0 - r, x0 + r, y0 + r, c);
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

  void write_png(const std::filesystem::path& path) const {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    FILE* fp = std::fopen(path.string().c_str(), "wb");
    if (fp == nullptr) fail(ErrorCode::kIoError, "cannot open " + path.string());
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png != nullptr ? png_create_info_struct(png) : nullptr;
    if (png == nullptr || info == nullptr || setjmp(png_jmpbuf(png))) {
      png_destroy_write_struct(&png, &info);
      std::fclose(fp);
      fail(ErrorCode::kIoError, "libpng failed writing " + path.string());
    }
    png_init_io(png, fp);
    png_set_IHDR(png, info, static_cast<png_uint_32>(w_), static_cast<png_uint_32>(h_), 8, PNG_COLOR_TYPE_RGB,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    std::vector<png_byte> row(static_cast<std::size_t>(w_) * 3);
    for (int y = 0; y < h_; ++y) {
      for (int x = 0; x < w_; ++x) {
        const Rgb& c = px_[static_cast<std::size_t>(y) * w_ + x];
        for (int k = 0; k < 3; ++k) row[static_cast<std::size_t>(x) * 3 + k] = c[static_cast<std::size_t>(k)];
      }
      png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
  }

 private:
  int w_, h_;
  std::vector<Rgb> px_;
};

/// Data-to-pixel mapping for a plot area with a margin.
struct Frame {
  int width = 480, height = 320, margin = 30;
  double x_lo = 0, x_hi = 1, y_lo = 0, y_hi = 1;

  int px(double x) const {
    return margin + static_cast<int>(std::lround((x - x_lo) / (x_hi - x_lo) * (width - 2 * margin)));
  }
  int py(double y) const {
    return height - margin - static_cast<int>(std::lround((y - y_lo) / (y_hi - y_lo) * (height - 2 * margin)));
  }
};

inline std::pair<double, double> padded_range(double lo, double hi) {
  if (!(hi > lo)) {
    lo -= 0.5;
    hi += 0.5;
  }
  const double pad = 0.05 * (hi - lo);
  return {lo - pad, hi + pad};
}

inline void draw_axes(Canvas& c, const Frame& f) {
  c.line(f.margin, f.height - f.margin, f.width - f.margin, f.height - f.margin, kBlack);
  c.line(f.margin, f.margin, f.margin, f.height - f.margin, kBlack);
}

/// Mean line with +-std whiskers at every x.
inline void line_plot(const std::filesystem::path& path, const std::vector<double>& xs,
                      const std::vector<double>& ys, const std::vector<double>& err = {}) {
  if (xs.empty() || xs.size() != ys.size() || (!err.empty() && err.size() != ys.size())) {
    fail(ErrorCode::kShapeError, "line_plot: series lengths differ");
  }
  Frame f;
  double ylo = ys[0], yhi = ys[0];
  for (std::size_t i = 0; i < ys.size(); ++i) {
    const double e = err.empty() ? 0.0 : err[i];
    ylo = std::min(ylo, ys[i] - e);
    yhi = std::max(yhi, ys[i] + e);
  }
  std::tie(f.x_lo, f.x_hi) = padded_range(*std::min_element(xs.begin(), xs.end()), *std::max_element(xs.begin(), xs.end()));
  std::tie(f.y_lo, f.y_hi) = padded_range(ylo, yhi);
  Canvas c(f.width, f.height);
  for (double x : xs) c.line(f.px(x), f.margin, f.px(x), f.height - f.margin, kGrey);
  draw_axes(c, f);
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (!err.empty()) c.line(f.px(xs[i]), f.py(ys[i] - err[i]), f.px(xs[i]), f.py(ys[i] + err[i]), kOrange);
    if (i > 0) c.line(f.px(xs[i - 1]), f.py(ys[i - 1]), f.px(xs[i]), f.py(ys[i]), kBlue, 2);
    c.fill_rect(f.px(xs[i]) - 3, f.py(ys[i]) - 3, f.px(xs[i]) + 3, f.py(ys[i]) + 3, kBlue);
  }
  c.write_png(path);
}

/// Blue-white-red ramp over [0, 1].
inline Rgb diverging(double t) {
  t = std::clamp(t, 0.0, 1.0);
  auto mix = [](Rgb a, Rgb b, double u) {
    Rgb o;
    for (std::size_t k = 0; k < 3; ++k) o[k] = static_cast<std::uint8_t>(std::lround(a[k] + (b[k] - a[k]) * u));
    return o;
  };
  return t < 0.5 ? mix(Rgb{59, 76, 192}, kWhite, t * 2.0) : mix(kWhite, Rgb{180, 4, 38}, (t - 0.5) * 2.0);
}

/// One cell per matrix entry; row 0 at the bottom.
inline void heatmap(const std::filesystem::path& path, const ag::Mat& values, int cell = 40) {
  if (values.size() == 0) fail(ErrorCode::kShapeError, "heatmap: empty matrix");
  const double lo = values.minCoeff(), hi = values.maxCoeff();
  const int margin = 10;
  Canvas c(static_cast<int>(values.cols()) * cell + 2 * margin, static_cast<int>(values.rows()) * cell + 2 * margin);
  for (Index r = 0; r < values.rows(); ++r) {
    for (Index k = 0; k < values.cols(); ++k) {
      const double t = hi > lo ? (values(r, k) - lo) / (hi - lo) : 0.5;
      const int x0 = margin + static_cast<int>(k) * cell;
      const int y0 = c.height() - margin - static_cast<int>(r + 1) * cell;
      c.fill_rect(x0, y0, x0 + cell - 1, y0 + cell - 1, diverging(t));
    }
  }
  c.write_png(path);
}

inline double quantile(std::vector<double> v, double q) {
  if (v.empty()) fail(ErrorCode::kInsufficientData, "quantile of empty sample");
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(v.size() - 1, lo + 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

/// Box per group (quartiles, median, 1.5 IQR whiskers); optional reference
/// levels drawn as horizontal red lines.
inline void box_plot(const std::filesystem::path& path, const std::vector<std::vector<double>>& groups,
                     const std::vector<double>& reference_levels = {}) {
  if (groups.empty()) fail(ErrorCode::kShapeError, "box_plot: no groups");
  Frame f;
  f.width = std::max(320, 60 * static_cast<int>(groups.size()) + 60);
  double lo = 1e300, hi = -1e300;
  for (const auto& gvals : groups) {
    for (double v : gvals) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  }
  for (double v : reference_levels) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  if (lo > hi) lo = hi = 0.0;
  f.x_lo = 0.0;
  f.x_hi = static_cast<double>(groups.size()) + 1.0;
  std::tie(f.y_lo, f.y_hi) = padded_range(lo, hi);
  Canvas c(f.width, f.height);
  draw_axes(c, f);
  for (double v : reference_levels) c.line(f.margin, f.py(v), f.width - f.margin, f.py(v), kRed);
  for (std::size_t i = 0; i < groups.size(); ++i) {
    if (groups[i].empty()) continue;
    const double q1 = quantile(groups[i], 0.25), q2 = quantile(groups[i], 0.5), q3 = quantile(groups[i], 0.75);
    const double iqr = q3 - q1;
    double wlo = q1, whi = q3;
    for (double v : groups[i]) {
      if (v >= q1 - 1.5 * iqr) wlo = std::min(wlo, v);
      if (v <= q3 + 1.5 * iqr) whi = std::max(whi, v);
    }
    const int cx = f.px(static_cast<double>(i) + 1.0);
    c.line(cx, f.py(wlo), cx, f.py(q1), kBlack);
    c.line(cx, f.py(q3), cx, f.py(whi), kBlack);
    c.fill_rect(cx - 15, f.py(q3), cx + 15, f.py(q1), kBlue);
    c.line(cx - 15, f.py(q2), cx + 15, f.py(q2), kWhite, 2);
    for (double v : groups[i]) {
      if (v < wlo || v > whi) c.fill_rect(cx - 1, f.py(v) - 1, cx + 1, f.py(v) + 1, kBlack);
    }
  }
  c.write_png(path);
}

}  // namespace voximp::plot

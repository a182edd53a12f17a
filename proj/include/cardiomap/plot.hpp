#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include <png.h>

#include "cardiomap/error.hpp"
#include "cardiomap/grid.hpp"
#include "cardiomap/io.hpp"

namespace cardiomap {

struct Image {
  std::size_t width = 0, height = 0;
  std::vector<std::uint8_t> gray;  // row-major, 0 = black
};

inline void write_png(const fs::path& path, const Image& img) {
  if (img.width == 0 || img.height == 0) throw ValidationError("cannot write an empty image");
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  png_image pi{};
  pi.version = PNG_IMAGE_VERSION;
  pi.width = static_cast<png_uint_32>(img.width);
  pi.height = static_cast<png_uint_32>(img.height);
  pi.format = PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&pi, path.c_str(), 0, img.gray.data(), static_cast<png_int_32>(img.width), nullptr))
    throw Error("png write failed for " + path.string() + ": " + pi.message);
}

inline Image read_png(const fs::path& path) {
  png_image pi{};
  pi.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&pi, path.c_str())) throw ValidationError("cannot read " + path.string());
  pi.format = PNG_FORMAT_GRAY;
  Image img{pi.width, pi.height, std::vector<std::uint8_t>(PNG_IMAGE_SIZE(pi))};
  if (!png_image_finish_read(&pi, nullptr, img.gray.data(), 0, nullptr))
    throw ValidationError("cannot decode " + path.string() + ": " + pi.message);
  return img;
}

/// Linear gray map from [min, max] of the field to [0, 255]; a constant field
/// maps to black. Each cell becomes a scale x scale block.
inline Image heatmap(const Field& f, std::size_t scale = 1) {
  if (f.empty()) throw ValidationError("heatmap: empty field");
  scale = std::max<std::size_t>(scale, 1);
  const auto [lo_it, hi_it] = std::minmax_element(f.begin(), f.end());
  const double lo = *lo_it, span = *hi_it - *lo_it;
  Image img{f.cols() * scale, f.rows() * scale, {}};
  img.gray.resize(img.width * img.height);
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width; ++x) {
      const double v = f(y / scale, x / scale);
      const double t = span > 0.0 ? (v - lo) / span : 0.0;
      img.gray[y * img.width + x] = static_cast<std::uint8_t>(std::lround(std::clamp(t, 0.0, 1.0) * 255.0));
    }
  return img;
}

/// Polylines of one or more series over a shared x axis, black on white.
inline Image line_plot(const std::vector<double>& x, const std::vector<std::vector<double>>& series,
                       std::size_t width = 800, std::size_t height = 300) {
  if (x.empty()) throw ValidationError("line plot: no data");
  Image img{width, height, std::vector<std::uint8_t>(width * height, 255)};
  double ylo = std::numeric_limits<double>::infinity(), yhi = -ylo;
  for (const auto& s : series)
    for (double v : s)
      if (std::isfinite(v)) {
        ylo = std::min(ylo, v);
        yhi = std::max(yhi, v);
      }
  if (!std::isfinite(ylo)) ylo = yhi = 0.0;
  if (yhi == ylo) {
    ylo -= 1.0;
    yhi += 1.0;
  }
  const double xlo = x.front(), xhi = x.size() > 1 ? x.back() : x.front() + 1.0;
  const long m = 10;
  const long W = static_cast<long>(width), H = static_cast<long>(height);
  auto px = [&](double v) { return m + std::lround((v - xlo) / (xhi - xlo) * static_cast<double>(W - 2 * m - 1)); };
  auto py = [&](double v) { return H - m - 1 - std::lround((v - ylo) / (yhi - ylo) * static_cast<double>(H - 2 * m - 1)); };
  auto put = [&](long cx, long cy, std::uint8_t g) {
    if (cx >= 0 && cy >= 0 && cx < W && cy < H) img.gray[static_cast<std::size_t>(cy * W + cx)] = g;
  };
  for (long i = m - 1; i <= W - m; ++i) {
    put(i, m - 1, 160);
    put(i, H - m, 160);
  }
  for (long i = m - 1; i <= H - m; ++i) {
    put(m - 1, i, 160);
    put(W - m, i, 160);
  }
  for (const auto& s : series)
    for (std::size_t k = 1; k < std::min(s.size(), x.size()); ++k) {
      long x0 = px(x[k - 1]), y0 = py(s[k - 1]);
      const long x1 = px(x[k]), y1 = py(s[k]);
      const long dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
      const long sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
      long err = dx + dy;
      while (true) {
        put(x0, y0, 0);
        if (x0 == x1 && y0 == y1) break;
        const long e2 = 2 * err;
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
  return img;
}

/// Matrix CSV: one line per row, no header.
inline void write_field_csv(const fs::path& path, const Field& f) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot open " + path.string());
  out.precision(9);
  for (std::size_t r = 0; r < f.rows(); ++r)
    for (std::size_t c = 0; c < f.cols(); ++c) out << f(r, c) << (c + 1 == f.cols() ? '\n' : ',');
}

/// Numeric CSV with a header row; returns header and columns.
inline std::pair<std::vector<std::string>, std::vector<std::vector<double>>> read_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot read " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw ValidationError(path.string() + ": empty csv");
  std::vector<std::string> header;
  {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) header.push_back(cell);
  }
  std::vector<std::vector<double>> cols(header.size());
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    for (std::size_t c = 0; c < header.size(); ++c) {
      if (!std::getline(ss, cell, ',')) throw ValidationError(path.string() + ": short row");
      char* end = nullptr;
      const double v = std::strtod(cell.c_str(), &end);
      cols[c].push_back(end == cell.c_str() ? std::numeric_limits<double>::quiet_NaN() : v);
    }
  }
  return {header, cols};
}

}  // namespace cardiomap

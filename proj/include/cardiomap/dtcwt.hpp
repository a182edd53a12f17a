#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <cstddef>
#include <vector>

#include "cardiomap/error.hpp"
#include "cardiomap/grid.hpp"

namespace cardiomap {

using ComplexField = Grid2<std::complex<double>>;

/// Filter banks of the 2-D dual-tree complex wavelet transform.
struct DtcwtFilters {
  // Level 1: Kingsbury near_sym_a, (5,7)-tap near-symmetric biorthogonal.
  std::vector<double> h0o{-0.05, 0.25, 0.6, 0.25, -0.05};
  std::vector<double> g0o{-0.010714285714285713, -0.05357142857142857, 0.26071428571428573, 0.6071428571428571,
                          0.26071428571428573,   -0.05357142857142857, -0.010714285714285713};
  std::vector<double> h1o{0.010714285714285713, -0.05357142857142857, -0.26071428571428573, 0.6071428571428571,
                          -0.26071428571428573, -0.05357142857142857, 0.010714285714285713};
  std::vector<double> g1o{-0.05, -0.25, 0.6, -0.25, -0.05};
  // Levels >= 2: Kingsbury qshift_a, 10-tap quarter-shift orthogonal.
  std::vector<double> h0a{0.051130405283831656,  -0.013975370246888838, -0.10983605166597087,
                          0.26383956105893763,   0.7666284677930372,    0.5636557101270515,
                          0.0008736226952170968, -0.1002312195074762,   -0.0016896812725281543,
                          -0.006181881892116438};
  std::vector<double> h1a{-0.006181881892116438, 0.0016896812725281543, -0.1002312195074762,
                          -0.0008736226952170968, 0.5636557101270515,   -0.7666284677930372,
                          0.26383956105893763,   0.10983605166597087,   -0.013975370246888838,
                          -0.051130405283831656};
  std::vector<double> h0b{h0a.rbegin(), h0a.rend()};
  std::vector<double> h1b{-0.051130405283831656, -0.013975370246888838, 0.10983605166597087,
                          0.26383956105893763,   -0.7666284677930372,   0.5636557101270515,
                          -0.0008736226952170968, -0.1002312195074762,  0.0016896812725281543,
                          -0.006181881892116438};
  std::vector<double> g0a{h0b}, g0b{h0a}, g1a{h1b}, g1b{h1a};
};

struct WaveletPyramid {
  Field lowpass;
  std::vector<std::array<ComplexField, 6>> levels;  // finest first
  std::size_t rows = 0, cols = 0;                  // size of the transformed field

  std::size_t level_count() const noexcept { return levels.size(); }
};

namespace detail {

/// Symmetric extension with repeated end samples.
inline std::size_t reflect(std::ptrdiff_t x, std::ptrdiff_t n) {
  const std::ptrdiff_t p = 2 * n;
  std::ptrdiff_t y = x % p;
  if (y < 0) y += p;
  return static_cast<std::size_t>(y < n ? y : p - 1 - y);
}

/// Valid-mode convolution down the columns of X, taking input rows in the
/// order given by `idx`: out[i] = sum_k h[k] X[idx[i + m - 1 - k]].
inline Field conv_rows(const Field& X, const std::vector<std::size_t>& idx, const double* h, std::size_t m) {
  const std::size_t n_out = idx.size() + 1 - m;
  const std::size_t C = X.cols();
  Field out(n_out, C, 0.0);
  for (std::size_t i = 0; i < n_out; ++i) {
    double* o = out.row(i);
    for (std::size_t k = 0; k < m; ++k) {
      const double* x = X.row(idx[i + m - 1 - k]);
      const double hk = h[k];
      for (std::size_t c = 0; c < C; ++c) o[c] += hk * x[c];
    }
  }
  return out;
}

inline std::vector<double> every_other(const std::vector<double>& h, std::size_t start) {
  std::vector<double> out;
  for (std::size_t i = start; i < h.size(); i += 2) out.push_back(h[i]);
  return out;
}

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline void add_into(Field& a, const Field& b) {
  for (std::size_t i = 0; i < a.size(); ++i) a.data()[i] += b.data()[i];
}

/// Column filtering without decimation (odd-length filters keep the size).
inline Field colfilter(const Field& X, const std::vector<double>& h) {
  const auto r = static_cast<std::ptrdiff_t>(X.rows());
  const auto m2 = static_cast<std::ptrdiff_t>(h.size() / 2);
  std::vector<std::size_t> xe;
  for (std::ptrdiff_t k = -m2; k < r + m2; ++k) xe.push_back(reflect(k, r));
  return conv_rows(X, xe, h.data(), h.size());
}

/// Column filtering with decimation by two using the quarter-shift pair.
inline Field coldfilt(const Field& X, const std::vector<double>& ha, const std::vector<double>& hb) {
  const auto r = static_cast<std::ptrdiff_t>(X.rows());
  if (r % 4 != 0) throw ShapeError("coldfilt: row count must be a multiple of 4");
  const auto m = static_cast<std::ptrdiff_t>(ha.size());
  std::vector<std::size_t> xe;
  for (std::ptrdiff_t k = -m; k < r + m; ++k) xe.push_back(reflect(k, r));
  const auto hao = every_other(ha, 0), hae = every_other(ha, 1);
  const auto hbo = every_other(hb, 0), hbe = every_other(hb, 1);
  auto pick = [&](std::ptrdiff_t shift) {
    std::vector<std::size_t> idx;
    for (std::ptrdiff_t t = 5; t < r + 2 * m - 2; t += 4) idx.push_back(xe[static_cast<std::size_t>(t + shift)]);
    return idx;
  };
  Field ya = conv_rows(X, pick(-1), hao.data(), hao.size());
  add_into(ya, conv_rows(X, pick(-3), hae.data(), hae.size()));
  Field yb = conv_rows(X, pick(0), hbo.data(), hbo.size());
  add_into(yb, conv_rows(X, pick(-2), hbe.data(), hbe.size()));
  const std::size_t r2 = static_cast<std::size_t>(r / 2);
  const bool a_first = dot(ha, hb) > 0.0;
  Field Y(r2, X.cols());
  for (std::size_t i = 0; i < r2 / 2; ++i) {
    std::copy(ya.row(i), ya.row(i) + X.cols(), Y.row(a_first ? 2 * i : 2 * i + 1));
    std::copy(yb.row(i), yb.row(i) + X.cols(), Y.row(a_first ? 2 * i + 1 : 2 * i));
  }
  return Y;
}

/// Column filtering with interpolation by two using the quarter-shift pair.
inline Field colifilt(const Field& X, const std::vector<double>& ha, const std::vector<double>& hb) {
  const auto r = static_cast<std::ptrdiff_t>(X.rows());
  if (r % 2 != 0) throw ShapeError("colifilt: row count must be even");
  const auto m = static_cast<std::ptrdiff_t>(ha.size());
  const std::ptrdiff_t m2 = m / 2;
  const std::size_t C = X.cols();
  Field Y(static_cast<std::size_t>(2 * r), C, 0.0);
  std::vector<std::size_t> xe;
  for (std::ptrdiff_t k = -m2; k < r + m2; ++k) xe.push_back(reflect(k, r));
  const auto hao = every_other(ha, 0), hae = every_other(ha, 1);
  const auto hbo = every_other(hb, 0), hbe = every_other(hb, 1);
  const bool pos = dot(ha, hb) > 0.0;
  auto pick = [&](std::ptrdiff_t start, std::ptrdiff_t stop, std::ptrdiff_t shift) {
    std::vector<std::size_t> idx;
    for (std::ptrdiff_t t = start; t < stop; t += 2) idx.push_back(xe[static_cast<std::size_t>(t + shift)]);
    return idx;
  };
  auto place = [&](const Field& part, std::size_t offset) {
    for (std::size_t i = 0; i < part.rows(); ++i) std::copy(part.row(i), part.row(i) + C, Y.row(4 * i + offset));
  };
  if (m2 % 2 == 0) {
    const std::ptrdiff_t lo = 3, hi = r + m;
    const std::ptrdiff_t sa = pos ? 0 : -1, sb = pos ? -1 : 0;
    place(conv_rows(X, pick(lo, hi, sb - 2), hae.data(), hae.size()), 0);
    place(conv_rows(X, pick(lo, hi, sa - 2), hbe.data(), hbe.size()), 1);
    place(conv_rows(X, pick(lo, hi, sb), hao.data(), hao.size()), 2);
    place(conv_rows(X, pick(lo, hi, sa), hbo.data(), hbo.size()), 3);
  } else {
    const std::ptrdiff_t lo = 2, hi = r + m - 1;
    const std::ptrdiff_t sa = pos ? 0 : -1, sb = pos ? -1 : 0;
    place(conv_rows(X, pick(lo, hi, sb), hao.data(), hao.size()), 0);
    place(conv_rows(X, pick(lo, hi, sa), hbo.data(), hbo.size()), 1);
    place(conv_rows(X, pick(lo, hi, sb), hae.data(), hae.size()), 2);
    place(conv_rows(X, pick(lo, hi, sa), hbe.data(), hbe.size()), 3);
  }
  return Y;
}

/// Quad of real samples to a pair of complex subbands.
inline std::array<ComplexField, 2> q2c(const Field& y) {
  const std::size_t R = y.rows() / 2, C = y.cols() / 2;
  const double s = std::sqrt(0.5);
  std::array<ComplexField, 2> z{ComplexField(R, C), ComplexField(R, C)};
  for (std::size_t i = 0; i < R; ++i)
    for (std::size_t j = 0; j < C; ++j) {
      const std::complex<double> p(s * y(2 * i, 2 * j), s * y(2 * i, 2 * j + 1));
      const std::complex<double> q(s * y(2 * i + 1, 2 * j + 1), -s * y(2 * i + 1, 2 * j));
      z[0](i, j) = p - q;
      z[1](i, j) = p + q;
    }
  return z;
}

inline Field c2q(const ComplexField& w0, const ComplexField& w1) {
  const std::size_t R = w0.rows(), C = w0.cols();
  const double s = std::sqrt(0.5);
  Field x(2 * R, 2 * C);
  for (std::size_t i = 0; i < R; ++i)
    for (std::size_t j = 0; j < C; ++j) {
      const std::complex<double> P = w0(i, j) * s + w1(i, j) * s;
      const std::complex<double> Q = w0(i, j) * s - w1(i, j) * s;
      x(2 * i, 2 * j) = P.real();
      x(2 * i, 2 * j + 1) = P.imag();
      x(2 * i + 1, 2 * j) = Q.imag();
      x(2 * i + 1, 2 * j + 1) = -Q.real();
    }
  return x;
}

/// Subband orientations are stored in the order 15, 45, 75, 105, 135, 165
/// degrees; each quad yields the pairs (0, 5), (2, 3) and (1, 4).
inline void store_pair(std::array<ComplexField, 6>& bands, std::size_t a, std::size_t b, const Field& quads) {
  auto z = q2c(quads);
  bands[a] = std::move(z[0]);
  bands[b] = std::move(z[1]);
}

inline Field pad_edges(const Field& f, bool rows, bool cols) {
  const std::size_t R = f.rows() + (rows ? 2 : 0), C = f.cols() + (cols ? 2 : 0);
  Field out(R, C);
  for (std::size_t i = 0; i < R; ++i) {
    const std::size_t si = rows ? std::clamp<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(i) - 1, 0,
                                                             static_cast<std::ptrdiff_t>(f.rows()) - 1)
                                : i;
    for (std::size_t j = 0; j < C; ++j) {
      const std::size_t sj = cols ? std::clamp<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(j) - 1, 0,
                                                               static_cast<std::ptrdiff_t>(f.cols()) - 1)
                                  : j;
      out(i, j) = f(si, sj);
    }
  }
  return out;
}

inline Field crop(const Field& f, std::size_t r0, std::size_t c0, std::size_t R, std::size_t C) {
  Field out(R, C);
  for (std::size_t i = 0; i < R; ++i) std::copy(f.row(r0 + i) + c0, f.row(r0 + i) + c0 + C, out.row(i));
  return out;
}

}  // namespace detail

/// Forward 2-D DT-CWT. Odd dimensions are extended by repeating the last row
/// or column; dtcwt_inverse crops back to the input size.
inline WaveletPyramid dtcwt_forward(const Field& input, std::size_t nlevels = 4, const DtcwtFilters& f = {}) {
  using namespace detail;
  if (nlevels < 1) throw ValidationError("dtcwt: need at least one level");
  const std::size_t min_size = std::size_t{1} << nlevels;
  if (input.rows() < min_size || input.cols() < min_size)
    throw ShapeError("dtcwt: field smaller than 2^levels in some dimension");
  WaveletPyramid p;
  p.rows = input.rows();
  p.cols = input.cols();

  Field X = input;
  if (X.rows() % 2 || X.cols() % 2) {
    Field e(X.rows() + X.rows() % 2, X.cols() + X.cols() % 2);
    for (std::size_t i = 0; i < e.rows(); ++i)
      for (std::size_t j = 0; j < e.cols(); ++j) e(i, j) = X(std::min(i, X.rows() - 1), std::min(j, X.cols() - 1));
    X = std::move(e);
  }

  p.levels.resize(nlevels);
  Field Lo = transpose(colfilter(X, f.h0o));
  Field Hi = transpose(colfilter(X, f.h1o));
  Field LoLo = transpose(colfilter(Lo, f.h0o));
  store_pair(p.levels[0], 0, 5, transpose(colfilter(Hi, f.h0o)));
  store_pair(p.levels[0], 2, 3, transpose(colfilter(Lo, f.h1o)));
  store_pair(p.levels[0], 1, 4, transpose(colfilter(Hi, f.h1o)));

  for (std::size_t level = 1; level < nlevels; ++level) {
    LoLo = pad_edges(LoLo, LoLo.rows() % 4 != 0, LoLo.cols() % 4 != 0);
    Lo = transpose(coldfilt(LoLo, f.h0b, f.h0a));
    Hi = transpose(coldfilt(LoLo, f.h1b, f.h1a));
    LoLo = transpose(coldfilt(Lo, f.h0b, f.h0a));
    store_pair(p.levels[level], 0, 5, transpose(coldfilt(Hi, f.h0b, f.h0a)));
    store_pair(p.levels[level], 2, 3, transpose(coldfilt(Lo, f.h1b, f.h1a)));
    store_pair(p.levels[level], 1, 4, transpose(coldfilt(Hi, f.h1b, f.h1a)));
  }
  p.lowpass = std::move(LoLo);
  return p;
}

inline Field dtcwt_inverse(const WaveletPyramid& p, const DtcwtFilters& f = {}) {
  using namespace detail;
  const std::size_t a = p.level_count();
  if (a == 0) throw ValidationError("dtcwt: empty pyramid");
  Field Z = p.lowpass;
  for (std::size_t level = a; level >= 2; --level) {
    const auto& b = p.levels[level - 1];
    const Field lh = c2q(b[0], b[5]);
    const Field hl = c2q(b[2], b[3]);
    const Field hh = c2q(b[1], b[4]);
    Field y1 = colifilt(Z, f.g0b, f.g0a);
    add_into(y1, colifilt(lh, f.g1b, f.g1a));
    Field y2 = colifilt(hl, f.g0b, f.g0a);
    add_into(y2, colifilt(hh, f.g1b, f.g1a));
    Field z = colifilt(transpose(y1), f.g0b, f.g0a);
    add_into(z, colifilt(transpose(y2), f.g1b, f.g1a));
    Z = transpose(z);
    const std::size_t sr = 2 * p.levels[level - 2][0].rows(), sc = 2 * p.levels[level - 2][0].cols();
    const bool crop_r = Z.rows() != sr, crop_c = Z.cols() != sc;
    if (crop_r || crop_c) Z = crop(Z, crop_r ? 1 : 0, crop_c ? 1 : 0, sr, sc);
    if (Z.rows() != sr || Z.cols() != sc) throw ShapeError("dtcwt: inconsistent subband sizes");
  }
  const auto& b = p.levels[0];
  const Field lh = c2q(b[0], b[5]);
  const Field hl = c2q(b[2], b[3]);
  const Field hh = c2q(b[1], b[4]);
  Field y1 = colfilter(Z, f.g0o);
  add_into(y1, colfilter(lh, f.g1o));
  Field y2 = colfilter(hl, f.g0o);
  add_into(y2, colfilter(hh, f.g1o));
  Field z = colfilter(transpose(y1), f.g0o);
  add_into(z, colfilter(transpose(y2), f.g1o));
  Z = transpose(z);
  if (Z.rows() != p.rows || Z.cols() != p.cols) Z = crop(Z, 0, 0, p.rows, p.cols);
  return Z;
}

}  // namespace cardiomap

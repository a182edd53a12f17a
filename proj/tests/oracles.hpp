#pragma once

// Independent reference implementations shared by the unit tests and the
// acceptance run.

#include <Eigen/Sparse>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <vector>

#include "cardiomap/random.hpp"
#include "cardiomap/substrate.hpp"

namespace cardiomap::oracle {

inline DiffusionTensorField random_spd(std::uint64_t seed, std::size_t rows, std::size_t cols, double dx) {
  Rng rng(seed);
  std::uniform_real_distribution<double> dl(1e-4, 1.5e-3), lam(1.0, 8.0), ang(0.0, std::numbers::pi);
  DiffusionTensorField t{Field(rows, cols), Field(rows, cols), Field(rows, cols), dx};
  for (std::size_t i = 0; i < rows * cols; ++i) {
    const double l = dl(rng), tr = l / lam(rng), a = ang(rng);
    const double c = std::cos(a), s = std::sin(a);
    t.d_xx.data()[i] = l * c * c + tr * s * s;
    t.d_yy.data()[i] = l * s * s + tr * c * c;
    t.d_xy.data()[i] = (l - tr) * c * s;
  }
  return t;
}

inline Field random_smooth(std::uint64_t seed, std::size_t rows, std::size_t cols) {
  Rng rng(seed);
  std::uniform_real_distribution<double> a(-1.0, 1.0), k(0.05, 0.4);
  const double a1 = a(rng), a2 = a(rng), a3 = a(rng), k1 = k(rng), k2 = k(rng), k3 = k(rng);
  Field f(rows, cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c)
      f(r, c) = a1 * std::sin(k1 * r) + a2 * std::cos(k2 * c) + a3 * std::sin(k3 * (r + 0.7 * c));
  return f;
}

// Operator assembled face by face into a sparse matrix: each interior face
// carries a flux from the normal difference and a cross term from the
// tangential centred differences (ghost cells mirror the boundary row or
// column), added to one neighbour and subtracted from the other.
inline Eigen::SparseMatrix<double> assemble(const DiffusionTensorField& d, double h) {
  const auto R = static_cast<long>(d.rows()), C = static_cast<long>(d.cols());
  auto id = [&](long r, long c) { return std::clamp(r, 0L, R - 1) * C + std::clamp(c, 0L, C - 1); };
  std::vector<Eigen::Triplet<double>> t;
  auto face = [&](long a, long b, const std::vector<std::pair<long, double>>& flux) {
    for (auto [k, w] : flux) {
      t.emplace_back(a, k, w);
      t.emplace_back(b, k, -w);
    }
  };
  const double h2 = h * h;
  for (long r = 0; r < R; ++r)
    for (long c = 0; c + 1 < C; ++c) {
      const double dxx = 0.5 * (d.d_xx(r, c) + d.d_xx(r, c + 1)) / h2;
      const double dxy = 0.5 * (d.d_xy(r, c) + d.d_xy(r, c + 1)) / (4.0 * h2);
      face(id(r, c), id(r, c + 1),
           {{id(r, c + 1), dxx}, {id(r, c), -dxx},
            {id(r + 1, c), dxy}, {id(r - 1, c), -dxy}, {id(r + 1, c + 1), dxy}, {id(r - 1, c + 1), -dxy}});
    }
  for (long r = 0; r + 1 < R; ++r)
    for (long c = 0; c < C; ++c) {
      const double dyy = 0.5 * (d.d_yy(r, c) + d.d_yy(r + 1, c)) / h2;
      const double dxy = 0.5 * (d.d_xy(r, c) + d.d_xy(r + 1, c)) / (4.0 * h2);
      face(id(r, c), id(r + 1, c),
           {{id(r + 1, c), dyy}, {id(r, c), -dyy},
            {id(r, c + 1), dxy}, {id(r, c - 1), -dxy}, {id(r + 1, c + 1), dxy}, {id(r + 1, c - 1), -dxy}});
    }
  Eigen::SparseMatrix<double> A(R * C, R * C);
  A.setFromTriplets(t.begin(), t.end());
  return A;
}

// Brute-force integral: gradient by explicit finite differences at every
// cell, then the rectangle rule over all cells.
inline double naive_phi(const Field& vm, double h, double px, double py, double pz, double sigma) {
  const long R = static_cast<long>(vm.rows()), C = static_cast<long>(vm.cols());
  auto ddx = [&](long r, long c) {
    if (c == 0) return (-3.0 * vm(r, 0) + 4.0 * vm(r, 1) - vm(r, 2)) / (2.0 * h);
    if (c == C - 1) return (3.0 * vm(r, C - 1) - 4.0 * vm(r, C - 2) + vm(r, C - 3)) / (2.0 * h);
    return (vm(r, c + 1) - vm(r, c - 1)) / (2.0 * h);
  };
  auto ddy = [&](long r, long c) {
    if (r == 0) return (-3.0 * vm(0, c) + 4.0 * vm(1, c) - vm(2, c)) / (2.0 * h);
    if (r == R - 1) return (3.0 * vm(R - 1, c) - 4.0 * vm(R - 2, c) + vm(R - 3, c)) / (2.0 * h);
    return (vm(r + 1, c) - vm(r - 1, c)) / (2.0 * h);
  };
  long double sum = 0.0L;
  for (long r = 0; r < R; ++r)
    for (long c = 0; c < C; ++c) {
      const double x = (c + 0.5) * h, y = (r + 0.5) * h;
      const double dx = px - x, dy = py - y;
      const double dist = std::sqrt(dx * dx + dy * dy + pz * pz);
      sum += (ddx(r, c) * dx + ddy(r, c) * dy) / (4.0 * std::numbers::pi * sigma * dist * dist * dist) * h * h;
    }
  return static_cast<double>(sum);
}

inline Field random_frame(std::uint64_t seed, std::size_t n) {
  Rng rng(seed);
  std::uniform_real_distribution<double> a(-40.0, 40.0), k(0.03, 0.3), ph(0.0, 6.28);
  Field f(n, n, -85.0);
  for (int m = 0; m < 4; ++m) {
    const double am = a(rng), kx = k(rng), ky = k(rng), p = ph(rng);
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c < n; ++c) f(r, c) += am * std::sin(kx * c + ky * r + p);
  }
  return f;
}

// Radially averaged normalized autocorrelation for integer lags 1..max_lag:
// every offset (dy, dx) is binned by its rounded length.
inline std::vector<double> radial_autocorrelation(const Field& f, int max_lag) {
  const int R = static_cast<int>(f.rows()), C = static_cast<int>(f.cols());
  double mean = 0.0;
  for (double v : f) mean += v;
  mean /= static_cast<double>(f.size());
  double var = 0.0;
  for (double v : f) var += (v - mean) * (v - mean);
  var /= static_cast<double>(f.size());
  std::vector<double> sum(max_lag + 1, 0.0), cnt(max_lag + 1, 0.0);
  for (int dy = -max_lag; dy <= max_lag; ++dy)
    for (int dx = -max_lag; dx <= max_lag; ++dx) {
      const int lag = static_cast<int>(std::lround(std::sqrt(dx * dx + dy * dy)));
      if (lag < 1 || lag > max_lag) continue;
      double s = 0.0;
      int n = 0;
      for (int r = std::max(0, -dy); r < std::min(R, R - dy); ++r)
        for (int c = std::max(0, -dx); c < std::min(C, C - dx); ++c) {
          s += (f(r, c) - mean) * (f(r + dy, c + dx) - mean);
          ++n;
        }
      sum[lag] += s / n / var;
      cnt[lag] += 1.0;
    }
  std::vector<double> out;
  for (int l = 1; l <= max_lag; ++l) out.push_back(sum[l] / cnt[l]);
  return out;
}

inline double relative_l2(const std::vector<double>& a, const std::vector<double>& ref) {
  double n = 0.0, d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    n += (a[i] - ref[i]) * (a[i] - ref[i]);
    d += ref[i] * ref[i];
  }
  return std::sqrt(n / d);
}

}  // namespace cardiomap::oracle

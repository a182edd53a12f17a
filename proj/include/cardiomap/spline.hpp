#pragma once

#include <algorithm>
#include <cstddef>
#include <vector>

#include "cardiomap/error.hpp"

namespace cardiomap {

/// Interpolating cubic spline with natural end conditions (zero second
/// derivative at both knots). Evaluation outside the knot range continues the
/// end polynomial.
class NaturalCubicSpline {
 public:
  NaturalCubicSpline(std::vector<double> x, std::vector<double> y)
      : x_(std::move(x)), y_(std::move(y)), m_(x_.size(), 0.0) {
    const std::size_t n = x_.size();
    if (n < 2 || y_.size() != n) throw ValidationError("spline needs >= 2 matching knots");
    for (std::size_t i = 1; i < n; ++i)
      if (!(x_[i] > x_[i - 1])) throw ValidationError("spline knots must be strictly increasing");
    if (n == 2) return;

    // Thomas algorithm on the interior second derivatives.
    const std::size_t k = n - 2;
    std::vector<double> diag(k), upper(k), rhs(k);
    for (std::size_t i = 0; i < k; ++i) {
      const double h0 = x_[i + 1] - x_[i];
      const double h1 = x_[i + 2] - x_[i + 1];
      diag[i] = 2.0 * (h0 + h1);
      upper[i] = h1;
      rhs[i] = 6.0 * ((y_[i + 2] - y_[i + 1]) / h1 - (y_[i + 1] - y_[i]) / h0);
    }
    for (std::size_t i = 1; i < k; ++i) {
      const double lower = x_[i + 1] - x_[i];
      const double w = lower / diag[i - 1];
      diag[i] -= w * upper[i - 1];
      rhs[i] -= w * rhs[i - 1];
    }
    m_[k] = rhs[k - 1] / diag[k - 1];
    for (std::size_t i = k - 1; i-- > 0;) m_[i + 1] = (rhs[i] - upper[i] * m_[i + 2]) / diag[i];
  }

  double operator()(double t) const { return eval(t, 0); }
  double derivative(double t) const { return eval(t, 1); }
  double second_derivative(double t) const { return eval(t, 2); }

  const std::vector<double>& knots_x() const noexcept { return x_; }
  const std::vector<double>& knots_y() const noexcept { return y_; }

 private:
  double eval(double t, int order) const {
    const std::size_t seg = segment(t);
    const double h = x_[seg + 1] - x_[seg];
    const double a = (x_[seg + 1] - t) / h;
    const double b = (t - x_[seg]) / h;
    const double m0 = m_[seg], m1 = m_[seg + 1];
    const double y0 = y_[seg], y1 = y_[seg + 1];
    switch (order) {
      case 0:
        return a * y0 + b * y1 + ((a * a * a - a) * m0 + (b * b * b - b) * m1) * h * h / 6.0;
      case 1:
        return (y1 - y0) / h + (-(3.0 * a * a - 1.0) * m0 + (3.0 * b * b - 1.0) * m1) * h / 6.0;
      default:
        return a * m0 + b * m1;
    }
  }

  std::size_t segment(double t) const {
    auto it = std::upper_bound(x_.begin(), x_.end(), t);
    std::size_t i = it == x_.begin() ? 0 : static_cast<std::size_t>(it - x_.begin()) - 1;
    return std::min(i, x_.size() - 2);
  }

  std::vector<double> x_, y_, m_;
};

}  // namespace cardiomap

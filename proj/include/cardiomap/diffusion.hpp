#pragma once

#include <algorithm>
#include <cstddef>
#include <vector>

#include "cardiomap/error.hpp"
#include "cardiomap/grid.hpp"
#include "cardiomap/substrate.hpp"

namespace cardiomap {

/// Discrete div(D grad u) on a cell-centred grid, written as a difference of
/// face fluxes:
///
///   F(i, j+1/2) = <Dxx> (u[i][j+1] - u[i][j]) / dx
///               + <Dxy> (centred d/dy of u averaged over columns j, j+1)
///
/// and symmetrically on the y faces, where <.> is the two-cell face average.
/// Tangential differences next to the boundary use mirrored ghost cells, and
/// the total normal flux through the domain boundary is zero, so the sum of
/// the result over all cells vanishes for any tensor field.
class DiffusionOperator {
 public:
  DiffusionOperator(const DiffusionTensorField& d, double dx) : rows_(d.rows()), cols_(d.cols()) {
    d.check_shape();
    if (!(dx > 0.0)) throw ValidationError("diffusion operator: dx must be positive");
    if (rows_ < 2 || cols_ < 2) throw ShapeError("diffusion operator: grid must be at least 2x2");
    const double inv_h2 = 1.0 / (dx * dx);
    const double inv_4h2 = 0.25 * inv_h2;
    cross_ = false;
    for (double v : d.d_xy)
      if (v != 0.0) {
        cross_ = true;
        break;
      }
    x_normal_.assign(rows_ * (cols_ - 1), 0.0);
    y_normal_.assign((rows_ - 1) * cols_, 0.0);
    if (cross_) {
      x_cross_.assign(rows_ * (cols_ - 1), 0.0);
      y_cross_.assign((rows_ - 1) * cols_, 0.0);
    }
    for (std::size_t i = 0; i < rows_; ++i)
      for (std::size_t j = 0; j + 1 < cols_; ++j) {
        x_normal_[i * (cols_ - 1) + j] = 0.5 * (d.d_xx(i, j) + d.d_xx(i, j + 1)) * inv_h2;
        if (cross_) x_cross_[i * (cols_ - 1) + j] = 0.5 * (d.d_xy(i, j) + d.d_xy(i, j + 1)) * inv_4h2;
      }
    for (std::size_t i = 0; i + 1 < rows_; ++i)
      for (std::size_t j = 0; j < cols_; ++j) {
        y_normal_[i * cols_ + j] = 0.5 * (d.d_yy(i, j) + d.d_yy(i + 1, j)) * inv_h2;
        if (cross_) y_cross_[i * cols_ + j] = 0.5 * (d.d_xy(i, j) + d.d_xy(i + 1, j)) * inv_4h2;
      }
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  bool has_cross_terms() const noexcept { return cross_; }

  /// out = div(D grad u); `out` must not alias `u`.
  void apply(const Field& u, Field& out) const {
    if (u.rows() != rows_ || u.cols() != cols_) throw ShapeError("diffusion operator: field shape mismatch");
    if (!out.same_shape(u)) out = Field(rows_, cols_);
    if (cross_)
      apply_impl<true>(u, out);
    else
      apply_impl<false>(u, out);
  }

  Field operator()(const Field& u) const {
    Field out(rows_, cols_);
    apply(u, out);
    return out;
  }

 private:
  template <bool Cross>
  void apply_impl(const Field& u, Field& out) const {
    const std::size_t nc = cols_;
    std::vector<double> fy_prev(nc, 0.0), fy_next(nc, 0.0);
    for (std::size_t i = 0; i < rows_; ++i) {
      const double* up = u.row(i == 0 ? 0 : i - 1);
      const double* uc = u.row(i);
      const double* un = u.row(i + 1 < rows_ ? i + 1 : rows_ - 1);
      double* o = out.row(i);

      if (i + 1 < rows_) {
        const double* yn = y_normal_.data() + i * nc;
        for (std::size_t j = 0; j < nc; ++j) fy_next[j] = yn[j] * (un[j] - uc[j]);
        if constexpr (Cross) {
          const double* yc = y_cross_.data() + i * nc;
          for (std::size_t j = 0; j < nc; ++j) {
            const std::size_t jm = j == 0 ? 0 : j - 1;
            const std::size_t jp = j + 1 < nc ? j + 1 : nc - 1;
            fy_next[j] += yc[j] * (uc[jp] - uc[jm] + un[jp] - un[jm]);
          }
        }
      } else {
        std::fill(fy_next.begin(), fy_next.end(), 0.0);
      }

      const double* xn = x_normal_.data() + i * (nc - 1);
      const double* xc = Cross ? x_cross_.data() + i * (nc - 1) : nullptr;
      double fx_left = 0.0;
      for (std::size_t j = 0; j < nc; ++j) {
        double fx_right = 0.0;
        if (j + 1 < nc) {
          fx_right = xn[j] * (uc[j + 1] - uc[j]);
          if constexpr (Cross) fx_right += xc[j] * (un[j] - up[j] + un[j + 1] - up[j + 1]);
        }
        o[j] = (fx_right - fx_left) + (fy_next[j] - fy_prev[j]);
        fx_left = fx_right;
      }
      std::swap(fy_prev, fy_next);
    }
  }

  std::size_t rows_, cols_;
  bool cross_ = false;
  std::vector<double> x_normal_, x_cross_;  // rows x (cols-1), x faces
  std::vector<double> y_normal_, y_cross_;  // (rows-1) x cols, y faces
};

inline Field diffusion_term(const Field& u, const DiffusionTensorField& d, double dx) {
  if (!u.same_shape(d.d_xx)) throw ShapeError("diffusion_term: field and tensor shapes differ");
  return DiffusionOperator(d, dx)(u);
}

}  // namespace cardiomap

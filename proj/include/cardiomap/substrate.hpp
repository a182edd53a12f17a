#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "cardiomap/error.hpp"
#include "cardiomap/grid.hpp"
#include "cardiomap/random.hpp"
#include "cardiomap/spline.hpp"

namespace cardiomap {

inline constexpr double kHealthyDiffusivity = 1e-3;  // cm^2/ms
inline constexpr double kScarDiffusivity = 1e-4;     // cm^2/ms
inline constexpr double kDefaultAnisotropy = 4.0;

// ---------------------------------------------------------------------------
// Scar maps
// ---------------------------------------------------------------------------

/// Parameters of the compact-scar generator. Lengths are fractions of the
/// field side so that one configuration yields the same geometry at any
/// resolution. The defaults were tuned by eye to give one to a few compact
/// blobs covering a few percent to about a quarter of the tissue.
struct ScarConfig {
  std::size_t n = 96;
  int count_min = 1;
  int count_max = 3;
  double semi_axis_min = 0.06;
  double semi_axis_max = 0.16;
  double centre_margin = 0.12;
  double smoothing = 0.02;  // Gaussian sigma
  double fraction_min = 0.02;
  double fraction_max = 0.25;
  int max_retries = 64;
  double d_healthy = kHealthyDiffusivity;
  double d_scar = kScarDiffusivity;

  void validate() const {
    if (n == 0) throw ValidationError("scar config: n must be positive");
    if (count_min < 0 || count_max < count_min) throw ValidationError("scar config: bad count range");
    if (!(semi_axis_min > 0.0) || semi_axis_max < semi_axis_min)
      throw ValidationError("scar config: bad semi-axis range");
    if (fraction_min < 0.0 || fraction_max > 1.0 || fraction_max < fraction_min)
      throw ValidationError("scar config: bad area-fraction bounds");
    if (smoothing < 0.0) throw ValidationError("scar config: negative smoothing");
    if (max_retries < 1) throw ValidationError("scar config: max_retries must be >= 1");
    if (!(d_scar > 0.0) || !(d_scar < d_healthy))
      throw ValidationError("scar config: need 0 < d_scar < d_healthy");
  }
};

struct ScarMap {
  Mask mask;  // 1 = scar
  double d_healthy = kHealthyDiffusivity;
  double d_scar = kScarDiffusivity;

  double area_fraction() const {
    if (mask.empty()) return 0.0;
    std::size_t count = 0;
    for (auto v : mask) count += v != 0;
    return static_cast<double>(count) / static_cast<double>(mask.size());
  }
};

namespace detail {

inline std::vector<double> gaussian_kernel(double sigma) {
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(2 * radius + 1);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    k[i + radius] = std::exp(-0.5 * (i * i) / (sigma * sigma));
    sum += k[i + radius];
  }
  for (auto& v : k) v /= sum;
  return k;
}

inline std::ptrdiff_t reflect_index(std::ptrdiff_t i, std::ptrdiff_t n) {
  // Half-sample symmetric extension: ... 1 0 | 0 1 2 ... n-1 | n-1 n-2 ...
  const std::ptrdiff_t period = 2 * n;
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - 1 - i;
}

/// Separable Gaussian blur with symmetric boundary extension; sigma in cells.
inline Field gaussian_blur(const Field& f, double sigma) {
  if (sigma < 0.5) return f;
  const auto k = gaussian_kernel(sigma);
  const auto radius = static_cast<std::ptrdiff_t>(k.size() / 2);
  const auto rows = static_cast<std::ptrdiff_t>(f.rows());
  const auto cols = static_cast<std::ptrdiff_t>(f.cols());
  Field tmp(f.rows(), f.cols()), out(f.rows(), f.cols());
  for (std::ptrdiff_t r = 0; r < rows; ++r)
    for (std::ptrdiff_t c = 0; c < cols; ++c) {
      double acc = 0.0;
      for (std::ptrdiff_t o = -radius; o <= radius; ++o) acc += k[o + radius] * f(r, reflect_index(c + o, cols));
      tmp(r, c) = acc;
    }
  for (std::ptrdiff_t r = 0; r < rows; ++r)
    for (std::ptrdiff_t c = 0; c < cols; ++c) {
      double acc = 0.0;
      for (std::ptrdiff_t o = -radius; o <= radius; ++o) acc += k[o + radius] * tmp(reflect_index(r + o, rows), c);
      out(r, c) = acc;
    }
  return out;
}

inline Mask draw_scar_attempt(std::uint64_t seed, const ScarConfig& cfg) {
  Rng rng(seed);
  std::uniform_int_distribution<int> count_dist(cfg.count_min, cfg.count_max);
  std::uniform_real_distribution<double> centre(cfg.centre_margin, 1.0 - cfg.centre_margin);
  std::uniform_real_distribution<double> axis(cfg.semi_axis_min, cfg.semi_axis_max);
  std::uniform_real_distribution<double> angle(0.0, std::numbers::pi);

  struct Ellipse {
    double cx, cy, a, b, cos_t, sin_t;
  };
  const int count = count_dist(rng);
  std::vector<Ellipse> blobs;
  for (int i = 0; i < count; ++i) {
    Ellipse e{};
    e.cx = centre(rng);
    e.cy = centre(rng);
    e.a = axis(rng);
    e.b = axis(rng);
    const double t = angle(rng);
    e.cos_t = std::cos(t);
    e.sin_t = std::sin(t);
    blobs.push_back(e);
  }

  const std::size_t n = cfg.n;
  Field indicator(n, n, 0.0);
  for (std::size_t r = 0; r < n; ++r) {
    const double y = (static_cast<double>(r) + 0.5) / static_cast<double>(n);
    for (std::size_t c = 0; c < n; ++c) {
      const double x = (static_cast<double>(c) + 0.5) / static_cast<double>(n);
      for (const auto& e : blobs) {
        const double dx = x - e.cx, dy = y - e.cy;
        const double u = (dx * e.cos_t + dy * e.sin_t) / e.a;
        const double v = (-dx * e.sin_t + dy * e.cos_t) / e.b;
        if (u * u + v * v <= 1.0) {
          indicator(r, c) = 1.0;
          break;
        }
      }
    }
  }
  const Field smooth = gaussian_blur(indicator, cfg.smoothing * static_cast<double>(n));
  Mask mask(n, n, 0);
  for (std::size_t i = 0; i < mask.size(); ++i) mask.data()[i] = smooth.data()[i] >= 0.5 ? 1 : 0;
  return mask;
}

}  // namespace detail

/// Compact scar map: union of random ellipses, Gaussian-smoothed and
/// thresholded at one half. Attempts whose scar fraction falls outside the
/// configured bounds are redrawn from derived sub-seeds.
inline ScarMap gen_scar_map(std::uint64_t seed, const ScarConfig& cfg) {
  cfg.validate();
  for (int attempt = 0; attempt < cfg.max_retries; ++attempt) {
    ScarMap map{detail::draw_scar_attempt(derive_seed(seed, {0x5CA7, static_cast<std::uint64_t>(attempt)}), cfg),
                cfg.d_healthy, cfg.d_scar};
    const double f = map.area_fraction();
    if (f >= cfg.fraction_min && f <= cfg.fraction_max) return map;
  }
  throw GenerationError("scar map: area-fraction bounds [" + std::to_string(cfg.fraction_min) + ", " +
                        std::to_string(cfg.fraction_max) + "] not met after " +
                        std::to_string(cfg.max_retries) + " attempts (seed " + std::to_string(seed) + ")");
}

// ---------------------------------------------------------------------------
// Fibre fields
// ---------------------------------------------------------------------------

struct ControlPoint {
  double x = 0.0;
  double y = 0.0;
};

/// Fibre path construction. Coordinates are normalized to the field side;
/// control-point offsets are measured from `baseline` (the path's mean row).
struct FibreConfig {
  double y_variance = 0.09;
  double baseline = 0.5;
  std::size_t path_samples = 2048;
};

struct FibreAngleField {
  Field alpha_deg;
  std::array<ControlPoint, 5> control_points{};
};

inline std::array<ControlPoint, 5> draw_control_points(std::uint64_t seed, const FibreConfig& cfg = {}) {
  Rng rng(derive_seed(seed, {0xF1B7E}));
  std::normal_distribution<double> offset(0.0, std::sqrt(cfg.y_variance));
  std::array<ControlPoint, 5> pts{};
  for (std::size_t i = 0; i < pts.size(); ++i) {
    pts[i].x = static_cast<double>(i) / 4.0;
    pts[i].y = offset(rng);
  }
  return pts;
}

/// Angle field from explicit control points: each cell takes the tangent
/// angle of the spline at its nearest point on the path.
inline FibreAngleField fibre_field_from_controls(const std::array<ControlPoint, 5>& pts, std::size_t n,
                                                 const FibreConfig& cfg = {}) {
  if (n < 16) throw ValidationError("fibre field: n must be >= 16");
  std::vector<double> xs, ys;
  for (const auto& p : pts) {
    xs.push_back(p.x);
    ys.push_back(cfg.baseline + p.y);
  }
  const NaturalCubicSpline path(xs, ys);
  const double x0 = xs.front(), x1 = xs.back();

  const std::size_t m = std::max<std::size_t>(cfg.path_samples, 4 * n);
  std::vector<double> st(m), sy(m);
  for (std::size_t k = 0; k < m; ++k) {
    st[k] = x0 + (x1 - x0) * static_cast<double>(k) / static_cast<double>(m - 1);
    sy[k] = path(st[k]);
  }

  FibreAngleField out{Field(n, n), pts};
  for (std::size_t r = 0; r < n; ++r) {
    const double py = (static_cast<double>(r) + 0.5) / static_cast<double>(n);
    for (std::size_t c = 0; c < n; ++c) {
      const double px = (static_cast<double>(c) + 0.5) / static_cast<double>(n);
      // Samples are sorted in t and |t - px| bounds the distance, so expand
      // outwards from the nearest abscissa until that bound exceeds the best.
      const double pos = (px - x0) / (x1 - x0) * static_cast<double>(m - 1);
      const auto start = static_cast<std::ptrdiff_t>(std::clamp(std::round(pos), 0.0, static_cast<double>(m - 1)));
      auto dist2 = [&](std::ptrdiff_t k) {
        const double dx = st[k] - px, dy = sy[k] - py;
        return dx * dx + dy * dy;
      };
      std::ptrdiff_t best = start;
      double best_d2 = dist2(start);
      for (std::ptrdiff_t k = start + 1; k < static_cast<std::ptrdiff_t>(m); ++k) {
        const double gap = st[k] - px;
        if (gap * gap > best_d2) break;
        const double d2 = dist2(k);
        if (d2 < best_d2) best_d2 = d2, best = k;
      }
      for (std::ptrdiff_t k = start - 1; k >= 0; --k) {
        const double gap = px - st[k];
        if (gap * gap > best_d2) break;
        const double d2 = dist2(k);
        if (d2 < best_d2) best_d2 = d2, best = k;
      }
      // Newton refinement of d/dt |P(t) - p|^2 = 0 on the continuous path.
      double t = st[best];
      for (int it = 0; it < 4; ++it) {
        const double s = path(t) - py, ds = path.derivative(t), dds = path.second_derivative(t);
        const double g = (t - px) + s * ds;
        const double h = 1.0 + ds * ds + s * dds;
        if (!(h > 0.0)) break;
        const double next = std::clamp(t - g / h, x0, x1);
        const double dn = (next - px) * (next - px) + (path(next) - py) * (path(next) - py);
        if (!(dn <= best_d2)) break;
        best_d2 = dn;
        t = next;
      }
      out.alpha_deg(r, c) = std::atan(path.derivative(t)) * 180.0 / std::numbers::pi;
    }
  }
  return out;
}

inline FibreAngleField gen_fibre_field(std::uint64_t seed, std::size_t n, const FibreConfig& cfg = {}) {
  if (n < 16) throw ValidationError("fibre field: n must be >= 16");
  return fibre_field_from_controls(draw_control_points(seed, cfg), n, cfg);
}

// ---------------------------------------------------------------------------
// Diffusion tensors
// ---------------------------------------------------------------------------

struct AnisotropyParams {
  Field d_l;     // cm^2/ms
  Field lambda;  // d_l / d_t, >= 1

  static AnisotropyParams homogeneous(std::size_t n, double d_l = kHealthyDiffusivity,
                                      double lambda = kDefaultAnisotropy) {
    return {Field(n, n, d_l), Field(n, n, lambda)};
  }
};

struct DiffusionTensorField {
  Field d_xx, d_yy, d_xy;  // cm^2/ms
  double dx = 0.01;        // cm

  std::size_t rows() const noexcept { return d_xx.rows(); }
  std::size_t cols() const noexcept { return d_xx.cols(); }

  static DiffusionTensorField isotropic(std::size_t rows, std::size_t cols, double d, double dx) {
    return {Field(rows, cols, d), Field(rows, cols, d), Field(rows, cols, 0.0), dx};
  }

  void check_shape() const {
    if (!d_xx.same_shape(d_yy) || !d_xx.same_shape(d_xy))
      throw ShapeError("diffusion tensor components differ in shape");
  }

  bool is_spd() const {
    for (std::size_t i = 0; i < d_xx.size(); ++i) {
      const double a = d_xx.data()[i], b = d_yy.data()[i], c = d_xy.data()[i];
      if (!(a > 0.0 && b > 0.0 && a * b - c * c > 0.0)) return false;
    }
    return true;
  }

  bool is_psd() const {
    for (std::size_t i = 0; i < d_xx.size(); ++i) {
      const double a = d_xx.data()[i], b = d_yy.data()[i], c = d_xy.data()[i];
      if (!(a >= 0.0 && b >= 0.0 && a * b - c * c >= 0.0)) return false;
    }
    return true;
  }

  /// Largest eigenvalue over all cells.
  double max_eigenvalue() const {
    double best = 0.0;
    for (std::size_t i = 0; i < d_xx.size(); ++i) {
      const double a = d_xx.data()[i], b = d_yy.data()[i], c = d_xy.data()[i];
      const double mean = 0.5 * (a + b);
      const double rad = std::sqrt(0.25 * (a - b) * (a - b) + c * c);
      best = std::max(best, mean + rad);
    }
    return best;
  }

  bool is_isotropic() const {
    for (std::size_t i = 0; i < d_xx.size(); ++i)
      if (d_xx.data()[i] != d_yy.data()[i] || d_xy.data()[i] != 0.0) return false;
    return true;
  }
};

/// Per cell D = R(alpha) diag(d_l, d_l / lambda) R(alpha)^T.
///
/// Without a fibre field the tensor is isotropic (alpha = 0, lambda = 1).
/// Without a scar map d_l comes from `aniso`; with one, d_l takes the scar
/// map's two diffusivities.
inline DiffusionTensorField tensor_from(const ScarMap* scar, const FibreAngleField* fibre,
                                        const AnisotropyParams& aniso, double dx) {
  if (!scar && !fibre) throw ValidationError("tensor_from: need a scar map or a fibre field");
  const std::size_t rows = scar ? scar->mask.rows() : fibre->alpha_deg.rows();
  const std::size_t cols = scar ? scar->mask.cols() : fibre->alpha_deg.cols();
  if (scar && fibre && !scar->mask.same_shape(fibre->alpha_deg))
    throw ShapeError("tensor_from: scar and fibre shapes differ");
  const bool need_dl = scar == nullptr;
  if (need_dl && (aniso.d_l.rows() != rows || aniso.d_l.cols() != cols))
    throw ShapeError("tensor_from: d_l field shape mismatch");
  if (fibre && (aniso.lambda.rows() != rows || aniso.lambda.cols() != cols))
    throw ShapeError("tensor_from: lambda field shape mismatch");
  if (!(dx > 0.0)) throw ValidationError("tensor_from: dx must be positive");

  DiffusionTensorField out{Field(rows, cols), Field(rows, cols), Field(rows, cols), dx};
  for (std::size_t i = 0; i < rows * cols; ++i) {
    const double d_l = scar ? (scar->mask.data()[i] ? scar->d_scar : scar->d_healthy) : aniso.d_l.data()[i];
    if (!(d_l > 0.0)) throw ValidationError("tensor_from: non-positive longitudinal diffusivity");
    if (!fibre) {
      out.d_xx.data()[i] = d_l;
      out.d_yy.data()[i] = d_l;
      out.d_xy.data()[i] = 0.0;
      continue;
    }
    const double lambda = aniso.lambda.data()[i];
    if (!(lambda >= 1.0)) throw ValidationError("tensor_from: anisotropy ratio must be >= 1");
    const double d_t = d_l / lambda;
    const double a = fibre->alpha_deg.data()[i] * std::numbers::pi / 180.0;
    const double c = std::cos(a), s = std::sin(a);
    out.d_xx.data()[i] = d_l * c * c + d_t * s * s;
    out.d_yy.data()[i] = d_l * s * s + d_t * c * c;
    out.d_xy.data()[i] = (d_l - d_t) * c * s;
  }
  return out;
}

/// Area-weighted block average of an n_rows x n_cols field onto m x m cells
/// spanning the same extent.
inline Field block_average(const Field& f, std::size_t m_rows, std::size_t m_cols) {
  if (m_rows == 0 || m_cols == 0 || m_rows > f.rows() || m_cols > f.cols())
    throw ValidationError("block_average: target size must be in [1, source size]");
  // Row-stochastic overlap weights: target cell k spans [k n/m, (k+1) n/m).
  auto weights = [](std::size_t n, std::size_t m) {
    std::vector<std::vector<std::pair<std::size_t, double>>> w(m);
    const double ratio = static_cast<double>(n) / static_cast<double>(m);
    for (std::size_t k = 0; k < m; ++k) {
      const double lo = static_cast<double>(k) * ratio, hi = static_cast<double>(k + 1) * ratio;
      for (auto i = static_cast<std::size_t>(std::floor(lo)); i < n && static_cast<double>(i) < hi; ++i) {
        const double overlap = std::min(hi, static_cast<double>(i + 1)) - std::max(lo, static_cast<double>(i));
        if (overlap > 1e-12) w[k].emplace_back(i, overlap / ratio);
      }
    }
    return w;
  };
  const auto wr = weights(f.rows(), m_rows);
  const auto wc = weights(f.cols(), m_cols);
  Field tmp(f.rows(), m_cols, 0.0);
  for (std::size_t r = 0; r < f.rows(); ++r)
    for (std::size_t k = 0; k < m_cols; ++k) {
      double acc = 0.0;
      for (auto [i, w] : wc[k]) acc += w * f(r, i);
      tmp(r, k) = acc;
    }
  Field out(m_rows, m_cols, 0.0);
  for (std::size_t k = 0; k < m_rows; ++k)
    for (auto [i, w] : wr[k])
      for (std::size_t c = 0; c < m_cols; ++c) out(k, c) += w * tmp(i, c);
  return out;
}

inline DiffusionTensorField resample_tensor_field(const DiffusionTensorField& f, std::size_t m) {
  f.check_shape();
  if (f.rows() != f.cols()) throw ShapeError("resample_tensor_field: square fields only");
  if (m == f.rows()) return f;
  return {block_average(f.d_xx, m, m), block_average(f.d_yy, m, m), block_average(f.d_xy, m, m),
          f.dx * static_cast<double>(f.rows()) / static_cast<double>(m)};
}

// ---------------------------------------------------------------------------
// Substrate families
// ---------------------------------------------------------------------------

/// Field families used to build datasets: heterogeneous isotropic,
/// homogeneous anisotropic and heterogeneous anisotropic.
enum class SubstrateKind { HeI, HoA, HeA };

/// Dataset modes: one family, or all of them combined (C).
enum class Mode { HeI, HoA, HeA, C };

inline std::string_view to_string(SubstrateKind k) {
  switch (k) {
    case SubstrateKind::HeI: return "HeI";
    case SubstrateKind::HoA: return "HoA";
    case SubstrateKind::HeA: return "HeA";
  }
  return "?";
}

inline std::string_view to_string(Mode m) {
  switch (m) {
    case Mode::HeI: return "HeI";
    case Mode::HoA: return "HoA";
    case Mode::HeA: return "HeA";
    case Mode::C: return "C";
  }
  return "?";
}

inline Mode parse_mode(std::string_view s) {
  if (s == "HeI") return Mode::HeI;
  if (s == "HoA") return Mode::HoA;
  if (s == "HeA") return Mode::HeA;
  if (s == "C") return Mode::C;
  throw ValidationError("unknown mode '" + std::string(s) + "' (expected HeI, HoA, HeA or C)");
}

inline SubstrateKind parse_kind(std::string_view s) {
  const Mode m = parse_mode(s);
  if (m == Mode::C) throw ValidationError("'C' is a dataset mode, not a substrate kind");
  return static_cast<SubstrateKind>(static_cast<int>(m));
}

inline bool mode_includes(Mode mode, SubstrateKind kind) {
  return mode == Mode::C || static_cast<int>(mode) == static_cast<int>(kind);
}

/// Splits `count` simulations across the three families in the reference
/// proportions 107 : 186 : 36 (largest-remainder rounding).
inline std::array<std::size_t, 3> split_counts(std::size_t count) {
  constexpr std::array<std::size_t, 3> ref{107, 186, 36};
  constexpr std::size_t total = 107 + 186 + 36;
  std::array<std::size_t, 3> out{};
  std::array<double, 3> rem{};
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < 3; ++i) {
    const double exact = static_cast<double>(count) * static_cast<double>(ref[i]) / static_cast<double>(total);
    out[i] = static_cast<std::size_t>(std::floor(exact));
    rem[i] = exact - static_cast<double>(out[i]);
    assigned += out[i];
  }
  while (assigned < count) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < 3; ++i)
      if (rem[i] > rem[best]) best = i;
    ++out[best];
    rem[best] = -1.0;
    ++assigned;
  }
  return out;
}

struct SubstrateConfig {
  ScarConfig scar;
  FibreConfig fibre;
  double anisotropy = kDefaultAnisotropy;
  double d_l = kHealthyDiffusivity;
};

struct Substrate {
  SubstrateKind kind = SubstrateKind::HeI;
  std::optional<ScarMap> scar;
  std::optional<FibreAngleField> fibre;
  DiffusionTensorField tensor;
};

/// Builds one substrate of the given family on an n x n grid. The scar and
/// fibre components draw from fixed sub-streams of `seed`, so a heterogeneous
/// anisotropic substrate is exactly the superposition of the HeI scar and the
/// HoA fibre field generated from the same seed.
inline Substrate generate_substrate(SubstrateKind kind, std::uint64_t seed, std::size_t n, double dx,
                                    SubstrateConfig cfg = {}) {
  cfg.scar.n = n;
  Substrate s;
  s.kind = kind;
  if (kind != SubstrateKind::HoA) s.scar = gen_scar_map(derive_seed(seed, {1}), cfg.scar);
  if (kind != SubstrateKind::HeI) s.fibre = gen_fibre_field(derive_seed(seed, {2}), n, cfg.fibre);
  const auto aniso = AnisotropyParams::homogeneous(n, cfg.d_l, cfg.anisotropy);
  s.tensor = tensor_from(s.scar ? &*s.scar : nullptr, s.fibre ? &*s.fibre : nullptr, aniso, dx);
  return s;
}

}  // namespace cardiomap

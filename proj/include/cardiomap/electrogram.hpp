#pragma once

#include <cmath>
#include <cstddef>
#include <fstream>
#include <map>
#include <numbers>
#include <utility>
#include <vector>

#include "cardiomap/error.hpp"
#include "cardiomap/grid.hpp"
#include "cardiomap/io.hpp"
#include "cardiomap/substrate.hpp"

namespace cardiomap {

inline constexpr double kDefaultSigmaE = 20.0;  // mS/cm

struct Probe {
  double x = 0.0, y = 0.0, z = 0.1;  // cm; x right, y down, z above the tissue
};

/// Regular array of point electrodes. `origin` is the position of electrode
/// (0, 0); electrode (r, c) sits at origin + (c, r) * spacing.
struct ElectrodeGrid {
  std::size_t rows = 29, cols = 29;
  double spacing_cm = 0.4;
  double z_cm = 0.1;
  double origin_x_cm = 0.4, origin_y_cm = 0.4;

  /// Grid centred in a width x height domain with equal margins.
  static ElectrodeGrid centered(double width_cm, double height_cm, std::size_t rows = 29, std::size_t cols = 29,
                                double spacing_cm = 0.4, double z_cm = 0.1) {
    ElectrodeGrid g{rows, cols, spacing_cm, z_cm, 0.0, 0.0};
    g.origin_x_cm = 0.5 * (width_cm - spacing_cm * static_cast<double>(cols - 1));
    g.origin_y_cm = 0.5 * (height_cm - spacing_cm * static_cast<double>(rows - 1));
    return g;
  }

  std::size_t size() const noexcept { return rows * cols; }

  Probe probe(std::size_t r, std::size_t c) const {
    return {origin_x_cm + spacing_cm * static_cast<double>(c), origin_y_cm + spacing_cm * static_cast<double>(r), z_cm};
  }

  void validate(double width_cm, double height_cm) const {
    if (rows == 0 || cols == 0) throw ConfigError("electrode grid must be non-empty");
    if (!(spacing_cm > 0.0)) throw ConfigError("electrode spacing must be positive");
    if (!(z_cm > 0.0)) throw ConfigError("electrode height z must be > 0 (singular integrand at z = 0)");
    const double eps = 1e-9;
    const double x1 = origin_x_cm + spacing_cm * static_cast<double>(cols - 1);
    const double y1 = origin_y_cm + spacing_cm * static_cast<double>(rows - 1);
    if (origin_x_cm < -eps || origin_y_cm < -eps || x1 > width_cm + eps || y1 > height_cm + eps)
      throw ConfigError("electrode grid footprint does not fit inside the domain");
  }
};

inline void to_json(json& j, const ElectrodeGrid& g) {
  j = {{"rows", g.rows},   {"cols", g.cols},           {"spacing_cm", g.spacing_cm},
       {"z_cm", g.z_cm},   {"origin_cm", {g.origin_x_cm, g.origin_y_cm}}};
}

inline void from_json(const json& j, ElectrodeGrid& g) {
  g.rows = j.at("rows").get<std::size_t>();
  g.cols = j.at("cols").get<std::size_t>();
  g.spacing_cm = j.at("spacing_cm").get<double>();
  g.z_cm = j.at("z_cm").get<double>();
  const auto o = j.at("origin_cm").get<std::vector<double>>();
  if (o.size() != 2) throw ValidationError("origin_cm must have two entries");
  g.origin_x_cm = o[0];
  g.origin_y_cm = o[1];
}

/// T x rows x cols electrogram samples, row-major by electrode.
struct EgmArray {
  std::vector<double> data;
  std::size_t frames = 0;
  ElectrodeGrid grid;
  double sample_interval_ms = 1.0;
  double sigma_e = kDefaultSigmaE;

  double at(std::size_t t, std::size_t r, std::size_t c) const { return data[(t * grid.rows + r) * grid.cols + c]; }
  const double* frame(std::size_t t) const { return data.data() + t * grid.size(); }

  Field frame_field(std::size_t t) const {
    Field f(grid.rows, grid.cols);
    std::copy(frame(t), frame(t) + grid.size(), f.data());
    return f;
  }

  std::vector<double> trace(std::size_t r, std::size_t c) const {
    std::vector<double> out(frames);
    for (std::size_t t = 0; t < frames; ++t) out[t] = at(t, r, c);
    return out;
  }
};

/// Gradient of a cell-centred field: central differences inside, second-order
/// one-sided differences on the outermost cells.
inline void gradient(const Field& f, double dx, Field& gx, Field& gy) {
  const std::size_t R = f.rows(), C = f.cols();
  if (R < 3 || C < 3) throw ShapeError("gradient needs at least 3x3 cells");
  if (!gx.same_shape(f)) gx = Field(R, C);
  if (!gy.same_shape(f)) gy = Field(R, C);
  const double h = 0.5 / dx;
  for (std::size_t r = 0; r < R; ++r) {
    const double* p = f.row(r);
    double* o = gx.row(r);
    o[0] = (-3.0 * p[0] + 4.0 * p[1] - p[2]) * h;
    for (std::size_t c = 1; c + 1 < C; ++c) o[c] = (p[c + 1] - p[c - 1]) * h;
    o[C - 1] = (3.0 * p[C - 1] - 4.0 * p[C - 2] + p[C - 3]) * h;
  }
  for (std::size_t c = 0; c < C; ++c) {
    gy(0, c) = (-3.0 * f(0, c) + 4.0 * f(1, c) - f(2, c)) * h;
    gy(R - 1, c) = (3.0 * f(R - 1, c) - 4.0 * f(R - 2, c) + f(R - 3, c)) * h;
  }
  for (std::size_t r = 1; r + 1 < R; ++r) {
    const double* a = f.row(r - 1);
    const double* b = f.row(r + 1);
    double* o = gy.row(r);
    for (std::size_t c = 0; c < C; ++c) o[c] = (b[c] - a[c]) * h;
  }
}

/// Extracellular potential at one probe by the rectangle rule:
///   phi = sum_cells grad V_m . (p - x') / (4 pi sigma_e |p - x'|^3) dx^2
inline double phi_e_at(const Field& vm, double dx, const Probe& probe, double sigma_e = kDefaultSigmaE) {
  if (!(probe.z > 0.0)) throw ValidationError("phi_e_at: probe must be above the tissue (z > 0)");
  if (!(sigma_e > 0.0)) throw ValidationError("phi_e_at: sigma_e must be positive");
  Field gx, gy;
  gradient(vm, dx, gx, gy);
  const double scale = dx * dx / (4.0 * std::numbers::pi * sigma_e);
  const double z2 = probe.z * probe.z;
  double acc = 0.0;
  for (std::size_t r = 0; r < vm.rows(); ++r) {
    const double ry = probe.y - (static_cast<double>(r) + 0.5) * dx;
    for (std::size_t c = 0; c < vm.cols(); ++c) {
      const double rx = probe.x - (static_cast<double>(c) + 0.5) * dx;
      const double d2 = rx * rx + ry * ry + z2;
      acc += (gx(r, c) * rx + gy(r, c) * ry) / (d2 * std::sqrt(d2));
    }
  }
  return acc * scale;
}

/// Electrode array evaluation with precomputed kernels. The kernel depends on
/// the electrode only through its offset from the cell lattice, so electrodes
/// sharing a sub-cell offset share one table covering every cell-to-electrode
/// displacement. `coarsen` > 1 integrates over block-averaged frames.
class EgmRecorder {
 public:
  EgmRecorder(ElectrodeGrid grid, std::size_t rows, std::size_t cols, double dx, double sigma_e = kDefaultSigmaE,
              std::size_t coarsen = 1)
      : grid_(grid), rows_(rows), cols_(cols), coarsen_(coarsen), sigma_e_(sigma_e) {
    if (!(dx > 0.0)) throw ConfigError("egm: dx must be positive");
    if (!(sigma_e > 0.0)) throw ConfigError("egm: sigma_e must be positive");
    if (coarsen == 0 || rows % coarsen != 0 || cols % coarsen != 0)
      throw ConfigError("egm: coarsening factor must divide the grid size");
    grid_.validate(dx * static_cast<double>(cols), dx * static_cast<double>(rows));
    cr_ = rows / coarsen;
    cc_ = cols / coarsen;
    dxc_ = dx * static_cast<double>(coarsen);
    if (cr_ < 3 || cc_ < 3) throw ConfigError("egm: integration grid must be at least 3x3");
    build_tables();
  }

  const ElectrodeGrid& grid() const noexcept { return grid_; }
  double sigma_e() const noexcept { return sigma_e_; }
  std::size_t table_count() const noexcept { return tables_.size(); }

  /// One potential per electrode, row-major, into out[0 .. grid.size()).
  void sample(const Field& vm, double* out) const {
    if (vm.rows() != rows_ || vm.cols() != cols_) throw ShapeError("egm: frame shape mismatch");
    Field gx, gy;
    if (coarsen_ == 1) {
      gradient(vm, dxc_, gx, gy);
    } else {
      gradient(block_average(vm, cr_, cc_), dxc_, gx, gy);
    }
    const std::ptrdiff_t ne = static_cast<std::ptrdiff_t>(sites_.size());
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t e = 0; e < ne; ++e) out[e] = evaluate(sites_[static_cast<std::size_t>(e)], gx, gy);
  }

  std::vector<double> sample(const Field& vm) const {
    std::vector<double> out(grid_.size());
    sample(vm, out.data());
    return out;
  }

 private:
  struct Table {
    std::vector<double> kx, ky;  // (2 cr + 1) x (2 cc + 1), indexed by (cell - base) + (cr, cc)
  };
  struct Site {
    std::size_t table;
    std::ptrdiff_t base_r, base_c;
  };

  void build_tables() {
    std::map<std::pair<long long, long long>, std::size_t> index;
    const double q = 1e9;
    for (std::size_t r = 0; r < grid_.rows; ++r)
      for (std::size_t c = 0; c < grid_.cols; ++c) {
        const Probe p = grid_.probe(r, c);
        // Electrode position in cell units relative to cell-centre lattice.
        const double ux = p.x / dxc_ - 0.5, uy = p.y / dxc_ - 0.5;
        const double bx = std::floor(ux), by = std::floor(uy);
        double fx = ux - bx, fy = uy - by;
        const auto key = std::make_pair(std::llround(fx * q), std::llround(fy * q));
        auto it = index.find(key);
        if (it == index.end()) {
          it = index.emplace(key, tables_.size()).first;
          tables_.push_back(make_table(fx, fy));
        }
        sites_.push_back({it->second, static_cast<std::ptrdiff_t>(by), static_cast<std::ptrdiff_t>(bx)});
      }
  }

  Table make_table(double fx, double fy) const {
    const std::size_t tr = 2 * cr_ + 1, tc = 2 * cc_ + 1;
    Table t{std::vector<double>(tr * tc), std::vector<double>(tr * tc)};
    const double scale = dxc_ * dxc_ / (4.0 * std::numbers::pi * sigma_e_);
    const double z2 = grid_.z_cm * grid_.z_cm;
    for (std::size_t i = 0; i < tr; ++i) {
      const double ry = (fy - (static_cast<double>(i) - static_cast<double>(cr_))) * dxc_;
      for (std::size_t j = 0; j < tc; ++j) {
        const double rx = (fx - (static_cast<double>(j) - static_cast<double>(cc_))) * dxc_;
        const double d2 = rx * rx + ry * ry + z2;
        const double w = scale / (d2 * std::sqrt(d2));
        t.kx[i * tc + j] = rx * w;
        t.ky[i * tc + j] = ry * w;
      }
    }
    return t;
  }

  double evaluate(const Site& s, const Field& gx, const Field& gy) const {
    const Table& t = tables_[s.table];
    const std::size_t tc = 2 * cc_ + 1;
    double acc = 0.0;
    for (std::size_t r = 0; r < cr_; ++r) {
      const std::size_t i = static_cast<std::size_t>(static_cast<std::ptrdiff_t>(r) - s.base_r +
                                                     static_cast<std::ptrdiff_t>(cr_));
      const std::size_t j0 = static_cast<std::size_t>(static_cast<std::ptrdiff_t>(cc_) - s.base_c);
      const double* kx = t.kx.data() + i * tc + j0;
      const double* ky = t.ky.data() + i * tc + j0;
      const double* ax = gx.row(r);
      const double* ay = gy.row(r);
      double row_acc = 0.0;
      for (std::size_t c = 0; c < cc_; ++c) row_acc += ax[c] * kx[c] + ay[c] * ky[c];
      acc += row_acc;
    }
    return acc;
  }

  ElectrodeGrid grid_;
  std::size_t rows_, cols_, coarsen_;
  double sigma_e_;
  std::size_t cr_ = 0, cc_ = 0;
  double dxc_ = 0.0;
  std::vector<Table> tables_;
  std::vector<Site> sites_;
};

/// Accepts V_m frames at a fixed cadence and keeps one sample per electrode
/// every sample_interval_ms. The frame interval must divide the sample
/// interval.
class EgmStream {
 public:
  EgmStream(const EgmRecorder& rec, double frame_interval_ms, double sample_interval_ms = 1.0) : rec_(rec) {
    if (!(frame_interval_ms > 0.0) || !(sample_interval_ms > 0.0))
      throw ConfigError("egm: intervals must be positive");
    const double ratio = sample_interval_ms / frame_interval_ms;
    stride_ = static_cast<std::size_t>(std::llround(ratio));
    if (stride_ < 1 || std::abs(ratio - static_cast<double>(stride_)) > 1e-9 * ratio)
      throw ConfigError("egm: frame cadence (" + std::to_string(frame_interval_ms) +
                        " ms) must evenly divide the sample interval (" + std::to_string(sample_interval_ms) + " ms)");
    out_.grid = rec.grid();
    out_.sigma_e = rec.sigma_e();
    out_.sample_interval_ms = sample_interval_ms;
  }

  void push(const Field& vm) {
    if (++seen_ % stride_ != 0) return;
    const std::size_t n = out_.grid.size();
    out_.data.resize(out_.data.size() + n);
    rec_.sample(vm, out_.data.data() + out_.frames * n);
    ++out_.frames;
  }

  const EgmArray& result() const noexcept { return out_; }
  EgmArray take() { return std::move(out_); }

 private:
  const EgmRecorder& rec_;
  std::size_t stride_ = 1;
  std::size_t seen_ = 0;
  EgmArray out_;
};

inline EgmArray record_grid(const std::vector<Field>& frames, double frame_interval_ms, double dx,
                            const ElectrodeGrid& grid, double sigma_e = kDefaultSigmaE, std::size_t coarsen = 1) {
  if (frames.empty()) {
    EgmArray empty;
    empty.grid = grid;
    empty.sigma_e = sigma_e;
    return empty;
  }
  EgmRecorder rec(grid, frames.front().rows(), frames.front().cols(), dx, sigma_e, coarsen);
  EgmStream stream(rec, frame_interval_ms);
  for (const auto& f : frames) stream.push(f);
  return stream.take();
}

// ---------------------------------------------------------------------------
// Files
// ---------------------------------------------------------------------------

inline void save_egm(const fs::path& stem, const EgmArray& egm) {
  std::vector<float> buf(egm.data.begin(), egm.data.end());
  const auto data = data_path(stem, ".f32");
  write_raw(data, buf.data(), buf.size());
  json g = egm.grid;
  write_json(sidecar_path(stem), {{"kind", "egm"},
                                  {"data", data.filename().string()},
                                  {"dtype", "float32"},
                                  {"shape", {egm.frames, egm.grid.rows, egm.grid.cols}},
                                  {"sample_interval_ms", egm.sample_interval_ms},
                                  {"spacing_cm", egm.grid.spacing_cm},
                                  {"z_cm", egm.grid.z_cm},
                                  {"sigma_e", egm.sigma_e},
                                  {"origin_cm", g["origin_cm"]}});
}

inline EgmArray load_egm(const fs::path& stem) {
  const json j = read_json(sidecar_path(stem));
  require_kind(j, "egm", sidecar_path(stem));
  const auto shape = j.at("shape").get<std::vector<std::size_t>>();
  if (shape.size() != 3) throw ShapeError(stem.string() + ": egm shape must be [frames, rows, cols]");
  EgmArray egm;
  egm.frames = shape[0];
  egm.grid.rows = shape[1];
  egm.grid.cols = shape[2];
  egm.grid.spacing_cm = j.at("spacing_cm").get<double>();
  egm.grid.z_cm = j.at("z_cm").get<double>();
  const auto o = j.at("origin_cm").get<std::vector<double>>();
  egm.grid.origin_x_cm = o.at(0);
  egm.grid.origin_y_cm = o.at(1);
  egm.sample_interval_ms = j.at("sample_interval_ms").get<double>();
  egm.sigma_e = j.at("sigma_e").get<double>();
  const auto raw = read_raw<float>(data_path(stem, ".f32"), shape_count(shape));
  egm.data.assign(raw.begin(), raw.end());
  return egm;
}

/// Two-column CSV (time, potential) for one electrode; one row per sample.
inline void write_egm_csv(const fs::path& path, const EgmArray& egm, std::size_t r, std::size_t c) {
  if (r >= egm.grid.rows || c >= egm.grid.cols) throw ValidationError("electrode index out of range");
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot open " + path.string());
  out << "t_ms,phi\n";
  out.precision(9);
  for (std::size_t t = 0; t < egm.frames; ++t)
    out << static_cast<double>(t + 1) * egm.sample_interval_ms << ',' << egm.at(t, r, c) << '\n';
}

}  // namespace cardiomap

#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "cardiomap/diffusion.hpp"
#include "cardiomap/error.hpp"
#include "cardiomap/fenton_karma.hpp"
#include "cardiomap/grid.hpp"
#include "cardiomap/substrate.hpp"

namespace cardiomap {

/// Periodic rectangular current injection. The region is given in cm from
/// the top-left corner of the domain.
struct StimulusProtocol {
  double x_cm = 0.0;
  double y_cm = 0.0;
  double width_cm = 1.0;
  double height_cm = 1.0;
  double period_ms = 150.0;
  double pulse_width_ms = 2.0;
  double amplitude = 0.3;  // dimensionless rate, 1/ms
  double start_ms = 0.0;

  bool active(double t_ms) const noexcept {
    if (t_ms < start_ms) return false;
    return std::fmod(t_ms - start_ms, period_ms) < pulse_width_ms;
  }
};

struct SimConfig {
  double dx = 0.01;             // cm
  double dt = 0.01;             // ms
  double duration_ms = 1000.0;
  double record_every_ms = 1.0;
  DiffusionTensorField tensor;
  FkParams params;
  StimulusProtocol stimulus;
  bool ionic = true;                  // false: pure diffusion (for conservation checks)
  bool stimulate = true;
  double activation_threshold = 0.5;  // u level that defines an activation time

  std::int64_t total_steps() const { return static_cast<std::int64_t>(std::llround(duration_ms / dt)); }

  std::int64_t record_stride() const {
    const auto k = static_cast<std::int64_t>(std::llround(record_every_ms / dt));
    if (k < 1 || std::abs(static_cast<double>(k) * dt - record_every_ms) > 1e-9 * record_every_ms)
      throw ConfigError("record_every_ms must be a positive multiple of dt");
    return k;
  }

  /// Largest stable explicit step: dx^2 / (4 max eigenvalue of D).
  double stable_dt() const {
    const double lmax = tensor.max_eigenvalue();
    return lmax > 0.0 ? dx * dx / (4.0 * lmax) : std::numeric_limits<double>::infinity();
  }

  void validate() const {
    if (!(dx > 0.0) || !(dt > 0.0)) throw ConfigError("dx and dt must be positive");
    if (duration_ms < 0.0) throw ConfigError("duration must be non-negative");
    tensor.check_shape();
    if (tensor.rows() < 3 || tensor.cols() < 3) throw ConfigError("grid must be at least 3x3");
    if (std::abs(tensor.dx - dx) > 1e-12 * dx) throw ConfigError("tensor cell size differs from dx");
    if (!tensor.is_psd()) throw ConfigError("diffusion tensor is not positive semi-definite everywhere");
    params.validate();
    if (dt > stable_dt() * (1.0 + 1e-12))
      throw ConfigError("dt = " + std::to_string(dt) + " ms exceeds the explicit stability limit " +
                        std::to_string(stable_dt()) + " ms");
    if (ionic && dt > 0.5 * params.min_time_constant())
      throw ConfigError("dt exceeds half the smallest ionic time constant");
    if (stimulate) {
      const auto& s = stimulus;
      if (!(s.period_ms > s.pulse_width_ms && s.pulse_width_ms > 0.0))
        throw ConfigError("stimulus needs period > pulse width > 0");
      const double w = dx * static_cast<double>(tensor.cols()), h = dx * static_cast<double>(tensor.rows());
      if (s.x_cm < 0.0 || s.y_cm < 0.0 || s.x_cm + s.width_cm > w + 1e-9 || s.y_cm + s.height_cm > h + 1e-9)
        throw ConfigError("stimulus region lies outside the domain");
    }
    record_stride();
  }
};

struct SimState {
  Field u, v, w;
  double t = 0.0;  // ms

  static SimState rest(std::size_t rows, std::size_t cols) {
    return {Field(rows, cols, 0.0), Field(rows, cols, 1.0), Field(rows, cols, 1.0), 0.0};
  }
};

struct RunSummary {
  double u_min = 0.0;
  double u_max = 0.0;
  double activation_coverage = 0.0;  // fraction of cells that reached the activation threshold
  double wall_time_s = 0.0;
  std::size_t frames = 0;
  std::int64_t steps = 0;
  std::int64_t soft_bound_steps = 0;  // steps with u outside [-0.1, 1.2]
  Field activation_ms;                // first activation time; NaN where never reached
};

/// V_m frame in mV and its time stamp.
using FrameSink = std::function<void(const Field& vm_mv, double t_ms)>;

/// Forward-Euler monodomain integrator holding its own state.
class Simulator {
 public:
  explicit Simulator(SimConfig cfg) : Simulator(std::move(cfg), std::nullopt) {}
  Simulator(SimConfig cfg, std::optional<SimState> initial)
      : cfg_((cfg.validate(), std::move(cfg))),
        op_(cfg_.tensor, cfg_.dx),
        state_(initial ? std::move(*initial) : SimState::rest(cfg_.tensor.rows(), cfg_.tensor.cols())),
        div_(cfg_.tensor.rows(), cfg_.tensor.cols()),
        next_u_(cfg_.tensor.rows(), cfg_.tensor.cols()),
        scratch_(cfg_.tensor.rows() * cfg_.tensor.cols()),
        stim_(cfg_.tensor.rows(), cfg_.tensor.cols(), 0),
        activation_(cfg_.tensor.rows(), cfg_.tensor.cols(), std::numeric_limits<double>::quiet_NaN()) {
    if (!state_.u.same_shape(div_) || !state_.v.same_shape(div_) || !state_.w.same_shape(div_))
      throw ShapeError("initial state does not match the tensor grid");
    const auto& s = cfg_.stimulus;
    for (std::size_t r = 0; r < stim_.rows(); ++r)
      for (std::size_t c = 0; c < stim_.cols(); ++c) {
        const double x = (static_cast<double>(c) + 0.5) * cfg_.dx;
        const double y = (static_cast<double>(r) + 0.5) * cfg_.dx;
        stim_(r, c) = x >= s.x_cm && x <= s.x_cm + s.width_cm && y >= s.y_cm && y <= s.y_cm + s.height_cm;
      }
    steps_ = static_cast<std::int64_t>(std::llround(state_.t / cfg_.dt));
    t0_steps_ = steps_;
    const auto [lo, hi] = std::minmax_element(state_.u.begin(), state_.u.end());
    u_min_ = *lo;
    u_max_ = *hi;
  }

  const SimConfig& config() const noexcept { return cfg_; }
  const SimState& state() const noexcept { return state_; }
  std::int64_t steps_taken() const noexcept { return steps_ - t0_steps_; }
  const Field& activation_times() const noexcept { return activation_; }
  double u_min() const noexcept { return u_min_; }
  double u_max() const noexcept { return u_max_; }
  std::int64_t soft_bound_steps() const noexcept { return soft_violations_; }

  /// Advances one dt. Throws InstabilityError on any non-finite value.
  void step() {
    const double dt = cfg_.dt;
    const double t = state_.t;
    const bool stim_on = cfg_.stimulate && cfg_.stimulus.active(t);
    const double stim_rate = stim_on ? cfg_.stimulus.amplitude / cfg_.params.C_m : 0.0;
    const double t_next = static_cast<double>(steps_ + 1) * dt;
    const double thr = cfg_.activation_threshold;

    op_.apply(state_.u, div_);

    const std::size_t n = div_.size();
    double* u = state_.u.data();
    double* v = state_.v.data();
    double* w = state_.w.data();
    double* un = next_u_.data();
    const double* d = div_.data();
    const unsigned char* st = stim_.data();

    if (cfg_.ionic) {
      const FkParams& p = cfg_.params;
      // exp(-2k(u - u_c_si)) for the slow inward current, vectorized.
      Eigen::Map<const Eigen::ArrayXd> u_arr(u, static_cast<Eigen::Index>(n));
      Eigen::Map<Eigen::ArrayXd> e_arr(scratch_.data(), static_cast<Eigen::Index>(n));
      e_arr = (-2.0 * p.k * (u_arr - p.u_c_si)).exp();
      const double* e = scratch_.data();
      const double uc = p.u_c, uv = p.u_v;
      const double inv_td = 1.0 / p.tau_d, inv_t0 = 1.0 / p.tau_0, inv_tr = 1.0 / p.tau_r;
      const double inv_tsi = 1.0 / p.tau_si, inv_tvp = 1.0 / p.tau_v_plus;
      const double inv_tv1 = 1.0 / p.tau_v1_minus, inv_tv2 = 1.0 / p.tau_v2_minus;
      const double inv_twp = 1.0 / p.tau_w_plus, inv_twm = 1.0 / p.tau_w_minus;
      for (std::size_t i = 0; i < n; ++i) {
        const double ui = u[i], vi = v[i], wi = w[i];
        const double above = ui >= uc ? 1.0 : 0.0;
        const double below = ui <= uc ? 1.0 : 0.0;
        const double j_fi = -above * (1.0 - ui) * (ui - uc) * vi * inv_td;
        const double j_so = below * ui * inv_t0 + above * inv_tr;
        const double j_si = -wi * inv_tsi / (1.0 + e[i]);
        const double inv_tvm = ui >= uv ? inv_tv1 : inv_tv2;
        const double stim = st[i] ? stim_rate : 0.0;
        un[i] = ui + dt * (d[i] - (j_fi + j_so + j_si) + stim);
        v[i] = vi + dt * (below * (1.0 - vi) * inv_tvm - above * vi * inv_tvp);
        w[i] = wi + dt * (below * (1.0 - wi) * inv_twm - above * wi * inv_twp);
      }
    } else {
      for (std::size_t i = 0; i < n; ++i) un[i] = u[i] + dt * (d[i] + (st[i] ? stim_rate : 0.0));
    }

    double lo = std::numeric_limits<double>::infinity(), hi = -lo, check = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      lo = std::min(lo, un[i]);
      hi = std::max(hi, un[i]);
      check += un[i] + v[i] + w[i];
    }
    double* act = activation_.data();
    for (std::size_t i = 0; i < n; ++i)
      if (un[i] >= thr && std::isnan(act[i])) act[i] = t_next;
    ++steps_;
    if (!std::isfinite(check))
      throw InstabilityError(steps_, "non-finite state at t = " + std::to_string(t_next) + " ms");
    std::swap(state_.u, next_u_);
    state_.t = t_next;
    u_min_ = std::min(u_min_, lo);
    u_max_ = std::max(u_max_, hi);
    if (lo < -0.1 || hi > 1.2) ++soft_violations_;
  }

  /// Transmembrane voltage in mV.
  void membrane_potential(Field& vm) const {
    if (!vm.same_shape(state_.u)) vm = Field(state_.u.rows(), state_.u.cols());
    for (std::size_t i = 0; i < vm.size(); ++i) vm.data()[i] = cfg_.params.to_millivolts(state_.u.data()[i]);
  }

 private:
  SimConfig cfg_;
  DiffusionOperator op_;
  SimState state_;
  Field div_, next_u_;
  std::vector<double> scratch_;
  Mask stim_;
  Field activation_;
  std::int64_t steps_ = 0, t0_steps_ = 0;
  double u_min_ = 0.0, u_max_ = 0.0;
  std::int64_t soft_violations_ = 0;
};

inline SimState step(const SimState& s, const SimConfig& cfg) {
  Simulator sim(cfg, s);
  sim.step();
  return sim.state();
}

/// Runs from rest for the configured duration, handing a V_m frame to `sink`
/// every record_every_ms (the first at t = record_every_ms).
inline RunSummary run(const SimConfig& cfg, const FrameSink& sink) {
  const auto start = std::chrono::steady_clock::now();
  Simulator sim(cfg);
  const std::int64_t total = cfg.total_steps();
  const std::int64_t stride = cfg.record_stride();
  RunSummary summary;
  Field vm;
  for (std::int64_t k = 1; k <= total; ++k) {
    sim.step();
    if (k % stride == 0) {
      sim.membrane_potential(vm);
      if (sink) sink(vm, sim.state().t);
      ++summary.frames;
    }
  }
  summary.u_min = sim.u_min();
  summary.u_max = sim.u_max();
  summary.steps = sim.steps_taken();
  summary.soft_bound_steps = sim.soft_bound_steps();
  summary.activation_ms = sim.activation_times();
  std::size_t active = 0;
  for (double a : summary.activation_ms) active += !std::isnan(a);
  summary.activation_coverage =
      summary.activation_ms.empty() ? 0.0
                                    : static_cast<double>(active) / static_cast<double>(summary.activation_ms.size());
  summary.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return summary;
}

}  // namespace cardiomap

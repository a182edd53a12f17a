// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fail.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include "cardiomap/dataset.hpp"
#include "cardiomap/diffusion.hpp"
#include "cardiomap/dtcwt.hpp"
#include "cardiomap/electrogram.hpp"
#include "cardiomap/solver.hpp"
#include "cardiomap/surrogate.hpp"
#include "oracles.hpp"

using namespace cardiomap;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// Least-squares slope of position against activation time.
double fit_speed(const std::vector<double>& pos, const std::vector<double>& t) {
  double mp = 0.0, mt = 0.0;
  for (std::size_t i = 0; i < pos.size(); ++i) {
    mp += pos[i];
    mt += t[i];
  }
  mp /= static_cast<double>(pos.size());
  mt /= static_cast<double>(pos.size());
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < pos.size(); ++i) {
    num += (t[i] - mt) * (pos[i] - mp);
    den += (t[i] - mt) * (t[i] - mt);
  }
  return num / den;
}

// Conduction velocity of a plane wave launched from the left edge (along x)
// or top edge (along y), measured on the middle line between from_cm and to_cm.
double planar_cv(const DiffusionTensorField& d, double dx, double dt, bool along_x, double from_cm, double to_cm,
                 double duration_ms) {
  SimConfig c;
  c.dx = dx;
  c.dt = dt;
  c.tensor = d;
  c.duration_ms = duration_ms;
  c.record_every_ms = 1.0;
  const double w = dx * static_cast<double>(d.cols()), h = dx * static_cast<double>(d.rows());
  c.stimulus = along_x ? StimulusProtocol{0.0, 0.0, 0.1, h} : StimulusProtocol{0.0, 0.0, w, 0.1};
  c.stimulus.period_ms = 1000.0;
  const RunSummary s = run(c, nullptr);
  std::vector<double> pos, t;
  const std::size_t len = along_x ? d.cols() : d.rows();
  for (std::size_t k = 0; k < len; ++k) {
    const double x = (static_cast<double>(k) + 0.5) * dx;
    if (x < from_cm || x > to_cm) continue;
    const double a = along_x ? s.activation_ms(d.rows() / 2, k) : s.activation_ms(k, d.cols() / 2);
    if (std::isnan(a)) return std::nan("");
    pos.push_back(x);
    t.push_back(a);
  }
  return fit_speed(pos, t);
}

Outcome p1_egm_oracle() {
  const auto t0 = Clock::now();
  const std::size_t n = 64;
  const double h = 0.01;
  const ElectrodeGrid g{7, 7, 0.09, 0.1, 0.047, 0.053};
  const EgmRecorder rec(g, n, n, h);
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Field f = oracle::random_frame(1000 + seed, n);
    const auto got = rec.sample(f);
    for (std::size_t r = 0; r < g.rows; ++r)
      for (std::size_t c = 0; c < g.cols; ++c) {
        const Probe p = g.probe(r, c);
        const double want = oracle::naive_phi(f, h, p.x, p.y, p.z, kDefaultSigmaE);
        worst = std::max(worst, std::abs(got[r * g.cols + c] - want) / std::abs(want));
      }
  }
  const double secs = seconds_since(t0);
  return {worst <= 1e-6 && secs < 10.0, fmt("max relative error %.2e over 20 frames x 49 electrodes, %.2f s", worst, secs)};
}

Outcome p2_diffusion_oracle() {
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const double h = 0.01;
    const auto d = oracle::random_spd(500 + seed, 64, 64, h);
    const Field u = oracle::random_smooth(600 + seed, 64, 64);
    const Field got = diffusion_term(u, d, h);
    const Eigen::VectorXd want =
        oracle::assemble(d, h) * Eigen::Map<const Eigen::VectorXd>(u.data(), static_cast<Eigen::Index>(u.size()));
    for (std::size_t i = 0; i < u.size(); ++i)
      worst = std::max(worst, std::abs(got.data()[i] - want(static_cast<Eigen::Index>(i))));
  }
  return {worst <= 1e-10, fmt("max abs difference %.2e on 5 random 64x64 SPD fields", worst)};
}

Outcome p3_conservation() {
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    SimConfig c;
    c.tensor = oracle::random_spd(700 + seed, 64, 64, 0.01);
    c.ionic = false;
    c.stimulate = false;
    c.dt = 0.9 * c.stable_dt();
    c.record_every_ms = 100.0 * c.dt;
    Rng rng(seed);
    std::uniform_real_distribution<double> U(0.0, 1.0);
    SimState s = SimState::rest(64, 64);
    for (auto& u : s.u) u = U(rng);
    Simulator sim(c, s);
    double before = 0.0, after = 0.0;
    for (double u : sim.state().u) before += u;
    for (int k = 0; k < 1000; ++k) sim.step();
    for (double u : sim.state().u) after += u;
    worst = std::max(worst, std::abs(after - before) / before);
  }
  return {worst <= 1e-6, fmt("max relative drift of sum(u) %.2e after 1000 steps", worst)};
}

Outcome p4_anisotropy() {
  const auto t0 = Clock::now();
  const std::size_t n = 300;
  const double dx = 0.01;
  const FibreAngleField straight{Field(n, n, 0.0), {}};
  const auto d = tensor_from(nullptr, &straight, AnisotropyParams::homogeneous(n), dx);
  const double cv_l = planar_cv(d, dx, 0.01, true, 1.0, 2.5, 80.0);
  const double cv_t = planar_cv(d, dx, 0.01, false, 1.0, 2.5, 150.0);
  const double ratio = cv_l / cv_t;
  const double secs = seconds_since(t0);
  return {std::abs(ratio - 2.0) <= 0.2 && secs < 120.0,
          fmt("CV along %.4f, across %.4f cm/ms, ratio %.3f (target 2 +/- 0.2), %.1f s", cv_l, cv_t, ratio, secs)};
}

Outcome p5_scar_effect() {
  const std::size_t n = 300;
  const double dx = 0.01, L = dx * n;
  const double scar_r = 0.7, mid = 0.5 * L;
  const Probe over_scar{mid, mid, 0.1}, healthy{0.6, L - 0.6, 0.1};
  struct Result {
    double far_corner_ms, pp_scar, pp_healthy;
  };
  auto simulate = [&](bool with_scar) {
    SimConfig c;
    c.dx = dx;
    c.tensor = DiffusionTensorField::isotropic(n, n, kHealthyDiffusivity, dx);
    if (with_scar)
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t k = 0; k < n; ++k) {
          const double x = (k + 0.5) * dx - mid, y = (r + 0.5) * dx - mid;
          if (x * x + y * y <= scar_r * scar_r) {
            c.tensor.d_xx(r, k) = kScarDiffusivity;
            c.tensor.d_yy(r, k) = kScarDiffusivity;
          }
        }
    c.duration_ms = 160.0;
    c.stimulus = {0.0, 0.0, 0.25, 0.25};
    double lo_s = 1e300, hi_s = -1e300, lo_h = 1e300, hi_h = -1e300;
    const RunSummary s = run(c, [&](const Field& vm, double) {
      const double a = phi_e_at(vm, dx, over_scar), b = phi_e_at(vm, dx, healthy);
      lo_s = std::min(lo_s, a);
      hi_s = std::max(hi_s, a);
      lo_h = std::min(lo_h, b);
      hi_h = std::max(hi_h, b);
    });
    return Result{s.activation_ms(n - 1, n - 1), hi_s - lo_s, hi_h - lo_h};
  };
  const Result plain = simulate(false), scar = simulate(true);
  const bool delayed = std::isfinite(scar.far_corner_ms) && scar.far_corner_ms > plain.far_corner_ms;
  const bool weaker = scar.pp_scar < scar.pp_healthy;
  return {delayed && weaker,
          fmt("far-corner activation %.1f ms without scar, %.1f ms with; EGM peak-to-peak over scar %.3f vs healthy "
              "%.3f (same electrode without scar %.3f)",
              plain.far_corner_ms, scar.far_corner_ms, scar.pp_scar, scar.pp_healthy, plain.pp_scar)};
}

Outcome p6_sample_count() {
  const auto t0 = Clock::now();
  Rng rng(6);
  std::uniform_int_distribution<std::size_t> small(1, 40), tau(1, 80), len(1, 2000);
  std::size_t bad = 0, checked = 0;
  auto brute = [](const SampleSpec& s) {
    std::size_t count = 0;
    for (std::size_t m = 0;; ++m) {
      for (std::size_t k = 1; k <= s.N; ++k)
        if (m * s.N_tau + k * s.N_t > s.L) return count;
      ++count;
    }
  };
  bad += count_samples({10, 5, 25, 1000}) != 39 || brute({10, 5, 25, 1000}) != 39;
  while (checked < 200) {
    const SampleSpec s{small(rng), small(rng), tau(rng), len(rng)};
    if ((s.N - 1) * s.N_t >= s.L) continue;
    bad += count_samples(s) != brute(s);
    ++checked;
  }
  const double secs = seconds_since(t0);
  return {bad == 0 && secs < 1.0, fmt("%zu mismatches in 200 random specs plus (10,5,25,1000) -> %zu, %.3f s", bad,
                                      count_samples({10, 5, 25, 1000}), secs)};
}

Outcome p7_dtcwt() {
  double worst = 0.0;
  for (std::uint64_t s = 0; s < 100; ++s) {
    const std::size_t n = std::array<std::size_t, 3>{32, 64, 96}[s % 3];
    Rng rng(7000 + s);
    std::normal_distribution<double> g;
    Field f(n, n);
    for (auto& v : f) v = g(rng);
    const Field back = dtcwt_inverse(dtcwt_forward(f, 4));
    for (std::size_t i = 0; i < f.size(); ++i) worst = std::max(worst, std::abs(back.data()[i] - f.data()[i]));
  }
  return {worst <= 1e-8, fmt("max abs reconstruction error %.2e on 100 fields", worst)};
}

Field scar_diffusivity(std::uint64_t seed) {
  const auto sc = gen_scar_map(seed, ScarConfig{});
  Field d(sc.mask.rows(), sc.mask.cols());
  for (std::size_t i = 0; i < d.size(); ++i) d.data()[i] = sc.mask.data()[i] ? sc.d_scar : sc.d_healthy;
  return d;
}

Outcome p8_surrogate_fidelity() {
  double worst_median = 0.0, best_shuffle = 1e300;
  for (std::uint64_t fs = 0; fs < 5; ++fs) {
    const Field f = scar_diffusivity(800 + fs);
    const auto ac = oracle::radial_autocorrelation(f, 10);
    std::vector<double> rel;
    for (std::uint64_t s = 0; s < 50; ++s)
      rel.push_back(oracle::relative_l2(oracle::radial_autocorrelation(make_surrogate(f, s), 10), ac));
    worst_median = std::max(worst_median, median(rel));
    Field sh = f;
    Rng rng(fs);
    std::shuffle(sh.begin(), sh.end(), rng);
    best_shuffle = std::min(best_shuffle, oracle::relative_l2(oracle::radial_autocorrelation(sh, 10), ac));
  }
  return {worst_median <= 0.15 && best_shuffle > 0.15,
          fmt("worst median relative L2 %.3f over 5 scar fields x 50 surrogates; shuffle control %.3f", worst_median,
              best_shuffle)};
}

Outcome p9_calibration() {
  const Field truth = scar_diffusivity(900);
  const double self = surrogate_test(truth, truth, 100, 1).percentile;
  constexpr std::size_t trials = 100, per_trial = 50;
  std::vector<double> pct_truth, pct_pred;
  for (std::uint64_t t = 0; t < trials; ++t) {
    const Field pred = make_surrogate(truth, 10000 + t);
    pct_truth.push_back(
        surrogate_test(pred, truth, per_trial, t, SurrogateMethod::Phase, SurrogateSource::Truth).percentile);
    pct_pred.push_back(
        surrogate_test(pred, truth, per_trial, t, SurrogateMethod::Phase, SurrogateSource::Prediction).percentile);
  }
  const double med = median(pct_truth);
  return {self == 0.0 && std::abs(med - 0.5) <= 0.1,
          fmt("pred = truth percentile %.2f; surrogate-as-prediction median percentile %.3f over %zu trials "
              "(%zu truth surrogates each); prediction-sourced surrogates give %.3f",
              self, med, trials, per_trial, median(pct_pred))};
}

Outcome p10_grid_convergence() {
  auto cv_at = [](double dx, double dt) {
    const auto n = static_cast<std::size_t>(std::llround(2.0 / dx));
    const auto rows = static_cast<std::size_t>(std::llround(0.1 / dx));
    const auto d = DiffusionTensorField{Field(rows, n, kHealthyDiffusivity), Field(rows, n, kHealthyDiffusivity),
                                        Field(rows, n, 0.0), dx};
    return planar_cv(d, dx, dt, true, 0.5, 1.5, 60.0);
  };
  const double coarse = cv_at(0.01, 0.01), fine = cv_at(0.005, 0.005);
  const double change = std::abs(coarse - fine) / fine;
  return {change < 0.05, fmt("CV %.5f cm/ms at dx 0.01, %.5f at dx 0.005, change %.2f%%", coarse, fine, 100.0 * change)};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> checks{
      {"P1 egm oracle", p1_egm_oracle},
      {"P2 diffusion oracle", p2_diffusion_oracle},
      {"P3 conservation", p3_conservation},
      {"P4 anisotropy kinematics", p4_anisotropy},
      {"P5 scar effect", p5_scar_effect},
      {"P6 sample count", p6_sample_count},
      {"P7 dtcwt round trip", p7_dtcwt},
      {"P8 surrogate fidelity", p8_surrogate_fidelity},
      {"P9 surrogate calibration", p9_calibration},
      {"P10 grid convergence", p10_grid_convergence},
  };
  std::string only = argc > 1 ? argv[1] : "";
  int failed = 0;
  for (const auto& [name, fn] : checks) {
    if (!only.empty() && std::string(name).rfind(only + " ", 0) != 0) continue;
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    std::printf("%s %s: %s [%.1f s]\n", o.pass ? "PASS" : "FAIL", name, o.detail.c_str(), seconds_since(t0));
    std::fflush(stdout);
    failed += !o.pass;
  }
  return failed ? 1 : 0;
}

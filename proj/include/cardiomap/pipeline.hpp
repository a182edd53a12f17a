#pragma once

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <exception>
#include <iostream>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "cardiomap/config.hpp"
#include "cardiomap/dataset.hpp"
#include "cardiomap/electrogram.hpp"
#include "cardiomap/error.hpp"
#include "cardiomap/io.hpp"
#include "cardiomap/solver.hpp"
#include "cardiomap/substrate.hpp"
#include "cardiomap/surrogate.hpp"

namespace cardiomap {

/// Runs fn(0) .. fn(count - 1) on up to `jobs` threads. The first exception
/// thrown by any task is rethrown after all workers stop.
template <class Fn>
void parallel_for(std::size_t count, std::size_t jobs, Fn&& fn) {
  jobs = std::max<std::size_t>(1, std::min(jobs, count));
  if (jobs <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::exception_ptr error;
  std::mutex mu;
  {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < jobs; ++t)
      pool.emplace_back([&] {
        for (std::size_t i; !failed && (i = next++) < count;) {
          try {
            fn(i);
          } catch (...) {
            std::lock_guard lock(mu);
            if (!error) error = std::current_exception();
            failed = true;
          }
        }
      });
  }
  if (error) std::rethrow_exception(error);
}

inline std::mutex& log_mutex() {
  static std::mutex m;
  return m;
}

inline void log(const std::string& stage, const std::string& msg) {
  std::lock_guard lock(log_mutex());
  std::cerr << "[" << stage << "] " << msg << '\n';
}

inline std::string sim_stem(std::size_t id) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "sim_%05zu", id);
  return buf;
}

/// Directory layout of one pipeline run.
struct Workdir {
  fs::path root;

  fs::path fields() const { return root / "fields"; }
  fs::path sims() const { return root / "sims"; }
  fs::path egm() const { return root / "egm"; }
  fs::path dataset() const { return root / "dataset"; }
  fs::path eval() const { return root / "eval"; }
  fs::path surrogate() const { return root / "surrogate"; }
};

/// Reads a stage manifest, naming the stage to run when it is missing.
inline json require_manifest(const fs::path& dir, const char* kind, const char* producer) {
  const fs::path path = dir / "manifest.json";
  if (!fs::exists(path))
    throw ValidationError("missing " + path.string() + ": run `cardiomap " + producer + "` first");
  json j = read_json(path);
  require_kind(j, kind, path);
  return j;
}

/// Checks that a manifest was built from the current upstream manifest.
inline void check_upstream(const json& manifest, const fs::path& upstream_dir, const char* stage,
                           const char* rerun) {
  const fs::path up = upstream_dir / "manifest.json";
  const std::string recorded = manifest.at("upstream").value("sha256", std::string{});
  if (!fs::exists(up)) throw ValidationError(std::string(stage) + ": upstream " + up.string() + " is missing");
  if (recorded != sha256_file(up))
    throw ValidationError(std::string(stage) + " outputs are stale (" + up.string() + " changed): rerun `cardiomap " +
                          rerun + "`");
}

inline json upstream_ref(const fs::path& dir) {
  return {{"path", (dir / "manifest.json").filename().string()},
          {"stage", dir.filename().string()},
          {"sha256", sha256_file(dir / "manifest.json")}};
}

// ---------------------------------------------------------------------------
// gen
// ---------------------------------------------------------------------------

inline std::vector<SubstrateKind> kinds_for(Mode mode, std::size_t count) {
  std::vector<SubstrateKind> kinds;
  if (mode == Mode::C) {
    const auto split = split_counts(count);
    for (std::size_t k = 0; k < 3; ++k) kinds.insert(kinds.end(), split[k], static_cast<SubstrateKind>(k));
  } else {
    kinds.assign(count, static_cast<SubstrateKind>(mode));
  }
  return kinds;
}

inline json scar_config_json(const ScarConfig& s) {
  return {{"n", s.n},
          {"count_min", s.count_min},
          {"count_max", s.count_max},
          {"semi_axis_min", s.semi_axis_min},
          {"semi_axis_max", s.semi_axis_max},
          {"centre_margin", s.centre_margin},
          {"smoothing", s.smoothing},
          {"fraction_min", s.fraction_min},
          {"fraction_max", s.fraction_max},
          {"max_retries", s.max_retries},
          {"d_healthy", s.d_healthy},
          {"d_scar", s.d_scar}};
}

inline json generator_json(const PipelineConfig& c, SubstrateKind kind) {
  return {{"kind", to_string(kind)},
          {"n", c.n},
          {"dx_cm", c.dx},
          {"anisotropy", c.substrate.anisotropy},
          {"d_l", c.substrate.d_l},
          {"scar", scar_config_json(c.substrate.scar)},
          {"fibre",
           {{"y_variance", c.substrate.fibre.y_variance},
            {"baseline", c.substrate.fibre.baseline},
            {"path_samples", c.substrate.fibre.path_samples}}}};
}

inline json stage_gen(const PipelineConfig& c, const Workdir& wd, bool force, std::size_t jobs = 1) {
  const fs::path dir = wd.fields();
  if (fs::exists(dir / "manifest.json") && !force)
    throw ValidationError(dir.string() + " already holds generated fields; pass --force to overwrite");
  if (force && fs::exists(dir)) fs::remove_all(dir);
  fs::create_directories(dir);

  const auto kinds = kinds_for(c.mode, c.count);
  json sims = json::array();
  std::vector<json> entries(kinds.size());
  parallel_for(kinds.size(), jobs, [&](std::size_t i) {
    const std::uint64_t seed = derive_seed(c.seed, {0x6E4, i});
    const Substrate s = generate_substrate(kinds[i], seed, c.n, c.dx, c.substrate);
    const fs::path stem = dir / sim_stem(i);
    save_tensor_field(stem, s.tensor, seed, generator_json(c, kinds[i]));
    json e = {{"sim_id", i},
              {"kind", to_string(kinds[i])},
              {"seed", seed},
              {"tensor", sim_stem(i)},
              {"tensor_sha256", sha256_file(data_path(stem, ".f32"))}};
    if (s.scar) {
      save_mask(fs::path(stem.string() + ".mask"), s.scar->mask, c.dx);
      e["mask"] = sim_stem(i) + ".mask";
      e["scar_fraction"] = s.scar->area_fraction();
    }
    if (s.fibre) {
      save_scalar_field(fs::path(stem.string() + ".alpha"), s.fibre->alpha_deg, c.dx, "fibre_angle_deg");
      e["alpha"] = sim_stem(i) + ".alpha";
      json pts = json::array();
      for (const auto& p : s.fibre->control_points) pts.push_back({p.x, p.y});
      e["control_points"] = pts;
    }
    entries[i] = std::move(e);
  });
  std::array<std::size_t, 3> counts{};
  for (auto k : kinds) ++counts[static_cast<std::size_t>(k)];
  for (auto& e : entries) sims.push_back(std::move(e));
  json m = {{"kind", "fields"},
            {"version", 1},
            {"seed", c.seed},
            {"mode", to_string(c.mode)},
            {"count", kinds.size()},
            {"n", c.n},
            {"dx_cm", c.dx},
            {"class_counts", {{"HeI", counts[0]}, {"HoA", counts[1]}, {"HeA", counts[2]}}},
            {"simulations", sims}};
  write_json(dir / "manifest.json", m);
  log("gen", "wrote " + std::to_string(kinds.size()) + " fields (HeI " + std::to_string(counts[0]) + ", HoA " +
                 std::to_string(counts[1]) + ", HeA " + std::to_string(counts[2]) + ") to " + dir.string());
  return m;
}

// ---------------------------------------------------------------------------
// simulate / egm
// ---------------------------------------------------------------------------

struct SimulateOptions {
  bool write_vm = true;
  bool inline_egm = false;
  std::size_t jobs = 1;
};

inline json sim_settings_json(const PipelineConfig& c) {
  return {{"dt_ms", c.dt},
          {"duration_ms", c.duration_ms},
          {"record_every_ms", c.record_every_ms},
          {"dx_cm", c.dx},
          {"fk_params", c.params},
          {"stimulus",
           {{"x_cm", c.stimulus.x_cm},
            {"y_cm", c.stimulus.y_cm},
            {"width_cm", c.stimulus.width_cm},
            {"height_cm", c.stimulus.height_cm},
            {"period_ms", c.stimulus.period_ms},
            {"pulse_width_ms", c.stimulus.pulse_width_ms},
            {"amplitude", c.stimulus.amplitude},
            {"start_ms", c.stimulus.start_ms}}}};
}

inline json egm_settings_json(const PipelineConfig& c) {
  json g = c.electrodes();
  return {{"grid", g}, {"sigma_e", c.sigma_e}, {"coarsen", c.egm_coarsen}, {"sample_interval_ms", 1.0}};
}

inline json write_egm_manifest(const PipelineConfig& c, const Workdir& wd, const std::vector<json>& entries) {
  json sims = json::array();
  for (const auto& e : entries) sims.push_back(e);
  json m = {{"kind", "egm"},
            {"version", 1},
            {"settings", egm_settings_json(c)},
            {"upstream", upstream_ref(wd.sims())},
            {"simulations", sims}};
  write_json(wd.egm() / "manifest.json", m);
  return m;
}

inline json stage_simulate(const PipelineConfig& c, const Workdir& wd, const SimulateOptions& opt) {
  const json fields = require_manifest(wd.fields(), "fields", "gen");
  const auto& list = fields.at("simulations");
  if (fields.at("n").get<std::size_t>() != c.n)
    throw ValidationError("fields were generated with n = " + fields.at("n").dump() + " but the config has n = " +
                          std::to_string(c.n) + ": rerun `cardiomap gen --force`");
  fs::create_directories(wd.sims());
  if (opt.inline_egm) fs::create_directories(wd.egm());

  std::optional<EgmRecorder> recorder;
  if (opt.inline_egm) recorder.emplace(c.electrodes(), c.n, c.n, c.dx, c.sigma_e, c.egm_coarsen);

  std::vector<json> entries(list.size()), egm_entries(list.size());
  parallel_for(list.size(), opt.jobs, [&](std::size_t i) {
    const std::size_t id = list[i].at("sim_id").get<std::size_t>();
    const auto tensor = load_tensor_field(wd.fields() / list[i].at("tensor").get<std::string>());
    const SimConfig sc = c.sim_config(tensor);
    const fs::path stem = wd.sims() / (sim_stem(id) + ".vm");
    std::optional<VmStackWriter> vm;
    if (opt.write_vm)
      vm.emplace(stem, VmStackInfo{0, c.n, c.n, c.record_every_ms, c.dx, c.params.V_0, c.params.V_fi});
    std::optional<EgmStream> stream;
    if (recorder) stream.emplace(*recorder, c.record_every_ms);
    const RunSummary sum = run(sc, [&](const Field& frame, double) {
      if (vm) vm->append(frame);
      if (stream) stream->push(frame);
    });
    json e = {{"sim_id", id},
              {"frames", sum.frames},
              {"steps", sum.steps},
              {"u_min", sum.u_min},
              {"u_max", sum.u_max},
              {"activation_coverage", sum.activation_coverage},
              {"soft_bound_steps", sum.soft_bound_steps}};
    if (vm) {
      vm->finish();
      e["vm"] = sim_stem(id) + ".vm";
    }
    if (sum.soft_bound_steps > 0)
      log("simulate", sim_stem(id) + ": u left [-0.1, 1.2] on " + std::to_string(sum.soft_bound_steps) + " steps");
    log("simulate", sim_stem(id) + ": " + std::to_string(sum.frames) + " frames, coverage " +
                        std::to_string(sum.activation_coverage) + ", " + std::to_string(sum.wall_time_s) + " s");
    if (stream) {
      const fs::path es = wd.egm() / (sim_stem(id) + ".egm");
      save_egm(es, stream->result());
      egm_entries[i] = {{"sim_id", id}, {"egm", sim_stem(id) + ".egm"}, {"frames", stream->result().frames}};
    }
    entries[i] = std::move(e);
  });

  json sims = json::array();
  for (auto& e : entries) sims.push_back(std::move(e));
  json m = {{"kind", "simulations"},
            {"version", 1},
            {"settings", sim_settings_json(c)},
            {"vm_written", opt.write_vm},
            {"upstream", upstream_ref(wd.fields())},
            {"simulations", sims}};
  write_json(wd.sims() / "manifest.json", m);
  if (opt.inline_egm) write_egm_manifest(c, wd, egm_entries);
  return m;
}

inline json stage_egm(const PipelineConfig& c, const Workdir& wd, std::size_t jobs = 1) {
  const json sims = require_manifest(wd.sims(), "simulations", "simulate");
  check_upstream(sims, wd.fields(), "simulate", "simulate");
  if (!sims.at("vm_written").get<bool>())
    throw ValidationError("simulations were run with --no-vm: rerun `cardiomap simulate` without it or with --inline-egm");
  const auto& list = sims.at("simulations");
  fs::create_directories(wd.egm());
  const EgmRecorder rec(c.electrodes(), c.n, c.n, c.dx, c.sigma_e, c.egm_coarsen);
  std::vector<json> entries(list.size());
  parallel_for(list.size(), jobs, [&](std::size_t i) {
    const std::size_t id = list[i].at("sim_id").get<std::size_t>();
    VmStackReader reader(wd.sims() / list[i].at("vm").get<std::string>());
    if (reader.info().rows != c.n || reader.info().cols != c.n) throw ShapeError("vm stack size differs from config");
    EgmStream stream(rec, reader.info().dt_record_ms);
    Field vm;
    while (reader.next(vm)) stream.push(vm);
    save_egm(wd.egm() / (sim_stem(id) + ".egm"), stream.result());
    entries[i] = {{"sim_id", id}, {"egm", sim_stem(id) + ".egm"}, {"frames", stream.result().frames}};
  });
  log("egm", "recorded " + std::to_string(list.size()) + " electrogram arrays");
  return write_egm_manifest(c, wd, entries);
}

// ---------------------------------------------------------------------------
// dataset
// ---------------------------------------------------------------------------

inline json stage_dataset(const PipelineConfig& c, const Workdir& wd) {
  const json egm = require_manifest(wd.egm(), "egm", "egm");
  const json sims = require_manifest(wd.sims(), "simulations", "simulate");
  const json fields = require_manifest(wd.fields(), "fields", "gen");
  check_upstream(egm, wd.sims(), "egm", "egm");
  check_upstream(sims, wd.fields(), "simulate", "simulate");

  std::map<std::size_t, json> field_by_id;
  for (const auto& f : fields.at("simulations")) field_by_id[f.at("sim_id").get<std::size_t>()] = f;
  std::vector<SimulationRecord> recs;
  for (const auto& e : egm.at("simulations")) {
    const std::size_t id = e.at("sim_id").get<std::size_t>();
    const json& f = field_by_id.at(id);
    const fs::path egm_stem = wd.egm() / e.at("egm").get<std::string>();
    const fs::path tensor_stem = wd.fields() / f.at("tensor").get<std::string>();
    recs.push_back({id, parse_kind(f.at("kind").get<std::string>()), [egm_stem] { return load_egm(egm_stem); },
                    [tensor_stem] { return load_tensor_field(tensor_stem); }});
  }
  json m = build_dataset(wd.dataset(), recs, c.dataset, upstream_ref(wd.egm()));
  log("dataset", "wrote " + std::to_string(m.at("samples").size()) + " samples from " + std::to_string(recs.size()) +
                     " simulations to " + wd.dataset().string());
  return m;
}

// ---------------------------------------------------------------------------
// eval / surrogate
// ---------------------------------------------------------------------------

struct EvalPair {
  std::size_t sim_id;
  SubstrateKind kind;
  DiffusionTensorField truth, pred;
};

/// Ground truth for every simulation with a prediction file in `pred_dir`,
/// block-averaged to the prediction's resolution.
inline std::vector<EvalPair> load_eval_pairs(const Workdir& wd, const fs::path& pred_dir, std::optional<Mode> mode) {
  const json fields = require_manifest(wd.fields(), "fields", "gen");
  if (!fs::is_directory(pred_dir)) throw ValidationError("prediction directory not found: " + pred_dir.string());
  std::vector<EvalPair> out;
  for (const auto& f : fields.at("simulations")) {
    const std::size_t id = f.at("sim_id").get<std::size_t>();
    const SubstrateKind kind = parse_kind(f.at("kind").get<std::string>());
    if (mode && !mode_includes(*mode, kind)) continue;
    const fs::path ps = pred_dir / sim_stem(id);
    if (!fs::exists(sidecar_path(ps))) continue;
    DiffusionTensorField pred = load_tensor_field(ps);
    if (pred.rows() != pred.cols()) throw ShapeError(ps.string() + ": prediction must be square");
    DiffusionTensorField truth = load_tensor_field(wd.fields() / f.at("tensor").get<std::string>());
    if (truth.rows() != pred.rows()) truth = resample_tensor_field(truth, pred.rows());
    out.push_back({id, kind, std::move(truth), std::move(pred)});
  }
  if (out.empty()) throw ValidationError("no prediction files (sim_XXXXX.json) matching the fields in " + pred_dir.string());
  return out;
}

inline std::optional<std::size_t> fold_of(const Workdir& wd, std::size_t sim_id) {
  const fs::path m = wd.dataset() / "manifest.json";
  if (!fs::exists(m)) return std::nullopt;
  const json manifest = read_json(m);
  for (const auto& s : manifest.at("simulations"))
    if (s.at("sim_id").get<std::size_t>() == sim_id) return s.at("fold").get<std::size_t>();
  return std::nullopt;
}

inline json stage_eval(const PipelineConfig& c, const Workdir& wd, const fs::path& pred_dir, std::optional<Mode> mode) {
  const auto pairs = load_eval_pairs(wd, pred_dir, mode);
  json records = json::array();
  std::ofstream csv;
  fs::create_directories(wd.eval());
  csv.open(wd.eval() / "metrics.csv", std::ios::trunc);
  csv << "sim_id,kind,rmse,rmse_d_xx,jaccard\n";
  csv.precision(10);
  double sum_rmse = 0.0, sum_j = 0.0;
  for (const auto& p : pairs) {
    const double r = rmse(p.truth, p.pred);
    const double rx = rmse(p.truth.d_xx, p.pred.d_xx);
    const double j = jaccard(p.truth, p.pred, c.jaccard_threshold);
    json rec = {{"sim_id", p.sim_id}, {"kind", to_string(p.kind)}, {"rmse", r}, {"rmse_d_xx", rx}, {"jaccard", j}};
    if (auto f = fold_of(wd, p.sim_id)) rec["fold"] = *f;
    records.push_back(rec);
    csv << p.sim_id << ',' << to_string(p.kind) << ',' << r << ',' << rx << ',' << j << '\n';
    sum_rmse += r;
    sum_j += j;
  }
  const double n = static_cast<double>(pairs.size());
  json report = {{"kind", "eval"},
                 {"mode", mode ? std::string(to_string(*mode)) : std::string("C")},
                 {"jaccard_threshold", c.jaccard_threshold},
                 {"records", records},
                 {"aggregate", {{"simulations", pairs.size()}, {"mean_rmse", sum_rmse / n}, {"mean_jaccard", sum_j / n}}}};
  write_json(wd.eval() / "metrics.json", report);
  log("eval", std::to_string(pairs.size()) + " simulations, mean jaccard " + std::to_string(sum_j / n));
  return report;
}

inline json stage_surrogate(const PipelineConfig& c, const Workdir& wd, const fs::path& pred_dir,
                            std::optional<Mode> mode) {
  const auto pairs = load_eval_pairs(wd, pred_dir, mode);
  if (c.surrogates < 20) log("surrogate", "warning: fewer than 20 surrogates; percentiles are coarse");
  std::vector<SurrogateTestResult> results;
  json records = json::array();
  fs::create_directories(wd.surrogate());
  std::ofstream csv(wd.surrogate() / "results.csv", std::ios::trunc);
  csv << "sim_id,rmse,jaccard,percentile,p_value\n";
  csv.precision(10);
  for (const auto& p : pairs) {
    auto r = surrogate_test(p.pred.d_xx, p.truth.d_xx, c.surrogates, derive_seed(c.seed, {0x5A, p.sim_id}),
                            c.surrogate_method, c.surrogate_source);
    const double j = jaccard(p.truth, p.pred, c.jaccard_threshold);
    records.push_back({{"sim_id", p.sim_id},
                       {"rmse", r.rmse_prediction},
                       {"jaccard", j},
                       {"percentile", r.percentile},
                       {"p_value", r.p_value},
                       {"rmse_surrogates", r.rmse_surrogates}});
    csv << p.sim_id << ',' << r.rmse_prediction << ',' << j << ',' << r.percentile << ',' << r.p_value << '\n';
    results.push_back(std::move(r));
  }
  const SurrogateAggregate a = aggregate(results);
  auto num = [](double v) { return std::isfinite(v) ? json(v) : json(nullptr); };
  json agg = {{"simulations", a.simulations},
              {"surrogates_per_simulation", c.surrogates},
              {"method", to_string(c.surrogate_method)},
              {"source", c.surrogate_source == SurrogateSource::Prediction ? "prediction" : "truth"},
              {"mean_rmse_prediction", a.mean_rmse_prediction},
              {"mean_rmse_surrogates", a.mean_rmse_surrogates},
              {"median_percentile", a.median_percentile},
              {"welch_t", num(a.welch.t)},
              {"welch_df", num(a.welch.df)},
              {"welch_p_value", num(a.welch.p_value)},
              {"permutation_p_value", a.permutation_p}};
  json out = {{"kind", "surrogate"}, {"records", records}, {"aggregate", agg}};
  write_json(wd.surrogate() / "results.json", out);
  std::ofstream acsv(wd.surrogate() / "aggregate.csv", std::ios::trunc);
  acsv.precision(10);
  acsv << "simulations,median_percentile,mean_rmse_prediction,mean_rmse_surrogates,welch_p_value,permutation_p_value\n"
       << a.simulations << ',' << a.median_percentile << ',' << a.mean_rmse_prediction << ','
       << a.mean_rmse_surrogates << ',' << a.welch.p_value << ',' << a.permutation_p << '\n';
  log("surrogate", std::to_string(a.simulations) + " simulations, median percentile " +
                       std::to_string(a.median_percentile));
  return out;
}

}  // namespace cardiomap

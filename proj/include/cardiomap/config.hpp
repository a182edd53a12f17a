#pragma once

#include <cstdint>
#include <string>
#include <string_view>

#include "cardiomap/dataset.hpp"
#include "cardiomap/electrogram.hpp"
#include "cardiomap/error.hpp"
#include "cardiomap/fenton_karma.hpp"
#include "cardiomap/io.hpp"
#include "cardiomap/solver.hpp"
#include "cardiomap/substrate.hpp"
#include "cardiomap/surrogate.hpp"

namespace cardiomap {

/// Everything a pipeline run needs apart from paths. Built from a preset JSON
/// document merged (RFC 7386) with an optional user config file.
struct PipelineConfig {
  std::string preset = "desk";
  std::uint64_t seed = 1;

  std::size_t n = 300;  // tissue cells per side
  double dx = 0.01;     // cm

  double dt = 0.01;
  double duration_ms = 200.0;
  double record_every_ms = 1.0;
  StimulusProtocol stimulus;
  FkParams params;

  Mode mode = Mode::C;
  std::size_t count = 12;
  SubstrateConfig substrate;

  std::size_t electrode_rows = 15, electrode_cols = 15;
  double electrode_spacing_cm = 0.2;
  double electrode_z_cm = 0.1;
  double sigma_e = kDefaultSigmaE;
  std::size_t egm_coarsen = 1;

  DatasetOptions dataset;

  double jaccard_threshold = kDefaultJaccardThreshold;
  std::size_t surrogates = 100;
  SurrogateMethod surrogate_method = SurrogateMethod::Phase;
  SurrogateSource surrogate_source = SurrogateSource::Prediction;

  double domain_cm() const { return dx * static_cast<double>(n); }

  ElectrodeGrid electrodes() const {
    return ElectrodeGrid::centered(domain_cm(), domain_cm(), electrode_rows, electrode_cols, electrode_spacing_cm,
                                   electrode_z_cm);
  }

  SimConfig sim_config(const DiffusionTensorField& tensor) const {
    SimConfig c;
    c.dx = dx;
    c.dt = dt;
    c.duration_ms = duration_ms;
    c.record_every_ms = record_every_ms;
    c.tensor = tensor;
    c.params = params;
    c.stimulus = stimulus;
    return c;
  }

  void validate() const {
    if (n < 16) throw ConfigError("grid.n must be >= 16");
    if (!(dx > 0.0) || !(dt > 0.0)) throw ConfigError("grid.dx_cm and sim.dt_ms must be positive");
    if (duration_ms < 0.0) throw ConfigError("sim.duration_ms must be non-negative");
    substrate.scar.validate();
    params.validate();
    electrodes().validate(domain_cm(), domain_cm());
    if (!(sigma_e > 0.0)) throw ConfigError("electrodes.sigma_e must be positive");
    dataset.spec.validate();
    if (dataset.target_size == 0 || dataset.target_size > n)
      throw ConfigError("dataset.target_size must be in [1, grid.n]");
    const double frames = duration_ms / record_every_ms;
    if (std::abs(frames - std::round(frames)) > 1e-9)
      throw ConfigError("sim.duration_ms must be a multiple of sim.record_every_ms");
    if (static_cast<std::size_t>(std::llround(frames)) != dataset.spec.L)
      throw ConfigError("dataset.L (" + std::to_string(dataset.spec.L) + ") must equal the number of EGM samples (" +
                        std::to_string(std::llround(frames)) + ")");
    if (surrogates == 0) throw ConfigError("eval.surrogates must be positive");
  }
};

inline json preset_json(std::string_view name) {
  json stim = {{"x_cm", 0.0}, {"y_cm", 0.0},           {"width_cm", 1.0}, {"height_cm", 1.0},
               {"period_ms", 150.0}, {"pulse_width_ms", 2.0}, {"amplitude", 0.3}, {"start_ms", 0.0}};
  json j = {
      {"grid", {{"n", 1200}, {"dx_cm", 0.01}}},
      {"sim", {{"dt_ms", 0.01}, {"duration_ms", 1000.0}, {"record_every_ms", 1.0}, {"stimulus", stim}}},
      {"fk_params", FkParams{}},
      {"substrate",
       {{"mode", "C"},
        {"count", 330},
        {"anisotropy", kDefaultAnisotropy},
        {"d_l", kHealthyDiffusivity},
        {"scar",
         {{"count_min", 1},
          {"count_max", 3},
          {"semi_axis_min", 0.06},
          {"semi_axis_max", 0.16},
          {"centre_margin", 0.12},
          {"smoothing", 0.02},
          {"fraction_min", 0.02},
          {"fraction_max", 0.25},
          {"max_retries", 64},
          {"d_healthy", kHealthyDiffusivity},
          {"d_scar", kScarDiffusivity}}},
        {"fibre", {{"y_variance", 0.09}, {"baseline", 0.5}, {"path_samples", 2048}}}}},
      {"electrodes",
       {{"rows", 29}, {"cols", 29}, {"spacing_cm", 0.4}, {"z_cm", 0.1}, {"sigma_e", kDefaultSigmaE}, {"coarsen", 1}}},
      {"dataset",
       {{"N", 10},
        {"N_t", 5},
        {"N_tau", 25},
        {"L", 1000},
        {"one_based", true},
        {"folds", 10},
        {"noise_sigma", kDefaultNoiseSigma},
        {"bake_noise", false},
        {"target_size", kTargetSize}}},
      {"eval",
       {{"jaccard_threshold", kDefaultJaccardThreshold},
        {"surrogates", 100},
        {"surrogate_method", "phase"},
        {"surrogate_source", "prediction"}}}};
  if (name == "paper") return j;
  if (name != "desk") throw ConfigError("unknown preset '" + std::string(name) + "' (expected desk or paper)");
  // 3 cm tissue, 200 ms, 15 x 15 electrodes at 2 mm; stimulus scaled with the tissue.
  json desk = {{"grid", {{"n", 300}}},
               {"sim",
                {{"duration_ms", 200.0}, {"stimulus", {{"width_cm", 0.25}, {"height_cm", 0.25}}}}},
               {"substrate", {{"count", 12}}},
               {"electrodes", {{"rows", 15}, {"cols", 15}, {"spacing_cm", 0.2}}},
               {"dataset", {{"L", 200}}}};
  j.merge_patch(desk);
  return j;
}

inline PipelineConfig config_from_json(const json& j, std::string preset = "custom") {
  PipelineConfig c;
  try {
    c.preset = std::move(preset);
    c.n = j.at("grid").at("n").get<std::size_t>();
    c.dx = j.at("grid").at("dx_cm").get<double>();
    const json& s = j.at("sim");
    c.dt = s.at("dt_ms").get<double>();
    c.duration_ms = s.at("duration_ms").get<double>();
    c.record_every_ms = s.at("record_every_ms").get<double>();
    const json& st = s.at("stimulus");
    c.stimulus = {st.at("x_cm").get<double>(),      st.at("y_cm").get<double>(),
                  st.at("width_cm").get<double>(),  st.at("height_cm").get<double>(),
                  st.at("period_ms").get<double>(), st.at("pulse_width_ms").get<double>(),
                  st.at("amplitude").get<double>(), st.at("start_ms").get<double>()};
    if (j.at("fk_params").is_string())
      c.params = load_fk_params(j.at("fk_params").get<std::string>());
    else
      c.params = j.at("fk_params").get<FkParams>();

    const json& sub = j.at("substrate");
    c.mode = parse_mode(sub.at("mode").get<std::string>());
    c.count = sub.at("count").get<std::size_t>();
    c.substrate.anisotropy = sub.at("anisotropy").get<double>();
    c.substrate.d_l = sub.at("d_l").get<double>();
    const json& sc = sub.at("scar");
    auto& scar = c.substrate.scar;
    scar.n = c.n;
    scar.count_min = sc.at("count_min").get<int>();
    scar.count_max = sc.at("count_max").get<int>();
    scar.semi_axis_min = sc.at("semi_axis_min").get<double>();
    scar.semi_axis_max = sc.at("semi_axis_max").get<double>();
    scar.centre_margin = sc.at("centre_margin").get<double>();
    scar.smoothing = sc.at("smoothing").get<double>();
    scar.fraction_min = sc.at("fraction_min").get<double>();
    scar.fraction_max = sc.at("fraction_max").get<double>();
    scar.max_retries = sc.at("max_retries").get<int>();
    scar.d_healthy = sc.at("d_healthy").get<double>();
    scar.d_scar = sc.at("d_scar").get<double>();
    const json& fb = sub.at("fibre");
    c.substrate.fibre.y_variance = fb.at("y_variance").get<double>();
    c.substrate.fibre.baseline = fb.at("baseline").get<double>();
    c.substrate.fibre.path_samples = fb.at("path_samples").get<std::size_t>();

    const json& e = j.at("electrodes");
    c.electrode_rows = e.at("rows").get<std::size_t>();
    c.electrode_cols = e.at("cols").get<std::size_t>();
    c.electrode_spacing_cm = e.at("spacing_cm").get<double>();
    c.electrode_z_cm = e.at("z_cm").get<double>();
    c.sigma_e = e.at("sigma_e").get<double>();
    c.egm_coarsen = e.at("coarsen").get<std::size_t>();

    const json& d = j.at("dataset");
    c.dataset.spec = d.get<SampleSpec>();
    c.dataset.folds = d.at("folds").get<std::size_t>();
    c.dataset.noise_sigma = d.at("noise_sigma").get<double>();
    c.dataset.bake_noise = d.at("bake_noise").get<bool>();
    c.dataset.target_size = d.at("target_size").get<std::size_t>();

    const json& ev = j.at("eval");
    c.jaccard_threshold = ev.at("jaccard_threshold").get<double>();
    c.surrogates = ev.at("surrogates").get<std::size_t>();
    c.surrogate_method = parse_surrogate_method(ev.at("surrogate_method").get<std::string>());
    c.surrogate_source = parse_surrogate_source(ev.at("surrogate_source").get<std::string>());
  } catch (const json::exception& ex) {
    throw ConfigError(std::string("config: ") + ex.what());
  }
  return c;
}

/// Preset merged with an optional user file; the seed overrides both.
inline json resolve_config_json(std::string_view preset, const fs::path& user_file = {}) {
  json j = preset_json(preset);
  if (!user_file.empty()) {
    if (!fs::exists(user_file)) throw ConfigError("config file not found: " + user_file.string());
    j.merge_patch(read_json(user_file));
  }
  return j;
}

inline PipelineConfig load_config(std::string_view preset, const fs::path& user_file, std::uint64_t seed) {
  PipelineConfig c = config_from_json(resolve_config_json(preset, user_file), std::string(preset));
  c.seed = seed;
  c.dataset.seed = seed;
  c.validate();
  return c;
}

}  // namespace cardiomap

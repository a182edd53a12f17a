#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <map>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "cardiomap/electrogram.hpp"
#include "cardiomap/error.hpp"
#include "cardiomap/io.hpp"
#include "cardiomap/random.hpp"
#include "cardiomap/substrate.hpp"

namespace cardiomap {

inline constexpr double kDefaultNoiseSigma = 0.05;
inline constexpr std::size_t kTargetSize = 96;

/// Sample m of a recording keeps frames m*N_tau + n*N_t for n = 1..N
/// (1-based frame numbers). With one_based = false the frames are
/// m*N_tau + n*N_t for n = 0..N-1 in 0-based numbering instead.
struct SampleSpec {
  std::size_t N = 10;
  std::size_t N_t = 5;
  std::size_t N_tau = 25;
  std::size_t L = 1000;
  bool one_based = true;

  void validate() const {
    if (N < 1 || N_t < 1 || N_tau < 1) throw ValidationError("sample spec: N, N_t, N_tau must be >= 1");
    if ((N - 1) * N_t >= L) throw ValidationError("sample spec: (N-1)*N_t must be smaller than L");
  }

  /// 0-based array index of the n-th retained frame (n counted from 0) of sample m.
  std::size_t frame_index(std::size_t m, std::size_t n) const {
    return one_based ? m * N_tau + (n + 1) * N_t - 1 : m * N_tau + n * N_t;
  }
};

inline void to_json(json& j, const SampleSpec& s) {
  j = {{"N", s.N}, {"N_t", s.N_t}, {"N_tau", s.N_tau}, {"L", s.L}, {"one_based", s.one_based}};
}

inline void from_json(const json& j, SampleSpec& s) {
  s.N = j.at("N").get<std::size_t>();
  s.N_t = j.at("N_t").get<std::size_t>();
  s.N_tau = j.at("N_tau").get<std::size_t>();
  s.L = j.value("L", s.L);
  s.one_based = j.value("one_based", s.one_based);
}

/// Number of start offsets m >= 0 whose frames all fall inside the recording.
inline std::size_t count_samples(const SampleSpec& s) {
  s.validate();
  if (s.one_based) {
    if (s.L < s.N * s.N_t) return 0;
    return (s.L - s.N * s.N_t) / s.N_tau + 1;
  }
  return (s.L - 1 - (s.N - 1) * s.N_t) / s.N_tau + 1;
}

/// N x rows x cols block of EGM values.
struct EgmBlock {
  std::size_t N = 0, rows = 0, cols = 0;
  std::vector<float> data;

  float& at(std::size_t n, std::size_t r, std::size_t c) { return data[(n * rows + r) * cols + c]; }
  float at(std::size_t n, std::size_t r, std::size_t c) const { return data[(n * rows + r) * cols + c]; }
};

struct Sample {
  EgmBlock egm;
  std::vector<float> coords;  // 2 x rows x cols: x then y, each in [0, 1]
  std::vector<float> target;  // 3 x 96 x 96: d_xx, d_yy, d_xy
  std::size_t sim_id = 0;
  std::size_t m = 0;
};

inline std::vector<EgmBlock> extract_samples(const EgmArray& egm, const SampleSpec& spec) {
  if (egm.frames != spec.L)
    throw ValidationError("extract_samples: recording has " + std::to_string(egm.frames) + " frames but L = " +
                          std::to_string(spec.L));
  const std::size_t count = count_samples(spec);
  const std::size_t R = egm.grid.rows, C = egm.grid.cols, E = R * C;
  std::vector<EgmBlock> out(count);
  for (std::size_t m = 0; m < count; ++m) {
    EgmBlock& b = out[m];
    b.N = spec.N;
    b.rows = R;
    b.cols = C;
    b.data.resize(spec.N * E);
    for (std::size_t n = 0; n < spec.N; ++n) {
      const double* src = egm.frame(spec.frame_index(m, n));
      std::transform(src, src + E, b.data.begin() + static_cast<std::ptrdiff_t>(n * E),
                     [](double v) { return static_cast<float>(v); });
    }
  }
  return out;
}

/// Per-electrode z-score over the block's time axis. Zero-variance electrodes
/// become all zeros.
inline EgmBlock normalize(const EgmBlock& in) {
  EgmBlock out = in;
  const std::size_t E = in.rows * in.cols;
  for (std::size_t e = 0; e < E; ++e) {
    double mean = 0.0;
    for (std::size_t n = 0; n < in.N; ++n) mean += in.data[n * E + e];
    mean /= static_cast<double>(in.N);
    double var = 0.0;
    for (std::size_t n = 0; n < in.N; ++n) {
      const double d = in.data[n * E + e] - mean;
      var += d * d;
    }
    var /= static_cast<double>(in.N);
    const double sd = std::sqrt(var);
    for (std::size_t n = 0; n < in.N; ++n)
      out.data[n * E + e] = sd > 0.0 ? static_cast<float>((in.data[n * E + e] - mean) / sd) : 0.0f;
  }
  return out;
}

/// Normalized electrode coordinates: channel 0 is the column position, channel
/// 1 the row position, both mapped linearly onto [0, 1].
inline std::vector<float> coordinate_channels(std::size_t rows, std::size_t cols) {
  std::vector<float> out(2 * rows * cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) {
      out[r * cols + c] = cols > 1 ? static_cast<float>(static_cast<double>(c) / static_cast<double>(cols - 1)) : 0.0f;
      out[rows * cols + r * cols + c] =
          rows > 1 ? static_cast<float>(static_cast<double>(r) / static_cast<double>(rows - 1)) : 0.0f;
    }
  return out;
}

/// Seed for the noise drawn on sample (sim, m) in a given epoch.
inline std::uint64_t noise_seed(std::uint64_t dataset_seed, std::uint64_t epoch, std::uint64_t sim_id,
                                std::uint64_t m) {
  return derive_seed(dataset_seed, {0x401CE, epoch, sim_id, m});
}

/// Adds i.i.d. N(0, sigma^2) to the EGM and coordinate channels.
inline Sample add_noise(Sample s, double sigma, std::uint64_t seed) {
  if (sigma < 0.0) throw ValidationError("noise sigma must be non-negative");
  if (sigma == 0.0) return s;
  Rng rng(seed);
  std::normal_distribution<double> noise(0.0, sigma);
  for (auto& v : s.egm.data) v = static_cast<float>(v + noise(rng));
  for (auto& v : s.coords) v = static_cast<float>(v + noise(rng));
  return s;
}

inline std::vector<float> target_channels(const DiffusionTensorField& f, std::size_t m = kTargetSize) {
  const DiffusionTensorField t = f.rows() == m && f.cols() == m ? f : resample_tensor_field(f, m);
  std::vector<float> out;
  out.reserve(3 * m * m);
  append_f32(out, t.d_xx);
  append_f32(out, t.d_yy);
  append_f32(out, t.d_xy);
  return out;
}

/// Fold of every simulation: within each substrate kind the simulations are
/// shuffled with the dataset seed and dealt round-robin, continuing the deal
/// across kinds so fold sizes differ by at most one.
inline std::vector<std::size_t> assign_folds(const std::vector<SubstrateKind>& kinds, std::size_t folds,
                                             std::uint64_t seed) {
  if (folds < 2) throw ValidationError("need at least 2 folds");
  if (kinds.size() < folds)
    throw ValidationError("need at least " + std::to_string(folds) + " simulations for " + std::to_string(folds) +
                          "-fold assignment, got " + std::to_string(kinds.size()));
  std::vector<std::size_t> fold(kinds.size(), 0);
  std::size_t next = 0;
  for (SubstrateKind k : {SubstrateKind::HeI, SubstrateKind::HoA, SubstrateKind::HeA}) {
    std::vector<std::size_t> ids;
    for (std::size_t i = 0; i < kinds.size(); ++i)
      if (kinds[i] == k) ids.push_back(i);
    Rng rng(derive_seed(seed, {0xF01D, static_cast<std::uint64_t>(k)}));
    std::shuffle(ids.begin(), ids.end(), rng);
    for (auto id : ids) fold[id] = next++ % folds;
  }
  return fold;
}

// ---------------------------------------------------------------------------
// On-disk dataset
// ---------------------------------------------------------------------------

struct DatasetOptions {
  SampleSpec spec;
  std::size_t folds = 10;
  double noise_sigma = kDefaultNoiseSigma;
  bool bake_noise = false;  // store noisy samples (epoch 0) instead of clean ones
  std::size_t target_size = kTargetSize;
  std::uint64_t seed = 0;
};

/// One simulation's inputs; loaded lazily so only one recording is held in
/// memory at a time.
struct SimulationRecord {
  std::size_t sim_id = 0;
  SubstrateKind kind = SubstrateKind::HeI;
  std::function<EgmArray()> egm;
  std::function<DiffusionTensorField()> tensor;
};

inline std::string shard_name(std::size_t sim_id, const char* what) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "sim_%05zu.%s.f32", sim_id, what);
  return buf;
}

/// Writes normalized sample shards, targets, shared coordinate channels and
/// manifest.json into `dir`. Returns the manifest. The manifest holds no
/// timestamps, so identical inputs give a byte-identical file.
inline json build_dataset(const fs::path& dir, const std::vector<SimulationRecord>& sims, const DatasetOptions& opt,
                          const json& upstream = json::object()) {
  opt.spec.validate();
  std::vector<SubstrateKind> kinds;
  for (const auto& s : sims) kinds.push_back(s.kind);
  const auto folds = assign_folds(kinds, opt.folds, opt.seed);
  const std::size_t nu = count_samples(opt.spec);
  fs::create_directories(dir);

  std::size_t R = 0, C = 0;
  std::vector<float> coords;

  json sim_list = json::array(), samples = json::array();
  std::array<std::size_t, 3> class_counts{};
  json modes = {{"HeI", json::array()}, {"HoA", json::array()}, {"HeA", json::array()}, {"C", json::array()}};

  for (std::size_t i = 0; i < sims.size(); ++i) {
    const auto& s = sims[i];
    const EgmArray egm = s.egm();
    if (i == 0) {
      R = egm.grid.rows;
      C = egm.grid.cols;
      coords = coordinate_channels(R, C);
    }
    if (egm.grid.rows != R || egm.grid.cols != C) throw ShapeError("all simulations need the same electrode grid");
    const auto blocks = extract_samples(egm, opt.spec);
    std::vector<float> shard;
    shard.reserve(nu * opt.spec.N * R * C);
    for (std::size_t m = 0; m < blocks.size(); ++m) {
      Sample smp{normalize(blocks[m]), {}, {}, s.sim_id, m};
      if (opt.bake_noise) {
        smp.coords = coords;
        smp = add_noise(std::move(smp), opt.noise_sigma, noise_seed(opt.seed, 0, s.sim_id, m));
      }
      shard.insert(shard.end(), smp.egm.data.begin(), smp.egm.data.end());
      samples.push_back({{"sim_id", s.sim_id}, {"m", m}, {"offset_bytes", m * opt.spec.N * R * C * sizeof(float)}});
    }
    const auto egm_file = shard_name(s.sim_id, "egm");
    const auto tgt_file = shard_name(s.sim_id, "target");
    write_raw(dir / egm_file, shard.data(), shard.size());
    const auto target = target_channels(s.tensor(), opt.target_size);
    write_raw(dir / tgt_file, target.data(), target.size());

    ++class_counts[static_cast<std::size_t>(s.kind)];
    modes[std::string(to_string(s.kind))].push_back(s.sim_id);
    modes["C"].push_back(s.sim_id);
    sim_list.push_back({{"sim_id", s.sim_id},
                        {"kind", to_string(s.kind)},
                        {"fold", folds[i]},
                        {"samples", blocks.size()},
                        {"egm_file", egm_file},
                        {"egm_sha256", sha256_hex(shard.data(), shard.size() * sizeof(float))},
                        {"target_file", tgt_file},
                        {"target_sha256", sha256_hex(target.data(), target.size() * sizeof(float))}});
  }

  write_raw(dir / "coords.f32", coords.data(), coords.size());

  json fold_list = json::array();
  for (std::size_t f = 0; f < opt.folds; ++f) {
    json ids = json::array();
    for (std::size_t i = 0; i < sims.size(); ++i)
      if (folds[i] == f) ids.push_back(sims[i].sim_id);
    fold_list.push_back(ids);
  }

  json manifest = {{"kind", "dataset"},
                   {"version", 1},
                   {"spec", opt.spec},
                   {"samples_per_sim", nu},
                   {"electrodes", {R, C}},
                   {"egm_sample_shape", {opt.spec.N, R, C}},
                   {"coords_file", "coords.f32"},
                   {"coords_shape", {2, R, C}},
                   {"target_shape", {3, opt.target_size, opt.target_size}},
                   {"target_components", {"d_xx", "d_yy", "d_xy"}},
                   {"dtype", "float32"},
                   {"noise_sigma", opt.noise_sigma},
                   {"noise_baked", opt.bake_noise},
                   {"noise_seed_rule", "derive_seed(seed, [0x401CE, epoch, sim_id, m])"},
                   {"seed", opt.seed},
                   {"folds", fold_list},
                   {"class_counts", {{"HeI", class_counts[0]}, {"HoA", class_counts[1]}, {"HeA", class_counts[2]}}},
                   {"modes", modes},
                   {"simulations", sim_list},
                   {"samples", samples},
                   {"upstream", upstream}};
  write_json(dir / "manifest.json", manifest);
  return manifest;
}

/// Read access to a dataset directory.
class DatasetReader {
 public:
  explicit DatasetReader(fs::path dir) : dir_(std::move(dir)), manifest_(read_json(dir_ / "manifest.json")) {
    require_kind(manifest_, "dataset", dir_ / "manifest.json");
    spec_ = manifest_.at("spec").get<SampleSpec>();
    const auto e = manifest_.at("electrodes").get<std::vector<std::size_t>>();
    rows_ = e.at(0);
    cols_ = e.at(1);
    target_size_ = manifest_.at("target_shape").at(1).get<std::size_t>();
    coords_ = read_raw<float>(dir_ / manifest_.at("coords_file").get<std::string>(), 2 * rows_ * cols_);
    for (const auto& s : manifest_.at("simulations")) sims_[s.at("sim_id").get<std::size_t>()] = s;
  }

  const json& manifest() const noexcept { return manifest_; }
  const SampleSpec& spec() const noexcept { return spec_; }
  std::size_t sample_count() const { return manifest_.at("samples").size(); }
  bool noise_baked() const { return manifest_.at("noise_baked").get<bool>(); }

  std::vector<std::size_t> sim_ids(std::string_view mode = "C") const {
    return manifest_.at("modes").at(std::string(mode)).get<std::vector<std::size_t>>();
  }

  std::size_t fold_of(std::size_t sim_id) const { return sim(sim_id).at("fold").get<std::size_t>(); }

  std::vector<float> target(std::size_t sim_id) const {
    return read_raw<float>(dir_ / sim(sim_id).at("target_file").get<std::string>(),
                           3 * target_size_ * target_size_);
  }

  /// Stored sample i (manifest order). Coordinates are the clean channels
  /// unless noise was baked in.
  Sample sample(std::size_t i) const {
    const json& e = manifest_.at("samples").at(i);
    const std::size_t sim_id = e.at("sim_id").get<std::size_t>();
    const std::size_t m = e.at("m").get<std::size_t>();
    const json& s = sim(sim_id);
    const std::size_t per = spec_.N * rows_ * cols_;
    const auto all = read_raw<float>(dir_ / s.at("egm_file").get<std::string>(),
                                     s.at("samples").get<std::size_t>() * per);
    Sample out;
    out.sim_id = sim_id;
    out.m = m;
    out.egm = {spec_.N, rows_, cols_,
               std::vector<float>(all.begin() + static_cast<std::ptrdiff_t>(m * per),
                                  all.begin() + static_cast<std::ptrdiff_t>((m + 1) * per))};
    out.coords = coords_;
    out.target = target(sim_id);
    if (noise_baked()) {
      // Baked shards carry noisy EGM; redraw the same stream for the coordinates.
      Sample ref{EgmBlock{spec_.N, rows_, cols_, std::vector<float>(per, 0.0f)}, coords_, {}, sim_id, m};
      out.coords = add_noise(std::move(ref), manifest_.at("noise_sigma").get<double>(),
                             noise_seed(manifest_.at("seed").get<std::uint64_t>(), 0, sim_id, m))
                       .coords;
    }
    return out;
  }

  /// Sample i with fresh noise for a training epoch.
  Sample noisy_sample(std::size_t i, std::uint64_t epoch) const {
    Sample s = sample(i);
    if (noise_baked()) return s;
    return add_noise(std::move(s), manifest_.at("noise_sigma").get<double>(),
                     noise_seed(manifest_.at("seed").get<std::uint64_t>(), epoch, s.sim_id, s.m));
  }

 private:
  const json& sim(std::size_t id) const {
    auto it = sims_.find(id);
    if (it == sims_.end()) throw ValidationError("simulation " + std::to_string(id) + " not in dataset");
    return it->second;
  }

  fs::path dir_;
  json manifest_;
  SampleSpec spec_;
  std::size_t rows_ = 0, cols_ = 0, target_size_ = kTargetSize;
  std::vector<float> coords_;
  std::map<std::size_t, json> sims_;
};

}  // namespace cardiomap

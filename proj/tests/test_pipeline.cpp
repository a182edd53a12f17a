#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "cardiomap/config.hpp"
#include "cardiomap/pipeline.hpp"
#include "cardiomap/plot.hpp"

using namespace cardiomap;

namespace {

const json kSmall = {{"grid", {{"n", 64}}},
                     {"sim", {{"duration_ms", 40.0}, {"stimulus", {{"width_cm", 0.1}, {"height_cm", 0.1}}}}},
                     {"substrate", {{"count", 4}}},
                     {"electrodes", {{"rows", 5}, {"cols", 5}, {"spacing_cm", 0.1}}},
                     {"dataset", {{"N", 2}, {"N_t", 5}, {"N_tau", 10}, {"L", 40}, {"folds", 2}, {"target_size", 32}}},
                     {"eval", {{"surrogates", 20}}}};

fs::path fresh(const std::string& name) {
  const auto d = fs::temp_directory_path() / ("cardiomap_pipe_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

fs::path small_config(const fs::path& dir, const json& patch = json::object()) {
  json j = kSmall;
  j.merge_patch(patch);
  write_json(dir / "small.json", j);
  return dir / "small.json";
}

int cli(const std::string& args, const fs::path& log = {}) {
  std::string cmd = std::string(CARDIOMAP_CLI) + " " + args;
  cmd += log.empty() ? " >/dev/null 2>&1" : " >" + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::size_t line_count(const fs::path& p) {
  std::ifstream in(p);
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) ++n;
  return n;
}

std::map<std::string, std::string> tree_hashes(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) out[fs::relative(e.path(), dir).string()] = sha256_file(e.path());
  return out;
}

void copy_truth_as_prediction(const Workdir& wd, const fs::path& pred) {
  fs::create_directories(pred);
  const json manifest = read_json(wd.fields() / "manifest.json");
  for (const auto& s : manifest.at("simulations")) {
    const std::string stem = s.at("tensor").get<std::string>();
    fs::copy_file(wd.fields() / (stem + ".json"), pred / (stem + ".json"));
    fs::copy_file(wd.fields() / (stem + ".f32"), pred / (stem + ".f32"));
  }
}

}  // namespace

TEST(Pipeline, LibraryStagesAndInlineEgmAgree) {
  const auto root = fresh("lib");
  const auto cfg = load_config("desk", small_config(root), 5);
  const Workdir a{root / "a"}, b{root / "b"};
  stage_gen(cfg, a, false);
  stage_gen(cfg, b, false);
  stage_simulate(cfg, a, {true, false, 1});
  stage_egm(cfg, a);
  stage_simulate(cfg, b, {false, true, 1});

  const json sims = read_json(a.sims() / "manifest.json");
  ASSERT_EQ(sims.at("simulations").size(), 4u);
  for (const auto& s : sims.at("simulations")) {
    EXPECT_EQ(s.at("frames"), 40);
    EXPECT_EQ(s.at("soft_bound_steps"), 0);
  }
  for (std::size_t id = 0; id < 4; ++id) {
    const auto ea = load_egm(a.egm() / (sim_stem(id) + ".egm"));
    const auto eb = load_egm(b.egm() / (sim_stem(id) + ".egm"));
    ASSERT_EQ(ea.frames, 40u);
    ASSERT_EQ(eb.frames, 40u);
    double scale = 0.0;
    for (double v : ea.data) scale = std::max(scale, std::abs(v));
    for (std::size_t i = 0; i < ea.data.size(); ++i) EXPECT_NEAR(ea.data[i], eb.data[i], 1e-5 * scale);
  }
  const json ds = stage_dataset(cfg, a);
  EXPECT_EQ(ds.at("samples").size(), 4u * count_samples(cfg.dataset.spec));
  EXPECT_EQ(ds.at("target_shape"), json({3, 32, 32}));
  EXPECT_THROW(stage_egm(cfg, b), ValidationError);
  EXPECT_THROW(stage_gen(cfg, a, false), ValidationError);
  fs::remove_all(root);
}

TEST(Cli, FullChain) {
  const auto root = fresh("cli");
  const auto cfg = small_config(root);
  const std::string base = "--config " + cfg.string() + " --workdir " + (root / "run").string() + " --seed 11 ";
  const Workdir wd{root / "run"};

  EXPECT_EQ(cli(base + "dataset", root / "log0"), 2);
  EXPECT_NE(slurp(root / "log0").find("cardiomap"), std::string::npos);

  ASSERT_EQ(cli(base + "gen"), 0);
  EXPECT_EQ(cli(base + "gen"), 2);
  ASSERT_EQ(cli(base + "simulate --jobs 2"), 0);
  ASSERT_EQ(cli(base + "egm"), 0);
  ASSERT_EQ(cli(base + "dataset"), 0);
  const auto h1 = sha256_file(wd.dataset() / "manifest.json");
  ASSERT_EQ(cli(base + "dataset"), 0);
  EXPECT_EQ(sha256_file(wd.dataset() / "manifest.json"), h1);

  DatasetReader rd(wd.dataset());
  EXPECT_EQ(rd.sample_count(), 16u);
  EXPECT_EQ(rd.sample(0).egm.data.size(), 2u * 25u);

  const auto pred = root / "pred";
  copy_truth_as_prediction(wd, pred);
  ASSERT_EQ(cli(base + "eval --pred " + pred.string(), root / "log_eval"), 0) << slurp(root / "log_eval");
  const json m = read_json(wd.eval() / "metrics.json");
  EXPECT_EQ(m.at("records").size(), 4u);
  EXPECT_EQ(m.at("aggregate").at("mean_jaccard").get<double>(), 1.0);
  EXPECT_EQ(m.at("aggregate").at("mean_rmse").get<double>(), 0.0);
  EXPECT_EQ(line_count(wd.eval() / "metrics.csv"), 5u);
  for (const auto& r : m.at("records")) EXPECT_TRUE(r.contains("fold"));

  ASSERT_EQ(cli(base + "surrogate --count 20 --pred " + pred.string()), 0);
  const json s = read_json(wd.surrogate() / "results.json");
  EXPECT_EQ(line_count(wd.surrogate() / "results.csv"), 5u);
  EXPECT_TRUE(fs::exists(wd.surrogate() / "aggregate.csv"));
  EXPECT_EQ(s.at("aggregate").at("median_percentile").get<double>(), 0.0);

  EXPECT_EQ(cli(base + "eval --pred " + (root / "nothing").string()), 2);

  // Regenerating the fields invalidates everything downstream.
  ASSERT_EQ(cli(base + "--force gen --count 3"), 0);
  EXPECT_EQ(cli(base + "dataset", root / "log1"), 2);
  EXPECT_NE(slurp(root / "log1").find("stale"), std::string::npos);
  EXPECT_EQ(cli(base + "egm"), 2);
  fs::remove_all(root);
}

TEST(Cli, GenIsDeterministic) {
  const auto root = fresh("det");
  const auto cfg = small_config(root);
  auto run = [&](const std::string& wd, int seed) {
    return cli("--config " + cfg.string() + " --workdir " + (root / wd).string() + " --seed " +
               std::to_string(seed) + " gen --jobs 3");
  };
  ASSERT_EQ(run("a", 4), 0);
  ASSERT_EQ(run("b", 4), 0);
  ASSERT_EQ(run("c", 5), 0);
  const auto ha = tree_hashes(root / "a"), hb = tree_hashes(root / "b"), hc = tree_hashes(root / "c");
  EXPECT_EQ(ha, hb);
  EXPECT_NE(ha.at("fields/sim_00000.f32"), hc.at("fields/sim_00000.f32"));
  fs::remove_all(root);
}

TEST(Cli, GenCountsAndModes) {
  const auto root = fresh("modes");
  const auto cfg = small_config(root, {{"grid", {{"n", 32}}},
                                       {"electrodes", {{"spacing_cm", 0.05}}},
                                       {"dataset", {{"target_size", 16}}}});
  const std::string base = "--config " + cfg.string() + " --force --workdir ";
  ASSERT_EQ(cli(base + (root / "c").string() + " gen --mode C --count 330"), 0);
  const json c = read_json(root / "c" / "fields" / "manifest.json");
  EXPECT_EQ(c.at("class_counts"), json({{"HeI", 107}, {"HoA", 187}, {"HeA", 36}}));
  EXPECT_EQ(c.at("simulations").size(), 330u);

  ASSERT_EQ(cli(base + (root / "z").string() + " gen --count 0"), 0);
  EXPECT_EQ(read_json(root / "z" / "fields" / "manifest.json").at("simulations").size(), 0u);

  ASSERT_EQ(cli(base + (root / "h").string() + " gen --mode HoA --count 3"), 0);
  const json hoa = read_json(root / "h" / "fields" / "manifest.json");
  ASSERT_EQ(hoa.at("simulations").size(), 3u);
  for (const auto& s : hoa.at("simulations")) {
    EXPECT_EQ(s.at("kind"), "HoA");
    EXPECT_FALSE(s.contains("mask"));
    EXPECT_TRUE(s.contains("alpha"));
  }
  EXPECT_EQ(cli(base + (root / "x").string() + " gen --mode HeX"), 2);
  EXPECT_EQ(cli(base + (root / "x").string() + " --preset lab gen"), 2);
  EXPECT_EQ(cli(base + (root / "x").string() + " frobnicate"), 2);
  fs::remove_all(root);
}

TEST(Cli, Plot) {
  const auto root = fresh("plot");
  save_scalar_field(root / "zero", Field(20, 30, 0.0), 0.01, "test");
  ASSERT_EQ(cli("plot " + (root / "zero.json").string() + " -o " + (root / "zero.png").string()), 0);
  const Image z = read_png(root / "zero.png");
  EXPECT_EQ(z.width, 30u);
  EXPECT_EQ(z.height, 20u);
  EXPECT_TRUE(std::all_of(z.gray.begin(), z.gray.end(), [&](auto v) { return v == z.gray[0]; }));

  const auto scar = gen_scar_map(12, ScarConfig{});
  save_mask(root / "scar", scar.mask, 0.01);
  ASSERT_EQ(cli("plot " + (root / "scar").string() + " --scale 2 -o " + (root / "scar.png").string()), 0);
  const Image s = read_png(root / "scar.png");
  EXPECT_EQ(s.width, 192u);
  const double lit = static_cast<double>(std::count(s.gray.begin(), s.gray.end(), 255)) / 4.0;
  const double want = scar.area_fraction() * 96.0 * 96.0;
  EXPECT_NEAR(lit, want, 0.01 * want);

  ASSERT_EQ(cli("plot " + (root / "scar.json").string() + " -o " + (root / "scar.csv").string()), 0);
  EXPECT_EQ(line_count(root / "scar.csv"), 96u);

  EgmArray e;
  e.frames = 7;
  e.grid = ElectrodeGrid{2, 3, 0.1, 0.1, 0.05, 0.05};
  for (std::size_t i = 0; i < 42; ++i) e.data.push_back(std::sin(0.3 * static_cast<double>(i)));
  save_egm(root / "e.egm", e);
  ASSERT_EQ(cli("plot " + (root / "e.egm.json").string() + " --electrode 1 2 -o " + (root / "t.csv").string()), 0);
  EXPECT_EQ(line_count(root / "t.csv"), 8u);
  ASSERT_EQ(cli("plot " + (root / "e.egm").string() + " -o " + (root / "t.png").string()), 0);
  ASSERT_EQ(cli("plot " + (root / "t.csv").string() + " -o " + (root / "t2.png").string()), 0);
  EXPECT_EQ(read_png(root / "t2.png").width, 800u);
  ASSERT_EQ(cli("plot " + (root / "e.egm").string() + " --frame 3 -o " + (root / "f.csv").string()), 0);
  EXPECT_EQ(line_count(root / "f.csv"), 2u);
  EXPECT_EQ(cli("plot " + (root / "e.egm").string() + " --electrode 5 0 -o " + (root / "bad.csv").string()), 2);

  write_json(root / "odd.json", {{"kind", "spectrogram"}});
  EXPECT_EQ(cli("plot " + (root / "odd.json").string() + " -o " + (root / "odd.png").string()), 2);
  EXPECT_EQ(cli("plot " + (root / "missing.json").string() + " -o " + (root / "m.png").string()), 2);
  EXPECT_EQ(cli("plot " + (root / "zero.json").string() + " -o " + (root / "zero.bmp").string()), 2);
  fs::remove_all(root);
}

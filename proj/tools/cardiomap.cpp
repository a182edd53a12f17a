// cardiomap: substrate generation, simulation, electrogram recording, dataset
// building and evaluation from the command line.

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <thread>

#include <CLI11.hpp>

#include "cardiomap/config.hpp"
#include "cardiomap/pipeline.hpp"
#include "cardiomap/plot.hpp"

using namespace cardiomap;

namespace {

struct Globals {
  std::string config_file;
  std::string preset = "desk";
  std::uint64_t seed = 1;
  std::size_t jobs = 0;
  bool force = false;
  std::string workdir = "run";
};

struct PlotArgs {
  std::string artifact;
  std::string out;
  std::string component = "d_xx";
  long frame = -1;
  std::vector<std::size_t> electrode;
  std::size_t scale = 1;
};

Field to_field(const Mask& m) {
  Field f(m.rows(), m.cols());
  for (std::size_t i = 0; i < m.size(); ++i) f.data()[i] = m.data()[i];
  return f;
}

void emit_field(const Field& f, const fs::path& out, std::size_t scale) {
  const auto ext = out.extension();
  if (ext == ".png")
    write_png(out, heatmap(f, scale));
  else if (ext == ".csv")
    write_field_csv(out, f);
  else
    throw ValidationError("plot output must end in .png or .csv: " + out.string());
}

fs::path stem_of(const fs::path& p) {
  if (p.extension() == ".json" || p.extension() == ".f32" || p.extension() == ".u8") return p.parent_path() / p.stem();
  return p;
}

void run_plot(const PlotArgs& a) {
  const fs::path in(a.artifact), out(a.out);
  if (in.extension() == ".csv") {
    auto [header, cols] = read_csv(in);
    if (cols.size() < 2) throw ValidationError(in.string() + ": need an x column and at least one series");
    if (out.extension() != ".png") throw ValidationError("csv input can only be plotted to .png");
    write_png(out, line_plot(cols[0], {cols.begin() + 1, cols.end()}));
    return;
  }
  const fs::path stem = stem_of(in);
  if (!fs::exists(sidecar_path(stem))) throw ValidationError("artifact not found: " + sidecar_path(stem).string());
  const json meta = read_json(sidecar_path(stem));
  const std::string kind = meta.value("kind", std::string{});
  if (kind == "tensor_field") {
    const auto t = load_tensor_field(stem);
    if (a.component == "d_xx") emit_field(t.d_xx, out, a.scale);
    else if (a.component == "d_yy") emit_field(t.d_yy, out, a.scale);
    else if (a.component == "d_xy") emit_field(t.d_xy, out, a.scale);
    else throw ValidationError("unknown tensor component '" + a.component + "' (d_xx, d_yy, d_xy)");
  } else if (kind == "mask") {
    emit_field(to_field(load_mask(stem)), out, a.scale);
  } else if (kind == "scalar_field") {
    emit_field(load_scalar_field(stem), out, a.scale);
  } else if (kind == "vm_stack") {
    VmStackReader r(stem);
    const std::size_t frames = r.info().frames;
    if (frames == 0) throw ValidationError(stem.string() + ": empty stack");
    const std::size_t want = a.frame < 0 ? frames - 1 : static_cast<std::size_t>(a.frame);
    if (want >= frames) throw ValidationError("frame out of range (stack has " + std::to_string(frames) + ")");
    Field f;
    for (std::size_t k = 0; k <= want; ++k) r.next(f);
    emit_field(f, out, a.scale);
  } else if (kind == "egm") {
    const EgmArray egm = load_egm(stem);
    if (a.frame >= 0) {
      if (static_cast<std::size_t>(a.frame) >= egm.frames) throw ValidationError("frame out of range");
      emit_field(egm.frame_field(static_cast<std::size_t>(a.frame)), out, a.scale);
      return;
    }
    const std::size_t r = a.electrode.size() == 2 ? a.electrode[0] : egm.grid.rows / 2;
    const std::size_t c = a.electrode.size() == 2 ? a.electrode[1] : egm.grid.cols / 2;
    if (out.extension() == ".csv") {
      write_egm_csv(out, egm, r, c);
    } else if (out.extension() == ".png") {
      if (r >= egm.grid.rows || c >= egm.grid.cols) throw ValidationError("electrode index out of range");
      std::vector<double> t(egm.frames);
      for (std::size_t k = 0; k < egm.frames; ++k) t[k] = static_cast<double>(k + 1) * egm.sample_interval_ms;
      write_png(out, line_plot(t, {egm.trace(r, c)}));
    } else {
      throw ValidationError("plot output must end in .png or .csv: " + out.string());
    }
  } else {
    throw ValidationError("cannot plot artifact kind '" + kind + "' (" + sidecar_path(stem).string() + ")");
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"cardiac substrate mapping pipeline"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--config", g.config_file, "JSON file merged over the preset")->check(CLI::ExistingFile);
  app.add_option("--preset", g.preset, "desk or paper")->check(CLI::IsMember({"desk", "paper"}));
  app.add_option("--seed", g.seed, "base seed");
  app.add_option("--jobs", g.jobs, "worker threads (0 = hardware concurrency)");
  app.add_flag("--force", g.force, "overwrite existing outputs");
  app.add_option("--workdir", g.workdir, "pipeline directory");

  std::string mode_s, pred_dir, mode_filter;
  std::optional<std::size_t> count, folds, surrogates;
  bool no_vm = false, inline_egm = false;

  auto* gen = app.add_subcommand("gen", "generate diffusion tensor fields");
  gen->add_option("--mode", mode_s, "HeI, HoA, HeA or C");
  gen->add_option("--count", count, "number of simulations");

  auto* sim = app.add_subcommand("simulate", "run the monodomain model on every field");
  sim->add_flag("--no-vm", no_vm, "do not store transmembrane potential stacks");
  sim->add_flag("--inline-egm", inline_egm, "record electrograms during the run");

  app.add_subcommand("egm", "record unipolar electrograms from stored potentials");

  auto* ds = app.add_subcommand("dataset", "build the sample shards and manifest");
  ds->add_option("--folds", folds, "cross-validation folds");

  auto* ev = app.add_subcommand("eval", "score predicted fields against ground truth");
  ev->add_option("--pred", pred_dir, "directory of predicted tensor fields")->required();
  ev->add_option("--mode", mode_filter, "restrict to one mode");

  auto* sg = app.add_subcommand("surrogate", "wavelet surrogate significance test");
  sg->add_option("--pred", pred_dir, "directory of predicted tensor fields")->required();
  sg->add_option("--mode", mode_filter, "restrict to one mode");
  sg->add_option("--count", surrogates, "surrogates per simulation");

  PlotArgs pa;
  auto* pl = app.add_subcommand("plot", "write a heatmap, line plot or CSV of an artifact");
  pl->add_option("artifact", pa.artifact, "sidecar .json, data stem or .csv")->required();
  pl->add_option("-o,--out", pa.out, "output .png or .csv")->required();
  pl->add_option("--component", pa.component, "tensor component");
  pl->add_option("--frame", pa.frame, "frame index for stacks");
  pl->add_option("--electrode", pa.electrode, "row and column of an EGM trace")->expected(2);
  pl->add_option("--scale", pa.scale, "pixels per cell");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (pl->parsed()) {
      run_plot(pa);
      return 0;
    }
    PipelineConfig cfg = load_config(g.preset, g.config_file, g.seed);
    if (!mode_s.empty()) cfg.mode = parse_mode(mode_s);
    if (count) cfg.count = *count;
    if (folds) cfg.dataset.folds = *folds;
    if (surrogates) {
      if (*surrogates == 0) throw ValidationError("--count must be positive");
      cfg.surrogates = *surrogates;
    }
    const std::size_t jobs = g.jobs ? g.jobs : std::max(1u, std::thread::hardware_concurrency());
    const Workdir wd{g.workdir};
    std::optional<Mode> mf;
    if (!mode_filter.empty()) mf = parse_mode(mode_filter);

    if (gen->parsed()) stage_gen(cfg, wd, g.force, jobs);
    else if (sim->parsed()) stage_simulate(cfg, wd, {!no_vm, inline_egm, jobs});
    else if (app.got_subcommand("egm")) stage_egm(cfg, wd, jobs);
    else if (ds->parsed()) stage_dataset(cfg, wd);
    else if (ev->parsed()) stage_eval(cfg, wd, pred_dir, mf);
    else if (sg->parsed()) stage_surrogate(cfg, wd, pred_dir, mf);
  } catch (const InstabilityError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

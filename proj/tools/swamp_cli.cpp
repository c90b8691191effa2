// swamp: command-line front end for the pruning experiments and landscape probes.

#include "swamp/experiment.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>

namespace fs = std::filesystem;
using namespace swamp;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "experiment config file")->required()->check(CLI::ExistingFile);
  cmd->add_option("--seed", c.seed, "experiment seed (overrides the config)");
  cmd->add_option("--out", c.out, "output directory (overrides the config)");
  cmd->add_option("--override", c.overrides, "key=value config override, repeatable");
}

ExperimentConfig resolve(const Common& c) {
  std::vector<std::string> ov = c.overrides;
  if (c.seed) ov.push_back("seed=" + std::to_string(*c.seed));
  if (!c.out.empty()) ov.push_back("out=" + c.out);
  return load_config(c.config, ov);
}

Dataset head(const Dataset& ds, Index n) {
  Dataset out = ds;
  n = std::min(n, ds.size());
  out.inputs = ds.inputs.topRows(n);
  out.labels.resize(static_cast<std::size_t>(n));
  return out;
}

const Dataset& pick_split(const DataBundle& data, const std::string& split) {
  if (split == "train") return data.train;
  if (split == "test") return data.test;
  if (split == "holdout") return data.holdout;
  throw ConfigError("unknown split '" + split + "' (expected train, test or holdout)");
}

void print_eval_row(const std::string& name, const CalibratedEval& ev) {
  std::printf("%s,%.6f,%.6f,%.4f\n", name.c_str(), ev.accuracy, ev.nll, ev.temperature);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Iterative magnitude pruning and SWAMP experiments"};
  app.require_subcommand(1);

  Common common;
  std::vector<CLI::App*> runs;
  for (const char* name : {"dense", "imp", "swamp"}) {
    auto* cmd = app.add_subcommand(name, std::string("run the ") + name + " driver");
    add_common(cmd, common);
    runs.push_back(cmd);
  }

  std::string ckpt_a, ckpt_b, split = "test";
  Index grid = 25;
  auto* barrier = app.add_subcommand("barrier", "loss along the straight line between two checkpoints");
  add_common(barrier, common);
  barrier->add_option("--a", ckpt_a, "first endpoint")->required()->check(CLI::ExistingFile);
  barrier->add_option("--b", ckpt_b, "second endpoint")->required()->check(CLI::ExistingFile);
  barrier->add_option("--grid", grid, "number of interpolation points")->capture_default_str();
  barrier->add_option("--split", split, "train, test or holdout")->capture_default_str();

  std::vector<std::string> points;
  Index resolution = 21;
  double margin = 0.2;
  auto* surface = app.add_subcommand("surface", "loss on the plane through three solutions");
  add_common(surface, common);
  surface->add_option("--ckpt", points,
                      "one checkpoint with at least three stored particles, or three checkpoints")
      ->required()
      ->check(CLI::ExistingFile);
  surface->add_option("--resolution", resolution, "grid points per axis")->capture_default_str();
  surface->add_option("--margin", margin, "border around the three points, relative to their extent")
      ->capture_default_str();
  surface->add_option("--split", split, "train, test or holdout")->capture_default_str();

  std::string ckpt;
  std::optional<Index> probes, batch;
  bool exact = false;
  auto* hessian = app.add_subcommand("hessian-trace", "Hutchinson estimate of the Hessian trace");
  add_common(hessian, common);
  hessian->add_option("--ckpt", ckpt, "checkpoint")->required()->check(CLI::ExistingFile);
  hessian->add_option("--probes", probes, "Rademacher probes (default hessian.probes)");
  hessian->add_option("--batch", batch, "training samples in the loss (default hessian.batch)");
  hessian->add_flag("--exact", exact, "also compute the dense finite-difference trace (<= 512 parameters)");

  auto* eval = app.add_subcommand("eval", "accuracy and calibrated NLL of a checkpoint and its particles");
  add_common(eval, common);
  eval->add_option("--ckpt", ckpt, "checkpoint")->required()->check(CLI::ExistingFile);

  std::vector<std::string> members;
  auto* ensemble = app.add_subcommand("ensemble-eval", "softmax-averaged ensemble of checkpoints");
  add_common(ensemble, common);
  ensemble->add_option("--ckpt", members, "member checkpoints")->required()->check(CLI::ExistingFile);

  std::string mask_path, method = "swamp";
  auto* transplant = app.add_subcommand("transplant-mask", "train one cycle under a mask taken from a checkpoint");
  add_common(transplant, common);
  transplant->add_option("--mask", mask_path, "checkpoint providing the mask")->required()->check(CLI::ExistingFile);
  transplant->add_option("--method", method, "sgd or swamp")->capture_default_str();

  std::string axis, values, seeds, methods = "imp,swamp";
  auto* sweep = app.add_subcommand("sweep", "run a grid of experiments and write sweep.csv");
  add_common(sweep, common);
  sweep->add_option("--axis", axis, "sparsity-curve, particle-count or mask-transplant")->required();
  sweep->add_option("--values", values, "cycles or particle counts, e.g. 1..13 or 1,2,4,8")->required();
  sweep->add_option("--seeds", seeds, "comma-separated seeds (default: the config seed)");
  sweep->add_option("--methods", methods, "sparsity-curve drivers")->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    const ExperimentConfig cfg = resolve(common);
    for (auto* cmd : runs) {
      if (cmd->parsed()) {
        RunOptions opts;
        opts.log = &std::cerr;
        run_experiment(cfg, command_from(cmd->get_name()), opts);
        return 0;
      }
    }

    if (barrier->parsed() || surface->parsed()) {
      const DataBundle data = load_data(cfg);
      const ModelObjective objective(cfg.model, pick_split(data, split));
      fs::create_directories(cfg.out);
      if (barrier->parsed()) {
        const auto a = checkpoint_params(load_checkpoint(ckpt_a, &cfg.model), cfg.model);
        const auto b = checkpoint_params(load_checkpoint(ckpt_b, &cfg.model), cfg.model);
        const BarrierScan scan = linear_path_losses(a.values, b.values, grid, objective);
        write_scan_csv(scan, fs::path(cfg.out) / "barrier.csv");
        std::printf("barrier %.6f\n", scan.barrier);
        return 0;
      }
      std::vector<Eigen::VectorXf> w;
      if (points.size() == 1) {
        w = checkpoint_particles(load_checkpoint(points[0], &cfg.model), cfg.model);
        if (w.size() < 3) {
          throw std::runtime_error("surface: " + points[0] + " stores " + std::to_string(w.size()) +
                                   " particles; need three (run with save_particles = true)");
        }
      } else if (points.size() == 3) {
        for (const auto& p : points) w.push_back(checkpoint_params(load_checkpoint(p, &cfg.model), cfg.model).values);
      } else {
        throw std::runtime_error("surface: pass one checkpoint with particles or exactly three checkpoints");
      }
      const PlaneGrid g = plane_surface(w[0], w[1], w[2], resolution, margin, objective);
      write_plane_grid(g, fs::path(cfg.out) / "surface.grid");
      write_plane_points(g, fs::path(cfg.out) / "surface_points.csv");
      std::printf("surface %lldx%lld written to %s\n", static_cast<long long>(g.nx), static_cast<long long>(g.ny),
                  cfg.out.c_str());
      return 0;
    }

    if (hessian->parsed()) {
      const DataBundle data = load_data(cfg);
      const Checkpoint ck = load_checkpoint(ckpt, &cfg.model);
      const ParamVector params = checkpoint_params(ck, cfg.model);
      const PrunableSet prunable = make_prunable_set(params.segments, cfg.prunable);
      const Eigen::VectorXf mask = ck.mask.expand(prunable);
      const Dataset sub = head(data.train, batch.value_or(cfg.hessian_batch));
      const ModelObjective objective(cfg.model, sub, mask);
      const TraceEstimate est =
          hessian_trace_hutchinson(objective, params.values, mask, probes.value_or(cfg.hessian_probes), cfg.seed);
      std::printf("hutchinson %.6f +- %.6f (%lld probes, %lld samples)\n", est.estimate, est.standard_error(),
                  static_cast<long long>(est.probes), static_cast<long long>(sub.size()));
      if (exact) std::printf("exact %.6f\n", exact_hessian_trace(objective, params.values, mask));
      return 0;
    }

    if (eval->parsed()) {
      const DataBundle data = load_data(cfg);
      const Checkpoint ck = load_checkpoint(ckpt, &cfg.model);
      const ParamVector params = checkpoint_params(ck, cfg.model);
      const Eigen::VectorXf mask = ck.mask.expand(make_prunable_set(params.segments, cfg.prunable));
      std::printf("model,test_acc,test_nll,temperature\n");
      const auto particles = checkpoint_particles(ck, cfg.model);
      for (std::size_t n = 0; n < particles.size(); ++n) {
        print_eval_row("P" + std::to_string(n + 1),
                       calibrated_eval(cfg.model, ParamVector{params.segments, particles[n]}, mask, data));
      }
      print_eval_row(particles.empty() ? "model" : "WA", calibrated_eval(cfg.model, params, mask, data));
      return 0;
    }

    if (ensemble->parsed()) {
      const DataBundle data = load_data(cfg);
      std::vector<EnsembleMember> ms;
      std::vector<Segment> layout = param_layout(cfg.model);
      const PrunableSet prunable = make_prunable_set(layout, cfg.prunable);
      for (const auto& m : members) {
        const Checkpoint ck = load_checkpoint(m, &cfg.model);
        ms.push_back({checkpoint_params(ck, cfg.model).values, ck.mask.expand(prunable)});
      }
      const EvalResult r = eval_ensemble(cfg.model, layout, ms, data.test);
      std::printf("members,test_acc,test_nll\n%zu,%.6f,%.6f\n", ms.size(), r.accuracy, r.nll);
      return 0;
    }

    if (transplant->parsed()) {
      const Checkpoint src = load_checkpoint(mask_path);
      RunOptions opts;
      opts.log = &std::cerr;
      opts.fixed_mask = transplant_mask(src.mask, src.spec_digest, cfg.model);
      if (method != "sgd" && method != "swamp") throw ConfigError("--method must be sgd or swamp");
      run_experiment(cfg, method == "sgd" ? Command::Imp : Command::Swamp, opts);
      return 0;
    }

    if (sweep->parsed()) {
      SweepRequest req;
      req.axis = axis;
      req.values = parse_index_list(values);
      if (!seeds.empty()) {
        for (Index s : parse_index_list(seeds)) req.seeds.push_back(static_cast<std::uint64_t>(s));
      }
      req.methods.clear();
      std::stringstream ms(methods);
      for (std::string m; std::getline(ms, m, ',');) req.methods.push_back(m);
      const int failed = run_sweep(cfg, req, std::cerr);
      if (failed > 0) {
        std::cerr << "sweep: " << failed << " point(s) failed; see sweep.csv\n";
        return 2;
      }
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

#include "swamp/experiment.hpp"

#include "swamp/rng.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <mutex>
#include <sstream>

namespace swamp {

namespace fs = std::filesystem;

DataBundle load_data(const ExperimentConfig& cfg) {
  const auto& d = cfg.data;
  Dataset full;
  Dataset test;
  if (d.source == "idx") {
    full = load_idx(d.train_images, d.train_labels, d.limit > 0 ? std::optional<Index>(d.limit) : std::nullopt);
    test = load_idx(d.test_images, d.test_labels, d.test_limit > 0 ? std::optional<Index>(d.test_limit) : std::nullopt,
                    &full.stats);
  } else {
    const auto kind = synthetic_kind_from(d.source);
    const int classes = static_cast<int>(cfg.model.classes);
    full = make_synthetic(kind, d.train_size, classes, d.noise, d.seed);
    test = make_synthetic(kind, d.test_size, classes, d.noise, hash64(d.seed, 1, 0));
    test.split = Split::Test;
  }
  if (full.feature_shape != cfg.model.input_shape) {
    throw ConfigError("data features " + shape_str(full.feature_shape) + " do not match model.input " +
                      shape_str(cfg.model.input_shape));
  }
  if (full.classes > cfg.model.classes || test.classes > cfg.model.classes) {
    throw ConfigError("data has " + std::to_string(std::max(full.classes, test.classes)) +
                      " classes, model.classes is " + std::to_string(cfg.model.classes));
  }
  full.classes = test.classes = static_cast<int>(cfg.model.classes);
  auto [train, holdout] = split_holdout(full, d.holdout_fraction);
  if (!train.standardized) {
    const NormStats stats = compute_stats(train);
    standardize(train, stats);
    standardize(holdout, stats);
    standardize(test, stats);
  }
  return {std::move(train), std::move(holdout), std::move(test)};
}

Command command_from(const std::string& name) {
  if (name == "dense") return Command::Dense;
  if (name == "imp") return Command::Imp;
  if (name == "swamp") return Command::Swamp;
  throw ConfigError("unknown command '" + name + "' (expected dense, imp or swamp)");
}

std::string command_name(Command cmd) {
  switch (cmd) {
    case Command::Dense: return "dense";
    case Command::Imp: return "imp";
    case Command::Swamp: return "swamp";
  }
  return "swamp";
}

ExperimentConfig resolve_config(const ExperimentConfig& cfg, Command cmd, bool fixed_mask) {
  ExperimentConfig r = cfg;
  if (cmd != Command::Swamp) {
    r.particles = 1;
    r.particle_schedule.clear();
    r.swa.enabled = false;
  }
  if (cmd == Command::Dense || fixed_mask) r.cycles = 0;
  return r;
}

std::string format_metrics_row(const MetricsRow& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%lld,%.6f,%s,%ld,%.6f,%.6f,%.6f,%.4f,%.3f", static_cast<long long>(r.cycle),
                r.sparsity, r.phase.c_str(), r.step, r.train_loss, r.test_acc, r.test_nll, r.temperature,
                r.wall_time_s);
  return buf;
}

std::string cycle_checkpoint_name(Index cycle) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "cycle_%02lld.ckpt", static_cast<long long>(cycle));
  return buf;
}

CalibratedEval calibrated_eval(const ModelSpec& spec, const ParamVector& params, const Eigen::VectorXf& mask,
                               const DataBundle& data) {
  const RowMatrixXf test_logits = compute_logits(spec, params, &mask, data.test);
  CalibratedEval out;
  out.accuracy = evaluate_logits(test_logits, data.test.labels).accuracy;
  if (data.holdout.size() == 0) {
    out.nll = nll_at_temperature(test_logits, data.test.labels, 1.0);
    return out;
  }
  const RowMatrixXf hold_logits = compute_logits(spec, params, &mask, data.holdout);
  const TemperatureFit fit = temperature_scale_nll(hold_logits, data.holdout.labels, test_logits, data.test.labels);
  out.nll = fit.nll;
  out.temperature = fit.temperature;
  return out;
}

namespace {

class MetricsWriter {
 public:
  explicit MetricsWriter(const fs::path& path) : out_(path, std::ios::trunc) {
    if (!out_) throw std::runtime_error("cannot write " + path.string());
    out_ << kMetricsHeader << '\n';
  }
  void write(const MetricsRow& row) {
    std::lock_guard lock(mu_);
    out_ << format_metrics_row(row) << '\n';
    out_.flush();
    rows.push_back(row);
  }
  std::vector<MetricsRow> rows;

 private:
  std::ofstream out_;
  std::mutex mu_;
};

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

void write_summary(const fs::path& path, const std::vector<CycleSummary>& rows) {
  std::ostringstream os;
  os << "cycle,sparsity,train_loss,test_acc,test_nll,temperature\n";
  for (const auto& r : rows) {
    char buf[256];
    std::snprintf(buf, sizeof buf, "%lld,%.9g,%.9g,%.9g,%.9g,%.9g\n", static_cast<long long>(r.cycle), r.sparsity,
                  r.train_loss, r.test_acc, r.test_nll, r.temperature);
    os << buf;
  }
  const auto tmp = path.string() + ".tmp";
  write_text(tmp, os.str());
  fs::rename(tmp, path);
}

}  // namespace

std::vector<CycleSummary> read_summary(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::string line;
  std::getline(in, line);
  std::vector<CycleSummary> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    CycleSummary r;
    long long cycle = 0;
    if (std::sscanf(line.c_str(), "%lld,%lf,%lf,%lf,%lf,%lf", &cycle, &r.sparsity, &r.train_loss, &r.test_acc,
                    &r.test_nll, &r.temperature) != 6) {
      throw std::runtime_error("malformed summary line in " + path.string() + ": " + line);
    }
    r.cycle = static_cast<Index>(cycle);
    rows.push_back(r);
  }
  return rows;
}

ExperimentResult run_experiment(const ExperimentConfig& input, Command cmd, const RunOptions& options) {
  const auto t0 = std::chrono::steady_clock::now();
  auto elapsed = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(); };

  const ExperimentConfig cfg = resolve_config(input, cmd, options.fixed_mask.has_value());
  const std::uint64_t digest = config_digest(cfg);
  const fs::path dir = cfg.out;
  fs::create_directories(dir);
  fs::remove(dir / "summary.csv");
  write_text(dir / "config.resolved", to_text(cfg));

  const DataBundle data = load_data(cfg);
  TrainSetup setup = make_setup(cfg.model, data.train, cfg.prunable);
  configure_setup(setup, cfg);
  const LotteryConfig lottery = lottery_config(cfg);

  MetricsWriter metrics(dir / "metrics.csv");
  ExperimentResult result;
  result.dir = dir;

  // per-epoch rows from the first particle only
  struct EpochTrack {
    double loss_sum = 0.0;
    long steps = 0;
  };
  EpochTrack track;
  LotteryHooks hooks;
  if (cfg.eval_every_epochs > 0) {
    const long spe = setup.steps_per_epoch();
    hooks.on_step = [&](const StepInfo& info) {
      if (info.particle != 1) return;
      track.loss_sum += info.loss;
      ++track.steps;
      if (info.step % spe != 0) return;
      const double loss = track.loss_sum / static_cast<double>(track.steps);
      track = {};
      if ((info.epoch + 1) % cfg.eval_every_epochs != 0) return;
      ParamVector p{setup.layout, info.params};
      const CalibratedEval ev = calibrated_eval(cfg.model, p, info.mask, data);
      const double sparsity = 1.0 - [&] {
        Index kept = 0;
        for (Index i : setup.prunable.coordinates()) kept += info.mask[i] != 0.0f ? 1 : 0;
        return setup.prunable.count() ? static_cast<double>(kept) / static_cast<double>(setup.prunable.count()) : 1.0;
      }();
      metrics.write({info.cycle, sparsity, "epoch", info.step, loss, ev.accuracy, ev.nll, ev.temperature, elapsed()});
    };
  }
  hooks.on_ticket = [&](const MatchingTicket& ticket) {
    const Mask full = Mask::ones(setup.prunable.count());
    save_checkpoint(make_checkpoint(cfg.model, ticket.weights, full, 0, digest, cfg.seed), dir / "ticket.ckpt");
  };
  hooks.on_cycle = [&](const CycleState& state) {
    const Eigen::VectorXf m = state.mask.expand(setup.prunable);
    const long steps = setup.total_steps();
    if (state.particles.size() > 1) {
      for (std::size_t n = 0; n < state.particles.size(); ++n) {
        ParamVector p{setup.layout, state.particles[n]};
        const CalibratedEval ev = calibrated_eval(cfg.model, p, m, data);
        metrics.write({state.cycle, state.sparsity, "particle" + std::to_string(n + 1), steps, state.train_loss,
                       ev.accuracy, ev.nll, ev.temperature, elapsed()});
      }
    }
    const CalibratedEval ev = calibrated_eval(cfg.model, state.averaged, m, data);
    metrics.write({state.cycle, state.sparsity, "average", steps, state.train_loss, ev.accuracy, ev.nll,
                   ev.temperature, elapsed()});
    result.cycles.push_back({state.cycle, state.sparsity, state.train_loss, ev.accuracy, ev.nll, ev.temperature});
    static const std::vector<Eigen::VectorXf> no_particles;
    save_checkpoint(make_checkpoint(cfg.model, state.averaged, state.mask, static_cast<std::uint32_t>(state.cycle),
                                    digest, cfg.seed, cfg.save_particles ? state.particles : no_particles),
                    dir / cycle_checkpoint_name(state.cycle));
    if (options.log) {
      char buf[160];
      std::snprintf(buf, sizeof buf, "[%s] cycle %lld sparsity %.4f acc %.4f nll %.4f (%.1fs)\n",
                    command_name(cmd).c_str(), static_cast<long long>(state.cycle), state.sparsity, ev.accuracy,
                    ev.nll, elapsed());
      *options.log << buf << std::flush;
    }
  };

  if (options.fixed_mask) {
    run_with_mask(setup, lottery, *options.fixed_mask, hooks);
  } else if (cmd == Command::Swamp) {
    run_swamp(setup, lottery, hooks);
  } else {
    run_imp(setup, lottery, hooks);
  }
  write_summary(dir / "summary.csv", result.cycles);
  result.metrics = metrics.rows;
  return result;
}

bool experiment_complete(const ExperimentConfig& input, Command cmd, const fs::path& dir, bool fixed_mask) {
  const ExperimentConfig cfg = resolve_config(input, cmd, fixed_mask);
  try {
    if (!fs::exists(dir / "summary.csv")) return false;
    const auto rows = read_summary(dir / "summary.csv");
    if (static_cast<Index>(rows.size()) != cfg.cycles + 1) return false;
    const Checkpoint last = load_checkpoint(dir / cycle_checkpoint_name(cfg.cycles), &cfg.model);
    return last.config_digest == config_digest(cfg) && last.seed == cfg.seed &&
           last.cycle == static_cast<std::uint32_t>(cfg.cycles);
  } catch (const std::exception&) {
    return false;
  }
}

}  // namespace swamp

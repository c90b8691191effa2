#pragma once

// Experiment runner: resolves a config, runs a driver, and writes
//   config.resolved   the normalized config actually run
//   metrics.csv       cycle,sparsity,phase,step,train_loss,test_acc,test_nll,temperature,wall_time_s
//   ticket.ckpt       rewinding target
//   cycle_XX.ckpt     averaged weights and the mask each cycle trained under
//   summary.csv       one row per cycle; written last, so it marks a finished run

#include "swamp/calibration.hpp"
#include "swamp/checkpoint.hpp"
#include "swamp/config.hpp"
#include "swamp/landscape.hpp"

#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace swamp {

struct DataBundle {
  Dataset train;
  Dataset holdout;  // temperature-scaling split carved from the end of train
  Dataset test;
};

/// Loads or generates the configured data. Train statistics standardize all three splits.
DataBundle load_data(const ExperimentConfig& cfg);

enum class Command { Dense, Imp, Swamp };

Command command_from(const std::string& name);
std::string command_name(Command cmd);

/// The config a command actually runs: imp forces one SGD particle, dense
/// additionally runs no prune cycles. Equal resolved configs give equal digests.
ExperimentConfig resolve_config(const ExperimentConfig& cfg, Command cmd, bool fixed_mask = false);

struct MetricsRow {
  Index cycle = 0;
  double sparsity = 0.0;
  std::string phase;  // epoch, particle<n>, average
  long step = 0;
  double train_loss = 0.0;
  double test_acc = 0.0;
  double test_nll = 0.0;
  double temperature = 1.0;
  double wall_time_s = 0.0;
};

inline constexpr const char* kMetricsHeader =
    "cycle,sparsity,phase,step,train_loss,test_acc,test_nll,temperature,wall_time_s";

std::string format_metrics_row(const MetricsRow& row);

struct CycleSummary {
  Index cycle = 0;
  double sparsity = 0.0;
  double train_loss = 0.0;
  double test_acc = 0.0;
  double test_nll = 0.0;
  double temperature = 1.0;
};

struct ExperimentResult {
  std::filesystem::path dir;
  std::vector<CycleSummary> cycles;
  std::vector<MetricsRow> metrics;
};

/// Accuracy and temperature-scaled NLL (fit on holdout, reported on test).
struct CalibratedEval {
  double accuracy = 0.0;
  double nll = 0.0;
  double temperature = 1.0;
};

CalibratedEval calibrated_eval(const ModelSpec& spec, const ParamVector& params, const Eigen::VectorXf& mask,
                               const DataBundle& data);

struct RunOptions {
  std::optional<Mask> fixed_mask;  // train one cycle under this mask instead of pruning
  std::ostream* log = nullptr;
};

/// Runs `cmd` and writes artifacts under cfg.out. Throws on any error.
ExperimentResult run_experiment(const ExperimentConfig& cfg, Command cmd, const RunOptions& options = {});

/// True when dir holds a summary and a final checkpoint that load and match cfg.
bool experiment_complete(const ExperimentConfig& cfg, Command cmd, const std::filesystem::path& dir,
                         bool fixed_mask = false);

std::vector<CycleSummary> read_summary(const std::filesystem::path& path);

std::string cycle_checkpoint_name(Index cycle);

// sweeps ---------------------------------------------------------------------

struct SweepRequest {
  std::string axis;                   // sparsity-curve | particle-count | mask-transplant
  std::vector<Index> values;          // cycles (sparsity-curve, mask-transplant) or particle counts
  std::vector<std::uint64_t> seeds;   // empty: the config seed
  std::vector<std::string> methods = {"imp", "swamp"};  // sparsity-curve only
};

/// Parses "1,2,4" or "1..13".
std::vector<Index> parse_index_list(const std::string& text);

/// Runs every point, one sub-directory each under cfg.out, and writes
/// cfg.out/sweep.csv. Finished points are skipped. Returns the number of
/// failed points.
int run_sweep(const ExperimentConfig& cfg, const SweepRequest& request, std::ostream& log);

/// mean and sample standard deviation (0 for fewer than two values)
std::pair<double, double> mean_std(const std::vector<double>& xs);

}  // namespace swamp

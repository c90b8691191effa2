#pragma once

// Iterative magnitude pruning drivers: vanilla IMP (no rewinding steps),
// IMP with rewinding to a matching ticket, and SWAMP (several SWA-trained
// particles averaged before every prune).
//
// Cycle 0 trains the dense network; cycle c >= 1 trains under the mask
// obtained after c prunes, so its sparsity is 1 - alpha^c (up to rounding).

#include "swamp/data.hpp"
#include "swamp/model.hpp"
#include "swamp/optim.hpp"
#include "swamp/pruning.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

namespace swamp {

struct SwaConfig {
  bool enabled = true;
  double start_fraction = 0.75;  // snapshots over the epochs after this fraction
  float lr = 0.05f;              // constant learning rate of the averaging phase
  long period_epochs = 1;
};

/// Everything a training run shares across particles. Read-only while training.
struct TrainSetup {
  ModelSpec spec;
  PrunableKinds prunable_kinds = PrunableKinds::Auto;
  std::vector<Segment> layout;
  PrunableSet prunable;
  Eigen::VectorXf decay_scope;
  const Dataset* train = nullptr;
  Index batch_size = 64;
  long epochs = 20;
  SgdConfig sgd;
  SwaConfig swa;

  long steps_per_epoch() const;
  long total_steps() const { return epochs * steps_per_epoch(); }
  /// First epoch (0-based) of the constant-lr averaging phase: floor(start_fraction * epochs).
  long swa_first_epoch() const;
};

TrainSetup make_setup(ModelSpec spec, const Dataset& train, PrunableKinds kinds = PrunableKinds::Auto);

enum class TrainMode { Sgd, Swa };

struct StepInfo {
  Index cycle;
  Index particle;
  long step;
  long epoch;
  float loss;
  float lr;
  const Eigen::VectorXf& params;
  const Eigen::VectorXf& velocity;
  const Eigen::VectorXf& mask;
};

/// Called after every optimizer step. With parallel particles it is invoked
/// from worker threads and must be thread-safe.
using StepObserver = std::function<void(const StepInfo&)>;

struct TrainOptions {
  Index cycle = 0;
  Index particle = 1;
  StepObserver on_step;
  bool keep_snapshots = false;
};

struct TrainResult {
  Eigen::VectorXf params;        // SWA mean in swa mode, final iterate otherwise
  Eigen::VectorXf last_iterate;
  long swa_count = 0;
  double final_epoch_loss = 0.0;
  std::vector<Eigen::VectorXf> snapshots;
};

struct MatchingTicket {
  ParamVector weights;
  long steps = 0;
  std::uint64_t seed = 0;
};

/// Noise seed of particle n in cycle c.
std::uint64_t particle_seed(std::uint64_t experiment_seed, Index cycle, Index particle);
/// Noise seed of the matching-ticket run.
std::uint64_t ticket_seed(std::uint64_t experiment_seed);

/// Dense training for exactly `steps` steps at constant `lr` from `init`.
MatchingTicket find_matching_ticket(const TrainSetup& setup, const ParamVector& init, long steps, float lr,
                                    std::uint64_t seed);

/// Trains from ticket * mask for setup.epochs epochs with batch order drawn from `noise_seed`.
TrainResult train_particle(const TrainSetup& setup, const MatchingTicket& ticket, const Mask& mask,
                           std::uint64_t noise_seed, TrainMode mode, const TrainOptions& options = {});

/// Coordinate-wise mean, summed in particle order.
Eigen::VectorXf average_particles(std::span<const Eigen::VectorXf> particles);

struct LotteryConfig {
  std::uint64_t seed = 0;
  Index cycles = 1;  // prune-retrain cycles after the dense cycle 0
  double keep_ratio = 0.8;
  Index particles = 4;
  std::vector<Index> particle_schedule;  // optional per-cycle particle counts (index = cycle)
  long rewind_steps = 0;
  float ticket_lr = 0.1f;
  bool swa = true;
  int threads = 1;
  bool keep_particles = true;
};

struct CycleState {
  Index cycle = 0;
  Mask mask;              // mask the cycle trained under
  double sparsity = 0.0;
  ParamVector averaged;   // mean over particles
  std::vector<Eigen::VectorXf> particles;
  std::vector<std::uint64_t> particle_seeds;
  double train_loss = 0.0;  // mean over particles of the last-epoch loss
  std::optional<PruneEvent> prune;  // prune applied after this cycle
};

struct LotteryHooks {
  std::function<void(const MatchingTicket&)> on_ticket;
  std::function<void(const CycleState&)> on_cycle;
  StepObserver on_step;
};

/// IMP: one SGD particle per cycle. rewind_steps == 0 resets to the initialization.
std::vector<CycleState> run_imp(const TrainSetup& setup, LotteryConfig cfg, const LotteryHooks& hooks = {});

/// SWAMP: N particles per cycle from the shared ticket, trained with SWA
/// (or plain SGD when cfg.swa is off), averaged, then pruned on |average|.
std::vector<CycleState> run_swamp(const TrainSetup& setup, const LotteryConfig& cfg, const LotteryHooks& hooks = {});

/// A single cycle under a fixed, externally supplied mask (mask transplantation).
CycleState run_with_mask(const TrainSetup& setup, const LotteryConfig& cfg, const Mask& mask,
                         const LotteryHooks& hooks = {});

}  // namespace swamp

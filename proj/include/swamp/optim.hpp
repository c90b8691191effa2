#pragma once

#include <Eigen/Dense>

#include <utility>
#include <vector>

namespace swamp {

struct Schedule {
  enum class Kind { Constant, Cosine, Piecewise };
  Kind kind = Kind::Cosine;
  long total_steps = 0;                          // cosine horizon T
  std::vector<std::pair<long, float>> points;    // piecewise: lr from each step onward
};

struct SgdConfig {
  float lr0 = 0.1f;
  float momentum = 0.9f;
  float weight_decay = 1e-4f;
  Schedule schedule;
};

/// Learning rate at step t. Cosine: lr0 * (1 + cos(pi t / T)) / 2 for 0 <= t <= T.
float lr_at(const SgdConfig& cfg, long step);

/// One momentum step, in place:
///   g' = (g + wd * w * decay_scope) * mask,  v <- mu v + g',  w <- w - lr v.
/// Masked coordinates of w and v stay exactly zero. Throws NonFiniteError on a
/// non-finite gradient, naming the step.
void sgd_step(Eigen::Ref<Eigen::VectorXf> params, const Eigen::VectorXf& grad, Eigen::VectorXf& velocity,
              const SgdConfig& cfg, float lr, const Eigen::VectorXf& mask, const Eigen::VectorXf& decay_scope,
              long step);

inline void sgd_step(Eigen::Ref<Eigen::VectorXf> params, const Eigen::VectorXf& grad, Eigen::VectorXf& velocity,
                     const SgdConfig& cfg, long step, const Eigen::VectorXf& mask,
                     const Eigen::VectorXf& decay_scope) {
  sgd_step(params, grad, velocity, cfg, lr_at(cfg, step), mask, decay_scope, step);
}

/// Running mean of parameter snapshots taken every `period` steps from `start_step` on.
struct SwaAccumulator {
  Eigen::VectorXf mean;
  long count = 0;
  long period = 1;
  long start_step = 0;

  bool due(long step) const { return step >= start_step && (step - start_step) % period == 0; }
};

/// mean <- (n * mean + w) / (n + 1) when `step` is on the snapshot schedule.
/// Returns whether a snapshot was taken.
bool swa_update(SwaAccumulator& acc, const Eigen::VectorXf& params, long step);

/// Throws std::logic_error("no snapshots collected") when count is zero.
Eigen::VectorXf swa_finalize(const SwaAccumulator& acc);

}  // namespace swamp

#include "swamp/optim.hpp"

#include "swamp/autograd.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace swamp {

float lr_at(const SgdConfig& cfg, long step) {
  if (step < 0) throw std::out_of_range("lr_at: negative step " + std::to_string(step));
  switch (cfg.schedule.kind) {
    case Schedule::Kind::Constant: return cfg.lr0;
    case Schedule::Kind::Cosine: {
      const long total = cfg.schedule.total_steps;
      if (total <= 0) throw std::invalid_argument("lr_at: cosine schedule needs a positive horizon");
      if (step > total) {
        throw std::out_of_range("lr_at: step " + std::to_string(step) + " beyond cosine horizon " + std::to_string(total));
      }
      if (step == total) return 0.0f;
      const double phase = std::numbers::pi * static_cast<double>(step) / static_cast<double>(total);
      return static_cast<float>(cfg.lr0 * 0.5 * (1.0 + std::cos(phase)));
    }
    case Schedule::Kind::Piecewise: {
      float lr = cfg.lr0;
      for (const auto& [from, value] : cfg.schedule.points) {
        if (step >= from) lr = value;
      }
      return lr;
    }
  }
  return cfg.lr0;
}

void sgd_step(Eigen::Ref<Eigen::VectorXf> params, const Eigen::VectorXf& grad, Eigen::VectorXf& velocity,
              const SgdConfig& cfg, float lr, const Eigen::VectorXf& mask, const Eigen::VectorXf& decay_scope,
              long step) {
  const Index dim = params.size();
  if (grad.size() != dim || velocity.size() != dim || mask.size() != dim || decay_scope.size() != dim) {
    throw std::invalid_argument("sgd_step: vector lengths differ at step " + std::to_string(step));
  }
  if (!grad.allFinite()) throw NonFiniteError("sgd_step: non-finite gradient at step " + std::to_string(step));
  const auto active = mask.array() != 0.0f;
  const Eigen::ArrayXf g = grad.array() + cfg.weight_decay * params.array() * decay_scope.array();
  velocity = active.select(cfg.momentum * velocity.array() + g, 0.0f).matrix();
  params = active.select(params.array() - lr * velocity.array(), 0.0f).matrix();
}

bool swa_update(SwaAccumulator& acc, const Eigen::VectorXf& params, long step) {
  if (!acc.due(step)) return false;
  if (acc.count == 0) {
    acc.mean = params;
  } else {
    const double n = static_cast<double>(acc.count);
    acc.mean = ((n * acc.mean.cast<double>() + params.cast<double>()) / (n + 1.0)).cast<float>();
  }
  ++acc.count;
  return true;
}

Eigen::VectorXf swa_finalize(const SwaAccumulator& acc) {
  if (acc.count == 0) throw std::logic_error("no snapshots collected");
  return acc.mean;
}

}  // namespace swamp

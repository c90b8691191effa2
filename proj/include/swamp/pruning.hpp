#pragma once

// Global magnitude pruning and sparsity accounting.

#include "swamp/mask.hpp"
#include "swamp/model.hpp"

namespace swamp {

struct PruneEvent {
  Index cycle = 0;
  float threshold = 0.0f;  // smallest kept magnitude
  Index previous_kept = 0;
  Index kept = 0;
  double sparsity = 0.0;
};

/// ceil(keep_ratio * surviving), computed so exact products such as 0.8 * 10 do not round up.
Index kept_count(double keep_ratio, Index surviving);

/// Keeps the ceil(keep_ratio * k) largest |w| among the k surviving prunable
/// coordinates, ranked globally across layers. Equal magnitudes keep the
/// lower coordinate first.
std::pair<Mask, PruneEvent> global_magnitude_prune(const Eigen::VectorXf& params, const PrunableSet& prunable,
                                                   const Mask& mask, double keep_ratio, Index cycle = 0);

/// 1 - support / P; zero for an empty prunable set.
double sparsity_of(const Mask& mask);

/// Continuous idealization 1 - keep_ratio^cycles.
double sparsity_after_cycles(double keep_ratio, Index cycles);

/// Copies a mask for reuse as the fixed mask of another run over the same model.
Mask transplant_mask(const Mask& mask, std::uint64_t source_spec_digest, const ModelSpec& target);

}  // namespace swamp

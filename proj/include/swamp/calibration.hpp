#pragma once

// Temperature scaling: fit a single softmax temperature on held-out logits
// and report the NLL of another split under it.

#include "swamp/tensor.hpp"

#include <span>

namespace swamp {

struct TemperatureFit {
  double temperature = 1.0;
  double nll = 0.0;
  bool degenerate = false;  // every row of logits constant; temperature has no effect
};

inline constexpr double kMinTemperature = 0.05;
inline constexpr double kMaxTemperature = 20.0;
inline constexpr double kTemperatureTolerance = 1e-3;

/// Mean of -log softmax(z / temperature)[y], in double precision.
double nll_at_temperature(const RowMatrixXf& logits, std::span<const int> labels, double temperature);

/// Golden-section search for the NLL-minimizing temperature in [0.05, 20],
/// stopped once the bracket is narrower than 1e-3.
TemperatureFit fit_temperature(const RowMatrixXf& logits, std::span<const int> labels);

/// Fits on the holdout split and evaluates NLL on the evaluation split.
TemperatureFit temperature_scale_nll(const RowMatrixXf& holdout_logits, std::span<const int> holdout_labels,
                                     const RowMatrixXf& eval_logits, std::span<const int> eval_labels);

}  // namespace swamp

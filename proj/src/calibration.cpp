#include "swamp/calibration.hpp"

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace swamp {

namespace {

bool all_rows_constant(const RowMatrixXf& logits) {
  for (Index r = 0; r < logits.rows(); ++r) {
    if (logits.row(r).maxCoeff() != logits.row(r).minCoeff()) return false;
  }
  return true;
}

void check_labels(const RowMatrixXf& logits, std::span<const int> labels) {
  if (static_cast<Index>(labels.size()) != logits.rows() || logits.rows() == 0) {
    throw std::invalid_argument("temperature scaling: " + std::to_string(labels.size()) + " labels for " +
                                std::to_string(logits.rows()) + " logit rows");
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= logits.cols()) {
      throw std::out_of_range("temperature scaling: label " + std::to_string(labels[i]) + " at index " +
                              std::to_string(i) + " out of range");
    }
  }
}

}  // namespace

double nll_at_temperature(const RowMatrixXf& logits, std::span<const int> labels, double temperature) {
  check_labels(logits, labels);
  double total = 0.0;
  for (Index r = 0; r < logits.rows(); ++r) {
    const Eigen::RowVectorXd z = logits.row(r).cast<double>() / temperature;
    const double m = z.maxCoeff();
    const double lse = m + std::log((z.array() - m).exp().sum());
    total += lse - z[labels[static_cast<std::size_t>(r)]];
  }
  return total / static_cast<double>(logits.rows());
}

TemperatureFit fit_temperature(const RowMatrixXf& logits, std::span<const int> labels) {
  check_labels(logits, labels);
  std::vector<bool> seen(static_cast<std::size_t>(logits.cols()), false);
  for (int y : labels) seen[static_cast<std::size_t>(y)] = true;
  for (std::size_t k = 0; k < seen.size(); ++k) {
    if (!seen[k]) throw std::invalid_argument("temperature scaling: class " + std::to_string(k) + " absent from fit set");
  }

  TemperatureFit fit;
  if (all_rows_constant(logits)) {
    fit.degenerate = true;
    fit.temperature = 1.0;
    fit.nll = std::log(static_cast<double>(logits.cols()));
    return fit;
  }
  const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = kMinTemperature;
  double b = kMaxTemperature;
  double c = b - inv_phi * (b - a);
  double d = a + inv_phi * (b - a);
  double fc = nll_at_temperature(logits, labels, c);
  double fd = nll_at_temperature(logits, labels, d);
  while (b - a >= kTemperatureTolerance) {
    if (fc < fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - inv_phi * (b - a);
      fc = nll_at_temperature(logits, labels, c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + inv_phi * (b - a);
      fd = nll_at_temperature(logits, labels, d);
    }
  }
  fit.temperature = 0.5 * (a + b);
  fit.nll = nll_at_temperature(logits, labels, fit.temperature);
  return fit;
}

TemperatureFit temperature_scale_nll(const RowMatrixXf& holdout_logits, std::span<const int> holdout_labels,
                                     const RowMatrixXf& eval_logits, std::span<const int> eval_labels) {
  TemperatureFit fit = fit_temperature(holdout_logits, holdout_labels);
  if (fit.degenerate && all_rows_constant(eval_logits)) {
    fit.nll = std::log(static_cast<double>(eval_logits.cols()));
    return fit;
  }
  fit.nll = nll_at_temperature(eval_logits, eval_labels, fit.temperature);
  return fit;
}

}  // namespace swamp

#include "swamp/calibration.hpp"
#include "swamp/rng.hpp"

#include <doctest.h>

#include <cmath>

using namespace swamp;

namespace {

// Labels drawn from softmax(base); base are the true log-probabilities.
struct Calibrated {
  RowMatrixXf logits;
  std::vector<int> labels;
};

Calibrated calibrated_set(Index n, Index k, std::uint64_t seed) {
  Calibrated c;
  c.logits.resize(n, k);
  RngStream r(seed, 0);
  for (Index i = 0; i < n; ++i) {
    Eigen::VectorXd z(k);
    for (Index j = 0; j < k; ++j) z[j] = 1.5 * r.normal();
    const Eigen::VectorXd p = (z.array() - z.maxCoeff()).exp() / (z.array() - z.maxCoeff()).exp().sum();
    const Eigen::VectorXd logp = p.array().log();
    c.logits.row(i) = logp.cast<float>().transpose();
    double u = r.uniform();
    int y = static_cast<int>(k - 1);
    for (Index j = 0; j < k; ++j) {
      u -= p[j];
      if (u < 0) {
        y = static_cast<int>(j);
        break;
      }
    }
    c.labels.push_back(y);
  }
  return c;
}

}  // namespace

TEST_CASE("NLL at a temperature") {
  RowMatrixXf z(1, 2);
  z << 0.0f, 0.0f;
  const std::vector<int> y = {1};
  CHECK(nll_at_temperature(z, y, 1.0) == doctest::Approx(std::log(2.0)));
  z << 2.0f, 0.0f;
  CHECK(nll_at_temperature(z, y, 2.0) == doctest::Approx(std::log(1.0 + std::exp(1.0))));
}

// Rows whose labels occur exactly in proportion to softmax(logits): the
// empirical NLL is then minimized exactly at temperature one.
static Calibrated exact_calibrated_set() {
  const std::vector<std::vector<int>> counts = {{2, 4, 6, 8}, {14, 2, 2, 2}, {5, 5, 5, 5}, {1, 1, 3, 15}, {9, 6, 4, 1}};
  Calibrated c;
  c.logits.resize(static_cast<Index>(counts.size()) * 20, 4);
  Index row = 0;
  for (const auto& cnt : counts) {
    for (int j = 0; j < 4; ++j) {
      for (int r = 0; r < cnt[static_cast<std::size_t>(j)]; ++r) {
        for (int q = 0; q < 4; ++q) c.logits(row, q) = std::log(cnt[static_cast<std::size_t>(q)] / 20.0f);
        c.labels.push_back(j);
        ++row;
      }
    }
  }
  return c;
}

TEST_CASE("calibrated logits give a temperature near one") {
  const auto c = exact_calibrated_set();
  const TemperatureFit fit = fit_temperature(c.logits, c.labels);
  CHECK(std::abs(fit.temperature - 1.0) <= 1e-3);
  CHECK_FALSE(fit.degenerate);
  const auto sampled = calibrated_set(20000, 4, 1);
  CHECK(fit_temperature(sampled.logits, sampled.labels).temperature == doctest::Approx(1.0).epsilon(0.03));
}

TEST_CASE("logits scaled by two recover a temperature near two") {
  auto c = exact_calibrated_set();
  const TemperatureFit base = fit_temperature(c.logits, c.labels);
  c.logits *= 2.0f;
  const TemperatureFit fit = fit_temperature(c.logits, c.labels);
  CHECK(fit.temperature >= 1.99);
  CHECK(fit.temperature <= 2.01);
  CHECK(fit.nll == doctest::Approx(base.nll).epsilon(1e-6));
}

TEST_CASE("uniform logits are degenerate with NLL ln K") {
  for (Index k : {2, 5}) {
    RowMatrixXf z = RowMatrixXf::Constant(2 * k, k, 0.7f);
    std::vector<int> y;
    for (Index i = 0; i < 2 * k; ++i) y.push_back(static_cast<int>(i % k));
    const TemperatureFit fit = fit_temperature(z, y);
    CHECK(fit.degenerate);
    CHECK(fit.nll == doctest::Approx(std::log(static_cast<double>(k))));
  }
}

TEST_CASE("every class must appear in the fit split") {
  RowMatrixXf z = RowMatrixXf::Random(4, 3);
  const std::vector<int> y = {0, 1, 0, 1};
  CHECK_THROWS(fit_temperature(z, y));
}

TEST_CASE("holdout fit is applied to the evaluation split") {
  const auto hold = calibrated_set(5000, 3, 3);
  auto eval = calibrated_set(3000, 3, 4);
  const TemperatureFit fit = temperature_scale_nll(hold.logits, hold.labels, eval.logits, eval.labels);
  CHECK(fit.nll == doctest::Approx(nll_at_temperature(eval.logits, eval.labels, fit.temperature)));
}

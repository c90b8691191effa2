#pragma once

// Shared fixtures for the unit and acceptance tests.

#include "swamp/experiment.hpp"

#include <Eigen/Dense>

#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

namespace swamp::testing {

/// L(w) = 1/2 sum a_i w_i^2, Hessian diag(a).
template <typename S>
struct Quadratic {
  using Scalar = S;
  using Vector = VectorX<S>;
  Vector a;

  Scalar value(const Vector& w) const { return Scalar(0.5) * (a.array() * w.array().square()).sum(); }
  Scalar value_and_grad(const Vector& w, Vector& g) const {
    g = (a.array() * w.array()).matrix();
    return value(w);
  }
};

/// One-dimensional double well (w^2 - 1)^2.
struct DoubleWell {
  using Scalar = double;
  using Vector = Eigen::VectorXd;
  double value(const Vector& w) const {
    const double s = w[0] * w[0] - 1.0;
    return s * s;
  }
  double value_and_grad(const Vector& w, Vector& g) const {
    g.resize(1);
    g[0] = 4.0 * w[0] * (w[0] * w[0] - 1.0);
    return value(w);
  }
};

/// A small two-hidden-layer MLP on 2-D spirals, sized for fast tests.
inline ExperimentConfig desk_config(const std::filesystem::path& out, Index hidden = 16, Index train_size = 400) {
  ConfigMap m;
  m["seed"] = "1";
  m["out"] = out.string();
  m["model.input"] = "2";
  m["model.layers"] = "dense:" + std::to_string(hidden) + ",relu,dense:" + std::to_string(hidden) + ",relu,dense:3";
  m["model.classes"] = "3";
  m["data.source"] = "spirals";
  m["data.train_size"] = std::to_string(train_size);
  m["data.test_size"] = "300";
  m["data.noise"] = "0.15";
  m["epochs"] = "4";
  m["batch_size"] = "32";
  m["cycles"] = "2";
  m["particles"] = "2";
  m["rewind_steps"] = "20";
  m["sgd.lr"] = "0.05";
  m["swa.lr"] = "0.02";
  return config_from_map(m);
}

inline std::vector<std::uint8_t> file_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("swamp_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace swamp::testing

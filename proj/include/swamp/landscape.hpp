#pragma once

// Loss-landscape probes: linear interpolation barriers, planar loss surfaces
// through three solutions, Hessian traces, and particle/ensemble evaluation.
//
// Probes take an objective rather than a model so analytic losses and
// trained networks go through the same code. An objective exposes
//   Scalar value(const Vector& w) const;
//   Scalar value_and_grad(const Vector& w, Vector& grad) const;
// and optionally `double error_rate(const Vector& w) const`.

#include "swamp/autograd.hpp"
#include "swamp/data.hpp"
#include "swamp/model.hpp"
#include "swamp/rng.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <concepts>
#include <filesystem>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace swamp {

template <class Obj>
concept Objective = requires(const Obj& o, const typename Obj::Vector& w, typename Obj::Vector& g) {
  typename Obj::Scalar;
  { o.value(w) } -> std::convertible_to<typename Obj::Scalar>;
  { o.value_and_grad(w, g) } -> std::convertible_to<typename Obj::Scalar>;
};

template <class Obj>
concept ObjectiveWithError = Objective<Obj> && requires(const Obj& o, const typename Obj::Vector& w) {
  { o.error_rate(w) } -> std::convertible_to<double>;
};

class LandscapeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Mean cross-entropy of a model over a dataset, evaluated in chunks.
/// With a mask, gradients are routed through w * mask; without one the
/// network is evaluated in full weight space.
class ModelObjective {
 public:
  using Scalar = float;
  using Vector = Eigen::VectorXf;

  ModelObjective(ModelSpec spec, const Dataset& data, std::optional<Eigen::VectorXf> mask = std::nullopt,
                 Index chunk = 2048);

  float value(const Vector& w) const { return evaluate(w, nullptr, nullptr); }
  float value_and_grad(const Vector& w, Vector& grad) const { return evaluate(w, &grad, nullptr); }
  double error_rate(const Vector& w) const {
    double err = 0.0;
    evaluate(w, nullptr, &err);
    return err;
  }

  const ModelSpec& spec() const { return spec_; }

 private:
  float evaluate(const Vector& w, Vector* grad, double* error) const;

  ModelSpec spec_;
  std::vector<Segment> layout_;
  const Dataset* data_;
  std::optional<Eigen::VectorXf> mask_;
  Index chunk_;
};

struct BarrierScan {
  std::vector<double> lambdas;
  std::vector<double> losses;
  std::vector<double> errors;  // NaN when the objective has no error rate
  double barrier = 0.0;
  double margin = 0.0;
};

/// max over the grid of L(lambda) minus the larger endpoint loss, floored at 0.
inline double barrier_of(const std::vector<double>& losses) {
  if (losses.size() < 2) throw LandscapeError("barrier: need at least two losses");
  const double peak = *std::max_element(losses.begin(), losses.end());
  return std::max(0.0, peak - std::max(losses.front(), losses.back()));
}

/// Evaluates L((1 - lambda) a + lambda b) at `grid` evenly spaced lambdas in [0, 1].
/// Interpolation is in full weight space; endpoints with different masks are not re-masked.
template <Objective Obj>
BarrierScan linear_path_losses(const typename Obj::Vector& a, const typename Obj::Vector& b, Index grid,
                               const Obj& objective, double margin = 0.0) {
  using Scalar = typename Obj::Scalar;
  if (a.size() != b.size()) {
    throw LandscapeError("linear_path_losses: endpoints have " + std::to_string(a.size()) + " and " +
                         std::to_string(b.size()) + " parameters");
  }
  if (grid < 2) throw LandscapeError("linear_path_losses: grid needs at least 2 points");
  BarrierScan scan;
  scan.margin = margin;
  for (Index i = 0; i < grid; ++i) {
    const double lambda = static_cast<double>(i) / static_cast<double>(grid - 1);
    const typename Obj::Vector point = Scalar(1.0 - lambda) * a + Scalar(lambda) * b;
    const double loss = static_cast<double>(objective.value(point));
    if (!std::isfinite(loss)) throw LandscapeError("linear_path_losses: non-finite loss at lambda " + std::to_string(lambda));
    scan.lambdas.push_back(lambda);
    scan.losses.push_back(loss);
    if constexpr (ObjectiveWithError<Obj>) {
      scan.errors.push_back(objective.error_rate(point));
    } else {
      scan.errors.push_back(std::numeric_limits<double>::quiet_NaN());
    }
  }
  scan.barrier = barrier_of(scan.losses);
  return scan;
}

struct PlanePoint {
  double x = 0.0;
  double y = 0.0;
};

struct PlaneGrid {
  Eigen::VectorXd origin;
  Eigen::VectorXd u;
  Eigen::VectorXd v;
  Index nx = 0;
  Index ny = 0;
  double x0 = 0.0;
  double y0 = 0.0;
  double dx = 0.0;
  double dy = 0.0;
  std::vector<double> losses;  // row-major: losses[j * nx + i] at (x0 + i dx, y0 + j dy)
  std::array<PlanePoint, 3> particles;
  PlanePoint average;

  Eigen::VectorXd point(double x, double y) const { return origin + x * u + y * v; }
};

/// Orthonormal basis of the plane through w1, w2, w3 (Gram-Schmidt from w1)
/// and losses on a resolution x resolution grid over the bounding box of the
/// three points, widened on each side by `margin` times its extent.
template <Objective Obj>
PlaneGrid plane_surface(const typename Obj::Vector& w1, const typename Obj::Vector& w2, const typename Obj::Vector& w3,
                        Index resolution, double margin, const Obj& objective) {
  using Scalar = typename Obj::Scalar;
  if (w1.size() != w2.size() || w1.size() != w3.size()) throw LandscapeError("plane_surface: points differ in size");
  if (resolution < 2) throw LandscapeError("plane_surface: resolution must be at least 2");
  PlaneGrid g;
  g.origin = w1.template cast<double>();
  const Eigen::VectorXd d2 = w2.template cast<double>() - g.origin;
  const Eigen::VectorXd d3 = w3.template cast<double>() - g.origin;
  const double n2 = d2.norm();
  if (n2 < 1e-9) throw LandscapeError("degenerate plane");
  g.u = d2 / n2;
  Eigen::VectorXd r = d3 - d3.dot(g.u) * g.u;
  r -= r.dot(g.u) * g.u;
  const double nr = r.norm();
  if (nr < 1e-9) throw LandscapeError("degenerate plane");
  g.v = r / nr;

  g.particles[0] = {0.0, 0.0};
  g.particles[1] = {d2.dot(g.u), d2.dot(g.v)};
  g.particles[2] = {d3.dot(g.u), d3.dot(g.v)};
  const Eigen::VectorXd avg = (d2 + d3) / 3.0;
  g.average = {avg.dot(g.u), avg.dot(g.v)};

  double xmin = 0.0, xmax = 0.0, ymin = 0.0, ymax = 0.0;
  for (const auto& p : g.particles) {
    xmin = std::min(xmin, p.x);
    xmax = std::max(xmax, p.x);
    ymin = std::min(ymin, p.y);
    ymax = std::max(ymax, p.y);
  }
  const double wx = xmax - xmin;
  const double wy = ymax - ymin;
  xmin -= margin * wx;
  xmax += margin * wx;
  ymin -= margin * wy;
  ymax += margin * wy;
  g.nx = g.ny = resolution;
  g.x0 = xmin;
  g.y0 = ymin;
  g.dx = (xmax - xmin) / static_cast<double>(resolution - 1);
  g.dy = (ymax - ymin) / static_cast<double>(resolution - 1);
  g.losses.resize(static_cast<std::size_t>(resolution * resolution));
  for (Index j = 0; j < g.ny; ++j) {
    for (Index i = 0; i < g.nx; ++i) {
      const typename Obj::Vector w = g.point(g.x0 + i * g.dx, g.y0 + j * g.dy).template cast<Scalar>();
      g.losses[static_cast<std::size_t>(j * g.nx + i)] = static_cast<double>(objective.value(w));
    }
  }
  return g;
}

struct TraceEstimate {
  double estimate = 0.0;
  Index probes = 0;
  std::vector<double> per_probe;
  double step = 0.0;

  double standard_error() const;
};

namespace detail {

template <Objective Obj>
typename Obj::Vector checked_grad(const Obj& objective, const typename Obj::Vector& w, const char* what) {
  typename Obj::Vector g;
  objective.value_and_grad(w, g);
  if (!g.allFinite()) throw LandscapeError(std::string(what) + ": non-finite gradient at probe point");
  return g;
}

}  // namespace detail

/// Hutchinson estimate of tr(H) from Rademacher probes (masked coordinates
/// zero). Hv is a central difference of gradients with step
/// 1e-3 / sqrt(D) * (1 + |w|).
template <Objective Obj>
TraceEstimate hessian_trace_hutchinson(const Obj& objective, const typename Obj::Vector& w,
                                       const typename Obj::Vector& mask, Index probes, std::uint64_t seed) {
  using Scalar = typename Obj::Scalar;
  using Vector = typename Obj::Vector;
  if (probes < 1) throw LandscapeError("hessian_trace_hutchinson: need at least one probe");
  if (mask.size() != w.size()) throw LandscapeError("hessian_trace_hutchinson: mask size mismatch");
  const Index dim = w.size();
  TraceEstimate est;
  est.probes = probes;
  est.step = 1e-3 / std::sqrt(static_cast<double>(dim)) * (1.0 + w.template cast<double>().norm());
  const auto eps = static_cast<Scalar>(est.step);
  Vector probe(dim);
  double total = 0.0;
  for (Index p = 0; p < probes; ++p) {
    RngStream rng(seed, static_cast<std::uint64_t>(p));
    for (Index i = 0; i < dim; ++i) {
      const int sign = rng.rademacher();
      probe[i] = mask[i] != Scalar(0) ? static_cast<Scalar>(sign) : Scalar(0);
    }
    const Vector up = detail::checked_grad(objective, Vector(w + eps * probe), "hessian_trace_hutchinson");
    const Vector down = detail::checked_grad(objective, Vector(w - eps * probe), "hessian_trace_hutchinson");
    const Eigen::VectorXd hv = (up.template cast<double>() - down.template cast<double>()) / (2.0 * est.step);
    const double value = probe.template cast<double>().dot(hv);
    est.per_probe.push_back(value);
    total += value;
  }
  est.estimate = total / static_cast<double>(probes);
  return est;
}

/// Dense Hessian restricted to unmasked coordinates, one finite-difference
/// gradient column per coordinate. The step matches the Hutchinson probes,
/// 1e-3 / sqrt(D) * (1 + |w|), so both see the same neighbourhood of w.
template <Objective Obj>
Eigen::MatrixXd exact_hessian(const Obj& objective, const typename Obj::Vector& w, const typename Obj::Vector& mask,
                              Index max_dim = 512) {
  using Scalar = typename Obj::Scalar;
  using Vector = typename Obj::Vector;
  const Index dim = w.size();
  if (dim > max_dim) {
    throw LandscapeError("exact_hessian: " + std::to_string(dim) + " parameters exceed the dense limit of " +
                         std::to_string(max_dim));
  }
  if (mask.size() != dim) throw LandscapeError("exact_hessian: mask size mismatch");
  const double eps = 1e-3 / std::sqrt(static_cast<double>(dim)) * (1.0 + w.template cast<double>().norm());
  Eigen::MatrixXd h = Eigen::MatrixXd::Zero(dim, dim);
  Vector probe = w;
  for (Index i = 0; i < dim; ++i) {
    if (mask[i] == Scalar(0)) continue;
    const Scalar hi = w[i] + static_cast<Scalar>(eps);
    const Scalar lo = w[i] - static_cast<Scalar>(eps);
    probe[i] = hi;
    const Vector up = detail::checked_grad(objective, probe, "exact_hessian");
    probe[i] = lo;
    const Vector down = detail::checked_grad(objective, probe, "exact_hessian");
    probe[i] = w[i];
    const double width = static_cast<double>(hi) - static_cast<double>(lo);
    h.col(i) = (up.template cast<double>() - down.template cast<double>()) / width;
  }
  return h;
}

template <Objective Obj>
double exact_hessian_trace(const Obj& objective, const typename Obj::Vector& w, const typename Obj::Vector& mask,
                           Index max_dim = 512) {
  return exact_hessian(objective, w, mask, max_dim).trace();
}

struct EvalResult {
  double accuracy = 0.0;
  double nll = 0.0;
};

/// Logits of every sample, in dataset order.
RowMatrixXf compute_logits(const ModelSpec& spec, const ParamVector& params, const Eigen::VectorXf* mask,
                           const Dataset& data, Index chunk = 2048);

EvalResult evaluate_logits(const RowMatrixXf& logits, std::span<const int> labels);

EvalResult evaluate(const ModelSpec& spec, const ParamVector& params, const Eigen::VectorXf* mask, const Dataset& data);

struct ModelEvalRow {
  std::string name;  // "P1".."PN", or "WA" for the weight average
  EvalResult result;
};

/// One row per particle followed by the average.
std::vector<ModelEvalRow> eval_particlewise(const ModelSpec& spec, const std::vector<Segment>& layout,
                                            std::span<const Eigen::VectorXf> particles, const Eigen::VectorXf& average,
                                            const Eigen::VectorXf& mask, const Dataset& test);

struct EnsembleMember {
  Eigen::VectorXf params;
  Eigen::VectorXf mask;
};

/// Averages member softmax probabilities; accuracy of the argmax and NLL of the averaged distribution.
EvalResult eval_ensemble(const ModelSpec& spec, const std::vector<Segment>& layout,
                         std::span<const EnsembleMember> members, const Dataset& test);

/// CSV with header lambda,loss,error.
void write_scan_csv(const BarrierScan& scan, const std::filesystem::path& path);

/// Text grid: first line "nx ny x0 y0 dx dy", then ny rows of nx losses.
void write_plane_grid(const PlaneGrid& grid, const std::filesystem::path& path);

/// CSV name,x,y for P1..P3 and the average.
void write_plane_points(const PlaneGrid& grid, const std::filesystem::path& path);

}  // namespace swamp

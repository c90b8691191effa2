#include "swamp/landscape.hpp"

#include <fstream>
#include <iomanip>
#include <numeric>

namespace swamp {

ModelObjective::ModelObjective(ModelSpec spec, const Dataset& data, std::optional<Eigen::VectorXf> mask, Index chunk)
    : spec_(std::move(spec)), layout_(param_layout(spec_)), data_(&data), mask_(std::move(mask)), chunk_(chunk) {
  if (chunk_ < 1) throw LandscapeError("model objective: chunk size must be positive");
  if (data.size() == 0) throw LandscapeError("model objective: empty dataset");
}

float ModelObjective::evaluate(const Vector& w, Vector* grad, double* error) const {
  ParamVector params{layout_, w};
  const Eigen::VectorXf* mask = mask_ ? &*mask_ : nullptr;
  const Index n = data_->size();
  std::vector<Index> idx;
  double loss = 0.0;
  Index wrong = 0;
  Eigen::VectorXf chunk_grad;
  if (grad) *grad = Eigen::VectorXf::Zero(w.size());
  for (Index lo = 0; lo < n; lo += chunk_) {
    const Index hi = std::min(n, lo + chunk_);
    idx.resize(static_cast<std::size_t>(hi - lo));
    std::iota(idx.begin(), idx.end(), lo);
    const Tensorf batch = data_->batch(idx);
    const std::vector<int> labels = data_->batch_labels(idx);
    const double weight = static_cast<double>(hi - lo) / static_cast<double>(n);
    if (error) {
      Tape<float> tape;
      auto logits = record_forward(tape, spec_, params, mask, batch);
      const auto z = tape.value(logits).matrix();
      for (Index r = 0; r < z.rows(); ++r) {
        Index arg = 0;
        z.row(r).maxCoeff(&arg);
        if (arg != labels[static_cast<std::size_t>(r)]) ++wrong;
      }
      loss += weight * tape.value(cross_entropy(tape, logits, labels)).item();
    } else {
      loss += weight * loss_and_grad(spec_, params, mask, batch, labels, grad ? &chunk_grad : nullptr);
      if (grad) *grad += static_cast<float>(weight) * chunk_grad;
    }
  }
  if (error) *error = static_cast<double>(wrong) / static_cast<double>(n);
  return static_cast<float>(loss);
}

double TraceEstimate::standard_error() const {
  if (per_probe.size() < 2) return 0.0;
  double var = 0.0;
  for (double v : per_probe) var += (v - estimate) * (v - estimate);
  var /= static_cast<double>(per_probe.size() - 1);
  return std::sqrt(var / static_cast<double>(per_probe.size()));
}

RowMatrixXf compute_logits(const ModelSpec& spec, const ParamVector& params, const Eigen::VectorXf* mask,
                           const Dataset& data, Index chunk) {
  RowMatrixXf out(data.size(), spec.classes);
  std::vector<Index> idx;
  for (Index lo = 0; lo < data.size(); lo += chunk) {
    const Index hi = std::min(data.size(), lo + chunk);
    idx.resize(static_cast<std::size_t>(hi - lo));
    std::iota(idx.begin(), idx.end(), lo);
    out.middleRows(lo, hi - lo) = forward_logits(spec, params, mask, data.batch(idx)).matrix();
  }
  return out;
}

namespace {

Eigen::VectorXd log_softmax_row(const Eigen::Ref<const Eigen::RowVectorXf>& z) {
  const Eigen::VectorXd x = z.transpose().cast<double>();
  const double m = x.maxCoeff();
  const double lse = m + std::log((x.array() - m).exp().sum());
  return x.array() - lse;
}

}  // namespace

EvalResult evaluate_logits(const RowMatrixXf& logits, std::span<const int> labels) {
  if (static_cast<Index>(labels.size()) != logits.rows()) throw LandscapeError("evaluate: label count mismatch");
  if (logits.rows() == 0) throw LandscapeError("evaluate: no samples");
  EvalResult r;
  Index correct = 0;
  double nll = 0.0;
  for (Index i = 0; i < logits.rows(); ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    Index arg = 0;
    logits.row(i).maxCoeff(&arg);
    if (arg == y) ++correct;
    nll -= log_softmax_row(logits.row(i))[y];
  }
  r.accuracy = static_cast<double>(correct) / static_cast<double>(logits.rows());
  r.nll = nll / static_cast<double>(logits.rows());
  return r;
}

EvalResult evaluate(const ModelSpec& spec, const ParamVector& params, const Eigen::VectorXf* mask, const Dataset& data) {
  return evaluate_logits(compute_logits(spec, params, mask, data), data.labels);
}

std::vector<ModelEvalRow> eval_particlewise(const ModelSpec& spec, const std::vector<Segment>& layout,
                                            std::span<const Eigen::VectorXf> particles, const Eigen::VectorXf& average,
                                            const Eigen::VectorXf& mask, const Dataset& test) {
  std::vector<ModelEvalRow> rows;
  for (std::size_t n = 0; n < particles.size(); ++n) {
    rows.push_back({"P" + std::to_string(n + 1), evaluate(spec, ParamVector{layout, particles[n]}, &mask, test)});
  }
  rows.push_back({"WA", evaluate(spec, ParamVector{layout, average}, &mask, test)});
  return rows;
}

EvalResult eval_ensemble(const ModelSpec& spec, const std::vector<Segment>& layout,
                         std::span<const EnsembleMember> members, const Dataset& test) {
  if (members.empty()) throw LandscapeError("eval_ensemble: no members");
  Eigen::MatrixXd probs = Eigen::MatrixXd::Zero(test.size(), spec.classes);
  for (const auto& m : members) {
    const RowMatrixXf logits = compute_logits(spec, ParamVector{layout, m.params}, &m.mask, test);
    for (Index i = 0; i < logits.rows(); ++i) probs.row(i) += log_softmax_row(logits.row(i)).array().exp().matrix().transpose();
  }
  probs /= static_cast<double>(members.size());
  EvalResult r;
  Index correct = 0;
  double nll = 0.0;
  for (Index i = 0; i < probs.rows(); ++i) {
    const int y = test.labels[static_cast<std::size_t>(i)];
    Index arg = 0;
    probs.row(i).maxCoeff(&arg);
    if (arg == y) ++correct;
    nll -= std::log(std::max(probs(i, y), std::numeric_limits<double>::min()));
  }
  r.accuracy = static_cast<double>(correct) / static_cast<double>(probs.rows());
  r.nll = nll / static_cast<double>(probs.rows());
  return r;
}

void write_scan_csv(const BarrierScan& scan, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw LandscapeError("cannot write " + path.string());
  out << "lambda,loss,error\n" << std::setprecision(9);
  for (std::size_t i = 0; i < scan.lambdas.size(); ++i) {
    out << scan.lambdas[i] << ',' << scan.losses[i] << ',' << scan.errors[i] << '\n';
  }
}

void write_plane_grid(const PlaneGrid& grid, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw LandscapeError("cannot write " + path.string());
  out << std::setprecision(9);
  out << grid.nx << ' ' << grid.ny << ' ' << grid.x0 << ' ' << grid.y0 << ' ' << grid.dx << ' ' << grid.dy << '\n';
  for (Index j = 0; j < grid.ny; ++j) {
    for (Index i = 0; i < grid.nx; ++i) {
      out << (i ? " " : "") << grid.losses[static_cast<std::size_t>(j * grid.nx + i)];
    }
    out << '\n';
  }
}

void write_plane_points(const PlaneGrid& grid, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw LandscapeError("cannot write " + path.string());
  out << "name,x,y\n" << std::setprecision(9);
  for (std::size_t i = 0; i < grid.particles.size(); ++i) {
    out << 'P' << i + 1 << ',' << grid.particles[i].x << ',' << grid.particles[i].y << '\n';
  }
  out << "average," << grid.average.x << ',' << grid.average.y << '\n';
}

}  // namespace swamp

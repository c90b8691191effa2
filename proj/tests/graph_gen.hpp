#pragma once

// Random small computation graphs for gradient checking. A GraphDesc fixes
// the structure and all values; build() records it on a tape of any scalar
// type, so a float graph can be checked against a double oracle at exactly
// the same point.

#include "swamp/autograd.hpp"
#include "swamp/rng.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace swamp::testing {

struct GraphDesc {
  enum class Kind { Mlp, Conv, Elementwise };
  Kind kind = Kind::Mlp;
  Index batch = 3;
  Index in = 4;
  Index hidden = 5;
  Index classes = 3;
  Index channels = 2;
  Index side = 4;
  Index kernel = 3;
  Padding padding = Padding::Same;
  bool relu = true;
  bool gate = false;       // multiply the hidden layer by a second leaf
  bool mean_head = false;  // reduce_mean instead of cross-entropy
  std::vector<Shape> leaf_shapes;
  std::vector<Eigen::VectorXf> leaf_values;
  Eigen::VectorXf input;
  Shape input_shape;
  std::vector<int> labels;
};

inline Eigen::VectorXf random_values(RngStream& rng, Index n, double scale) {
  Eigen::VectorXf v(n);
  for (Index i = 0; i < n; ++i) v[i] = static_cast<float>(scale * rng.normal());
  return v;
}

inline GraphDesc random_graph(std::uint64_t seed) {
  RngStream rng(seed, 0);
  GraphDesc d;
  d.kind = static_cast<GraphDesc::Kind>(rng.below(3));
  d.batch = 2 + static_cast<Index>(rng.below(3));
  d.relu = rng.below(4) != 0;
  d.gate = rng.below(2) != 0;
  d.mean_head = rng.below(3) == 0;
  d.classes = 2 + static_cast<Index>(rng.below(3));
  switch (d.kind) {
    case GraphDesc::Kind::Mlp:
      d.in = 2 + static_cast<Index>(rng.below(4));
      d.hidden = 2 + static_cast<Index>(rng.below(5));
      d.input_shape = {d.batch, d.in};
      d.leaf_shapes = {{d.in, d.hidden}, {d.hidden}, {d.hidden, d.classes}, {d.classes}};
      if (d.gate) d.leaf_shapes.push_back({d.batch, d.hidden});
      break;
    case GraphDesc::Kind::Conv: {
      d.channels = 1 + static_cast<Index>(rng.below(2));
      d.side = 3 + static_cast<Index>(rng.below(3));
      d.kernel = rng.below(2) ? 3 : 1;
      d.padding = rng.below(2) ? Padding::Same : Padding::Valid;
      d.hidden = 1 + static_cast<Index>(rng.below(3));  // output channels
      d.input_shape = {d.batch, d.channels, d.side, d.side};
      const Index out_side = d.padding == Padding::Same ? d.side : d.side - d.kernel + 1;
      const Index flat = d.hidden * out_side * out_side;
      d.leaf_shapes = {{d.hidden, d.channels, d.kernel, d.kernel}, {d.hidden}, {flat, d.classes}, {d.classes}};
      break;
    }
    case GraphDesc::Kind::Elementwise:
      d.in = 2 + static_cast<Index>(rng.below(5));
      d.input_shape = {d.batch, d.in};
      d.leaf_shapes = {{d.batch, d.in}, {d.batch, d.in}, {d.in, d.classes}};
      break;
  }
  d.input = random_values(rng, shape_numel(d.input_shape), 1.0);
  for (const auto& s : d.leaf_shapes) {
    const Index fan = s.size() > 1 ? shape_numel(s) / s[s.size() - 1] : 1;
    d.leaf_values.push_back(random_values(rng, shape_numel(s), 1.0 / std::sqrt(static_cast<double>(std::max<Index>(fan, 1)))));
  }
  for (Index i = 0; i < d.batch; ++i) d.labels.push_back(static_cast<int>(rng.below(static_cast<std::uint64_t>(d.classes))));
  return d;
}

/// Records the graph with leaf values `leaves` (flattened in leaf order).
/// `relu_inputs` receives the pre-activation nodes for kink detection.
template <typename S>
typename Tape<S>::Var build_graph(Tape<S>& t, const GraphDesc& d, const VectorX<S>& leaves,
                                  std::vector<typename Tape<S>::Var>* relu_inputs = nullptr) {
  using T = Tensor<S>;
  std::vector<typename Tape<S>::Var> p;
  Index off = 0;
  for (const auto& s : d.leaf_shapes) {
    const Index n = shape_numel(s);
    p.push_back(t.leaf(T(s, leaves.segment(off, n))));
    off += n;
  }
  auto relu = [&](auto v) {
    if (!d.relu) return v;
    if (relu_inputs) relu_inputs->push_back(v);
    return t.relu(v);
  };
  const auto x = t.constant(T(d.input_shape, d.input.template cast<S>()));
  typename Tape<S>::Var logits{};
  switch (d.kind) {
    case GraphDesc::Kind::Mlp: {
      auto h = relu(t.add_bias(t.matmul(x, p[0]), p[1]));
      if (d.gate) h = t.mul(h, p[4]);
      logits = t.add_bias(t.matmul(h, p[2]), p[3]);
      break;
    }
    case GraphDesc::Kind::Conv: {
      auto h = relu(t.add_bias(t.conv2d(x, p[0], d.padding), p[1]));
      h = t.reshape(h, {d.batch, t.value(h).size() / d.batch});
      logits = t.add_bias(t.matmul(h, p[2]), p[3]);
      break;
    }
    case GraphDesc::Kind::Elementwise: {
      auto h = relu(t.add(t.mul(x, p[0]), p[1]));
      h = t.add(t.mul(h, p[1]), t.scale(h, S(0.5)));
      logits = t.matmul(h, p[2]);
      break;
    }
  }
  if (d.mean_head) return t.reduce_mean(t.mul(logits, logits));
  T onehot(t.value(logits).shape());
  for (Index i = 0; i < d.batch; ++i) onehot.data()[i * d.classes + d.labels[static_cast<std::size_t>(i)]] = S(1);
  auto picked = t.mul(t.log_softmax(logits), t.constant(std::move(onehot)));
  return t.scale(t.reduce_sum(picked), S(-1) / static_cast<S>(d.batch));
}

inline Eigen::VectorXf flat_leaves(const GraphDesc& d) {
  Index n = 0;
  for (const auto& v : d.leaf_values) n += v.size();
  Eigen::VectorXf out(n);
  Index off = 0;
  for (const auto& v : d.leaf_values) {
    out.segment(off, v.size()) = v;
    off += v.size();
  }
  return out;
}

template <typename S>
S graph_loss(const GraphDesc& d, const VectorX<S>& leaves) {
  Tape<S> t;
  return t.value(build_graph<S>(t, d, leaves)).item();
}

template <typename S>
VectorX<S> graph_grad(const GraphDesc& d, const VectorX<S>& leaves) {
  Tape<S> t;
  auto loss = build_graph<S>(t, d, leaves);
  t.backward(loss);
  VectorX<S> g(leaves.size());
  Index off = 0;
  for (std::size_t i = 0; i < d.leaf_shapes.size(); ++i) {
    // leaves are the first nodes on the tape, in order
    const typename Tape<S>::Var v{i};
    g.segment(off, t.grad(v).size()) = t.grad(v).data();
    off += t.grad(v).size();
  }
  return g;
}

/// Smallest |pre-activation| in the graph; near zero, central differences straddle a kink.
inline double kink_margin(const GraphDesc& d, const Eigen::VectorXd& leaves) {
  Tape<double> t;
  std::vector<Tape<double>::Var> pre;
  build_graph<double>(t, d, leaves, &pre);
  double m = std::numeric_limits<double>::infinity();
  for (auto v : pre) m = std::min(m, t.value(v).data().cwiseAbs().minCoeff());
  return m;
}

struct GradCheck {
  double max_rel_error = 0.0;
  Index dim = 0;
  std::uint64_t seed = 0;
};

/// float reverse mode against double central differences at the same point.
/// Graphs whose ReLU inputs sit within 1e-4 of zero are redrawn.
inline GradCheck check_random_graph(std::uint64_t seed) {
  GraphDesc d;
  Eigen::VectorXd w64;
  for (std::uint64_t attempt = 0;; ++attempt) {
    d = random_graph(hash64(seed, attempt, 17));
    w64 = flat_leaves(d).cast<double>();
    if (kink_margin(d, w64) > 1e-4) {
      seed = hash64(seed, attempt, 17);
      break;
    }
  }
  const Eigen::VectorXf g32 = graph_grad<float>(d, flat_leaves(d));
  const Eigen::VectorXd fd = finite_diff_grad<double>(
      [&](const Eigen::VectorXd& w) { return graph_loss<double>(d, w); }, w64, 1e-6, true);
  const double scale = std::max(fd.cwiseAbs().maxCoeff(), 1e-6);
  return {(g32.cast<double>() - fd).cwiseAbs().maxCoeff() / scale, w64.size(), seed};
}

}  // namespace swamp::testing

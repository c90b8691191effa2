#include "swamp/model.hpp"

#include "swamp/rng.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace swamp {

namespace {

std::string layer_str(const LayerSpec& l) {
  std::ostringstream os;
  switch (l.kind) {
    case LayerKind::Dense: os << "dense:" << l.in << ':' << l.out; break;
    case LayerKind::Conv2d:
      os << "conv:" << l.in << ':' << l.out << ':' << l.kernel << ':'
         << (l.padding == Padding::Same ? "same" : "valid");
      break;
    case LayerKind::Relu: os << "relu"; break;
    case LayerKind::Flatten: os << "flatten"; break;
  }
  return os.str();
}

std::string layer_label(const ModelSpec& spec, std::size_t i) {
  if (i >= spec.layers.size()) return "output";
  return "layer " + std::to_string(i) + " (" + layer_str(spec.layers[i]) + ")";
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

}  // namespace

std::string ModelSpec::canonical() const {
  std::ostringstream os;
  os << "in=";
  for (std::size_t i = 0; i < input_shape.size(); ++i) os << (i ? "x" : "") << input_shape[i];
  os << ';';
  for (std::size_t i = 0; i < layers.size(); ++i) os << (i ? "," : "") << layer_str(layers[i]);
  os << ";k=" << classes;
  return os.str();
}

std::uint64_t ModelSpec::digest() const { return fnv1a(canonical()); }

std::vector<Shape> validate(const ModelSpec& spec) {
  if (spec.input_shape.empty()) throw ShapeError("model: empty input shape");
  for (Index d : spec.input_shape) {
    if (d <= 0) throw ShapeError("model: non-positive input dimension in " + shape_str(spec.input_shape));
  }
  if (spec.classes < 1) throw ShapeError("model: class count must be positive");
  std::vector<Shape> shapes;
  Shape cur = spec.input_shape;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec& l = spec.layers[i];
    const std::string prev = i == 0 ? std::string("input") : layer_label(spec, i - 1);
    auto fail = [&](const std::string& why) {
      throw ShapeError("model: " + prev + " -> " + layer_label(spec, i) + ": " + why + " (incoming shape " +
                       shape_str(cur) + ")");
    };
    switch (l.kind) {
      case LayerKind::Dense:
        if (l.in <= 0 || l.out <= 0) fail("dense sizes must be positive");
        if (cur.size() != 1 || cur[0] != l.in) fail("expects " + std::to_string(l.in) + " features");
        cur = {l.out};
        break;
      case LayerKind::Conv2d: {
        if (l.in <= 0 || l.out <= 0 || l.kernel <= 0) fail("conv sizes must be positive");
        if (cur.size() != 3 || cur[0] != l.in) fail("expects " + std::to_string(l.in) + " input channels");
        if (l.padding == Padding::Same && l.kernel % 2 == 0) fail("'same' padding needs an odd kernel");
        const Index pad = l.padding == Padding::Same ? l.kernel / 2 : 0;
        const Index h = cur[1] + 2 * pad - l.kernel + 1;
        const Index w = cur[2] + 2 * pad - l.kernel + 1;
        if (h <= 0 || w <= 0) fail("kernel larger than input");
        cur = {l.out, h, w};
        break;
      }
      case LayerKind::Relu: break;
      case LayerKind::Flatten: cur = {shape_numel(cur)}; break;
    }
    shapes.push_back(cur);
  }
  if (cur.size() != 1 || cur[0] != spec.classes) {
    throw ShapeError("model: " + (spec.layers.empty() ? std::string("input") : layer_label(spec, spec.layers.size() - 1)) +
                     " -> output: produces " + shape_str(cur) + " but class count is " + std::to_string(spec.classes));
  }
  return shapes;
}

const Segment& ParamVector::segment(const std::string& name) const {
  for (const auto& s : segments) {
    if (s.name == name) return s;
  }
  throw std::out_of_range("param vector: no segment named " + name);
}

Eigen::Map<const RowMatrixXf> ParamVector::weights_of(const Segment& s) const {
  const Index rows = s.shape.front();
  return {values.data() + s.offset, rows, s.size() / rows};
}

std::vector<Segment> param_layout(const ModelSpec& spec) {
  validate(spec);
  std::vector<Segment> out;
  Index offset = 0;
  auto add = [&](std::size_t layer, LayerKind kind, SegmentRole role, Shape shape) {
    Segment s;
    s.name = "layer" + std::to_string(layer) + (role == SegmentRole::Weight ? ".weight" : ".bias");
    s.shape = std::move(shape);
    s.offset = offset;
    s.layer = static_cast<Index>(layer);
    s.kind = kind;
    s.role = role;
    offset += s.size();
    out.push_back(std::move(s));
  };
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec& l = spec.layers[i];
    if (l.kind == LayerKind::Dense) {
      add(i, l.kind, SegmentRole::Weight, {l.in, l.out});
      add(i, l.kind, SegmentRole::Bias, {l.out});
    } else if (l.kind == LayerKind::Conv2d) {
      add(i, l.kind, SegmentRole::Weight, {l.out, l.in, l.kernel, l.kernel});
      add(i, l.kind, SegmentRole::Bias, {l.out});
    }
  }
  return out;
}

std::vector<Tensorf> unflatten(const ParamVector& params) {
  std::vector<Tensorf> out;
  out.reserve(params.segments.size());
  for (const auto& s : params.segments) out.emplace_back(s.shape, params.values.segment(s.offset, s.size()));
  return out;
}

Eigen::VectorXf flatten(const std::vector<Segment>& layout, std::span<const Tensorf> tensors) {
  if (tensors.size() != layout.size()) {
    throw ShapeError("flatten: " + std::to_string(tensors.size()) + " tensors for " + std::to_string(layout.size()) +
                     " segments");
  }
  Index dim = 0;
  for (const auto& s : layout) dim = std::max(dim, s.offset + s.size());
  Eigen::VectorXf flat = Eigen::VectorXf::Zero(dim);
  for (std::size_t i = 0; i < layout.size(); ++i) {
    if (tensors[i].shape() != layout[i].shape) {
      throw ShapeError("flatten: segment " + layout[i].name + " expects " + shape_str(layout[i].shape) + ", got " +
                       shape_str(tensors[i].shape()));
    }
    flat.segment(layout[i].offset, layout[i].size()) = tensors[i].data();
  }
  return flat;
}

PrunableSet make_prunable_set(const std::vector<Segment>& layout, PrunableKinds kinds) {
  if (kinds == PrunableKinds::Auto) {
    const bool has_conv = std::any_of(layout.begin(), layout.end(), [](const Segment& s) { return s.kind == LayerKind::Conv2d; });
    kinds = has_conv ? PrunableKinds::Conv : PrunableKinds::Dense;
  }
  std::vector<Index> coords;
  Index dim = 0;
  for (const auto& s : layout) {
    dim = std::max(dim, s.offset + s.size());
    if (s.role != SegmentRole::Weight) continue;
    const bool take = kinds == PrunableKinds::DenseAndConv ||
                      (kinds == PrunableKinds::Dense && s.kind == LayerKind::Dense) ||
                      (kinds == PrunableKinds::Conv && s.kind == LayerKind::Conv2d);
    if (!take) continue;
    for (Index i = 0; i < s.size(); ++i) coords.push_back(s.offset + i);
  }
  return PrunableSet(dim, std::move(coords));
}

Eigen::VectorXf weight_decay_scope(const std::vector<Segment>& layout) {
  Index dim = 0;
  for (const auto& s : layout) dim = std::max(dim, s.offset + s.size());
  Eigen::VectorXf scope = Eigen::VectorXf::Zero(dim);
  for (const auto& s : layout) {
    if (s.role == SegmentRole::Weight) scope.segment(s.offset, s.size()).setOnes();
  }
  return scope;
}

Model build_model(const ModelSpec& spec, std::uint64_t seed, PrunableKinds kinds) {
  Model model;
  model.params.segments = param_layout(spec);
  model.prunable = make_prunable_set(model.params.segments, kinds);
  model.params.values = Eigen::VectorXf::Zero(model.prunable.dim());
  for (const auto& s : model.params.segments) {
    if (s.role != SegmentRole::Weight) continue;
    const LayerSpec& l = spec.layers[static_cast<std::size_t>(s.layer)];
    const Index fan_in = l.kind == LayerKind::Dense ? l.in : l.in * l.kernel * l.kernel;
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    RngStream rng(seed, static_cast<std::uint64_t>(s.layer));
    for (Index i = 0; i < s.size(); ++i) {
      model.params.values[s.offset + i] = static_cast<float>((2.0 * rng.uniform() - 1.0) * bound);
    }
  }
  return model;
}

Tape<float>::Var record_forward(Tape<float>& tape, const ModelSpec& spec, const ParamVector& params,
                                const Eigen::VectorXf* mask, const Tensorf& batch,
                                std::vector<Tape<float>::Var>* leaves) {
  Shape expected = spec.input_shape;
  expected.insert(expected.begin(), batch.rank() > 0 ? batch.dim(0) : 0);
  if (batch.shape() != expected) {
    throw ShapeError("forward: batch shape " + shape_str(batch.shape()) + " does not match input " +
                     shape_str(spec.input_shape));
  }
  if (mask && mask->size() != params.dim()) {
    throw ShapeError("forward: mask length " + std::to_string(mask->size()) + " vs parameter count " +
                     std::to_string(params.dim()));
  }
  auto leaf_for = [&](const Segment& s) {
    Eigen::VectorXf v = params.values.segment(s.offset, s.size());
    if (mask) v = v.cwiseProduct(mask->segment(s.offset, s.size()));
    auto var = tape.leaf(Tensorf(s.shape, std::move(v)));
    if (leaves) leaves->push_back(var);
    return var;
  };
  const Index n = batch.dim(0);
  auto x = tape.constant(batch);
  std::size_t seg = 0;
  for (const LayerSpec& l : spec.layers) {
    switch (l.kind) {
      case LayerKind::Dense: {
        auto w = leaf_for(params.segments[seg++]);
        auto b = leaf_for(params.segments[seg++]);
        x = tape.add_bias(tape.matmul(x, w), b);
        break;
      }
      case LayerKind::Conv2d: {
        auto w = leaf_for(params.segments[seg++]);
        auto b = leaf_for(params.segments[seg++]);
        x = tape.add_bias(tape.conv2d(x, w, l.padding), b);
        break;
      }
      case LayerKind::Relu: x = tape.relu(x); break;
      case LayerKind::Flatten: x = tape.reshape(x, {n, tape.value(x).size() / n}); break;
    }
  }
  return x;
}

Tensorf forward_logits(const ModelSpec& spec, const ParamVector& params, const Eigen::VectorXf* mask,
                       const Tensorf& batch) {
  Tape<float> tape;
  auto out = record_forward(tape, spec, params, mask, batch);
  return tape.value(out);
}

Tape<float>::Var cross_entropy(Tape<float>& tape, Tape<float>::Var logits, std::span<const int> labels) {
  const Tensorf& z = tape.value(logits);
  if (z.rank() != 2 || static_cast<Index>(labels.size()) != z.dim(0)) {
    throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for logits " + shape_str(z.shape()));
  }
  const Index classes = z.dim(1);
  Tensorf onehot(z.shape());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= classes) {
      throw std::out_of_range("cross_entropy: label " + std::to_string(labels[i]) + " at index " + std::to_string(i) +
                              " outside [0, " + std::to_string(classes) + ")");
    }
    onehot.data()[static_cast<Index>(i) * classes + labels[i]] = 1.0f;
  }
  // z dangles once the tape grows
  const auto rows = static_cast<float>(labels.size());
  auto picked = tape.mul(tape.log_softmax(logits), tape.constant(std::move(onehot)));
  return tape.scale(tape.reduce_sum(picked), -1.0f / rows);
}

float loss_cross_entropy(const Tensorf& logits, std::span<const int> labels) {
  Tape<float> tape;
  return tape.value(cross_entropy(tape, tape.constant(logits), labels)).item();
}

float loss_and_grad(const ModelSpec& spec, const ParamVector& params, const Eigen::VectorXf* mask,
                    const Tensorf& batch, std::span<const int> labels, Eigen::VectorXf* grad) {
  Tape<float> tape;
  std::vector<Tape<float>::Var> leaves;
  auto loss = cross_entropy(tape, record_forward(tape, spec, params, mask, batch, &leaves), labels);
  const float value = tape.value(loss).item();
  if (grad) {
    tape.backward(loss);
    grad->resize(params.dim());
    for (std::size_t i = 0; i < leaves.size(); ++i) {
      const Segment& s = params.segments[i];
      grad->segment(s.offset, s.size()) = tape.grad(leaves[i]).data();
    }
    if (mask) *grad = (mask->array() != 0.0f).select(grad->array(), 0.0f).matrix();
  }
  return value;
}

}  // namespace swamp

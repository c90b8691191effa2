#pragma once

// Declarative MLP/CNN models over a single flat parameter buffer.

#include "swamp/autograd.hpp"
#include "swamp/mask.hpp"
#include "swamp/tensor.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace swamp {

enum class LayerKind { Dense, Conv2d, Relu, Flatten };

struct LayerSpec {
  LayerKind kind = LayerKind::Relu;
  Index in = 0;
  Index out = 0;
  Index kernel = 0;
  Padding padding = Padding::Same;

  static LayerSpec dense(Index in, Index out) { return {LayerKind::Dense, in, out, 0, Padding::Same}; }
  static LayerSpec conv2d(Index in_ch, Index out_ch, Index kernel, Padding padding = Padding::Same) {
    return {LayerKind::Conv2d, in_ch, out_ch, kernel, padding};
  }
  static LayerSpec relu() { return {LayerKind::Relu, 0, 0, 0, Padding::Same}; }
  static LayerSpec flatten() { return {LayerKind::Flatten, 0, 0, 0, Padding::Same}; }

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

struct ModelSpec {
  Shape input_shape;  // per-sample: {F} or {C,H,W}
  std::vector<LayerSpec> layers;
  Index classes = 0;

  /// Stable textual form, e.g. "in=1x28x28;conv:1:8:3:same,relu,flatten,dense:6272:10;k=10".
  std::string canonical() const;
  std::uint64_t digest() const;

  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

/// Per-sample output shape after each layer. Throws ShapeError naming the
/// offending pair of layers when shapes do not compose.
std::vector<Shape> validate(const ModelSpec& spec);

enum class SegmentRole { Weight, Bias };

struct Segment {
  std::string name;
  Shape shape;
  Index offset = 0;
  Index layer = 0;
  LayerKind kind = LayerKind::Dense;
  SegmentRole role = SegmentRole::Weight;

  Index size() const { return shape_numel(shape); }
  friend bool operator==(const Segment&, const Segment&) = default;
};

/// Flat view of all trainable parameters. Dense weights are stored [in, out]
/// row-major; conv weights [out, in, k, k].
struct ParamVector {
  std::vector<Segment> segments;
  Eigen::VectorXf values;

  Index dim() const { return values.size(); }
  const Segment& segment(const std::string& name) const;

  Eigen::Map<const RowMatrixXf> weights_of(const Segment& s) const;
};

/// Layout of a spec's parameters without any values.
std::vector<Segment> param_layout(const ModelSpec& spec);

/// Segments split into named tensors and back.
std::vector<Tensorf> unflatten(const ParamVector& params);
Eigen::VectorXf flatten(const std::vector<Segment>& layout, std::span<const Tensorf> tensors);

enum class PrunableKinds { Auto, Dense, Conv, DenseAndConv };

/// Auto: conv weights when the model has any conv layer, dense weights otherwise.
PrunableSet make_prunable_set(const std::vector<Segment>& layout, PrunableKinds kinds = PrunableKinds::Auto);

/// 1 on weight coordinates, 0 on biases.
Eigen::VectorXf weight_decay_scope(const std::vector<Segment>& layout);

struct Model {
  ParamVector params;
  PrunableSet prunable;
};

/// Kaiming-uniform fan-in weights (bound sqrt(6 / fan_in)), zero biases.
Model build_model(const ModelSpec& spec, std::uint64_t seed, PrunableKinds kinds = PrunableKinds::Auto);

/// Records the network on `tape` with parameter leaves holding w * mask.
/// Returns the logits variable; `leaves` receives one leaf per segment.
Tape<float>::Var record_forward(Tape<float>& tape, const ModelSpec& spec, const ParamVector& params,
                                const Eigen::VectorXf* mask, const Tensorf& batch,
                                std::vector<Tape<float>::Var>* leaves = nullptr);

/// Logits [batch, classes] of the network with effective weights w * mask.
/// A null mask disables masking.
Tensorf forward_logits(const ModelSpec& spec, const ParamVector& params, const Eigen::VectorXf* mask,
                       const Tensorf& batch);

/// Mean cross-entropy recorded on a tape; differentiable with respect to `logits`.
Tape<float>::Var cross_entropy(Tape<float>& tape, Tape<float>::Var logits, std::span<const int> labels);

float loss_cross_entropy(const Tensorf& logits, std::span<const int> labels);

/// Loss of one batch; when `grad` is given it receives dL/dw already multiplied by the mask.
float loss_and_grad(const ModelSpec& spec, const ParamVector& params, const Eigen::VectorXf* mask,
                    const Tensorf& batch, std::span<const int> labels, Eigen::VectorXf* grad);

}  // namespace swamp

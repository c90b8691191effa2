#pragma once

// Eager reverse-mode autodiff over a linear tape. Each op computes its value
// when recorded; backward() walks the tape once in reverse recording order,
// so gradient accumulation order is fixed and results are bit-reproducible.

#include "swamp/tensor.hpp"

#include <array>
#include <cmath>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace swamp {

enum class OpKind { Leaf, MatMul, Conv2d, Add, AddBias, Relu, LogSoftmax, ReduceMean, ReduceSum, Mul, Scale, Reshape };

enum class Padding { Same, Valid };

inline const char* op_name(OpKind kind);

template <typename Scalar>
class Tape {
 public:
  using TensorT = Tensor<Scalar>;
  using Vector = VectorX<Scalar>;
  using RowMatrix = RowMatrixX<Scalar>;

  struct Var {
    std::size_t id;
  };

  /// Trainable leaf; receives a gradient in backward().
  Var leaf(TensorT value) { return push(OpKind::Leaf, {}, std::move(value), true); }

  /// Detached input; its gradient is identically zero.
  Var constant(TensorT value) { return push(OpKind::Leaf, {}, std::move(value), false); }

  Var matmul(Var a, Var b) {
    const auto& av = value(a);
    const auto& bv = value(b);
    if (av.rank() != 2 || bv.rank() != 2 || av.dim(1) != bv.dim(0)) mismatch(OpKind::MatMul, av, bv);
    TensorT out(Shape{av.dim(0), bv.dim(1)});
    out.matrix().noalias() = av.matrix() * bv.matrix();
    return push(OpKind::MatMul, {a, b}, std::move(out));
  }

  /// 2-D convolution, stride 1, square kernel. x: [B,C,H,W], w: [O,C,k,k].
  Var conv2d(Var x, Var w, Padding padding) {
    const auto& xv = value(x);
    const auto& wv = value(w);
    if (xv.rank() != 4 || wv.rank() != 4 || xv.dim(1) != wv.dim(1) || wv.dim(2) != wv.dim(3)) {
      mismatch(OpKind::Conv2d, xv, wv);
    }
    const ConvGeom g = geometry(xv.shape(), wv.shape(), padding);
    TensorT out(Shape{g.batch, g.out_ch, g.out_h, g.out_w});
    Eigen::Map<const RowMatrix> wm(wv.data().data(), g.out_ch, g.patch);
    RowMatrix cols(g.patch, g.out_h * g.out_w);
    for (Index b = 0; b < g.batch; ++b) {
      im2col(xv, b, g, cols);
      Eigen::Map<RowMatrix> ob(out.data().data() + b * g.out_ch * g.out_h * g.out_w, g.out_ch, g.out_h * g.out_w);
      ob.noalias() = wm * cols;
    }
    Var v = push(OpKind::Conv2d, {x, w}, std::move(out));
    nodes_[v.id].padding = padding;
    return v;
  }

  Var add(Var a, Var b) {
    const auto& av = value(a);
    const auto& bv = value(b);
    if (av.shape() != bv.shape()) mismatch(OpKind::Add, av, bv);
    return push(OpKind::Add, {a, b}, TensorT(av.shape(), av.data() + bv.data()));
  }

  /// x + b broadcast along the feature axis: x [B,F] with b [F], or x [B,C,H,W] with b [C].
  Var add_bias(Var x, Var b) {
    const auto& xv = value(x);
    const auto& bv = value(b);
    if (bv.rank() != 1 || xv.rank() < 2 || xv.dim(1) != bv.dim(0) || (xv.rank() != 2 && xv.rank() != 4)) {
      mismatch(OpKind::AddBias, xv, bv);
    }
    TensorT out = xv;
    const Index channels = xv.dim(1);
    const Index inner = xv.size() / (xv.dim(0) * channels);
    for (Index n = 0; n < xv.dim(0); ++n) {
      for (Index c = 0; c < channels; ++c) {
        out.data().segment((n * channels + c) * inner, inner).array() += bv.data()[c];
      }
    }
    return push(OpKind::AddBias, {x, b}, std::move(out));
  }

  Var relu(Var x) {
    const auto& xv = value(x);
    return push(OpKind::Relu, {x}, TensorT(xv.shape(), xv.data().cwiseMax(Scalar(0))));
  }

  /// Row-wise log-softmax of a [B,K] tensor.
  Var log_softmax(Var x) {
    const auto& xv = value(x);
    if (xv.rank() != 2) throw ShapeError(std::string("log_softmax: expected rank 2, got ") + shape_str(xv.shape()));
    TensorT out(xv.shape());
    auto in = xv.matrix();
    auto o = out.matrix();
    for (Index r = 0; r < in.rows(); ++r) {
      const Scalar m = in.row(r).maxCoeff();
      const Scalar lse = m + std::log((in.row(r).array() - m).exp().sum());
      o.row(r) = in.row(r).array() - lse;
    }
    return push(OpKind::LogSoftmax, {x}, std::move(out));
  }

  Var reduce_mean(Var x) {
    const auto& xv = value(x);
    return push(OpKind::ReduceMean, {x}, TensorT::scalar(xv.data().mean()));
  }

  Var reduce_sum(Var x) { return push(OpKind::ReduceSum, {x}, TensorT::scalar(value(x).data().sum())); }

  Var mul(Var a, Var b) {
    const auto& av = value(a);
    const auto& bv = value(b);
    if (av.shape() != bv.shape()) mismatch(OpKind::Mul, av, bv);
    return push(OpKind::Mul, {a, b}, TensorT(av.shape(), av.data().cwiseProduct(bv.data())));
  }

  Var scale(Var x, Scalar s) {
    const auto& xv = value(x);
    Var v = push(OpKind::Scale, {x}, TensorT(xv.shape(), xv.data() * s));
    nodes_[v.id].factor = s;
    return v;
  }

  Var reshape(Var x, Shape shape) {
    try {
      return push(OpKind::Reshape, {x}, value(x).reshaped(std::move(shape)));
    } catch (const ShapeError& e) {
      throw ShapeError(std::string("reshape: ") + e.what());
    }
  }

  const TensorT& value(Var v) const { return node(v).value; }

  /// Gradient of the last backward() output with respect to v; zeros for detached nodes.
  const TensorT& grad(Var v) const {
    const Node& n = node(v);
    if (n.grad.size() == 0) {
      zero_cache_ = TensorT(n.value.shape());
      return zero_cache_;
    }
    return n.grad;
  }

  OpKind kind(Var v) const { return node(v).kind; }
  std::size_t size() const { return nodes_.size(); }

  void backward(Var output) {
    const Node& out = node(output);
    if (out.value.size() != 1) {
      throw ShapeError("backward: output must be scalar, got " + shape_str(out.value.shape()));
    }
    for (auto& n : nodes_) n.grad = TensorT();
    nodes_[output.id].grad = TensorT(out.value.shape(), Vector::Ones(1));
    for (std::size_t i = output.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.requires_grad || n.grad.size() == 0 || n.kind == OpKind::Leaf) continue;
      propagate(n);
    }
  }

 private:
  struct Node {
    OpKind kind = OpKind::Leaf;
    std::array<std::size_t, 2> inputs{};
    int arity = 0;
    bool requires_grad = false;
    TensorT value;
    TensorT grad;
    Scalar factor = Scalar(1);
    Padding padding = Padding::Valid;
  };

  struct ConvGeom {
    Index batch, in_ch, in_h, in_w, out_ch, kernel, pad, out_h, out_w, patch;
  };

  static ConvGeom geometry(const Shape& x, const Shape& w, Padding padding) {
    ConvGeom g{};
    g.batch = x[0];
    g.in_ch = x[1];
    g.in_h = x[2];
    g.in_w = x[3];
    g.out_ch = w[0];
    g.kernel = w[2];
    if (padding == Padding::Same && g.kernel % 2 == 0) {
      throw ShapeError("conv2d: 'same' padding needs an odd kernel, got " + std::to_string(g.kernel));
    }
    g.pad = padding == Padding::Same ? g.kernel / 2 : 0;
    g.out_h = g.in_h + 2 * g.pad - g.kernel + 1;
    g.out_w = g.in_w + 2 * g.pad - g.kernel + 1;
    if (g.out_h <= 0 || g.out_w <= 0) {
      throw ShapeError("conv2d: kernel " + std::to_string(g.kernel) + " larger than input " + shape_str(x));
    }
    g.patch = g.in_ch * g.kernel * g.kernel;
    return g;
  }

  static void im2col(const TensorT& x, Index b, const ConvGeom& g, RowMatrix& cols) {
    const Scalar* base = x.data().data() + b * g.in_ch * g.in_h * g.in_w;
    for (Index c = 0; c < g.in_ch; ++c) {
      for (Index ki = 0; ki < g.kernel; ++ki) {
        for (Index kj = 0; kj < g.kernel; ++kj) {
          const Index row = (c * g.kernel + ki) * g.kernel + kj;
          for (Index oh = 0; oh < g.out_h; ++oh) {
            const Index ih = oh + ki - g.pad;
            for (Index ow = 0; ow < g.out_w; ++ow) {
              const Index iw = ow + kj - g.pad;
              const bool inside = ih >= 0 && ih < g.in_h && iw >= 0 && iw < g.in_w;
              cols(row, oh * g.out_w + ow) = inside ? base[(c * g.in_h + ih) * g.in_w + iw] : Scalar(0);
            }
          }
        }
      }
    }
  }

  static void col2im_add(const RowMatrix& cols, Index b, const ConvGeom& g, TensorT& dx) {
    Scalar* base = dx.data().data() + b * g.in_ch * g.in_h * g.in_w;
    for (Index c = 0; c < g.in_ch; ++c) {
      for (Index ki = 0; ki < g.kernel; ++ki) {
        for (Index kj = 0; kj < g.kernel; ++kj) {
          const Index row = (c * g.kernel + ki) * g.kernel + kj;
          for (Index oh = 0; oh < g.out_h; ++oh) {
            const Index ih = oh + ki - g.pad;
            if (ih < 0 || ih >= g.in_h) continue;
            for (Index ow = 0; ow < g.out_w; ++ow) {
              const Index iw = ow + kj - g.pad;
              if (iw < 0 || iw >= g.in_w) continue;
              base[(c * g.in_h + ih) * g.in_w + iw] += cols(row, oh * g.out_w + ow);
            }
          }
        }
      }
    }
  }

  [[noreturn]] static void mismatch(OpKind kind, const TensorT& a, const TensorT& b) {
    throw ShapeError(std::string(op_name(kind)) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }

  const Node& node(Var v) const {
    if (v.id >= nodes_.size()) throw std::out_of_range("tape: unknown variable " + std::to_string(v.id));
    return nodes_[v.id];
  }

  Var push(OpKind kind, std::initializer_list<Var> inputs, TensorT value, bool leaf_grad = false) {
    Node n;
    n.kind = kind;
    n.value = std::move(value);
    n.requires_grad = leaf_grad;
    for (Var in : inputs) {
      n.inputs[static_cast<std::size_t>(n.arity++)] = in.id;
      n.requires_grad = n.requires_grad || nodes_[in.id].requires_grad;
    }
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
  }

  TensorT* grad_slot(std::size_t id) {
    Node& n = nodes_[id];
    if (!n.requires_grad) return nullptr;
    if (n.grad.size() == 0) n.grad = TensorT(n.value.shape());
    return &n.grad;
  }

  void propagate(const Node& n) {
    const TensorT& dy = n.grad;
    const std::size_t a = n.inputs[0];
    const std::size_t b = n.inputs[1];
    switch (n.kind) {
      case OpKind::MatMul: {
        const auto& av = nodes_[a].value;
        const auto& bv = nodes_[b].value;
        if (TensorT* da = grad_slot(a)) da->matrix().noalias() += dy.matrix() * bv.matrix().transpose();
        if (TensorT* db = grad_slot(b)) db->matrix().noalias() += av.matrix().transpose() * dy.matrix();
        break;
      }
      case OpKind::Conv2d: {
        const auto& xv = nodes_[a].value;
        const auto& wv = nodes_[b].value;
        const ConvGeom g = geometry(xv.shape(), wv.shape(), n.padding);
        TensorT* dx = grad_slot(a);
        TensorT* dw = grad_slot(b);
        Eigen::Map<const RowMatrix> wm(wv.data().data(), g.out_ch, g.patch);
        RowMatrix cols(g.patch, g.out_h * g.out_w);
        const Index plane = g.out_ch * g.out_h * g.out_w;
        for (Index bi = 0; bi < g.batch; ++bi) {
          Eigen::Map<const RowMatrix> dob(dy.data().data() + bi * plane, g.out_ch, g.out_h * g.out_w);
          if (dw) {
            im2col(xv, bi, g, cols);
            Eigen::Map<RowMatrix> dwm(dw->data().data(), g.out_ch, g.patch);
            dwm.noalias() += dob * cols.transpose();
          }
          if (dx) {
            RowMatrix dcols = wm.transpose() * dob;
            col2im_add(dcols, bi, g, *dx);
          }
        }
        break;
      }
      case OpKind::Add:
        if (TensorT* da = grad_slot(a)) da->data() += dy.data();
        if (TensorT* db = grad_slot(b)) db->data() += dy.data();
        break;
      case OpKind::AddBias: {
        if (TensorT* dx = grad_slot(a)) dx->data() += dy.data();
        if (TensorT* db = grad_slot(b)) {
          const Index channels = dy.dim(1);
          const Index inner = dy.size() / (dy.dim(0) * channels);
          for (Index s = 0; s < dy.dim(0); ++s) {
            for (Index c = 0; c < channels; ++c) {
              db->data()[c] += dy.data().segment((s * channels + c) * inner, inner).sum();
            }
          }
        }
        break;
      }
      case OpKind::Relu:
        if (TensorT* dx = grad_slot(a)) {
          dx->data().array() += (n.value.data().array() > Scalar(0)).select(dy.data().array(), Scalar(0));
        }
        break;
      case OpKind::LogSoftmax:
        if (TensorT* dx = grad_slot(a)) {
          auto out = n.value.matrix();
          auto g = dy.matrix();
          auto d = dx->matrix();
          for (Index r = 0; r < out.rows(); ++r) {
            const Scalar total = g.row(r).sum();
            d.row(r).array() += g.row(r).array() - out.row(r).array().exp() * total;
          }
        }
        break;
      case OpKind::ReduceMean:
        if (TensorT* dx = grad_slot(a)) {
          dx->data().array() += dy.data()[0] / static_cast<Scalar>(dx->size());
        }
        break;
      case OpKind::ReduceSum:
        if (TensorT* dx = grad_slot(a)) dx->data().array() += dy.data()[0];
        break;
      case OpKind::Mul: {
        const auto& av = nodes_[a].value;
        const auto& bv = nodes_[b].value;
        if (TensorT* da = grad_slot(a)) da->data() += dy.data().cwiseProduct(bv.data());
        if (TensorT* db = grad_slot(b)) db->data() += dy.data().cwiseProduct(av.data());
        break;
      }
      case OpKind::Scale:
        if (TensorT* dx = grad_slot(a)) dx->data() += dy.data() * n.factor;
        break;
      case OpKind::Reshape:
        if (TensorT* dx = grad_slot(a)) dx->data() += dy.data();
        break;
      case OpKind::Leaf:
        break;
    }
  }

  std::vector<Node> nodes_;
  mutable TensorT zero_cache_;
};

inline const char* op_name(OpKind kind) {
  switch (kind) {
    case OpKind::Leaf: return "leaf";
    case OpKind::MatMul: return "matmul";
    case OpKind::Conv2d: return "conv2d";
    case OpKind::Add: return "add";
    case OpKind::AddBias: return "add_bias";
    case OpKind::Relu: return "relu";
    case OpKind::LogSoftmax: return "log_softmax";
    case OpKind::ReduceMean: return "reduce_mean";
    case OpKind::ReduceSum: return "reduce_sum";
    case OpKind::Mul: return "mul";
    case OpKind::Scale: return "scale";
    case OpKind::Reshape: return "reshape";
  }
  return "unknown";
}

class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Central-difference gradient (L(w + h e_i) - L(w - h e_i)) / 2h. With
/// `relative_step` the per-coordinate step is h_i = step * (1 + |w_i|).
template <typename Scalar, typename LossFn>
VectorX<Scalar> finite_diff_grad(LossFn&& loss, const VectorX<Scalar>& params, Scalar step,
                                 bool relative_step = false) {
  if (!(step > Scalar(0))) throw std::invalid_argument("finite_diff_grad: step must be positive");
  VectorX<Scalar> grad(params.size());
  VectorX<Scalar> probe = params;
  for (Index i = 0; i < params.size(); ++i) {
    const Scalar h = relative_step ? step * (Scalar(1) + std::abs(params[i])) : step;
    probe[i] = params[i] + h;
    const Scalar up = loss(static_cast<const VectorX<Scalar>&>(probe));
    probe[i] = params[i] - h;
    const Scalar down = loss(static_cast<const VectorX<Scalar>&>(probe));
    probe[i] = params[i];
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw NonFiniteError("finite_diff_grad: non-finite loss probing coordinate " + std::to_string(i));
    }
    grad[i] = (up - down) / (Scalar(2) * h);
  }
  return grad;
}

}  // namespace swamp

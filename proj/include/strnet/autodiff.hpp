#pragma once

// Reverse-mode differentiation over a linear tape of primitive ops.
//
// A Tape owns every intermediate value. Leaves reference caller-owned tensors
// (typically parameters); backward() accumulates dLoss/dLeaf into each such
// tensor's grad buffer, so repeated backward calls add up until zero_grad().

#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <initializer_list>
#include <span>
#include <vector>

#include "strnet/kernels.hpp"
#include "strnet/tensor.hpp"

namespace strnet::ad {

template <typename T>
class Tape;

/// Handle to a value recorded on a tape.
template <typename T>
struct Var {
  Tape<T>* tape = nullptr;
  std::size_t id = 0;

  const Tensor<T>& value() const { return tape->value(*this); }
  const Shape& shape() const { return value().shape(); }
};

template <typename T>
class Tape {
 public:
  /// Reads the node's adjoint and pushes contributions into its inputs.
  using BackwardFn = std::function<void(Tape&, std::size_t node)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Records a caller-owned tensor. Gradients flow back into `t` only when
  /// t.requires_grad() is set; the tensor must outlive any backward() call.
  Var<T> leaf(Tensor<T>& t);

  /// Records a value that never receives gradients.
  Var<T> constant(Tensor<T> t);

  /// Records an op output. `fn` runs during backward only if some input needs grad.
  Var<T> record(Tensor<T> value, std::initializer_list<Var<T>> inputs, BackwardFn fn);
  Var<T> record(Tensor<T> value, const std::vector<Var<T>>& inputs, BackwardFn fn);

  const Tensor<T>& value(Var<T> v) const;
  const Tensor<T>& value(std::size_t id) const { return nodes_[id].value; }

  bool owns(Var<T> v) const { return v.tape == this && v.id < nodes_.size(); }
  bool needs_grad(std::size_t id) const { return nodes_[id].needs_grad; }

  /// Adjoint of node `id` (zeros if nothing has been accumulated).
  const Tensor<T>& adjoint(std::size_t id);

  /// Adds `g` into the adjoint of `v`; ignored for nodes that need no gradient.
  void accumulate(Var<T> v, const Tensor<T>& g);
  void accumulate(Var<T> v, std::span<const T> g);

  /// Populates gradients of every requires_grad leaf reachable from `loss`.
  /// Errors: loss not on this tape, or loss not a single element.
  void backward(Var<T> loss);

  std::size_t num_ops() const noexcept { return num_ops_; }
  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> adj;  // empty until touched
    Tensor<T>* leaf = nullptr;
    bool needs_grad = false;
    BackwardFn backward;
  };

  std::deque<Node> nodes_;
  std::size_t num_ops_ = 0;
};

// ---------------------------------------------------------------------------
// Differentiable primitives. All operands must live on the same tape.

template <typename T> Var<T> add(Var<T> a, Var<T> b);
template <typename T> Var<T> sub(Var<T> a, Var<T> b);
template <typename T> Var<T> mul(Var<T> a, Var<T> b);
template <typename T> Var<T> div(Var<T> a, Var<T> b);
template <typename T> Var<T> scale(Var<T> a, T c);
template <typename T> Var<T> add_scalar(Var<T> a, T c);
/// a * s[index], with s a parameter vector (gradient flows into s[index]).
template <typename T> Var<T> scale_by_element(Var<T> a, Var<T> s, std::size_t index);
/// a * mask where mask is a constant tensor of the same shape.
template <typename T> Var<T> mul_const(Var<T> a, const Tensor<T>& mask);
template <typename T> Var<T> square(Var<T> a);
template <typename T> Var<T> abs(Var<T> a);
template <typename T> Var<T> exp(Var<T> a);
template <typename T> Var<T> gelu(Var<T> a);
template <typename T> Var<T> softplus(Var<T> a);
template <typename T> Var<T> maximum(Var<T> a, Var<T> b);

/// Sum of all elements -> shape {1}.
template <typename T> Var<T> sum(Var<T> a);
template <typename T> Var<T> mean(Var<T> a);
template <typename T> Var<T> mean_axis(Var<T> a, std::size_t axis);

template <typename T> Var<T> reshape(Var<T> a, Shape shape);
template <typename T> Var<T> transpose(Var<T> a, std::vector<std::size_t> perm);
template <typename T> Var<T> concat(const std::vector<Var<T>>& parts, std::size_t axis);
template <typename T> Var<T> slice(Var<T> a, std::size_t axis, std::size_t start, std::size_t length);

template <typename T> Var<T> circular_roll(Var<T> x, std::size_t axis, std::int64_t shift);
template <typename T> Var<T> adaptive_avg_pool2d(Var<T> x, std::size_t out_h, std::size_t out_w);
template <typename T> Var<T> upsample_nearest(Var<T> x, std::size_t out_h, std::size_t out_w);
template <typename T> Var<T> pointwise_conv(Var<T> x, Var<T> w, Var<T> b);
/// x: [N, In], w: [Out, In], b: [Out].
template <typename T> Var<T> linear(Var<T> x, Var<T> w, Var<T> b);
template <typename T> Var<T> depthwise_conv2d(Var<T> x, Var<T> kernel);
template <typename T> Var<T> conv2d(Var<T> x, Var<T> w, Var<T> b, ops::Conv2dGeometry geo);
template <typename T> Var<T> group_norm(Var<T> x, std::size_t groups, Var<T> gamma, Var<T> beta, T eps);
template <typename T> Var<T> cosine_similarity(Var<T> a, Var<T> b, std::size_t axis, T eps_norm);
template <typename T> Var<T> directional_aggregate(Var<T> x, const ops::AggregateOptions& opts);
template <typename T> Var<T> hybrid_temporal_shift(Var<T> x, const ops::ShiftGroups& groups);

/// (1 / B) * sum_b (1 / max(1, sum_i M[b,i])) * sum_{i: M[b,i] != 0} |pred[b,i,:] - target[b,i,:]|^2
/// pred, target: [B, L, d]; mask: [B, L] with binary entries. Masked entries
/// are skipped entirely, so their values never reach the result.
template <typename T> Var<T> masked_mse(Var<T> pred, const Tensor<T>& target, const Tensor<T>& mask);

template <typename T> Var<T> operator+(Var<T> a, Var<T> b) { return add(a, b); }
template <typename T> Var<T> operator-(Var<T> a, Var<T> b) { return sub(a, b); }
template <typename T> Var<T> operator*(Var<T> a, Var<T> b) { return mul(a, b); }

}  // namespace strnet::ad

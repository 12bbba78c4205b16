#include "strnet/autodiff.hpp"

#include <cmath>
#include <memory>
#include <string>

namespace strnet::ad {

template <typename T>
Var<T> Tape<T>::leaf(Tensor<T>& t) {
  Node n;
  n.value = Tensor<T>(t.shape(), std::vector<T>(t.data().begin(), t.data().end()));
  n.leaf = &t;
  n.needs_grad = t.requires_grad();
  nodes_.push_back(std::move(n));
  return Var<T>{this, nodes_.size() - 1};
}

template <typename T>
Var<T> Tape<T>::constant(Tensor<T> t) {
  Node n;
  n.value = std::move(t);
  nodes_.push_back(std::move(n));
  return Var<T>{this, nodes_.size() - 1};
}

template <typename T>
Var<T> Tape<T>::record(Tensor<T> value, std::initializer_list<Var<T>> inputs, BackwardFn fn) {
  return record(std::move(value), std::vector<Var<T>>(inputs), std::move(fn));
}

template <typename T>
Var<T> Tape<T>::record(Tensor<T> value, const std::vector<Var<T>>& inputs, BackwardFn fn) {
  bool needs = false;
  for (const auto& in : inputs) {
    if (!owns(in)) throw Error("autodiff: operand is not on this tape");
    needs = needs || nodes_[in.id].needs_grad;
  }
  require_finite(value, "tape op #" + std::to_string(num_ops_));
  Node n;
  n.value = std::move(value);
  n.needs_grad = needs;
  if (needs) n.backward = std::move(fn);
  nodes_.push_back(std::move(n));
  ++num_ops_;
  return Var<T>{this, nodes_.size() - 1};
}

template <typename T>
const Tensor<T>& Tape<T>::value(Var<T> v) const {
  if (!owns(v)) throw Error("autodiff: variable is not on this tape");
  return nodes_[v.id].value;
}

template <typename T>
const Tensor<T>& Tape<T>::adjoint(std::size_t id) {
  Node& n = nodes_[id];
  if (n.adj.empty()) n.adj = Tensor<T>(n.value.shape());
  return n.adj;
}

template <typename T>
void Tape<T>::accumulate(Var<T> v, const Tensor<T>& g) {
  accumulate(v, g.data());
}

template <typename T>
void Tape<T>::accumulate(Var<T> v, std::span<const T> g) {
  Node& n = nodes_[v.id];
  if (!n.needs_grad) return;
  if (g.size() != n.value.size()) throw ShapeError("autodiff: adjoint size mismatch");
  if (n.adj.empty()) n.adj = Tensor<T>(n.value.shape());
  T* dst = n.adj.ptr();
  for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
}

template <typename T>
void Tape<T>::backward(Var<T> loss) {
  if (!owns(loss)) throw Error("backward: loss tensor is not on this tape");
  if (nodes_[loss.id].value.size() != 1) throw ShapeError("backward: loss must be a scalar");
  for (auto& n : nodes_) n.adj = Tensor<T>();
  if (!nodes_[loss.id].needs_grad) return;
  nodes_[loss.id].adj = Tensor<T>(nodes_[loss.id].value.shape(), T(1));
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.needs_grad || n.adj.empty()) continue;
    if (n.backward) n.backward(*this, i);
    if (n.leaf) n.leaf->accumulate_grad(n.adj.data());
  }
}

template class Tape<float>;
template class Tape<double>;

// ---------------------------------------------------------------------------

namespace {

template <typename T>
Tape<T>& same_tape(Var<T> a, Var<T> b) {
  if (a.tape == nullptr || a.tape != b.tape) throw Error("autodiff: operands live on different tapes");
  return *a.tape;
}

template <typename T>
void require_same(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                     to_string(b.shape()));
}

template <typename T, typename F>
Var<T> unary(Var<T> a, Tensor<T> out, F&& dfdx) {
  // dfdx(x, y) -> derivative of y = f(x) elementwise
  return a.tape->record(std::move(out), {a}, [a, dfdx](Tape<T>& tape, std::size_t self) {
    const auto& g = tape.adjoint(self);
    const auto& x = tape.value(a);
    const auto& y = tape.value(self);
    Tensor<T> d(x.shape());
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = g[i] * dfdx(x[i], y[i]);
    tape.accumulate(a, d);
  });
}

}  // namespace

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  auto& tape = same_tape(a, b);
  const auto& x = a.value();
  const auto& y = b.value();
  require_same(x, y, "add");
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
  return tape.record(std::move(out), {a, b}, [a, b](Tape<T>& t, std::size_t self) {
    const auto& g = t.adjoint(self);
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  auto& tape = same_tape(a, b);
  const auto& x = a.value();
  const auto& y = b.value();
  require_same(x, y, "sub");
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] - y[i];
  return tape.record(std::move(out), {a, b}, [a, b](Tape<T>& t, std::size_t self) {
    const auto& g = t.adjoint(self);
    t.accumulate(a, g);
    Tensor<T> neg(g.shape());
    for (std::size_t i = 0; i < g.size(); ++i) neg[i] = -g[i];
    t.accumulate(b, neg);
  });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  auto& tape = same_tape(a, b);
  const auto& x = a.value();
  const auto& y = b.value();
  require_same(x, y, "mul");
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
  return tape.record(std::move(out), {a, b}, [a, b](Tape<T>& t, std::size_t self) {
    const auto& g = t.adjoint(self);
    const auto& x = t.value(a);
    const auto& y = t.value(b);
    Tensor<T> da(g.shape()), db(g.shape());
    for (std::size_t i = 0; i < g.size(); ++i) {
      da[i] = g[i] * y[i];
      db[i] = g[i] * x[i];
    }
    t.accumulate(a, da);
    t.accumulate(b, db);
  });
}

template <typename T>
Var<T> div(Var<T> a, Var<T> b) {
  auto& tape = same_tape(a, b);
  const auto& x = a.value();
  const auto& y = b.value();
  require_same(x, y, "div");
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] / y[i];
  return tape.record(std::move(out), {a, b}, [a, b](Tape<T>& t, std::size_t self) {
    const auto& g = t.adjoint(self);
    const auto& y = t.value(b);
    const auto& q = t.value(self);
    Tensor<T> da(g.shape()), db(g.shape());
    for (std::size_t i = 0; i < g.size(); ++i) {
      da[i] = g[i] / y[i];
      db[i] = -g[i] * q[i] / y[i];
    }
    t.accumulate(a, da);
    t.accumulate(b, db);
  });
}

template <typename T>
Var<T> scale(Var<T> a, T c) {
  const auto& x = a.value();
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = c * x[i];
  return unary(a, std::move(out), [c](T, T) { return c; });
}

template <typename T>
Var<T> add_scalar(Var<T> a, T c) {
  const auto& x = a.value();
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + c;
  return unary(a, std::move(out), [](T, T) { return T(1); });
}

template <typename T>
Var<T> scale_by_element(Var<T> a, Var<T> s, std::size_t index) {
  auto& tape = same_tape(a, s);
  const auto& x = a.value();
  if (index >= s.value().size()) throw ShapeError("scale_by_element: index out of range");
  const T c = s.value()[index];
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = c * x[i];
  return tape.record(std::move(out), {a, s}, [a, s, index](Tape<T>& t, std::size_t self) {
    const auto& g = t.adjoint(self);
    const auto& x = t.value(a);
    const T c = t.value(s)[index];
    Tensor<T> da(g.shape());
    T ds = 0;
    for (std::size_t i = 0; i < g.size(); ++i) {
      da[i] = g[i] * c;
      ds += g[i] * x[i];
    }
    t.accumulate(a, da);
    Tensor<T> dsv(t.value(s).shape());
    dsv[index] = ds;
    t.accumulate(s, dsv);
  });
}

template <typename T>
Var<T> mul_const(Var<T> a, const Tensor<T>& mask) {
  const auto& x = a.value();
  require_same(x, mask, "mul_const");
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * mask[i];
  return a.tape->record(std::move(out), {a}, [a, mask](Tape<T>& t, std::size_t self) {
    const auto& g = t.adjoint(self);
    Tensor<T> d(g.shape());
    for (std::size_t i = 0; i < g.size(); ++i) d[i] = g[i] * mask[i];
    t.accumulate(a, d);
  });
}

template <typename T>
Var<T> square(Var<T> a) {
  const auto& x = a.value();
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * x[i];
  return unary(a, std::move(out), [](T x, T) { return T(2) * x; });
}

template <typename T>
Var<T> abs(Var<T> a) {
  const auto& x = a.value();
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::abs(x[i]);
  return unary(a, std::move(out),
               [](T x, T) { return x > T(0) ? T(1) : (x < T(0) ? T(-1) : T(0)); });
}

template <typename T>
Var<T> exp(Var<T> a) {
  const auto& x = a.value();
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(x[i]);
  return unary(a, std::move(out), [](T, T y) { return y; });
}

template <typename T>
Var<T> gelu(Var<T> a) {
  return a.tape->record(ops::gelu(a.value()), {a}, [a](Tape<T>& t, std::size_t self) {
    t.accumulate(a, ops::gelu_backward(t.value(a), t.adjoint(self)));
  });
}

template <typename T>
Var<T> softplus(Var<T> a) {
  return a.tape->record(ops::softplus(a.value()), {a}, [a](Tape<T>& t, std::size_t self) {
    t.accumulate(a, ops::softplus_backward(t.value(a), t.adjoint(self)));
  });
}

template <typename T>
Var<T> maximum(Var<T> a, Var<T> b) {
  auto& tape = same_tape(a, b);
  const auto& x = a.value();
  const auto& y = b.value();
  require_same(x, y, "maximum");
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] >= y[i] ? x[i] : y[i];
  return tape.record(std::move(out), {a, b}, [a, b](Tape<T>& t, std::size_t self) {
    const auto& g = t.adjoint(self);
    const auto& x = t.value(a);
    const auto& y = t.value(b);
    Tensor<T> da(g.shape()), db(g.shape());
    for (std::size_t i = 0; i < g.size(); ++i) (x[i] >= y[i] ? da[i] : db[i]) = g[i];
    t.accumulate(a, da);
    t.accumulate(b, db);
  });
}

template <typename T>
Var<T> sum(Var<T> a) {
  const auto& x = a.value();
  T acc = 0;
  for (auto v : x.data()) acc += v;
  return a.tape->record(Tensor<T>::scalar(acc), {a}, [a](Tape<T>& t, std::size_t self) {
    const T g = t.adjoint(self)[0];
    t.accumulate(a, Tensor<T>(t.value(a).shape(), g));
  });
}

template <typename T>
Var<T> mean(Var<T> a) {
  return scale(sum(a), T(1) / static_cast<T>(a.value().size()));
}

template <typename T>
Var<T> mean_axis(Var<T> a, std::size_t axis) {
  return a.tape->record(ops::mean_axis(a.value(), axis), {a}, [a, axis](Tape<T>& t, std::size_t self) {
    const auto& g = t.adjoint(self);
    const auto& shape = t.value(a).shape();
    auto sp = split_at(shape, axis);
    Tensor<T> d(shape);
    const T inv = T(1) / static_cast<T>(sp.extent);
    for (std::size_t o = 0; o < sp.outer; ++o)
      for (std::size_t i = 0; i < sp.extent; ++i)
        for (std::size_t n = 0; n < sp.inner; ++n)
          d[(o * sp.extent + i) * sp.inner + n] = g[o * sp.inner + n] * inv;
    t.accumulate(a, d);
  });
}

template <typename T>
Var<T> reshape(Var<T> a, Shape shape) {
  return a.tape->record(a.value().reshaped(std::move(shape)), {a}, [a](Tape<T>& t, std::size_t self) {
    t.accumulate(a, t.adjoint(self).data());
  });
}

template <typename T>
Var<T> transpose(Var<T> a, std::vector<std::size_t> perm) {
  auto out = ops::transpose(a.value(), perm);
  return a.tape->record(std::move(out), {a}, [a, perm](Tape<T>& t, std::size_t self) {
    t.accumulate(a, ops::transpose(t.adjoint(self), ops::inverse_permutation(perm)));
  });
}

template <typename T>
Var<T> concat(const std::vector<Var<T>>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  std::vector<const Tensor<T>*> values;
  for (const auto& p : parts) {
    if (p.tape != parts.front().tape) throw Error("concat: operands live on different tapes");
    values.push_back(&p.value());
  }
  auto out = ops::concat(values, axis);
  return parts.front().tape->record(std::move(out), parts, [parts, axis](Tape<T>& t, std::size_t self) {
    const auto& g = t.adjoint(self);
    std::size_t start = 0;
    for (const auto& p : parts) {
      const std::size_t ext = t.value(p).shape()[axis];
      t.accumulate(p, ops::slice(g, axis, start, ext));
      start += ext;
    }
  });
}

template <typename T>
Var<T> slice(Var<T> a, std::size_t axis, std::size_t start, std::size_t length) {
  auto out = ops::slice(a.value(), axis, start, length);
  return a.tape->record(std::move(out), {a}, [a, axis, start, length](Tape<T>& t, std::size_t self) {
    const auto& g = t.adjoint(self);
    const auto& shape = t.value(a).shape();
    auto sp = split_at(shape, axis);
    Tensor<T> d(shape);
    for (std::size_t o = 0; o < sp.outer; ++o)
      std::copy_n(g.ptr() + o * length * sp.inner, length * sp.inner,
                  d.ptr() + (o * sp.extent + start) * sp.inner);
    t.accumulate(a, d);
  });
}

template <typename T>
Var<T> circular_roll(Var<T> x, std::size_t axis, std::int64_t shift) {
  auto out = ops::circular_roll(x.value(), axis, shift);
  return x.tape->record(std::move(out), {x}, [x, axis, shift](Tape<T>& t, std::size_t self) {
    t.accumulate(x, ops::circular_roll(t.adjoint(self), axis, -shift));
  });
}

template <typename T>
Var<T> adaptive_avg_pool2d(Var<T> x, std::size_t out_h, std::size_t out_w) {
  auto out = ops::adaptive_avg_pool2d(x.value(), out_h, out_w);
  return x.tape->record(std::move(out), {x}, [x](Tape<T>& t, std::size_t self) {
    t.accumulate(x, ops::adaptive_avg_pool2d_backward(t.adjoint(self), t.value(x).shape()));
  });
}

template <typename T>
Var<T> upsample_nearest(Var<T> x, std::size_t out_h, std::size_t out_w) {
  auto out = ops::upsample_nearest(x.value(), out_h, out_w);
  return x.tape->record(std::move(out), {x}, [x](Tape<T>& t, std::size_t self) {
    t.accumulate(x, ops::upsample_nearest_backward(t.adjoint(self), t.value(x).shape()));
  });
}

template <typename T>
Var<T> pointwise_conv(Var<T> x, Var<T> w, Var<T> b) {
  same_tape(x, w);
  same_tape(x, b);
  auto out = ops::pointwise_conv(x.value(), w.value(), b.value());
  return x.tape->record(std::move(out), {x, w, b}, [x, w, b](Tape<T>& t, std::size_t self) {
    auto g = ops::pointwise_conv_backward(t.value(x), t.value(w), t.adjoint(self));
    t.accumulate(x, g.dx);
    t.accumulate(w, g.dw);
    t.accumulate(b, g.db);
  });
}

template <typename T>
Var<T> linear(Var<T> x, Var<T> w, Var<T> b) {
  if (x.value().rank() != 2) throw ShapeError("linear: expects x[N, In], got " + to_string(x.shape()));
  return pointwise_conv(x, w, b);
}

template <typename T>
Var<T> depthwise_conv2d(Var<T> x, Var<T> kernel) {
  same_tape(x, kernel);
  auto out = ops::depthwise_conv2d(x.value(), kernel.value());
  return x.tape->record(std::move(out), {x, kernel}, [x, kernel](Tape<T>& t, std::size_t self) {
    auto g = ops::depthwise_conv2d_backward(t.value(x), t.value(kernel), t.adjoint(self));
    t.accumulate(x, g.dx);
    t.accumulate(kernel, g.dkernel);
  });
}

template <typename T>
Var<T> conv2d(Var<T> x, Var<T> w, Var<T> b, ops::Conv2dGeometry geo) {
  same_tape(x, w);
  same_tape(x, b);
  auto out = ops::conv2d(x.value(), w.value(), b.value(), geo);
  return x.tape->record(std::move(out), {x, w, b}, [x, w, b, geo](Tape<T>& t, std::size_t self) {
    auto g = ops::conv2d_backward(t.value(x), t.value(w), t.adjoint(self), geo);
    t.accumulate(x, g.dx);
    t.accumulate(w, g.dw);
    t.accumulate(b, g.db);
  });
}

template <typename T>
Var<T> group_norm(Var<T> x, std::size_t groups, Var<T> gamma, Var<T> beta, T eps) {
  same_tape(x, gamma);
  same_tape(x, beta);
  auto res = ops::group_norm(x.value(), groups, gamma.value(), beta.value(), eps);
  Tensor<T> out = res.out;
  auto saved = std::make_shared<ops::GroupNormResult<T>>(std::move(res));
  return x.tape->record(std::move(out), {x, gamma, beta},
                        [x, gamma, beta, groups, saved](Tape<T>& t, std::size_t self) {
                          auto g = ops::group_norm_backward(t.value(x), groups, t.value(gamma),
                                                            *saved, t.adjoint(self));
                          t.accumulate(x, g.dx);
                          t.accumulate(gamma, g.dgamma);
                          t.accumulate(beta, g.dbeta);
                        });
}

template <typename T>
Var<T> cosine_similarity(Var<T> a, Var<T> b, std::size_t axis, T eps_norm) {
  same_tape(a, b);
  auto out = ops::cosine_similarity(a.value(), b.value(), axis, eps_norm);
  return a.tape->record(std::move(out), {a, b}, [a, b, axis, eps_norm](Tape<T>& t, std::size_t self) {
    auto g = ops::cosine_similarity_backward(t.value(a), t.value(b), axis, eps_norm, t.adjoint(self));
    t.accumulate(a, g.da);
    t.accumulate(b, g.db);
  });
}

template <typename T>
Var<T> directional_aggregate(Var<T> x, const ops::AggregateOptions& opts) {
  auto out = ops::directional_aggregate(x.value(), opts);
  return x.tape->record(std::move(out), {x}, [x, opts](Tape<T>& t, std::size_t self) {
    t.accumulate(x, ops::directional_aggregate_backward(t.value(x), opts, t.adjoint(self)));
  });
}

template <typename T>
Var<T> hybrid_temporal_shift(Var<T> x, const ops::ShiftGroups& groups) {
  auto out = ops::hybrid_temporal_shift(x.value(), groups);
  return x.tape->record(std::move(out), {x}, [x, groups](Tape<T>& t, std::size_t self) {
    t.accumulate(x, ops::hybrid_temporal_shift_backward(t.adjoint(self), groups));
  });
}

template <typename T>
Var<T> masked_mse(Var<T> pred, const Tensor<T>& target, const Tensor<T>& mask) {
  const auto& p = pred.value();
  require_same(p, target, "masked_mse");
  if (p.rank() != 3 || mask.rank() != 2 || mask.shape()[0] != p.shape()[0] ||
      mask.shape()[1] != p.shape()[1])
    throw ShapeError("masked_mse: expects pred[B, L, d] and mask[B, L]");
  const std::size_t B = p.shape()[0], L = p.shape()[1], D = p.shape()[2];
  // Per-sample normaliser 1 / max(1, sum(mask)), divided by the batch size.
  std::vector<T> norm(B);
  for (std::size_t b = 0; b < B; ++b) {
    T m = 0;
    for (std::size_t i = 0; i < L; ++i) m += mask[b * L + i];
    norm[b] = T(1) / (std::max(m, T(1)) * static_cast<T>(B));
  }
  T total = 0;
  for (std::size_t b = 0; b < B; ++b) {
    T acc = 0;
    for (std::size_t i = 0; i < L; ++i) {
      if (mask[b * L + i] == T(0)) continue;
      for (std::size_t k = 0; k < D; ++k) {
        const std::size_t idx = (b * L + i) * D + k;
        const T d = p[idx] - target[idx];
        acc += mask[b * L + i] * d * d;
      }
    }
    total += acc * norm[b];
  }
  return pred.tape->record(Tensor<T>::scalar(total), {pred},
                           [pred, target, mask, norm, B, L, D](Tape<T>& t, std::size_t self) {
                             const T g = t.adjoint(self)[0];
                             const auto& p = t.value(pred);
                             Tensor<T> d(p.shape());
                             for (std::size_t b = 0; b < B; ++b)
                               for (std::size_t i = 0; i < L; ++i) {
                                 if (mask[b * L + i] == T(0)) continue;
                                 for (std::size_t k = 0; k < D; ++k) {
                                   const std::size_t idx = (b * L + i) * D + k;
                                   d[idx] = g * T(2) * mask[b * L + i] * (p[idx] - target[idx]) * norm[b];
                                 }
                               }
                             t.accumulate(pred, d);
                           });
}

#define STRNET_INSTANTIATE(T)                                                            \
  template Var<T> add(Var<T>, Var<T>);                                                   \
  template Var<T> sub(Var<T>, Var<T>);                                                   \
  template Var<T> mul(Var<T>, Var<T>);                                                   \
  template Var<T> div(Var<T>, Var<T>);                                                   \
  template Var<T> scale(Var<T>, T);                                                      \
  template Var<T> add_scalar(Var<T>, T);                                                 \
  template Var<T> scale_by_element(Var<T>, Var<T>, std::size_t);                         \
  template Var<T> mul_const(Var<T>, const Tensor<T>&);                                   \
  template Var<T> square(Var<T>);                                                        \
  template Var<T> abs(Var<T>);                                                           \
  template Var<T> exp(Var<T>);                                                           \
  template Var<T> gelu(Var<T>);                                                          \
  template Var<T> softplus(Var<T>);                                                      \
  template Var<T> maximum(Var<T>, Var<T>);                                               \
  template Var<T> sum(Var<T>);                                                           \
  template Var<T> mean(Var<T>);                                                          \
  template Var<T> mean_axis(Var<T>, std::size_t);                                        \
  template Var<T> reshape(Var<T>, Shape);                                                \
  template Var<T> transpose(Var<T>, std::vector<std::size_t>);                           \
  template Var<T> concat(const std::vector<Var<T>>&, std::size_t);                       \
  template Var<T> slice(Var<T>, std::size_t, std::size_t, std::size_t);                  \
  template Var<T> circular_roll(Var<T>, std::size_t, std::int64_t);                      \
  template Var<T> adaptive_avg_pool2d(Var<T>, std::size_t, std::size_t);                 \
  template Var<T> upsample_nearest(Var<T>, std::size_t, std::size_t);                    \
  template Var<T> pointwise_conv(Var<T>, Var<T>, Var<T>);                                \
  template Var<T> linear(Var<T>, Var<T>, Var<T>);                                        \
  template Var<T> depthwise_conv2d(Var<T>, Var<T>);                                      \
  template Var<T> conv2d(Var<T>, Var<T>, Var<T>, ops::Conv2dGeometry);                   \
  template Var<T> group_norm(Var<T>, std::size_t, Var<T>, Var<T>, T);                    \
  template Var<T> cosine_similarity(Var<T>, Var<T>, std::size_t, T);                     \
  template Var<T> directional_aggregate(Var<T>, const ops::AggregateOptions&);           \
  template Var<T> hybrid_temporal_shift(Var<T>, const ops::ShiftGroups&);                \
  template Var<T> masked_mse(Var<T>, const Tensor<T>&, const Tensor<T>&);

STRNET_INSTANTIATE(float)
STRNET_INSTANTIATE(double)

#undef STRNET_INSTANTIATE

}  // namespace strnet::ad

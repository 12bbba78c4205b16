#include "strnet/kernels.hpp"

#include <cmath>
#include <numbers>
#include <string>

namespace strnet::ops {

namespace {

std::size_t wrap(std::int64_t i, std::size_t n) {
  auto m = static_cast<std::int64_t>(n);
  auto r = i % m;
  return static_cast<std::size_t>(r < 0 ? r + m : r);
}

void require_rank_at_least(const Shape& s, std::size_t r, const char* op) {
  if (s.size() < r)
    throw ShapeError(std::string(op) + ": expected rank >= " + std::to_string(r) + ", got " +
                     to_string(s));
}

void require_same_shape(const Shape& a, const Shape& b, const char* op) {
  if (a != b) throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a) + " vs " +
                               to_string(b));
}

}  // namespace

// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> circular_roll(const Tensor<T>& x, std::size_t axis, std::int64_t shift) {
  auto sp = split_at(x.shape(), axis);
  Tensor<T> out(x.shape());
  const std::size_t s = wrap(shift, sp.extent);
  const T* src = x.ptr();
  T* dst = out.ptr();
  for (std::size_t o = 0; o < sp.outer; ++o) {
    const std::size_t base = o * sp.extent * sp.inner;
    for (std::size_t i = 0; i < sp.extent; ++i) {
      std::size_t from = (i + sp.extent - s) % sp.extent;
      std::copy_n(src + base + from * sp.inner, sp.inner, dst + base + i * sp.inner);
    }
  }
  return out;
}

std::vector<std::size_t> inverse_permutation(const std::vector<std::size_t>& perm) {
  std::vector<std::size_t> inv(perm.size());
  for (std::size_t k = 0; k < perm.size(); ++k) inv.at(perm[k]) = k;
  return inv;
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& x, const std::vector<std::size_t>& perm) {
  const auto& in_shape = x.shape();
  const std::size_t r = in_shape.size();
  if (perm.size() != r) throw ShapeError("transpose: permutation rank mismatch");
  std::vector<bool> seen(r, false);
  for (auto p : perm) {
    if (p >= r || seen[p]) throw ShapeError("transpose: invalid permutation");
    seen[p] = true;
  }
  Shape out_shape(r);
  for (std::size_t k = 0; k < r; ++k) out_shape[k] = in_shape[perm[k]];

  std::vector<std::size_t> in_strides(r, 1);
  for (std::size_t k = r - 1; k > 0; --k) in_strides[k - 1] = in_strides[k] * in_shape[k];
  std::vector<std::size_t> step(r);
  for (std::size_t k = 0; k < r; ++k) step[k] = in_strides[perm[k]];

  Tensor<T> out(out_shape);
  std::vector<std::size_t> idx(r, 0);
  std::size_t src = 0;
  const T* in = x.ptr();
  T* dst = out.ptr();
  for (std::size_t n = 0; n < out.size(); ++n) {
    dst[n] = in[src];
    for (std::size_t k = r; k-- > 0;) {
      ++idx[k];
      src += step[k];
      if (idx[k] < out_shape[k]) break;
      src -= step[k] * out_shape[k];
      idx[k] = 0;
    }
  }
  return out;
}

template <typename T>
Tensor<T> concat(const std::vector<const Tensor<T>*>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  Shape out_shape = parts.front()->shape();
  if (axis >= out_shape.size()) throw ShapeError("concat: axis out of range");
  std::size_t total = 0;
  for (const auto* p : parts) {
    Shape s = p->shape();
    if (s.size() != out_shape.size()) throw ShapeError("concat: rank mismatch");
    for (std::size_t k = 0; k < s.size(); ++k)
      if (k != axis && s[k] != out_shape[k]) throw ShapeError("concat: extent mismatch");
    total += s[axis];
  }
  out_shape[axis] = total;
  Tensor<T> out(out_shape);
  auto sp = split_at(out_shape, axis);
  std::size_t offset = 0;
  for (const auto* p : parts) {
    const std::size_t ext = p->shape()[axis];
    for (std::size_t o = 0; o < sp.outer; ++o)
      std::copy_n(p->ptr() + o * ext * sp.inner, ext * sp.inner,
                  out.ptr() + (o * total + offset) * sp.inner);
    offset += ext;
  }
  return out;
}

template <typename T>
Tensor<T> slice(const Tensor<T>& x, std::size_t axis, std::size_t start, std::size_t length) {
  auto sp = split_at(x.shape(), axis);
  if (length == 0 || start + length > sp.extent) throw ShapeError("slice: range out of bounds");
  Shape out_shape = x.shape();
  out_shape[axis] = length;
  Tensor<T> out(out_shape);
  for (std::size_t o = 0; o < sp.outer; ++o)
    std::copy_n(x.ptr() + (o * sp.extent + start) * sp.inner, length * sp.inner,
                out.ptr() + o * length * sp.inner);
  return out;
}

template <typename T>
Tensor<T> mean_axis(const Tensor<T>& x, std::size_t axis) {
  auto sp = split_at(x.shape(), axis);
  Shape out_shape = x.shape();
  out_shape[axis] = 1;
  Tensor<T> out(out_shape);
  const T inv = T(1) / static_cast<T>(sp.extent);
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t i = 0; i < sp.extent; ++i)
      for (std::size_t n = 0; n < sp.inner; ++n)
        out[o * sp.inner + n] += x[(o * sp.extent + i) * sp.inner + n];
  for (auto& v : out.data()) v *= inv;
  return out;
}

// ---------------------------------------------------------------------------

Bin adaptive_bin(std::size_t index, std::size_t in_extent, std::size_t out_extent) {
  Bin b;
  b.begin = (index * in_extent) / out_extent;
  b.end = ((index + 1) * in_extent + out_extent - 1) / out_extent;
  return b;
}

template <typename T>
Tensor<T> adaptive_avg_pool2d(const Tensor<T>& x, std::size_t out_h, std::size_t out_w) {
  require_rank_at_least(x.shape(), 2, "adaptive_avg_pool2d");
  if (out_h == 0 || out_w == 0) throw ShapeError("adaptive_avg_pool2d: zero output extent");
  const std::size_t r = x.rank();
  const std::size_t H = x.shape()[r - 2], W = x.shape()[r - 1];
  if (out_h > H || out_w > W) throw ShapeError("adaptive_avg_pool2d: output larger than input");
  Shape out_shape = x.shape();
  out_shape[r - 2] = out_h;
  out_shape[r - 1] = out_w;
  Tensor<T> out(out_shape);
  const std::size_t planes = x.size() / (H * W);
  for (std::size_t p = 0; p < planes; ++p) {
    const T* src = x.ptr() + p * H * W;
    T* dst = out.ptr() + p * out_h * out_w;
    for (std::size_t i = 0; i < out_h; ++i) {
      Bin bi = adaptive_bin(i, H, out_h);
      for (std::size_t j = 0; j < out_w; ++j) {
        Bin bj = adaptive_bin(j, W, out_w);
        T acc = 0;
        for (std::size_t u = bi.begin; u < bi.end; ++u)
          for (std::size_t v = bj.begin; v < bj.end; ++v) acc += src[u * W + v];
        dst[i * out_w + j] = acc / static_cast<T>((bi.end - bi.begin) * (bj.end - bj.begin));
      }
    }
  }
  return out;
}

template <typename T>
Tensor<T> adaptive_avg_pool2d_backward(const Tensor<T>& grad, const Shape& input_shape) {
  const std::size_t r = input_shape.size();
  const std::size_t H = input_shape[r - 2], W = input_shape[r - 1];
  const std::size_t oh = grad.shape()[r - 2], ow = grad.shape()[r - 1];
  Tensor<T> dx(input_shape);
  const std::size_t planes = dx.size() / (H * W);
  for (std::size_t p = 0; p < planes; ++p) {
    const T* g = grad.ptr() + p * oh * ow;
    T* d = dx.ptr() + p * H * W;
    for (std::size_t i = 0; i < oh; ++i) {
      Bin bi = adaptive_bin(i, H, oh);
      for (std::size_t j = 0; j < ow; ++j) {
        Bin bj = adaptive_bin(j, W, ow);
        const T share =
            g[i * ow + j] / static_cast<T>((bi.end - bi.begin) * (bj.end - bj.begin));
        for (std::size_t u = bi.begin; u < bi.end; ++u)
          for (std::size_t v = bj.begin; v < bj.end; ++v) d[u * W + v] += share;
      }
    }
  }
  return dx;
}

template <typename T>
Tensor<T> upsample_nearest(const Tensor<T>& x, std::size_t out_h, std::size_t out_w) {
  require_rank_at_least(x.shape(), 2, "upsample_nearest");
  const std::size_t r = x.rank();
  const std::size_t h = x.shape()[r - 2], w = x.shape()[r - 1];
  if (out_h < h || out_w < w) throw ShapeError("upsample_nearest: output smaller than input");
  Shape out_shape = x.shape();
  out_shape[r - 2] = out_h;
  out_shape[r - 1] = out_w;
  Tensor<T> out(out_shape);
  const std::size_t planes = x.size() / (h * w);
  for (std::size_t p = 0; p < planes; ++p) {
    const T* src = x.ptr() + p * h * w;
    T* dst = out.ptr() + p * out_h * out_w;
    for (std::size_t i = 0; i < out_h; ++i) {
      const std::size_t si = (i * h) / out_h;
      for (std::size_t j = 0; j < out_w; ++j) dst[i * out_w + j] = src[si * w + (j * w) / out_w];
    }
  }
  return out;
}

template <typename T>
Tensor<T> upsample_nearest_backward(const Tensor<T>& grad, const Shape& input_shape) {
  const std::size_t r = input_shape.size();
  const std::size_t h = input_shape[r - 2], w = input_shape[r - 1];
  const std::size_t oh = grad.shape()[r - 2], ow = grad.shape()[r - 1];
  Tensor<T> dx(input_shape);
  const std::size_t planes = dx.size() / (h * w);
  for (std::size_t p = 0; p < planes; ++p) {
    const T* g = grad.ptr() + p * oh * ow;
    T* d = dx.ptr() + p * h * w;
    for (std::size_t i = 0; i < oh; ++i) {
      const std::size_t si = (i * h) / oh;
      for (std::size_t j = 0; j < ow; ++j) d[si * w + (j * w) / ow] += g[i * ow + j];
    }
  }
  return dx;
}

// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> pointwise_conv(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  require_rank_at_least(x.shape(), 2, "pointwise_conv");
  if (w.rank() != 2 || b.rank() != 1) throw ShapeError("pointwise_conv: weight/bias rank");
  const std::size_t B = x.shape()[0], Cin = x.shape()[1];
  const std::size_t Cout = w.shape()[0];
  if (w.shape()[1] != Cin || b.shape()[0] != Cout)
    throw ShapeError("pointwise_conv: channel mismatch, x " + to_string(x.shape()) + " w " +
                     to_string(w.shape()) + " b " + to_string(b.shape()));
  const std::size_t S = x.size() / (B * Cin);
  Shape out_shape = x.shape();
  out_shape[1] = Cout;
  Tensor<T> out(out_shape);
  for (std::size_t n = 0; n < B; ++n) {
    const T* xs = x.ptr() + n * Cin * S;
    T* os = out.ptr() + n * Cout * S;
    if (S == 1) {
      for (std::size_t o = 0; o < Cout; ++o) {
        const T* wr = w.ptr() + o * Cin;
        T acc = b[o];
        for (std::size_t i = 0; i < Cin; ++i) acc += wr[i] * xs[i];
        os[o] = acc;
      }
      continue;
    }
    for (std::size_t o = 0; o < Cout; ++o) {
      T* orow = os + o * S;
      std::fill_n(orow, S, b[o]);
      for (std::size_t i = 0; i < Cin; ++i) {
        const T wv = w[o * Cin + i];
        const T* xrow = xs + i * S;
        for (std::size_t s = 0; s < S; ++s) orow[s] += wv * xrow[s];
      }
    }
  }
  return out;
}

template <typename T>
PointwiseGrads<T> pointwise_conv_backward(const Tensor<T>& x, const Tensor<T>& w,
                                          const Tensor<T>& grad) {
  const std::size_t B = x.shape()[0], Cin = x.shape()[1];
  const std::size_t Cout = w.shape()[0];
  const std::size_t S = x.size() / (B * Cin);
  PointwiseGrads<T> g{Tensor<T>(x.shape()), Tensor<T>(w.shape()), Tensor<T>(Shape{Cout})};
  for (std::size_t n = 0; n < B; ++n) {
    const T* xs = x.ptr() + n * Cin * S;
    const T* gs = grad.ptr() + n * Cout * S;
    T* dxs = g.dx.ptr() + n * Cin * S;
    if (S == 1) {
      for (std::size_t o = 0; o < Cout; ++o) {
        const T go = gs[o];
        g.db[o] += go;
        if (go == T(0)) continue;
        const T* wr = w.ptr() + o * Cin;
        T* dwr = g.dw.ptr() + o * Cin;
        for (std::size_t i = 0; i < Cin; ++i) {
          dxs[i] += wr[i] * go;
          dwr[i] += go * xs[i];
        }
      }
      continue;
    }
    for (std::size_t o = 0; o < Cout; ++o) {
      const T* grow = gs + o * S;
      T bsum = 0;
      for (std::size_t s = 0; s < S; ++s) bsum += grow[s];
      g.db[o] += bsum;
      for (std::size_t i = 0; i < Cin; ++i) {
        const T wv = w[o * Cin + i];
        const T* xrow = xs + i * S;
        T* dxrow = dxs + i * S;
        T acc = 0;
        for (std::size_t s = 0; s < S; ++s) {
          dxrow[s] += wv * grow[s];
          acc += grow[s] * xrow[s];
        }
        g.dw[o * Cin + i] += acc;
      }
    }
  }
  return g;
}

template <typename T>
Tensor<T> depthwise_conv2d(const Tensor<T>& x, const Tensor<T>& kernel) {
  if (x.rank() != 4 || kernel.rank() != 3) throw ShapeError("depthwise_conv2d: expects x[N,C,H,W], k[C,kh,kw]");
  const std::size_t N = x.shape()[0], C = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
  const std::size_t kh = kernel.shape()[1], kw = kernel.shape()[2];
  if (kernel.shape()[0] != C) throw ShapeError("depthwise_conv2d: kernel channel mismatch");
  if (kh % 2 == 0 || kw % 2 == 0) throw ShapeError("depthwise_conv2d: kernel extents must be odd");
  const auto ph = static_cast<std::int64_t>(kh / 2), pw = static_cast<std::int64_t>(kw / 2);
  Tensor<T> out(x.shape());
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t c = 0; c < C; ++c) {
      const T* src = x.ptr() + (n * C + c) * H * W;
      const T* k = kernel.ptr() + c * kh * kw;
      T* dst = out.ptr() + (n * C + c) * H * W;
      for (std::size_t i = 0; i < H; ++i)
        for (std::size_t j = 0; j < W; ++j) {
          T acc = 0;
          for (std::size_t u = 0; u < kh; ++u) {
            auto si = static_cast<std::int64_t>(i) + static_cast<std::int64_t>(u) - ph;
            if (si < 0 || si >= static_cast<std::int64_t>(H)) continue;
            for (std::size_t v = 0; v < kw; ++v) {
              auto sj = static_cast<std::int64_t>(j) + static_cast<std::int64_t>(v) - pw;
              if (sj < 0 || sj >= static_cast<std::int64_t>(W)) continue;
              acc += k[u * kw + v] * src[static_cast<std::size_t>(si) * W + static_cast<std::size_t>(sj)];
            }
          }
          dst[i * W + j] = acc;
        }
    }
  return out;
}

template <typename T>
DepthwiseGrads<T> depthwise_conv2d_backward(const Tensor<T>& x, const Tensor<T>& kernel,
                                            const Tensor<T>& grad) {
  const std::size_t N = x.shape()[0], C = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
  const std::size_t kh = kernel.shape()[1], kw = kernel.shape()[2];
  const auto ph = static_cast<std::int64_t>(kh / 2), pw = static_cast<std::int64_t>(kw / 2);
  DepthwiseGrads<T> g{Tensor<T>(x.shape()), Tensor<T>(kernel.shape())};
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t c = 0; c < C; ++c) {
      const T* src = x.ptr() + (n * C + c) * H * W;
      const T* gr = grad.ptr() + (n * C + c) * H * W;
      const T* k = kernel.ptr() + c * kh * kw;
      T* dk = g.dkernel.ptr() + c * kh * kw;
      T* dx = g.dx.ptr() + (n * C + c) * H * W;
      for (std::size_t i = 0; i < H; ++i)
        for (std::size_t j = 0; j < W; ++j) {
          const T go = gr[i * W + j];
          for (std::size_t u = 0; u < kh; ++u) {
            auto si = static_cast<std::int64_t>(i) + static_cast<std::int64_t>(u) - ph;
            if (si < 0 || si >= static_cast<std::int64_t>(H)) continue;
            for (std::size_t v = 0; v < kw; ++v) {
              auto sj = static_cast<std::int64_t>(j) + static_cast<std::int64_t>(v) - pw;
              if (sj < 0 || sj >= static_cast<std::int64_t>(W)) continue;
              const std::size_t off = static_cast<std::size_t>(si) * W + static_cast<std::size_t>(sj);
              dk[u * kw + v] += go * src[off];
              dx[off] += go * k[u * kw + v];
            }
          }
        }
    }
  return g;
}

namespace {

std::size_t conv_out_extent(std::size_t in, std::size_t k, Conv2dGeometry geo) {
  if (in + 2 * geo.padding < k) throw ShapeError("conv2d: kernel larger than padded input");
  return (in + 2 * geo.padding - k) / geo.stride + 1;
}

}  // namespace

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, Conv2dGeometry geo) {
  if (x.rank() != 4 || w.rank() != 4 || b.rank() != 1) throw ShapeError("conv2d: rank mismatch");
  if (geo.stride == 0) throw ShapeError("conv2d: zero stride");
  const std::size_t N = x.shape()[0], Ci = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
  const std::size_t Co = w.shape()[0], kh = w.shape()[2], kw = w.shape()[3];
  if (w.shape()[1] != Ci || b.shape()[0] != Co) throw ShapeError("conv2d: channel mismatch");
  const std::size_t OH = conv_out_extent(H, kh, geo), OW = conv_out_extent(W, kw, geo);
  const auto pad = static_cast<std::int64_t>(geo.padding);
  Tensor<T> out(Shape{N, Co, OH, OW});
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t o = 0; o < Co; ++o) {
      T* dst = out.ptr() + (n * Co + o) * OH * OW;
      std::fill_n(dst, OH * OW, b[o]);
      for (std::size_t c = 0; c < Ci; ++c) {
        const T* src = x.ptr() + (n * Ci + c) * H * W;
        const T* k = w.ptr() + (o * Ci + c) * kh * kw;
        for (std::size_t u = 0; u < kh; ++u)
          for (std::size_t v = 0; v < kw; ++v) {
            const T kv = k[u * kw + v];
            for (std::size_t i = 0; i < OH; ++i) {
              auto si = static_cast<std::int64_t>(i * geo.stride + u) - pad;
              if (si < 0 || si >= static_cast<std::int64_t>(H)) continue;
              const T* srow = src + static_cast<std::size_t>(si) * W;
              T* drow = dst + i * OW;
              for (std::size_t j = 0; j < OW; ++j) {
                auto sj = static_cast<std::int64_t>(j * geo.stride + v) - pad;
                if (sj < 0 || sj >= static_cast<std::int64_t>(W)) continue;
                drow[j] += kv * srow[sj];
              }
            }
          }
      }
    }
  return out;
}

template <typename T>
Conv2dGrads<T> conv2d_backward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& grad,
                               Conv2dGeometry geo) {
  const std::size_t N = x.shape()[0], Ci = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
  const std::size_t Co = w.shape()[0], kh = w.shape()[2], kw = w.shape()[3];
  const std::size_t OH = grad.shape()[2], OW = grad.shape()[3];
  const auto pad = static_cast<std::int64_t>(geo.padding);
  Conv2dGrads<T> g{Tensor<T>(x.shape()), Tensor<T>(w.shape()), Tensor<T>(Shape{Co})};
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t o = 0; o < Co; ++o) {
      const T* gr = grad.ptr() + (n * Co + o) * OH * OW;
      T bsum = 0;
      for (std::size_t i = 0; i < OH * OW; ++i) bsum += gr[i];
      g.db[o] += bsum;
      for (std::size_t c = 0; c < Ci; ++c) {
        const T* src = x.ptr() + (n * Ci + c) * H * W;
        T* dsrc = g.dx.ptr() + (n * Ci + c) * H * W;
        const T* k = w.ptr() + (o * Ci + c) * kh * kw;
        T* dk = g.dw.ptr() + (o * Ci + c) * kh * kw;
        for (std::size_t u = 0; u < kh; ++u)
          for (std::size_t v = 0; v < kw; ++v) {
            const T kv = k[u * kw + v];
            T acc = 0;
            for (std::size_t i = 0; i < OH; ++i) {
              auto si = static_cast<std::int64_t>(i * geo.stride + u) - pad;
              if (si < 0 || si >= static_cast<std::int64_t>(H)) continue;
              const T* srow = src + static_cast<std::size_t>(si) * W;
              T* dsrow = dsrc + static_cast<std::size_t>(si) * W;
              const T* grow = gr + i * OW;
              for (std::size_t j = 0; j < OW; ++j) {
                auto sj = static_cast<std::int64_t>(j * geo.stride + v) - pad;
                if (sj < 0 || sj >= static_cast<std::int64_t>(W)) continue;
                acc += grow[j] * srow[sj];
                dsrow[sj] += kv * grow[j];
              }
            }
            dk[u * kw + v] += acc;
          }
      }
    }
  return g;
}

// ---------------------------------------------------------------------------

template <typename T>
GroupNormResult<T> group_norm(const Tensor<T>& x, std::size_t groups, const Tensor<T>& gamma,
                              const Tensor<T>& beta, T eps) {
  require_rank_at_least(x.shape(), 2, "group_norm");
  const std::size_t B = x.shape()[0], C = x.shape()[1];
  if (groups == 0 || C % groups != 0)
    throw ShapeError("group_norm: channels " + std::to_string(C) + " not divisible by groups " +
                     std::to_string(groups));
  if (gamma.size() != C || beta.size() != C) throw ShapeError("group_norm: affine size mismatch");
  const std::size_t S = x.size() / (B * C);
  const std::size_t cpg = C / groups;
  const std::size_t count = cpg * S;
  GroupNormResult<T> r{Tensor<T>(x.shape()), std::vector<T>(B * groups), std::vector<T>(B * groups)};
  for (std::size_t n = 0; n < B; ++n)
    for (std::size_t g = 0; g < groups; ++g) {
      const T* src = x.ptr() + (n * C + g * cpg) * S;
      T mean = 0;
      for (std::size_t i = 0; i < count; ++i) mean += src[i];
      mean /= static_cast<T>(count);
      T var = 0;
      for (std::size_t i = 0; i < count; ++i) {
        const T d = src[i] - mean;
        var += d * d;
      }
      var /= static_cast<T>(count);
      const T rstd = T(1) / std::sqrt(var + eps);
      r.mean[n * groups + g] = mean;
      r.rstd[n * groups + g] = rstd;
      T* dst = r.out.ptr() + (n * C + g * cpg) * S;
      for (std::size_t c = 0; c < cpg; ++c) {
        const T ga = gamma[g * cpg + c], be = beta[g * cpg + c];
        for (std::size_t s = 0; s < S; ++s)
          dst[c * S + s] = ga * ((src[c * S + s] - mean) * rstd) + be;
      }
    }
  return r;
}

template <typename T>
GroupNormGrads<T> group_norm_backward(const Tensor<T>& x, std::size_t groups,
                                      const Tensor<T>& gamma, const GroupNormResult<T>& saved,
                                      const Tensor<T>& grad) {
  const std::size_t B = x.shape()[0], C = x.shape()[1];
  const std::size_t S = x.size() / (B * C);
  const std::size_t cpg = C / groups;
  const std::size_t count = cpg * S;
  GroupNormGrads<T> g{Tensor<T>(x.shape()), Tensor<T>(Shape{C}), Tensor<T>(Shape{C})};
  std::vector<T> dxhat(count), xhat(count);
  for (std::size_t n = 0; n < B; ++n)
    for (std::size_t gi = 0; gi < groups; ++gi) {
      const T mean = saved.mean[n * groups + gi];
      const T rstd = saved.rstd[n * groups + gi];
      const std::size_t base = (n * C + gi * cpg) * S;
      T sum_d = 0, sum_dx = 0;
      for (std::size_t c = 0; c < cpg; ++c) {
        const std::size_t ch = gi * cpg + c;
        for (std::size_t s = 0; s < S; ++s) {
          const std::size_t k = c * S + s;
          xhat[k] = (x[base + k] - mean) * rstd;
          const T go = grad[base + k];
          g.dgamma[ch] += go * xhat[k];
          g.dbeta[ch] += go;
          dxhat[k] = go * gamma[ch];
          sum_d += dxhat[k];
          sum_dx += dxhat[k] * xhat[k];
        }
      }
      const T inv = T(1) / static_cast<T>(count);
      for (std::size_t k = 0; k < count; ++k)
        g.dx[base + k] = rstd * (dxhat[k] - sum_d * inv - xhat[k] * sum_dx * inv);
    }
  return g;
}

template <typename T>
T gelu_scalar(T x) {
  return T(0.5) * x * (T(1) + std::erf(x / std::numbers::sqrt2_v<T>));
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = gelu_scalar(x[i]);
  return out;
}

template <typename T>
Tensor<T> gelu_backward(const Tensor<T>& x, const Tensor<T>& grad) {
  Tensor<T> dx(x.shape());
  const T inv_sqrt_2pi = std::numbers::inv_sqrtpi_v<T> / std::numbers::sqrt2_v<T>;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const T v = x[i];
    const T cdf = T(0.5) * (T(1) + std::erf(v / std::numbers::sqrt2_v<T>));
    const T pdf = inv_sqrt_2pi * std::exp(T(-0.5) * v * v);
    dx[i] = grad[i] * (cdf + v * pdf);
  }
  return dx;
}

template <typename T>
Tensor<T> softplus(const Tensor<T>& x) {
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const T v = x[i];
    out[i] = v > T(20) ? v : std::log1p(std::exp(v));
  }
  return out;
}

template <typename T>
Tensor<T> softplus_backward(const Tensor<T>& x, const Tensor<T>& grad) {
  Tensor<T> dx(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) dx[i] = grad[i] / (T(1) + std::exp(-x[i]));
  return dx;
}

// ---------------------------------------------------------------------------

namespace {

Shape reduced_shape(const Shape& s, std::size_t axis) {
  Shape out;
  for (std::size_t k = 0; k < s.size(); ++k)
    if (k != axis) out.push_back(s[k]);
  if (out.empty()) out.push_back(1);
  return out;
}

}  // namespace

template <typename T>
Tensor<T> cosine_similarity(const Tensor<T>& a, const Tensor<T>& b, std::size_t axis,
                            T eps_norm) {
  require_same_shape(a.shape(), b.shape(), "cosine_similarity");
  auto sp = split_at(a.shape(), axis);
  Tensor<T> out(reduced_shape(a.shape(), axis));
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t n = 0; n < sp.inner; ++n) {
      T dot = 0, na = 0, nb = 0;
      for (std::size_t c = 0; c < sp.extent; ++c) {
        const std::size_t k = (o * sp.extent + c) * sp.inner + n;
        dot += a[k] * b[k];
        na += a[k] * a[k];
        nb += b[k] * b[k];
      }
      na = std::sqrt(na);
      nb = std::sqrt(nb);
      out[o * sp.inner + n] = (na < eps_norm || nb < eps_norm) ? T(0) : dot / (na * nb);
    }
  return out;
}

template <typename T>
CosineGrads<T> cosine_similarity_backward(const Tensor<T>& a, const Tensor<T>& b,
                                          std::size_t axis, T eps_norm, const Tensor<T>& grad) {
  auto sp = split_at(a.shape(), axis);
  CosineGrads<T> g{Tensor<T>(a.shape()), Tensor<T>(b.shape())};
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t n = 0; n < sp.inner; ++n) {
      T dot = 0, na = 0, nb = 0;
      for (std::size_t c = 0; c < sp.extent; ++c) {
        const std::size_t k = (o * sp.extent + c) * sp.inner + n;
        dot += a[k] * b[k];
        na += a[k] * a[k];
        nb += b[k] * b[k];
      }
      na = std::sqrt(na);
      nb = std::sqrt(nb);
      if (na < eps_norm || nb < eps_norm) continue;
      const T go = grad[o * sp.inner + n];
      const T sim = dot / (na * nb);
      for (std::size_t c = 0; c < sp.extent; ++c) {
        const std::size_t k = (o * sp.extent + c) * sp.inner + n;
        g.da[k] += go * (b[k] / (na * nb) - sim * a[k] / (na * na));
        g.db[k] += go * (a[k] / (na * nb) - sim * b[k] / (nb * nb));
      }
    }
  return g;
}

// ---------------------------------------------------------------------------

namespace {

std::size_t axis_index(Axis axis) { return axis == Axis::height ? 2 : 3; }

void require_nchw(const Shape& s, const char* op) {
  if (s.size() != 4) throw ShapeError(std::string(op) + ": expects [N, C, H, W], got " + to_string(s));
}

}  // namespace

void validate_strides(const Shape& shape, const std::vector<std::size_t>& strides) {
  require_nchw(shape, "directional_aggregate");
  if (strides.empty()) throw Error("directional_aggregate: empty stride list");
  for (auto s : strides) {
    if (s == 0) throw Error("directional_aggregate: stride must be positive");
    for (std::size_t ax : {std::size_t{2}, std::size_t{3}}) {
      const std::size_t ext = shape[ax];
      if (ext > 1 && s >= ext)
        throw Error("directional_aggregate: stride " + std::to_string(s) +
                    " must be smaller than spatial extent " + std::to_string(ext));
    }
  }
}

template <typename T>
AxialContrast<T> axial_contrast_weights(const Tensor<T>& x, std::size_t stride, Axis axis,
                                        T temperature) {
  require_nchw(x.shape(), "axial_contrast_weights");
  if (!(temperature > T(0))) throw Error("axial_contrast_weights: temperature must be positive");
  const std::size_t ax = axis_index(axis);
  const std::size_t ext = x.shape()[ax];
  if (stride == 0 || stride >= ext)
    throw Error("axial_contrast_weights: stride " + std::to_string(stride) +
                " must satisfy 0 < s < " + std::to_string(ext));
  const std::size_t N = x.shape()[0], C = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
  AxialContrast<T> r{circular_roll(x, ax, static_cast<std::int64_t>(stride)),
                     Tensor<T>(Shape{N, 1, H, W})};
  for (std::size_t i = 0; i < x.size(); ++i) r.residual[i] -= x[i];
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t p = 0; p < H * W; ++p) {
      T d = 0;
      for (std::size_t c = 0; c < C; ++c) d += std::abs(r.residual[(n * C + c) * H * W + p]);
      r.weight[n * H * W + p] = std::exp(-d / temperature);
    }
  return r;
}

namespace {

// Per-axis aggregation: delta = sum_s w_s r_s / (sum_s w_s + eps).
template <typename T>
struct AxisAggregate {
  Tensor<T> delta;                 // [N, C, H, W]
  std::vector<Tensor<T>> residual;  // per stride, [N, C, H, W]
  std::vector<Tensor<T>> weight;    // per stride, [N, 1, H, W]
  Tensor<T> denom;                 // [N, 1, H, W]
};

template <typename T>
AxisAggregate<T> aggregate_axis(const Tensor<T>& x, const AggregateOptions& opts, Axis axis) {
  const std::size_t N = x.shape()[0], C = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
  const std::size_t ext = x.shape()[axis_index(axis)];
  const T tau = static_cast<T>(opts.temperature);
  AxisAggregate<T> agg{Tensor<T>(x.shape()), {}, {}, Tensor<T>(Shape{N, 1, H, W}, static_cast<T>(opts.epsilon))};
  for (auto s : opts.strides) {
    AxialContrast<T> ac;
    if (ext == 1) {
      // Every circular shift of an extent-1 axis is the identity.
      ac = AxialContrast<T>{Tensor<T>(x.shape()), Tensor<T>(Shape{N, 1, H, W}, T(1))};
    } else {
      ac = axial_contrast_weights(x, s, axis, tau);
    }
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t p = 0; p < H * W; ++p) {
        const T w = ac.weight[n * H * W + p];
        agg.denom[n * H * W + p] += w;
        for (std::size_t c = 0; c < C; ++c) {
          const std::size_t k = (n * C + c) * H * W + p;
          agg.delta[k] += w * ac.residual[k];
        }
      }
    agg.residual.push_back(std::move(ac.residual));
    agg.weight.push_back(std::move(ac.weight));
  }
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t p = 0; p < H * W; ++p)
        agg.delta[(n * C + c) * H * W + p] /= agg.denom[n * H * W + p];
  return agg;
}

template <typename T>
bool pick_height(T dh, T dv, MaxMode mode) {
  if (mode == MaxMode::signed_max) return dh >= dv;
  return std::abs(dh) >= std::abs(dv);
}

template <typename T>
void aggregate_axis_backward(const Tensor<T>& x, const AggregateOptions& opts, Axis axis,
                             const AxisAggregate<T>& agg, const Tensor<T>& gdelta, Tensor<T>& dx) {
  const std::size_t N = x.shape()[0], C = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
  const std::size_t ax = axis_index(axis);
  const std::size_t ext = x.shape()[ax];
  if (ext == 1) return;  // residuals are identically zero
  const T tau = static_cast<T>(opts.temperature);
  const std::size_t HW = H * W;
  // dL/dS = -sum_c G * delta / S
  std::vector<T> gS(N * HW, T(0));
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t p = 0; p < HW; ++p) {
      T acc = 0;
      for (std::size_t c = 0; c < C; ++c) {
        const std::size_t k = (n * C + c) * HW + p;
        acc += gdelta[k] * agg.delta[k];
      }
      gS[n * HW + p] = -acc / agg.denom[n * HW + p];
    }
  Tensor<T> gres(x.shape());
  for (std::size_t si = 0; si < opts.strides.size(); ++si) {
    const auto& r = agg.residual[si];
    const auto& w = agg.weight[si];
    std::fill(gres.data().begin(), gres.data().end(), T(0));
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t p = 0; p < HW; ++p) {
        const T S = agg.denom[n * HW + p];
        const T wv = w[n * HW + p];
        T gw = gS[n * HW + p];
        for (std::size_t c = 0; c < C; ++c) {
          const std::size_t k = (n * C + c) * HW + p;
          gw += gdelta[k] / S * r[k];
        }
        const T gd = gw * (-wv / tau);
        for (std::size_t c = 0; c < C; ++c) {
          const std::size_t k = (n * C + c) * HW + p;
          const T sgn = r[k] > T(0) ? T(1) : (r[k] < T(0) ? T(-1) : T(0));
          gres[k] = gdelta[k] / S * wv + gd * sgn;
        }
      }
    // residual = roll(x, s) - x, so dx += roll(gres, -s) - gres.
    auto back = circular_roll(gres, ax, -static_cast<std::int64_t>(opts.strides[si]));
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += back[i] - gres[i];
  }
}

}  // namespace

template <typename T>
Tensor<T> directional_aggregate(const Tensor<T>& x, const AggregateOptions& opts) {
  validate_strides(x.shape(), opts.strides);
  if (!(opts.temperature > 0) || !(opts.epsilon > 0))
    throw Error("directional_aggregate: temperature and epsilon must be positive");
  auto h = aggregate_axis(x, opts, Axis::height);
  auto v = aggregate_axis(x, opts, Axis::width);
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = pick_height(h.delta[i], v.delta[i], opts.mode) ? h.delta[i] : v.delta[i];
  return out;
}

template <typename T>
Tensor<T> directional_aggregate_backward(const Tensor<T>& x, const AggregateOptions& opts,
                                         const Tensor<T>& grad) {
  auto h = aggregate_axis(x, opts, Axis::height);
  auto v = aggregate_axis(x, opts, Axis::width);
  Tensor<T> gh(x.shape()), gv(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (pick_height(h.delta[i], v.delta[i], opts.mode))
      gh[i] = grad[i];
    else
      gv[i] = grad[i];
  }
  Tensor<T> dx(x.shape());
  aggregate_axis_backward(x, opts, Axis::height, h, gh, dx);
  aggregate_axis_backward(x, opts, Axis::width, v, gv, dx);
  return dx;
}

// ---------------------------------------------------------------------------

namespace {

template <typename T>
Tensor<T> shift_impl(const Tensor<T>& x, const ShiftGroups& groups, bool adjoint) {
  if (x.rank() != 3) throw ShapeError("hybrid_temporal_shift: expects [B, T, C], got " + to_string(x.shape()));
  const std::size_t B = x.shape()[0], Tn = x.shape()[1], C = x.shape()[2];
  if (Tn < 2) throw ShapeError("hybrid_temporal_shift: sequence length must be >= 2");
  if (groups.total() != C) throw ShapeError("hybrid_temporal_shift: channel groups do not sum to C");
  Tensor<T> out(x.shape());
  const std::size_t f_end = groups.forward;
  const std::size_t b_end = f_end + groups.backward;
  const std::size_t bi_end = b_end + groups.bidirectional;
  for (std::size_t n = 0; n < B; ++n)
    for (std::size_t t = 0; t < Tn; ++t) {
      const std::size_t prev = (t + Tn - 1) % Tn;
      const std::size_t next = (t + 1) % Tn;
      // Forward takes t-1; its adjoint takes t+1 (and vice versa for backward).
      const std::size_t f_src = adjoint ? next : prev;
      const std::size_t b_src = adjoint ? prev : next;
      const T* xp = x.ptr() + n * Tn * C;
      T* dst = out.ptr() + (n * Tn + t) * C;
      for (std::size_t c = 0; c < f_end; ++c) dst[c] = xp[f_src * C + c];
      for (std::size_t c = f_end; c < b_end; ++c) dst[c] = xp[b_src * C + c];
      for (std::size_t c = b_end; c < bi_end; ++c)
        dst[c] = T(0.5) * (xp[prev * C + c] + xp[next * C + c]);
      for (std::size_t c = bi_end; c < C; ++c) dst[c] = xp[t * C + c];
    }
  return out;
}

}  // namespace

template <typename T>
Tensor<T> hybrid_temporal_shift(const Tensor<T>& x, const ShiftGroups& groups) {
  return shift_impl(x, groups, false);
}

template <typename T>
Tensor<T> hybrid_temporal_shift_backward(const Tensor<T>& grad, const ShiftGroups& groups) {
  return shift_impl(grad, groups, true);
}

// ---------------------------------------------------------------------------

#define STRNET_INSTANTIATE(T)                                                                  \
  template Tensor<T> circular_roll(const Tensor<T>&, std::size_t, std::int64_t);               \
  template Tensor<T> transpose(const Tensor<T>&, const std::vector<std::size_t>&);             \
  template Tensor<T> concat(const std::vector<const Tensor<T>*>&, std::size_t);                \
  template Tensor<T> slice(const Tensor<T>&, std::size_t, std::size_t, std::size_t);           \
  template Tensor<T> mean_axis(const Tensor<T>&, std::size_t);                                 \
  template Tensor<T> adaptive_avg_pool2d(const Tensor<T>&, std::size_t, std::size_t);          \
  template Tensor<T> adaptive_avg_pool2d_backward(const Tensor<T>&, const Shape&);             \
  template Tensor<T> upsample_nearest(const Tensor<T>&, std::size_t, std::size_t);             \
  template Tensor<T> upsample_nearest_backward(const Tensor<T>&, const Shape&);                \
  template Tensor<T> pointwise_conv(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);     \
  template PointwiseGrads<T> pointwise_conv_backward(const Tensor<T>&, const Tensor<T>&,       \
                                                     const Tensor<T>&);                        \
  template Tensor<T> depthwise_conv2d(const Tensor<T>&, const Tensor<T>&);                     \
  template DepthwiseGrads<T> depthwise_conv2d_backward(const Tensor<T>&, const Tensor<T>&,     \
                                                       const Tensor<T>&);                      \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,              \
                            Conv2dGeometry);                                                   \
  template Conv2dGrads<T> conv2d_backward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, \
                                          Conv2dGeometry);                                     \
  template GroupNormResult<T> group_norm(const Tensor<T>&, std::size_t, const Tensor<T>&,      \
                                         const Tensor<T>&, T);                                 \
  template GroupNormGrads<T> group_norm_backward(const Tensor<T>&, std::size_t,                \
                                                 const Tensor<T>&, const GroupNormResult<T>&,  \
                                                 const Tensor<T>&);                            \
  template T gelu_scalar(T);                                                                   \
  template Tensor<T> gelu(const Tensor<T>&);                                                   \
  template Tensor<T> gelu_backward(const Tensor<T>&, const Tensor<T>&);                        \
  template Tensor<T> softplus(const Tensor<T>&);                                               \
  template Tensor<T> softplus_backward(const Tensor<T>&, const Tensor<T>&);                    \
  template Tensor<T> cosine_similarity(const Tensor<T>&, const Tensor<T>&, std::size_t, T);    \
  template CosineGrads<T> cosine_similarity_backward(const Tensor<T>&, const Tensor<T>&,       \
                                                     std::size_t, T, const Tensor<T>&);        \
  template AxialContrast<T> axial_contrast_weights(const Tensor<T>&, std::size_t, Axis, T);    \
  template Tensor<T> directional_aggregate(const Tensor<T>&, const AggregateOptions&);          \
  template Tensor<T> directional_aggregate_backward(const Tensor<T>&, const AggregateOptions&, \
                                                    const Tensor<T>&);                         \
  template Tensor<T> hybrid_temporal_shift(const Tensor<T>&, const ShiftGroups&);              \
  template Tensor<T> hybrid_temporal_shift_backward(const Tensor<T>&, const ShiftGroups&);

STRNET_INSTANTIATE(float)
STRNET_INSTANTIATE(double)

#undef STRNET_INSTANTIATE

}  // namespace strnet::ops

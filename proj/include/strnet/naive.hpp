#pragma once

// Brute-force reference implementations. Each one is a direct loop over the
// defining formula, written without the library kernels, in double precision.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <vector>

#include "strnet/tensor.hpp"

namespace strnet::naive {

using T64 = Tensor<double>;

inline std::size_t wrap(std::int64_t i, std::size_t n) {
  const auto m = static_cast<std::int64_t>(n);
  return static_cast<std::size_t>(((i % m) + m) % m);
}

// Flat index <-> multi-index over an arbitrary shape.
inline std::vector<std::size_t> unravel(std::size_t flat, const Shape& shape) {
  std::vector<std::size_t> idx(shape.size());
  for (std::size_t k = shape.size(); k-- > 0;) {
    idx[k] = flat % shape[k];
    flat /= shape[k];
  }
  return idx;
}

inline std::size_t ravel(const std::vector<std::size_t>& idx, const Shape& shape) {
  std::size_t flat = 0;
  for (std::size_t k = 0; k < shape.size(); ++k) flat = flat * shape[k] + idx[k];
  return flat;
}

inline T64 roll(const T64& x, std::size_t axis, std::int64_t shift) {
  T64 out(x.shape());
  for (std::size_t f = 0; f < x.size(); ++f) {
    auto idx = unravel(f, x.shape());
    const auto dst = idx;
    idx[axis] = wrap(static_cast<std::int64_t>(idx[axis]) - shift, x.shape()[axis]);
    out[ravel(dst, x.shape())] = x[ravel(idx, x.shape())];
  }
  return out;
}

// Adaptive average pooling over the two trailing axes.
inline T64 pool(const T64& x, std::size_t oh, std::size_t ow) {
  const Shape& s = x.shape();
  const std::size_t h = s[s.size() - 2], w = s[s.size() - 1];
  const std::size_t lead = x.size() / (h * w);
  Shape os = s;
  os[s.size() - 2] = oh;
  os[s.size() - 1] = ow;
  T64 out(os);
  for (std::size_t n = 0; n < lead; ++n)
    for (std::size_t i = 0; i < oh; ++i)
      for (std::size_t j = 0; j < ow; ++j) {
        const std::size_t r0 = (i * h) / oh, r1 = ((i + 1) * h + oh - 1) / oh;
        const std::size_t c0 = (j * w) / ow, c1 = ((j + 1) * w + ow - 1) / ow;
        double acc = 0;
        for (std::size_t r = r0; r < r1; ++r)
          for (std::size_t c = c0; c < c1; ++c) acc += x[n * h * w + r * w + c];
        out[n * oh * ow + i * ow + j] = acc / static_cast<double>((r1 - r0) * (c1 - c0));
      }
  return out;
}

inline T64 upsample(const T64& x, std::size_t oh, std::size_t ow) {
  const Shape& s = x.shape();
  const std::size_t h = s[s.size() - 2], w = s[s.size() - 1];
  const std::size_t lead = x.size() / (h * w);
  Shape os = s;
  os[s.size() - 2] = oh;
  os[s.size() - 1] = ow;
  T64 out(os);
  for (std::size_t n = 0; n < lead; ++n)
    for (std::size_t i = 0; i < oh; ++i)
      for (std::size_t j = 0; j < ow; ++j)
        out[n * oh * ow + i * ow + j] = x[n * h * w + (i * h / oh) * w + (j * w / ow)];
  return out;
}

// x [B, Cin, ...], w [Cout, Cin], b [Cout].
inline T64 pointwise(const T64& x, const T64& w, const T64& b) {
  const std::size_t bsz = x.shape()[0], cin = x.shape()[1], cout = w.shape()[0];
  const std::size_t inner = x.size() / (bsz * cin);
  Shape os = x.shape();
  os[1] = cout;
  T64 out(os);
  for (std::size_t n = 0; n < bsz; ++n)
    for (std::size_t o = 0; o < cout; ++o)
      for (std::size_t p = 0; p < inner; ++p) {
        double acc = b[o];
        for (std::size_t c = 0; c < cin; ++c) acc += w[o * cin + c] * x[(n * cin + c) * inner + p];
        out[(n * cout + o) * inner + p] = acc;
      }
  return out;
}

// x [N, C, H, W], w [Cout, Cin, kh, kw], zero padding.
inline T64 conv2d(const T64& x, const T64& w, const T64& b, std::size_t stride, std::size_t pad) {
  const std::size_t n = x.shape()[0], cin = x.shape()[1], h = x.shape()[2], wd = x.shape()[3];
  const std::size_t cout = w.shape()[0], kh = w.shape()[2], kw = w.shape()[3];
  const std::size_t oh = (h + 2 * pad - kh) / stride + 1, ow = (wd + 2 * pad - kw) / stride + 1;
  T64 out(Shape{n, cout, oh, ow});
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t o = 0; o < cout; ++o)
      for (std::size_t i = 0; i < oh; ++i)
        for (std::size_t j = 0; j < ow; ++j) {
          double acc = b[o];
          for (std::size_t c = 0; c < cin; ++c)
            for (std::size_t u = 0; u < kh; ++u)
              for (std::size_t v = 0; v < kw; ++v) {
                const auto r = static_cast<std::int64_t>(i * stride + u) - static_cast<std::int64_t>(pad);
                const auto q = static_cast<std::int64_t>(j * stride + v) - static_cast<std::int64_t>(pad);
                if (r < 0 || q < 0 || r >= static_cast<std::int64_t>(h) || q >= static_cast<std::int64_t>(wd))
                  continue;
                acc += w.at({o, c, u, v}) * x.at({s, c, static_cast<std::size_t>(r), static_cast<std::size_t>(q)});
              }
          out.at({s, o, i, j}) = acc;
        }
  return out;
}

// x [N, C, H, W], kernel [C, kh, kw]; same-size output.
inline T64 depthwise(const T64& x, const T64& k) {
  const std::size_t n = x.shape()[0], c = x.shape()[1], h = x.shape()[2], w = x.shape()[3];
  const std::size_t kh = k.shape()[1], kw = k.shape()[2];
  T64 out(x.shape());
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t i = 0; i < h; ++i)
        for (std::size_t j = 0; j < w; ++j) {
          double acc = 0;
          for (std::size_t u = 0; u < kh; ++u)
            for (std::size_t v = 0; v < kw; ++v) {
              const auto r = static_cast<std::int64_t>(i + u) - static_cast<std::int64_t>(kh / 2);
              const auto q = static_cast<std::int64_t>(j + v) - static_cast<std::int64_t>(kw / 2);
              if (r < 0 || q < 0 || r >= static_cast<std::int64_t>(h) || q >= static_cast<std::int64_t>(w))
                continue;
              acc += k.at({ch, u, v}) * x.at({s, ch, static_cast<std::size_t>(r), static_cast<std::size_t>(q)});
            }
          out.at({s, ch, i, j}) = acc;
        }
  return out;
}

inline T64 group_norm(const T64& x, std::size_t groups, const T64& gamma, const T64& beta, double eps) {
  const std::size_t b = x.shape()[0], c = x.shape()[1];
  const std::size_t inner = x.size() / (b * c);
  const std::size_t per = c / groups;
  T64 out(x.shape());
  for (std::size_t n = 0; n < b; ++n)
    for (std::size_t g = 0; g < groups; ++g) {
      double sum = 0;
      for (std::size_t ch = g * per; ch < (g + 1) * per; ++ch)
        for (std::size_t p = 0; p < inner; ++p) sum += x[(n * c + ch) * inner + p];
      const double m = sum / static_cast<double>(per * inner);
      double var = 0;
      for (std::size_t ch = g * per; ch < (g + 1) * per; ++ch)
        for (std::size_t p = 0; p < inner; ++p) {
          const double d = x[(n * c + ch) * inner + p] - m;
          var += d * d;
        }
      var /= static_cast<double>(per * inner);
      for (std::size_t ch = g * per; ch < (g + 1) * per; ++ch)
        for (std::size_t p = 0; p < inner; ++p) {
          const std::size_t f = (n * c + ch) * inner + p;
          out[f] = gamma[ch] * (x[f] - m) / std::sqrt(var + eps) + beta[ch];
        }
    }
  return out;
}

inline double gelu(double v) { return 0.5 * v * (1.0 + std::erf(v / std::sqrt(2.0))); }

// Neighbour of (i, j) at stride s along one axis: the value that a circular
// shift by +s brings to (i, j).
struct Axial {
  T64 residual;  // [N, C, H, W]
  T64 weight;    // [N, 1, H, W]
};

inline Axial axial(const T64& x, std::size_t s, bool height, double tau) {
  const std::size_t n = x.shape()[0], c = x.shape()[1], h = x.shape()[2], w = x.shape()[3];
  Axial a{T64(x.shape()), T64(Shape{n, 1, h, w})};
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < w; ++j) {
        const std::size_t ni = height ? wrap(static_cast<std::int64_t>(i) - static_cast<std::int64_t>(s), h) : i;
        const std::size_t nj = height ? j : wrap(static_cast<std::int64_t>(j) - static_cast<std::int64_t>(s), w);
        double l1 = 0;
        for (std::size_t ch = 0; ch < c; ++ch) {
          const double r = x.at({b, ch, ni, nj}) - x.at({b, ch, i, j});
          a.residual.at({b, ch, i, j}) = r;
          l1 += std::abs(r);
        }
        a.weight.at({b, 0, i, j}) = std::exp(-l1 / tau);
      }
  return a;
}

inline T64 aggregate(const T64& x, const std::vector<std::size_t>& strides, double tau, double eps,
                     bool magnitude) {
  const std::size_t n = x.shape()[0], c = x.shape()[1], h = x.shape()[2], w = x.shape()[3];
  T64 out(x.shape());
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t i = 0; i < h; ++i)
        for (std::size_t j = 0; j < w; ++j) {
          double d[2];
          for (int axis = 0; axis < 2; ++axis) {
            double num = 0, den = 0;
            for (std::size_t s : strides) {
              const auto a = axial(x, s, axis == 0, tau);
              num += a.weight.at({b, 0, i, j}) * a.residual.at({b, ch, i, j});
              den += a.weight.at({b, 0, i, j});
            }
            d[axis] = num / (den + eps);
          }
          if (magnitude)
            out.at({b, ch, i, j}) = std::abs(d[1]) > std::abs(d[0]) ? d[1] : d[0];
          else
            out.at({b, ch, i, j}) = std::max(d[0], d[1]);
        }
  return out;
}

// x [B, T, C]; group sizes in forward/backward/bidirectional/residual order.
inline T64 hybrid_shift(const T64& x, std::size_t f, std::size_t bk, std::size_t bi) {
  const std::size_t b = x.shape()[0], t = x.shape()[1], c = x.shape()[2];
  T64 out(x.shape());
  for (std::size_t n = 0; n < b; ++n)
    for (std::size_t s = 0; s < t; ++s)
      for (std::size_t ch = 0; ch < c; ++ch) {
        const std::size_t prev = (s + t - 1) % t, next = (s + 1) % t;
        double v = x.at({n, s, ch});
        if (ch < f)
          v = x.at({n, prev, ch});
        else if (ch < f + bk)
          v = x.at({n, next, ch});
        else if (ch < f + bk + bi)
          v = 0.5 * (x.at({n, prev, ch}) + x.at({n, next, ch}));
        out.at({n, s, ch}) = v;
      }
  return out;
}

// x [B, 1, T, A, A]: upsample(roll(pool(x, a), a/2, a/2)).
inline T64 rearrange(const T64& x, std::size_t a) {
  const std::size_t b = x.shape()[0], t = x.shape()[2], ext = x.shape()[3];
  const std::size_t cell = ext / a;
  T64 out(x.shape());
  for (std::size_t n = 0; n < b; ++n)
    for (std::size_t s = 0; s < t; ++s)
      for (std::size_t i = 0; i < ext; ++i)
        for (std::size_t j = 0; j < ext; ++j) {
          const std::size_t pi = wrap(static_cast<std::int64_t>(i / cell) - static_cast<std::int64_t>(a / 2), a);
          const std::size_t pj = wrap(static_cast<std::int64_t>(j / cell) - static_cast<std::int64_t>(a / 2), a);
          double acc = 0;
          for (std::size_t r = pi * cell; r < (pi + 1) * cell; ++r)
            for (std::size_t q = pj * cell; q < (pj + 1) * cell; ++q) acc += x.at({n, 0, s, r, q});
          out.at({n, 0, s, i, j}) = acc / static_cast<double>(cell * cell);
        }
  return out;
}

// Two passes: every similarity, then the per-sample mean, then the comparison.
// frame == false: cosine over the single channel at each location.
inline T64 cosine_mask(const T64& xk, const T64& xt, bool frame, double eps = 1e-8) {
  const std::size_t b = xt.shape()[0], t = xt.shape()[2], a = xt.shape()[3];
  const std::size_t px = a * a;
  T64 mask(xt.shape());
  for (std::size_t n = 0; n < b; ++n) {
    std::vector<double> sim;
    for (std::size_t s = 0; s < t; ++s) {
      if (frame) {
        double dot = 0, na = 0, nb = 0;
        for (std::size_t p = 0; p < px; ++p) {
          const double u = xk[(n * t + s) * px + p], v = xt[(n * t + s) * px + p];
          dot += u * v;
          na += u * u;
          nb += v * v;
        }
        na = std::sqrt(na);
        nb = std::sqrt(nb);
        sim.push_back(na < eps || nb < eps ? 0.0 : dot / (na * nb));
      } else {
        for (std::size_t p = 0; p < px; ++p) {
          const double u = xk[(n * t + s) * px + p], v = xt[(n * t + s) * px + p];
          const double na = std::abs(u), nb = std::abs(v);
          sim.push_back(na < eps || nb < eps ? 0.0 : u * v / (na * nb));
        }
      }
    }
    double mean = 0;
    for (double v : sim) mean += v;
    mean /= static_cast<double>(sim.size());
    for (std::size_t s = 0; s < t; ++s)
      for (std::size_t p = 0; p < px; ++p) {
        const double v = frame ? sim[s] : sim[s * px + p];
        mask[(n * t + s) * px + p] = v > mean ? 1.0 : 0.0;
      }
  }
  return mask;
}

inline T64 contrast_aggregate(const std::vector<T64>& deltas, const std::vector<T64>& masks,
                              const std::vector<double>& betas) {
  T64 out(deltas.at(0).shape());
  for (std::size_t k = 0; k < deltas.size(); ++k)
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += betas[k] * masks[k][i] * deltas[k][i];
  return out;
}

// x_tsm, x_diff [B, 1, T, A, A]; weight [Cout, 2]; bias [Cout].
inline T64 fusion(const T64& xt, const T64& xd, const T64& w, const T64& b) {
  const std::size_t bsz = xt.shape()[0], cout = w.shape()[0];
  const std::size_t inner = xt.size() / bsz;
  Shape os = xt.shape();
  os[1] = cout;
  T64 out(os);
  for (std::size_t n = 0; n < bsz; ++n)
    for (std::size_t o = 0; o < cout; ++o)
      for (std::size_t p = 0; p < inner; ++p)
        out[(n * cout + o) * inner + p] =
            b[o] + w[o * 2] * xt[n * inner + p] + w[o * 2 + 1] * xd[n * inner + p];
  return out;
}

}  // namespace strnet::naive

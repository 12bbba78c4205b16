#pragma once

// Pure tensor kernels and their adjoints. Every function here is a
// deterministic function of its arguments; the autodiff layer composes them.

#include <cstddef>
#include <cstdint>
#include <vector>

#include "strnet/tensor.hpp"

namespace strnet::ops {

// ---------------------------------------------------------------------------
// Index plumbing

/// out[..., i, ...] = x[..., (i - shift) mod extent, ...] along `axis`.
template <typename T>
Tensor<T> circular_roll(const Tensor<T>& x, std::size_t axis, std::int64_t shift);

/// Permutes axes: out.shape[k] = x.shape[perm[k]].
template <typename T>
Tensor<T> transpose(const Tensor<T>& x, const std::vector<std::size_t>& perm);

std::vector<std::size_t> inverse_permutation(const std::vector<std::size_t>& perm);

template <typename T>
Tensor<T> concat(const std::vector<const Tensor<T>*>& parts, std::size_t axis);

template <typename T>
Tensor<T> slice(const Tensor<T>& x, std::size_t axis, std::size_t start, std::size_t length);

/// Mean over `axis`; the axis is kept with extent 1.
template <typename T>
Tensor<T> mean_axis(const Tensor<T>& x, std::size_t axis);

// ---------------------------------------------------------------------------
// Pooling and resampling over the two trailing axes

/// Half-open input range [begin, end) feeding output cell `index`.
/// begin = floor(index * in / out), end = ceil((index + 1) * in / out).
struct Bin {
  std::size_t begin;
  std::size_t end;
};
Bin adaptive_bin(std::size_t index, std::size_t in_extent, std::size_t out_extent);

template <typename T>
Tensor<T> adaptive_avg_pool2d(const Tensor<T>& x, std::size_t out_h, std::size_t out_w);

template <typename T>
Tensor<T> adaptive_avg_pool2d_backward(const Tensor<T>& grad, const Shape& input_shape);

/// out[i, j] = x[floor(i * h / out_h), floor(j * w / out_w)].
template <typename T>
Tensor<T> upsample_nearest(const Tensor<T>& x, std::size_t out_h, std::size_t out_w);

template <typename T>
Tensor<T> upsample_nearest_backward(const Tensor<T>& grad, const Shape& input_shape);

// ---------------------------------------------------------------------------
// Convolutions

/// x: [B, C_in, ...], w: [C_out, C_in], b: [C_out]. Trailing axes are kept.
template <typename T>
Tensor<T> pointwise_conv(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b);

template <typename T>
struct PointwiseGrads {
  Tensor<T> dx, dw, db;
};

template <typename T>
PointwiseGrads<T> pointwise_conv_backward(const Tensor<T>& x, const Tensor<T>& w,
                                          const Tensor<T>& grad);

/// x: [N, C, H, W], kernel: [C, kh, kw] with odd extents. Zero padding, same size.
template <typename T>
Tensor<T> depthwise_conv2d(const Tensor<T>& x, const Tensor<T>& kernel);

template <typename T>
struct DepthwiseGrads {
  Tensor<T> dx, dkernel;
};

template <typename T>
DepthwiseGrads<T> depthwise_conv2d_backward(const Tensor<T>& x, const Tensor<T>& kernel,
                                            const Tensor<T>& grad);

struct Conv2dGeometry {
  std::size_t stride = 1;
  std::size_t padding = 0;
};

/// x: [N, C_in, H, W], w: [C_out, C_in, kh, kw], b: [C_out]; zero padding.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, Conv2dGeometry geo);

template <typename T>
struct Conv2dGrads {
  Tensor<T> dx, dw, db;
};

template <typename T>
Conv2dGrads<T> conv2d_backward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& grad,
                               Conv2dGeometry geo);

// ---------------------------------------------------------------------------
// Normalization and activations

template <typename T>
struct GroupNormResult {
  Tensor<T> out;
  std::vector<T> mean;  // per (sample, group)
  std::vector<T> rstd;  // 1 / sqrt(var + eps), per (sample, group)
};

/// x: [B, C, ...]; gamma, beta: [C]. Biased per-(sample, group) statistics.
template <typename T>
GroupNormResult<T> group_norm(const Tensor<T>& x, std::size_t groups, const Tensor<T>& gamma,
                              const Tensor<T>& beta, T eps);

template <typename T>
struct GroupNormGrads {
  Tensor<T> dx, dgamma, dbeta;
};

template <typename T>
GroupNormGrads<T> group_norm_backward(const Tensor<T>& x, std::size_t groups,
                                      const Tensor<T>& gamma, const GroupNormResult<T>& saved,
                                      const Tensor<T>& grad);

/// Exact (erf) GELU.
template <typename T>
Tensor<T> gelu(const Tensor<T>& x);

template <typename T>
Tensor<T> gelu_backward(const Tensor<T>& x, const Tensor<T>& grad);

template <typename T>
T gelu_scalar(T x);

template <typename T>
Tensor<T> softplus(const Tensor<T>& x);

template <typename T>
Tensor<T> softplus_backward(const Tensor<T>& x, const Tensor<T>& grad);

// ---------------------------------------------------------------------------
// Similarity

/// Cosine similarity reduced over `axis`; 0 where either norm is below eps_norm.
/// The reduced axis is removed (a rank-1 input yields shape {1}).
template <typename T>
Tensor<T> cosine_similarity(const Tensor<T>& a, const Tensor<T>& b, std::size_t axis,
                            T eps_norm);

template <typename T>
struct CosineGrads {
  Tensor<T> da, db;
};

template <typename T>
CosineGrads<T> cosine_similarity_backward(const Tensor<T>& a, const Tensor<T>& b,
                                          std::size_t axis, T eps_norm, const Tensor<T>& grad);

// ---------------------------------------------------------------------------
// Axial contrast graph

enum class Axis { height, width };

/// residual = roll(x, s) - x along the axis; weight = exp(-|residual|_1 / temperature),
/// where the L1 norm runs over the channel axis. x: [N, C, H, W];
/// residual: [N, C, H, W]; weight: [N, 1, H, W].
template <typename T>
struct AxialContrast {
  Tensor<T> residual;
  Tensor<T> weight;
};

template <typename T>
AxialContrast<T> axial_contrast_weights(const Tensor<T>& x, std::size_t stride, Axis axis,
                                        T temperature);

enum class MaxMode {
  signed_max,  // elementwise max(delta_h, delta_v)
  magnitude,   // whichever of delta_h, delta_v has the larger |value|
};

struct AggregateOptions {
  std::vector<std::size_t> strides;
  double temperature = 0.1;
  double epsilon = 1e-6;
  MaxMode mode = MaxMode::signed_max;
};

/// Checks every stride against both spatial extents of `shape` ([N, C, H, W]).
/// Extent-1 axes are degenerate (every circular shift is the identity) and accept any stride.
void validate_strides(const Shape& shape, const std::vector<std::size_t>& strides);

/// Soft-weighted multi-stride residual per axis, combined by the max rule.
template <typename T>
Tensor<T> directional_aggregate(const Tensor<T>& x, const AggregateOptions& opts);

template <typename T>
Tensor<T> directional_aggregate_backward(const Tensor<T>& x, const AggregateOptions& opts,
                                         const Tensor<T>& grad);

// ---------------------------------------------------------------------------
// Hybrid temporal shift

/// Contiguous channel groups, in order forward / backward / bidirectional / residual.
struct ShiftGroups {
  std::size_t forward = 0;
  std::size_t backward = 0;
  std::size_t bidirectional = 0;
  std::size_t residual = 0;
  std::size_t total() const { return forward + backward + bidirectional + residual; }
};

/// x: [B, T, C]. Circular along T: forward takes t-1, backward takes t+1,
/// bidirectional averages both, residual passes through.
template <typename T>
Tensor<T> hybrid_temporal_shift(const Tensor<T>& x, const ShiftGroups& groups);

/// Adjoint of hybrid_temporal_shift (forward and backward groups swap roles).
template <typename T>
Tensor<T> hybrid_temporal_shift_backward(const Tensor<T>& grad, const ShiftGroups& groups);

}  // namespace strnet::ops

#pragma once

// Temporal fusion over a window of single-channel feature maps.
//
// Layout conventions (B batch, T frames, A spatial extent, C = A*A):
//   stacked   [B, T, 1, A, A]
//   x_bar     [B, T, C]          each frame flattened to a channel vector
//   x_tsm     [B, 1, T, A, A]    after the shift/conv residual stage
//   fused     [B, C_out, T, A, A]

#include <cstddef>
#include <random>
#include <string>
#include <vector>

#include "strnet/autodiff.hpp"
#include "strnet/kernels.hpp"
#include "strnet/params.hpp"

namespace strnet::temporal {

struct TemporalShiftConfig {
  double rho = 0.125;
  std::size_t channels = 256;

  ops::ShiftGroups groups() const;
  void validate() const;
};

/// Group sizes (floor(rho*C), floor(rho*C), floor(rho*C), remainder).
/// Throws when floor(rho*C) == 0 or rho is outside (0, 1/3].
ops::ShiftGroups channel_partition(std::size_t channels, double rho);

struct MultiResConfig {
  std::size_t num_scales = 3;
  std::size_t extent = 16;

  /// a_k for k = 1..num_scales.
  std::vector<std::size_t> scale_extents() const;
  void validate() const;
};

/// a_k = max(A / 2^(k-1), 4), k is 1-based. Throws if the result is odd or inexact.
std::size_t scale_extent(std::size_t extent, std::size_t k);

enum class CosineMode {
  channel,  // cosine over the (single) channel axis at each (t, i, j)
  frame,    // cosine between whole A*A frames, broadcast over (i, j)
};

struct TemporalFusionConfig {
  TemporalShiftConfig shift;
  MultiResConfig multires;
  std::size_t gn_groups = 8;
  std::size_t out_channels = 1;
  CosineMode cosine_mode = CosineMode::channel;

  /// Builds consistent sub-configs for extent A.
  static TemporalFusionConfig for_extent(std::size_t extent, double rho, std::size_t num_scales);
  void validate() const;
};

template <typename T>
struct TemporalFusionParams {
  Tensor<T> dw_kernel;      // [C, 3, 1]
  Tensor<T> gn_gamma;       // [C]
  Tensor<T> gn_beta;        // [C]
  Tensor<T> pw_weight;      // [C, C]
  Tensor<T> pw_bias;        // [C]
  Tensor<T> betas;          // [K]
  Tensor<T> fusion_weight;  // [C_out, 2]
  Tensor<T> fusion_bias;    // [C_out]

  static TemporalFusionParams init(const TemporalFusionConfig& cfg, std::mt19937_64& rng);
  void visit(const std::string& prefix, const ParamVisitor<T>& f);
  std::size_t parameter_count() const;
};

/// 3C (temporal taps) + 2C (norm) + C*C + C (pointwise) + K + 2*C_out + C_out.
/// The shift itself contributes nothing.
std::size_t expected_parameter_count(const TemporalFusionConfig& cfg);

template <typename T>
ad::Var<T> hybrid_temporal_shift(ad::Var<T> x_bar, const TemporalShiftConfig& cfg);

/// x_bar + pw(GELU(GN(dw(x_shift)))), reshaped to [B, 1, T, A, A].
template <typename T>
ad::Var<T> tsm_fuse(ad::Var<T> x_bar, ad::Var<T> x_shift, ad::Var<T> dw_kernel, ad::Var<T> gn_gamma,
                    ad::Var<T> gn_beta, ad::Var<T> pw_weight, ad::Var<T> pw_bias,
                    const TemporalFusionConfig& cfg);

template <typename T>
struct MultiResTerm {
  ad::Var<T> rearranged;  // upsample(roll(pool_k(x_tsm)))
  ad::Var<T> delta;       // rearranged - x_tsm
};

/// k is 1-based.
template <typename T>
MultiResTerm<T> multires_residual(ad::Var<T> x_tsm, std::size_t k, const MultiResConfig& cfg);

template <typename T>
struct CosineMaskResult {
  Tensor<T> mask;        // same shape as x_tsm, entries in {0, 1}
  Tensor<T> similarity;  // channel: [B, T, A, A]; frame: [B, T]
  std::vector<T> mean;   // per-sample mean similarity
};

/// mask = 1 where similarity > per-sample mean similarity (strict).
template <typename T>
CosineMaskResult<T> cosine_mask(const Tensor<T>& x_tilde_k, const Tensor<T>& x_tsm, CosineMode mode);

/// sum_k betas[k] * (masks[k] * deltas[k]).
template <typename T>
ad::Var<T> contrast_aggregate(const std::vector<ad::Var<T>>& deltas,
                              const std::vector<Tensor<T>>& masks, ad::Var<T> betas);

/// pointwise_conv(concat_channels(x_tsm, x_diff), weight, bias).
template <typename T>
ad::Var<T> contrast_aware_fusion(ad::Var<T> x_tsm, ad::Var<T> x_diff, ad::Var<T> weight,
                                 ad::Var<T> bias);

/// stacked [B, T, 1, A, A] -> [B, C_out, T, A, A].
template <typename T>
ad::Var<T> temporal_block_forward(ad::Var<T> stacked, TemporalFusionParams<T>& params,
                                  const TemporalFusionConfig& cfg);

template <typename T>
Tensor<T> temporal_block_forward(const Tensor<T>& stacked, TemporalFusionParams<T>& params,
                                 const TemporalFusionConfig& cfg);

}  // namespace strnet::temporal

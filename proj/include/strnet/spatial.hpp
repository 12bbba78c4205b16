#pragma once

// Axial-graph spatial aggregation over a single-channel feature map:
// positional encoding, multi-stride directional contrast, and a residual
// transformation, stacked num_layers times.

#include <cstddef>
#include <random>
#include <string>
#include <vector>

#include "strnet/autodiff.hpp"
#include "strnet/kernels.hpp"
#include "strnet/params.hpp"

namespace strnet::spatial {

struct AxialGraphConfig {
  std::vector<std::size_t> strides{8, 4, 2};
  double temperature = 0.1;
  double epsilon = 1e-6;
  std::size_t num_layers = 2;
  ops::MaxMode max_mode = ops::MaxMode::signed_max;
  std::size_t pos_kernel = 3;

  /// Throws if any stride is not below `extent` or a scalar is out of range.
  void validate(std::size_t extent) const;
  ops::AggregateOptions aggregate_options() const;
};

template <typename T>
struct SpatialLayerParams {
  Tensor<T> pos_kernel;        // [1, k, k], depthwise offset map
  Tensor<T> transform_weight;  // [1, 1]
  Tensor<T> transform_bias;    // [1]
  Tensor<T> norm_gamma;        // [1]
  Tensor<T> norm_beta;         // [1]
};

template <typename T>
struct SpatialBlockParams {
  std::vector<SpatialLayerParams<T>> layers;

  static SpatialBlockParams init(const AxialGraphConfig& cfg, std::mt19937_64& rng);

  /// Zero offset kernels and zero transform weights: every residual branch vanishes.
  static SpatialBlockParams identity(const AxialGraphConfig& cfg);

  void visit(const std::string& prefix, const ParamVisitor<T>& f);
  std::size_t parameter_count() const;
};

/// Closed form: per layer k*k offset taps + 1x1 weight + bias + gamma + beta.
std::size_t expected_parameter_count(const AxialGraphConfig& cfg);

/// X + depthwise_conv(X, kernel), zero-padded.
template <typename T>
ad::Var<T> positional_encoding(ad::Var<T> x, ad::Var<T> kernel);

template <typename T>
ad::Var<T> directional_aggregate(ad::Var<T> x_tilde, const AxialGraphConfig& cfg);

/// z + GN(pointwise_conv(z)).
template <typename T>
ad::Var<T> residual_transform(ad::Var<T> z, ad::Var<T> weight, ad::Var<T> bias, ad::Var<T> gamma,
                              ad::Var<T> beta);

/// x: [N, 1, A, A] -> [N, 1, A, A]. Parameters are recorded as tape leaves.
template <typename T>
ad::Var<T> spatial_block_forward(ad::Var<T> x, SpatialBlockParams<T>& params,
                                 const AxialGraphConfig& cfg);

/// Tape-free evaluation.
template <typename T>
Tensor<T> spatial_block_forward(const Tensor<T>& x, SpatialBlockParams<T>& params,
                                const AxialGraphConfig& cfg);

}  // namespace strnet::spatial

#include "strnet/spatial.hpp"

#include <string>

namespace strnet::spatial {

void AxialGraphConfig::validate(std::size_t extent) const {
  if (strides.empty()) throw Error("spatial: stride list is empty");
  for (auto s : strides)
    if (s == 0 || s >= extent)
      throw Error("spatial: stride " + std::to_string(s) + " must satisfy 0 < s < A = " +
                  std::to_string(extent));
  if (!(temperature > 0)) throw Error("spatial: temperature must be positive");
  if (!(epsilon > 0)) throw Error("spatial: epsilon must be positive");
  if (num_layers == 0) throw Error("spatial: num_layers must be positive");
  if (pos_kernel % 2 == 0) throw Error("spatial: positional kernel extent must be odd");
}

ops::AggregateOptions AxialGraphConfig::aggregate_options() const {
  ops::AggregateOptions o;
  o.strides = strides;
  o.temperature = temperature;
  o.epsilon = epsilon;
  o.mode = max_mode;
  return o;
}

std::size_t expected_parameter_count(const AxialGraphConfig& cfg) {
  return cfg.num_layers * (cfg.pos_kernel * cfg.pos_kernel + 4);
}

template <typename T>
SpatialBlockParams<T> SpatialBlockParams<T>::init(const AxialGraphConfig& cfg, std::mt19937_64& rng) {
  SpatialBlockParams p;
  const std::size_t k = cfg.pos_kernel;
  for (std::size_t l = 0; l < cfg.num_layers; ++l) {
    SpatialLayerParams<T> layer;
    layer.pos_kernel = uniform_fan_in<T>(Shape{1, k, k}, k * k, rng);
    layer.transform_weight = uniform_fan_in<T>(Shape{1, 1}, 1, rng);
    layer.transform_bias = Tensor<T>(Shape{1});
    layer.norm_gamma = Tensor<T>(Shape{1}, T(1));
    layer.norm_beta = Tensor<T>(Shape{1});
    p.layers.push_back(std::move(layer));
  }
  return p;
}

template <typename T>
SpatialBlockParams<T> SpatialBlockParams<T>::identity(const AxialGraphConfig& cfg) {
  SpatialBlockParams p;
  const std::size_t k = cfg.pos_kernel;
  for (std::size_t l = 0; l < cfg.num_layers; ++l) {
    SpatialLayerParams<T> layer;
    layer.pos_kernel = Tensor<T>(Shape{1, k, k});
    layer.transform_weight = Tensor<T>(Shape{1, 1});
    layer.transform_bias = Tensor<T>(Shape{1});
    layer.norm_gamma = Tensor<T>(Shape{1}, T(1));
    layer.norm_beta = Tensor<T>(Shape{1});
    p.layers.push_back(std::move(layer));
  }
  return p;
}

template <typename T>
void SpatialBlockParams<T>::visit(const std::string& prefix, const ParamVisitor<T>& f) {
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const std::string base = prefix + "layer" + std::to_string(l) + ".";
    auto& layer = layers[l];
    f(base + "pos_kernel", layer.pos_kernel);
    f(base + "transform_weight", layer.transform_weight);
    f(base + "transform_bias", layer.transform_bias);
    f(base + "norm_gamma", layer.norm_gamma);
    f(base + "norm_beta", layer.norm_beta);
  }
}

template <typename T>
std::size_t SpatialBlockParams<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers)
    n += l.pos_kernel.size() + l.transform_weight.size() + l.transform_bias.size() +
         l.norm_gamma.size() + l.norm_beta.size();
  return n;
}

template <typename T>
ad::Var<T> positional_encoding(ad::Var<T> x, ad::Var<T> kernel) {
  return ad::add(x, ad::depthwise_conv2d(x, kernel));
}

template <typename T>
ad::Var<T> directional_aggregate(ad::Var<T> x_tilde, const AxialGraphConfig& cfg) {
  return ad::directional_aggregate(x_tilde, cfg.aggregate_options());
}

template <typename T>
ad::Var<T> residual_transform(ad::Var<T> z, ad::Var<T> weight, ad::Var<T> bias, ad::Var<T> gamma,
                              ad::Var<T> beta) {
  auto projected = ad::pointwise_conv(z, weight, bias);
  auto normed = ad::group_norm(projected, 1, gamma, beta, static_cast<T>(kGroupNormEpsilon));
  return ad::add(z, normed);
}

template <typename T>
ad::Var<T> spatial_block_forward(ad::Var<T> x, SpatialBlockParams<T>& params,
                                 const AxialGraphConfig& cfg) {
  const auto& shape = x.shape();
  if (shape.size() != 4 || shape[1] != 1)
    throw ShapeError("spatial_block_forward: expects [N, 1, A, A], got " + to_string(shape));
  if (params.layers.size() != cfg.num_layers)
    throw Error("spatial_block_forward: parameter/config layer count mismatch");
  auto& tape = *x.tape;
  auto h = x;
  for (auto& layer : params.layers) {
    auto kernel = tape.leaf(layer.pos_kernel);
    auto x_tilde = positional_encoding(h, kernel);
    auto delta = directional_aggregate(x_tilde, cfg);
    auto z = ad::add(delta, x_tilde);
    h = residual_transform(z, tape.leaf(layer.transform_weight), tape.leaf(layer.transform_bias),
                           tape.leaf(layer.norm_gamma), tape.leaf(layer.norm_beta));
  }
  return h;
}

template <typename T>
Tensor<T> spatial_block_forward(const Tensor<T>& x, SpatialBlockParams<T>& params,
                                const AxialGraphConfig& cfg) {
  ad::Tape<T> tape;
  return spatial_block_forward(tape.constant(x), params, cfg).value();
}

#define STRNET_INSTANTIATE(T)                                                                   \
  template struct SpatialBlockParams<T>;                                                        \
  template ad::Var<T> positional_encoding(ad::Var<T>, ad::Var<T>);                              \
  template ad::Var<T> directional_aggregate(ad::Var<T>, const AxialGraphConfig&);               \
  template ad::Var<T> residual_transform(ad::Var<T>, ad::Var<T>, ad::Var<T>, ad::Var<T>,        \
                                         ad::Var<T>);                                           \
  template ad::Var<T> spatial_block_forward(ad::Var<T>, SpatialBlockParams<T>&,                 \
                                            const AxialGraphConfig&);                           \
  template Tensor<T> spatial_block_forward(const Tensor<T>&, SpatialBlockParams<T>&,            \
                                           const AxialGraphConfig&);

STRNET_INSTANTIATE(float)
STRNET_INSTANTIATE(double)

#undef STRNET_INSTANTIATE

}  // namespace strnet::spatial

#include "strnet/temporal.hpp"

#include <cmath>
#include <string>

namespace strnet::temporal {

namespace {

constexpr double kCosineEpsilon = 1e-8;

}  // namespace

ops::ShiftGroups channel_partition(std::size_t channels, double rho) {
  if (!(rho > 0.0) || rho > 1.0 / 3.0)
    throw Error("channel_partition: rho must lie in (0, 1/3], got " + std::to_string(rho));
  const auto g = static_cast<std::size_t>(std::floor(rho * static_cast<double>(channels)));
  if (g == 0)
    throw Error("channel_partition: floor(rho * C) is zero for C = " + std::to_string(channels));
  ops::ShiftGroups groups;
  groups.forward = g;
  groups.backward = g;
  groups.bidirectional = g;
  groups.residual = channels - 3 * g;
  return groups;
}

ops::ShiftGroups TemporalShiftConfig::groups() const { return channel_partition(channels, rho); }

void TemporalShiftConfig::validate() const { (void)groups(); }

std::size_t scale_extent(std::size_t extent, std::size_t k) {
  if (k == 0) throw Error("scale_extent: scale index is 1-based");
  const std::size_t div = std::size_t{1} << (k - 1);
  std::size_t a = 4;
  if (extent >= 4 * div) {
    if (extent % div != 0)
      throw Error("scale_extent: A = " + std::to_string(extent) + " is not divisible by " +
                  std::to_string(div));
    a = extent / div;
  }
  if (a % 2 != 0)
    throw Error("scale_extent: a_" + std::to_string(k) + " = " + std::to_string(a) +
                " is odd; the half-extent roll would not be integral");
  if (a > extent) throw Error("scale_extent: A must be at least 4");
  return a;
}

std::vector<std::size_t> MultiResConfig::scale_extents() const {
  std::vector<std::size_t> out;
  for (std::size_t k = 1; k <= num_scales; ++k) out.push_back(scale_extent(extent, k));
  return out;
}

void MultiResConfig::validate() const {
  if (num_scales == 0) throw Error("multires: num_scales must be positive");
  if (extent < 8) throw Error("multires: A must be at least 8");
  (void)scale_extents();
}

TemporalFusionConfig TemporalFusionConfig::for_extent(std::size_t extent, double rho,
                                                      std::size_t num_scales) {
  TemporalFusionConfig cfg;
  cfg.shift.rho = rho;
  cfg.shift.channels = extent * extent;
  cfg.multires.extent = extent;
  cfg.multires.num_scales = num_scales;
  return cfg;
}

void TemporalFusionConfig::validate() const {
  shift.validate();
  multires.validate();
  if (shift.channels != multires.extent * multires.extent)
    throw Error("temporal: channel count must equal A*A");
  if (gn_groups == 0 || shift.channels % gn_groups != 0)
    throw Error("temporal: gn_groups must divide C = " + std::to_string(shift.channels));
  if (out_channels == 0) throw Error("temporal: out_channels must be positive");
}

std::size_t expected_parameter_count(const TemporalFusionConfig& cfg) {
  const std::size_t c = cfg.shift.channels;
  return 3 * c + 2 * c + c * c + c + cfg.multires.num_scales + 2 * cfg.out_channels +
         cfg.out_channels;
}

template <typename T>
TemporalFusionParams<T> TemporalFusionParams<T>::init(const TemporalFusionConfig& cfg,
                                                      std::mt19937_64& rng) {
  const std::size_t c = cfg.shift.channels;
  TemporalFusionParams p;
  p.dw_kernel = uniform_fan_in<T>(Shape{c, 3, 1}, 3, rng);
  p.gn_gamma = Tensor<T>(Shape{c}, T(1));
  p.gn_beta = Tensor<T>(Shape{c});
  p.pw_weight = uniform_fan_in<T>(Shape{c, c}, c, rng);
  p.pw_bias = Tensor<T>(Shape{c});
  p.betas = Tensor<T>(Shape{cfg.multires.num_scales}, T(1));
  p.fusion_weight = uniform_fan_in<T>(Shape{cfg.out_channels, 2}, 2, rng);
  p.fusion_bias = Tensor<T>(Shape{cfg.out_channels});
  return p;
}

template <typename T>
void TemporalFusionParams<T>::visit(const std::string& prefix, const ParamVisitor<T>& f) {
  f(prefix + "dw_kernel", dw_kernel);
  f(prefix + "gn_gamma", gn_gamma);
  f(prefix + "gn_beta", gn_beta);
  f(prefix + "pw_weight", pw_weight);
  f(prefix + "pw_bias", pw_bias);
  f(prefix + "betas", betas);
  f(prefix + "fusion_weight", fusion_weight);
  f(prefix + "fusion_bias", fusion_bias);
}

template <typename T>
std::size_t TemporalFusionParams<T>::parameter_count() const {
  return dw_kernel.size() + gn_gamma.size() + gn_beta.size() + pw_weight.size() + pw_bias.size() +
         betas.size() + fusion_weight.size() + fusion_bias.size();
}

template <typename T>
ad::Var<T> hybrid_temporal_shift(ad::Var<T> x_bar, const TemporalShiftConfig& cfg) {
  const auto& s = x_bar.shape();
  if (s.size() != 3 || s[2] != cfg.channels)
    throw ShapeError("hybrid_temporal_shift: expects [B, T, " + std::to_string(cfg.channels) +
                     "], got " + to_string(s));
  return ad::hybrid_temporal_shift(x_bar, cfg.groups());
}

template <typename T>
ad::Var<T> tsm_fuse(ad::Var<T> x_bar, ad::Var<T> x_shift, ad::Var<T> dw_kernel, ad::Var<T> gn_gamma,
                    ad::Var<T> gn_beta, ad::Var<T> pw_weight, ad::Var<T> pw_bias,
                    const TemporalFusionConfig& cfg) {
  const Shape s = x_bar.shape();
  if (s.size() != 3 || x_shift.shape() != s)
    throw ShapeError("tsm_fuse: x_bar and x_shift must share shape [B, T, C]");
  const std::size_t b = s[0], t = s[1], c = s[2];
  const std::size_t a = cfg.multires.extent;
  if (c != a * a) throw ShapeError("tsm_fuse: channel count does not match A*A");

  // [B, T, C] -> [B, C, T, 1] so the temporal taps run along the third axis.
  auto h = ad::reshape(ad::transpose(x_shift, {0, 2, 1}), Shape{b, c, t, 1});
  h = ad::depthwise_conv2d(h, dw_kernel);
  h = ad::group_norm(h, cfg.gn_groups, gn_gamma, gn_beta, static_cast<T>(kGroupNormEpsilon));
  h = ad::gelu(h);
  h = ad::pointwise_conv(h, pw_weight, pw_bias);
  h = ad::transpose(ad::reshape(h, Shape{b, c, t}), {0, 2, 1});
  return ad::reshape(ad::add(x_bar, h), Shape{b, 1, t, a, a});
}

template <typename T>
MultiResTerm<T> multires_residual(ad::Var<T> x_tsm, std::size_t k, const MultiResConfig& cfg) {
  if (k == 0 || k > cfg.num_scales)
    throw Error("multires_residual: scale index " + std::to_string(k) + " outside [1, " +
                std::to_string(cfg.num_scales) + "]");
  const auto& s = x_tsm.shape();
  if (s.size() != 5 || s[3] != cfg.extent || s[4] != cfg.extent)
    throw ShapeError("multires_residual: expects [B, 1, T, A, A], got " + to_string(s));
  const std::size_t a_k = scale_extent(cfg.extent, k);
  const auto half = static_cast<std::int64_t>(a_k / 2);
  auto pooled = ad::adaptive_avg_pool2d(x_tsm, a_k, a_k);
  auto rolled = ad::circular_roll(ad::circular_roll(pooled, 3, half), 4, half);
  auto rearranged = ad::upsample_nearest(rolled, cfg.extent, cfg.extent);
  return {rearranged, ad::sub(rearranged, x_tsm)};
}

template <typename T>
CosineMaskResult<T> cosine_mask(const Tensor<T>& x_tilde_k, const Tensor<T>& x_tsm, CosineMode mode) {
  const Shape& s = x_tsm.shape();
  if (s.size() != 5 || x_tilde_k.shape() != s)
    throw ShapeError("cosine_mask: expects matching [B, C, T, A, A] tensors");
  const std::size_t b = s[0], c = s[1], t = s[2], h = s[3], w = s[4];
  const T eps = static_cast<T>(kCosineEpsilon);

  CosineMaskResult<T> r;
  if (mode == CosineMode::channel) {
    r.similarity = ops::cosine_similarity(x_tilde_k, x_tsm, 1, eps);  // [B, T, A, A]
  } else {
    // Frame vectors: [B, T, C*A*A] after moving channels next to the pixels.
    auto flat = [&](const Tensor<T>& x) {
      return ops::transpose(x, {0, 2, 1, 3, 4}).reshaped(Shape{b, t, c * h * w});
    };
    r.similarity = ops::cosine_similarity(flat(x_tilde_k), flat(x_tsm), 2, eps);  // [B, T]
  }

  const std::size_t per_sample = r.similarity.size() / b;
  const std::size_t per_frame = per_sample / t;  // A*A in channel mode, 1 in frame mode
  r.mask = Tensor<T>(s);
  r.mean.assign(b, T(0));
  for (std::size_t n = 0; n < b; ++n) {
    const T* sim = r.similarity.ptr() + n * per_sample;
    double acc = 0;
    for (std::size_t i = 0; i < per_sample; ++i) acc += static_cast<double>(sim[i]);
    const T mean = static_cast<T>(acc / static_cast<double>(per_sample));
    r.mean[n] = mean;
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t ti = 0; ti < t; ++ti)
        for (std::size_t p = 0; p < h * w; ++p) {
          const T sigma = per_frame == 1 ? sim[ti] : sim[ti * per_frame + p];
          r.mask[(((n * c + ch) * t + ti) * h * w) + p] = sigma > mean ? T(1) : T(0);
        }
  }
  return r;
}

template <typename T>
ad::Var<T> contrast_aggregate(const std::vector<ad::Var<T>>& deltas,
                              const std::vector<Tensor<T>>& masks, ad::Var<T> betas) {
  if (deltas.empty() || deltas.size() != masks.size() || betas.value().size() != deltas.size())
    throw Error("contrast_aggregate: need equal numbers of deltas, masks and betas");
  ad::Var<T> total = ad::scale_by_element(ad::mul_const(deltas[0], masks[0]), betas, 0);
  for (std::size_t k = 1; k < deltas.size(); ++k)
    total = ad::add(total, ad::scale_by_element(ad::mul_const(deltas[k], masks[k]), betas, k));
  return total;
}

template <typename T>
ad::Var<T> contrast_aware_fusion(ad::Var<T> x_tsm, ad::Var<T> x_diff, ad::Var<T> weight,
                                 ad::Var<T> bias) {
  if (x_tsm.shape() != x_diff.shape())
    throw ShapeError("contrast_aware_fusion: operand shapes differ");
  return ad::pointwise_conv(ad::concat<T>({x_tsm, x_diff}, 1), weight, bias);
}

template <typename T>
ad::Var<T> temporal_block_forward(ad::Var<T> stacked, TemporalFusionParams<T>& params,
                                  const TemporalFusionConfig& cfg) {
  const Shape s = stacked.shape();
  const std::size_t a = cfg.multires.extent;
  if (s.size() != 5 || s[2] != 1 || s[3] != a || s[4] != a)
    throw ShapeError("temporal_block_forward: expects [B, T, 1, A, A], got " + to_string(s));
  if (s[1] < 2) throw Error("temporal_block_forward: needs at least two frames");
  auto& tape = *stacked.tape;

  auto x_bar = ad::reshape(stacked, Shape{s[0], s[1], a * a});
  auto x_shift = hybrid_temporal_shift(x_bar, cfg.shift);
  auto x_tsm = tsm_fuse(x_bar, x_shift, tape.leaf(params.dw_kernel), tape.leaf(params.gn_gamma),
                        tape.leaf(params.gn_beta), tape.leaf(params.pw_weight),
                        tape.leaf(params.pw_bias), cfg);

  std::vector<ad::Var<T>> deltas;
  std::vector<Tensor<T>> masks;
  for (std::size_t k = 1; k <= cfg.multires.num_scales; ++k) {
    auto term = multires_residual(x_tsm, k, cfg.multires);
    masks.push_back(cosine_mask(term.rearranged.value(), x_tsm.value(), cfg.cosine_mode).mask);
    deltas.push_back(term.delta);
  }
  auto x_diff = contrast_aggregate(deltas, masks, tape.leaf(params.betas));
  return contrast_aware_fusion(x_tsm, x_diff, tape.leaf(params.fusion_weight),
                               tape.leaf(params.fusion_bias));
}

template <typename T>
Tensor<T> temporal_block_forward(const Tensor<T>& stacked, TemporalFusionParams<T>& params,
                                 const TemporalFusionConfig& cfg) {
  ad::Tape<T> tape;
  return temporal_block_forward(tape.constant(stacked), params, cfg).value();
}

#define STRNET_INSTANTIATE(T)                                                                     \
  template struct TemporalFusionParams<T>;                                                        \
  template ad::Var<T> hybrid_temporal_shift(ad::Var<T>, const TemporalShiftConfig&);              \
  template ad::Var<T> tsm_fuse(ad::Var<T>, ad::Var<T>, ad::Var<T>, ad::Var<T>, ad::Var<T>,        \
                               ad::Var<T>, ad::Var<T>, const TemporalFusionConfig&);              \
  template MultiResTerm<T> multires_residual(ad::Var<T>, std::size_t, const MultiResConfig&);     \
  template CosineMaskResult<T> cosine_mask(const Tensor<T>&, const Tensor<T>&, CosineMode);       \
  template ad::Var<T> contrast_aggregate(const std::vector<ad::Var<T>>&,                          \
                                         const std::vector<Tensor<T>>&, ad::Var<T>);              \
  template ad::Var<T> contrast_aware_fusion(ad::Var<T>, ad::Var<T>, ad::Var<T>, ad::Var<T>);      \
  template ad::Var<T> temporal_block_forward(ad::Var<T>, TemporalFusionParams<T>&,                \
                                             const TemporalFusionConfig&);                        \
  template Tensor<T> temporal_block_forward(const Tensor<T>&, TemporalFusionParams<T>&,           \
                                            const TemporalFusionConfig&);

STRNET_INSTANTIATE(float)
STRNET_INSTANTIATE(double)

#undef STRNET_INSTANTIATE

}  // namespace strnet::temporal

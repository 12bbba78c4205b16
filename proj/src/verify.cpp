#include "strnet/verify.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <queue>
#include <random>
#include <set>
#include <sstream>

#include "strnet/autodiff.hpp"
#include "strnet/config.hpp"
#include "strnet/gradcheck.hpp"
#include "strnet/heads.hpp"
#include "strnet/kernels.hpp"
#include "strnet/model.hpp"
#include "strnet/naive.hpp"
#include "strnet/navsim.hpp"
#include "strnet/spatial.hpp"
#include "strnet/temporal.hpp"

namespace strnet::verify {

namespace {

using T64 = Tensor<double>;
constexpr double kTol64 = 1e-12;
constexpr double kTol32 = 1e-5;
constexpr double kGradTol = 1e-4;
constexpr int kKinkProbes = 2;
// Smallest per-sample spread accepted at a single-channel GroupNorm input.
constexpr double kNormSpread = 0.02;

template <typename T>
Tensor<T> random_tensor(const Shape& shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Tensor<T> t(shape);
  for (auto& v : t.data()) v = static_cast<T>(dist(rng));
  return t;
}

std::size_t pick(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

template <typename T>
T64 widen(const Tensor<T>& t) {
  return t.template cast<double>();
}

template <typename T>
double max_diff(const Tensor<T>& a, const T64& b) {
  if (a.shape() != b.shape()) return std::numeric_limits<double>::infinity();
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = std::abs(static_cast<double>(a[i]) - b[i]);
    if (!(d <= m)) m = std::isnan(d) ? std::numeric_limits<double>::infinity() : d;
  }
  return m;
}

double max_abs(const T64& a) {
  double m = 0;
  for (double v : a.data()) m = std::max(m, std::abs(v));
  return m;
}

CheckResult make(std::string group, std::string name, double tol, double measured,
                 std::vector<std::string> ops, std::string detail = {}) {
  CheckResult r;
  r.group = std::move(group);
  r.name = std::move(name);
  r.tolerance = tol;
  r.measured = measured;
  r.passed = measured <= tol;
  r.ops = std::move(ops);
  r.detail = std::move(detail);
  return r;
}

CheckResult boolean(std::string group, std::string name, bool ok, std::vector<std::string> ops,
                    std::string detail = {}) {
  return make(std::move(group), std::move(name), 0, ok ? 0.0 : 1.0, std::move(ops), std::move(detail));
}

// Runs `body` in f64 and f32 on identical random draws for every instance and
// records the worst deviation from its oracle in each precision.
template <typename Body>
void oracle_pair(std::vector<CheckResult>& out, const std::string& name, std::vector<std::string> ops,
                 std::size_t instances, std::uint64_t salt, Body body) {
  double worst64 = 0, worst32 = 0;
  for (std::size_t i = 0; i < instances; ++i) {
    const std::uint64_t seed = salt * 7919 + i;
    {
      std::mt19937_64 rng(seed);
      worst64 = std::max(worst64, body(double{}, rng));
    }
    {
      std::mt19937_64 rng(seed);
      worst32 = std::max(worst32, body(float{}, rng));
    }
  }
  const std::string n = std::to_string(instances) + " instances";
  out.push_back(make("oracle", name + "/f64", kTol64, worst64, ops, n));
  out.push_back(make("oracle", name + "/f32", kTol32, worst32, ops, n));
}

// ---------------------------------------------------------------------------
// Fault injection: an identity node whose backward scales the adjoint.

template <typename T>
ad::Var<T> fault_point(ad::Var<T> v, const std::string& op, const SuiteOptions& opts) {
  if (opts.inject_fault != op) return v;
  auto& tape = *v.tape;
  return tape.record(v.value(), {v}, [v](ad::Tape<T>& t, std::size_t node) {
    Tensor<T> g = t.adjoint(node);
    for (auto& x : g.data()) x = static_cast<T>(x * T(1.5));
    t.accumulate(v, g);
  });
}

// The spatial block is not differentiable where an axial residual is zero (|r|
// in the contrast weight) or the per-axis max is tied. `pattern` records the
// side of every such point; `spread` is the smallest per-sample spread at a
// GroupNorm input, whose curvature grows like 1/spread^3.
struct KinkState {
  std::vector<signed char> pattern;
  double spread = std::numeric_limits<double>::infinity();
};

signed char side(double v) { return static_cast<signed char>((v > 0) - (v < 0)); }

KinkState spatial_kink_state(const T64& x, spatial::SpatialBlockParams<double>& params,
                             const spatial::AxialGraphConfig& cfg) {
  KinkState st;
  T64 h = x;
  for (auto& layer : params.layers) {
    T64 xt = ops::depthwise_conv2d(h, layer.pos_kernel);
    for (std::size_t i = 0; i < xt.size(); ++i) xt[i] += h[i];
    std::vector<T64> delta;
    for (auto axis : {ops::Axis::height, ops::Axis::width}) {
      T64 num(xt.shape()), den(xt.shape());
      for (auto s : cfg.strides) {
        if (s >= xt.shape()[axis == ops::Axis::height ? 2 : 3]) continue;
        const auto ac = ops::axial_contrast_weights(xt, s, axis, cfg.temperature);
        for (std::size_t i = 0; i < xt.size(); ++i) {
          st.pattern.push_back(side(ac.residual[i]));
          num[i] += ac.weight[i] * ac.residual[i];
          den[i] += ac.weight[i];
        }
      }
      for (std::size_t i = 0; i < num.size(); ++i) num[i] /= den[i] + cfg.epsilon;
      delta.push_back(std::move(num));
    }
    for (std::size_t i = 0; i < xt.size(); ++i) {
      st.pattern.push_back(side(delta[0][i] - delta[1][i]));
      if (cfg.max_mode == ops::MaxMode::magnitude)
        st.pattern.push_back(side(std::abs(delta[0][i]) - std::abs(delta[1][i])));
    }
    T64 z = ops::directional_aggregate(xt, cfg.aggregate_options());
    for (std::size_t i = 0; i < z.size(); ++i) z[i] += xt[i];
    const auto projected = ops::pointwise_conv(z, layer.transform_weight, layer.transform_bias);
    const std::size_t per = projected.size() / projected.shape()[0];
    for (std::size_t n = 0; n < projected.shape()[0]; ++n) {
      double mean = 0, sq = 0;
      for (std::size_t j = 0; j < per; ++j) mean += projected[n * per + j];
      mean /= static_cast<double>(per);
      for (std::size_t j = 0; j < per; ++j) sq += (projected[n * per + j] - mean) * (projected[n * per + j] - mean);
      st.spread = std::min(st.spread, std::sqrt(sq / static_cast<double>(per)));
    }
    spatial::SpatialBlockParams<double> one;
    one.layers = {layer};
    auto single = cfg;
    single.num_layers = 1;
    h = spatial::spatial_block_forward(h, one, single);
  }
  return st;
}

// True when the GroupNorm inputs are not nearly constant and no kink lies
// within one finite-difference step: the kink pattern must survive random
// +-step perturbations of every input and parameter at once, which moves each
// residual at least as far as any single-coordinate step does (up to chance).
bool spatial_well_conditioned(const T64& x, const spatial::SpatialBlockParams<double>& params,
                              const spatial::AxialGraphConfig& cfg, double step, std::mt19937_64& rng) {
  auto base_params = params;
  const auto base = spatial_kink_state(x, base_params, cfg);
  if (base.spread < kNormSpread) return false;
  std::bernoulli_distribution coin(0.5);
  auto nudge = [&](T64& t, const std::vector<double>& dir, std::size_t& k, double sign) {
    for (auto& v : t.data()) v += sign * dir[k++] * step * std::max(1.0, std::abs(v));
  };
  for (int probe = 0; probe < kKinkProbes; ++probe) {
    std::vector<double> dir;
    auto draw = [&](const T64& t) { for (std::size_t i = 0; i < t.size(); ++i) dir.push_back(coin(rng) ? 1.0 : -1.0); };
    draw(x);
    base_params.visit("", [&](const std::string&, T64& p) { draw(p); });
    for (double sign : {1.0, -1.0}) {
      std::size_t k = 0;
      T64 xp = x;
      auto pp = params;
      nudge(xp, dir, k, sign);
      pp.visit("", [&](const std::string&, T64& p) { nudge(p, dir, k, sign); });
      if (spatial_kink_state(xp, pp, cfg).pattern != base.pattern) return false;
    }
  }
  return true;
}

std::vector<CheckInput<double>> named(const std::vector<std::pair<std::string, T64*>>& list) {
  std::vector<CheckInput<double>> out;
  for (const auto& [n, t] : list) out.push_back({n, t});
  return out;
}

}  // namespace

const std::vector<std::string>& required_ops() {
  static const std::vector<std::string> ops{
      // tensor core
      "circular_roll", "adaptive_avg_pool2d", "upsample_nearest", "pointwise_conv", "depthwise_conv",
      "group_norm", "gelu", "cosine_similarity", "backward", "finite_diff_check",
      // spatial aggregation
      "axial_contrast_weights", "positional_encoding", "directional_aggregate", "spatial_block_forward",
      // temporal fusion
      "channel_partition", "hybrid_temporal_shift", "tsm_fuse", "multires_residual", "cosine_mask",
      "contrast_aggregate", "contrast_aware_fusion", "temporal_block_forward",
      // heads
      "encode_sequence", "build_context", "noise_actions", "denoise_predict", "sample_actions",
      "diffusion_loss", "distance_predict", "distance_loss", "total_loss",
      // navsim
      "generate_world", "expert_action", "render_observation", "rollout_policy", "compute_metrics",
      "generate_dataset",
      // config
      "parse_config"};
  return ops;
}

const std::vector<std::string>& fault_targets() {
  static const std::vector<std::string> ops{
      "add", "sub", "mul", "div", "scale", "add_scalar", "scale_by_element", "mul_const", "square",
      "abs", "exp", "gelu", "softplus", "maximum", "sum", "mean", "mean_axis", "reshape", "transpose",
      "concat", "slice", "circular_roll", "adaptive_avg_pool2d", "upsample_nearest", "pointwise_conv",
      "linear", "depthwise_conv2d", "conv2d", "group_norm", "cosine_similarity",
      "directional_aggregate", "hybrid_temporal_shift", "masked_mse"};
  return ops;
}

// ---------------------------------------------------------------------------
// Oracle equivalence

std::vector<CheckResult> oracle_checks(const SuiteOptions& opts) {
  std::vector<CheckResult> out;
  const std::size_t n = opts.oracle_instances;

  oracle_pair(out, "circular_roll", {"circular_roll"}, n, 1, [](auto tag, std::mt19937_64& rng) {
    using T = decltype(tag);
    Shape s;
    const std::size_t rank = pick(rng, 1, 4);
    for (std::size_t k = 0; k < rank; ++k) s.push_back(pick(rng, 1, 6));
    const auto x = random_tensor<T>(s, rng);
    const std::size_t axis = pick(rng, 0, rank - 1);
    const auto shift = static_cast<std::int64_t>(pick(rng, 0, 14)) - 7;
    return max_diff(ops::circular_roll(x, axis, shift), naive::roll(widen(x), axis, shift));
  });

  oracle_pair(out, "adaptive_avg_pool2d", {"adaptive_avg_pool2d"}, n, 2, [](auto tag, std::mt19937_64& rng) {
    using T = decltype(tag);
    const std::size_t h = pick(rng, 1, 9), w = pick(rng, 1, 9);
    const auto x = random_tensor<T>(Shape{2, pick(rng, 1, 3), h, w}, rng);
    const std::size_t oh = pick(rng, 1, h), ow = pick(rng, 1, w);
    return max_diff(ops::adaptive_avg_pool2d(x, oh, ow), naive::pool(widen(x), oh, ow));
  });

  oracle_pair(out, "upsample_nearest", {"upsample_nearest"}, n, 3, [](auto tag, std::mt19937_64& rng) {
    using T = decltype(tag);
    const std::size_t h = pick(rng, 1, 5), w = pick(rng, 1, 5);
    const auto x = random_tensor<T>(Shape{pick(rng, 1, 2), pick(rng, 1, 3), h, w}, rng);
    const std::size_t oh = pick(rng, h, 3 * h), ow = pick(rng, w, 3 * w);
    return max_diff(ops::upsample_nearest(x, oh, ow), naive::upsample(widen(x), oh, ow));
  });

  oracle_pair(out, "pointwise_conv", {"pointwise_conv"}, n, 4, [](auto tag, std::mt19937_64& rng) {
    using T = decltype(tag);
    const std::size_t cin = pick(rng, 1, 6), cout = pick(rng, 1, 6);
    const auto x = random_tensor<T>(Shape{pick(rng, 1, 3), cin, pick(rng, 1, 5), pick(rng, 1, 5)}, rng);
    const auto w = random_tensor<T>(Shape{cout, cin}, rng);
    const auto b = random_tensor<T>(Shape{cout}, rng);
    return max_diff(ops::pointwise_conv(x, w, b), naive::pointwise(widen(x), widen(w), widen(b)));
  });

  oracle_pair(out, "depthwise_conv", {"depthwise_conv"}, n, 5, [](auto tag, std::mt19937_64& rng) {
    using T = decltype(tag);
    const std::size_t c = pick(rng, 1, 4);
    const auto x = random_tensor<T>(Shape{pick(rng, 1, 2), c, pick(rng, 1, 8), pick(rng, 1, 8)}, rng);
    const auto k = random_tensor<T>(Shape{c, 2 * pick(rng, 0, 2) + 1, 2 * pick(rng, 0, 2) + 1}, rng);
    return max_diff(ops::depthwise_conv2d(x, k), naive::depthwise(widen(x), widen(k)));
  });

  oracle_pair(out, "conv2d", {"conv2d"}, n, 6, [](auto tag, std::mt19937_64& rng) {
    using T = decltype(tag);
    const std::size_t cin = pick(rng, 1, 3), cout = pick(rng, 1, 3);
    const auto x = random_tensor<T>(Shape{pick(rng, 1, 2), cin, pick(rng, 3, 9), pick(rng, 3, 9)}, rng);
    const auto w = random_tensor<T>(Shape{cout, cin, 3, 3}, rng);
    const auto b = random_tensor<T>(Shape{cout}, rng);
    const std::size_t stride = pick(rng, 1, 2), pad = pick(rng, 0, 1);
    return max_diff(ops::conv2d(x, w, b, {stride, pad}),
                    naive::conv2d(widen(x), widen(w), widen(b), stride, pad));
  });

  oracle_pair(out, "group_norm", {"group_norm"}, n, 7, [](auto tag, std::mt19937_64& rng) {
    using T = decltype(tag);
    const std::size_t groups = pick(rng, 1, 4), per = pick(rng, 1, 3);
    const std::size_t c = groups * per;
    const auto x = random_tensor<T>(Shape{pick(rng, 1, 3), c, pick(rng, 1, 4), pick(rng, 1, 4)}, rng, -2, 2);
    const auto g = random_tensor<T>(Shape{c}, rng, 0.5, 1.5);
    const auto b = random_tensor<T>(Shape{c}, rng);
    const auto r = ops::group_norm(x, groups, g, b, static_cast<T>(kGroupNormEpsilon));
    return max_diff(r.out, naive::group_norm(widen(x), groups, widen(g), widen(b),
                                             static_cast<double>(static_cast<T>(kGroupNormEpsilon))));
  });

  oracle_pair(out, "gelu", {"gelu"}, n, 8, [](auto tag, std::mt19937_64& rng) {
    using T = decltype(tag);
    const auto x = random_tensor<T>(Shape{pick(rng, 1, 40)}, rng, -5, 5);
    T64 ref(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) ref[i] = naive::gelu(static_cast<double>(x[i]));
    return max_diff(ops::gelu(x), ref);
  });

  oracle_pair(out, "cosine_similarity", {"cosine_similarity"}, n, 9, [](auto tag, std::mt19937_64& rng) {
    using T = decltype(tag);
    const std::size_t c = pick(rng, 1, 6), p = pick(rng, 1, 6);
    const auto a = random_tensor<T>(Shape{c, p}, rng);
    const auto b = random_tensor<T>(Shape{c, p}, rng);
    T64 ref(Shape{p});
    for (std::size_t j = 0; j < p; ++j) {
      double dot = 0, na = 0, nb = 0;
      for (std::size_t i = 0; i < c; ++i) {
        const double u = a[i * p + j], v = b[i * p + j];
        dot += u * v;
        na += u * u;
        nb += v * v;
      }
      ref[j] = dot / (std::sqrt(na) * std::sqrt(nb));
    }
    return max_diff(ops::cosine_similarity(a, b, 0, static_cast<T>(1e-8)), ref);
  });

  oracle_pair(out, "axial_contrast_weights", {"axial_contrast_weights"}, n, 10,
              [](auto tag, std::mt19937_64& rng) {
                using T = decltype(tag);
                const std::size_t h = pick(rng, 2, 8), w = pick(rng, 2, 8);
                const auto x = random_tensor<T>(Shape{pick(rng, 1, 2), pick(rng, 1, 2), h, w}, rng, 0, 0.5);
                const bool height = pick(rng, 0, 1) == 0;
                const std::size_t s = pick(rng, 1, (height ? h : w) - 1);
                const auto r = ops::axial_contrast_weights(x, s, height ? ops::Axis::height : ops::Axis::width,
                                                           static_cast<T>(0.1));
                const auto ref = naive::axial(widen(x), s, height, static_cast<double>(static_cast<T>(0.1)));
                return std::max(max_diff(r.residual, ref.residual), max_diff(r.weight, ref.weight));
              });

  oracle_pair(out, "directional_aggregate", {"directional_aggregate"}, n, 11,
              [](auto tag, std::mt19937_64& rng) {
                using T = decltype(tag);
                // Alternate the 5x7 and 8x8 shapes; values scaled so weights stay well above eps.
                const bool small = pick(rng, 0, 1) == 0;
                const std::size_t h = small ? 5 : 8, w = small ? 7 : 8;
                const auto x = random_tensor<T>(Shape{2, 1, h, w}, rng, 0, 0.3);
                ops::AggregateOptions o;
                std::set<std::size_t> strides;
                const std::size_t count = pick(rng, 1, 3);
                while (strides.size() < count) strides.insert(pick(rng, 1, std::min(h, w) - 1));
                o.strides.assign(strides.rbegin(), strides.rend());
                o.mode = pick(rng, 0, 1) ? ops::MaxMode::magnitude : ops::MaxMode::signed_max;
                return max_diff(ops::directional_aggregate(x, o),
                                naive::aggregate(widen(x), o.strides, static_cast<double>(static_cast<T>(o.temperature)),
                                                 static_cast<double>(static_cast<T>(o.epsilon)),
                                                 o.mode == ops::MaxMode::magnitude));
              });

  oracle_pair(out, "hybrid_temporal_shift", {"hybrid_temporal_shift", "channel_partition"}, n, 12,
              [](auto tag, std::mt19937_64& rng) {
                using T = decltype(tag);
                const std::size_t c = pick(rng, 8, 40), t = pick(rng, 2, 6);
                const double rhos[] = {0.125, 0.25, 1.0 / 3.0};
                const auto g = temporal::channel_partition(c, rhos[pick(rng, 0, 2)]);
                const auto x = random_tensor<T>(Shape{pick(rng, 1, 3), t, c}, rng);
                return max_diff(ops::hybrid_temporal_shift(x, g),
                                naive::hybrid_shift(widen(x), g.forward, g.backward, g.bidirectional));
              });

  oracle_pair(out, "multires_residual", {"multires_residual"}, n, 13, [](auto tag, std::mt19937_64& rng) {
    using T = decltype(tag);
    const std::size_t a = pick(rng, 0, 1) ? 8 : 16;
    temporal::MultiResConfig cfg{3, a};
    auto x = random_tensor<T>(Shape{2, 1, pick(rng, 2, 4), a, a}, rng);
    ad::Tape<T> tape;
    auto v = tape.constant(x);
    double worst = 0;
    for (std::size_t k = 1; k <= cfg.num_scales; ++k) {
      const auto term = temporal::multires_residual(v, k, cfg);
      auto ref = naive::rearrange(widen(x), temporal::scale_extent(a, k));
      worst = std::max(worst, max_diff(term.rearranged.value(), ref));
      for (std::size_t i = 0; i < ref.size(); ++i) ref[i] -= static_cast<double>(x[i]);
      worst = std::max(worst, max_diff(term.delta.value(), ref));
    }
    return worst;
  });

  oracle_pair(out, "cosine_mask", {"cosine_mask"}, n, 14, [](auto tag, std::mt19937_64& rng) {
    using T = decltype(tag);
    const std::size_t a = 4 * pick(rng, 1, 2);
    const Shape s{pick(rng, 1, 3), 1, pick(rng, 2, 4), a, a};
    const auto xk = random_tensor<T>(s, rng);
    const auto xt = random_tensor<T>(s, rng);
    const bool frame = pick(rng, 0, 1) == 1;
    const auto r = temporal::cosine_mask(xk, xt, frame ? temporal::CosineMode::frame : temporal::CosineMode::channel);
    return max_diff(r.mask, naive::cosine_mask(widen(xk), widen(xt), frame));
  });

  oracle_pair(out, "contrast_aggregate", {"contrast_aggregate"}, n, 15, [](auto tag, std::mt19937_64& rng) {
    using T = decltype(tag);
    const Shape s{2, 1, 3, 8, 8};
    ad::Tape<T> tape;
    std::vector<ad::Var<T>> deltas;
    std::vector<Tensor<T>> masks;
    std::vector<T64> deltas64, masks64;
    auto betas = random_tensor<T>(Shape{3}, rng, -2, 2);
    std::bernoulli_distribution coin(0.5);
    for (int k = 0; k < 3; ++k) {
      auto d = random_tensor<T>(s, rng);
      Tensor<T> m(s);
      for (auto& v : m.data()) v = coin(rng) ? T(1) : T(0);
      deltas64.push_back(widen(d));
      masks64.push_back(widen(m));
      deltas.push_back(tape.constant(d));
      masks.push_back(m);
    }
    const auto got = temporal::contrast_aggregate(deltas, masks, tape.constant(betas));
    std::vector<double> b64(betas.data().begin(), betas.data().end());
    return max_diff(got.value(), naive::contrast_aggregate(deltas64, masks64, b64));
  });

  oracle_pair(out, "contrast_aware_fusion", {"contrast_aware_fusion"}, n, 16, [](auto tag, std::mt19937_64& rng) {
    using T = decltype(tag);
    const Shape s{pick(rng, 1, 3), 1, 3, 8, 8};
    const std::size_t cout = pick(rng, 1, 3);
    auto xt = random_tensor<T>(s, rng);
    auto xd = random_tensor<T>(s, rng);
    auto w = random_tensor<T>(Shape{cout, 2}, rng);
    auto b = random_tensor<T>(Shape{cout}, rng);
    ad::Tape<T> tape;
    const auto got = temporal::contrast_aware_fusion(tape.constant(xt), tape.constant(xd), tape.constant(w),
                                                     tape.constant(b));
    return max_diff(got.value(), naive::fusion(widen(xt), widen(xd), widen(w), widen(b)));
  });

  oracle_pair(out, "positional_encoding", {"positional_encoding"}, n, 17, [](auto tag, std::mt19937_64& rng) {
    using T = decltype(tag);
    auto x = random_tensor<T>(Shape{pick(rng, 1, 3), 1, pick(rng, 3, 8), pick(rng, 3, 8)}, rng);
    auto k = random_tensor<T>(Shape{1, 3, 3}, rng);
    ad::Tape<T> tape;
    const auto got = spatial::positional_encoding(tape.constant(x), tape.constant(k));
    auto ref = naive::depthwise(widen(x), widen(k));
    for (std::size_t i = 0; i < ref.size(); ++i) ref[i] += static_cast<double>(x[i]);
    return max_diff(got.value(), ref);
  });

  oracle_pair(out, "tsm_fuse", {"tsm_fuse"}, n, 18, [](auto tag, std::mt19937_64& rng) {
    using T = decltype(tag);
    const std::size_t a = 8, c = a * a, t = pick(rng, 2, 4), b = pick(rng, 1, 2);
    auto cfg = temporal::TemporalFusionConfig::for_extent(a, 0.125, 3);
    auto xbar = random_tensor<T>(Shape{b, t, c}, rng);
    auto xsh = random_tensor<T>(Shape{b, t, c}, rng);
    auto dw = random_tensor<T>(Shape{c, 3, 1}, rng);
    auto gg = random_tensor<T>(Shape{c}, rng, 0.5, 1.5);
    auto gb = random_tensor<T>(Shape{c}, rng);
    auto pw = random_tensor<T>(Shape{c, c}, rng, -0.2, 0.2);
    auto pb = random_tensor<T>(Shape{c}, rng);
    ad::Tape<T> tape;
    const auto got = temporal::tsm_fuse(tape.constant(xbar), tape.constant(xsh), tape.constant(dw),
                                        tape.constant(gg), tape.constant(gb), tape.constant(pw),
                                        tape.constant(pb), cfg);
    // [B, T, C] -> [B, C, T, 1], conv along T, norm, GELU, pointwise, back to [B, T, C].
    const T64 xs = widen(xsh);
    T64 tc(Shape{b, c, t, 1});
    for (std::size_t i = 0; i < b; ++i)
      for (std::size_t s = 0; s < t; ++s)
        for (std::size_t ch = 0; ch < c; ++ch) tc.at({i, ch, s, 0}) = xs.at({i, s, ch});
    auto h = naive::group_norm(naive::depthwise(tc, widen(dw)), cfg.gn_groups, widen(gg), widen(gb),
                               static_cast<double>(static_cast<T>(kGroupNormEpsilon)));
    for (auto& v : h.data()) v = naive::gelu(v);
    h = naive::pointwise(h, widen(pw), widen(pb));
    T64 ref(Shape{b, 1, t, a, a});
    for (std::size_t i = 0; i < b; ++i)
      for (std::size_t s = 0; s < t; ++s)
        for (std::size_t ch = 0; ch < c; ++ch)
          ref[(i * t + s) * c + ch] = static_cast<double>(xbar.at({i, s, ch})) + h.at({i, ch, s, 0});
    return max_diff(got.value(), ref);
  });

  return out;
}

// ---------------------------------------------------------------------------
// Identity and degenerate cases

std::vector<CheckResult> identity_checks(const SuiteOptions& opts) {
  std::vector<CheckResult> out;
  std::mt19937_64 rng(opts.seeds.empty() ? 1 : opts.seeds.front());

  {  // Time-constant sequences are fixed points of the shift.
    double worst = 0;
    for (std::size_t i = 0; i < opts.oracle_instances; ++i) {
      const std::size_t b = 2, t = pick(rng, 2, 6), c = 64;
      auto frame = random_tensor<float>(Shape{b, 1, c}, rng);
      Tensor<float> x(Shape{b, t, c});
      for (std::size_t n = 0; n < b; ++n)
        for (std::size_t s = 0; s < t; ++s)
          for (std::size_t ch = 0; ch < c; ++ch) x.at({n, s, ch}) = frame.at({n, 0, ch});
      worst = std::max(worst, max_diff(ops::hybrid_temporal_shift(x, temporal::channel_partition(c, 0.125)), widen(x)));
    }
    out.push_back(make("identity", "time-constant input is a fixed point of the shift", 0, worst,
                       {"hybrid_temporal_shift"}));
  }

  {  // Spatially uniform frames give X_diff == 0.
    double worst = 0;
    auto cfg = temporal::TemporalFusionConfig::for_extent(16, 0.125, 3);
    for (std::size_t i = 0; i < opts.oracle_instances; ++i) {
      const std::size_t b = 2, t = 5, a = 16;
      auto level = random_tensor<float>(Shape{b, t}, rng, -2, 2);
      Tensor<float> x(Shape{b, 1, t, a, a});
      for (std::size_t n = 0; n < b; ++n)
        for (std::size_t s = 0; s < t; ++s)
          for (std::size_t p = 0; p < a * a; ++p) x[(n * t + s) * a * a + p] = level.at({n, s});
      ad::Tape<float> tape;
      auto v = tape.constant(x);
      std::vector<ad::Var<float>> deltas;
      std::vector<Tensor<float>> masks;
      for (std::size_t k = 1; k <= 3; ++k) {
        auto term = temporal::multires_residual(v, k, cfg.multires);
        deltas.push_back(term.delta);
        masks.push_back(temporal::cosine_mask(term.rearranged.value(), x, cfg.cosine_mode).mask);
      }
      auto betas = random_tensor<float>(Shape{3}, rng, -2, 2);
      worst = std::max(worst, max_abs(widen(temporal::contrast_aggregate(deltas, masks, tape.constant(betas)).value())));
    }
    out.push_back(make("identity", "spatially uniform input forces X_diff = 0 (f32)", 1e-6, worst,
                       {"multires_residual", "cosine_mask", "contrast_aggregate"}));
  }

  {  // Constant maps have no directional contrast.
    double worst = 0;
    ops::AggregateOptions o;
    o.strides = {8, 4, 2};
    for (std::size_t i = 0; i < opts.oracle_instances; ++i) {
      const float level = random_tensor<float>(Shape{1}, rng, -3, 3)[0];
      Tensor<float> x(Shape{2, 1, 16, 16}, level);
      worst = std::max(worst, max_abs(widen(ops::directional_aggregate(x, o))));
    }
    out.push_back(make("identity", "constant feature map gives zero aggregation", 0, worst,
                       {"directional_aggregate"}));
  }

  {  // w == 1 exactly when the L1 contrast vanishes; otherwise w < 1.
    std::size_t violations = 0;
    for (std::size_t i = 0; i < opts.oracle_instances; ++i) {
      auto x = random_tensor<double>(Shape{1, 1, 6, 6}, rng);
      for (std::size_t j = 0; j < 6; ++j) x.at({0, 0, 3, j}) = x.at({0, 0, 1, j});  // some zero-contrast pairs
      for (auto axis : {ops::Axis::height, ops::Axis::width}) {
        const auto r = ops::axial_contrast_weights(x, 2, axis, 0.1);
        for (std::size_t p = 0; p < 36; ++p) {
          const bool zero = r.residual[p] == 0.0;
          if ((r.weight[p] == 1.0) != zero || r.weight[p] <= 0.0 || r.weight[p] > 1.0) ++violations;
        }
      }
    }
    out.push_back(make("identity", "contrast weight equals 1 iff contrast is zero", 0,
                       static_cast<double>(violations), {"axial_contrast_weights"}));
  }

  {  // Perturbing masked entries leaves the diffusion loss bitwise unchanged.
    std::size_t changed = 0;
    for (std::size_t i = 0; i < opts.oracle_instances; ++i) {
      auto pred = random_tensor<float>(Shape{3, 8, 2}, rng);
      auto target = random_tensor<float>(Shape{3, 8, 2}, rng);
      Tensor<float> mask(Shape{3, 8});
      for (std::size_t j = 0; j < mask.size(); ++j) mask[j] = (j % 3 == 0) ? 0.0f : 1.0f;
      ad::Tape<float> t1;
      const float base = heads::diffusion_loss(t1.constant(pred), target, mask).value()[0];
      for (std::size_t j = 0; j < mask.size(); ++j)
        if (mask[j] == 0.0f) {
          pred[2 * j] += 1e3f;
          target[2 * j + 1] -= 7.0f;
        }
      ad::Tape<float> t2;
      const float after = heads::diffusion_loss(t2.constant(pred), target, mask).value()[0];
      if (std::bit_cast<std::uint32_t>(base) != std::bit_cast<std::uint32_t>(after)) ++changed;
    }
    out.push_back(make("identity", "masked entries never affect the diffusion loss", 0,
                       static_cast<double>(changed), {"diffusion_loss"}));
  }

  {  // alpha endpoints select exactly one term.
    double worst = 0;
    for (std::size_t i = 0; i < opts.oracle_instances; ++i) {
      auto ld = random_tensor<double>(Shape{1}, rng, 0, 5);
      auto lf = random_tensor<double>(Shape{1}, rng, 0, 5);
      ad::Tape<double> tape;
      worst = std::max(worst, std::abs(heads::total_loss(tape.constant(ld), tape.constant(lf), 0.0).value()[0] - lf[0]));
      worst = std::max(worst, std::abs(heads::total_loss(tape.constant(ld), tape.constant(lf), 1.0).value()[0] - ld[0]));
    }
    out.push_back(make("identity", "alpha in {0, 1} selects a single loss term", 0, worst, {"total_loss"}));
  }

  {  // Identity spatial parameters leave constant input unchanged.
    spatial::AxialGraphConfig cfg;
    auto params = spatial::SpatialBlockParams<float>::identity(cfg);
    Tensor<float> x(Shape{2, 1, 16, 16}, 0.37f);
    out.push_back(make("identity", "identity spatial block maps constant input to itself", 1e-6,
                       max_diff(spatial::spatial_block_forward(x, params, cfg), widen(x)),
                       {"spatial_block_forward"}));
  }

  {  // Zero temporal conv weights reduce tsm_fuse to the reshaped residual.
    auto cfg = temporal::TemporalFusionConfig::for_extent(8, 0.125, 3);
    const std::size_t c = 64;
    auto xbar = random_tensor<float>(Shape{2, 4, c}, rng);
    ad::Tape<float> tape;
    auto got = temporal::tsm_fuse(tape.constant(xbar), temporal::hybrid_temporal_shift(tape.constant(xbar), cfg.shift),
                                  tape.constant(Tensor<float>(Shape{c, 3, 1})), tape.constant(Tensor<float>(Shape{c}, 1.0f)),
                                  tape.constant(Tensor<float>(Shape{c})), tape.constant(Tensor<float>(Shape{c, c})),
                                  tape.constant(Tensor<float>(Shape{c})), cfg);
    out.push_back(make("identity", "zero temporal conv weights leave X_tsm = X_bar", 0,
                       max_diff(got.value(), widen(xbar.reshaped(Shape{2, 1, 4, 8, 8}))), {"tsm_fuse"}));
  }

  {  // Fusion weights [1, 0] and [0, 1] project onto one operand.
    auto xt = random_tensor<float>(Shape{2, 1, 3, 8, 8}, rng);
    auto xd = random_tensor<float>(Shape{2, 1, 3, 8, 8}, rng);
    ad::Tape<float> tape;
    auto zero = tape.constant(Tensor<float>(Shape{1}));
    auto first = temporal::contrast_aware_fusion(tape.constant(xt), tape.constant(xd),
                                                 tape.constant(Tensor<float>(Shape{1, 2}, {1.0f, 0.0f})), zero);
    auto second = temporal::contrast_aware_fusion(tape.constant(xt), tape.constant(xd),
                                                  tape.constant(Tensor<float>(Shape{1, 2}, {0.0f, 1.0f})), zero);
    out.push_back(make("identity", "fusion weights select one operand", 0,
                       std::max(max_diff(first.value(), widen(xt)), max_diff(second.value(), widen(xd))),
                       {"contrast_aware_fusion"}));
  }

  {  // Equal nonzero operands have similarity 1 everywhere, so the strict mask is empty.
    auto x = random_tensor<float>(Shape{2, 1, 3, 8, 8}, rng, 0.1, 1.0);
    const auto r = temporal::cosine_mask(x, x, temporal::CosineMode::channel);
    out.push_back(make("identity", "cosine mask is empty when operands coincide", 0, max_abs(widen(r.mask)),
                       {"cosine_mask", "cosine_similarity"}));
  }

  {  // Shift groups follow the ratio rule.
    const auto a = temporal::channel_partition(64, 0.125);
    const auto b = temporal::channel_partition(16, 0.125);
    const auto c = temporal::channel_partition(8, 0.125);
    const bool ok = a.forward == 8 && a.residual == 40 && b.forward == 2 && b.residual == 10 &&
                    c.forward == 1 && c.bidirectional == 1 && c.residual == 5;
    out.push_back(boolean("identity", "channel partition sizes for C = 64, 16, 8", ok, {"channel_partition"}));
  }

  return out;
}

// ---------------------------------------------------------------------------
// Gradients

std::vector<CheckResult> gradient_checks(const SuiteOptions& opts) {
  std::vector<CheckResult> out;
  using Fn = std::function<ad::Var<double>(ad::Tape<double>&, const std::vector<ad::Var<double>>&)>;
  struct Case {
    std::string op;
    std::vector<Shape> shapes;
    Fn f;
    double lo = -1, hi = 1;
  };
  const auto& o = opts;
  auto F = [&o](const std::string& op, std::function<ad::Var<double>(const std::vector<ad::Var<double>>&)> body) {
    return Fn([&o, op, body](ad::Tape<double>&, const std::vector<ad::Var<double>>& v) {
      return fault_point(body(v), op, o);
    });
  };
  ops::AggregateOptions agg;
  agg.strides = {4, 2, 1};
  const auto groups = temporal::channel_partition(16, 0.125);

  std::vector<Case> cases{
      {"add", {{3, 4}, {3, 4}}, F("add", [](auto& v) { return ad::add(v[0], v[1]); })},
      {"sub", {{3, 4}, {3, 4}}, F("sub", [](auto& v) { return ad::sub(v[0], v[1]); })},
      {"mul", {{3, 4}, {3, 4}}, F("mul", [](auto& v) { return ad::mul(v[0], v[1]); })},
      {"div", {{3, 4}, {3, 4}}, F("div", [](auto& v) { return ad::div(v[0], ad::add_scalar(ad::square(v[1]), 0.5)); })},
      {"scale", {{5}}, F("scale", [](auto& v) { return ad::scale(v[0], -1.7); })},
      {"add_scalar", {{5}}, F("add_scalar", [](auto& v) { return ad::square(ad::add_scalar(v[0], 0.3)); })},
      {"scale_by_element", {{2, 3}, {4}}, F("scale_by_element", [](auto& v) { return ad::scale_by_element(v[0], v[1], 2); })},
      {"mul_const", {{2, 3}}, F("mul_const", [](auto& v) { return ad::mul_const(v[0], Tensor<double>(Shape{2, 3}, {1, 0, 2, 0, -1, 3})); })},
      {"square", {{6}}, F("square", [](auto& v) { return ad::square(v[0]); })},
      {"abs", {{6}}, F("abs", [](auto& v) { return ad::abs(v[0]); })},
      {"exp", {{6}}, F("exp", [](auto& v) { return ad::exp(v[0]); })},
      {"gelu", {{12}}, F("gelu", [](auto& v) { return ad::gelu(v[0]); }), -4, 4},
      {"softplus", {{12}}, F("softplus", [](auto& v) { return ad::softplus(v[0]); }), -4, 4},
      {"maximum", {{8}, {8}}, F("maximum", [](auto& v) { return ad::maximum(v[0], v[1]); })},
      {"sum", {{3, 3}}, F("sum", [](auto& v) { return ad::sum(ad::square(v[0])); })},
      {"mean", {{3, 3}}, F("mean", [](auto& v) { return ad::mean(ad::square(v[0])); })},
      {"mean_axis", {{2, 3, 4}}, F("mean_axis", [](auto& v) { return ad::mean_axis(v[0], 1); })},
      {"reshape", {{2, 6}}, F("reshape", [](auto& v) { return ad::reshape(v[0], Shape{3, 4}); })},
      {"transpose", {{2, 3, 4}}, F("transpose", [](auto& v) { return ad::transpose(v[0], {2, 0, 1}); })},
      {"concat", {{2, 3}, {2, 2}}, F("concat", [](auto& v) { return ad::concat(std::vector{v[0], v[1]}, 1); })},
      {"slice", {{4, 5}}, F("slice", [](auto& v) { return ad::slice(v[0], 1, 1, 3); })},
      {"circular_roll", {{3, 5}}, F("circular_roll", [](auto& v) { return ad::circular_roll(v[0], 1, -2); })},
      {"adaptive_avg_pool2d", {{2, 1, 7, 5}}, F("adaptive_avg_pool2d", [](auto& v) { return ad::adaptive_avg_pool2d(v[0], 4, 4); })},
      {"upsample_nearest", {{2, 1, 3, 3}}, F("upsample_nearest", [](auto& v) { return ad::upsample_nearest(v[0], 6, 7); })},
      {"pointwise_conv", {{2, 3, 2, 2}, {4, 3}, {4}}, F("pointwise_conv", [](auto& v) { return ad::pointwise_conv(v[0], v[1], v[2]); })},
      {"linear", {{3, 5}, {2, 5}, {2}}, F("linear", [](auto& v) { return ad::linear(v[0], v[1], v[2]); })},
      {"depthwise_conv2d", {{2, 2, 5, 4}, {2, 3, 3}}, F("depthwise_conv2d", [](auto& v) { return ad::depthwise_conv2d(v[0], v[1]); })},
      {"conv2d", {{1, 2, 6, 6}, {3, 2, 3, 3}, {3}}, F("conv2d", [](auto& v) { return ad::conv2d(v[0], v[1], v[2], {2, 1}); })},
      {"group_norm", {{2, 4, 3, 3}, {4}, {4}}, F("group_norm", [](auto& v) { return ad::group_norm(v[0], 2, v[1], v[2], kGroupNormEpsilon); })},
      {"cosine_similarity", {{4, 6}, {4, 6}}, F("cosine_similarity", [](auto& v) { return ad::cosine_similarity(v[0], v[1], 0, 1e-8); })},
      {"directional_aggregate", {{2, 1, 8, 8}}, F("directional_aggregate", [agg](auto& v) { return ad::directional_aggregate(ad::scale(v[0], 0.2), agg); })},
      {"hybrid_temporal_shift", {{2, 4, 16}}, F("hybrid_temporal_shift", [groups](auto& v) { return ad::hybrid_temporal_shift(v[0], groups); })},
      {"masked_mse", {{2, 3, 2}}, F("masked_mse", [](auto& v) {
         return ad::masked_mse(v[0], Tensor<double>(Shape{2, 3, 2}, 0.25), Tensor<double>(Shape{2, 3}, {1, 1, 0, 1, 0, 0}));
       })},
  };

  for (auto& c : cases) {
    double worst = 0;
    std::string detail;
    for (auto seed : opts.seeds) {
      std::mt19937_64 rng(seed * 31 + c.shapes.size());
      std::vector<T64> tensors;
      for (const auto& s : c.shapes) tensors.push_back(random_tensor<double>(s, rng, c.lo, c.hi));
      std::vector<CheckInput<double>> inputs;
      for (std::size_t i = 0; i < tensors.size(); ++i) inputs.push_back({"x" + std::to_string(i), &tensors[i]});
      GradCheckOptions go;
      go.seed = seed;
      const auto r = finite_diff_check<double>(c.f, inputs, go);
      if (r.max_error >= worst) {
        worst = r.max_error;
        detail = "worst " + r.worst_tensor + "[" + std::to_string(r.worst_index) + "] seed " + std::to_string(seed);
      }
    }
    std::vector<std::string> covered{"backward", "finite_diff_check"};
    if (c.op == "depthwise_conv2d") covered.push_back("depthwise_conv");
    else covered.push_back(c.op);
    out.push_back(make("gradient", c.op + "/" + std::to_string(opts.seeds.size()) + " seeds", kGradTol, worst,
                       covered, detail));
  }

  {  // Identity map: error exactly zero.
    T64 x = T64(Shape{5}, {0.1, -2.0, 3.5, 0.0, 0.75});
    const auto r = finite_diff_check<double>(std::function<ad::Var<double>(ad::Var<double>)>(
                                                 [](ad::Var<double> v) { return v; }),
                                             x, kGradTol);
    out.push_back(make("gradient", "identity map has zero error", 1e-9, r.max_error, {"finite_diff_check"}));
  }

  {  // An empty tape leaves gradients at zero; sum(x^2)/2 has gradient x.
    T64 x(Shape{4}, {1.0, -2.0, 0.5, 3.0});
    x.set_requires_grad(true);
    {
      ad::Tape<double> tape;
      auto v = tape.leaf(x);
      tape.backward(ad::scale(ad::sum(ad::square(v)), 0.5));
    }
    double err = 0;
    for (std::size_t i = 0; i < 4; ++i) err = std::max(err, std::abs(x.grad()[i] - x[i]));
    out.push_back(make("gradient", "sum(x^2)/2 has gradient x", 0, err, {"backward"}));
  }

  auto blocks = block_gradient_checks(opts);
  out.insert(out.end(), blocks.begin(), blocks.end());
  return out;
}

std::vector<CheckResult> block_gradient_checks(const SuiteOptions& opts) {
  std::vector<CheckResult> out;
  const std::size_t a = 8, t = 3, b = 2, slots = t + 1;

  auto run = [&](const std::string& name, std::vector<std::string> ops,
                 const std::function<GradCheckReport(std::uint64_t, const GradCheckOptions&)>& body) {
    if (!opts.filter.empty() && name.find(opts.filter) == std::string::npos) return;
    double worst = 0;
    std::size_t coords = 0;
    std::string detail;
    for (auto seed : opts.seeds) {
      GradCheckOptions go;
      go.seed = seed;
      go.max_coords_per_tensor = opts.coords_per_tensor;
      const auto r = body(seed, go);
      coords += r.coordinates_checked;
      if (r.max_error >= worst) {
        worst = r.max_error;
        detail = "worst " + r.worst_tensor + "[" + std::to_string(r.worst_index) + "] seed " + std::to_string(seed);
      }
    }
    ops.push_back("finite_diff_check");
    ops.push_back("backward");
    out.push_back(make("gradient", name + " (A=8, T=3, B=2, " + std::to_string(opts.seeds.size()) + " seeds)",
                       kGradTol, worst, ops, detail + ", " + std::to_string(coords) + " coordinates"));
  };

  spatial::AxialGraphConfig scfg;
  scfg.strides = {4, 2, 1};
  auto tcfg = temporal::TemporalFusionConfig::for_extent(a, 0.125, 3);

  run("positional_encoding", {"positional_encoding"}, [&](std::uint64_t seed, const GradCheckOptions& go) {
    std::mt19937_64 rng(seed);
    auto x = random_tensor<double>(Shape{b * slots, 1, a, a}, rng);
    auto k = random_tensor<double>(Shape{1, 3, 3}, rng);
    return finite_diff_check<double>(
        [](ad::Tape<double>&, const std::vector<ad::Var<double>>& v) { return spatial::positional_encoding(v[0], v[1]); },
        named({{"x", &x}, {"kernel", &k}}), go);
  });

  run("spatial_block_forward", {"spatial_block_forward", "directional_aggregate", "positional_encoding"},
      [&](std::uint64_t seed, const GradCheckOptions& go) {
        // Redraw until no kink is within one step and no GroupNorm input is nearly constant.
        std::mt19937_64 rng(seed);
        auto x = random_tensor<double>(Shape{b * slots, 1, a, a}, rng, 0, 0.5);
        auto params = spatial::SpatialBlockParams<double>::init(scfg, rng);
        std::size_t draws = 1;
        while (!spatial_well_conditioned(x, params, scfg, go.step_scale, rng)) {
          if (++draws > 1000) throw Error("spatial gradient check: no well-conditioned draw found");
          x = random_tensor<double>(Shape{b * slots, 1, a, a}, rng, 0, 0.5);
          params = spatial::SpatialBlockParams<double>::init(scfg, rng);
        }
        std::vector<std::pair<std::string, T64*>> list{{"x", &x}};
        params.visit("spatial.", [&](const std::string& n, T64& p) { list.push_back({n, &p}); });
        return finite_diff_check<double>(
            [&](ad::Tape<double>&, const std::vector<ad::Var<double>>& v) {
              return spatial::spatial_block_forward(v[0], params, scfg);
            },
            named(list), go);
      });

  run("tsm_fuse", {"tsm_fuse", "hybrid_temporal_shift"}, [&](std::uint64_t seed, const GradCheckOptions& go) {
    std::mt19937_64 rng(seed);
    const std::size_t c = a * a;
    auto xbar = random_tensor<double>(Shape{b, slots, c}, rng);
    auto params = temporal::TemporalFusionParams<double>::init(tcfg, rng);
    return finite_diff_check<double>(
        [&](ad::Tape<double>&, const std::vector<ad::Var<double>>& v) {
          return temporal::tsm_fuse(v[0], temporal::hybrid_temporal_shift(v[0], tcfg.shift), v[1], v[2], v[3], v[4],
                                    v[5], tcfg);
        },
        named({{"x_bar", &xbar}, {"dw_kernel", &params.dw_kernel}, {"gn_gamma", &params.gn_gamma},
               {"gn_beta", &params.gn_beta}, {"pw_weight", &params.pw_weight}, {"pw_bias", &params.pw_bias}}),
        go);
  });

  run("multires_residual", {"multires_residual"}, [&](std::uint64_t seed, const GradCheckOptions& go) {
    std::mt19937_64 rng(seed);
    auto x = random_tensor<double>(Shape{b, 1, slots, a, a}, rng);
    return finite_diff_check<double>(
        [&](ad::Tape<double>&, const std::vector<ad::Var<double>>& v) {
          auto acc = temporal::multires_residual(v[0], 1, tcfg.multires).delta;
          for (std::size_t k = 2; k <= 3; ++k) acc = ad::add(acc, temporal::multires_residual(v[0], k, tcfg.multires).delta);
          return acc;
        },
        named({{"x_tsm", &x}}), go);
  });

  run("contrast_aggregate", {"contrast_aggregate", "cosine_mask"}, [&](std::uint64_t seed, const GradCheckOptions& go) {
    std::mt19937_64 rng(seed);
    auto x = random_tensor<double>(Shape{b, 1, slots, a, a}, rng);
    auto betas = random_tensor<double>(Shape{3}, rng, 0.5, 1.5);
    return finite_diff_check<double>(
        [&](ad::Tape<double>&, const std::vector<ad::Var<double>>& v) {
          std::vector<ad::Var<double>> deltas;
          std::vector<T64> masks;
          for (std::size_t k = 1; k <= 3; ++k) {
            auto term = temporal::multires_residual(v[0], k, tcfg.multires);
            deltas.push_back(term.delta);
            masks.push_back(temporal::cosine_mask(term.rearranged.value(), v[0].value(), tcfg.cosine_mode).mask);
          }
          return temporal::contrast_aggregate(deltas, masks, v[1]);
        },
        named({{"x_tsm", &x}, {"betas", &betas}}), go);
  });

  run("contrast_aware_fusion", {"contrast_aware_fusion"}, [&](std::uint64_t seed, const GradCheckOptions& go) {
    std::mt19937_64 rng(seed);
    auto xt = random_tensor<double>(Shape{b, 1, slots, a, a}, rng);
    auto xd = random_tensor<double>(Shape{b, 1, slots, a, a}, rng);
    auto w = random_tensor<double>(Shape{2, 2}, rng);
    auto bias = random_tensor<double>(Shape{2}, rng);
    return finite_diff_check<double>(
        [](ad::Tape<double>&, const std::vector<ad::Var<double>>& v) {
          return temporal::contrast_aware_fusion(v[0], v[1], v[2], v[3]);
        },
        named({{"x_tsm", &xt}, {"x_diff", &xd}, {"weight", &w}, {"bias", &bias}}), go);
  });

  run("temporal_block_forward", {"temporal_block_forward"}, [&](std::uint64_t seed, const GradCheckOptions& go) {
    std::mt19937_64 rng(seed);
    auto x = random_tensor<double>(Shape{b, slots, 1, a, a}, rng);
    auto params = temporal::TemporalFusionParams<double>::init(tcfg, rng);
    // Move the scale coefficients off their initial value so each term is distinct.
    for (auto& v : params.betas.data()) v += std::uniform_real_distribution<double>(-0.5, 0.5)(rng);
    std::vector<std::pair<std::string, T64*>> list{{"stacked", &x}};
    params.visit("temporal.", [&](const std::string& n, T64& p) { list.push_back({n, &p}); });
    return finite_diff_check<double>(
        [&](ad::Tape<double>&, const std::vector<ad::Var<double>>& v) {
          return temporal::temporal_block_forward(v[0], params, tcfg);
        },
        named(list), go);
  });

  heads::EncoderConfig ecfg{a, 4};
  run("encode_sequence", {"encode_sequence"}, [&](std::uint64_t seed, const GradCheckOptions& go) {
    std::mt19937_64 rng(seed);
    auto obs = random_tensor<double>(Shape{b, t, 1, 9, 9}, rng, 0, 1);
    auto goal = random_tensor<double>(Shape{b, 1, 9, 9}, rng, 0, 1);
    auto params = heads::EncoderParams<double>::init(ecfg, rng);
    std::vector<std::pair<std::string, T64*>> list{{"observations", &obs}, {"goal", &goal}};
    params.visit("encoder.", [&](const std::string& n, T64& p) { list.push_back({n, &p}); });
    return finite_diff_check<double>(
        [&](ad::Tape<double>&, const std::vector<ad::Var<double>>& v) {
          return heads::encode_sequence(v[0], v[1], params, ecfg);
        },
        named(list), go);
  });

  heads::HeadConfig hcfg;
  hcfg.context_dim = slots * a * a;
  hcfg.hidden = 32;
  run("denoise_predict", {"denoise_predict", "build_context"}, [&](std::uint64_t seed, const GradCheckOptions& go) {
    std::mt19937_64 rng(seed);
    auto noisy = random_tensor<double>(Shape{b, hcfg.horizon, hcfg.action_dims}, rng);
    auto fused = random_tensor<double>(Shape{b, 1, slots, a, a}, rng);
    auto params = heads::DiffusionHeadParams<double>::init(hcfg, rng);
    std::vector<std::pair<std::string, T64*>> list{{"noisy", &noisy}, {"fused", &fused}};
    params.visit("diffusion.", [&](const std::string& n, T64& p) { list.push_back({n, &p}); });
    return finite_diff_check<double>(
        [&](ad::Tape<double>&, const std::vector<ad::Var<double>>& v) {
          return heads::denoise_predict(v[0], {3, 7}, heads::build_context(v[1]), params, hcfg);
        },
        named(list), go);
  });

  run("distance_predict", {"distance_predict", "distance_loss"}, [&](std::uint64_t seed, const GradCheckOptions& go) {
    std::mt19937_64 rng(seed);
    auto ctx = random_tensor<double>(Shape{b, hcfg.context_dim}, rng);
    auto params = heads::DistanceHeadParams<double>::init(hcfg, rng);
    std::vector<std::pair<std::string, T64*>> list{{"context", &ctx}};
    params.visit("distance.", [&](const std::string& n, T64& p) { list.push_back({n, &p}); });
    return finite_diff_check<double>(
        [&](ad::Tape<double>&, const std::vector<ad::Var<double>>& v) {
          return heads::distance_loss(heads::distance_predict(v[0], params), T64(Shape{b}, {3.0, 0.0}));
        },
        named(list), go);
  });

  ModelConfig mcfg;
  mcfg.extent = a;
  mcfg.frames = t;
  mcfg.spatial.strides = {4, 2, 1};
  mcfg.head.hidden = 32;
  mcfg.finalize();
  run("total_loss end to end", {"total_loss", "diffusion_loss", "distance_loss", "noise_actions"},
      [&](std::uint64_t seed, const GradCheckOptions& go) {
        std::mt19937_64 rng(seed);
        auto params = ModelParams<double>::init(mcfg, seed);
        for (auto& v : params.temporal.betas.data()) v += std::uniform_real_distribution<double>(-0.5, 0.5)(rng);
        Batch<double> batch;
        batch.observations = random_tensor<double>(Shape{b, t, 1, 15, 15}, rng, 0, 1);
        batch.goal = random_tensor<double>(Shape{b, 1, 15, 15}, rng, 0, 1);
        batch.actions = random_tensor<double>(Shape{b, mcfg.head.horizon, 2}, rng);
        batch.mask = T64(Shape{b, mcfg.head.horizon}, 1.0);
        for (std::size_t j = 5; j < mcfg.head.horizon; ++j) batch.mask.at({1, j}) = 0.0;
        batch.distance = T64(Shape{b}, {4.0, 9.0});
        const auto noise = draw_noise<double>(mcfg, b, rng);
        std::vector<std::pair<std::string, T64*>> list;
        params.visit([&](const std::string& n, T64& p) { list.push_back({n, &p}); });
        // The default alpha weights the distance term at 1e-4; 0.5 exercises both terms visibly.
        return finite_diff_check<double>(
            [&](ad::Tape<double>& tape, const std::vector<ad::Var<double>>&) {
              return model_loss(tape, batch, noise, params, mcfg, 0.5).total;
            },
            named(list), go);
      });

  return out;
}

// ---------------------------------------------------------------------------
// Navigation world

namespace {

// Independent flood fill from `from`; returns the BFS distance to `to` or -1.
int flood_distance(const nav::World& w, nav::Cell from, nav::Cell to) {
  std::vector<int> dist(static_cast<std::size_t>(w.height * w.width), -1);
  std::queue<nav::Cell> q;
  dist[w.index(from)] = 0;
  q.push(from);
  const int dr[] = {-1, 0, 1, 0}, dc[] = {0, 1, 0, -1};
  while (!q.empty()) {
    const auto c = q.front();
    q.pop();
    for (int k = 0; k < 4; ++k) {
      const nav::Cell n{c.row + dr[k], c.col + dc[k]};
      if (w.blocked(n) || dist[w.index(n)] >= 0) continue;
      dist[w.index(n)] = dist[w.index(c)] + 1;
      q.push(n);
    }
  }
  return dist[w.index(to)];
}

}  // namespace

std::vector<CheckResult> navsim_checks(const SuiteOptions& opts) {
  std::vector<CheckResult> out;
  nav::WorldConfig wc;
  wc.obstacle_density = 0.25;
  nav::RenderConfig rc;

  std::size_t bad_world = 0, bad_expert = 0, impure = 0, bad_distance = 0;
  std::vector<nav::EpisodeMetrics> expert_runs;
  for (std::size_t s = 0; s < opts.navsim_worlds; ++s) {
    const auto w = nav::generate_world(s, wc);
    const int bfs = flood_distance(w, w.start, w.goal);
    if (w.start == w.goal || w.blocked(w.start) || w.blocked(w.goal) || bfs <= 0) ++bad_world;
    nav::RolloutConfig roll;
    roll.render = rc;
    auto r = nav::rollout_policy(w, nav::expert_policy(), roll);
    expert_runs.push_back(r.metrics);
    if (!r.metrics.success || r.metrics.collisions != 0 || r.metrics.path_length != bfs) ++bad_expert;
    const auto& d = r.trajectory.distances;
    for (std::size_t i = 0; i < d.size(); ++i)
      if (static_cast<int>(d[i]) != bfs - static_cast<int>(i)) {
        ++bad_distance;
        break;
      }
    if (nav::render_observation(w, w.start, w.start_heading, rc) != nav::render_observation(w, w.start, w.start_heading, rc))
      ++impure;
  }
  const std::string n = std::to_string(opts.navsim_worlds) + " worlds";
  out.push_back(make("navsim", "generated worlds are connected (flood fill, density 0.25)", 0,
                     static_cast<double>(bad_world), {"generate_world"}, n));
  out.push_back(make("navsim", "expert path equals BFS shortest length, no collisions", 0,
                     static_cast<double>(bad_expert), {"expert_action", "rollout_policy"}, n));
  out.push_back(make("navsim", "temporal distances count down to 0 along expert paths", 0,
                     static_cast<double>(bad_distance), {"expert_action"}, n));
  out.push_back(make("navsim", "rendering is a pure function of pose", 0, static_cast<double>(impure),
                     {"render_observation"}, n));

  const auto summary = nav::compute_metrics(expert_runs);
  out.push_back(make("navsim", "expert SPL and success rate are 1", 0,
                     std::max(std::abs(summary.spl - 1.0), std::abs(summary.success_rate - 1.0)),
                     {"compute_metrics"}));
  out.push_back(make("navsim", "success at twice the shortest path scores 0.5", 0,
                     std::abs(nav::spl_term(true, 10, 5) - 0.5) + std::abs(nav::spl_term(false, 5, 5)),
                     {"compute_metrics"}));

  {  // Wall cells of a 3x3 world land at the expected egocentric pixels.
    nav::World w;
    w.height = w.width = 3;
    w.grid = {0, 1, 0, 0, 0, 0, 0, 0, 0};  // obstacle north of the centre
    w.start = {1, 1};
    w.goal = {2, 2};
    nav::RenderConfig small;
    small.window = 5;
    std::size_t wrong = 0;
    for (auto heading : nav::kDirections) {
      const auto img = nav::render_observation(w, w.start, heading, small);
      // Obstacle at world offset (-1, 0) appears at ego offset world_to_ego((-1, 0)).
      const auto e = nav::world_to_ego({-1.0, 0.0}, heading);
      const auto px = static_cast<std::size_t>((2 + static_cast<int>(e[0])) * 5 + 2 + static_cast<int>(e[1]));
      if (img[px] != small.obstacle) ++wrong;
      if (img[0] != small.obstacle) ++wrong;  // corners fall outside the 3x3 world
      if (img[12] != small.free) ++wrong;
    }
    out.push_back(make("navsim", "wall offsets in a 3x3 world", 0, static_cast<double>(wrong), {"render_observation"}));
  }

  {  // Frozen policy times out; random policy stays below the expert.
    std::vector<nav::EpisodeMetrics> frozen, random;
    nav::WorldConfig dw;
    for (std::uint64_t s = 0; s < 50; ++s) {
      const auto w = nav::generate_world(500 + s, dw);
      nav::RolloutConfig roll;
      frozen.push_back(nav::rollout_policy(w, nav::frozen_policy(), roll).metrics);
      random.push_back(nav::rollout_policy(w, nav::random_policy(s), roll).metrics);
    }
    out.push_back(make("navsim", "frozen policy never succeeds", 0, nav::compute_metrics(frozen).success_rate,
                       {"rollout_policy"}));
    out.push_back(boolean("navsim", "random policy succeeds less often than the expert",
                          nav::compute_metrics(random).success_rate < 1.0, {"rollout_policy"}));
  }

  {  // Dataset round trip is bitwise exact.
    const auto data = nav::generate_dataset(5, 42, nav::WorldConfig{}, rc);
    std::stringstream buf;
    nav::write_dataset(buf, data);
    const std::string bytes = buf.str();
    std::stringstream in(bytes);
    const auto back = nav::read_dataset(in);
    std::stringstream again;
    nav::write_dataset(again, back);
    bool ok = again.str() == bytes && back.episodes.size() == 5;
    for (const auto& e : back.episodes) ok = ok && !e.distances.empty() && e.distances.back() == 0;
    out.push_back(boolean("navsim", "dataset round trip is bitwise exact", ok, {"generate_dataset"}));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Heads and config

std::vector<CheckResult> head_checks(const SuiteOptions& opts) {
  std::vector<CheckResult> out;
  const auto sched = heads::DiffusionSchedule::linear(10, 1e-4, 0.2);

  {  // Monte-Carlo variance of the injected noise.
    const std::size_t n = 5;
    const std::size_t draws = 100000;
    Tensor<double> a(Shape{draws}, 0.7);
    const auto r = heads::noise_actions(a, n, sched, 1234);
    const double sa = std::sqrt(sched.cumulative(n));
    double m = 0, v = 0;
    for (std::size_t i = 0; i < draws; ++i) m += r.noisy[i] - sa * a[i];
    m /= static_cast<double>(draws);
    for (std::size_t i = 0; i < draws; ++i) v += (r.noisy[i] - sa * a[i] - m) * (r.noisy[i] - sa * a[i] - m);
    v /= static_cast<double>(draws);
    const double expected = 1.0 - sched.cumulative(n);
    out.push_back(make("heads", "noise variance matches 1 - alpha_bar within 2%", 0.02,
                       std::abs(v - expected) / expected, {"noise_actions"}));
    const auto again = heads::noise_actions(a, n, sched, 1234);
    out.push_back(boolean("heads", "noise draws are reproducible per seed",
                          again.noisy.values() == r.noisy.values() && again.epsilon.values() == r.epsilon.values(),
                          {"noise_actions"}));
  }

  {  // One-step schedule with an oracle noise predictor inverts the noising.
    const auto one = heads::DiffusionSchedule::linear(1, 0.2, 0.2);
    std::mt19937_64 rng(opts.seeds.empty() ? 7 : opts.seeds.front());
    const auto a = random_tensor<double>(Shape{1, 8, 2}, rng);
    double worst = 0;
    // Sampling starts from unit noise x_1; the oracle returns the eps that maps a to x_1.
    heads::EpsilonPredictor<double> oracle = [&](const T64& x, std::size_t n) {
      const double bar = one.cumulative(n);
      T64 eps(x.shape());
      for (std::size_t i = 0; i < x.size(); ++i) eps[i] = (x[i] - std::sqrt(bar) * a[i]) / std::sqrt(1.0 - bar);
      return eps;
    };
    const auto got = heads::sample_actions<double>(a.shape(), one, oracle, 99);
    for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(got[i] - a[i]));
    out.push_back(make("heads", "single-step sampler inverts the noising with an oracle predictor", 1e-5, worst,
                       {"sample_actions"}));
  }

  {  // Sampling is a pure function of (context, params, seed) and stays finite.
    heads::HeadConfig hc;
    hc.context_dim = 20;
    std::mt19937_64 rng(5);
    auto params = heads::DiffusionHeadParams<double>::init(hc, rng);
    const auto ctx = random_tensor<double>(Shape{1, 20}, rng);
    bool ok = heads::sample_actions(ctx, sched, params, hc, 3).values() ==
              heads::sample_actions(ctx, sched, params, hc, 3).values();
    for (std::uint64_t s = 0; s < 100; ++s) ok = ok && heads::sample_actions(ctx, sched, params, hc, s).all_finite();
    out.push_back(boolean("heads", "sampling is deterministic and finite over 100 seeds", ok, {"sample_actions"}));
  }

  {
    ad::Tape<double> tape;
    auto pred = tape.constant(T64(Shape{1, 2, 1}, {1.0, -1.0}));
    const double l = heads::diffusion_loss(pred, T64(Shape{1, 2, 1}), T64(Shape{1, 2}, {1.0, 0.0})).value()[0];
    out.push_back(make("heads", "diffusion loss of errors [1, -1] under mask [1, 0] is 1", 0, std::abs(l - 1.0),
                       {"diffusion_loss"}));
    const double d = heads::distance_loss(tape.constant(T64(Shape{1, 1}, 3.0)), T64(Shape{1}, 1.0)).value()[0];
    out.push_back(make("heads", "distance loss of 3 against 1 is 4", 0, std::abs(d - 4.0), {"distance_loss"}));
    out.push_back(make("heads", "total loss at alpha 1e-4 with (4, 1) is 1.0003", 1e-12,
                       std::abs(heads::total_loss(4.0, 1.0, 0.0001) - 1.0003), {"total_loss"}));
    auto ctx = heads::build_context(tape.constant(T64(Shape{1, 1, 5, 8, 8})));
    out.push_back(boolean("heads", "context of a (1,1,5,8,8) map has D = 320",
                          ctx.shape() == Shape{1, 320}, {"build_context"}));
  }

  {  // The distance head is non-negative for arbitrary parameters.
    heads::HeadConfig hc;
    hc.context_dim = 16;
    double worst = 0;
    for (std::uint64_t s = 0; s < 50; ++s) {
      std::mt19937_64 rng(s);
      auto p = heads::DistanceHeadParams<double>::init(hc, rng);
      for (auto& v : p.w2.data()) v *= 50.0;
      p.b2[0] = -20.0;
      ad::Tape<double> tape;
      const auto out_v = heads::distance_predict(tape.constant(random_tensor<double>(Shape{4, 16}, rng, -5, 5)), p);
      for (double v : out_v.value().data()) worst = std::max(worst, -v);
    }
    out.push_back(make("heads", "distance prediction is non-negative", 0, worst, {"distance_predict"}));
  }

  {  // Shared encoder: identical goal and last observation give identical slots.
    heads::EncoderConfig ec{8, 4};
    std::mt19937_64 rng(11);
    auto p = heads::EncoderParams<double>::init(ec, rng);
    auto obs = random_tensor<double>(Shape{1, 4, 1, 15, 15}, rng, 0, 1);
    T64 goal(Shape{1, 1, 15, 15});
    std::copy(obs.ptr() + 3 * 225, obs.ptr() + 4 * 225, goal.ptr());
    ad::Tape<double> tape;
    const auto st = heads::encode_sequence(tape.constant(obs), tape.constant(goal), p, ec).value();
    bool ok = st.shape() == Shape{1, 5, 1, 8, 8};
    for (std::size_t i = 0; i < 64 && ok; ++i) ok = st[3 * 64 + i] == st[4 * 64 + i];
    out.push_back(boolean("heads", "goal slot equals the encoding of an identical last frame", ok, {"encode_sequence"}));
  }

  {  // Config round trip.
    RunConfig cfg;
    cfg.strides = {4, 2};
    cfg.learning_rate = 0.003;
    cfg.disable_spatial = true;
    const bool ok = parse_config(serialize_config(cfg)) == cfg && parse_config(serialize_config(RunConfig{})) == RunConfig{};
    out.push_back(boolean("config", "parse(serialize(config)) round trip", ok, {"parse_config"}));
  }
  return out;
}

// ---------------------------------------------------------------------------

bool SuiteReport::passed() const {
  if (!uncovered.empty()) return false;
  return std::all_of(checks.begin(), checks.end(), [](const CheckResult& c) { return c.passed; });
}

SuiteReport run_suite(const SuiteOptions& opts) {
  if (!opts.inject_fault.empty() &&
      std::find(fault_targets().begin(), fault_targets().end(), opts.inject_fault) == fault_targets().end())
    throw Error("check: unknown fault target '" + opts.inject_fault + "'");
  SuiteReport report;
  for (auto* group : {&oracle_checks, &identity_checks, &gradient_checks, &navsim_checks, &head_checks}) {
    auto part = (*group)(opts);
    report.checks.insert(report.checks.end(), part.begin(), part.end());
  }
  if (!opts.filter.empty()) {
    std::erase_if(report.checks, [&](const CheckResult& c) { return c.name.find(opts.filter) == std::string::npos; });
    return report;
  }
  std::set<std::string> seen;
  for (const auto& c : report.checks) seen.insert(c.ops.begin(), c.ops.end());
  for (const auto& op : required_ops())
    if (!seen.count(op)) report.uncovered.push_back(op);
  return report;
}

std::string format_report(const SuiteReport& report) {
  std::ostringstream out;
  std::size_t failed = 0;
  for (const auto& c : report.checks) {
    if (!c.passed) ++failed;
    out << (c.passed ? "PASS " : "FAIL ") << c.group << '/' << c.name << "  tol=" << c.tolerance
        << " measured=" << c.measured;
    if (!c.detail.empty()) out << "  (" << c.detail << ')';
    out << '\n';
  }
  if (report.checks.empty()) out << "no checks selected\n";
  out << "coverage: " << (required_ops().size() - report.uncovered.size()) << '/' << required_ops().size()
      << " operations";
  for (const auto& op : report.uncovered) out << " missing:" << op;
  out << '\n';
  out << report.checks.size() - failed << '/' << report.checks.size() << " checks passed\n";
  return out.str();
}

}  // namespace strnet::verify

#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "strnet/gradcheck.hpp"
#include "strnet/naive.hpp"
#include "strnet/temporal.hpp"

using namespace strnet;

namespace {

Tensor<double> random_tensor(const Shape& shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(lo, hi);
  Tensor<double> t(shape);
  for (auto& v : t.data()) v = dist(rng);
  return t;
}

double max_abs_diff(const Tensor<double>& a, const Tensor<double>& b) {
  EXPECT_EQ(a.shape(), b.shape());
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

// One channel per group, so channel c's sequence is easy to read back.
ops::ShiftGroups one_each() { return {1, 1, 1, 1}; }

std::vector<double> channel_series(const Tensor<double>& x, std::size_t c) {
  std::vector<double> out;
  for (std::size_t t = 0; t < x.dim(1); ++t) out.push_back(x.at({0, t, c}));
  return out;
}

}  // namespace

TEST(ChannelPartition, RatioRule) {
  const auto p64 = temporal::channel_partition(64, 0.125);
  EXPECT_EQ(p64.forward, 8u);
  EXPECT_EQ(p64.backward, 8u);
  EXPECT_EQ(p64.bidirectional, 8u);
  EXPECT_EQ(p64.residual, 40u);
  const auto p16 = temporal::channel_partition(16, 0.125);
  EXPECT_EQ(p16.forward, 2u);
  EXPECT_EQ(p16.residual, 10u);
  const auto p8 = temporal::channel_partition(8, 0.125);
  EXPECT_EQ(p8.bidirectional, 1u);
  EXPECT_EQ(p8.residual, 5u);
  EXPECT_THROW(temporal::channel_partition(7, 0.125), Error);
  EXPECT_THROW(temporal::channel_partition(64, 0.4), Error);
}

TEST(ChannelPartition, SizesSumToChannels) {
  for (std::size_t c = 3; c <= 300; ++c)
    for (double rho : {0.05, 0.125, 0.2, 1.0 / 3.0}) {
      if (static_cast<std::size_t>(std::floor(rho * static_cast<double>(c))) == 0) continue;
      EXPECT_EQ(temporal::channel_partition(c, rho).total(), c);
    }
}

TEST(HybridShift, GroupSequences) {
  Tensor<double> x(Shape{1, 4, 4});
  for (std::size_t t = 0; t < 4; ++t)
    for (std::size_t c = 0; c < 4; ++c) x.at({0, t, c}) = static_cast<double>(t + 1);
  const auto y = ops::hybrid_temporal_shift(x, one_each());
  EXPECT_EQ(channel_series(y, 0), (std::vector<double>{4, 1, 2, 3}));
  EXPECT_EQ(channel_series(y, 1), (std::vector<double>{2, 3, 4, 1}));
  EXPECT_EQ(channel_series(y, 2), (std::vector<double>{3, 2, 3, 2}));
  EXPECT_EQ(channel_series(y, 3), (std::vector<double>{1, 2, 3, 4}));
}

TEST(HybridShift, TimeConstantInputIsFixed) {
  Tensor<double> x(Shape{2, 5, 16});
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> dist(-1, 1);
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t c = 0; c < 16; ++c) {
      const double v = dist(rng);
      for (std::size_t t = 0; t < 5; ++t) x.at({b, t, c}) = v;
    }
  EXPECT_EQ(ops::hybrid_temporal_shift(x, temporal::channel_partition(16, 0.125)), x);
}

TEST(HybridShift, IsLinear) {
  const auto groups = temporal::channel_partition(16, 0.125);
  const auto x = random_tensor(Shape{2, 3, 16}, 2);
  const auto y = random_tensor(Shape{2, 3, 16}, 3);
  Tensor<double> combo(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) combo[i] = 1.5 * x[i] - 0.25 * y[i];
  const auto sx = ops::hybrid_temporal_shift(x, groups);
  const auto sy = ops::hybrid_temporal_shift(y, groups);
  const auto sc = ops::hybrid_temporal_shift(combo, groups);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(sc[i], 1.5 * sx[i] - 0.25 * sy[i], 1e-15);
}

TEST(HybridShift, MatchesNaiveOracleAndRejectsShortSequences) {
  const auto groups = temporal::channel_partition(64, 0.125);
  const auto x = random_tensor(Shape{2, 3, 64}, 4);
  EXPECT_LE(max_abs_diff(ops::hybrid_temporal_shift(x, groups), naive::hybrid_shift(x, 8, 8, 8)), 1e-12);
  EXPECT_THROW(ops::hybrid_temporal_shift(random_tensor(Shape{1, 1, 64}, 5), groups), Error);
}

TEST(TsmFuse, ZeroWeightsLeaveResidual) {
  auto cfg = temporal::TemporalFusionConfig::for_extent(8, 0.125, 3);
  std::mt19937_64 rng(6);
  auto params = temporal::TemporalFusionParams<double>::init(cfg, rng);
  for (auto& v : params.pw_weight.data()) v = 0;
  for (auto& v : params.pw_bias.data()) v = 0;
  const auto xbar = random_tensor(Shape{2, 3, 64}, 7);
  ad::Tape<double> tape;
  auto xb = tape.constant(xbar);
  auto shifted = temporal::hybrid_temporal_shift(xb, cfg.shift);
  const auto y = temporal::tsm_fuse(xb, shifted, tape.constant(params.dw_kernel), tape.constant(params.gn_gamma),
                                    tape.constant(params.gn_beta), tape.constant(params.pw_weight),
                                    tape.constant(params.pw_bias), cfg)
                     .value();
  ASSERT_EQ(y.shape(), (Shape{2, 1, 3, 8, 8}));
  EXPECT_EQ(y.values(), xbar.values());
}

TEST(MultiRes, ScaleLadder) {
  EXPECT_EQ(temporal::scale_extent(16, 1), 16u);
  EXPECT_EQ(temporal::scale_extent(16, 2), 8u);
  EXPECT_EQ(temporal::scale_extent(16, 3), 4u);
  EXPECT_EQ(temporal::scale_extent(16, 4), 4u);
  temporal::MultiResConfig cfg;
  EXPECT_EQ(cfg.scale_extents(), (std::vector<std::size_t>{16, 8, 4}));
  cfg.extent = 10;  // a_2 = 5 is odd
  EXPECT_THROW(cfg.validate(), Error);
}

TEST(MultiRes, QuadrantSwap) {
  Tensor<double> x(Shape{1, 1, 1, 4, 4});
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j) x.at({0, 0, 0, i, j}) = 1.0 + static_cast<double>((i / 2) * 2 + j / 2);
  temporal::MultiResConfig cfg;
  cfg.extent = 4;
  cfg.num_scales = 1;
  ad::Tape<double> tape;
  const auto term = temporal::multires_residual(tape.constant(x), 1, cfg);
  const auto& d = term.delta.value();
  const double expect[2][2] = {{3, 1}, {-1, -3}};
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j) EXPECT_EQ(d.at({0, 0, 0, i, j}), expect[i / 2][j / 2]);
}

TEST(MultiRes, UniformFramesGiveZeroDelta) {
  temporal::MultiResConfig cfg;
  cfg.extent = 16;
  Tensor<double> x(Shape{2, 1, 3, 16, 16});
  for (std::size_t f = 0; f < 6; ++f)
    for (std::size_t p = 0; p < 256; ++p) x[f * 256 + p] = 0.25 * static_cast<double>(f) - 0.5;
  ad::Tape<double> tape;
  auto v = tape.constant(x);
  for (std::size_t k = 1; k <= 3; ++k)
    for (auto e : temporal::multires_residual(v, k, cfg).delta.value().data()) EXPECT_EQ(e, 0.0);
  EXPECT_THROW(temporal::multires_residual(v, 0, cfg), Error);
  EXPECT_THROW(temporal::multires_residual(v, 4, cfg), Error);
}

TEST(MultiRes, MatchesNaiveOracle) {
  temporal::MultiResConfig cfg;
  cfg.extent = 16;
  const auto x = random_tensor(Shape{2, 1, 3, 16, 16}, 8);
  ad::Tape<double> tape;
  auto v = tape.constant(x);
  for (std::size_t k = 1; k <= 3; ++k) {
    const auto a = temporal::scale_extent(16, k);
    EXPECT_LE(max_abs_diff(temporal::multires_residual(v, k, cfg).rearranged.value(), naive::rearrange(x, a)), 1e-12);
  }
}

TEST(CosineMask, EqualOperandsGiveEmptyMask) {
  const auto x = random_tensor(Shape{1, 1, 3, 4, 4}, 9, 0.5, 1.0);
  const auto r = temporal::cosine_mask(x, x, temporal::CosineMode::channel);
  for (auto m : r.mask.data()) EXPECT_EQ(m, 0.0);
  EXPECT_EQ(r.mean[0], 1.0);
}

TEST(CosineMask, HalfAlignedHalfOpposed) {
  Tensor<double> xt(Shape{1, 1, 2, 2, 2}, 1.0);
  Tensor<double> xk(xt.shape(), 1.0);
  for (std::size_t i = 4; i < 8; ++i) xk[i] = -2.0;
  const auto r = temporal::cosine_mask(xk, xt, temporal::CosineMode::channel);
  EXPECT_EQ(r.mean[0], 0.0);
  for (std::size_t i = 0; i < 8; ++i) EXPECT_EQ(r.mask[i], i < 4 ? 1.0 : 0.0);
}

TEST(CosineMask, BinaryAndConsistentWithMean) {
  for (auto mode : {temporal::CosineMode::channel, temporal::CosineMode::frame}) {
    const auto xk = random_tensor(Shape{2, 1, 3, 8, 8}, 10);
    const auto xt = random_tensor(Shape{2, 1, 3, 8, 8}, 11);
    const auto r = temporal::cosine_mask(xk, xt, mode);
    for (auto m : r.mask.data()) EXPECT_TRUE(m == 0.0 || m == 1.0);
    const std::size_t per = r.similarity.size() / 2;
    for (std::size_t b = 0; b < 2; ++b) {
      double s = 0;
      for (std::size_t i = 0; i < per; ++i) s += r.similarity[b * per + i];
      EXPECT_NEAR(s / static_cast<double>(per), r.mean[b], 1e-6);
    }
    EXPECT_EQ(r.mask, naive::cosine_mask(xk, xt, mode == temporal::CosineMode::frame));
  }
}

TEST(ContrastAggregate, MasksAndBetas) {
  const auto d1 = random_tensor(Shape{1, 1, 2, 4, 4}, 12);
  ad::Tape<double> tape;
  Tensor<double> zeros(d1.shape()), ones(d1.shape(), 1.0);
  Tensor<double> beta(Shape{1}, 2.0);
  auto dv = tape.constant(d1);
  for (auto v : temporal::contrast_aggregate<double>({dv}, {zeros}, tape.constant(beta)).value().data())
    EXPECT_EQ(v, 0.0);
  const auto twice = temporal::contrast_aggregate<double>({dv}, {ones}, tape.constant(beta)).value();
  for (std::size_t i = 0; i < d1.size(); ++i) EXPECT_EQ(twice[i], 2.0 * d1[i]);
  EXPECT_THROW(temporal::contrast_aggregate<double>({dv, dv}, {ones}, tape.constant(beta)), Error);
}

TEST(ContrastAggregate, MatchesTermwiseOracle) {
  std::vector<Tensor<double>> deltas, masks;
  for (std::uint64_t k = 0; k < 3; ++k) {
    deltas.push_back(random_tensor(Shape{2, 1, 3, 8, 8}, 20 + k));
    auto m = random_tensor(Shape{2, 1, 3, 8, 8}, 30 + k);
    for (auto& v : m.data()) v = v > 0 ? 1.0 : 0.0;
    masks.push_back(m);
  }
  Tensor<double> betas(Shape{3}, std::vector<double>{0.5, -1.25, 2.0});
  ad::Tape<double> tape;
  std::vector<ad::Var<double>> dv;
  for (auto& d : deltas) dv.push_back(tape.constant(d));
  const auto y = temporal::contrast_aggregate(dv, masks, tape.constant(betas)).value();
  EXPECT_LE(max_abs_diff(y, naive::contrast_aggregate(deltas, masks, {0.5, -1.25, 2.0})), 1e-12);
}

TEST(Fusion, SelectsEitherOperand) {
  const auto xt = random_tensor(Shape{2, 1, 3, 4, 4}, 13);
  const auto xd = random_tensor(Shape{2, 1, 3, 4, 4}, 14);
  ad::Tape<double> tape;
  Tensor<double> first(Shape{1, 2}, std::vector<double>{1, 0});
  Tensor<double> second(Shape{1, 2}, std::vector<double>{0, 1});
  Tensor<double> bias(Shape{1});
  auto a = tape.constant(xt), b = tape.constant(xd);
  EXPECT_EQ(temporal::contrast_aware_fusion(a, b, tape.constant(first), tape.constant(bias)).value().values(),
            xt.values());
  EXPECT_EQ(temporal::contrast_aware_fusion(a, b, tape.constant(second), tape.constant(bias)).value().values(),
            xd.values());
  const auto w = random_tensor(Shape{3, 2}, 15);
  const auto bb = random_tensor(Shape{3}, 16);
  EXPECT_LE(max_abs_diff(temporal::contrast_aware_fusion(a, b, tape.constant(w), tape.constant(bb)).value(),
                         naive::fusion(xt, xd, w, bb)),
            1e-12);
}

TEST(TemporalBlock, OutputShapeAndParameterCount) {
  auto cfg = temporal::TemporalFusionConfig::for_extent(8, 0.125, 3);
  cfg.out_channels = 2;
  std::mt19937_64 rng(17);
  auto params = temporal::TemporalFusionParams<double>::init(cfg, rng);
  const auto y = temporal::temporal_block_forward(random_tensor(Shape{2, 3, 1, 8, 8}, 18), params, cfg);
  EXPECT_EQ(y.shape(), (Shape{2, 2, 3, 8, 8}));
  const std::size_t c = 64;
  EXPECT_EQ(params.parameter_count(), 3 * c + 2 * c + c * c + c + 3 + 2 * 2 + 2);
  EXPECT_EQ(temporal::expected_parameter_count(cfg), params.parameter_count());
  for (auto b : params.betas.data()) EXPECT_EQ(b, 1.0);
}

TEST(TemporalBlock, ZeroBetasReduceToResidualPath) {
  auto cfg = temporal::TemporalFusionConfig::for_extent(8, 0.125, 3);
  std::mt19937_64 rng(19);
  auto params = temporal::TemporalFusionParams<double>::init(cfg, rng);
  for (auto& b : params.betas.data()) b = 0.0;
  const auto x = random_tensor(Shape{1, 3, 1, 8, 8}, 22);
  const auto y = temporal::temporal_block_forward(x, params, cfg);

  ad::Tape<double> tape;
  auto xb = tape.constant(x.reshaped(Shape{1, 3, 64}));
  auto xs = temporal::hybrid_temporal_shift(xb, cfg.shift);
  const auto tsm = temporal::tsm_fuse(xb, xs, tape.constant(params.dw_kernel), tape.constant(params.gn_gamma),
                                      tape.constant(params.gn_beta), tape.constant(params.pw_weight),
                                      tape.constant(params.pw_bias), cfg)
                       .value();
  for (std::size_t i = 0; i < y.size(); ++i)
    EXPECT_NEAR(y[i], params.fusion_weight[0] * tsm[i] + params.fusion_bias[0], 1e-12);
}

TEST(TemporalBlock, BatchPermutationCommutes) {
  auto cfg = temporal::TemporalFusionConfig::for_extent(8, 0.125, 3);
  std::mt19937_64 rng(20);
  auto params = temporal::TemporalFusionParams<double>::init(cfg, rng);
  const auto x = random_tensor(Shape{2, 3, 1, 8, 8}, 21);
  Tensor<double> swapped(x.shape());
  const std::size_t per = 3 * 64;
  std::copy_n(x.ptr(), per, swapped.ptr() + per);
  std::copy_n(x.ptr() + per, per, swapped.ptr());
  const auto y = temporal::temporal_block_forward(x, params, cfg);
  const auto ys = temporal::temporal_block_forward(swapped, params, cfg);
  for (std::size_t i = 0; i < per; ++i) {
    EXPECT_EQ(ys[i], y[per + i]);
    EXPECT_EQ(ys[per + i], y[i]);
  }
}

TEST(TemporalBlock, GradientsIncludingBetas) {
  auto cfg = temporal::TemporalFusionConfig::for_extent(8, 0.125, 3);
  std::mt19937_64 rng(22);
  auto params = temporal::TemporalFusionParams<double>::init(cfg, rng);
  for (std::size_t k = 0; k < 3; ++k) params.betas[k] = 1.0 + 0.3 * static_cast<double>(k);
  auto x = random_tensor(Shape{2, 3, 1, 8, 8}, 23);
  std::vector<CheckInput<double>> inputs{{"x", &x}};
  params.visit("temporal.", [&](const std::string& n, Tensor<double>& p) { inputs.push_back({n, &p}); });
  GradCheckOptions opts;
  opts.seed = 3;
  opts.max_coords_per_tensor = 16;
  const auto r = finite_diff_check<double>(
      [&](ad::Tape<double>&, const std::vector<ad::Var<double>>& v) {
        return temporal::temporal_block_forward(v[0], params, cfg);
      },
      inputs, opts);
  EXPECT_TRUE(r.passed) << r.worst_tensor << "[" << r.worst_index << "] " << r.max_error;
}

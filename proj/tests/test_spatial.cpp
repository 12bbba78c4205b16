#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "strnet/gradcheck.hpp"
#include "strnet/kernels.hpp"
#include "strnet/naive.hpp"
#include "strnet/spatial.hpp"

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

ops::AggregateOptions options(std::vector<std::size_t> strides) {
  ops::AggregateOptions o;
  o.strides = std::move(strides);
  return o;
}

}  // namespace

TEST(AxialContrast, ConstantMapHasUnitWeights) {
  Tensor<double> x(Shape{1, 1, 4, 4}, 0.3);
  for (auto axis : {ops::Axis::height, ops::Axis::width}) {
    const auto ac = ops::axial_contrast_weights(x, 2, axis, 0.1);
    for (auto r : ac.residual.data()) EXPECT_EQ(r, 0.0);
    for (auto w : ac.weight.data()) EXPECT_EQ(w, 1.0);
  }
}

TEST(AxialContrast, UnitStepRow) {
  Tensor<double> x(Shape{1, 1, 1, 2}, std::vector<double>{0, 1});
  const auto ac = ops::axial_contrast_weights(x, 1, ops::Axis::width, 0.1);
  EXPECT_EQ(ac.residual[0], 1.0);
  EXPECT_EQ(ac.residual[1], -1.0);
  EXPECT_NEAR(ac.weight[0], 4.5400e-5, 1e-9);
  EXPECT_EQ(ac.weight[0], ac.weight[1]);
  EXPECT_DOUBLE_EQ(ac.weight[0], std::exp(-10.0));
}

TEST(AxialContrast, MatchesNaiveOracle) {
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    const auto x = random_tensor(Shape{2, 1, 4, 4}, seed);
    for (std::size_t s : {1, 2, 3}) {
      const auto h = ops::axial_contrast_weights(x, s, ops::Axis::height, 0.1);
      const auto w = ops::axial_contrast_weights(x, s, ops::Axis::width, 0.1);
      const auto nh = naive::axial(x, s, true, 0.1);
      const auto nw = naive::axial(x, s, false, 0.1);
      EXPECT_LE(max_abs_diff(h.residual, nh.residual), 1e-12);
      EXPECT_LE(max_abs_diff(h.weight, nh.weight), 1e-12);
      EXPECT_LE(max_abs_diff(w.residual, nw.residual), 1e-12);
      EXPECT_LE(max_abs_diff(w.weight, nw.weight), 1e-12);
    }
  }
}

TEST(AxialContrast, WeightsInUnitIntervalAndDecreasing) {
  // A single row of increasing contrast: weight must fall strictly as |d| grows.
  std::vector<double> d{0.0, 1e-6, 0.01, 0.05, 0.2, 0.5, 1.3, 2.0};
  Tensor<double> x(Shape{1, 1, 1, 2 * d.size()});
  for (std::size_t k = 0; k < d.size(); ++k) x[2 * k + 1] = d[k];
  const auto ac = ops::axial_contrast_weights(x, 1, ops::Axis::width, 0.1);
  // Cell 2k + 1 sees neighbour 2k, which is zero.
  for (std::size_t k = 0; k < d.size(); ++k) {
    const double w = ac.weight[2 * k + 1];
    EXPECT_GT(w, 0.0);
    EXPECT_LE(w, 1.0);
    EXPECT_EQ(w == 1.0, d[k] == 0.0);
    if (k > 0) EXPECT_LT(w, ac.weight[2 * k - 1]);
  }
}

TEST(AxialContrast, RejectsStrideAtExtent) {
  Tensor<double> x(Shape{1, 1, 4, 4});
  EXPECT_THROW(ops::axial_contrast_weights(x, 4, ops::Axis::height, 0.1), Error);
  EXPECT_THROW(ops::axial_contrast_weights(x, 0, ops::Axis::width, 0.1), Error);
}

TEST(DirectionalAggregate, UnitStepRowValue) {
  Tensor<double> x(Shape{1, 1, 1, 2}, std::vector<double>{0, 1});
  const auto d = ops::directional_aggregate(x, options({1}));
  const double e = std::exp(-10.0);
  EXPECT_NEAR(d[0], e / (e + 1e-6), 1e-15);
  EXPECT_NEAR(d[0], 0.97845, 1e-5);
}

TEST(DirectionalAggregate, ConstantMapGivesZero) {
  Tensor<double> x(Shape{2, 1, 8, 8}, -1.25);
  for (auto v : ops::directional_aggregate(x, options({4, 2, 1})).data()) EXPECT_EQ(v, 0.0);
}

TEST(DirectionalAggregate, MatchesNaiveOracle) {
  std::mt19937_64 rng(5);
  for (int rep = 0; rep < 6; ++rep) {
    const bool square = rep % 2 == 0;
    const Shape shape = square ? Shape{2, 1, 8, 8} : Shape{2, 1, 5, 7};
    const auto x = random_tensor(shape, 100 + rep);
    const std::vector<std::size_t> strides = square ? std::vector<std::size_t>{4, 2, 1}
                                                    : std::vector<std::size_t>{3, 1};
    for (bool magnitude : {false, true}) {
      auto o = options(strides);
      o.mode = magnitude ? ops::MaxMode::magnitude : ops::MaxMode::signed_max;
      EXPECT_LE(max_abs_diff(ops::directional_aggregate(x, o), naive::aggregate(x, strides, 0.1, 1e-6, magnitude)),
                1e-12);
    }
  }
}

TEST(DirectionalAggregate, TranslationEquivariant) {
  const auto x = random_tensor(Shape{1, 1, 8, 8}, 7);
  const auto o = options({4, 2});
  const auto d = ops::directional_aggregate(x, o);
  for (std::size_t axis : {2, 3})
    for (std::int64_t s : {1, 3, -2}) {
      const auto lhs = ops::directional_aggregate(ops::circular_roll(x, axis, s), o);
      EXPECT_LE(max_abs_diff(lhs, ops::circular_roll(d, axis, s)), 1e-15);
    }
}

TEST(DirectionalAggregate, RejectsEmptyStrides) {
  Tensor<double> x(Shape{1, 1, 4, 4});
  EXPECT_THROW(ops::directional_aggregate(x, options({})), Error);
  EXPECT_THROW(ops::directional_aggregate(x, options({4})), Error);
}

TEST(PositionalEncoding, ZeroAndDeltaKernels) {
  auto x = random_tensor(Shape{2, 1, 5, 5}, 8);
  Tensor<double> zero(Shape{1, 3, 3});
  Tensor<double> delta(Shape{1, 3, 3});
  delta.at({0, 1, 1}) = 1.0;
  ad::Tape<double> tape;
  auto v = tape.constant(x);
  EXPECT_EQ(spatial::positional_encoding(v, tape.constant(zero)).value(), x);
  const auto twice = spatial::positional_encoding(v, tape.constant(delta)).value();
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(twice[i], 2.0 * x[i]);
}

TEST(PositionalEncoding, MatchesConvThenAdd) {
  const auto x = random_tensor(Shape{2, 1, 6, 6}, 9);
  const auto k = random_tensor(Shape{1, 3, 3}, 10);
  ad::Tape<double> tape;
  const auto y = spatial::positional_encoding(tape.constant(x), tape.constant(k)).value();
  auto expect = naive::depthwise(x, k);
  for (std::size_t i = 0; i < x.size(); ++i) expect[i] += x[i];
  EXPECT_LE(max_abs_diff(y, expect), 1e-12);
}

TEST(SpatialBlock, PreservesShape) {
  std::mt19937_64 rng(11);
  for (std::size_t a : {8, 16}) {
    spatial::AxialGraphConfig cfg;
    cfg.strides = a == 8 ? std::vector<std::size_t>{4, 2, 1} : std::vector<std::size_t>{8, 4, 2};
    auto params = spatial::SpatialBlockParams<double>::init(cfg, rng);
    const auto x = random_tensor(Shape{3, 1, a, a}, 12);
    EXPECT_EQ(spatial::spatial_block_forward(x, params, cfg).shape(), x.shape());
  }
}

TEST(SpatialBlock, IdentityParamsFixConstantInput) {
  spatial::AxialGraphConfig cfg;
  auto params = spatial::SpatialBlockParams<double>::identity(cfg);
  Tensor<double> x(Shape{2, 1, 16, 16}, 0.7);
  EXPECT_EQ(spatial::spatial_block_forward(x, params, cfg), x);
}

TEST(SpatialBlock, BatchPermutationCommutes) {
  std::mt19937_64 rng(13);
  spatial::AxialGraphConfig cfg;
  cfg.strides = {4, 2, 1};
  auto params = spatial::SpatialBlockParams<double>::init(cfg, rng);
  const auto x = random_tensor(Shape{3, 1, 8, 8}, 14);
  const std::size_t per = 64;
  Tensor<double> swapped(x.shape());
  const std::size_t perm[3] = {2, 0, 1};
  for (std::size_t n = 0; n < 3; ++n)
    std::copy_n(x.ptr() + perm[n] * per, per, swapped.ptr() + n * per);
  const auto y = spatial::spatial_block_forward(x, params, cfg);
  const auto ys = spatial::spatial_block_forward(swapped, params, cfg);
  for (std::size_t n = 0; n < 3; ++n)
    for (std::size_t i = 0; i < per; ++i) EXPECT_EQ(ys[n * per + i], y[perm[n] * per + i]);
}

TEST(SpatialBlock, ParameterCountHasClosedForm) {
  std::mt19937_64 rng(15);
  spatial::AxialGraphConfig cfg;
  auto params = spatial::SpatialBlockParams<float>::init(cfg, rng);
  EXPECT_EQ(params.parameter_count(), spatial::expected_parameter_count(cfg));
  EXPECT_EQ(spatial::expected_parameter_count(cfg), 2u * (9 + 1 + 1 + 1 + 1));
  EXPECT_EQ(params.layers[0].norm_gamma[0], 1.0f);
  EXPECT_EQ(params.layers[0].norm_beta[0], 0.0f);
}

TEST(SpatialBlock, ConfigValidation) {
  spatial::AxialGraphConfig cfg;
  EXPECT_NO_THROW(cfg.validate(16));
  EXPECT_THROW(cfg.validate(8), Error);
  cfg.temperature = 0;
  EXPECT_THROW(cfg.validate(16), Error);
}

TEST(SpatialBlock, GradientOfMeanMatchesFiniteDifferences) {
  std::mt19937_64 rng(16);
  spatial::AxialGraphConfig cfg;
  cfg.strides = {4, 2, 1};
  auto params = spatial::SpatialBlockParams<double>::init(cfg, rng);
  auto x = random_tensor(Shape{2, 1, 8, 8}, 17, 0, 0.5);
  GradCheckOptions opts;
  opts.seed = 1;
  const auto r = finite_diff_check<double>(
      [&](ad::Tape<double>&, const std::vector<ad::Var<double>>& v) {
        return ad::mean(spatial::spatial_block_forward(v[0], params, cfg));
      },
      {{"x", &x}}, opts);
  EXPECT_TRUE(r.passed) << r.worst_tensor << "[" << r.worst_index << "] " << r.max_error;
}

#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "strnet/autodiff.hpp"
#include "strnet/gradcheck.hpp"
#include "strnet/kernels.hpp"
#include "strnet/naive.hpp"

using namespace strnet;

namespace {

template <typename T>
Tensor<T> random_tensor(const Shape& shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(lo, hi);
  Tensor<T> t(shape);
  for (auto& v : t.data()) v = static_cast<T>(dist(rng));
  return t;
}

double max_abs_diff(const Tensor<double>& a, const Tensor<double>& b) {
  EXPECT_EQ(a.shape(), b.shape());
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST(Tensor, ShapeAndDataMustAgree) {
  EXPECT_THROW(Tensor<float>(Shape{2, 3}, std::vector<float>(5)), ShapeError);
  EXPECT_THROW(Tensor<float>(Shape{2, 0}), ShapeError);
  Tensor<double> t(Shape{2, 3}, 1.5);
  EXPECT_EQ(t.size(), 6u);
  EXPECT_EQ(t.at({1, 2}), 1.5);
  EXPECT_THROW(t.at({2, 0}), ShapeError);
  EXPECT_THROW(t.reshaped(Shape{4}), ShapeError);
}

TEST(Tensor, GradientBufferMatchesShape) {
  Tensor<double> t(Shape{3});
  EXPECT_FALSE(t.has_grad());
  t.accumulate_grad(std::vector<double>{1, 2, 3});
  t.accumulate_grad(std::vector<double>{1, 1, 1});
  EXPECT_EQ(t.grad()[2], 4.0);
  EXPECT_THROW(t.accumulate_grad(std::vector<double>{1}), ShapeError);
  t.zero_grad();
  EXPECT_EQ(t.grad()[0], 0.0);
}

TEST(CircularRoll, ShiftsIndicesForward) {
  Tensor<double> x(Shape{4}, std::vector<double>{1, 2, 3, 4});
  EXPECT_EQ(ops::circular_roll(x, 0, 1).values(), (std::vector<double>{4, 1, 2, 3}));
  EXPECT_EQ(ops::circular_roll(x, 0, -1).values(), (std::vector<double>{2, 3, 4, 1}));
  EXPECT_EQ(ops::circular_roll(x, 0, 0), x);
}

TEST(CircularRoll, FullPeriodAndInverse) {
  const auto x = random_tensor<double>(Shape{3, 5}, 3);
  EXPECT_EQ(ops::circular_roll(x, 1, 5), x);
  EXPECT_EQ(ops::circular_roll(x, 1, -10), x);
  for (std::int64_t s = -7; s <= 7; ++s)
    EXPECT_EQ(ops::circular_roll(ops::circular_roll(x, 0, s), 0, -s), x);
  EXPECT_THROW(ops::circular_roll(x, 2, 1), ShapeError);
}

TEST(AdaptivePool, Examples) {
  Tensor<double> ones(Shape{1, 1, 4, 4}, 1.0);
  const auto p = ops::adaptive_avg_pool2d(ones, 2, 2);
  EXPECT_EQ(p.shape(), (Shape{1, 1, 2, 2}));
  for (auto v : p.data()) EXPECT_EQ(v, 1.0);

  Tensor<double> q(Shape{1, 1, 2, 2}, std::vector<double>{1, 2, 3, 4});
  EXPECT_EQ(ops::adaptive_avg_pool2d(q, 1, 1).item(), 2.5);
}

TEST(AdaptivePool, BinsOverlapWhenUneven) {
  // 5 -> 3: [0,2), [1,4), [3,5)
  EXPECT_EQ(ops::adaptive_bin(0, 5, 3).begin, 0u);
  EXPECT_EQ(ops::adaptive_bin(0, 5, 3).end, 2u);
  EXPECT_EQ(ops::adaptive_bin(1, 5, 3).begin, 1u);
  EXPECT_EQ(ops::adaptive_bin(1, 5, 3).end, 4u);
  EXPECT_EQ(ops::adaptive_bin(2, 5, 3).begin, 3u);
  EXPECT_EQ(ops::adaptive_bin(2, 5, 3).end, 5u);
}

TEST(AdaptivePool, MatchesNaiveOracle) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto x = random_tensor<double>(Shape{2, 3, 7, 5}, seed);
    EXPECT_LE(max_abs_diff(ops::adaptive_avg_pool2d(x, 4, 4), naive::pool(x, 4, 4)), 1e-12);
  }
}

TEST(AdaptivePool, EvenBinsPreserveGlobalMean) {
  const auto x = random_tensor<double>(Shape{1, 1, 8, 12}, 9);
  const auto p = ops::adaptive_avg_pool2d(x, 4, 3);
  double mx = 0, mp = 0;
  for (auto v : x.data()) mx += v;
  for (auto v : p.data()) mp += v;
  EXPECT_NEAR(mx / static_cast<double>(x.size()), mp / static_cast<double>(p.size()), 1e-14);
}

TEST(AdaptivePool, RejectsGrowingOutput) {
  Tensor<double> x(Shape{1, 1, 2, 2});
  EXPECT_THROW(ops::adaptive_avg_pool2d(x, 3, 2), Error);
}

TEST(UpsampleNearest, ExamplesAndOracle) {
  Tensor<double> seven(Shape{1, 1, 1, 1}, 7.0);
  const auto u = ops::upsample_nearest(seven, 2, 2);
  for (auto v : u.data()) EXPECT_EQ(v, 7.0);

  const auto x = random_tensor<double>(Shape{1, 2, 3, 3}, 4);
  EXPECT_EQ(ops::upsample_nearest(x, 3, 3), x);
  EXPECT_LE(max_abs_diff(ops::upsample_nearest(x, 6, 6), naive::upsample(x, 6, 6)), 1e-12);
}

TEST(PointwiseConv, DotProductAndIdentity) {
  Tensor<double> x(Shape{1, 2, 1}, std::vector<double>{1, 2});
  Tensor<double> w(Shape{1, 2}, std::vector<double>{1, 1});
  Tensor<double> b(Shape{1}, 0.0);
  EXPECT_EQ(ops::pointwise_conv(x, w, b).item(), 3.0);

  const auto y = random_tensor<double>(Shape{2, 3, 4, 4}, 5);
  Tensor<double> eye(Shape{3, 3}, std::vector<double>{1, 0, 0, 0, 1, 0, 0, 0, 1});
  EXPECT_EQ(ops::pointwise_conv(y, eye, Tensor<double>(Shape{3})), y);
}

TEST(PointwiseConv, MatchesNaiveOracle) {
  const auto x = random_tensor<double>(Shape{2, 3, 4, 5}, 6);
  const auto w = random_tensor<double>(Shape{4, 3}, 7);
  const auto b = random_tensor<double>(Shape{4}, 8);
  EXPECT_LE(max_abs_diff(ops::pointwise_conv(x, w, b), naive::pointwise(x, w, b)), 1e-12);
  EXPECT_THROW(ops::pointwise_conv(x, random_tensor<double>(Shape{4, 2}, 1), b), ShapeError);
}

TEST(DepthwiseConv, TemporalAverageWithZeroPadding) {
  // Three frames of one pixel, kernel [1, 1, 1] / 3 along the first spatial axis.
  Tensor<double> x(Shape{1, 1, 3, 1}, std::vector<double>{0, 3, 0});
  Tensor<double> k(Shape{1, 3, 1}, 1.0 / 3.0);
  const auto y = ops::depthwise_conv2d(x, k);
  for (auto v : y.data()) EXPECT_NEAR(v, 1.0, 1e-15);
}

TEST(DepthwiseConv, CentredDeltaIsIdentity) {
  const auto x = random_tensor<double>(Shape{2, 3, 5, 4}, 10);
  Tensor<double> k(Shape{3, 3, 3});
  for (std::size_t c = 0; c < 3; ++c) k.at({c, 1, 1}) = 1.0;
  EXPECT_EQ(ops::depthwise_conv2d(x, k), x);
  EXPECT_THROW(ops::depthwise_conv2d(x, Tensor<double>(Shape{3, 2, 3})), Error);
}

TEST(DepthwiseConv, MatchesNaiveOracle) {
  const auto x = random_tensor<double>(Shape{2, 3, 6, 5}, 11);
  const auto k = random_tensor<double>(Shape{3, 3, 3}, 12);
  EXPECT_LE(max_abs_diff(ops::depthwise_conv2d(x, k), naive::depthwise(x, k)), 1e-12);
}

TEST(GroupNorm, NormalizesEachGroup) {
  const auto x = random_tensor<double>(Shape{3, 8, 4, 4}, 13, -2, 5);
  Tensor<double> gamma(Shape{8}, 1.0), beta(Shape{8}, 0.0);
  const auto r = ops::group_norm(x, 4, gamma, beta, 1e-8);
  const std::size_t per = 2 * 16;
  for (std::size_t g = 0; g < 12; ++g) {
    double m = 0, v = 0;
    for (std::size_t i = 0; i < per; ++i) m += r.out[g * per + i];
    m /= per;
    for (std::size_t i = 0; i < per; ++i) v += (r.out[g * per + i] - m) * (r.out[g * per + i] - m);
    EXPECT_LE(std::abs(m), 1e-6);
    EXPECT_NEAR(v / per, 1.0, 1e-4);
  }
  EXPECT_THROW(ops::group_norm(x, 3, gamma, beta, 1e-8), Error);
}

TEST(GroupNorm, ConstantInputGivesAffineOffset) {
  Tensor<double> x(Shape{1, 2, 3, 3}, 4.0);
  Tensor<double> gamma(Shape{2}, 2.0), beta(Shape{2}, std::vector<double>{0.5, -1});
  const auto r = ops::group_norm(x, 1, gamma, beta, 1e-8);
  for (std::size_t i = 0; i < 9; ++i) EXPECT_EQ(r.out[i], 0.5);
  for (std::size_t i = 9; i < 18; ++i) EXPECT_EQ(r.out[i], -1.0);
}

TEST(Gelu, Limits) {
  EXPECT_EQ(ops::gelu_scalar(0.0), 0.0);
  EXPECT_NEAR(ops::gelu_scalar(10.0), 10.0, 1e-12);
  EXPECT_NEAR(ops::gelu_scalar(-10.0), 0.0, 1e-12);
  EXPECT_NEAR(ops::gelu_scalar(1.0), 0.8413447460685429, 1e-15);
}

TEST(CosineSimilarity, SignAndDegenerateCases) {
  const auto a = random_tensor<double>(Shape{5}, 14);
  Tensor<double> neg(Shape{5});
  for (std::size_t i = 0; i < 5; ++i) neg[i] = -a[i];
  EXPECT_NEAR(ops::cosine_similarity(a, a, 0, 1e-8).item(), 1.0, 1e-15);
  EXPECT_NEAR(ops::cosine_similarity(a, neg, 0, 1e-8).item(), -1.0, 1e-15);
  EXPECT_EQ(ops::cosine_similarity(Tensor<double>(Shape{5}), a, 0, 1e-8).item(), 0.0);
}

TEST(CosineSimilarity, ReducesOneAxis) {
  const auto a = random_tensor<double>(Shape{2, 3, 4}, 15);
  const auto b = random_tensor<double>(Shape{2, 3, 4}, 16);
  const auto s = ops::cosine_similarity(a, b, 1, 1e-8);
  ASSERT_EQ(s.shape(), (Shape{2, 4}));
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t k = 0; k < 4; ++k) {
      double dot = 0, na = 0, nb = 0;
      for (std::size_t c = 0; c < 3; ++c) {
        dot += a.at({i, c, k}) * b.at({i, c, k});
        na += a.at({i, c, k}) * a.at({i, c, k});
        nb += b.at({i, c, k}) * b.at({i, c, k});
      }
      EXPECT_NEAR(s.at({i, k}), dot / std::sqrt(na * nb), 1e-12);
    }
}

TEST(Ops, ArePure) {
  const auto x = random_tensor<float>(Shape{2, 1, 8, 8}, 17);
  ops::AggregateOptions opts;
  opts.strides = {4, 2};
  EXPECT_EQ(ops::directional_aggregate(x, opts), ops::directional_aggregate(x, opts));
  EXPECT_EQ(ops::gelu(x), ops::gelu(x));
}

TEST(Backward, SumGivesOnes) {
  auto x = random_tensor<double>(Shape{2, 3}, 18);
  x.set_requires_grad(true);
  ad::Tape<double> tape;
  tape.backward(ad::sum(tape.leaf(x)));
  for (auto g : x.grad()) EXPECT_EQ(g, 1.0);
}

TEST(Backward, HalfSquaredNormGivesInput) {
  auto x = random_tensor<double>(Shape{7}, 19);
  x.set_requires_grad(true);
  ad::Tape<double> tape;
  tape.backward(ad::scale(ad::sum(ad::square(tape.leaf(x))), 0.5));
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_DOUBLE_EQ(x.grad()[i], x[i]);
}

TEST(Backward, AccumulatesUntilZeroed) {
  auto x = random_tensor<double>(Shape{3}, 20);
  x.set_requires_grad(true);
  for (int k = 0; k < 2; ++k) {
    ad::Tape<double> tape;
    tape.backward(ad::sum(tape.leaf(x)));
  }
  for (auto g : x.grad()) EXPECT_EQ(g, 2.0);
  x.zero_grad();
  for (auto g : x.grad()) EXPECT_EQ(g, 0.0);
}

TEST(Backward, LossWithoutOpsLeavesZeroGradient) {
  auto x = random_tensor<double>(Shape{1}, 21);
  x.set_requires_grad(true);
  Tensor<double> other(Shape{1}, 3.0);
  ad::Tape<double> tape;
  tape.leaf(x);
  auto c = tape.constant(other);
  tape.backward(c);
  EXPECT_EQ(tape.num_ops(), 0u);
  for (auto g : x.grad()) EXPECT_EQ(g, 0.0);
}

TEST(Backward, RejectsNonScalarAndForeignLoss) {
  auto x = random_tensor<double>(Shape{3}, 22);
  ad::Tape<double> tape, other;
  auto v = tape.leaf(x);
  EXPECT_THROW(tape.backward(v), Error);
  auto s = ad::sum(other.leaf(x));
  EXPECT_THROW(tape.backward(s), Error);
}

TEST(FiniteDiff, IdentityHasNoError) {
  Tensor<double> x(Shape{4}, std::vector<double>{0.1, -2.0, 3.5, 0.75});
  const auto r = finite_diff_check<double>([](ad::Var<double> v) { return v; }, x, 1e-4);
  EXPECT_TRUE(r.passed);
  EXPECT_LE(r.max_error, 1e-9);
}

TEST(FiniteDiff, GeluPassesOnSeveralSeeds) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    auto x = random_tensor<double>(Shape{3, 4}, seed, -3, 3);
    const auto r = finite_diff_check<double>([](ad::Var<double> v) { return ad::gelu(v); }, x, 1e-4);
    EXPECT_TRUE(r.passed) << "seed " << seed << " error " << r.max_error;
  }
}

TEST(FiniteDiff, FlagsAWrongGradient) {
  auto x = random_tensor<double>(Shape{5}, 23);
  const auto r = finite_diff_check<double>(
      [](ad::Var<double> v) {
        auto& tape = *v.tape;
        return tape.record(v.value(), {v}, [v](ad::Tape<double>& t, std::size_t node) {
          Tensor<double> g = t.adjoint(node);
          for (auto& e : g.data()) e *= 2.0;
          t.accumulate(v, g);
        });
      },
      x, 1e-4);
  EXPECT_FALSE(r.passed);
  EXPECT_NEAR(r.max_error, 0.5, 1e-6);
}

TEST(FiniteDiff, PrimitivesPass) {
  std::mt19937_64 rng(24);
  auto x = random_tensor<double>(Shape{2, 2, 4, 4}, 25);
  auto k = random_tensor<double>(Shape{2, 3, 3}, 26);
  auto w = random_tensor<double>(Shape{3, 2}, 27);
  auto b = random_tensor<double>(Shape{3}, 28);
  GradCheckOptions opts;
  opts.seed = 1;
  const auto r = finite_diff_check<double>(
      [](ad::Tape<double>&, const std::vector<ad::Var<double>>& v) {
        auto h = ad::depthwise_conv2d(v[0], v[1]);
        h = ad::pointwise_conv(ad::gelu(h), v[2], v[3]);
        return ad::upsample_nearest(ad::adaptive_avg_pool2d(ad::circular_roll(h, 3, 1), 2, 2), 4, 4);
      },
      {{"x", &x}, {"k", &k}, {"w", &w}, {"b", &b}}, opts);
  EXPECT_TRUE(r.passed) << r.worst_tensor << "[" << r.worst_index << "] " << r.max_error;
}

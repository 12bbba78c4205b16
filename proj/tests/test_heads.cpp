#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "strnet/gradcheck.hpp"
#include "strnet/heads.hpp"

using namespace strnet;

namespace {

Tensor<double> random_tensor(const Shape& shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(lo, hi);
  Tensor<double> t(shape);
  for (auto& v : t.data()) v = dist(rng);
  return t;
}

double scalar(ad::Var<double> v) { return v.value().item(); }

}  // namespace

TEST(Encoder, SequenceShapeAndSharedWeights) {
  heads::EncoderConfig cfg;
  cfg.extent = 8;
  std::mt19937_64 rng(1);
  auto params = heads::EncoderParams<double>::init(cfg, rng);
  auto obs = random_tensor(Shape{1, 4, 1, 15, 15}, 2);
  Tensor<double> goal(Shape{1, 1, 15, 15});
  std::copy_n(obs.ptr() + 3 * 225, 225, goal.ptr());

  ad::Tape<double> tape;
  const auto seq = heads::encode_sequence(tape.constant(obs), tape.constant(goal), params, cfg).value();
  ASSERT_EQ(seq.shape(), (Shape{1, 5, 1, 8, 8}));
  for (std::size_t i = 0; i < 64; ++i) EXPECT_EQ(seq[4 * 64 + i], seq[3 * 64 + i]);
  EXPECT_EQ(params.parameter_count(), heads::expected_parameter_count(cfg));
}

TEST(Encoder, RejectsMismatchedImages) {
  heads::EncoderConfig cfg;
  cfg.extent = 8;
  std::mt19937_64 rng(3);
  auto params = heads::EncoderParams<double>::init(cfg, rng);
  ad::Tape<double> tape;
  auto obs = tape.constant(Tensor<double>(Shape{1, 2, 1, 15, 15}));
  auto goal = tape.constant(Tensor<double>(Shape{1, 1, 13, 13}));
  EXPECT_THROW(heads::encode_sequence(obs, goal, params, cfg), Error);
}

TEST(Encoder, GradientMatchesFiniteDifferences) {
  heads::EncoderConfig cfg;
  cfg.extent = 8;
  std::mt19937_64 rng(4);
  auto params = heads::EncoderParams<double>::init(cfg, rng);
  auto obs = random_tensor(Shape{2, 3, 1, 9, 9}, 5);
  auto goal = random_tensor(Shape{2, 1, 9, 9}, 6);
  std::vector<CheckInput<double>> inputs{{"obs", &obs}, {"goal", &goal}};
  params.visit("encoder.", [&](const std::string& n, Tensor<double>& p) { inputs.push_back({n, &p}); });
  GradCheckOptions opts;
  opts.seed = 2;
  opts.max_coords_per_tensor = 20;
  const auto r = finite_diff_check<double>(
      [&](ad::Tape<double>&, const std::vector<ad::Var<double>>& v) {
        return heads::encode_sequence(v[0], v[1], params, cfg);
      },
      inputs, opts);
  EXPECT_TRUE(r.passed) << r.worst_tensor << "[" << r.worst_index << "] " << r.max_error;
}

TEST(Context, FlattensTrailingExtents) {
  ad::Tape<double> tape;
  const auto fused = random_tensor(Shape{1, 1, 5, 8, 8}, 7);
  const auto c = heads::build_context(tape.constant(fused)).value();
  ASSERT_EQ(c.shape(), (Shape{1, 320}));
  EXPECT_EQ(c.values(), fused.values());
  EXPECT_EQ(c.reshaped(fused.shape()), fused);
  for (auto v : heads::build_context(tape.constant(Tensor<double>(Shape{2, 3, 4}))).value().data()) EXPECT_EQ(v, 0.0);
}

TEST(Schedule, LinearBetasAndDecreasingProducts) {
  const auto s = heads::DiffusionSchedule::linear(10);
  ASSERT_EQ(s.steps(), 10u);
  EXPECT_DOUBLE_EQ(s.beta(1), 1e-4);
  EXPECT_DOUBLE_EQ(s.beta(10), 0.2);
  for (std::size_t n = 1; n <= 10; ++n) {
    EXPECT_GT(s.beta(n), 0.0);
    EXPECT_LT(s.beta(n), 1.0);
    if (n > 1) EXPECT_LT(s.cumulative(n), s.cumulative(n - 1));
  }
  EXPECT_THROW(s.beta(0), Error);
  EXPECT_THROW(s.beta(11), Error);
}

TEST(NoiseActions, ReproducibleAndStepChecked) {
  const auto s = heads::DiffusionSchedule::linear(10);
  const auto a = random_tensor(Shape{2, 8, 2}, 8);
  const auto r1 = heads::noise_actions(a, 3, s, 42);
  const auto r2 = heads::noise_actions(a, 3, s, 42);
  EXPECT_EQ(r1.noisy, r2.noisy);
  EXPECT_EQ(r1.epsilon, r2.epsilon);
  EXPECT_NE(heads::noise_actions(a, 3, s, 43).epsilon, r1.epsilon);
  EXPECT_THROW(heads::noise_actions(a, 0, s, 1), Error);
  EXPECT_THROW(heads::noise_actions(a, 11, s, 1), Error);
}

TEST(NoiseActions, NoNoiseLimit) {
  heads::DiffusionSchedule s;
  s.betas = {0.0};
  s.alphas = {1.0};
  s.alpha_bar = {1.0};
  const auto a = random_tensor(Shape{1, 8, 2}, 9);
  EXPECT_EQ(heads::noise_actions_with(a, 1, s, random_tensor(Shape{1, 8, 2}, 10)), a);
}

TEST(NoiseActions, VarianceMatchesSchedule) {
  const auto s = heads::DiffusionSchedule::linear(10);
  const std::size_t draws = 100000;
  Tensor<double> a(Shape{draws}, -0.3);
  for (std::size_t n : {1, 6, 10}) {
    const auto r = heads::noise_actions(a, n, s, 100 + n);
    const double sa = std::sqrt(s.cumulative(n));
    double m = 0, v = 0;
    for (std::size_t i = 0; i < draws; ++i) m += r.noisy[i] - sa * a[i];
    m /= draws;
    for (std::size_t i = 0; i < draws; ++i) v += std::pow(r.noisy[i] - sa * a[i] - m, 2);
    v /= draws;
    const double expected = 1.0 - s.cumulative(n);
    EXPECT_LE(std::abs(v - expected) / expected, 0.02) << "n = " << n;
  }
}

TEST(DenoisePredict, ShapeDeterminismAndGradient) {
  heads::HeadConfig cfg;
  cfg.context_dim = 12;
  cfg.hidden = 16;
  std::mt19937_64 rng(11);
  auto params = heads::DiffusionHeadParams<double>::init(cfg, rng);
  EXPECT_EQ(params.parameter_count(), heads::expected_diffusion_head_count(cfg));
  auto noisy = random_tensor(Shape{2, 8, 2}, 12);
  auto ctx = random_tensor(Shape{2, 12}, 13);
  const std::vector<std::size_t> steps{3, 9};
  ad::Tape<double> tape;
  const auto e1 = heads::denoise_predict(tape.constant(noisy), steps, tape.constant(ctx), params, cfg).value();
  const auto e2 = heads::denoise_predict(tape.constant(noisy), steps, tape.constant(ctx), params, cfg).value();
  EXPECT_EQ(e1.shape(), noisy.shape());
  EXPECT_EQ(e1, e2);

  std::vector<CheckInput<double>> inputs{{"noisy", &noisy}, {"context", &ctx}};
  params.visit("diffusion.", [&](const std::string& n, Tensor<double>& p) { inputs.push_back({n, &p}); });
  GradCheckOptions opts;
  opts.seed = 4;
  opts.max_coords_per_tensor = 24;
  const auto r = finite_diff_check<double>(
      [&](ad::Tape<double>&, const std::vector<ad::Var<double>>& v) {
        return heads::denoise_predict(v[0], steps, v[1], params, cfg);
      },
      inputs, opts);
  EXPECT_TRUE(r.passed) << r.worst_tensor << "[" << r.worst_index << "] " << r.max_error;
}

TEST(SampleActions, OracleInvertsSingleStep) {
  const auto one = heads::DiffusionSchedule::linear(1, 0.2, 0.2);
  const auto a = random_tensor(Shape{1, 8, 2}, 14);
  heads::EpsilonPredictor<double> oracle = [&](const Tensor<double>& x, std::size_t n) {
    const double bar = one.cumulative(n);
    Tensor<double> eps(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) eps[i] = (x[i] - std::sqrt(bar) * a[i]) / std::sqrt(1.0 - bar);
    return eps;
  };
  const auto got = heads::sample_actions<double>(a.shape(), one, oracle, 5);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(got[i], a[i], 1e-5);
}

TEST(SampleActions, PureAndFinite) {
  const auto s = heads::DiffusionSchedule::linear(10);
  heads::HeadConfig cfg;
  cfg.context_dim = 20;
  std::mt19937_64 rng(15);
  auto params = heads::DiffusionHeadParams<double>::init(cfg, rng);
  const auto ctx = random_tensor(Shape{1, 20}, 16);
  EXPECT_EQ(heads::sample_actions(ctx, s, params, cfg, 3), heads::sample_actions(ctx, s, params, cfg, 3));
  for (std::uint64_t seed = 0; seed < 100; ++seed)
    EXPECT_TRUE(heads::sample_actions(ctx, s, params, cfg, seed).all_finite());
}

TEST(SampleActions, NonFiniteIsAnError) {
  const auto s = heads::DiffusionSchedule::linear(3);
  heads::EpsilonPredictor<double> bad = [](const Tensor<double>& x, std::size_t) {
    return Tensor<double>(x.shape(), std::nan(""));
  };
  EXPECT_THROW(heads::sample_actions<double>(Shape{1, 8, 2}, s, bad, 1), NumericError);
}

TEST(DiffusionLoss, Examples) {
  ad::Tape<double> tape;
  const auto eps = random_tensor(Shape{2, 3, 2}, 17);
  EXPECT_EQ(scalar(heads::diffusion_loss(tape.constant(eps), eps, Tensor<double>(Shape{2, 3}, 1.0))), 0.0);

  Tensor<double> pred(Shape{1, 2, 1}, std::vector<double>{1, -1});
  Tensor<double> mask(Shape{1, 2}, std::vector<double>{1, 0});
  EXPECT_EQ(scalar(heads::diffusion_loss(tape.constant(pred), Tensor<double>(Shape{1, 2, 1}), mask)), 1.0);

  const auto p = random_tensor(Shape{1, 4, 2}, 18);
  const auto t = random_tensor(Shape{1, 4, 2}, 19);
  double mse = 0;
  for (std::size_t i = 0; i < p.size(); ++i) mse += (p[i] - t[i]) * (p[i] - t[i]);
  EXPECT_NEAR(scalar(heads::diffusion_loss(tape.constant(p), t, Tensor<double>(Shape{1, 4}, 1.0))), mse / 4, 1e-15);
  EXPECT_EQ(scalar(heads::diffusion_loss(tape.constant(p), t, Tensor<double>(Shape{1, 4}))), 0.0);
}

TEST(DiffusionLoss, MaskedEntriesNeverMatter) {
  ad::Tape<double> tape;
  auto pred = random_tensor(Shape{2, 4, 2}, 20);
  const auto eps = random_tensor(Shape{2, 4, 2}, 21);
  Tensor<double> mask(Shape{2, 4}, std::vector<double>{1, 1, 0, 0, 1, 0, 1, 0});
  const double base = scalar(heads::diffusion_loss(tape.constant(pred), eps, mask));
  for (std::size_t i = 0; i < 8; ++i)
    if (mask[i] == 0) pred[2 * i] = pred[2 * i + 1] = 1e300;
  EXPECT_EQ(scalar(heads::diffusion_loss(tape.constant(pred), eps, mask)), base);
}

TEST(DistanceHead, NonNegativeAndLoss) {
  heads::HeadConfig cfg;
  cfg.context_dim = 10;
  std::mt19937_64 rng(22);
  auto params = heads::DistanceHeadParams<double>::init(cfg, rng);
  EXPECT_EQ(params.parameter_count(), heads::expected_distance_head_count(cfg));
  ad::Tape<double> tape;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto ctx = random_tensor(Shape{4, 10}, seed, -50, 50);
    for (auto v : heads::distance_predict(tape.constant(ctx), params).value().data()) EXPECT_GE(v, 0.0);
  }
  Tensor<double> d(Shape{1}, 1.0);
  EXPECT_EQ(scalar(heads::distance_loss(tape.constant(Tensor<double>(Shape{1, 1}, 3.0)), d)), 4.0);
  EXPECT_EQ(scalar(heads::distance_loss(tape.constant(Tensor<double>(Shape{1, 1}, 1.0)), d)), 0.0);
  EXPECT_THROW(heads::distance_loss(tape.constant(Tensor<double>(Shape{1, 1})), Tensor<double>(Shape{1}, -1.0)),
               Error);
}

TEST(TotalLoss, WeightingAndEndpoints) {
  EXPECT_NEAR(heads::total_loss(4.0, 1.0, 1e-4), 1.0003, 1e-15);
  EXPECT_EQ(heads::total_loss(4.0, 1.0, 0.0), 1.0);
  EXPECT_EQ(heads::total_loss(4.0, 1.0, 1.0), 4.0);
  EXPECT_THROW(heads::total_loss(1.0, 1.0, 1.5), Error);
  EXPECT_THROW(heads::total_loss(1.0, 1.0, -0.1), Error);
  ad::Tape<double> tape;
  auto ld = tape.constant(Tensor<double>::scalar(4.0));
  auto lf = tape.constant(Tensor<double>::scalar(1.0));
  EXPECT_EQ(scalar(heads::total_loss(ld, lf, 0.0)), 1.0);
  EXPECT_EQ(scalar(heads::total_loss(ld, lf, 1.0)), 4.0);
}

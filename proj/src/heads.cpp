#include "strnet/heads.hpp"

#include <cmath>
#include <string>

namespace strnet::heads {

// ---------------------------------------------------------------------------
// Encoder

std::size_t expected_parameter_count(const EncoderConfig& cfg) {
  const std::size_t c = cfg.channels;
  return (c * 9 + c) + (c * c * 9 + c) + (c * 9 + 1);
}

namespace {
// sqrt(6): keeps activation variance roughly constant through the GELU stack.
constexpr double kEncoderGain = 2.449489742783178;
}  // namespace

template <typename T>
EncoderParams<T> EncoderParams<T>::init(const EncoderConfig& cfg, std::mt19937_64& rng) {
  const std::size_t c = cfg.channels;
  EncoderParams p;
  p.conv1_weight = uniform_fan_in<T>(Shape{c, 1, 3, 3}, 9, rng, kEncoderGain);
  p.conv1_bias = Tensor<T>(Shape{c});
  p.conv2_weight = uniform_fan_in<T>(Shape{c, c, 3, 3}, 9 * c, rng, kEncoderGain);
  p.conv2_bias = Tensor<T>(Shape{c});
  p.conv3_weight = uniform_fan_in<T>(Shape{1, c, 3, 3}, 9 * c, rng, kEncoderGain);
  p.conv3_bias = Tensor<T>(Shape{1});
  return p;
}

template <typename T>
void EncoderParams<T>::visit(const std::string& prefix, const ParamVisitor<T>& f) {
  f(prefix + "conv1_weight", conv1_weight);
  f(prefix + "conv1_bias", conv1_bias);
  f(prefix + "conv2_weight", conv2_weight);
  f(prefix + "conv2_bias", conv2_bias);
  f(prefix + "conv3_weight", conv3_weight);
  f(prefix + "conv3_bias", conv3_bias);
}

template <typename T>
std::size_t EncoderParams<T>::parameter_count() const {
  return conv1_weight.size() + conv1_bias.size() + conv2_weight.size() + conv2_bias.size() +
         conv3_weight.size() + conv3_bias.size();
}

template <typename T>
ad::Var<T> encode_images(ad::Var<T> images, EncoderParams<T>& params, const EncoderConfig& cfg) {
  const auto& s = images.shape();
  if (s.size() != 4 || s[1] != 1)
    throw ShapeError("encode_images: expects [N, 1, H, W], got " + to_string(s));
  auto& tape = *images.tape;
  const std::size_t in = cfg.input_extent();
  auto h = images;
  if (s[2] != in || s[3] != in) h = ad::upsample_nearest(h, in, in);
  h = ad::conv2d(h, tape.leaf(params.conv1_weight), tape.leaf(params.conv1_bias), {2, 1});
  h = ad::gelu(h);
  h = ad::conv2d(h, tape.leaf(params.conv2_weight), tape.leaf(params.conv2_bias), {1, 1});
  h = ad::gelu(h);
  return ad::conv2d(h, tape.leaf(params.conv3_weight), tape.leaf(params.conv3_bias), {1, 1});
}

template <typename T>
ad::Var<T> encode_sequence(ad::Var<T> observations, ad::Var<T> goal, EncoderParams<T>& params,
                           const EncoderConfig& cfg) {
  const Shape os = observations.shape();
  const Shape gs = goal.shape();
  if (os.size() != 5 || os[2] != 1)
    throw ShapeError("encode_sequence: observations must be [B, T, 1, H, W], got " + to_string(os));
  if (gs != Shape{os[0], 1, os[3], os[4]})
    throw ShapeError("encode_sequence: goal " + to_string(gs) +
                     " does not match the observation images " + to_string(os));
  const std::size_t b = os[0], t = os[1], h = os[3], w = os[4];
  auto frames = ad::reshape(observations, Shape{b, t, h, w});
  auto goal_frame = ad::reshape(goal, Shape{b, 1, h, w});
  auto all = ad::reshape(ad::concat<T>({frames, goal_frame}, 1), Shape{b * (t + 1), 1, h, w});
  auto feats = encode_images(all, params, cfg);
  const std::size_t a = cfg.extent;
  return ad::reshape(feats, Shape{b, t + 1, 1, a, a});
}

template <typename T>
ad::Var<T> build_context(ad::Var<T> fused) {
  const Shape s = fused.shape();
  if (s.size() < 2) throw ShapeError("build_context: expects a batch axis plus features");
  return ad::reshape(fused, Shape{s[0], numel(s) / s[0]});
}

// ---------------------------------------------------------------------------
// Diffusion schedule

DiffusionSchedule DiffusionSchedule::linear(std::size_t steps, double beta_start, double beta_end) {
  if (steps == 0) throw Error("diffusion schedule: need at least one step");
  if (!(beta_start > 0) || !(beta_end < 1) || beta_end < beta_start)
    throw Error("diffusion schedule: require 0 < beta_start <= beta_end < 1");
  DiffusionSchedule s;
  double bar = 1.0;
  for (std::size_t i = 0; i < steps; ++i) {
    const double frac = steps == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(steps - 1);
    const double beta = beta_start + (beta_end - beta_start) * frac;
    s.betas.push_back(beta);
    s.alphas.push_back(1.0 - beta);
    bar *= 1.0 - beta;
    s.alpha_bar.push_back(bar);
  }
  return s;
}

namespace {

void check_step(std::size_t n, std::size_t steps) {
  if (n == 0 || n > steps)
    throw Error("diffusion: step " + std::to_string(n) + " outside [1, " + std::to_string(steps) +
                "]");
}

}  // namespace

double DiffusionSchedule::beta(std::size_t n) const {
  check_step(n, steps());
  return betas[n - 1];
}

double DiffusionSchedule::alpha(std::size_t n) const {
  check_step(n, steps());
  return alphas[n - 1];
}

double DiffusionSchedule::cumulative(std::size_t n) const {
  check_step(n, steps());
  return alpha_bar[n - 1];
}

template <typename T>
Tensor<T> standard_normal(const Shape& shape, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  Tensor<T> out(shape);
  for (auto& v : out.data()) v = static_cast<T>(dist(rng));
  return out;
}

template <typename T>
Tensor<T> noise_actions_with(const Tensor<T>& actions, std::size_t n,
                             const DiffusionSchedule& schedule, const Tensor<T>& epsilon) {
  if (actions.shape() != epsilon.shape()) throw ShapeError("noise_actions: noise shape mismatch");
  const double bar = schedule.cumulative(n);
  const double sa = std::sqrt(bar);
  const double sn = std::sqrt(1.0 - bar);
  Tensor<T> noisy(actions.shape());
  for (std::size_t i = 0; i < noisy.size(); ++i)
    noisy[i] = static_cast<T>(sa * static_cast<double>(actions[i]) +
                              sn * static_cast<double>(epsilon[i]));
  return noisy;
}

template <typename T>
NoisedActions<T> noise_actions(const Tensor<T>& actions, std::size_t n,
                               const DiffusionSchedule& schedule, std::uint64_t seed) {
  check_step(n, schedule.steps());
  std::mt19937_64 rng(seed);
  NoisedActions<T> out;
  out.epsilon = standard_normal<T>(actions.shape(), rng);
  out.noisy = noise_actions_with(actions, n, schedule, out.epsilon);
  return out;
}

std::vector<double> step_embedding(std::size_t n, std::size_t dims) {
  if (dims % 2 != 0) throw Error("step_embedding: dimension must be even");
  const std::size_t half = dims / 2;
  std::vector<double> e(dims);
  for (std::size_t i = 0; i < half; ++i) {
    const double freq = std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(half));
    e[i] = std::sin(static_cast<double>(n) * freq);
    e[half + i] = std::cos(static_cast<double>(n) * freq);
  }
  return e;
}

// ---------------------------------------------------------------------------
// Heads

std::size_t expected_diffusion_head_count(const HeadConfig& cfg) {
  const std::size_t in = cfg.action_size() + cfg.step_embedding_dims + cfg.context_dim;
  const std::size_t h = cfg.hidden;
  return (h * in + h) + (h * h + h) + (cfg.action_size() * h + cfg.action_size());
}

std::size_t expected_distance_head_count(const HeadConfig& cfg) {
  return (cfg.distance_hidden * cfg.context_dim + cfg.distance_hidden) + (cfg.distance_hidden + 1);
}

template <typename T>
DiffusionHeadParams<T> DiffusionHeadParams<T>::init(const HeadConfig& cfg, std::mt19937_64& rng) {
  const std::size_t in = cfg.action_size() + cfg.step_embedding_dims + cfg.context_dim;
  const std::size_t h = cfg.hidden;
  DiffusionHeadParams p;
  p.w1 = uniform_fan_in<T>(Shape{h, in}, in, rng);
  p.b1 = Tensor<T>(Shape{h});
  p.w2 = uniform_fan_in<T>(Shape{h, h}, h, rng);
  p.b2 = Tensor<T>(Shape{h});
  p.w3 = uniform_fan_in<T>(Shape{cfg.action_size(), h}, h, rng);
  p.b3 = Tensor<T>(Shape{cfg.action_size()});
  return p;
}

template <typename T>
void DiffusionHeadParams<T>::visit(const std::string& prefix, const ParamVisitor<T>& f) {
  f(prefix + "w1", w1);
  f(prefix + "b1", b1);
  f(prefix + "w2", w2);
  f(prefix + "b2", b2);
  f(prefix + "w3", w3);
  f(prefix + "b3", b3);
}

template <typename T>
std::size_t DiffusionHeadParams<T>::parameter_count() const {
  return w1.size() + b1.size() + w2.size() + b2.size() + w3.size() + b3.size();
}

template <typename T>
DistanceHeadParams<T> DistanceHeadParams<T>::init(const HeadConfig& cfg, std::mt19937_64& rng) {
  DistanceHeadParams p;
  p.w1 = uniform_fan_in<T>(Shape{cfg.distance_hidden, cfg.context_dim}, cfg.context_dim, rng);
  p.b1 = Tensor<T>(Shape{cfg.distance_hidden});
  p.w2 = uniform_fan_in<T>(Shape{1, cfg.distance_hidden}, cfg.distance_hidden, rng);
  p.b2 = Tensor<T>(Shape{1});
  return p;
}

template <typename T>
void DistanceHeadParams<T>::visit(const std::string& prefix, const ParamVisitor<T>& f) {
  f(prefix + "w1", w1);
  f(prefix + "b1", b1);
  f(prefix + "w2", w2);
  f(prefix + "b2", b2);
}

template <typename T>
std::size_t DistanceHeadParams<T>::parameter_count() const {
  return w1.size() + b1.size() + w2.size() + b2.size();
}

template <typename T>
ad::Var<T> denoise_predict(ad::Var<T> noisy, const std::vector<std::size_t>& steps,
                           ad::Var<T> context, DiffusionHeadParams<T>& params, const HeadConfig& cfg) {
  const Shape ns = noisy.shape();
  const Shape cs = context.shape();
  if (ns.size() != 3 || ns[1] != cfg.horizon || ns[2] != cfg.action_dims)
    throw ShapeError("denoise_predict: noisy actions must be [B, L, d], got " + to_string(ns));
  const std::size_t b = ns[0];
  if (cs != Shape{b, cfg.context_dim})
    throw ShapeError("denoise_predict: context must be [B, D], got " + to_string(cs));
  if (steps.size() != b) throw ShapeError("denoise_predict: need one diffusion step per sample");

  auto& tape = *noisy.tape;
  const std::size_t e = cfg.step_embedding_dims;
  Tensor<T> emb(Shape{b, e});
  for (std::size_t i = 0; i < b; ++i) {
    const auto v = step_embedding(steps[i], e);
    for (std::size_t j = 0; j < e; ++j) emb[i * e + j] = static_cast<T>(v[j]);
  }
  auto input = ad::concat<T>(
      {ad::reshape(noisy, Shape{b, cfg.action_size()}), tape.constant(std::move(emb)), context}, 1);
  auto h = ad::gelu(ad::linear(input, tape.leaf(params.w1), tape.leaf(params.b1)));
  h = ad::gelu(ad::linear(h, tape.leaf(params.w2), tape.leaf(params.b2)));
  auto out = ad::linear(h, tape.leaf(params.w3), tape.leaf(params.b3));
  return ad::reshape(out, ns);
}

template <typename T>
ad::Var<T> distance_predict(ad::Var<T> context, DistanceHeadParams<T>& params) {
  auto& tape = *context.tape;
  auto h = ad::gelu(ad::linear(context, tape.leaf(params.w1), tape.leaf(params.b1)));
  return ad::softplus(ad::linear(h, tape.leaf(params.w2), tape.leaf(params.b2)));
}

template <typename T>
Tensor<T> sample_actions(const Shape& action_shape, const DiffusionSchedule& schedule,
                         const EpsilonPredictor<T>& predict, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Tensor<T> x = standard_normal<T>(action_shape, rng);
  for (std::size_t n = schedule.steps(); n >= 1; --n) {
    const Tensor<T> eps_hat = predict(x, n);
    if (eps_hat.shape() != x.shape()) throw ShapeError("sample_actions: predictor shape mismatch");
    const double beta = schedule.beta(n);
    const double bar = schedule.cumulative(n);
    const double coef = beta / std::sqrt(1.0 - bar);
    const double inv_sqrt_alpha = 1.0 / std::sqrt(schedule.alpha(n));
    Tensor<T> z;
    double sigma = 0.0;
    if (n > 1) {
      // Posterior variance of q(x_{n-1} | x_n, x_0).
      sigma = std::sqrt(beta * (1.0 - schedule.cumulative(n - 1)) / (1.0 - bar));
      z = standard_normal<T>(action_shape, rng);
    }
    for (std::size_t i = 0; i < x.size(); ++i) {
      double v = inv_sqrt_alpha * (static_cast<double>(x[i]) - coef * static_cast<double>(eps_hat[i]));
      if (n > 1) v += sigma * static_cast<double>(z[i]);
      x[i] = static_cast<T>(v);
    }
    require_finite(x, "sample_actions");
  }
  return x;
}

template <typename T>
Tensor<T> sample_actions(const Tensor<T>& context, const DiffusionSchedule& schedule,
                         DiffusionHeadParams<T>& params, const HeadConfig& cfg, std::uint64_t seed) {
  if (context.rank() != 2 || context.dim(1) != cfg.context_dim)
    throw ShapeError("sample_actions: context must be [B, D]");
  const std::size_t b = context.dim(0);
  EpsilonPredictor<T> predict = [&](const Tensor<T>& noisy, std::size_t n) {
    ad::Tape<T> tape;
    auto out = denoise_predict(tape.constant(noisy), std::vector<std::size_t>(b, n),
                               tape.constant(context), params, cfg);
    return out.value();
  };
  return sample_actions<T>(Shape{b, cfg.horizon, cfg.action_dims}, schedule, predict, seed);
}

// ---------------------------------------------------------------------------
// Losses

template <typename T>
ad::Var<T> diffusion_loss(ad::Var<T> eps_hat, const Tensor<T>& eps, const Tensor<T>& mask) {
  return ad::masked_mse(eps_hat, eps, mask);
}

template <typename T>
ad::Var<T> distance_loss(ad::Var<T> d_hat, const Tensor<T>& d) {
  const Shape& s = d_hat.shape();
  if (s.size() != 2 || s[1] != 1 || d.rank() != 1 || d.dim(0) != s[0])
    throw ShapeError("distance_loss: expects d_hat [B, 1] and d [B]");
  for (auto v : d.data())
    if (v < 0) throw Error("distance_loss: ground-truth distance must be non-negative");
  auto& tape = *d_hat.tape;
  auto target = tape.constant(d.reshaped(Shape{s[0], 1}));
  return ad::mean(ad::square(ad::sub(d_hat, target)));
}

namespace {

void check_alpha(double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0))
    throw Error("total_loss: alpha must lie in [0, 1], got " + std::to_string(alpha));
}

}  // namespace

template <typename T>
ad::Var<T> total_loss(ad::Var<T> l_dist, ad::Var<T> l_diff, double alpha) {
  check_alpha(alpha);
  return ad::add(ad::scale(l_dist, static_cast<T>(alpha)), ad::scale(l_diff, static_cast<T>(1.0 - alpha)));
}

double total_loss(double l_dist, double l_diff, double alpha) {
  check_alpha(alpha);
  return alpha * l_dist + (1.0 - alpha) * l_diff;
}

#define STRNET_INSTANTIATE(T)                                                                      \
  template struct EncoderParams<T>;                                                                \
  template struct DiffusionHeadParams<T>;                                                          \
  template struct DistanceHeadParams<T>;                                                           \
  template ad::Var<T> encode_images(ad::Var<T>, EncoderParams<T>&, const EncoderConfig&);          \
  template ad::Var<T> encode_sequence(ad::Var<T>, ad::Var<T>, EncoderParams<T>&,                   \
                                      const EncoderConfig&);                                       \
  template ad::Var<T> build_context(ad::Var<T>);                                                   \
  template Tensor<T> standard_normal(const Shape&, std::mt19937_64&);                              \
  template NoisedActions<T> noise_actions(const Tensor<T>&, std::size_t, const DiffusionSchedule&, \
                                          std::uint64_t);                                          \
  template Tensor<T> noise_actions_with(const Tensor<T>&, std::size_t, const DiffusionSchedule&,   \
                                        const Tensor<T>&);                                         \
  template ad::Var<T> denoise_predict(ad::Var<T>, const std::vector<std::size_t>&, ad::Var<T>,     \
                                      DiffusionHeadParams<T>&, const HeadConfig&);                 \
  template ad::Var<T> distance_predict(ad::Var<T>, DistanceHeadParams<T>&);                        \
  template Tensor<T> sample_actions(const Shape&, const DiffusionSchedule&,                        \
                                    const EpsilonPredictor<T>&, std::uint64_t);                    \
  template Tensor<T> sample_actions(const Tensor<T>&, const DiffusionSchedule&,                    \
                                    DiffusionHeadParams<T>&, const HeadConfig&, std::uint64_t);    \
  template ad::Var<T> diffusion_loss(ad::Var<T>, const Tensor<T>&, const Tensor<T>&);              \
  template ad::Var<T> distance_loss(ad::Var<T>, const Tensor<T>&);                                 \
  template ad::Var<T> total_loss(ad::Var<T>, ad::Var<T>, double);

STRNET_INSTANTIATE(float)
STRNET_INSTANTIATE(double)

#undef STRNET_INSTANTIATE

}  // namespace strnet::heads

#include "strnet/model.hpp"

#include <cmath>
#include <random>

namespace strnet {

std::size_t ModelConfig::context_dim() const {
  const std::size_t pixels = extent * extent;
  if (disable_temporal) return pixels;
  return temporal.out_channels * slots() * pixels;
}

void ModelConfig::finalize() {
  if (frames == 0) throw Error("model: need at least one observation frame");
  encoder.extent = extent;
  temporal.shift.channels = extent * extent;
  temporal.multires.extent = extent;
  head.context_dim = context_dim();
  if (encoder.channels == 0) throw Error("model: encoder_channels must be positive");
  if (!disable_spatial) spatial.validate(extent);
  if (!disable_temporal) temporal.validate();
  if (head.horizon == 0 || head.action_dims == 0 || head.hidden == 0 || head.distance_hidden == 0)
    throw Error("model: head sizes must be positive");
  (void)schedule();
}

heads::DiffusionSchedule ModelConfig::schedule() const {
  return heads::DiffusionSchedule::linear(diffusion_steps, beta_start, beta_end);
}

ParameterBreakdown expected_parameters(const ModelConfig& cfg) {
  ParameterBreakdown p;
  p.encoder = heads::expected_parameter_count(cfg.encoder);
  if (!cfg.disable_spatial) p.spatial = spatial::expected_parameter_count(cfg.spatial);
  if (!cfg.disable_temporal) p.temporal = temporal::expected_parameter_count(cfg.temporal);
  p.diffusion_head = heads::expected_diffusion_head_count(cfg.head);
  p.distance_head = heads::expected_distance_head_count(cfg.head);
  return p;
}

template <typename T>
ModelParams<T> ModelParams<T>::init(const ModelConfig& cfg, std::uint64_t seed) {
  // One generator per block keeps a block's init independent of which others exist.
  ModelParams p;
  p.has_spatial = !cfg.disable_spatial;
  p.has_temporal = !cfg.disable_temporal;
  std::mt19937_64 enc_rng(seed * 5 + 1), sp_rng(seed * 5 + 2), tm_rng(seed * 5 + 3),
      df_rng(seed * 5 + 4), ds_rng(seed * 5 + 5);
  p.encoder = heads::EncoderParams<T>::init(cfg.encoder, enc_rng);
  if (p.has_spatial) p.spatial = spatial::SpatialBlockParams<T>::init(cfg.spatial, sp_rng);
  if (p.has_temporal) p.temporal = temporal::TemporalFusionParams<T>::init(cfg.temporal, tm_rng);
  p.diffusion = heads::DiffusionHeadParams<T>::init(cfg.head, df_rng);
  p.distance = heads::DistanceHeadParams<T>::init(cfg.head, ds_rng);
  return p;
}

template <typename T>
void ModelParams<T>::visit(const ParamVisitor<T>& f) {
  encoder.visit("encoder.", f);
  if (has_spatial) spatial.visit("spatial.", f);
  if (has_temporal) temporal.visit("temporal.", f);
  diffusion.visit("diffusion_head.", f);
  distance.visit("distance_head.", f);
}

template <typename T>
std::vector<Tensor<T>*> ModelParams<T>::tensors() {
  std::vector<Tensor<T>*> out;
  visit([&](const std::string&, Tensor<T>& t) { out.push_back(&t); });
  return out;
}

template <typename T>
std::size_t ModelParams<T>::parameter_count() {
  std::size_t n = 0;
  visit([&](const std::string&, Tensor<T>& t) { n += t.size(); });
  return n;
}

template <typename T>
ad::Var<T> model_context(ad::Var<T> observations, ad::Var<T> goal, ModelParams<T>& params,
                         const ModelConfig& cfg) {
  const std::size_t a = cfg.extent;
  const std::size_t b = observations.shape()[0];
  const std::size_t slots = cfg.slots();
  if (observations.shape().size() != 5 || observations.shape()[1] != cfg.frames)
    throw ShapeError("model_context: expected " + std::to_string(cfg.frames) +
                     " observation frames, got " + to_string(observations.shape()));

  auto stacked = heads::encode_sequence(observations, goal, params.encoder, cfg.encoder);
  if (params.has_spatial) {
    auto frames = ad::reshape(stacked, Shape{b * slots, 1, a, a});
    frames = spatial::spatial_block_forward(frames, params.spatial, cfg.spatial);
    stacked = ad::reshape(frames, Shape{b, slots, 1, a, a});
  }
  if (params.has_temporal) {
    auto fused = temporal::temporal_block_forward(stacked, params.temporal, cfg.temporal);
    return heads::build_context(fused);
  }
  auto pooled = ad::mean_axis(ad::reshape(stacked, Shape{b, slots, a * a}), 1);
  return heads::build_context(pooled);
}

template <typename T>
NoiseDraw<T> draw_noise(const ModelConfig& cfg, std::size_t batch, std::mt19937_64& rng) {
  NoiseDraw<T> draw;
  draw.epsilon = heads::standard_normal<T>(Shape{batch, cfg.head.horizon, cfg.head.action_dims}, rng);
  std::uniform_int_distribution<std::size_t> pick(1, cfg.diffusion_steps);
  for (std::size_t i = 0; i < batch; ++i) draw.steps.push_back(pick(rng));
  return draw;
}

template <typename T>
LossTerms<T> model_loss(ad::Tape<T>& tape, const Batch<T>& batch, const NoiseDraw<T>& noise,
                        ModelParams<T>& params, const ModelConfig& cfg, double alpha) {
  const std::size_t b = batch.size();
  if (noise.steps.size() != b || noise.epsilon.shape() != batch.actions.shape())
    throw ShapeError("model_loss: noise draw does not match the batch");
  const auto schedule = cfg.schedule();

  Tensor<T> noisy(batch.actions.shape());
  const std::size_t per = batch.actions.size() / b;
  for (std::size_t i = 0; i < b; ++i) {
    const double bar = schedule.cumulative(noise.steps[i]);
    const double sa = std::sqrt(bar), sn = std::sqrt(1.0 - bar);
    for (std::size_t j = i * per; j < (i + 1) * per; ++j)
      noisy[j] = static_cast<T>(sa * static_cast<double>(batch.actions[j]) +
                                sn * static_cast<double>(noise.epsilon[j]));
  }

  auto ctx = model_context(tape.constant(batch.observations), tape.constant(batch.goal), params, cfg);
  auto eps_hat = heads::denoise_predict(tape.constant(std::move(noisy)), noise.steps, ctx,
                                        params.diffusion, cfg.head);
  LossTerms<T> terms;
  terms.diffusion = heads::diffusion_loss(eps_hat, noise.epsilon, batch.mask);
  terms.distance = heads::distance_loss(heads::distance_predict(ctx, params.distance), batch.distance);
  terms.total = heads::total_loss(terms.distance, terms.diffusion, alpha);
  return terms;
}

#define STRNET_INSTANTIATE(T)                                                                    \
  template struct ModelParams<T>;                                                                \
  template ad::Var<T> model_context(ad::Var<T>, ad::Var<T>, ModelParams<T>&, const ModelConfig&); \
  template NoiseDraw<T> draw_noise(const ModelConfig&, std::size_t, std::mt19937_64&);           \
  template LossTerms<T> model_loss(ad::Tape<T>&, const Batch<T>&, const NoiseDraw<T>&,           \
                                   ModelParams<T>&, const ModelConfig&, double);

STRNET_INSTANTIATE(float)
STRNET_INSTANTIATE(double)

#undef STRNET_INSTANTIATE

}  // namespace strnet

#include "strnet/train.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "strnet/params.hpp"

namespace strnet {

std::vector<SampleRef> enumerate_samples(const nav::Dataset& data) {
  std::vector<SampleRef> refs;
  for (std::size_t e = 0; e < data.episodes.size(); ++e)
    for (std::size_t t = 0; t < data.episodes[e].steps(); ++t) refs.push_back({e, t});
  return refs;
}

ActionWindow action_window(const nav::Trajectory& ep, std::size_t t, std::size_t horizon) {
  ActionWindow w;
  w.actions.assign(horizon * 2, 0.0f);
  w.mask.assign(horizon, 0.0f);
  int turns = 0;  // heading of step t + j relative to step t
  for (std::size_t j = 0; j < horizon && t + j < ep.actions.size(); ++j) {
    const auto& a = ep.actions[t + j];
    const auto v = nav::ego_to_world({a[0], a[1]}, static_cast<nav::Direction>(turns));
    w.actions[2 * j] = static_cast<float>(v[0]);
    w.actions[2 * j + 1] = static_cast<float>(v[1]);
    w.mask[j] = 1.0f;
    if (const auto rel = nav::discretize({a[0], a[1]})) turns = (turns + *rel) % 4;
  }
  return w;
}

std::vector<const std::vector<float>*> frame_history(const std::vector<std::vector<float>>& frames,
                                                     std::size_t t, std::size_t count) {
  if (frames.empty() || t >= frames.size()) throw Error("frame_history: step out of range");
  std::vector<const std::vector<float>*> out;
  for (std::size_t k = 0; k < count; ++k) {
    const std::size_t back = count - 1 - k;
    out.push_back(&frames[t >= back ? t - back : 0]);
  }
  return out;
}

Batch<float> make_batch(const nav::Dataset& data, const std::vector<SampleRef>& refs,
                        const ModelConfig& cfg) {
  const std::size_t b = refs.size();
  const std::size_t w = static_cast<std::size_t>(data.window);
  const std::size_t img = w * w;
  const std::size_t horizon = cfg.head.horizon;
  Batch<float> batch;
  batch.observations = Tensor<float>(Shape{b, cfg.frames, 1, w, w});
  batch.goal = Tensor<float>(Shape{b, 1, w, w});
  batch.actions = Tensor<float>(Shape{b, horizon, 2});
  batch.mask = Tensor<float>(Shape{b, horizon});
  batch.distance = Tensor<float>(Shape{b});
  for (std::size_t i = 0; i < b; ++i) {
    const auto& ep = data.episodes.at(refs[i].episode);
    const std::size_t t = refs[i].step;
    const auto history = frame_history(ep.observations, t, cfg.frames);
    for (std::size_t k = 0; k < cfg.frames; ++k)
      std::copy(history[k]->begin(), history[k]->end(),
                batch.observations.ptr() + (i * cfg.frames + k) * img);
    std::copy(ep.goal_observation.begin(), ep.goal_observation.end(), batch.goal.ptr() + i * img);
    const auto win = action_window(ep, t, horizon);
    std::copy(win.actions.begin(), win.actions.end(), batch.actions.ptr() + i * horizon * 2);
    std::copy(win.mask.begin(), win.mask.end(), batch.mask.ptr() + i * horizon);
    batch.distance[i] = static_cast<float>(ep.distances.at(t));
  }
  return batch;
}

TrainResult train_model(const RunConfig& cfg, const nav::Dataset& data, const EpochCallback& on_epoch) {
  cfg.validate();
  const ModelConfig mcfg = cfg.model();
  TrainResult result;
  result.params = ModelParams<float>::init(mcfg, cfg.seed);
  auto tensors = result.params.tensors();
  for (auto* t : tensors) t->set_requires_grad(true);

  auto samples = enumerate_samples(data);
  if (samples.empty()) throw Error("train: dataset holds no training states");
  Adam<float> adam;
  std::mt19937_64 order_rng(cfg.seed * 7919 + 11);
  std::mt19937_64 noise_rng(cfg.seed * 104729 + 13);

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = cosine_annealing(cfg.learning_rate, cfg.min_learning_rate, epoch, cfg.epochs);
    std::shuffle(samples.begin(), samples.end(), order_rng);
    EpochStats stats;
    stats.epoch = epoch + 1;
    stats.learning_rate = lr;
    for (std::size_t start = 0; start < samples.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(samples.size(), start + cfg.batch_size);
      const std::vector<SampleRef> refs(samples.begin() + static_cast<std::ptrdiff_t>(start),
                                        samples.begin() + static_cast<std::ptrdiff_t>(end));
      const auto batch = make_batch(data, refs, mcfg);
      const auto noise = draw_noise<float>(mcfg, refs.size(), noise_rng);

      ad::Tape<float> tape;
      auto loss = model_loss(tape, batch, noise, result.params, mcfg, cfg.alpha);
      const double total = loss.total.value()[0];
      if (!std::isfinite(total))
        throw NumericError("train: non-finite loss at epoch " + std::to_string(epoch + 1) +
                           ", batch starting at sample " + std::to_string(start));
      for (auto* t : tensors) t->zero_grad();
      tape.backward(loss.total);
      adam.step(tensors, lr);

      const double weight = static_cast<double>(refs.size());
      stats.total += total * weight;
      stats.distance += loss.distance.value()[0] * weight;
      stats.diffusion += loss.diffusion.value()[0] * weight;
    }
    const double n = static_cast<double>(samples.size());
    stats.total /= n;
    stats.distance /= n;
    stats.diffusion /= n;
    result.curve.push_back(stats);
    if (on_epoch) on_epoch(stats);
  }
  for (auto* t : tensors) {
    t->set_requires_grad(false);
    t->clear_grad();
  }
  return result;
}

nav::Dataset training_dataset(const RunConfig& cfg) {
  return nav::generate_dataset(cfg.train_episodes, cfg.data_seed, cfg.world(), cfg.render());
}

std::string loss_curve_csv(const std::vector<EpochStats>& curve) {
  std::ostringstream out;
  out.precision(17);
  out << "epoch,learning_rate,total,distance,diffusion\n";
  for (const auto& s : curve)
    out << s.epoch << ',' << s.learning_rate << ',' << s.total << ',' << s.distance << ','
        << s.diffusion << '\n';
  return out.str();
}

Tensor<float> context_for(const std::vector<std::vector<float>>& frames, std::size_t t,
                          const std::vector<float>& goal, int window, ModelParams<float>& params,
                          const ModelConfig& cfg) {
  const std::size_t w = static_cast<std::size_t>(window);
  const auto history = frame_history(frames, t, cfg.frames);
  Tensor<float> obs(Shape{1, cfg.frames, 1, w, w});
  for (std::size_t k = 0; k < cfg.frames; ++k)
    std::copy(history[k]->begin(), history[k]->end(), obs.ptr() + k * w * w);
  Tensor<float> g(Shape{1, 1, w, w}, std::vector<float>(goal.begin(), goal.end()));
  ad::Tape<float> tape;
  return model_context(tape.constant(std::move(obs)), tape.constant(std::move(g)), params, cfg).value();
}

nav::Policy model_policy(ModelParams<float>& params, const ModelConfig& cfg, std::uint64_t seed) {
  const auto schedule = cfg.schedule();
  return [&params, cfg, schedule, seed](const nav::PolicyInput& in) -> std::array<double, 2> {
    const auto& frames = *in.history;
    const int window = static_cast<int>(std::lround(std::sqrt(static_cast<double>(frames[0].size()))));
    const auto ctx = context_for(frames, frames.size() - 1, *in.goal_observation, window, params, cfg);
    const auto actions = heads::sample_actions(ctx, schedule, params.diffusion, cfg.head,
                                               seed * 1000003 + in.step);
    return {actions[0], actions[1]};
  };
}

}  // namespace strnet

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "strnet/config.hpp"
#include "strnet/model.hpp"
#include "strnet/navsim.hpp"

namespace strnet {

/// One training state: episode index and step t (t < episode steps).
struct SampleRef {
  std::size_t episode;
  std::size_t step;
};

std::vector<SampleRef> enumerate_samples(const nav::Dataset& data);

/// L waypoints from step t, each expressed in the ego frame at step t.
/// Returns (actions [L, 2] row-major, mask [L]).
struct ActionWindow {
  std::vector<float> actions;
  std::vector<float> mask;
};
ActionWindow action_window(const nav::Trajectory& ep, std::size_t t, std::size_t horizon);

/// The T frames ending at `t`, oldest first; indices before 0 repeat frame 0.
std::vector<const std::vector<float>*> frame_history(const std::vector<std::vector<float>>& frames,
                                                     std::size_t t, std::size_t count);

Batch<float> make_batch(const nav::Dataset& data, const std::vector<SampleRef>& refs,
                        const ModelConfig& cfg);

struct EpochStats {
  std::size_t epoch = 0;
  double learning_rate = 0;
  double total = 0;
  double distance = 0;
  double diffusion = 0;
};

struct TrainResult {
  ModelParams<float> params;
  std::vector<EpochStats> curve;
};

using EpochCallback = std::function<void(const EpochStats&)>;

/// Adam with cosine-annealed step size; fresh diffusion noise every epoch.
/// Throws NumericError on a non-finite loss.
TrainResult train_model(const RunConfig& cfg, const nav::Dataset& data,
                        const EpochCallback& on_epoch = {});

/// Dataset described by the config's world/data keys.
nav::Dataset training_dataset(const RunConfig& cfg);

/// CSV with header epoch,learning_rate,total,distance,diffusion.
std::string loss_curve_csv(const std::vector<EpochStats>& curve);

/// Context [1, D] for the frames ending at `t` plus the goal view.
Tensor<float> context_for(const std::vector<std::vector<float>>& frames, std::size_t t,
                          const std::vector<float>& goal, int window, ModelParams<float>& params,
                          const ModelConfig& cfg);

/// Executes the first sampled waypoint. Sampling seeds derive from `seed` and the step.
nav::Policy model_policy(ModelParams<float>& params, const ModelConfig& cfg, std::uint64_t seed);

}  // namespace strnet

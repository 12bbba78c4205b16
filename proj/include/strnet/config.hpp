#pragma once

// Run configuration: a flat set of documented keys read from and written to
// line-oriented "key = value" text. '#' starts a comment.

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "strnet/model.hpp"
#include "strnet/navsim.hpp"

namespace strnet {

struct RunConfig {
  // Representation
  std::size_t A = 16;
  std::size_t T = 4;
  std::vector<std::size_t> strides{8, 4, 2};
  double temperature = 0.1;
  double aggregation_epsilon = 1e-6;
  std::size_t spatial_layers = 2;
  bool magnitude_max = false;
  double rho = 0.125;
  std::size_t num_scales = 3;
  std::size_t gn_groups = 8;
  std::string cosine_mode = "channel";
  std::size_t fusion_channels = 1;
  std::size_t encoder_channels = 4;

  // Heads
  std::size_t head_hidden = 128;
  std::size_t distance_hidden = 32;
  std::size_t action_horizon = 8;
  std::size_t action_dims = 2;
  std::size_t diffusion_steps = 10;
  double beta_start = 1e-4;
  double beta_end = 0.2;

  // Optimisation
  double alpha = 1e-4;
  double learning_rate = 1e-4;
  double min_learning_rate = 0.0;
  std::size_t batch_size = 32;
  std::size_t epochs = 20;
  std::uint64_t seed = 0;

  // World and data
  int world_size = 32;
  double obstacle_density = 0.2;
  int observation_window = 15;
  std::size_t train_episodes = 200;
  std::uint64_t data_seed = 0;
  int goal_min_distance = 5;
  int goal_max_distance = 16;
  int goal_max_offset = 6;

  // Evaluation
  std::size_t eval_episodes = 50;
  std::uint64_t eval_seed = 1000000;
  int max_steps = 64;
  int goal_noise_radius = 0;
  std::size_t embed_episodes = 40;
  std::uint64_t embed_seed = 2000000;

  // Ablations
  bool disable_spatial = false;
  bool disable_temporal = false;
  /// Average-pooling temporal fusion; same network as disable_temporal.
  bool pooling_baseline = false;

  /// Throws strnet::Error describing the first invalid field.
  void validate() const;

  ModelConfig model() const;
  nav::WorldConfig world() const;
  nav::RenderConfig render() const;
  nav::RolloutConfig rollout() const;

  bool operator==(const RunConfig&) const = default;
};

/// Every key in serialization order.
const std::vector<std::string>& config_keys();

/// Unknown keys, malformed values and duplicate keys are errors. Missing keys keep defaults.
RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::string& path);

/// Full key set, one "key = value" per line, stable order.
std::string serialize_config(const RunConfig& cfg);

/// FNV-1a over the serialized text, as 16 hex digits.
std::string config_hash(const RunConfig& cfg);

/// Shortest fixed-notation text that parses back to the same double.
std::string format_number(double v);

}  // namespace strnet

#pragma once

// Full network: shared encoder -> per-frame spatial block -> temporal fusion
// -> context -> diffusion and distance heads.

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "strnet/heads.hpp"
#include "strnet/spatial.hpp"
#include "strnet/temporal.hpp"

namespace strnet {

struct ModelConfig {
  std::size_t extent = 16;  // A
  std::size_t frames = 4;   // T observations; the goal adds one slot
  heads::EncoderConfig encoder;
  spatial::AxialGraphConfig spatial;
  temporal::TemporalFusionConfig temporal;
  heads::HeadConfig head;
  std::size_t diffusion_steps = 10;
  double beta_start = 1e-4;
  double beta_end = 0.2;
  bool disable_spatial = false;
  /// Replaces temporal fusion by a mean over all slots (goal included).
  bool disable_temporal = false;

  std::size_t slots() const { return frames + 1; }
  std::size_t context_dim() const;
  /// Re-derives dependent fields (channel counts, head input width) and validates.
  void finalize();
  heads::DiffusionSchedule schedule() const;
};

template <typename T>
struct ModelParams {
  heads::EncoderParams<T> encoder;
  spatial::SpatialBlockParams<T> spatial;
  temporal::TemporalFusionParams<T> temporal;
  heads::DiffusionHeadParams<T> diffusion;
  heads::DistanceHeadParams<T> distance;
  bool has_spatial = true;
  bool has_temporal = true;

  /// Ablated blocks are omitted entirely, so they own no parameters.
  static ModelParams init(const ModelConfig& cfg, std::uint64_t seed);
  void visit(const ParamVisitor<T>& f);
  std::vector<Tensor<T>*> tensors();
  std::size_t parameter_count();
};

struct ParameterBreakdown {
  std::size_t encoder = 0;
  std::size_t spatial = 0;
  std::size_t temporal = 0;
  std::size_t diffusion_head = 0;
  std::size_t distance_head = 0;
  std::size_t total() const { return encoder + spatial + temporal + diffusion_head + distance_head; }
};

/// Closed-form counts for a finalized config.
ParameterBreakdown expected_parameters(const ModelConfig& cfg);

/// Training/evaluation batch.
template <typename T>
struct Batch {
  Tensor<T> observations;  // [B, T, 1, W, W]
  Tensor<T> goal;          // [B, 1, W, W]
  Tensor<T> actions;       // [B, L, d]
  Tensor<T> mask;          // [B, L]
  Tensor<T> distance;      // [B]
  std::size_t size() const { return observations.dim(0); }
};

/// observations, goal -> context [B, D].
template <typename T>
ad::Var<T> model_context(ad::Var<T> observations, ad::Var<T> goal, ModelParams<T>& params,
                         const ModelConfig& cfg);

template <typename T>
struct LossTerms {
  ad::Var<T> total;
  ad::Var<T> distance;
  ad::Var<T> diffusion;
};

/// Diffusion noise and step per sample.
template <typename T>
struct NoiseDraw {
  Tensor<T> epsilon;               // [B, L, d]
  std::vector<std::size_t> steps;  // 1-based, one per sample
};

template <typename T>
NoiseDraw<T> draw_noise(const ModelConfig& cfg, std::size_t batch, std::mt19937_64& rng);

template <typename T>
LossTerms<T> model_loss(ad::Tape<T>& tape, const Batch<T>& batch, const NoiseDraw<T>& noise,
                        ModelParams<T>& params, const ModelConfig& cfg, double alpha);

}  // namespace strnet

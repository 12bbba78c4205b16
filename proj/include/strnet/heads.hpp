#pragma once

// Shared image encoder, context flattening, the diffusion action head and the
// temporal-distance head, plus their losses.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "strnet/autodiff.hpp"
#include "strnet/params.hpp"

namespace strnet::heads {

// ---------------------------------------------------------------------------
// Encoder

struct EncoderConfig {
  std::size_t extent = 16;   // A
  std::size_t channels = 4;  // hidden conv width

  /// Images are resampled to 2A x 2A before the first (stride 2) conv.
  std::size_t input_extent() const { return 2 * extent; }
};

template <typename T>
struct EncoderParams {
  Tensor<T> conv1_weight;  // [ch, 1, 3, 3], stride 2
  Tensor<T> conv1_bias;
  Tensor<T> conv2_weight;  // [ch, ch, 3, 3]
  Tensor<T> conv2_bias;
  Tensor<T> conv3_weight;  // [1, ch, 3, 3]
  Tensor<T> conv3_bias;

  static EncoderParams init(const EncoderConfig& cfg, std::mt19937_64& rng);
  void visit(const std::string& prefix, const ParamVisitor<T>& f);
  std::size_t parameter_count() const;
};

std::size_t expected_parameter_count(const EncoderConfig& cfg);

/// images [N, 1, H, W] (any H, W <= 2A) -> [N, 1, A, A].
template <typename T>
ad::Var<T> encode_images(ad::Var<T> images, EncoderParams<T>& params, const EncoderConfig& cfg);

/// observations [B, T, 1, H, W], goal [B, 1, H, W] -> [B, T + 1, 1, A, A].
/// The goal occupies the last temporal slot.
template <typename T>
ad::Var<T> encode_sequence(ad::Var<T> observations, ad::Var<T> goal, EncoderParams<T>& params,
                           const EncoderConfig& cfg);

/// [B, ...] -> [B, D], D = product of the trailing extents.
template <typename T>
ad::Var<T> build_context(ad::Var<T> fused);

// ---------------------------------------------------------------------------
// Diffusion schedule and noising

struct DiffusionSchedule {
  std::vector<double> betas;      // beta_n, n = 1..N stored at index n-1
  std::vector<double> alphas;     // 1 - beta_n
  std::vector<double> alpha_bar;  // prod_{m <= n} alpha_m

  /// Betas linear in [beta_start, beta_end] over `steps` entries.
  static DiffusionSchedule linear(std::size_t steps, double beta_start = 1e-4,
                                  double beta_end = 0.2);
  std::size_t steps() const { return betas.size(); }
  /// Accessors take the 1-based step n.
  double beta(std::size_t n) const;
  double alpha(std::size_t n) const;
  double cumulative(std::size_t n) const;
};

template <typename T>
struct NoisedActions {
  Tensor<T> noisy;
  Tensor<T> epsilon;
};

/// noisy = sqrt(abar_n) * a + sqrt(1 - abar_n) * eps with eps ~ N(0, 1) from `seed`.
template <typename T>
NoisedActions<T> noise_actions(const Tensor<T>& actions, std::size_t n,
                               const DiffusionSchedule& schedule, std::uint64_t seed);

/// Same, with caller-supplied noise.
template <typename T>
Tensor<T> noise_actions_with(const Tensor<T>& actions, std::size_t n,
                             const DiffusionSchedule& schedule, const Tensor<T>& epsilon);

/// Unit-normal tensor drawn from a dedicated generator.
template <typename T>
Tensor<T> standard_normal(const Shape& shape, std::mt19937_64& rng);

/// Sinusoidal embedding of the (1-based) step, `dims` even.
std::vector<double> step_embedding(std::size_t n, std::size_t dims);

// ---------------------------------------------------------------------------
// Heads

struct HeadConfig {
  std::size_t context_dim = 1280;
  std::size_t horizon = 8;      // L waypoints
  std::size_t action_dims = 2;  // d
  std::size_t hidden = 128;
  std::size_t step_embedding_dims = 16;
  std::size_t distance_hidden = 32;

  std::size_t action_size() const { return horizon * action_dims; }
};

template <typename T>
struct DiffusionHeadParams {
  Tensor<T> w1, b1;  // [H, L*d + E + D]
  Tensor<T> w2, b2;  // [H, H]
  Tensor<T> w3, b3;  // [L*d, H]

  static DiffusionHeadParams init(const HeadConfig& cfg, std::mt19937_64& rng);
  void visit(const std::string& prefix, const ParamVisitor<T>& f);
  std::size_t parameter_count() const;
};

template <typename T>
struct DistanceHeadParams {
  Tensor<T> w1, b1;  // [Hd, D]
  Tensor<T> w2, b2;  // [1, Hd]

  static DistanceHeadParams init(const HeadConfig& cfg, std::mt19937_64& rng);
  void visit(const std::string& prefix, const ParamVisitor<T>& f);
  std::size_t parameter_count() const;
};

std::size_t expected_diffusion_head_count(const HeadConfig& cfg);
std::size_t expected_distance_head_count(const HeadConfig& cfg);

/// noisy [B, L, d], context [B, D], one step per sample -> eps_hat [B, L, d].
template <typename T>
ad::Var<T> denoise_predict(ad::Var<T> noisy, const std::vector<std::size_t>& steps,
                           ad::Var<T> context, DiffusionHeadParams<T>& params, const HeadConfig& cfg);

/// context [B, D] -> [B, 1], softplus output.
template <typename T>
ad::Var<T> distance_predict(ad::Var<T> context, DistanceHeadParams<T>& params);

/// Noise predictor used by the sampler: (noisy [B, L, d], step n) -> eps_hat.
template <typename T>
using EpsilonPredictor = std::function<Tensor<T>(const Tensor<T>& noisy, std::size_t n)>;

/// Ancestral sampling from x_N ~ N(0, I) down to x_0. Throws NumericError on
/// non-finite intermediates.
template <typename T>
Tensor<T> sample_actions(const Shape& action_shape, const DiffusionSchedule& schedule,
                         const EpsilonPredictor<T>& predict, std::uint64_t seed);

/// Convenience form driving the learned head. context: [B, D].
template <typename T>
Tensor<T> sample_actions(const Tensor<T>& context, const DiffusionSchedule& schedule,
                         DiffusionHeadParams<T>& params, const HeadConfig& cfg, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Losses

/// Masked squared error: mean over the batch of sum_i M_i |eps_hat_i - eps_i|^2 / max(1, sum_i M_i).
template <typename T>
ad::Var<T> diffusion_loss(ad::Var<T> eps_hat, const Tensor<T>& eps, const Tensor<T>& mask);

/// Mean over the batch of (d_hat - d)^2. d_hat: [B, 1], d: [B] with d >= 0.
template <typename T>
ad::Var<T> distance_loss(ad::Var<T> d_hat, const Tensor<T>& d);

/// alpha * l_dist + (1 - alpha) * l_diff, alpha in [0, 1].
template <typename T>
ad::Var<T> total_loss(ad::Var<T> l_dist, ad::Var<T> l_diff, double alpha);

double total_loss(double l_dist, double l_diff, double alpha);

}  // namespace strnet::heads

#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "strnet/tensor.hpp"

namespace strnet {

/// Shared epsilon for every group normalization in the model.
inline constexpr double kGroupNormEpsilon = 1e-8;

template <typename T>
using ParamVisitor = std::function<void(const std::string& name, Tensor<T>& tensor)>;

/// Zero-mean uniform init in [-gain/sqrt(fan_in), gain/sqrt(fan_in)].
template <typename T>
Tensor<T> uniform_fan_in(Shape shape, std::size_t fan_in, std::mt19937_64& rng, double gain = 1.0) {
  const double bound = gain / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor<T> t(std::move(shape));
  for (auto& v : t.data()) v = static_cast<T>(dist(rng));
  return t;
}

/// Adam with bias correction. State is keyed by position in the parameter list,
/// so callers must pass parameters in a stable order.
template <typename T>
class Adam {
 public:
  struct Options {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
  };

  Adam() = default;
  explicit Adam(Options opts) : opts_(opts) {}

  void step(const std::vector<Tensor<T>*>& params, double lr) {
    if (m_.empty()) {
      for (auto* p : params) {
        m_.emplace_back(p->size(), 0.0);
        v_.emplace_back(p->size(), 0.0);
      }
    }
    if (m_.size() != params.size()) throw Error("Adam: parameter list changed between steps");
    ++t_;
    const double c1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(t_));
    for (std::size_t k = 0; k < params.size(); ++k) {
      Tensor<T>& p = *params[k];
      if (!p.has_grad()) continue;
      auto g = p.grad();
      auto& m = m_[k];
      auto& v = v_[k];
      for (std::size_t i = 0; i < p.size(); ++i) {
        const double gi = static_cast<double>(g[i]);
        m[i] = opts_.beta1 * m[i] + (1.0 - opts_.beta1) * gi;
        v[i] = opts_.beta2 * v[i] + (1.0 - opts_.beta2) * gi * gi;
        const double update = lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + opts_.epsilon);
        p[i] = static_cast<T>(static_cast<double>(p[i]) - update);
      }
    }
  }

  std::size_t steps() const noexcept { return t_; }

 private:
  Options opts_;
  std::vector<std::vector<double>> m_, v_;
  std::size_t t_ = 0;
};

/// lr(epoch) = min + (base - min) * (1 + cos(pi * epoch / total)) / 2, epoch in [0, total).
inline double cosine_annealing(double base_lr, double min_lr, std::size_t epoch,
                               std::size_t total_epochs) {
  if (total_epochs == 0) return base_lr;
  const double frac = static_cast<double>(epoch) / static_cast<double>(total_epochs);
  return min_lr + 0.5 * (base_lr - min_lr) * (1.0 + std::cos(3.14159265358979323846 * frac));
}

}  // namespace strnet

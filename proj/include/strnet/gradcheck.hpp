#pragma once

// Central finite-difference verification of tape gradients.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "strnet/autodiff.hpp"

namespace strnet {

struct GradCheckOptions {
  double tolerance = 1e-4;
  /// Perturbation is step_scale * max(1, |x|).
  double step_scale = 1e-5;
  /// Error is |analytic - numeric| / max(|analytic|, |numeric|, error_floor).
  double error_floor = 1e-3;
  /// 0 checks every coordinate; otherwise a seeded random subset per tensor.
  std::size_t max_coords_per_tensor = 0;
  std::uint64_t seed = 0;
};

struct GradCheckReport {
  bool passed = false;
  double tolerance = 0;
  double max_error = 0;
  std::string worst_tensor;
  std::size_t worst_index = 0;
  double worst_analytic = 0;
  double worst_numeric = 0;
  std::size_t coordinates_checked = 0;
};

template <typename T>
struct CheckInput {
  std::string name;
  Tensor<T>* tensor;
};

/// Builds the function under test from one tape variable per input, in order.
template <typename T>
using TapeFunction = std::function<ad::Var<T>(ad::Tape<T>&, const std::vector<ad::Var<T>>&)>;

namespace detail {

template <typename T>
Tensor<T> random_cotangent(const Shape& shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  Tensor<T> r(shape);
  for (auto& v : r.data()) v = static_cast<T>(dist(rng));
  return r;
}

/// Scalar objective: the output itself if it has one element, else <r, output>
/// for a fixed random cotangent r.
template <typename T>
ad::Var<T> scalarize(ad::Var<T> out, std::uint64_t seed) {
  if (out.value().size() == 1) return out;
  return ad::sum(ad::mul_const(out, random_cotangent<T>(out.shape(), seed)));
}

template <typename T>
double evaluate(const TapeFunction<T>& f, const std::vector<CheckInput<T>>& inputs,
                std::uint64_t seed) {
  ad::Tape<T> tape;
  std::vector<ad::Var<T>> vars;
  for (const auto& in : inputs) vars.push_back(tape.leaf(*in.tensor));
  auto loss = scalarize(f(tape, vars), seed);
  const double v = static_cast<double>(loss.value()[0]);
  if (!std::isfinite(v)) throw NumericError("finite_diff_check: non-finite objective");
  return v;
}

}  // namespace detail

/// Compares tape gradients of f against central differences for every input.
/// Input tensors are restored (values, grads and requires_grad flags) on return.
template <typename T>
GradCheckReport finite_diff_check(const TapeFunction<T>& f, const std::vector<CheckInput<T>>& inputs,
                                  const GradCheckOptions& opts = {}) {
  struct Saved {
    bool requires_grad;
    std::vector<T> grad;
  };
  std::vector<Saved> saved;
  for (const auto& in : inputs) {
    saved.push_back({in.tensor->requires_grad(),
                     std::vector<T>(in.tensor->grad().begin(), in.tensor->grad().end())});
    in.tensor->set_requires_grad(true);
    in.tensor->clear_grad();
  }

  {
    ad::Tape<T> tape;
    std::vector<ad::Var<T>> vars;
    for (const auto& in : inputs) vars.push_back(tape.leaf(*in.tensor));
    auto loss = detail::scalarize(f(tape, vars), opts.seed);
    tape.backward(loss);
  }
  std::vector<std::vector<T>> analytic;
  for (const auto& in : inputs) {
    auto g = in.tensor->grad_mut();
    analytic.emplace_back(g.begin(), g.end());
    in.tensor->set_requires_grad(false);
  }

  GradCheckReport report;
  report.tolerance = opts.tolerance;
  std::mt19937_64 pick(opts.seed + 17);
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    Tensor<T>& x = *inputs[k].tensor;
    std::vector<std::size_t> coords(x.size());
    for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
    if (opts.max_coords_per_tensor > 0 && coords.size() > opts.max_coords_per_tensor) {
      std::shuffle(coords.begin(), coords.end(), pick);
      coords.resize(opts.max_coords_per_tensor);
      std::sort(coords.begin(), coords.end());
    }
    for (auto i : coords) {
      const T orig = x[i];
      const T h = static_cast<T>(opts.step_scale * std::max(1.0, std::abs(static_cast<double>(orig))));
      x[i] = orig + h;
      const double fp = detail::evaluate(f, inputs, opts.seed);
      x[i] = orig - h;
      const double fm = detail::evaluate(f, inputs, opts.seed);
      x[i] = orig;
      const double step = static_cast<double>(orig + h) - static_cast<double>(orig - h);
      const double numeric = (fp - fm) / step;
      const double a = static_cast<double>(analytic[k][i]);
      const double scale = std::max({std::abs(a), std::abs(numeric), opts.error_floor});
      const double err = std::abs(a - numeric) / scale;
      ++report.coordinates_checked;
      if (report.worst_tensor.empty() || err > report.max_error) {
        report.max_error = err;
        report.worst_tensor = inputs[k].name;
        report.worst_index = i;
        report.worst_analytic = a;
        report.worst_numeric = numeric;
      }
    }
  }
  report.passed = report.max_error <= opts.tolerance;

  for (std::size_t k = 0; k < inputs.size(); ++k) {
    inputs[k].tensor->set_requires_grad(saved[k].requires_grad);
    inputs[k].tensor->clear_grad();
    if (!saved[k].grad.empty()) inputs[k].tensor->accumulate_grad(saved[k].grad);
  }
  return report;
}

/// Single-input convenience form.
template <typename T>
GradCheckReport finite_diff_check(const std::function<ad::Var<T>(ad::Var<T>)>& f, Tensor<T>& x,
                                  double tolerance) {
  GradCheckOptions opts;
  opts.tolerance = tolerance;
  TapeFunction<T> wrapped = [&f](ad::Tape<T>&, const std::vector<ad::Var<T>>& v) { return f(v[0]); };
  return finite_diff_check<T>(wrapped, {{"x", &x}}, opts);
}

}  // namespace strnet

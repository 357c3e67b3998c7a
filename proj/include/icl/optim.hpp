#pragma once

// Direct per-image optimization of a color field under the instance coloring
// loss, the optimizers that drive it, and the finite-difference gradient check.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "icl/field.hpp"
#include "icl/loss.hpp"
#include "icl/rng.hpp"

namespace icl {

enum class OptimizerKind { gradient_descent, adam };

struct OptimConfig {
  double learning_rate = 2.0;
  int iterations = 500;
  OptimizerKind kind = OptimizerKind::adam;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t seed = 0;
};

inline void validate_config(const OptimConfig& c) {
  if (c.iterations < 1) throw std::invalid_argument("optimizer config: iterations >= 1 required");
  if (!(c.learning_rate > 0.0)) throw std::invalid_argument("optimizer config: learning_rate must be > 0");
}

struct TrainTrace {
  std::vector<LossReport> losses;   // loss before each update
  std::vector<double> seconds;      // wall clock per iteration
};

/// Raised when parameters or the loss stop being finite.
class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(int iteration, const std::string& what)
      : std::runtime_error("diverged at iteration " + std::to_string(iteration) + ": " + what),
        iteration_(iteration) {}
  int iteration() const { return iteration_; }

 private:
  int iteration_;
};

/// First-order optimizer over a flat parameter vector.
class Optimizer {
 public:
  Optimizer(const OptimConfig& config, std::size_t size) : config_(config), m_(size, 0.0), v_(size, 0.0) {}

  void step(std::span<double> params, std::span<const double> grad) {
    ++t_;
    if (config_.kind == OptimizerKind::gradient_descent) {
      for (std::size_t k = 0; k < params.size(); ++k) params[k] -= config_.learning_rate * grad[k];
      return;
    }
    const double b1 = config_.beta1;
    const double b2 = config_.beta2;
    const double c1 = 1.0 - std::pow(b1, t_);
    const double c2 = 1.0 - std::pow(b2, t_);
    for (std::size_t k = 0; k < params.size(); ++k) {
      m_[k] = b1 * m_[k] + (1.0 - b1) * grad[k];
      v_[k] = b2 * v_[k] + (1.0 - b2) * grad[k] * grad[k];
      const double mhat = m_[k] / c1;
      const double vhat = v_[k] / c2;
      params[k] -= config_.learning_rate * mhat / (std::sqrt(vhat) + config_.epsilon);
    }
  }

 private:
  OptimConfig config_;
  std::vector<double> m_;
  std::vector<double> v_;
  int t_ = 0;
};

inline bool all_finite(std::span<const double> v) {
  for (double x : v) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

struct DirectResult {
  ColorField field;
  TrainTrace trace;
  LossReport final_loss;
};

/// Treats the color field itself as the model: initialize uniformly in
/// [0,255] from the seed and descend the loss gradient.
inline DirectResult optimize_direct_field(const LabelMap& labels, const LossWeights& weights,
                                          const OptimConfig& config) {
  validate_config(config);
  validate_labels(labels);
  if (labels.max_id() < 1) throw std::invalid_argument("optimize_direct_field: labels contain no instances");
  Rng rng(config.seed);
  DirectResult out{ColorField(labels.width(), labels.height()), {}, {}};
  for (auto& v : out.field.values()) v = rng.uniform(0.0, 255.0);
  Optimizer opt(config, out.field.size());
  out.trace.losses.reserve(config.iterations);
  out.trace.seconds.reserve(config.iterations);
  for (int it = 0; it < config.iterations; ++it) {
    const auto t0 = std::chrono::steady_clock::now();
    const LossReport loss = loss_total(out.field, labels, weights);
    if (!std::isfinite(loss.total)) throw DivergenceError(it, "non-finite loss");
    const GradField grad = loss_gradient(out.field, labels, weights);
    if (!all_finite(grad.values())) throw DivergenceError(it, "non-finite gradient");
    opt.step(out.field.values(), grad.values());
    if (!out.field.all_finite()) throw DivergenceError(it, "non-finite field value");
    out.trace.losses.push_back(loss);
    out.trace.seconds.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  }
  out.final_loss = loss_total(out.field, labels, weights);
  return out;
}

/// Largest elementwise |analytic - numeric| / max(|analytic|, |numeric|, floor)
/// where numeric is the central difference of `objective` at `params`.
/// `params` is restored before returning.
inline double max_relative_error(std::span<double> params, std::span<const double> analytic,
                                 const std::function<double()>& objective, double epsilon,
                                 double floor = 1e-8) {
  if (!(epsilon > 0.0)) throw std::invalid_argument("finite difference epsilon must be > 0");
  double worst = 0.0;
  for (std::size_t k = 0; k < params.size(); ++k) {
    const double saved = params[k];
    params[k] = saved + epsilon;
    const double up = objective();
    params[k] = saved - epsilon;
    const double down = objective();
    params[k] = saved;
    const double numeric = (up - down) / (2.0 * epsilon);
    const double denom = std::max({std::abs(analytic[k]), std::abs(numeric), floor});
    worst = std::max(worst, std::abs(analytic[k] - numeric) / denom);
  }
  return worst;
}

/// Central-difference check of loss_gradient() against loss_total().
inline double finite_difference_check(const ColorField& field, const LabelMap& labels, const LossWeights& weights,
                                      double epsilon = 1e-3) {
  const GradField analytic = loss_gradient(field, labels, weights);
  ColorField probe = field;
  return max_relative_error(probe.values(), analytic.values(),
                            [&] { return loss_total(probe, labels, weights).total; }, epsilon);
}

struct GradCheckCase {
  ColorField field;
  LabelMap labels;
};

/// Random field in [0,255] and random labels where every id in 0..instances
/// owns at least one pixel.
inline GradCheckCase random_gradcheck_case(int width, int height, int instances, std::uint64_t seed) {
  require_dims(width, height);
  const std::size_t n = static_cast<std::size_t>(width) * height;
  if (instances < 1 || static_cast<std::size_t>(instances) + 1 > n) {
    throw std::invalid_argument("random_gradcheck_case: need 1 <= instances < width*height");
  }
  Rng rng(seed);
  std::vector<std::uint32_t> ids(n);
  for (auto& id : ids) id = static_cast<std::uint32_t>(rng.uniform_int(0, instances));
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  for (std::size_t k = n; k > 1; --k) {
    std::swap(perm[k - 1], perm[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(k) - 1))]);
  }
  for (int i = 0; i <= instances; ++i) ids[perm[static_cast<std::size_t>(i)]] = static_cast<std::uint32_t>(i);
  GradCheckCase c{ColorField(width, height), LabelMap(width, height, std::move(ids))};
  for (auto& v : c.field.values()) v = rng.uniform(0.0, 255.0);
  return c;
}

}  // namespace icl

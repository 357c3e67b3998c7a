#pragma once

// Instance coloring loss: intra-instance variance, inter-instance separation
// and mean-level separation terms, plus the exact analytic gradient of their
// weighted sum with respect to every predicted pixel channel.
//
// All accumulation is double precision in a fixed order (pixels row-major,
// instances ascending) so results are bit-reproducible.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <vector>

#include "icl/field.hpp"

namespace icl {

struct LossWeights {
  double lambda_sep = 300.0;
  double lambda_mean = 300.0;
  double smooth_l1_beta = 1.0;
  bool enable_var = true;
  bool enable_sep = true;
  bool enable_mean = true;
  std::size_t instance_cap = 1250;
};

struct LossReport {
  double l_var = 0.0;
  double l_sep = 0.0;
  double l_mean = 0.0;
  double total = 0.0;
};

/// d(total)/d(p_{j,c}); same layout as the field it was computed for.
class GradField : public ColorField {
 public:
  using ColorField::ColorField;
};

inline double smooth_l1(double d, double beta) {
  const double a = std::abs(d);
  return a < beta ? 0.5 * d * d / beta : a - 0.5 * beta;
}

inline double smooth_l1_grad(double d, double beta) {
  if (std::abs(d) < beta) return d / beta;
  return d > 0.0 ? 1.0 : -1.0;
}

namespace detail {

/// Pixel-to-slot assignment after applying the instance cap. Slot 0 is the
/// background; slots 1..n are the kept instances in ascending id order.
/// Pixels of dropped instances get slot -1 and take part in no sum.
struct InstanceLayout {
  std::vector<std::int32_t> slot;
  std::vector<std::size_t> counts;
  std::size_t active = 0;

  std::size_t kept() const { return counts.size() - 1; }
  std::size_t complement(std::size_t i) const { return active - counts[i]; }
};

inline InstanceLayout make_layout(const LabelMap& labels, std::size_t cap) {
  const InstanceStats stats = instance_pixel_sets(labels);
  const std::size_t n = stats.instance_count();
  std::vector<std::int32_t> id_to_slot(n + 1, -1);
  id_to_slot[0] = 0;
  if (n <= cap) {
    for (std::size_t i = 1; i <= n; ++i) id_to_slot[i] = static_cast<std::int32_t>(i);
  } else {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{1});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return stats.counts[a] > stats.counts[b]; });
    order.resize(cap);
    std::sort(order.begin(), order.end());
    for (std::size_t k = 0; k < order.size(); ++k) id_to_slot[order[k]] = static_cast<std::int32_t>(k + 1);
  }
  InstanceLayout layout;
  layout.slot.resize(labels.pixel_count());
  layout.counts.assign(std::min(n, cap) + 1, 0);
  for (std::size_t j = 0; j < labels.pixel_count(); ++j) {
    const auto s = id_to_slot[labels[j]];
    layout.slot[j] = s;
    if (s >= 0) {
      ++layout.counts[static_cast<std::size_t>(s)];
      ++layout.active;
    }
  }
  return layout;
}

inline std::vector<Color> slot_means(const ColorField& field, const InstanceLayout& layout) {
  std::vector<Color> means(layout.counts.size(), Color{0.0, 0.0, 0.0});
  const auto v = field.values();
  for (std::size_t j = 0; j < layout.slot.size(); ++j) {
    const auto s = layout.slot[j];
    if (s <= 0) continue;
    for (int c = 0; c < 3; ++c) means[s][c] += v[3 * j + c];
  }
  for (std::size_t i = 1; i < means.size(); ++i) {
    for (int c = 0; c < 3; ++c) means[i][c] /= static_cast<double>(layout.counts[i]);
  }
  return means;
}

// 1 / (sqrt|S_i| * |T_i|), zero when the complement is empty. An empty
// background uses sqrt(1) so its term stays finite.
inline double sep_normalizer(const InstanceLayout& layout, std::size_t i) {
  const std::size_t t = layout.complement(i);
  if (t == 0) return 0.0;
  const double s = static_cast<double>(std::max<std::size_t>(layout.counts[i], 1));
  return 1.0 / (std::sqrt(s) * static_cast<double>(t));
}

inline double var_term(const ColorField& field, const InstanceLayout& layout, const std::vector<Color>& means,
                       double beta) {
  std::vector<double> per_slot(layout.counts.size(), 0.0);
  const auto v = field.values();
  for (std::size_t j = 0; j < layout.slot.size(); ++j) {
    const auto s = layout.slot[j];
    if (s < 0) continue;
    for (int c = 0; c < 3; ++c) per_slot[s] += smooth_l1(v[3 * j + c] - means[s][c], beta);
  }
  double total = 0.0;
  for (std::size_t i = 0; i < per_slot.size(); ++i) {
    if (layout.counts[i] > 0) total += per_slot[i] / static_cast<double>(layout.counts[i]);
  }
  return total;
}

inline double sep_term(const ColorField& field, const InstanceLayout& layout, const std::vector<Color>& means) {
  const auto v = field.values();
  double total = 0.0;
  for (std::size_t i = 0; i < layout.counts.size(); ++i) {
    const double w = sep_normalizer(layout, i);
    if (w == 0.0) continue;
    double acc = 0.0;
    for (std::size_t j = 0; j < layout.slot.size(); ++j) {
      const auto s = layout.slot[j];
      if (s < 0 || static_cast<std::size_t>(s) == i) continue;
      double d2 = 0.0;
      for (int c = 0; c < 3; ++c) {
        const double d = v[3 * j + c] - means[i][c];
        d2 += d * d;
      }
      acc += 1.0 / (1.0 + d2);
    }
    total += w * acc;
  }
  return total;
}

inline double mean_term(const std::vector<Color>& means) {
  const std::size_t n = means.size() - 1;
  if (n == 0) return 0.0;
  double acc = 0.0;
  for (std::size_t i = 0; i <= n; ++i) {
    for (std::size_t k = i + 1; k <= n; ++k) acc += 1.0 / (1.0 + squared_distance(means[i], means[k]));
  }
  return acc / (static_cast<double>(n) * static_cast<double>(n + 1));
}

inline LossReport combine(double l_var, double l_sep, double l_mean, const LossWeights& w) {
  LossReport r{l_var, l_sep, l_mean, 0.0};
  if (w.enable_var) r.total += l_var;
  if (w.enable_sep) r.total += w.lambda_sep * l_sep;
  if (w.enable_mean) r.total += w.lambda_mean * l_mean;
  return r;
}

constexpr std::size_t kNoCap = std::numeric_limits<std::size_t>::max();

}  // namespace detail

inline double loss_var(const ColorField& field, const LabelMap& labels, double beta = 1.0) {
  require_same_dims(field, labels);
  const auto layout = detail::make_layout(labels, detail::kNoCap);
  return detail::var_term(field, layout, detail::slot_means(field, layout), beta);
}

inline double loss_sep(const ColorField& field, const LabelMap& labels) {
  require_same_dims(field, labels);
  const auto layout = detail::make_layout(labels, detail::kNoCap);
  return detail::sep_term(field, layout, detail::slot_means(field, layout));
}

inline double loss_mean(const ColorField& field, const LabelMap& labels) {
  require_same_dims(field, labels);
  const auto layout = detail::make_layout(labels, detail::kNoCap);
  return detail::mean_term(detail::slot_means(field, layout));
}

inline LossReport loss_total(const ColorField& field, const LabelMap& labels, const LossWeights& weights = {}) {
  require_same_dims(field, labels);
  const auto layout = detail::make_layout(labels, weights.instance_cap);
  const auto means = detail::slot_means(field, layout);
  return detail::combine(detail::var_term(field, layout, means, weights.smooth_l1_beta),
                         detail::sep_term(field, layout, means), detail::mean_term(means), weights);
}

/// Exact gradient of loss_total().total, including the dependence of every
/// instance mean on its member pixels. The background mean is a constant.
inline GradField loss_gradient(const ColorField& field, const LabelMap& labels, const LossWeights& weights = {}) {
  require_same_dims(field, labels);
  const auto layout = detail::make_layout(labels, weights.instance_cap);
  const auto means = detail::slot_means(field, layout);
  const std::size_t slots = layout.counts.size();
  const auto v = field.values();
  GradField grad(field.width(), field.height());
  auto g = grad.values();

  // Per-slot d(total)/d(mu_i), pushed back onto member pixels at the end.
  std::vector<Color> mean_grad(slots, Color{0.0, 0.0, 0.0});

  if (weights.enable_var) {
    const double beta = weights.smooth_l1_beta;
    for (std::size_t j = 0; j < layout.slot.size(); ++j) {
      const auto s = layout.slot[j];
      if (s < 0) continue;
      const double inv = 1.0 / static_cast<double>(layout.counts[s]);
      for (int c = 0; c < 3; ++c) {
        const double h = smooth_l1_grad(v[3 * j + c] - means[s][c], beta) * inv;
        g[3 * j + c] += h;
        if (s > 0) mean_grad[s][c] -= h;
      }
    }
  }

  if (weights.enable_sep) {
    for (std::size_t i = 0; i < slots; ++i) {
      const double w = weights.lambda_sep * detail::sep_normalizer(layout, i);
      if (w == 0.0) continue;
      for (std::size_t j = 0; j < layout.slot.size(); ++j) {
        const auto s = layout.slot[j];
        if (s < 0 || static_cast<std::size_t>(s) == i) continue;
        double d[3];
        double d2 = 0.0;
        for (int c = 0; c < 3; ++c) {
          d[c] = v[3 * j + c] - means[i][c];
          d2 += d[c] * d[c];
        }
        const double q = 1.0 + d2;
        const double k = -2.0 * w / (q * q);
        for (int c = 0; c < 3; ++c) {
          g[3 * j + c] += k * d[c];
          if (i > 0) mean_grad[i][c] -= k * d[c];
        }
      }
    }
  }

  if (weights.enable_mean && slots > 1) {
    const double n = static_cast<double>(slots - 1);
    const double norm = weights.lambda_mean / (n * (n + 1.0));
    for (std::size_t i = 0; i < slots; ++i) {
      for (std::size_t k = i + 1; k < slots; ++k) {
        const double q = 1.0 + squared_distance(means[i], means[k]);
        const double f = -2.0 * norm / (q * q);
        for (int c = 0; c < 3; ++c) {
          const double t = f * (means[i][c] - means[k][c]);
          mean_grad[i][c] += t;
          mean_grad[k][c] -= t;
        }
      }
    }
  }

  for (std::size_t j = 0; j < layout.slot.size(); ++j) {
    const auto s = layout.slot[j];
    if (s <= 0) continue;
    const double inv = 1.0 / static_cast<double>(layout.counts[s]);
    for (int c = 0; c < 3; ++c) g[3 * j + c] += mean_grad[s][c] * inv;
  }
  return grad;
}

}  // namespace icl

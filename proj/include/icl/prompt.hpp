#pragma once

// Point-prompted mask extraction from a color field: a Gaussian-weighted
// query color, an inverse-distance similarity map, min-max normalization,
// joint bilateral smoothing guided by the field, per-pixel max over prompts,
// and a threshold.

#include <algorithm>
#include <cmath>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "icl/field.hpp"

namespace icl {

inline constexpr double kDefaultPromptThreshold = 3.0 / 255.0;

struct PromptPoint {
  int x = 0;
  int y = 0;
  bool operator==(const PromptPoint&) const = default;
};

/// Scalar H x W grid, values in [0,1] once normalized.
class SimilarityMap {
 public:
  SimilarityMap() = default;
  SimilarityMap(int width, int height, double fill = 0.0) : width_(width), height_(height) {
    require_dims(width, height);
    values_.assign(static_cast<std::size_t>(width) * height, fill);
  }

  int width() const { return width_; }
  int height() const { return height_; }
  double& at(int x, int y) { return values_[static_cast<std::size_t>(y) * width_ + x]; }
  double at(int x, int y) const { return values_[static_cast<std::size_t>(y) * width_ + x]; }
  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }

  bool operator==(const SimilarityMap&) const = default;

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<double> values_;
};

struct BilateralParams {
  int window = 9;
  double sigma_spatial = 2.25;
  double sigma_range = 10.0;
};

inline void require_in_bounds(const ColorField& field, const PromptPoint& p) {
  if (p.x < 0 || p.y < 0 || p.x >= field.width() || p.y >= field.height()) {
    throw std::out_of_range("prompt point (" + std::to_string(p.x) + "," + std::to_string(p.y) +
                            ") outside " + std::to_string(field.width()) + "x" + std::to_string(field.height()));
  }
}

/// Gaussian-weighted mean color around `p`, sigma = 1% of each image axis.
/// The kernel is truncated at 3 sigma, never narrower than one pixel.
inline Color query_vector(const ColorField& field, PromptPoint p) {
  require_in_bounds(field, p);
  const double sx = 0.01 * field.width();
  const double sy = 0.01 * field.height();
  const int rx = std::max(1, static_cast<int>(std::floor(3.0 * sx)));
  const int ry = std::max(1, static_cast<int>(std::floor(3.0 * sy)));
  Color acc{0.0, 0.0, 0.0};
  double wsum = 0.0;
  for (int y = std::max(0, p.y - ry); y <= std::min(field.height() - 1, p.y + ry); ++y) {
    const double dy = (y - p.y) / sy;
    for (int x = std::max(0, p.x - rx); x <= std::min(field.width() - 1, p.x + rx); ++x) {
      const double dx = (x - p.x) / sx;
      const double w = std::exp(-0.5 * (dx * dx + dy * dy));
      for (int c = 0; c < 3; ++c) acc[c] += w * field.at(x, y, c);
      wsum += w;
    }
  }
  for (auto& a : acc) a /= wsum;
  return acc;
}

/// Raw similarity min(1, 1/||F - q||); distances at or below 1 saturate.
inline SimilarityMap raw_similarity(const ColorField& field, const Color& q) {
  for (double v : q) {
    if (!std::isfinite(v)) throw std::invalid_argument("similarity_map: non-finite query color");
  }
  SimilarityMap s(field.width(), field.height());
  auto out = s.values();
  for (std::size_t j = 0; j < field.pixel_count(); ++j) {
    const double d = std::sqrt(squared_distance(field.pixel(j), q));
    out[j] = d <= 1.0 ? 1.0 : 1.0 / d;
  }
  return s;
}

/// Min-max normalization to [0,1]; a constant map becomes all ones.
inline void normalize_similarity(SimilarityMap& s) {
  auto v = s.values();
  const auto [lo_it, hi_it] = std::minmax_element(v.begin(), v.end());
  const double lo = *lo_it;
  const double hi = *hi_it;
  if (!(hi > lo)) {
    std::fill(v.begin(), v.end(), 1.0);
    return;
  }
  const double inv = 1.0 / (hi - lo);
  for (auto& x : v) x = (x - lo) * inv;
}

inline SimilarityMap similarity_map(const ColorField& field, const Color& q) {
  SimilarityMap s = raw_similarity(field, q);
  normalize_similarity(s);
  return s;
}

/// Joint bilateral filter of `map` guided by the colors of `guide`.
/// Near borders only in-image neighbors contribute.
inline SimilarityMap joint_bilateral_smooth(const SimilarityMap& map, const ColorField& guide,
                                            const BilateralParams& params = {}) {
  if (params.window < 1 || params.window % 2 == 0) {
    throw std::invalid_argument("joint_bilateral_smooth: window must be odd and positive, got " +
                                std::to_string(params.window));
  }
  if (map.width() != guide.width() || map.height() != guide.height()) {
    throw std::invalid_argument("joint_bilateral_smooth: map and guide dimensions differ");
  }
  const int r = params.window / 2;
  const int w = map.width();
  const int h = map.height();
  const double ks = -0.5 / (params.sigma_spatial * params.sigma_spatial);
  const double kr = -0.5 / (params.sigma_range * params.sigma_range);

  std::vector<double> spatial(static_cast<std::size_t>(params.window) * params.window);
  for (int dy = -r; dy <= r; ++dy) {
    for (int dx = -r; dx <= r; ++dx) {
      spatial[static_cast<std::size_t>(dy + r) * params.window + (dx + r)] = std::exp(ks * (dx * dx + dy * dy));
    }
  }

  SimilarityMap out(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const Color center = guide.pixel(x, y);
      double num = 0.0;
      double den = 0.0;
      for (int ny = std::max(0, y - r); ny <= std::min(h - 1, y + r); ++ny) {
        for (int nx = std::max(0, x - r); nx <= std::min(w - 1, x + r); ++nx) {
          const double ws = spatial[static_cast<std::size_t>(ny - y + r) * params.window + (nx - x + r)];
          const double wt = ws * std::exp(kr * squared_distance(guide.pixel(nx, ny), center));
          num += wt * map.at(nx, ny);
          den += wt;
        }
      }
      out.at(x, y) = num / den;
    }
  }
  return out;
}

/// Smoothed, normalized similarity map for a single prompt.
inline SimilarityMap prompt_similarity(const ColorField& field, PromptPoint p, const BilateralParams& params = {}) {
  return joint_bilateral_smooth(similarity_map(field, query_vector(field, p)), field, params);
}

/// Per-pixel max over the per-prompt maps.
inline SimilarityMap merged_similarity(const ColorField& field, std::span<const PromptPoint> points,
                                       const BilateralParams& params = {}) {
  if (points.empty()) throw std::invalid_argument("prompt_mask: at least one prompt point is required");
  for (const auto& p : points) require_in_bounds(field, p);
  SimilarityMap merged(field.width(), field.height(), -std::numeric_limits<double>::infinity());
  for (const auto& p : points) {
    const SimilarityMap s = prompt_similarity(field, p, params);
    auto m = merged.values();
    auto sv = s.values();
    for (std::size_t j = 0; j < m.size(); ++j) m[j] = std::max(m[j], sv[j]);
  }
  return merged;
}

inline BinaryMask threshold_map(const SimilarityMap& s, double threshold) {
  BinaryMask mask(s.width(), s.height());
  auto v = s.values();
  for (std::size_t j = 0; j < v.size(); ++j) mask.set(j, v[j] > threshold);
  return mask;
}

inline BinaryMask prompt_mask(const ColorField& field, std::span<const PromptPoint> points,
                              double threshold = kDefaultPromptThreshold, const BilateralParams& params = {}) {
  return threshold_map(merged_similarity(field, points, params), threshold);
}

inline BinaryMask prompt_mask(const ColorField& field, std::initializer_list<PromptPoint> points,
                              double threshold = kDefaultPromptThreshold, const BilateralParams& params = {}) {
  return prompt_mask(field, std::span<const PromptPoint>(points.begin(), points.size()), threshold, params);
}

}  // namespace icl

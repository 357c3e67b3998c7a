#pragma once

// Grid types shared by every module: the 3-channel color field, the instance
// label map, boolean masks, and the per-instance bookkeeping the loss needs.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "icl/rng.hpp"

namespace icl {

using Color = std::array<double, 3>;

inline double squared_distance(const Color& a, const Color& b) {
  double s = 0.0;
  for (int c = 0; c < 3; ++c) {
    const double d = a[c] - b[c];
    s += d * d;
  }
  return s;
}

inline void require_dims(int width, int height) {
  if (width < 1 || height < 1) {
    throw std::invalid_argument("grid dimensions must be at least 1x1, got " +
                                std::to_string(width) + "x" + std::to_string(height));
  }
}

/// Dense H x W x 3 grid of real colors, row-major, channel-interleaved.
/// Channel unit is color intensity on the [0,255] scale.
class ColorField {
 public:
  ColorField() = default;
  ColorField(int width, int height, double fill = 0.0)
      : width_(width), height_(height) {
    require_dims(width, height);
    values_.assign(static_cast<std::size_t>(width) * height * 3, fill);
  }
  ColorField(int width, int height, std::vector<double> values)
      : width_(width), height_(height), values_(std::move(values)) {
    require_dims(width, height);
    if (values_.size() != static_cast<std::size_t>(width) * height * 3) {
      throw std::invalid_argument("color field expects width*height*3 values");
    }
  }

  int width() const { return width_; }
  int height() const { return height_; }
  std::size_t pixel_count() const { return static_cast<std::size_t>(width_) * height_; }
  std::size_t size() const { return values_.size(); }

  double& at(int x, int y, int c) { return values_[index(x, y) * 3 + c]; }
  double at(int x, int y, int c) const { return values_[index(x, y) * 3 + c]; }

  Color pixel(std::size_t j) const { return {values_[3 * j], values_[3 * j + 1], values_[3 * j + 2]}; }
  Color pixel(int x, int y) const { return pixel(index(x, y)); }
  void set_pixel(std::size_t j, const Color& c) {
    values_[3 * j] = c[0];
    values_[3 * j + 1] = c[1];
    values_[3 * j + 2] = c[2];
  }

  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }

  std::size_t index(int x, int y) const { return static_cast<std::size_t>(y) * width_ + x; }

  bool all_finite() const {
    return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
  }

  bool operator==(const ColorField&) const = default;

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<double> values_;
};

/// Per-pixel instance ids; 0 is background, instances are 1..n.
class LabelMap {
 public:
  LabelMap() = default;
  LabelMap(int width, int height, std::uint32_t fill = 0) : width_(width), height_(height) {
    require_dims(width, height);
    ids_.assign(static_cast<std::size_t>(width) * height, fill);
  }
  LabelMap(int width, int height, std::vector<std::uint32_t> ids)
      : width_(width), height_(height), ids_(std::move(ids)) {
    require_dims(width, height);
    if (ids_.size() != static_cast<std::size_t>(width) * height) {
      throw std::invalid_argument("label map expects width*height ids");
    }
  }

  int width() const { return width_; }
  int height() const { return height_; }
  std::size_t pixel_count() const { return ids_.size(); }

  std::uint32_t& at(int x, int y) { return ids_[static_cast<std::size_t>(y) * width_ + x]; }
  std::uint32_t at(int x, int y) const { return ids_[static_cast<std::size_t>(y) * width_ + x]; }
  std::uint32_t operator[](std::size_t j) const { return ids_[j]; }

  std::span<std::uint32_t> ids() { return ids_; }
  std::span<const std::uint32_t> ids() const { return ids_; }

  /// Largest id present; equals the instance count for a valid map.
  std::uint32_t max_id() const {
    return ids_.empty() ? 0 : *std::max_element(ids_.begin(), ids_.end());
  }

  bool operator==(const LabelMap&) const = default;

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<std::uint32_t> ids_;
};

/// H x W booleans stored as bytes (0/1).
class BinaryMask {
 public:
  BinaryMask() = default;
  BinaryMask(int width, int height, bool fill = false) : width_(width), height_(height) {
    require_dims(width, height);
    bits_.assign(static_cast<std::size_t>(width) * height, fill ? 1 : 0);
  }

  int width() const { return width_; }
  int height() const { return height_; }
  std::size_t pixel_count() const { return bits_.size(); }

  bool at(int x, int y) const { return bits_[static_cast<std::size_t>(y) * width_ + x] != 0; }
  void set(int x, int y, bool v = true) { bits_[static_cast<std::size_t>(y) * width_ + x] = v ? 1 : 0; }
  bool operator[](std::size_t j) const { return bits_[j] != 0; }
  void set(std::size_t j, bool v = true) { bits_[j] = v ? 1 : 0; }

  std::size_t count() const {
    return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), std::uint8_t{1}));
  }
  bool empty() const { return count() == 0; }

  bool operator==(const BinaryMask&) const = default;

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<std::uint8_t> bits_;
};

inline BinaryMask instance_mask(const LabelMap& labels, std::uint32_t id) {
  BinaryMask m(labels.width(), labels.height());
  for (std::size_t j = 0; j < labels.pixel_count(); ++j) m.set(j, labels[j] == id);
  return m;
}

/// Pixel counts |S_i| for ids 0..n and, once filled, the mean color of each.
struct InstanceStats {
  std::size_t total = 0;            // |Omega|
  std::vector<std::size_t> counts;  // index = instance id
  std::vector<Color> means;         // empty until instance_means runs

  std::size_t instance_count() const { return counts.empty() ? 0 : counts.size() - 1; }
  std::size_t complement(std::size_t i) const { return total - counts[i]; }
};

/// Throws if the ids present are not exactly {1..n} (background optional).
inline void validate_labels(const LabelMap& labels) {
  const std::uint32_t n = labels.max_id();
  std::vector<bool> seen(static_cast<std::size_t>(n) + 1, false);
  for (auto id : labels.ids()) seen[id] = true;
  for (std::uint32_t i = 1; i <= n; ++i) {
    if (!seen[i]) {
      throw std::invalid_argument("label ids are not contiguous: missing id " + std::to_string(i));
    }
  }
}

inline InstanceStats instance_pixel_sets(const LabelMap& labels) {
  validate_labels(labels);
  InstanceStats stats;
  stats.total = labels.pixel_count();
  stats.counts.assign(static_cast<std::size_t>(labels.max_id()) + 1, 0);
  for (auto id : labels.ids()) ++stats.counts[id];
  return stats;
}

inline void require_same_dims(const ColorField& f, const LabelMap& l) {
  if (f.width() != l.width() || f.height() != l.height()) {
    throw std::invalid_argument("dimension mismatch: field " + std::to_string(f.width()) + "x" +
                                std::to_string(f.height()) + " vs labels " + std::to_string(l.width()) +
                                "x" + std::to_string(l.height()));
  }
}

/// Mean color per instance. The background mean is pinned to black.
inline InstanceStats instance_means(const ColorField& field, const LabelMap& labels) {
  require_same_dims(field, labels);
  InstanceStats stats = instance_pixel_sets(labels);
  stats.means.assign(stats.counts.size(), Color{0.0, 0.0, 0.0});
  const auto v = field.values();
  for (std::size_t j = 0; j < labels.pixel_count(); ++j) {
    const auto id = labels[j];
    if (id == 0) continue;
    for (int c = 0; c < 3; ++c) stats.means[id][c] += v[3 * j + c];
  }
  for (std::size_t i = 1; i < stats.counts.size(); ++i) {
    for (int c = 0; c < 3; ++c) stats.means[i][c] /= static_cast<double>(stats.counts[i]);
  }
  return stats;
}

struct EncodedColors {
  ColorField field;
  std::vector<Color> palette;  // index = instance id, palette[0] is black
  double min_separation = std::numeric_limits<double>::infinity();
};

/// Paints every instance a constant integer RGB color, background black.
///
/// Colors are chosen by best-candidate sampling: for each instance 1000
/// seeded candidates are drawn and the one farthest from every color placed
/// so far (black included) wins. For small n this lands far above the 48-unit
/// floor; for very large n it degrades to the best achievable spread, and
/// `min_separation` reports what was reached.
inline EncodedColors encode_labels_as_colors_detailed(const LabelMap& labels, std::uint64_t seed) {
  constexpr int kCandidates = 1000;
  validate_labels(labels);
  const std::uint32_t n = labels.max_id();
  Rng rng(seed);
  EncodedColors out;
  out.palette.push_back(Color{0.0, 0.0, 0.0});
  for (std::uint32_t i = 1; i <= n; ++i) {
    Color best{};
    double best_d2 = -1.0;
    for (int k = 0; k < kCandidates; ++k) {
      Color cand{static_cast<double>(rng.uniform_int(0, 255)), static_cast<double>(rng.uniform_int(0, 255)),
                 static_cast<double>(rng.uniform_int(0, 255))};
      double d2 = std::numeric_limits<double>::infinity();
      for (const auto& p : out.palette) d2 = std::min(d2, squared_distance(cand, p));
      if (d2 > best_d2) {
        best_d2 = d2;
        best = cand;
      }
    }
    out.palette.push_back(best);
    out.min_separation = std::min(out.min_separation, std::sqrt(best_d2));
  }
  out.field = ColorField(labels.width(), labels.height());
  for (std::size_t j = 0; j < labels.pixel_count(); ++j) out.field.set_pixel(j, out.palette[labels[j]]);
  return out;
}

inline ColorField encode_labels_as_colors(const LabelMap& labels, std::uint64_t seed) {
  return encode_labels_as_colors_detailed(labels, seed).field;
}

/// Joint (all channels) affine min-max map of raw values onto [0,255].
/// A constant input maps to all zeros.
inline ColorField normalize_field(int width, int height, std::span<const double> raw) {
  for (double v : raw) {
    if (!std::isfinite(v)) throw std::invalid_argument("normalize_field: non-finite input value");
  }
  ColorField out(width, height);
  if (raw.size() != out.size()) throw std::invalid_argument("normalize_field: expected width*height*3 values");
  const auto [lo_it, hi_it] = std::minmax_element(raw.begin(), raw.end());
  const double lo = *lo_it;
  const double hi = *hi_it;
  if (!(hi > lo)) return out;
  const double scale = 255.0 / (hi - lo);
  auto dst = out.values();
  for (std::size_t k = 0; k < raw.size(); ++k) dst[k] = std::clamp((raw[k] - lo) * scale, 0.0, 255.0);
  return out;
}

inline ColorField normalize_field(const ColorField& raw) {
  return normalize_field(raw.width(), raw.height(), raw.values());
}

/// Pulls d(loss)/d(normalized) back through normalize_field onto the raw
/// values. The min and max entries (first occurrence) also carry the
/// gradient of the affine bounds. Constant input has zero gradient.
inline std::vector<double> normalize_field_backward(std::span<const double> raw, std::span<const double> grad_out) {
  std::vector<double> grad_in(raw.size(), 0.0);
  const auto lo_it = std::min_element(raw.begin(), raw.end());
  const auto hi_it = std::max_element(raw.begin(), raw.end());
  const double lo = *lo_it;
  const double hi = *hi_it;
  if (!(hi > lo)) return grad_in;
  const double span = hi - lo;
  const double r = 255.0 / span;
  double d_lo = 0.0;
  double d_hi = 0.0;
  for (std::size_t k = 0; k < raw.size(); ++k) {
    grad_in[k] = r * grad_out[k];
    const double u = (raw[k] - lo) / span;  // normalized / 255
    d_lo += grad_out[k] * r * (u - 1.0);
    d_hi -= grad_out[k] * r * u;
  }
  grad_in[static_cast<std::size_t>(lo_it - raw.begin())] += d_lo;
  grad_in[static_cast<std::size_t>(hi_it - raw.begin())] += d_hi;
  return grad_in;
}

}  // namespace icl

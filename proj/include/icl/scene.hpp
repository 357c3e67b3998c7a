#pragma once

// Procedural flat-shaded scenes of rectangles, circles and triangles drawn
// back-to-front, with pixel-exact instance labels.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "icl/field.hpp"
#include "icl/rng.hpp"

namespace icl {

enum class ShapeKind { rectangle, circle, triangle };
enum class FillMode { flat, two_tone };

struct SceneSpec {
  std::uint64_t seed = 0;
  int width = 64;
  int height = 64;
  int min_shapes = 1;
  int max_shapes = 6;
  std::vector<ShapeKind> kinds{ShapeKind::rectangle, ShapeKind::circle, ShapeKind::triangle};
  FillMode fill = FillMode::flat;
  double min_color_separation = 32.0;
  int min_visible_pixels = 4;
};

struct Scene {
  ColorField image;
  LabelMap labels;
};

namespace detail {

struct Shape {
  ShapeKind kind = ShapeKind::rectangle;
  double cx = 0, cy = 0;
  double rx = 0, ry = 0;                 // rectangle half extents / circle radius in rx
  std::array<double, 6> tri{};           // triangle vertices x0,y0,x1,y1,x2,y2
  Color color{};
  Color tone{};                          // second tone for two_tone fills

  bool contains(double px, double py) const {
    switch (kind) {
      case ShapeKind::rectangle:
        return std::abs(px - cx) <= rx && std::abs(py - cy) <= ry;
      case ShapeKind::circle:
        return (px - cx) * (px - cx) + (py - cy) * (py - cy) <= rx * rx;
      case ShapeKind::triangle: {
        auto edge = [&](int a, int b) {
          return (tri[2 * b] - tri[2 * a]) * (py - tri[2 * a + 1]) - (tri[2 * b + 1] - tri[2 * a + 1]) * (px - tri[2 * a]);
        };
        const double e0 = edge(0, 1);
        const double e1 = edge(1, 2);
        const double e2 = edge(2, 0);
        return (e0 >= 0 && e1 >= 0 && e2 >= 0) || (e0 <= 0 && e1 <= 0 && e2 <= 0);
      }
    }
    return false;
  }
};

inline void place_shape(Shape& s, const SceneSpec& spec, Rng& rng) {
  const double side = std::min(spec.width, spec.height);
  const double r_min = std::max(2.0, 0.06 * side);
  const double r_max = std::max(r_min + 1.0, 0.22 * side);
  s.cx = rng.uniform(0.0, spec.width);
  s.cy = rng.uniform(0.0, spec.height);
  s.rx = rng.uniform(r_min, r_max);
  s.ry = rng.uniform(r_min, r_max);
  if (s.kind == ShapeKind::triangle) {
    // Roughly equiangular vertices keep triangles from degenerating to slivers.
    double a = rng.uniform(0.0, 2.0 * std::numbers::pi);
    for (int k = 0; k < 3; ++k) {
      const double r = rng.uniform(r_min, r_max);
      s.tri[2 * k] = s.cx + r * std::cos(a);
      s.tri[2 * k + 1] = s.cy + r * std::sin(a);
      a += 2.0 * std::numbers::pi / 3.0 + rng.uniform(-0.5, 0.5);
    }
  }
}

inline Color random_color(Rng& rng) {
  return {static_cast<double>(rng.uniform_int(0, 255)), static_cast<double>(rng.uniform_int(0, 255)),
          static_cast<double>(rng.uniform_int(0, 255))};
}

// Painter's order: shape k (1-based id k + 1) claims every pixel whose
// center it contains, overwriting earlier shapes.
inline std::vector<std::uint32_t> paint_owners(const std::vector<Shape>& shapes, int w, int h) {
  std::vector<std::uint32_t> owner(static_cast<std::size_t>(w) * h, 0u);
  for (std::size_t k = 0; k < shapes.size(); ++k) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        if (shapes[k].contains(x + 0.5, y + 0.5)) owner[static_cast<std::size_t>(y) * w + x] = static_cast<std::uint32_t>(k + 1);
      }
    }
  }
  return owner;
}

// True for ids owning at least one pixel whose whole in-canvas 3x3
// neighborhood carries the same id. Slivers without such a pixel cannot be
// prompted reliably, since the query window is dominated by other colors.
inline std::vector<bool> has_solid_core(const std::vector<std::uint32_t>& owner, int w, int h, int count) {
  std::vector<bool> core(static_cast<std::size_t>(count) + 1, false);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const auto id = owner[static_cast<std::size_t>(y) * w + x];
      if (id == 0 || core[id]) continue;
      bool solid = true;
      for (int ny = std::max(0, y - 1); ny <= std::min(h - 1, y + 1) && solid; ++ny) {
        for (int nx = std::max(0, x - 1); nx <= std::min(w - 1, x + 1) && solid; ++nx) {
          solid = owner[static_cast<std::size_t>(ny) * w + nx] == id;
        }
      }
      core[id] = solid;
    }
  }
  return core;
}

}  // namespace detail

inline void validate_spec(const SceneSpec& spec) {
  require_dims(spec.width, spec.height);
  if (spec.min_shapes < 1 || spec.max_shapes < spec.min_shapes) {
    throw std::invalid_argument("scene spec: need 1 <= min_shapes <= max_shapes");
  }
  if (spec.kinds.empty()) throw std::invalid_argument("scene spec: no shape kinds enabled");
}

/// Renders one scene. Shape colors are pairwise at least
/// `min_color_separation` apart and from the flat background color; shapes
/// left with fewer than `min_visible_pixels` visible pixels, or with no pixel
/// whose 3x3 neighborhood is entirely their own, are re-placed.
inline Scene generate_scene(const SceneSpec& spec) {
  constexpr int kMaxAttempts = 1000;
  validate_spec(spec);
  Rng rng(spec.seed);
  const int count = static_cast<int>(rng.uniform_int(spec.min_shapes, spec.max_shapes));
  const double sep2 = spec.min_color_separation * spec.min_color_separation;

  std::vector<Color> palette{detail::random_color(rng)};  // [0] = background
  int attempts = 0;
  while (static_cast<int>(palette.size()) < count + 1) {
    if (++attempts > kMaxAttempts) {
      throw std::runtime_error("generate_scene(seed=" + std::to_string(spec.seed) + "): could not find " +
                               std::to_string(count + 1) + " colors separated by " +
                               std::to_string(spec.min_color_separation) + " after " +
                               std::to_string(kMaxAttempts) + " attempts");
    }
    const Color c = detail::random_color(rng);
    bool ok = true;
    for (const auto& p : palette) ok = ok && squared_distance(c, p) >= sep2;
    if (ok) palette.push_back(c);
  }

  std::vector<detail::Shape> shapes(static_cast<std::size_t>(count));
  for (int k = 0; k < count; ++k) {
    auto& s = shapes[k];
    s.kind = spec.kinds[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(spec.kinds.size()) - 1))];
    s.color = palette[k + 1];
    for (int c = 0; c < 3; ++c) {
      const double off = rng.uniform(12.0, 24.0) * (rng.uniform() < 0.5 ? -1.0 : 1.0);
      s.tone[c] = std::clamp(s.color[c] + std::round(off), 0.0, 255.0);
    }
    detail::place_shape(s, spec, rng);
  }

  std::vector<std::uint32_t> owner;
  attempts = 0;
  for (;;) {
    owner = detail::paint_owners(shapes, spec.width, spec.height);
    std::vector<int> visible(static_cast<std::size_t>(count) + 1, 0);
    for (auto o : owner) ++visible[o];
    const std::vector<bool> core = detail::has_solid_core(owner, spec.width, spec.height, count);
    int failing = -1;
    for (int k = 0; k < count && failing < 0; ++k) {
      if (visible[k + 1] < spec.min_visible_pixels || !core[k + 1]) failing = k;
    }
    if (failing < 0) break;
    if (++attempts > kMaxAttempts) {
      throw std::runtime_error("generate_scene(seed=" + std::to_string(spec.seed) + "): shape " +
                               std::to_string(failing + 1) + " stays below " +
                               std::to_string(spec.min_visible_pixels) + " visible pixels or has no solid core after " +
                               std::to_string(kMaxAttempts) + " placements");
    }
    detail::place_shape(shapes[failing], spec, rng);
  }

  Scene scene{ColorField(spec.width, spec.height), LabelMap(spec.width, spec.height, std::move(owner))};
  for (int y = 0; y < spec.height; ++y) {
    for (int x = 0; x < spec.width; ++x) {
      const std::size_t j = static_cast<std::size_t>(y) * spec.width + x;
      const auto id = scene.labels[j];
      Color c = palette[0];
      if (id > 0) {
        const auto& s = shapes[id - 1];
        c = (spec.fill == FillMode::two_tone && ((x + y) / 3) % 2 == 1) ? s.tone : s.color;
      }
      scene.image.set_pixel(j, c);
    }
  }
  return scene;
}

}  // namespace icl

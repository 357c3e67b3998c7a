#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "icl/scene.hpp"

using namespace icl;

TEST(Scene, Deterministic) {
  const SceneSpec spec{.seed = 17, .fill = FillMode::two_tone};
  const auto a = generate_scene(spec);
  const auto b = generate_scene(spec);
  EXPECT_EQ(a.image, b.image);
  EXPECT_EQ(a.labels, b.labels);
}

TEST(Scene, DifferentSeedsDiffer) { EXPECT_NE(generate_scene({.seed = 1}).image, generate_scene({.seed = 2}).image); }

TEST(Scene, LaterRectangleOwnsOverlap) {
  detail::Shape a, b;
  a.kind = b.kind = ShapeKind::rectangle;
  a.cx = 5, a.cy = 5, a.rx = 3, a.ry = 3;  // columns and rows 2..7
  b.cx = 9, b.cy = 5, b.rx = 3, b.ry = 2;  // columns 6..11, rows 3..6
  const auto owner = detail::paint_owners({a, b}, 14, 10);
  std::size_t na = 0, nb = 0;
  for (int y = 0; y < 10; ++y) {
    for (int x = 0; x < 14; ++x) {
      const auto id = owner[static_cast<std::size_t>(y) * 14 + x];
      const bool in_a = a.contains(x + 0.5, y + 0.5);
      const bool in_b = b.contains(x + 0.5, y + 0.5);
      if (in_b) EXPECT_EQ(id, 2u);
      else if (in_a) EXPECT_EQ(id, 1u);
      else EXPECT_EQ(id, 0u);
      na += id == 1;
      nb += id == 2;
    }
  }
  // a: 6x6 = 36 minus the overlap (columns 6,7 x rows 3..6) -> 28; b: 6x4.
  EXPECT_EQ(na, 28u);
  EXPECT_EQ(nb, 24u);
}

TEST(Scene, SingleShapeHasIdsZeroAndOne) {
  const auto s = generate_scene({.seed = 3, .min_shapes = 1, .max_shapes = 1});
  std::set<std::uint32_t> ids(s.labels.ids().begin(), s.labels.ids().end());
  EXPECT_EQ(ids, (std::set<std::uint32_t>{0, 1}));
}

TEST(Scene, InvariantsHoldOverManySeeds) {
  for (std::uint64_t seed = 0; seed < 60; ++seed) {
    const auto s = generate_scene({.seed = seed});
    ASSERT_NO_THROW(validate_labels(s.labels));
    const auto n = s.labels.max_id();
    ASSERT_GE(n, 1u);
    ASSERT_LE(n, 6u);
    std::vector<std::size_t> count(n + 1, 0);
    std::vector<Color> color(n + 1);
    for (std::size_t j = 0; j < s.labels.pixel_count(); ++j) {
      ++count[s.labels[j]];
      color[s.labels[j]] = s.image.pixel(j);
    }
    for (std::uint32_t i = 1; i <= n; ++i) EXPECT_GE(count[i], 4u) << "seed " << seed;
    // Flat fill: every pixel of an instance (and of the background) shares one color.
    for (std::size_t j = 0; j < s.labels.pixel_count(); ++j) EXPECT_EQ(s.image.pixel(j), color[s.labels[j]]);
    if (count[0] == 0) color[0] = Color{-1000, -1000, -1000};
    for (std::uint32_t i = 0; i <= n; ++i) {
      for (std::uint32_t k = i + 1; k <= n; ++k) {
        if (i == 0 && count[0] == 0) continue;
        EXPECT_GE(std::sqrt(squared_distance(color[i], color[k])), 32.0) << "seed " << seed;
      }
    }
  }
}

TEST(Scene, TwoToneUsesTwoColorsPerShape) {
  const auto s = generate_scene({.seed = 9, .fill = FillMode::two_tone});
  const auto flat = generate_scene({.seed = 9});
  EXPECT_EQ(s.labels, flat.labels);
  std::vector<std::set<std::array<double, 3>>> tones(s.labels.max_id() + 1);
  for (std::size_t j = 0; j < s.labels.pixel_count(); ++j) tones[s.labels[j]].insert(s.image.pixel(j));
  EXPECT_EQ(tones[0].size(), 1u);
  bool some_two = false;
  for (std::size_t i = 1; i < tones.size(); ++i) {
    EXPECT_LE(tones[i].size(), 2u);
    some_two = some_two || tones[i].size() == 2;
  }
  EXPECT_TRUE(some_two);
}

TEST(Scene, ImpossibleColorSeparationReportsAttempts) {
  try {
    generate_scene({.seed = 1, .min_shapes = 6, .max_shapes = 6, .min_color_separation = 400});
    FAIL();
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find("1000 attempts"), std::string::npos) << e.what();
  }
}

TEST(Scene, InvalidSpecRejected) {
  EXPECT_THROW(generate_scene({.width = 0}), std::invalid_argument);
  EXPECT_THROW(generate_scene({.min_shapes = 3, .max_shapes = 2}), std::invalid_argument);
  EXPECT_THROW(generate_scene({.kinds = {}}), std::invalid_argument);
}

TEST(Scene, EachKindRenders) {
  for (auto kind : {ShapeKind::rectangle, ShapeKind::circle, ShapeKind::triangle}) {
    const auto s = generate_scene({.seed = 4, .min_shapes = 3, .max_shapes = 3, .kinds = {kind}});
    EXPECT_EQ(s.labels.max_id(), 3u);
  }
}

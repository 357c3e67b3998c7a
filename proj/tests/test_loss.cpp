#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <set>

#include "icl/loss.hpp"
#include "icl/optim.hpp"
#include "icl/scene.hpp"

using namespace icl;

namespace {

// Straight-line evaluation of the three terms from their definitions, kept
// deliberately naive (sets of pixel indices, no shared helpers).
struct NaiveLoss {
  double var = 0, sep = 0, mean = 0;
};

NaiveLoss naive_loss(const ColorField& f, const LabelMap& l, double beta = 1.0) {
  std::map<std::uint32_t, std::vector<std::size_t>> sets;
  sets[0];
  for (std::size_t j = 0; j < l.pixel_count(); ++j) sets[l[j]].push_back(j);
  const std::size_t n = sets.size() - 1;
  std::map<std::uint32_t, Color> mu;
  for (const auto& [id, px] : sets) {
    Color m{0, 0, 0};
    if (id != 0 && !px.empty()) {
      for (auto j : px) {
        for (int c = 0; c < 3; ++c) m[c] += f.pixel(j)[c];
      }
      for (int c = 0; c < 3; ++c) m[c] /= static_cast<double>(px.size());
    }
    mu[id] = m;
  }
  NaiveLoss out;
  for (const auto& [id, px] : sets) {
    if (px.empty()) continue;
    double s = 0;
    for (auto j : px) {
      for (int c = 0; c < 3; ++c) {
        const double d = std::abs(f.pixel(j)[c] - mu[id][c]);
        s += d < beta ? 0.5 * d * d / beta : d - 0.5 * beta;
      }
    }
    out.var += s / static_cast<double>(px.size());
  }
  for (const auto& [id, px] : sets) {
    const std::size_t t = l.pixel_count() - px.size();
    if (t == 0) continue;
    double s = 0;
    for (std::size_t j = 0; j < l.pixel_count(); ++j) {
      if (l[j] == id) continue;
      s += 1.0 / (1.0 + squared_distance(f.pixel(j), mu[id]));
    }
    out.sep += s / (std::sqrt(static_cast<double>(std::max<std::size_t>(px.size(), 1))) * static_cast<double>(t));
  }
  if (n > 0) {
    double s = 0;
    for (std::uint32_t i = 0; i <= n; ++i) {
      for (std::uint32_t k = i + 1; k <= n; ++k) s += 1.0 / (1.0 + squared_distance(mu[i], mu[k]));
    }
    out.mean = s / static_cast<double>(n * (n + 1));
  }
  return out;
}

LossWeights only(bool var, bool sep, bool mean) {
  LossWeights w;
  w.enable_var = var;
  w.enable_sep = sep;
  w.enable_mean = mean;
  return w;
}

}  // namespace

TEST(LossVar, PerfectColoringIsZero) {
  const auto scene = generate_scene({.seed = 2});
  EXPECT_EQ(loss_var(encode_labels_as_colors(scene.labels, 1), scene.labels), 0.0);
}

TEST(LossVar, TwoPixelInstanceHandValue) {
  ColorField f(2, 1);
  f.at(0, 0, 0) = 0;
  f.at(1, 0, 0) = 2;
  const LabelMap l(2, 1, 1u);
  EXPECT_DOUBLE_EQ(loss_var(f, l), 0.5);
}

TEST(LossVar, BackgroundPixelUsesFixedZeroMean) {
  ColorField f(1, 1);
  f.at(0, 0, 0) = 100;
  EXPECT_DOUBLE_EQ(loss_var(f, LabelMap(1, 1)), 99.5);
}

TEST(LossSep, AllBlackPairIsTwo) {
  const LabelMap l(2, 1, std::vector<std::uint32_t>{1, 0});
  EXPECT_DOUBLE_EQ(loss_sep(ColorField(2, 1), l), 2.0);
}

TEST(LossSep, SaturatedPair) {
  ColorField f(2, 1);
  f.at(0, 0, 0) = 255;
  const LabelMap l(2, 1, std::vector<std::uint32_t>{1, 0});
  EXPECT_NEAR(loss_sep(f, l), 2.0 / 65026.0, 1e-15);
  EXPECT_NEAR(loss_sep(f, l), 3.075e-5, 1e-8);
}

TEST(LossSep, WholeImageInstanceKeepsOnlyBackgroundTerm) {
  ColorField f(3, 1, 40.0);
  const LabelMap l(3, 1, 1u);
  // mu_0 = 0; every pixel is in T_0; |S_0| = 0 is treated as 1.
  const double expect = 3.0 / (1.0 + 3 * 40.0 * 40.0) / 3.0;
  EXPECT_DOUBLE_EQ(loss_sep(f, l), expect);
}

TEST(LossMean, SingleBlackInstance) {
  const LabelMap l(2, 1, std::vector<std::uint32_t>{1, 0});
  EXPECT_DOUBLE_EQ(loss_mean(ColorField(2, 1), l), 0.5);
}

TEST(LossMean, DistanceSquared999) {
  ColorField f(1, 1);
  f.at(0, 0, 0) = std::sqrt(999.0);
  EXPECT_NEAR(loss_mean(f, LabelMap(1, 1, 1u)), 5e-4, 1e-15);
}

TEST(LossMean, NoInstancesIsZero) { EXPECT_EQ(loss_mean(ColorField(3, 3, 9.0), LabelMap(3, 3)), 0.0); }

TEST(LossTotal, ZeroLambdasReduceToVar) {
  const auto c = random_gradcheck_case(6, 5, 3, 11);
  LossWeights w;
  w.lambda_sep = 0;
  w.lambda_mean = 0;
  const auto r = loss_total(c.field, c.labels, w);
  EXPECT_DOUBLE_EQ(r.total, r.l_var);
}

TEST(LossTotal, AllBlackPairComposes) {
  const LabelMap l(2, 1, std::vector<std::uint32_t>{1, 0});
  const auto r = loss_total(ColorField(2, 1), l);
  EXPECT_EQ(r.l_var, 0.0);
  EXPECT_DOUBLE_EQ(r.l_sep, 2.0);
  EXPECT_DOUBLE_EQ(r.l_mean, 0.5);
  EXPECT_DOUBLE_EQ(r.total, 750.0);
}

TEST(LossTotal, PerfectSeparatedColoringIsSmall) {
  const auto scene = generate_scene({.seed = 3});
  const auto enc = encode_labels_as_colors_detailed(scene.labels, 3);
  ASSERT_GE(enc.min_separation, 48.0);
  const auto r = loss_total(enc.field, scene.labels);
  const double n = scene.labels.max_id();
  EXPECT_EQ(r.l_var, 0.0);
  // Each sep term is at most 1/sqrt(|S_i|) / (1 + 48^2) * ... bounded by (n+1)/(1+48^2).
  EXPECT_LE(r.l_sep, (n + 1) / (1.0 + 48.0 * 48.0));
  EXPECT_LE(r.l_mean, 0.5 / (1.0 + 48.0 * 48.0));
  EXPECT_TRUE(std::isfinite(r.total));
  EXPECT_LT(r.total, 1.0);
}

TEST(LossTotal, MatchesNaiveOracleOnRandomCases) {
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    const int w = 3 + static_cast<int>(seed % 6);
    const int h = 2 + static_cast<int>(seed % 5);
    const auto c = random_gradcheck_case(w, h, 1 + static_cast<int>(seed % 4), seed);
    const auto ref = naive_loss(c.field, c.labels);
    const auto r = loss_total(c.field, c.labels);
    EXPECT_NEAR(r.l_var, ref.var, 1e-10 * std::max(1.0, ref.var));
    EXPECT_NEAR(r.l_sep, ref.sep, 1e-13);
    EXPECT_NEAR(r.l_mean, ref.mean, 1e-13);
  }
}

TEST(LossTotal, ComponentsAreNonNegative) {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const auto c = random_gradcheck_case(7, 7, 4, seed + 100);
    const auto r = loss_total(c.field, c.labels);
    EXPECT_GE(r.l_var, 0.0);
    EXPECT_GE(r.l_sep, 0.0);
    EXPECT_GE(r.l_mean, 0.0);
  }
}

TEST(LossTotal, VarZeroOnlyWhenConstantAndBlackBackground) {
  const auto scene = generate_scene({.seed = 8});
  auto f = encode_labels_as_colors(scene.labels, 8);
  ASSERT_EQ(loss_var(f, scene.labels), 0.0);
  // Tint one background pixel.
  for (std::size_t j = 0; j < scene.labels.pixel_count(); ++j) {
    if (scene.labels[j] == 0) {
      f.values()[3 * j] = 1e-3;
      break;
    }
  }
  EXPECT_GT(loss_var(f, scene.labels), 0.0);
}

TEST(LossTotal, TogglesMatchRecomputationBitwise) {
  const auto c = random_gradcheck_case(9, 7, 3, 77);
  const auto all = loss_total(c.field, c.labels);
  const LossWeights d;
  EXPECT_EQ(loss_total(c.field, c.labels, only(false, true, true)).total,
            d.lambda_sep * all.l_sep + d.lambda_mean * all.l_mean);
  EXPECT_EQ(loss_total(c.field, c.labels, only(true, false, true)).total, all.l_var + d.lambda_mean * all.l_mean);
  EXPECT_EQ(loss_total(c.field, c.labels, only(true, true, false)).total, all.l_var + d.lambda_sep * all.l_sep);
}

TEST(LossTotal, TranslationChangesBackgroundTermsOnly) {
  // Instance 1 and 2 on a 4x1 strip, background at both ends.
  ColorField f(4, 1, std::vector<double>{0, 0, 0, 50, 60, 70, 200, 10, 30, 0, 0, 0});
  const LabelMap l(4, 1, std::vector<std::uint32_t>{0, 1, 2, 0});
  ColorField g = f;
  for (auto& v : g.values()) v += 25.0;
  const auto a = naive_loss(f, l);
  const auto b = naive_loss(g, l);
  // Instance terms of l_var are unchanged (their means shift too); the
  // background term grows because its mean stays pinned at zero.
  EXPECT_EQ(a.var, 0.0);
  EXPECT_DOUBLE_EQ(loss_var(g, l), 2.0 * 3 * 24.5 / 2.0);
  EXPECT_NE(loss_sep(f, l), loss_sep(g, l));
  EXPECT_NEAR(loss_var(g, l), b.var, 1e-12);
}

TEST(LossCap, UncappedWhenBelowCap) {
  const auto c = random_gradcheck_case(10, 10, 4, 5);
  LossWeights capped;
  capped.instance_cap = 4;
  LossWeights big;
  big.instance_cap = 100000;
  EXPECT_EQ(loss_total(c.field, c.labels, capped).total, loss_total(c.field, c.labels, big).total);
  EXPECT_EQ(loss_gradient(c.field, c.labels, capped), loss_gradient(c.field, c.labels, big));
}

TEST(LossCap, DropsSmallestInstancesAndTheirPixels) {
  // Instance 1 has 3 px, instance 2 has 1 px; cap 1 keeps instance 1 only.
  ColorField f(5, 1, std::vector<double>{0, 0, 0, 9, 9, 9, 9, 9, 9, 9, 9, 9, 250, 1, 1});
  const LabelMap l(5, 1, std::vector<std::uint32_t>{0, 1, 1, 1, 2});
  LossWeights w;
  w.instance_cap = 1;
  const auto capped = loss_total(f, l, w);
  // Reference: the same image with the dropped pixel removed entirely.
  ColorField f2(4, 1, std::vector<double>{0, 0, 0, 9, 9, 9, 9, 9, 9, 9, 9, 9});
  const LabelMap l2(4, 1, std::vector<std::uint32_t>{0, 1, 1, 1});
  const auto ref = loss_total(f2, l2);
  EXPECT_DOUBLE_EQ(capped.l_var, ref.l_var);
  EXPECT_DOUBLE_EQ(capped.l_sep, ref.l_sep);
  EXPECT_DOUBLE_EQ(capped.l_mean, ref.l_mean);
  const auto g = loss_gradient(f, l, w);
  for (int c = 0; c < 3; ++c) EXPECT_EQ(g.at(4, 0, c), 0.0);
}

TEST(LossGradient, MatchesFiniteDifferences) {
  const int sizes[3][2] = {{4, 4}, {8, 8}, {16, 13}};
  for (std::uint64_t seed = 0; seed < 15; ++seed) {
    const auto [w, h] = sizes[seed % 3];
    const auto c = random_gradcheck_case(w, h, 1 + static_cast<int>(seed % 4), seed * 31 + 7);
    EXPECT_LT(finite_difference_check(c.field, c.labels, {}, 1e-3), 1e-4) << "seed " << seed;
  }
}

TEST(LossGradient, EachTermMatchesFiniteDifferences) {
  const auto c = random_gradcheck_case(6, 6, 3, 21);
  for (const auto& w : {only(true, false, false), only(false, true, false), only(false, false, true)}) {
    EXPECT_LT(finite_difference_check(c.field, c.labels, w, 1e-3), 1e-4);
  }
}

TEST(LossGradient, VarTermVanishesAtPerfectColoring) {
  const auto scene = generate_scene({.seed = 4});
  const auto f = encode_labels_as_colors(scene.labels, 4);
  const auto g = loss_gradient(f, scene.labels, only(true, false, false));
  for (double v : g.values()) EXPECT_EQ(v, 0.0);
}

TEST(LossGradient, LinearInTheToggles) {
  const auto c = random_gradcheck_case(5, 5, 2, 9);
  const auto full = loss_gradient(c.field, c.labels);
  const auto v = loss_gradient(c.field, c.labels, only(true, false, false));
  const auto s = loss_gradient(c.field, c.labels, only(false, true, false));
  const auto m = loss_gradient(c.field, c.labels, only(false, false, true));
  for (std::size_t k = 0; k < full.size(); ++k) {
    EXPECT_NEAR(full.values()[k], v.values()[k] + s.values()[k] + m.values()[k], 1e-12);
  }
}

TEST(LossGradient, RejectsGappedLabels) {
  const LabelMap l(3, 1, std::vector<std::uint32_t>{0, 1, 3});
  EXPECT_THROW(loss_gradient(ColorField(3, 1), l), std::invalid_argument);
  EXPECT_THROW(loss_total(ColorField(3, 1), l), std::invalid_argument);
}

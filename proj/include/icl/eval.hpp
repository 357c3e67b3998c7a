#pragma once

// Evaluation protocols: mask IoU, single-center-point and golden-standard
// iterative clicking, Sobel + NMS edge extraction, and edge precision/recall
// with average precision restricted to low recall.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

#include "icl/field.hpp"
#include "icl/prompt.hpp"

namespace icl {

inline void require_same_dims(const BinaryMask& a, const BinaryMask& b) {
  if (a.width() != b.width() || a.height() != b.height()) {
    throw std::invalid_argument("mask dimension mismatch");
  }
}

/// |a & b| / |a | b|; two empty masks score 1.
inline double mask_iou(const BinaryMask& a, const BinaryMask& b) {
  require_same_dims(a, b);
  std::size_t inter = 0;
  std::size_t uni = 0;
  for (std::size_t j = 0; j < a.pixel_count(); ++j) {
    inter += (a[j] && b[j]) ? 1 : 0;
    uni += (a[j] || b[j]) ? 1 : 0;
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

/// Centroid of the true pixels snapped to the nearest true pixel
/// (Euclidean, ties broken by row-major order).
inline PromptPoint center_point(const BinaryMask& mask) {
  double sx = 0.0;
  double sy = 0.0;
  std::size_t n = 0;
  for (int y = 0; y < mask.height(); ++y) {
    for (int x = 0; x < mask.width(); ++x) {
      if (!mask.at(x, y)) continue;
      sx += x;
      sy += y;
      ++n;
    }
  }
  if (n == 0) throw std::invalid_argument("center_point: empty mask");
  const double cx = sx / static_cast<double>(n);
  const double cy = sy / static_cast<double>(n);
  PromptPoint best;
  double best_d = std::numeric_limits<double>::infinity();
  for (int y = 0; y < mask.height(); ++y) {
    for (int x = 0; x < mask.width(); ++x) {
      if (!mask.at(x, y)) continue;
      const double d = (x - cx) * (x - cx) + (y - cy) * (y - cy);
      if (d < best_d) {
        best_d = d;
        best = {x, y};
      }
    }
  }
  return best;
}

/// Deepest pixel of `mask` under repeated 3x3 erosion, where only in-canvas
/// neighbors count (the canvas edge does not erode). Ties resolve to the
/// first pixel in row-major order. Unlike center_point this never lands on
/// a thin band when the region has a thicker part.
inline PromptPoint deepest_interior_point(const BinaryMask& mask) {
  if (mask.empty()) throw std::invalid_argument("deepest_interior_point: empty mask");
  const int w = mask.width();
  const int h = mask.height();
  BinaryMask cur = mask;
  for (;;) {
    BinaryMask next(w, h);
    bool any = false;
    bool changed = false;
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        if (!cur.at(x, y)) continue;
        bool keep = true;
        for (int ny = std::max(0, y - 1); ny <= std::min(h - 1, y + 1) && keep; ++ny) {
          for (int nx = std::max(0, x - 1); nx <= std::min(w - 1, x + 1) && keep; ++nx) keep = cur.at(nx, ny);
        }
        next.set(x, y, keep);
        any = any || keep;
        changed = changed || !keep;
      }
    }
    if (!any || !changed) break;
    cur = std::move(next);
  }
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (cur.at(x, y)) return {x, y};
    }
  }
  return {0, 0};
}

/// Component ids start at 1; label 0 marks pixels outside the mask and
/// sizes[0] is an unused placeholder.
struct Components {
  std::vector<std::int32_t> label;
  std::vector<std::size_t> sizes{0};
};

/// 8-connected components, numbered in order of their first row-major pixel.
inline Components connected_components(const BinaryMask& mask) {
  const int w = mask.width();
  const int h = mask.height();
  Components out;
  out.label.assign(mask.pixel_count(), 0);
  std::vector<std::size_t> stack;
  for (std::size_t start = 0; start < mask.pixel_count(); ++start) {
    if (!mask[start] || out.label[start] != 0) continue;
    const auto id = static_cast<std::int32_t>(out.sizes.size());
    out.sizes.push_back(0);
    out.label[start] = id;
    stack.push_back(start);
    while (!stack.empty()) {
      const std::size_t j = stack.back();
      stack.pop_back();
      ++out.sizes[id];
      const int x = static_cast<int>(j % w);
      const int y = static_cast<int>(j / w);
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          const int nx = x + dx;
          const int ny = y + dy;
          if (nx < 0 || ny < 0 || nx >= w || ny >= h) continue;
          const std::size_t k = static_cast<std::size_t>(ny) * w + nx;
          if (mask[k] && out.label[k] == 0) {
            out.label[k] = id;
            stack.push_back(k);
          }
        }
      }
    }
  }
  return out;
}

/// Next golden-standard click: the center of the largest connected region of
/// ground truth not yet covered by the prediction.
inline PromptPoint next_golden_point(const BinaryMask& gt, const BinaryMask& pred) {
  require_same_dims(gt, pred);
  BinaryMask uncovered(gt.width(), gt.height());
  for (std::size_t j = 0; j < gt.pixel_count(); ++j) uncovered.set(j, gt[j] && !pred[j]);
  const Components cc = connected_components(uncovered);
  if (cc.sizes.size() <= 1) throw std::invalid_argument("next_golden_point: ground truth fully covered");
  // Components are numbered by first pixel, so the first maximum wins ties.
  std::size_t best = 1;
  for (std::size_t k = 2; k < cc.sizes.size(); ++k) {
    if (cc.sizes[k] > cc.sizes[best]) best = k;
  }
  BinaryMask region(gt.width(), gt.height());
  for (std::size_t j = 0; j < gt.pixel_count(); ++j) region.set(j, cc.label[j] == static_cast<std::int32_t>(best));
  return center_point(region);
}

/// Per-instance IoU after each click, and their mean per click count.
struct ClickEvaluation {
  std::vector<std::uint32_t> instance_ids;
  std::vector<std::vector<double>> iou;  // [instance][click]
  std::vector<double> mean_iou;          // [click]
};

/// Golden-standard protocol over every ground-truth instance. Click 1 is the
/// instance center; later clicks target the largest uncovered region. Once an
/// instance is fully covered no further clicks are placed and its last IoU is
/// carried forward.
inline ClickEvaluation iterative_prompt_eval(const ColorField& field, const LabelMap& gt_labels, int max_clicks,
                                             double threshold = kDefaultPromptThreshold,
                                             const BilateralParams& params = {}) {
  if (max_clicks < 1) throw std::invalid_argument("iterative_prompt_eval: max_clicks must be >= 1");
  require_same_dims(field, gt_labels);
  validate_labels(gt_labels);
  ClickEvaluation ev;
  ev.mean_iou.assign(static_cast<std::size_t>(max_clicks), 0.0);
  const std::uint32_t n = gt_labels.max_id();
  for (std::uint32_t id = 1; id <= n; ++id) {
    const BinaryMask gt = instance_mask(gt_labels, id);
    std::vector<PromptPoint> clicks{center_point(gt)};
    std::vector<double> ious;
    BinaryMask pred = prompt_mask(field, clicks, threshold, params);
    ious.push_back(mask_iou(pred, gt));
    for (int k = 1; k < max_clicks; ++k) {
      bool covered = true;
      for (std::size_t j = 0; j < gt.pixel_count() && covered; ++j) covered = !(gt[j] && !pred[j]);
      if (covered) {
        ious.push_back(ious.back());
        continue;
      }
      clicks.push_back(next_golden_point(gt, pred));
      pred = prompt_mask(field, clicks, threshold, params);
      ious.push_back(mask_iou(pred, gt));
    }
    ev.instance_ids.push_back(id);
    ev.iou.push_back(std::move(ious));
  }
  if (!ev.iou.empty()) {
    for (std::size_t k = 0; k < ev.mean_iou.size(); ++k) {
      double s = 0.0;
      for (const auto& row : ev.iou) s += row[k];
      ev.mean_iou[k] = s / static_cast<double>(ev.iou.size());
    }
  }
  return ev;
}

/// Mean single-center-click IoU over all instances of one image.
inline double center_click_miou(const ColorField& field, const LabelMap& gt_labels,
                                double threshold = kDefaultPromptThreshold) {
  const auto ev = iterative_prompt_eval(field, gt_labels, 1, threshold);
  return ev.iou.empty() ? 1.0 : ev.mean_iou[0];
}

// ---------------------------------------------------------------------------
// Edges

struct EdgeMap {
  int width = 0;
  int height = 0;
  std::vector<double> strength;  // Sobel magnitude, row-major
  BinaryMask thinned;            // local maxima after NMS

  double score(std::size_t j) const { return thinned[j] ? strength[j] : 0.0; }
};

/// Per-channel 3x3 Sobel (replicated borders); magnitude is the L2 norm over
/// all six channel derivatives. Orientation comes from the channel-summed
/// gradient, falling back to the strongest single channel when the sum
/// cancels. NMS keeps pixels not weaker than both neighbors along the
/// quantized gradient direction.
inline EdgeMap edges_from_field(const ColorField& field) {
  const int w = field.width();
  const int h = field.height();
  EdgeMap e;
  e.width = w;
  e.height = h;
  e.strength.assign(field.pixel_count(), 0.0);
  e.thinned = BinaryMask(w, h);
  std::vector<double> gx_sum(field.pixel_count(), 0.0);
  std::vector<double> gy_sum(field.pixel_count(), 0.0);
  std::vector<std::array<double, 2>> strongest(field.pixel_count(), {0.0, 0.0});

  auto px = [&](int x, int y, int c) {
    x = std::clamp(x, 0, w - 1);
    y = std::clamp(y, 0, h - 1);
    return field.at(x, y, c);
  };
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const std::size_t j = static_cast<std::size_t>(y) * w + x;
      double mag2 = 0.0;
      double best = -1.0;
      for (int c = 0; c < 3; ++c) {
        const double gx = (px(x + 1, y - 1, c) + 2.0 * px(x + 1, y, c) + px(x + 1, y + 1, c)) -
                          (px(x - 1, y - 1, c) + 2.0 * px(x - 1, y, c) + px(x - 1, y + 1, c));
        const double gy = (px(x - 1, y + 1, c) + 2.0 * px(x, y + 1, c) + px(x + 1, y + 1, c)) -
                          (px(x - 1, y - 1, c) + 2.0 * px(x, y - 1, c) + px(x + 1, y - 1, c));
        mag2 += gx * gx + gy * gy;
        gx_sum[j] += gx;
        gy_sum[j] += gy;
        if (gx * gx + gy * gy > best) {
          best = gx * gx + gy * gy;
          strongest[j] = {gx, gy};
        }
      }
      e.strength[j] = std::sqrt(mag2);
    }
  }

  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const std::size_t j = static_cast<std::size_t>(y) * w + x;
      const double s = e.strength[j];
      if (s <= 0.0) continue;
      double gx = gx_sum[j];
      double gy = gy_sum[j];
      if (std::hypot(gx, gy) <= 1e-12 * s) {
        gx = strongest[j][0];
        gy = strongest[j][1];
      }
      // Quantize the gradient axis to 0, 45, 90 or 135 degrees.
      double angle = std::atan2(gy, gx) * 180.0 / std::numbers::pi;
      if (angle < 0) angle += 180.0;
      int dx = 0;
      int dy = 0;
      if (angle < 22.5 || angle >= 157.5) {
        dx = 1;
      } else if (angle < 67.5) {
        dx = 1;
        dy = 1;
      } else if (angle < 112.5) {
        dy = 1;
      } else {
        dx = -1;
        dy = 1;
      }
      auto neighbor = [&](int sx, int sy) {
        const int nx = x + sx;
        const int ny = y + sy;
        if (nx < 0 || ny < 0 || nx >= w || ny >= h) return 0.0;
        return e.strength[static_cast<std::size_t>(ny) * w + nx];
      };
      if (s >= neighbor(dx, dy) && s >= neighbor(-dx, -dy)) e.thinned.set(j, true);
    }
  }
  return e;
}

/// Ground-truth boundary pixels: any pixel with a 4-neighbor of different id.
inline BinaryMask label_boundaries(const LabelMap& labels) {
  const int w = labels.width();
  const int h = labels.height();
  BinaryMask b(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const auto id = labels.at(x, y);
      const bool edge = (x > 0 && labels.at(x - 1, y) != id) || (x + 1 < w && labels.at(x + 1, y) != id) ||
                        (y > 0 && labels.at(x, y - 1) != id) || (y + 1 < h && labels.at(x, y + 1) != id);
      b.set(x, y, edge);
    }
  }
  return b;
}

struct PRSample {
  double threshold = 0.0;
  double recall = 0.0;
  double precision = 0.0;
};

using PRCurve = std::vector<PRSample>;

/// Default matching radius: 0.75% of the image diagonal.
inline double default_edge_tolerance(int width, int height) {
  return 0.0075 * std::hypot(static_cast<double>(width), static_cast<double>(height));
}

namespace detail {

struct MatchCounts {
  std::size_t matched = 0;
  std::size_t predicted = 0;
};

// Greedy nearest-first one-to-one matching of predicted edge pixels to GT
// pixels within `tolerance`.
inline MatchCounts greedy_edge_match(const std::vector<std::size_t>& pred, const BinaryMask& gt, double tolerance) {
  const int w = gt.width();
  const int h = gt.height();
  const int r = static_cast<int>(std::floor(tolerance));
  const double tol2 = tolerance * tolerance;
  std::vector<std::tuple<double, std::size_t, std::size_t>> pairs;
  for (std::size_t p : pred) {
    const int x = static_cast<int>(p % w);
    const int y = static_cast<int>(p / w);
    for (int ny = std::max(0, y - r); ny <= std::min(h - 1, y + r); ++ny) {
      for (int nx = std::max(0, x - r); nx <= std::min(w - 1, x + r); ++nx) {
        const std::size_t g = static_cast<std::size_t>(ny) * w + nx;
        if (!gt[g]) continue;
        const double d2 = static_cast<double>((nx - x) * (nx - x) + (ny - y) * (ny - y));
        if (d2 <= tol2) pairs.emplace_back(d2, p, g);
      }
    }
  }
  std::sort(pairs.begin(), pairs.end());
  std::vector<std::uint8_t> pred_used(gt.pixel_count(), 0);
  std::vector<std::uint8_t> gt_used(gt.pixel_count(), 0);
  MatchCounts mc;
  mc.predicted = pred.size();
  for (const auto& [d2, p, g] : pairs) {
    if (pred_used[p] || gt_used[g]) continue;
    pred_used[p] = 1;
    gt_used[g] = 1;
    ++mc.matched;
  }
  return mc;
}

}  // namespace detail

/// Precision/recall as the score threshold sweeps from the highest distinct
/// thinned-edge strength down to the lowest. With no predicted edges the
/// curve is the single point (recall 0, precision 0).
inline PRCurve edge_pr_curve(const EdgeMap& pred, const BinaryMask& gt_edges, double tolerance) {
  if (pred.width != gt_edges.width() || pred.height != gt_edges.height()) {
    throw std::invalid_argument("edge_pr_curve: dimension mismatch");
  }
  const std::size_t total_gt = gt_edges.count();
  if (total_gt == 0) throw std::invalid_argument("edge_pr_curve: ground truth has no edge pixels");
  std::vector<std::size_t> order;
  for (std::size_t j = 0; j < pred.strength.size(); ++j) {
    if (pred.thinned[j] && pred.strength[j] > 0.0) order.push_back(j);
  }
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return pred.strength[a] > pred.strength[b]; });
  PRCurve curve;
  if (order.empty()) {
    curve.push_back({0.0, 0.0, 0.0});
    return curve;
  }
  std::vector<std::size_t> active;
  std::size_t k = 0;
  while (k < order.size()) {
    const double t = pred.strength[order[k]];
    while (k < order.size() && pred.strength[order[k]] == t) active.push_back(order[k++]);
    const auto mc = detail::greedy_edge_match(active, gt_edges, tolerance);
    curve.push_back({t, static_cast<double>(mc.matched) / static_cast<double>(total_gt),
                     static_cast<double>(mc.matched) / static_cast<double>(mc.predicted)});
  }
  return curve;
}

struct EdgeEvalItem {
  const EdgeMap* pred = nullptr;
  const BinaryMask* gt_edges = nullptr;
  double tolerance = 1.0;
};

/// Dataset-level curve: one global threshold sweep, with matches counted per
/// image and summed. Only the images whose active set grew are re-matched.
inline PRCurve edge_pr_curve_pooled(const std::vector<EdgeEvalItem>& items) {
  std::size_t total_gt = 0;
  std::vector<std::tuple<double, std::size_t, std::size_t>> order;  // strength, image, pixel
  for (std::size_t i = 0; i < items.size(); ++i) {
    const auto& it = items[i];
    if (it.pred->width != it.gt_edges->width() || it.pred->height != it.gt_edges->height()) {
      throw std::invalid_argument("edge_pr_curve_pooled: dimension mismatch in item " + std::to_string(i));
    }
    total_gt += it.gt_edges->count();
    for (std::size_t j = 0; j < it.pred->strength.size(); ++j) {
      if (it.pred->thinned[j] && it.pred->strength[j] > 0.0) order.emplace_back(it.pred->strength[j], i, j);
    }
  }
  if (total_gt == 0) throw std::invalid_argument("edge_pr_curve_pooled: ground truth has no edge pixels");
  std::stable_sort(order.begin(), order.end(),
                   [](const auto& a, const auto& b) { return std::get<0>(a) > std::get<0>(b); });
  PRCurve curve;
  if (order.empty()) {
    curve.push_back({0.0, 0.0, 0.0});
    return curve;
  }
  std::vector<std::vector<std::size_t>> active(items.size());
  std::vector<detail::MatchCounts> counts(items.size());
  std::vector<std::uint8_t> dirty(items.size(), 0);
  std::size_t matched = 0;
  std::size_t predicted = 0;
  std::size_t k = 0;
  while (k < order.size()) {
    const double t = std::get<0>(order[k]);
    std::vector<std::size_t> touched;
    while (k < order.size() && std::get<0>(order[k]) == t) {
      const auto [s, i, j] = order[k++];
      active[i].push_back(j);
      if (!dirty[i]) touched.push_back(i);
      dirty[i] = 1;
    }
    for (std::size_t i : touched) {
      matched -= counts[i].matched;
      predicted -= counts[i].predicted;
      counts[i] = detail::greedy_edge_match(active[i], *items[i].gt_edges, items[i].tolerance);
      matched += counts[i].matched;
      predicted += counts[i].predicted;
      dirty[i] = 0;
    }
    curve.push_back({t, static_cast<double>(matched) / static_cast<double>(total_gt),
                     static_cast<double>(matched) / static_cast<double>(predicted)});
  }
  return curve;
}

/// Average precision over recall in [0, r_max], 101 grid points, each taking
/// the best precision reached at any recall at or beyond it (0 if never).
inline double edge_ap_at_recall(const PRCurve& curve, double r_max = 0.2) {
  constexpr int kGrid = 101;
  double sum = 0.0;
  for (int k = 0; k < kGrid; ++k) {
    const double r = r_max * k / (kGrid - 1);
    double p = 0.0;
    for (const auto& s : curve) {
      if (s.recall >= r) p = std::max(p, s.precision);
    }
    sum += p;
  }
  return sum / kGrid;
}

}  // namespace icl

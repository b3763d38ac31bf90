#pragma once

#include <algorithm>
#include <functional>
#include <numeric>
#include <random>
#include <vector>

#include "condlane/metrics.hpp"

namespace condlane::testing {

// Full-canvas pixel count with the same coverage predicate as the rasterizer.
inline double brute_force_iou(const LanePolyline& a, const LanePolyline& b, const MatchConfig& cfg) {
  const double half = cfg.line_width / 2.0;
  long inter = 0, uni = 0;
  for (int y = 0; y < cfg.eval_size.height; ++y) {
    for (int x = 0; x < cfg.eval_size.width; ++x) {
      const bool in_a = !a.empty() && raster::covers(a, x, y, half);
      const bool in_b = !b.empty() && raster::covers(b, x, y, half);
      inter += in_a && in_b;
      uni += in_a || in_b;
    }
  }
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

// Best total weight over all partial one-to-one assignments.
inline double best_assignment_value(const std::vector<std::vector<double>>& w) {
  const int rows = static_cast<int>(w.size());
  const int cols = rows ? static_cast<int>(w[0].size()) : 0;
  std::vector<int> used(static_cast<std::size_t>(cols), 0);
  std::function<double(int)> go = [&](int i) -> double {
    if (i == rows) return 0.0;
    double best = go(i + 1);  // row i unassigned
    for (int j = 0; j < cols; ++j) {
      if (used[j]) continue;
      used[j] = 1;
      best = std::max(best, w[i][j] + go(i + 1));
      used[j] = 0;
    }
    return best;
  };
  return go(0);
}

// Enumerates every one-to-one assignment, keeps the one with the largest
// total match weight and counts its threshold-passing pairs.
inline Counts exhaustive_counts(const std::vector<LanePolyline>& preds, const std::vector<LanePolyline>& gts,
                                const MatchConfig& cfg) {
  std::vector<std::vector<double>> iou(preds.size(), std::vector<double>(gts.size()));
  for (std::size_t i = 0; i < preds.size(); ++i) {
    for (std::size_t j = 0; j < gts.size(); ++j) iou[i][j] = brute_force_iou(preds[i], gts[j], cfg);
  }
  const int rows = static_cast<int>(preds.size()), cols = static_cast<int>(gts.size());
  std::vector<int> used(static_cast<std::size_t>(cols), 0);
  double best = -1.0;
  long best_tp = 0;
  std::function<void(int, double, long)> go = [&](int i, double total, long tp) {
    if (i == rows) {
      if (total > best + 1e-12 || (std::abs(total - best) <= 1e-12 && tp > best_tp)) best = total, best_tp = tp;
      return;
    }
    go(i + 1, total, tp);
    for (int j = 0; j < cols; ++j) {
      if (used[j]) continue;
      used[j] = 1;
      go(i + 1, total + match_weight(iou[i][j], cfg.iou_threshold), tp + (iou[i][j] >= cfg.iou_threshold));
      used[j] = 0;
    }
  };
  go(0, 0.0, 0);
  return Counts{best_tp, rows - best_tp, cols - best_tp};
}

// Random 2-4 point lane inside the canvas, bottom to top.
inline LanePolyline random_lane(std::mt19937_64& rng, const ImageSpec& img) {
  std::uniform_real_distribution<double> ux(0.0, img.width - 1.0);
  std::uniform_int_distribution<int> count(2, 4);
  const int n = count(rng);
  std::uniform_real_distribution<double> uy(0.0, img.height - 1.0);
  std::vector<double> ys(static_cast<std::size_t>(n));
  for (auto& y : ys) y = uy(rng);
  std::sort(ys.rbegin(), ys.rend());
  ys.erase(std::unique(ys.begin(), ys.end()), ys.end());
  if (ys.size() < 2) ys = {img.height - 1.0, 0.0};
  LanePolyline lane;
  for (double y : ys) lane.points.push_back({ux(rng), y});
  return lane;
}

}  // namespace condlane::testing

#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "condlane/geometry.hpp"

namespace condlane {

struct MatchConfig {
  int line_width = 30;
  double iou_threshold = 0.5;
  ImageSpec eval_size{590, 1640};

  // 30 px at a 1640-px-wide frame, scaled to the evaluation canvas width.
  static MatchConfig for_canvas(const ImageSpec& canvas, double iou_threshold = 0.5) {
    MatchConfig c;
    c.eval_size = canvas;
    c.line_width = std::max(1, static_cast<int>(std::lround(30.0 * canvas.width / 1640.0)));
    c.iou_threshold = iou_threshold;
    c.validate();
    return c;
  }

  void validate() const {
    eval_size.validate();
    if (line_width < 1) throw ConfigError("line_width must be >= 1");
    if (!(iou_threshold > 0.0 && iou_threshold <= 1.0)) throw ConfigError("iou_threshold must be in (0, 1]");
  }
};

namespace raster {

// Squared distance from (px, py) to segment a-b.
inline double segment_distance2(double px, double py, const Point& a, const Point& b) {
  const double dx = b.x - a.x, dy = b.y - a.y;
  const double len2 = dx * dx + dy * dy;
  double t = len2 > 0.0 ? ((px - a.x) * dx + (py - a.y) * dy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const double ex = a.x + t * dx - px, ey = a.y + t * dy - py;
  return ex * ex + ey * ey;
}

// Pixel (x, y) belongs to the stroke when its centre lies within half the
// line width of any segment (round caps and joins).
inline bool covers(const LanePolyline& lane, int x, int y, double half_width) {
  const double r2 = half_width * half_width;
  const auto& p = lane.points;
  if (p.size() == 1) return segment_distance2(x, y, p[0], p[0]) <= r2;
  for (std::size_t k = 1; k < p.size(); ++k) {
    if (segment_distance2(x, y, p[k - 1], p[k]) <= r2) return true;
  }
  return false;
}

}  // namespace raster

// Sorted linear pixel indices (y * W + x) covered by the stroked lane.
inline std::vector<int> rasterize_lane(const LanePolyline& lane, const MatchConfig& cfg) {
  const int w = cfg.eval_size.width, h = cfg.eval_size.height;
  const double half = cfg.line_width / 2.0;
  std::vector<int> out;
  if (lane.empty()) return out;
  double x0 = lane.points[0].x, x1 = x0, y0 = lane.points[0].y, y1 = y0;
  for (const auto& p : lane.points) {
    x0 = std::min(x0, p.x), x1 = std::max(x1, p.x), y0 = std::min(y0, p.y), y1 = std::max(y1, p.y);
  }
  const int bx0 = std::max(0, static_cast<int>(std::floor(x0 - half))), bx1 = std::min(w - 1, static_cast<int>(std::ceil(x1 + half)));
  const int by0 = std::max(0, static_cast<int>(std::floor(y0 - half))), by1 = std::min(h - 1, static_cast<int>(std::ceil(y1 + half)));
  for (int y = by0; y <= by1; ++y) {
    for (int x = bx0; x <= bx1; ++x) {
      if (raster::covers(lane, x, y, half)) out.push_back(y * w + x);
    }
  }
  return out;
}

inline double mask_iou(const std::vector<int>& a, const std::vector<int>& b) {
  std::size_t i = 0, j = 0, inter = 0;
  while (i < a.size() && j < b.size()) {
    if (a[i] < b[j]) {
      ++i;
    } else if (b[j] < a[i]) {
      ++j;
    } else {
      ++inter, ++i, ++j;
    }
  }
  const std::size_t uni = a.size() + b.size() - inter;
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

inline double lane_iou(const LanePolyline& a, const LanePolyline& b, const MatchConfig& cfg) {
  return mask_iou(rasterize_lane(a, cfg), rasterize_lane(b, cfg));
}

// Maximum-weight assignment on a rows x cols matrix (Hungarian method with
// potentials). Returns for each row the assigned column, or -1.
inline std::vector<int> max_weight_assignment(const std::vector<std::vector<double>>& weight) {
  const int rows = static_cast<int>(weight.size());
  const int cols = rows == 0 ? 0 : static_cast<int>(weight[0].size());
  std::vector<int> result(static_cast<std::size_t>(rows), -1);
  if (rows == 0 || cols == 0) return result;
  const bool flip = rows > cols;
  const int n = flip ? cols : rows, m = flip ? rows : cols;  // n <= m
  auto cost = [&](int i, int j) { return flip ? -weight[j - 1][i - 1] : -weight[i - 1][j - 1]; };
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1), v(m + 1);
  std::vector<int> p(m + 1), way(m + 1);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(m + 1, inf);
    std::vector<char> used(m + 1, 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0, j) - u[i0] - v[j];
        if (cur < minv[j]) minv[j] = cur, way[j] = j0;
        if (minv[j] < delta) delta = minv[j], j1 = j;
      }
      for (int j = 0; j <= m; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }
  for (int j = 1; j <= m; ++j) {
    if (p[j] == 0) continue;
    if (flip) {
      result[j - 1] = p[j] - 1;
    } else {
      result[p[j] - 1] = j - 1;
    }
  }
  return result;
}

struct Counts {
  long tp = 0, fp = 0, fn = 0;
  Counts& operator+=(const Counts& o) {
    tp += o.tp, fp += o.fp, fn += o.fn;
    return *this;
  }
  bool operator==(const Counts&) const = default;
};

struct Scores {
  double precision = 0.0, recall = 0.0, f1 = 0.0;
};

// Ratios are 0 when their denominator is 0.
inline Scores scores_from(const Counts& c) {
  Scores s;
  if (c.tp + c.fp > 0) s.precision = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp);
  if (c.tp + c.fn > 0) s.recall = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
  if (s.precision + s.recall > 0.0) s.f1 = 2.0 * s.precision * s.recall / (s.precision + s.recall);
  return s;
}

// Assignment weight: the IoU, plus a tiny bonus for passing the threshold so
// equal-IoU alternatives resolve toward more true positives.
inline double match_weight(double iou, double threshold) { return iou + (iou >= threshold ? 1e-9 : 0.0); }

inline std::vector<std::vector<double>> iou_matrix(const std::vector<LanePolyline>& preds,
                                                   const std::vector<LanePolyline>& gts, const MatchConfig& cfg) {
  std::vector<std::vector<int>> pm, gm;
  for (const auto& l : preds) pm.push_back(rasterize_lane(l, cfg));
  for (const auto& l : gts) gm.push_back(rasterize_lane(l, cfg));
  std::vector<std::vector<double>> iou(preds.size(), std::vector<double>(gts.size()));
  for (std::size_t i = 0; i < preds.size(); ++i) {
    for (std::size_t j = 0; j < gts.size(); ++j) iou[i][j] = mask_iou(pm[i], gm[j]);
  }
  return iou;
}

// For each ground-truth lane, the index of the prediction it is matched to
// with IoU >= threshold, or -1.
inline std::vector<int> match_pairs(const std::vector<LanePolyline>& preds, const std::vector<LanePolyline>& gts,
                                    const MatchConfig& cfg) {
  const auto iou = iou_matrix(preds, gts, cfg);
  auto w = iou;
  for (auto& row : w) {
    for (auto& v : row) v = match_weight(v, cfg.iou_threshold);
  }
  const auto assign = max_weight_assignment(w);
  std::vector<int> gt_to_pred(gts.size(), -1);
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (assign[i] >= 0 && iou[i][static_cast<std::size_t>(assign[i])] >= cfg.iou_threshold) {
      gt_to_pred[static_cast<std::size_t>(assign[i])] = static_cast<int>(i);
    }
  }
  return gt_to_pred;
}

inline Counts match_image(const std::vector<LanePolyline>& preds, const std::vector<LanePolyline>& gts,
                          const MatchConfig& cfg) {
  const auto pairs = match_pairs(preds, gts, cfg);
  Counts c;
  c.tp = std::count_if(pairs.begin(), pairs.end(), [](int p) { return p >= 0; });
  c.fp = static_cast<long>(preds.size()) - c.tp;
  c.fn = static_cast<long>(gts.size()) - c.tp;
  return c;
}

struct EvalReport {
  Counts total;
  std::map<std::string, Counts> per_category;

  Scores scores() const { return scores_from(total); }
  void add(const std::string& category, const Counts& c) {
    total += c;
    if (!category.empty()) per_category[category] += c;
  }
};

struct ImageLanes {
  std::vector<LanePolyline> preds;
  std::vector<LanePolyline> gts;
  std::string category;
};

inline EvalReport match_and_score(const std::vector<ImageLanes>& images, const MatchConfig& cfg) {
  cfg.validate();
  EvalReport r;
  for (const auto& im : images) r.add(im.category, match_image(im.preds, im.gts, cfg));
  return r;
}

// ---- TuSimple-style point accuracy -------------------------------------

inline constexpr double kTuSimpleAbsent = -2.0;

struct TuSimpleRecord {
  std::string raw_file;
  std::vector<double> h_samples;
  std::vector<std::vector<double>> lanes;  // x per h-sample, -2 when absent
};

struct TuSimpleResult {
  long correct_points = 0, total_points = 0;
  long tp = 0, fp = 0, fn = 0, predicted = 0, ground_truth = 0;
  double accuracy() const { return total_points ? static_cast<double>(correct_points) / total_points : 0.0; }
  double fp_rate() const { return predicted ? static_cast<double>(fp) / predicted : 0.0; }
  double fn_rate() const { return ground_truth ? static_cast<double>(fn) / ground_truth : 0.0; }
  double f1() const { return scores_from(Counts{tp, fp, fn}).f1; }
};

inline void check_tusimple_record(const TuSimpleRecord& r) {
  for (const auto& lane : r.lanes) {
    if (lane.size() != r.h_samples.size()) {
      throw FormatError("lane has " + std::to_string(lane.size()) + " entries for " +
                        std::to_string(r.h_samples.size()) + " h_samples in " + r.raw_file);
    }
  }
}

// Each ground-truth lane is paired one-to-one with the prediction that
// maximises the total number of correct points; a ground-truth lane is found
// when more than `lane_acc_threshold` of its points are within `pixel_tol`.
inline TuSimpleResult tusimple_score(const std::vector<TuSimpleRecord>& preds, const std::vector<TuSimpleRecord>& gts,
                                     double pixel_tol, double lane_acc_threshold = 0.85) {
  if (preds.size() != gts.size()) throw FormatError("prediction and ground-truth record counts differ");
  TuSimpleResult res;
  for (std::size_t k = 0; k < gts.size(); ++k) {
    const auto& p = preds[k];
    const auto& g = gts[k];
    if (p.h_samples != g.h_samples) throw FormatError("h_samples differ for " + g.raw_file);
    check_tusimple_record(p);
    check_tusimple_record(g);
    std::vector<const std::vector<double>*> gl, pl;
    std::vector<long> gt_points;
    for (const auto& l : g.lanes) {
      const long n = std::count_if(l.begin(), l.end(), [](double x) { return x >= 0.0; });
      if (n == 0) continue;
      gl.push_back(&l);
      gt_points.push_back(n);
    }
    for (const auto& l : p.lanes) {
      if (std::any_of(l.begin(), l.end(), [](double x) { return x >= 0.0; })) pl.push_back(&l);
    }
    std::vector<std::vector<double>> correct(gl.size(), std::vector<double>(pl.size()));
    for (std::size_t i = 0; i < gl.size(); ++i) {
      for (std::size_t j = 0; j < pl.size(); ++j) {
        long c = 0;
        for (std::size_t s = 0; s < g.h_samples.size(); ++s) {
          const double gx = (*gl[i])[s], px = (*pl[j])[s];
          if (gx >= 0.0 && px >= 0.0 && std::abs(px - gx) <= pixel_tol) ++c;
        }
        correct[i][j] = static_cast<double>(c);
      }
    }
    const auto assign = max_weight_assignment(correct);
    long tp = 0;
    for (std::size_t i = 0; i < gl.size(); ++i) {
      res.total_points += gt_points[i];
      if (assign[i] < 0) continue;
      const long c = static_cast<long>(correct[i][static_cast<std::size_t>(assign[i])]);
      res.correct_points += c;
      if (static_cast<double>(c) / static_cast<double>(gt_points[i]) > lane_acc_threshold) ++tp;
    }
    res.tp += tp;
    res.fp += static_cast<long>(pl.size()) - tp;
    res.fn += static_cast<long>(gl.size()) - tp;
    res.predicted += static_cast<long>(pl.size());
    res.ground_truth += static_cast<long>(gl.size());
  }
  return res;
}

// Samples a polyline at fixed heights; heights outside the lane are absent.
inline std::vector<double> sample_at_heights(const LanePolyline& lane, const std::vector<double>& h_samples) {
  std::vector<double> xs;
  for (double h : h_samples) {
    xs.push_back(!lane.empty() && h <= lane.y_bottom() && h >= lane.y_top() ? lane.x_at(h) : kTuSimpleAbsent);
  }
  return xs;
}

}  // namespace condlane

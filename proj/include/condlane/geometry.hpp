#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "condlane/errors.hpp"
#include "condlane/tensor.hpp"

namespace condlane {

struct ImageSpec {
  int height = 320;
  int width = 800;

  void validate() const {
    if (height <= 0 || width <= 0) throw ConfigError("image size must be positive");
  }
  bool operator==(const ImageSpec&) const = default;
};

// A rows x cols grid laid over the image; each cell is (H/rows) x (W/cols) px.
struct GridSpec {
  int rows = 0;
  int cols = 0;
  ImageSpec image;

  static GridSpec at_downscale(const ImageSpec& image, int downscale) {
    GridSpec g{image.height / downscale, image.width / downscale, image};
    if (image.height % downscale || image.width % downscale) {
      throw ShapeError("image " + std::to_string(image.height) + "x" + std::to_string(image.width) +
                       " not divisible by " + std::to_string(downscale));
    }
    g.validate();
    return g;
  }

  void validate() const {
    image.validate();
    if (rows <= 0 || cols <= 0) throw ConfigError("grid dimensions must be positive");
    if (image.height % rows != 0 || image.width % cols != 0) {
      throw ConfigError("grid " + std::to_string(rows) + "x" + std::to_string(cols) + " does not divide image");
    }
  }
  double cell_height() const { return static_cast<double>(image.height) / rows; }
  double cell_width() const { return static_cast<double>(image.width) / cols; }
  bool operator==(const GridSpec&) const = default;
};

struct Point {
  double x = 0.0;
  double y = 0.0;
  bool operator==(const Point&) const = default;
};

// Lane as image-pixel points ordered bottom (largest y) to top.
struct LanePolyline {
  std::vector<Point> points;

  bool empty() const { return points.empty(); }
  std::size_t size() const { return points.size(); }
  double y_bottom() const { return points.front().y; }
  double y_top() const { return points.back().y; }

  double mean_x() const {
    double s = 0.0;
    for (const auto& p : points) s += p.x;
    return points.empty() ? 0.0 : s / static_cast<double>(points.size());
  }

  // Linear interpolation of x at height y; y must lie in [y_top, y_bottom].
  double x_at(double y) const {
    for (std::size_t k = 1; k < points.size(); ++k) {
      const Point& lo = points[k - 1];
      const Point& hi = points[k];
      if (y <= lo.y && y >= hi.y) {
        const double t = (lo.y - y) / (lo.y - hi.y);
        return lo.x + t * (hi.x - lo.x);
      }
    }
    throw ContractViolation("x_at: y outside lane extent");
  }

  bool operator==(const LanePolyline&) const = default;
};

inline void validate_lane(const LanePolyline& lane, const ImageSpec& image) {
  if (lane.size() < 2) throw ContractViolation("lane needs at least 2 points");
  for (std::size_t k = 0; k < lane.size(); ++k) {
    const Point& p = lane.points[k];
    if (!(p.x >= 0.0 && p.x < image.width && p.y >= 0.0 && p.y < image.height)) {
      throw ContractViolation("lane point outside image bounds");
    }
    if (k > 0 && !(p.y < lane.points[k - 1].y)) throw ContractViolation("lane y must strictly decrease");
  }
}

// Per-row supervision for one lane instance on a shape-head grid.
struct RowwiseTarget {
  std::vector<double> loc;           // grid columns; NaN outside the range
  std::vector<std::uint8_t> valid;   // per row
  int v_min = -1;
  int v_max = -1;
  Tensor<double> offset_map;         // rows x cols
  std::vector<std::uint8_t> offset_mask;  // rows x cols, the supervised band

  int valid_count() const { return v_min < 0 ? 0 : v_max - v_min + 1; }
  std::size_t mask_count() const {
    return static_cast<std::size_t>(std::count(offset_mask.begin(), offset_mask.end(), std::uint8_t{1}));
  }
};

// Rows whose sampling line y = i * H/Y lies on the lane get an abscissa in
// grid columns. The offset target is the fractional part of that abscissa,
// written into the band of +-omega columns around floor(loc).
inline RowwiseTarget encode_rowwise_targets(const LanePolyline& lane, const GridSpec& grid, int omega) {
  if (omega < 1) throw ContractViolation("omega must be >= 1");
  validate_lane(lane, grid.image);
  const double ch = grid.cell_height(), cw = grid.cell_width();
  const int first = std::max(0, static_cast<int>(std::ceil(lane.y_top() / ch - 1e-9)));
  const int last = std::min(grid.rows - 1, static_cast<int>(std::floor(lane.y_bottom() / ch + 1e-9)));
  if (last - first + 1 < 2) throw DegenerateLaneError("lane spans fewer than 2 grid rows");

  RowwiseTarget t;
  t.loc.assign(static_cast<std::size_t>(grid.rows), std::nan(""));
  t.valid.assign(static_cast<std::size_t>(grid.rows), 0);
  t.offset_map = Tensor<double>({grid.rows, grid.cols});
  t.offset_mask.assign(static_cast<std::size_t>(grid.rows) * grid.cols, 0);
  t.v_min = first;
  t.v_max = last;
  for (int i = first; i <= last; ++i) {
    const double y = std::clamp(i * ch, lane.y_top(), lane.y_bottom());
    const double loc = std::clamp(lane.x_at(y) / cw, 0.0, std::nextafter(static_cast<double>(grid.cols), 0.0));
    t.loc[i] = loc;
    t.valid[i] = 1;
    const int col = static_cast<int>(std::floor(loc));
    const double frac = loc - col;
    for (int j = std::max(0, col - omega); j <= std::min(grid.cols - 1, col + omega); ++j) {
      t.offset_map.at(i, j) = frac;
      t.offset_mask[static_cast<std::size_t>(i) * grid.cols + j] = 1;
    }
  }
  return t;
}

// Σ_j j * p_j over a probability row.
inline double expected_abscissa(std::span<const double> prob) {
  double total = 0.0, e = 0.0;
  for (std::size_t j = 0; j < prob.size(); ++j) {
    if (prob[j] < 0.0) throw ContractViolation("expected_abscissa: negative probability");
    total += prob[j];
    e += static_cast<double>(j) * prob[j];
  }
  if (std::abs(total - 1.0) > 1e-6) throw ContractViolation("expected_abscissa: row is not normalised");
  return e;
}

// Rows with logit[1] > logit[0] are "crossed"; when positives are split the
// longest contiguous run wins; on ties the one nearer the image bottom.
inline std::optional<std::pair<int, int>> positive_range(const Tensor<double>& range_logits) {
  const int rows = range_logits.dim(0);
  int best_lo = -1, best_hi = -1, lo = -1;
  for (int i = 0; i <= rows; ++i) {
    const bool pos = i < rows && range_logits.at(i, 1) > range_logits.at(i, 0);
    if (pos && lo < 0) lo = i;
    if (!pos && lo >= 0) {
      if (i - lo >= best_hi - best_lo + 1 || best_lo < 0) {
        best_lo = lo;
        best_hi = i - 1;
      }
      lo = -1;
    }
  }
  if (best_lo < 0) return std::nullopt;
  return std::pair{best_lo, best_hi};
}

// Turns per-row predictions into a polyline:
//   y = H/Y * i,  x = W/X * (floor(E_i) + delta(floor(E_i), i)).
// Without an offset map the cell centre (delta = 0.5) is used; predicted
// offsets are clamped to [0, 1]. Returns
// nullopt when fewer than two rows are predicted as crossed.
inline std::optional<LanePolyline> decode_lane(std::span<const double> exp_loc, const Tensor<double>& range_logits,
                                               const Tensor<double>* offset_map, const GridSpec& grid) {
  if (static_cast<int>(exp_loc.size()) != grid.rows || range_logits.dim(0) != grid.rows || range_logits.dim(1) != 2) {
    throw ShapeError("decode_lane: prediction sizes do not match grid");
  }
  if (offset_map && (offset_map->dim(0) != grid.rows || offset_map->dim(1) != grid.cols)) {
    throw ShapeError("decode_lane: offset map does not match grid");
  }
  const auto range = positive_range(range_logits);
  if (!range || range->second - range->first + 1 < 2) return std::nullopt;
  LanePolyline lane;
  for (int i = range->second; i >= range->first; --i) {
    const int col = std::clamp(static_cast<int>(std::floor(exp_loc[i])), 0, grid.cols - 1);
    const double delta = offset_map ? std::clamp(offset_map->at(i, col), 0.0, 1.0) : 0.5;
    lane.points.push_back({grid.cell_width() * (col + delta), grid.cell_height() * i});
  }
  return lane;
}

struct ProposalPoint {
  int x = 0;  // proposal-grid column
  int y = 0;  // proposal-grid row
  std::vector<int> instances;  // indices into the lane list
  int count() const { return static_cast<int>(instances.size()); }
};

struct ProposalTarget {
  Tensor<double> heatmap;  // rows x cols
  std::vector<ProposalPoint> points;  // row-major cell order
};

// Quantised start (bottom-most point) of a lane on the proposal grid.
inline std::pair<int, int> start_cell(const LanePolyline& lane, const GridSpec& grid) {
  const Point& p = lane.points.front();
  const int x = std::clamp(static_cast<int>(std::floor(p.x / grid.cell_width())), 0, grid.cols - 1);
  const int y = std::clamp(static_cast<int>(std::floor(p.y / grid.cell_height())), 0, grid.rows - 1);
  return {x, y};
}

// Gaussian exp(-d^2 / 2 sigma^2) around each start cell (d in cells),
// combined by element-wise max. Lanes sharing a cell merge into one point.
inline ProposalTarget render_proposal_heatmap(const std::vector<LanePolyline>& lanes, const GridSpec& grid,
                                              double sigma) {
  if (sigma <= 0.0) throw ContractViolation("sigma must be positive");
  ProposalTarget t;
  t.heatmap = Tensor<double>({grid.rows, grid.cols});
  for (std::size_t k = 0; k < lanes.size(); ++k) {
    if (lanes[k].empty()) continue;
    const auto [cx, cy] = start_cell(lanes[k], grid);
    auto it = std::find_if(t.points.begin(), t.points.end(),
                           [&](const ProposalPoint& p) { return p.x == cx && p.y == cy; });
    if (it == t.points.end()) {
      t.points.push_back({cx, cy, {}});
      it = t.points.end() - 1;
    }
    it->instances.push_back(static_cast<int>(k));
  }
  std::sort(t.points.begin(), t.points.end(),
            [](const ProposalPoint& a, const ProposalPoint& b) { return std::pair{a.y, a.x} < std::pair{b.y, b.x}; });
  const double denom = 2.0 * sigma * sigma;
  for (const auto& p : t.points) {
    for (int i = 0; i < grid.rows; ++i) {
      for (int j = 0; j < grid.cols; ++j) {
        const double d2 = static_cast<double>((i - p.y) * (i - p.y) + (j - p.x) * (j - p.x));
        auto& v = t.heatmap.at(i, j);
        v = std::max(v, std::exp(-d2 / denom));
      }
    }
  }
  return t;
}

struct Peak {
  int x = 0;
  int y = 0;
  double score = 0.0;
};

// 3x3 local maxima with score >= threshold, sorted by descending score.
// Equal neighbours are resolved in favour of the smaller row-major index.
inline std::vector<Peak> extract_proposal_points(const Tensor<double>& heatmap, double threshold) {
  const int rows = heatmap.dim(0), cols = heatmap.dim(1);
  std::vector<Peak> peaks;
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < cols; ++j) {
      const double v = heatmap.at(i, j);
      if (v < threshold) continue;
      bool keep = true;
      for (int di = -1; di <= 1 && keep; ++di) {
        for (int dj = -1; dj <= 1 && keep; ++dj) {
          const int y = i + di, x = j + dj;
          if ((di == 0 && dj == 0) || y < 0 || y >= rows || x < 0 || x >= cols) continue;
          const double u = heatmap.at(y, x);
          const bool earlier = y * cols + x < i * cols + j;
          if (u > v || (u == v && earlier)) keep = false;
        }
      }
      if (keep) peaks.push_back({j, i, v});
    }
  }
  std::stable_sort(peaks.begin(), peaks.end(), [](const Peak& a, const Peak& b) { return a.score > b.score; });
  return peaks;
}

}  // namespace condlane

#pragma once

#include <cmath>
#include <memory>
#include <optional>
#include <vector>

#include "condlane/backbone.hpp"
#include "condlane/config.hpp"
#include "condlane/heads.hpp"
#include "condlane/losses.hpp"
#include "condlane/rim.hpp"
#include "condlane/synth.hpp"

namespace condlane {

// Pixel normalisation used for every network input.
inline constexpr double kPixelMean = 0.5;
inline constexpr double kPixelStd = 0.25;

template <typename T>
Tensor<T> images_to_tensor(const std::vector<const Image*>& images) {
  if (images.empty()) throw ShapeError("empty image batch");
  const int h = images[0]->height, w = images[0]->width;
  Tensor<T> t({static_cast<int>(images.size()), 3, h, w});
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  for (std::size_t n = 0; n < images.size(); ++n) {
    const Image& img = *images[n];
    if (img.height != h || img.width != w) throw ShapeError("images in a batch must share one size");
    T* dst = t.data() + n * 3 * plane;
    for (std::size_t p = 0; p < plane; ++p) {
      for (int c = 0; c < 3; ++c) dst[c * plane + p] = static_cast<T>((img.rgb[p * 3 + c] / 255.0 - kPixelMean) / kPixelStd);
    }
  }
  return t;
}

// Supervision for one image: proposal heatmap plus, per start cell, the
// lanes that begin there (ascending mean x) and their row-wise targets.
struct SampleTargets {
  struct Group {
    int x = 0, y = 0;
    std::vector<int> lanes;  // indices into `rows`
  };
  Tensor<double> heatmap;
  std::vector<Group> groups;
  std::vector<RowwiseTarget> rows;
  std::vector<LanePolyline> lanes;  // the encodable lanes
};

inline SampleTargets prepare_targets(const std::vector<LanePolyline>& lanes, const ModelConfig& cfg) {
  const GridSpec shape_grid = GridSpec::at_downscale(cfg.image, cfg.shape_downscale());
  const GridSpec prop_grid = GridSpec::at_downscale(cfg.image, ProposalHead<float>::kDownscale);
  SampleTargets t;
  for (const auto& lane : lanes) {
    try {
      t.rows.push_back(encode_rowwise_targets(lane, shape_grid, cfg.omega));
      t.lanes.push_back(lane);
    } catch (const DegenerateLaneError&) {
      // Too short to supervise on this grid.
    }
  }
  auto prop = render_proposal_heatmap(t.lanes, prop_grid, cfg.heat_sigma);
  t.heatmap = std::move(prop.heatmap);
  for (const auto& p : prop.points) {
    std::vector<LanePolyline> members;
    for (int i : p.instances) members.push_back(t.lanes[static_cast<std::size_t>(i)]);
    const auto order = rim_teacher_targets(members).order;
    SampleTargets::Group g{p.x, p.y, {}};
    for (int k : order) g.lanes.push_back(p.instances[static_cast<std::size_t>(k)]);
    t.groups.push_back(std::move(g));
  }
  return t;
}

template <typename T>
struct InstanceOutput {
  Var<T> location;      // [Y,X]
  Var<T> offset;        // [Y,X]
  Var<T> range_logits;  // [Y,2]
  Var<T> expectation;   // [Y]
};

struct Detection {
  LanePolyline lane;
  double score = 0.0;  // proposal heatmap value
  int proposal_x = 0;  // proposal-grid cell
  int proposal_y = 0;
  int step = 0;        // RIM step (0 without RIM)
};

struct TrainBreakdown {
  LossComponents components;
  double total = 0.0;        // total_loss(components, weights)
  double graph_total = 0.0;  // value of the differentiated node
};

template <typename T>
class CondLaneModel {
 public:
  CondLaneModel(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg.validate();
    std::mt19937_64 rng(seed);
    backbone_ = std::make_unique<Backbone<T>>(store_, cfg.backbone(), rng);
    proposal_ = std::make_unique<ProposalHead<T>>(store_, cfg.fpn_channels, param_map_channels(cfg.rim), cfg.image, rng);
    shape_ = std::make_unique<ShapeSharedHead<T>>(store_, cfg.fpn_channels,
                                                  GridSpec::at_downscale(cfg.image, cfg.shape_downscale()), rng);
    range_ = std::make_unique<VerticalRangeHead<T>>(store_, shape_->grid().cols, rng);
    if (cfg.rim) rim_ = std::make_unique<RecurrentInstanceModule<T>>(store_, rng);
  }

  CondLaneModel(const CondLaneModel&) = delete;
  CondLaneModel& operator=(const CondLaneModel&) = delete;

  ParamStore<T>& store() { return store_; }
  const ParamStore<T>& store() const { return store_; }
  const ModelConfig& config() const { return cfg_; }
  const GridSpec& proposal_grid() const { return proposal_->grid(); }
  const GridSpec& shape_grid() const { return shape_->grid(); }
  const RecurrentInstanceModule<T>* rim() const { return rim_.get(); }

  struct Features {
    Var<T> heatmap;    // [N,1,Hp,Wp]
    Var<T> param_map;  // [N,Cp,Hp,Wp]
    Var<T> shared;     // [N,66,Y,X]
  };

  Features forward(const Var<T>& images, bool training, std::vector<Tensor<T>>* attention = nullptr) const {
    const auto& s = images->value.shape();
    if (s.size() != 4 || s[2] != cfg_.image.height || s[3] != cfg_.image.width) {
      throw ShapeError("model expects " + std::to_string(cfg_.image.height) + "x" + std::to_string(cfg_.image.width) +
                       " images, got " + shape_str(s));
    }
    const int sd = cfg_.shape_downscale();
    auto pyramid = backbone_->forward(images, training, {sd, ProposalHead<T>::kDownscale}, attention);
    auto prop = proposal_->forward(pyramid.at(ProposalHead<T>::kDownscale), training);
    return {prop.heatmap, prop.param_map, shape_->forward(pyramid.at(sd), training)};
  }

  // shared_n is one sample [1,66,Y,X]; kernel has 134 values.
  InstanceOutput<T> instance(const Var<T>& shared_n, const Var<T>& kernel) const {
    auto maps = conditional_forward(shared_n, kernel);
    return {maps.location, maps.offset, range_->forward(maps.location), row_expectation(maps.location)};
  }

  // Teacher-forced losses for a batch; `targets[n]` belongs to image n.
  // Returns the differentiable total and fills the breakdown.
  Var<T> losses(const Var<T>& images, const std::vector<const SampleTargets*>& targets, const TrainConfig& tc,
                TrainBreakdown& out) const {
    const int n = images->value.dim(0);
    if (static_cast<int>(targets.size()) != n) throw ShapeError("one target set per image required");
    auto f = forward(images, true);
    const auto& pg = proposal_grid();
    const std::size_t cells = static_cast<std::size_t>(pg.rows) * pg.cols;

    std::vector<Var<T>> point_terms, row_terms, range_terms, offset_terms, state_logits;
    std::vector<int> state_labels;
    for (int b = 0; b < n; ++b) {
      const SampleTargets& tg = *targets[static_cast<std::size_t>(b)];
      auto heat = ops::reshape(ops::slice(f.heatmap, b * cells, cells), {pg.rows, pg.cols});
      point_terms.push_back(loss_ops::focal_point(heat, tg.heatmap, tc.focal));
      if (tg.groups.empty()) continue;

      auto shared = ops::select_batch(f.shared, b);
      std::vector<Var<T>> rows, ranges, offsets;
      auto supervise = [&](const Var<T>& kernel, int lane) {
        const RowwiseTarget& rt = tg.rows[static_cast<std::size_t>(lane)];
        auto inst = instance(shared, kernel);
        rows.push_back(loss_ops::row(inst.expectation, rt));
        ranges.push_back(loss_ops::range(inst.range_logits, rt));
        if (cfg_.offset) offsets.push_back(loss_ops::offset(inst.offset, rt));
      };
      for (const auto& g : tg.groups) {
        auto column = gather_kernel(f.param_map, b, g.y, g.x);
        if (rim_) {
          const int m = static_cast<int>(g.lanes.size());
          auto steps = rim_->unroll(column, m);
          for (int t = 0; t < m; ++t) {
            supervise(steps[static_cast<std::size_t>(t)].kernel, g.lanes[static_cast<std::size_t>(t)]);
            state_logits.push_back(steps[static_cast<std::size_t>(t)].state_logits);
            state_labels.push_back(t + 1 < m ? 1 : 0);
          }
        } else {
          // One kernel per cell: only the leftmost lane starting here is learnable.
          supervise(column, g.lanes.front());
        }
      }
      row_terms.push_back(ops::mean(rows));
      range_terms.push_back(ops::mean(ranges));
      if (cfg_.offset) offset_terms.push_back(ops::mean(offsets));
    }

    auto zero = [] { return constant(Tensor<T>(Shape{})); };
    auto avg = [&](const std::vector<Var<T>>& v) { return v.empty() ? zero() : ops::mean(v); };
    Var<T> point = avg(point_terms), row = avg(row_terms), range = avg(range_terms), offset = avg(offset_terms);
    Var<T> state = state_logits.empty() ? zero() : loss_ops::rim_state(ops::concat(state_logits, 0), state_labels);

    const LossWeights& w = tc.weights;
    auto total = ops::weighted_sum<T>({point, row, range, offset, state},
                                      {T{1}, static_cast<T>(w.alpha), static_cast<T>(w.beta), static_cast<T>(w.gamma),
                                       static_cast<T>(w.eta)});
    out.components = {static_cast<double>(point->value[0]), static_cast<double>(row->value[0]),
                      static_cast<double>(range->value[0]), static_cast<double>(offset->value[0]),
                      static_cast<double>(state->value[0])};
    out.total = total_loss(out.components, w);
    out.graph_total = static_cast<double>(total->value[0]);
    return total;
  }

  // Proposal extraction, kernel gathering (through RIM when enabled),
  // conditional shape prediction and decoding for every image.
  std::vector<std::vector<Detection>> infer(const Var<T>& images, double threshold) const {
    NoGradGuard no_grad;
    auto f = forward(images, false);
    const int n = images->value.dim(0);
    const auto& pg = proposal_grid();
    const std::size_t cells = static_cast<std::size_t>(pg.rows) * pg.cols;
    std::vector<std::vector<Detection>> out(static_cast<std::size_t>(n));
    for (int b = 0; b < n; ++b) {
      Tensor<double> heat({pg.rows, pg.cols});
      for (std::size_t k = 0; k < cells; ++k) heat[k] = static_cast<double>(f.heatmap->value[b * cells + k]);
      auto shared = ops::select_batch(f.shared, b);
      for (const auto& peak : extract_proposal_points(heat, threshold)) {
        auto column = gather_kernel(f.param_map, b, peak.y, peak.x);
        std::vector<Var<T>> kernels;
        if (rim_) {
          for (const auto& s : rim_->run(column, cfg_.rim_max_steps)) kernels.push_back(s.kernel);
        } else {
          kernels.push_back(column);
        }
        for (std::size_t k = 0; k < kernels.size(); ++k) {
          auto lane = decode(instance(shared, kernels[k]));
          if (lane) out[static_cast<std::size_t>(b)].push_back({std::move(*lane), peak.score, peak.x, peak.y, static_cast<int>(k)});
        }
      }
    }
    return out;
  }

  std::optional<LanePolyline> decode(const InstanceOutput<T>& inst) const {
    const auto exp = inst.expectation->value.template cast<double>();
    const auto range = inst.range_logits->value.template cast<double>();
    if (!cfg_.offset) return decode_lane(exp.values(), range, nullptr, shape_grid());
    const auto offset = inst.offset->value.template cast<double>();
    return decode_lane(exp.values(), range, &offset, shape_grid());
  }

 private:
  ModelConfig cfg_;
  ParamStore<T> store_;
  std::unique_ptr<Backbone<T>> backbone_;
  std::unique_ptr<ProposalHead<T>> proposal_;
  std::unique_ptr<ShapeSharedHead<T>> shape_;
  std::unique_ptr<VerticalRangeHead<T>> range_;
  std::unique_ptr<RecurrentInstanceModule<T>> rim_;
};

}  // namespace condlane

#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <map>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "condlane/checkpoint.hpp"
#include "condlane/dataset.hpp"
#include "condlane/metrics.hpp"
#include "condlane/model.hpp"

namespace condlane {

struct StepLog {
  std::int64_t step = 0;
  int epoch = 0;
  double lr = 0.0;
  TrainBreakdown loss;
};

inline Json to_json(const StepLog& s) {
  const auto& c = s.loss.components;
  return Json{{"event", "step"},  {"step", s.step},     {"epoch", s.epoch},    {"lr", s.lr},
              {"total", s.loss.total}, {"point", c.point}, {"row", c.row},     {"range", c.range},
              {"offset", c.offset}, {"state", c.state}};
}

// Mini-batch Adam training with a step-decay schedule, periodic checkpoints
// and resume. Targets are computed once per sample.
template <typename T>
class Trainer {
 public:
  using Logger = std::function<void(const StepLog&)>;

  Trainer(CondLaneModel<T>& model, const TrainConfig& tc, const std::vector<LabeledImage>& data)
      : model_(model), tc_(tc), data_(data), adam_(AdamOptions{tc.lr, 0.9, 0.999, 1e-8, tc.weight_decay}) {
    tc.validate();
    const auto& img = model.config().image;
    targets_.reserve(data.size());
    for (const auto& s : data) {
      if (s.image.height != img.height || s.image.width != img.width) {
        throw ConfigError("sample " + s.id + " is " + std::to_string(s.image.height) + "x" +
                          std::to_string(s.image.width) + " but the model expects " + std::to_string(img.height) +
                          "x" + std::to_string(img.width));
      }
      targets_.push_back(prepare_targets(s.lanes, model.config()));
    }
  }

  Adam<T>& optimizer() { return adam_; }
  std::int64_t step() const { return step_; }
  int epoch() const { return epoch_; }

  double lr_for_epoch(int epoch) const {
    const double progress = tc_.epochs > 0 ? static_cast<double>(epoch) / tc_.epochs : 0.0;
    return step_decay_lr(tc_.lr, progress, tc_.lr_decay_at, tc_.lr_decay_factor);
  }

  // One optimisation step on the given sample indices.
  TrainBreakdown train_step(const std::vector<std::size_t>& batch) {
    std::vector<const Image*> images;
    std::vector<const SampleTargets*> targets;
    for (std::size_t i : batch) {
      images.push_back(&data_[i].image);
      targets.push_back(&targets_[i]);
    }
    TrainBreakdown br;
    model_.store().zero_grad();
    auto total = model_.losses(constant(images_to_tensor<T>(images)), targets, tc_, br);
    check_finite(br);
    backward(total);
    release_graph(total);
    adam_.step(model_.store());
    ++step_;
    return br;
  }

  // Runs epochs [epoch(), epochs). Shuffling is seeded by (seed, epoch) so a
  // resumed run sees the same batches as an uninterrupted one.
  void fit(const std::filesystem::path& run_dir, const Json& config, const Logger& log = {}) {
    std::filesystem::create_directories(run_dir);
    if (step_ == 0 && epoch_ == 0) save(run_dir, config, 0);
    std::vector<std::size_t> order(data_.size());
    for (; epoch_ < tc_.epochs; ++epoch_) {
      adam_.set_lr(lr_for_epoch(epoch_));
      std::iota(order.begin(), order.end(), std::size_t{0});
      std::seed_seq seq{static_cast<std::uint64_t>(tc_.seed), static_cast<std::uint64_t>(epoch_)};
      std::mt19937_64 rng(seq);
      std::shuffle(order.begin(), order.end(), rng);
      for (std::size_t b = 0; b < order.size(); b += static_cast<std::size_t>(tc_.batch_size)) {
        const std::size_t e = std::min(order.size(), b + static_cast<std::size_t>(tc_.batch_size));
        auto br = train_step({order.begin() + static_cast<std::ptrdiff_t>(b), order.begin() + static_cast<std::ptrdiff_t>(e)});
        if (log && step_ % tc_.log_every == 0) log({step_, epoch_, adam_.lr(), br});
      }
      const int done = epoch_ + 1;
      if (done == tc_.epochs || (tc_.checkpoint_every > 0 && done % tc_.checkpoint_every == 0)) {
        save(run_dir, config, done);
      }
    }
  }

  // Writes checkpoints/epoch-NNNN.ckpt and refreshes latest.ckpt.
  void save(const std::filesystem::path& run_dir, const Json& config, int completed_epochs) {
    std::filesystem::create_directories(run_dir / "checkpoints");
    char name[32];
    std::snprintf(name, sizeof(name), "epoch-%04d.ckpt", completed_epochs);
    const auto path = (run_dir / "checkpoints" / name).string();
    save_checkpoint(path, config, {step_, completed_epochs}, model_.store(), &adam_);
    std::filesystem::copy_file(path, run_dir / "latest.ckpt.tmp", std::filesystem::copy_options::overwrite_existing);
    std::filesystem::rename(run_dir / "latest.ckpt.tmp", run_dir / "latest.ckpt");
  }

  void resume(const std::string& checkpoint) {
    const auto c = load_checkpoint(checkpoint, model_.store(), &adam_);
    step_ = c.state.step;
    epoch_ = c.state.epoch;
  }

 private:
  void check_finite(const TrainBreakdown& br) const {
    const auto& c = br.components;
    if (std::isfinite(br.graph_total) && std::isfinite(c.point) && std::isfinite(c.row) && std::isfinite(c.range) &&
        std::isfinite(c.offset) && std::isfinite(c.state)) {
      return;
    }
    std::ostringstream os;
    os << "non-finite loss at step " << step_ + 1 << ": point=" << c.point << " row=" << c.row
       << " range=" << c.range << " offset=" << c.offset << " state=" << c.state << " total=" << br.graph_total;
    throw NumericError(os.str());
  }

  CondLaneModel<T>& model_;
  TrainConfig tc_;
  const std::vector<LabeledImage>& data_;
  std::vector<SampleTargets> targets_;
  Adam<T> adam_;
  std::int64_t step_ = 0;
  int epoch_ = 0;
};

template <typename T>
std::vector<std::vector<Detection>> detect(const CondLaneModel<T>& model, const std::vector<const Image*>& images,
                                           double threshold, int batch_size = 8) {
  std::vector<std::vector<Detection>> out;
  for (std::size_t b = 0; b < images.size(); b += static_cast<std::size_t>(batch_size)) {
    const std::size_t e = std::min(images.size(), b + static_cast<std::size_t>(batch_size));
    std::vector<const Image*> chunk(images.begin() + static_cast<std::ptrdiff_t>(b),
                                    images.begin() + static_cast<std::ptrdiff_t>(e));
    auto det = model.infer(constant(images_to_tensor<T>(chunk)), threshold);
    for (auto& d : det) out.push_back(std::move(d));
  }
  return out;
}

inline std::vector<LanePolyline> lanes_of(const std::vector<Detection>& dets) {
  std::vector<LanePolyline> out;
  for (const auto& d : dets) out.push_back(d.lane);
  return out;
}

// Sum of |x_pred - x_gt| in pixels over the heights both lanes cover, with
// the number of such heights.
inline std::pair<double, int> row_error(const LanePolyline& pred, const LanePolyline& gt,
                                        const std::vector<double>& heights) {
  const auto a = sample_at_heights(pred, heights);
  const auto b = sample_at_heights(gt, heights);
  double sum = 0.0;
  int n = 0;
  for (std::size_t i = 0; i < heights.size(); ++i) {
    if (a[i] == kTuSimpleAbsent || b[i] == kTuSimpleAbsent) continue;
    sum += std::abs(a[i] - b[i]);
    ++n;
  }
  return {sum, n};
}

// Ground-truth lanes that share a start cell with another lane.
inline std::vector<bool> shared_start(const std::vector<LanePolyline>& gts, const GridSpec& proposal_grid) {
  std::map<std::pair<int, int>, int> count;
  for (const auto& g : gts) ++count[start_cell(g, proposal_grid)];
  std::vector<bool> out;
  for (const auto& g : gts) out.push_back(count[start_cell(g, proposal_grid)] >= 2);
  return out;
}

struct Evaluation {
  EvalReport report;
  double mean_row_error = 0.0;  // pixels, over matched pairs
  int row_samples = 0;
  int shared_start_lanes = 0;   // GT lanes in cells holding two or more
  int shared_start_matched = 0;
  int images = 0;
  int predicted_lanes = 0;
  int exact_count_images = 0;   // images whose prediction count equals the GT count
  std::vector<std::vector<Detection>> detections;

  double shared_start_recall() const {
    return shared_start_lanes ? static_cast<double>(shared_start_matched) / shared_start_lanes : 0.0;
  }
};

inline Json to_json(const Counts& c) {
  const Scores s = scores_from(c);
  return Json{{"tp", c.tp}, {"fp", c.fp}, {"fn", c.fn}, {"precision", s.precision}, {"recall", s.recall}, {"f1", s.f1}};
}

inline Json to_json(const EvalReport& r) {
  Json cats = Json::object();
  for (const auto& [k, c] : r.per_category) cats[k] = to_json(c);
  return Json{{"overall", to_json(r.total)}, {"per_category", cats}};
}

inline Json to_json(const Evaluation& e) {
  const Json r = to_json(e.report);
  return Json{{"images", e.images},
              {"predicted_lanes", e.predicted_lanes},
              {"overall", r.at("overall")},
              {"per_category", r.at("per_category")},
              {"mean_row_error_px", e.mean_row_error},
              {"shared_start_recall", e.shared_start_recall()},
              {"shared_start_lanes", e.shared_start_lanes},
              {"exact_count_images", e.exact_count_images}};
}

template <typename T>
Evaluation evaluate(const CondLaneModel<T>& model, const std::vector<LabeledImage>& data, const MatchConfig& mc,
                    double threshold) {
  std::vector<const Image*> images;
  for (const auto& s : data) images.push_back(&s.image);
  Evaluation ev;
  ev.detections = detect(model, images, threshold);
  std::vector<double> heights;
  const auto& sg = model.shape_grid();
  for (int r = 0; r < sg.rows; ++r) heights.push_back((r + 0.5) * sg.cell_height());
  double err = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto preds = lanes_of(ev.detections[i]);
    const auto& gts = data[i].lanes;
    const auto pairs = match_pairs(preds, gts, mc);
    Counts c;
    for (int p : pairs) c.tp += p >= 0;
    c.fn = static_cast<int>(gts.size()) - c.tp;
    c.fp = static_cast<int>(preds.size()) - c.tp;
    ev.report.add(data[i].category, c);
    const auto shared = shared_start(gts, model.proposal_grid());
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (shared[g]) {
        ++ev.shared_start_lanes;
        ev.shared_start_matched += pairs[g] >= 0;
      }
      if (pairs[g] < 0) continue;
      const auto [s, n] = row_error(preds[static_cast<std::size_t>(pairs[g])], gts[g], heights);
      err += s;
      ev.row_samples += n;
    }
    ev.predicted_lanes += static_cast<int>(preds.size());
    ev.exact_count_images += preds.size() == gts.size();
    ++ev.images;
  }
  ev.mean_row_error = ev.row_samples ? err / ev.row_samples : 0.0;
  return ev;
}

}  // namespace condlane

#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <random>

#include "condlane/metrics.hpp"
#include "metric_oracles.hpp"

namespace condlane {
namespace {

using testing::brute_force_iou;
using testing::exhaustive_counts;
using testing::random_lane;

MatchConfig small_canvas() {
  MatchConfig c;
  c.eval_size = ImageSpec{60, 120};
  c.line_width = 5;
  return c;
}

TEST(Metrics, LineWidthScaling) {
  EXPECT_EQ(MatchConfig::for_canvas(ImageSpec{590, 1640}).line_width, 30);
  EXPECT_EQ(MatchConfig::for_canvas(ImageSpec{320, 800}).line_width, 15);
  EXPECT_EQ(MatchConfig::for_canvas(ImageSpec{16, 32}).line_width, 1);
  MatchConfig bad;
  bad.iou_threshold = 0.0;
  EXPECT_THROW(bad.validate(), ConfigError);
}

TEST(Metrics, IouBasics) {
  const auto cfg = small_canvas();
  const LanePolyline a{{{20, 55}, {30, 5}}}, far{{{100, 55}, {100, 5}}};
  EXPECT_DOUBLE_EQ(lane_iou(a, a, cfg), 1.0);
  EXPECT_DOUBLE_EQ(lane_iou(a, far, cfg), 0.0);
  EXPECT_DOUBLE_EQ(lane_iou(LanePolyline{}, LanePolyline{}, cfg), 0.0);
}

TEST(Metrics, ParallelLinesOneWidthApart) {
  const auto cfg = small_canvas();
  const LanePolyline a{{{40, 55}, {40, 5}}}, b{{{45, 55}, {45, 5}}};
  EXPECT_NEAR(lane_iou(a, b, cfg), brute_force_iou(a, b, cfg), 0.02);
  EXPECT_EQ(lane_iou(a, b, cfg), brute_force_iou(a, b, cfg));
}

TEST(Metrics, IouMatchesPixelOracleAndIsSymmetric) {
  std::mt19937_64 rng(3);
  const auto cfg = small_canvas();
  for (int trial = 0; trial < 50; ++trial) {
    const auto a = random_lane(rng, cfg.eval_size), b = random_lane(rng, cfg.eval_size);
    const double iou = lane_iou(a, b, cfg);
    EXPECT_EQ(iou, brute_force_iou(a, b, cfg));
    EXPECT_EQ(iou, lane_iou(b, a, cfg));
    EXPECT_GE(iou, 0.0);
    EXPECT_LE(iou, 1.0);
  }
}

TEST(Metrics, AssignmentMatchesEnumeration) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0, 1);
  std::uniform_int_distribution<int> size(0, 5);
  for (int trial = 0; trial < 200; ++trial) {
    const int r = size(rng), c = size(rng);
    std::vector<std::vector<double>> w(r, std::vector<double>(c));
    for (auto& row : w) {
      for (auto& v : row) v = u(rng);
    }
    const auto a = max_weight_assignment(w);
    double got = 0;
    std::vector<int> used(c, 0);
    for (int i = 0; i < r; ++i) {
      if (a[i] < 0) continue;
      EXPECT_FALSE(used[a[i]]);
      used[a[i]] = 1;
      got += w[i][a[i]];
    }
    EXPECT_NEAR(got, testing::best_assignment_value(w), 1e-12);
  }
}

TEST(Metrics, ScoreExamples) {
  const auto cfg = small_canvas();
  const LanePolyline a{{{20, 55}, {20, 5}}}, b{{{60, 55}, {60, 5}}}, c{{{100, 55}, {100, 5}}};
  auto r = match_and_score({{{a, b}, {a, b}, "x"}}, cfg);
  EXPECT_DOUBLE_EQ(r.scores().f1, 1.0);
  r = match_and_score({{{a, c}, {a, b}, "x"}}, cfg);
  EXPECT_EQ(r.total, (Counts{1, 1, 1}));
  EXPECT_DOUBLE_EQ(r.scores().precision, 0.5);
  EXPECT_DOUBLE_EQ(r.scores().recall, 0.5);
  EXPECT_DOUBLE_EQ(r.scores().f1, 0.5);
  r = match_and_score({{{}, {a, b}, "x"}}, cfg);
  EXPECT_DOUBLE_EQ(r.scores().f1, 0.0);
}

TEST(Metrics, CategoriesSumToTotal) {
  std::mt19937_64 rng(9);
  const auto cfg = small_canvas();
  std::vector<ImageLanes> images;
  const char* cats[] = {"normal", "fork", "dense"};
  for (int k = 0; k < 12; ++k) {
    ImageLanes im;
    for (int i = 0; i < 3; ++i) im.gts.push_back(random_lane(rng, cfg.eval_size));
    for (int i = 0; i < 2; ++i) im.preds.push_back(random_lane(rng, cfg.eval_size));
    im.preds.push_back(im.gts[0]);
    im.category = cats[k % 3];
    images.push_back(im);
  }
  const auto r = match_and_score(images, cfg);
  Counts sum;
  for (const auto& [name, c] : r.per_category) sum += c;
  EXPECT_EQ(sum, r.total);
}

TEST(Metrics, OrderInvarianceAndOracle) {
  std::mt19937_64 rng(13);
  std::uniform_int_distribution<int> n(0, 5);
  const auto cfg = small_canvas();
  for (int trial = 0; trial < 40; ++trial) {
    ImageLanes im;
    const int ng = n(rng), np = n(rng);
    for (int i = 0; i < ng; ++i) im.gts.push_back(random_lane(rng, cfg.eval_size));
    for (int i = 0; i < np; ++i) {
      // Perturbed copies so that some pairs pass the threshold.
      if (i < ng && i % 2 == 0) {
        auto l = im.gts[i];
        for (auto& p : l.points) p.x = std::clamp(p.x + 1.5, 0.0, 119.0);
        im.preds.push_back(l);
      } else {
        im.preds.push_back(random_lane(rng, cfg.eval_size));
      }
    }
    const auto counts = match_image(im.preds, im.gts, cfg);
    EXPECT_EQ(counts, exhaustive_counts(im.preds, im.gts, cfg));
    auto rp = im.preds, rg = im.gts;
    std::shuffle(rp.begin(), rp.end(), rng);
    std::shuffle(rg.begin(), rg.end(), rng);
    EXPECT_EQ(match_image(rp, rg, cfg), counts);
  }
}

TuSimpleRecord record(std::vector<std::vector<double>> lanes) {
  return TuSimpleRecord{"a.jpg", {10, 20, 30, 40}, std::move(lanes)};
}

TEST(Metrics, TuSimpleExamples) {
  const auto gt = record({{5, 6, 7, 8}, {50, 51, 52, -2}});
  auto r = tusimple_score({gt}, {gt}, 20);
  EXPECT_DOUBLE_EQ(r.accuracy(), 1.0);
  EXPECT_EQ(r.tp, 2);
  EXPECT_DOUBLE_EQ(r.f1(), 1.0);

  auto half = record({{5, 6, 100, 100}});
  r = tusimple_score({half}, {record({{5, 6, 7, 8}})}, 20);
  EXPECT_DOUBLE_EQ(r.accuracy(), 0.5);
  EXPECT_EQ(r.fn, 1);
  EXPECT_EQ(r.fp, 1);
  EXPECT_DOUBLE_EQ(r.fn_rate(), 1.0);

  EXPECT_THROW(tusimple_score({record({{1, 2, 3}})}, {gt}, 20), FormatError);
  auto shifted = gt;
  shifted.h_samples[0] = 11;
  EXPECT_THROW(tusimple_score({shifted}, {gt}, 20), FormatError);
}

TEST(Metrics, TuSimpleThresholdIsStrict) {
  // 100 points with 84 or 86 correct.
  TuSimpleRecord g{"b.jpg", {}, {std::vector<double>(100, 10.0)}};
  for (int i = 0; i < 100; ++i) g.h_samples.push_back(i);
  auto p84 = g, p86 = g;
  for (int i = 84; i < 100; ++i) p84.lanes[0][i] = 500;
  for (int i = 86; i < 100; ++i) p86.lanes[0][i] = 500;
  EXPECT_EQ(tusimple_score({p84}, {g}, 5).fn, 1);
  EXPECT_EQ(tusimple_score({p86}, {g}, 5).tp, 1);
}

}  // namespace
}  // namespace condlane

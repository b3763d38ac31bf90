#include <gtest/gtest.h>

#include <random>

#include "condlane/backbone.hpp"
#include "condlane/heads.hpp"
#include "condlane/rim.hpp"
#include "gradcheck.hpp"

namespace condlane {
namespace {

using testing::check_graph;
using testing::random_tensor;
using V = std::vector<Var<double>>;

Var<double> random_shared(std::mt19937_64& rng, int rows, int cols) {
  auto t = random_tensor({1, kSharedChannels, rows, cols}, rng);
  auto coords = coordinate_planes<double>(rows, cols);
  std::copy(coords.storage().begin(), coords.storage().end(),
            t.data() + static_cast<std::size_t>(kShapeFeatureChannels) * rows * cols);
  return constant(t);
}

TEST(Heads, ProposalShapesAndRange) {
  std::mt19937_64 rng(1);
  ParamStore<double> store;
  const ImageSpec img{64, 128};
  ProposalHead<double> head(store, 8, param_map_channels(false), img, rng);
  auto out = head.forward(constant(random_tensor({2, 8, 4, 8}, rng, -3, 3)), true);
  EXPECT_EQ(out.heatmap->value.shape(), (Shape{2, 1, 4, 8}));
  EXPECT_EQ(out.param_map->value.shape(), (Shape{2, 134, 4, 8}));
  for (double v : out.heatmap->value.values()) {
    EXPECT_GT(v, 0.0);
    EXPECT_LT(v, 1.0);
  }
  EXPECT_THROW(head.forward(constant(random_tensor({1, 8, 8, 16}, rng)), false), ShapeError);

  ParamStore<double> s2;
  ProposalHead<double> rim_head(s2, 8, param_map_channels(true), img, rng);
  EXPECT_EQ(rim_head.param_channels(), 128);
  EXPECT_EQ(GridSpec::at_downscale(ImageSpec{320, 800}, 16).rows, 20);
}

TEST(Heads, SharedFeatureCoordinates) {
  std::mt19937_64 rng(2);
  ParamStore<double> store;
  const GridSpec grid{5, 9, ImageSpec{40, 72}};
  ShapeSharedHead<double> head(store, 8, grid, rng);
  auto out = head.forward(constant(random_tensor({2, 8, 5, 9}, rng)), true)->value;
  EXPECT_EQ(out.shape(), (Shape{2, 66, 5, 9}));
  for (int n = 0; n < 2; ++n) {
    for (int i = 0; i < 5; ++i) {
      for (int j = 0; j < 9; ++j) {
        EXPECT_DOUBLE_EQ(out.at(n, 64, i, j), j / 8.0);
        EXPECT_DOUBLE_EQ(out.at(n, 65, i, j), i / 4.0);
      }
    }
  }
}

TEST(Heads, ConditionalForwardExamples) {
  std::mt19937_64 rng(3);
  auto shared = random_shared(rng, 4, 6);
  Tensor<double> k({kKernelSize});
  k[kSharedChannels] = 0.7;                      // location bias
  k[kBranchParams + kSharedChannels] = -0.2;     // offset bias
  auto maps = conditional_forward(shared, constant(k));
  for (double v : maps.location->value.values()) EXPECT_DOUBLE_EQ(v, 0.7);
  for (double v : maps.offset->value.values()) EXPECT_DOUBLE_EQ(v, -0.2);

  Tensor<double> pick({kKernelSize});
  pick[64] = 1.0;
  auto loc = conditional_forward(shared, constant(pick)).location->value;
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < 6; ++j) EXPECT_DOUBLE_EQ(loc.at(i, j), j / 5.0);
  }
  EXPECT_THROW(conditional_forward(shared, constant(Tensor<double>({133}))), ContractViolation);
}

TEST(Heads, ConditionalForwardIsLinearInKernel) {
  std::mt19937_64 rng(4);
  auto shared = random_shared(rng, 5, 7);
  for (int trial = 0; trial < 10; ++trial) {
    auto k1 = random_tensor({kKernelSize}, rng), k2 = random_tensor({kKernelSize}, rng);
    Tensor<double> sum = k1;
    sum += k2;
    Tensor<double> scaled = k1;
    scaled *= 2.5;
    auto a = conditional_forward(shared, constant(k1));
    auto b = conditional_forward(shared, constant(k2));
    auto c = conditional_forward(shared, constant(sum));
    auto d = conditional_forward(shared, constant(scaled));
    for (std::size_t i = 0; i < 35; ++i) {
      const double l = a.location->value[i] + b.location->value[i];
      EXPECT_NEAR(c.location->value[i], l, 1e-5 * std::max(1.0, std::abs(l)));
      EXPECT_NEAR(c.offset->value[i], a.offset->value[i] + b.offset->value[i], 1e-9);
      EXPECT_NEAR(d.location->value[i], 2.5 * a.location->value[i], 1e-9);
    }
  }
}

TEST(Heads, GatherKernels) {
  std::mt19937_64 rng(5);
  auto map = random_tensor({7, 3, 4}, rng);
  auto cols = gather_kernels(map, {{2, 1}, {0, 0}});
  ASSERT_EQ(cols.size(), 2u);
  for (int c = 0; c < 7; ++c) {
    EXPECT_EQ(cols[0][c], map.at(c, 1, 2));
    EXPECT_EQ(cols[1][c], map.at(c, 0, 0));
  }
  EXPECT_TRUE(gather_kernels(map, {}).empty());
  EXPECT_THROW(gather_kernels(map, {{4, 0}}), IndexError);

  // Scatter the gathered columns into a blank map: sampled cells match exactly.
  Tensor<double> back({7, 3, 4});
  for (int c = 0; c < 7; ++c) back.at(c, 1, 2) = cols[0][c];
  for (int c = 0; c < 7; ++c) EXPECT_EQ(back.at(c, 1, 2), map.at(c, 1, 2));

  auto v = constant(map.reshaped({1, 7, 3, 4}));
  EXPECT_EQ(gather_kernel(v, 0, 1, 2)->value[3], map.at(3, 1, 2));
  EXPECT_THROW(gather_kernel(v, 0, 3, 0), IndexError);
}

TEST(Heads, RowExpectationInRange) {
  std::mt19937_64 rng(6);
  auto logits = constant(random_tensor({6, 9}, rng, -5, 5));
  auto e = row_expectation(logits);
  auto p = ops::softmax_rows_value(logits->value);
  for (int i = 0; i < 6; ++i) {
    std::vector<double> row(p.data() + i * 9, p.data() + (i + 1) * 9);
    EXPECT_NEAR(e->value[i], expected_abscissa(row), 1e-12);
    EXPECT_GE(e->value[i], 0.0);
    EXPECT_LE(e->value[i], 8.0);
  }
}

TEST(Heads, VerticalRangeRowIndependence) {
  std::mt19937_64 rng(7);
  ParamStore<double> store;
  VerticalRangeHead<double> head(store, 5, rng);
  auto loc = random_tensor({4, 5}, rng);
  for (int j = 0; j < 5; ++j) loc.at(3, j) = loc.at(1, j);
  auto out = head.forward(constant(loc))->value;
  EXPECT_EQ(out.shape(), (Shape{4, 2}));
  EXPECT_EQ(out.at(3, 0), out.at(1, 0));
  EXPECT_EQ(out.at(3, 1), out.at(1, 1));
  Tensor<double> perm({4, 5});
  const int order[4] = {2, 0, 3, 1};
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < 5; ++j) perm.at(i, j) = loc.at(order[i], j);
  }
  auto pout = head.forward(constant(perm))->value;
  for (int i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(pout.at(i, 0), out.at(order[i], 0));
}

TEST(Heads, DifferentiableThroughHeadOps) {
  std::mt19937_64 rng(8);
  auto shared = random_tensor({1, kSharedChannels, 3, 4}, rng);
  auto kernel = random_tensor({kKernelSize}, rng, -0.3, 0.3);
  auto map = random_tensor({1, 5, 2, 3}, rng);
  EXPECT_LT(check_graph([](const V& v) { return conditional_forward(v[0], v[1]).location; }, {shared, kernel}), 1e-6);
  EXPECT_LT(check_graph([](const V& v) { return conditional_forward(v[0], v[1]).offset; }, {shared, kernel}), 1e-6);
  EXPECT_LT(check_graph([](const V& v) { return row_expectation(v[0]); }, {random_tensor({3, 5}, rng)}), 1e-6);
  EXPECT_LT(check_graph([](const V& v) { return gather_kernel(v[0], 0, 1, 2); }, {map}), 1e-6);
}

TEST(Rim, TeacherTargets) {
  EXPECT_THROW(rim_teacher_targets({}), ContractViolation);
  LanePolyline a{{{120, 100}, {120, 10}}}, b{{{80, 100}, {80, 10}}}, c{{{100, 100}, {60, 10}}};
  auto one = rim_teacher_targets({a});
  EXPECT_EQ(one.labels, (std::vector<int>{0}));
  auto two = rim_teacher_targets({a, b});
  EXPECT_EQ(two.order, (std::vector<int>{1, 0}));
  auto three = rim_teacher_targets({a, b, c});
  EXPECT_EQ(three.labels, (std::vector<int>{1, 1, 0}));
  EXPECT_EQ(three.order, (std::vector<int>{1, 2, 0}));
}

TEST(Rim, UnrollTerminatesAndIsDeterministic) {
  std::mt19937_64 rng(9);
  ParamStore<double> store;
  RecurrentInstanceModule<double> rim(store, rng);
  for (int trial = 0; trial < 20; ++trial) {
    auto f = constant(random_tensor({kRimFeatureSize}, rng, -3, 3));
    const int max_steps = 1 + trial % 6;
    auto steps = rim.run(f, max_steps);
    ASSERT_GE(steps.size(), 1u);
    ASSERT_LE(static_cast<int>(steps.size()), max_steps);
    for (std::size_t s = 0; s + 1 < steps.size(); ++s) EXPECT_FALSE(steps[s].stop());
    auto again = rim.run(f, max_steps);
    ASSERT_EQ(again.size(), steps.size());
    EXPECT_EQ(again.back().kernel->value.storage(), steps.back().kernel->value.storage());
    // First kernel does not depend on the cap.
    EXPECT_EQ(rim.run(f, 1)[0].kernel->value.storage(), rim.unroll(f, 5)[0].kernel->value.storage());
    EXPECT_EQ(steps[0].kernel->value.size(), 134u);
  }
}

TEST(Rim, GradientThroughUnroll) {
  std::mt19937_64 rng(10);
  ParamStore<double> store;
  RecurrentInstanceModule<double> rim(store, rng);
  auto f = random_tensor({kRimFeatureSize}, rng);
  const double err = check_graph(
      [&](const V& v) {
        auto steps = rim.unroll(v[0], 3);
        return ops::concat<double>({steps[2].kernel, ops::reshape(steps[1].state_logits, {2})}, 0);
      },
      {f});
  EXPECT_LT(err, 1e-6);
}

TEST(Backbone, PyramidShapes) {
  std::mt19937_64 rng(11);
  ParamStore<double> store;
  BackboneConfig cfg;
  cfg.stage_channels = {4, 8, 8, 16};
  cfg.fpn_channels = 8;
  Backbone<double> bb(store, cfg, rng);
  auto img = constant(random_tensor({1, 3, 64, 96}, rng));
  auto pyr = bb.forward(img, true);
  EXPECT_EQ(pyr.at(4)->value.shape(), (Shape{1, 8, 16, 24}));
  EXPECT_EQ(pyr.at(8)->value.shape(), (Shape{1, 8, 8, 12}));
  EXPECT_EQ(pyr.at(16)->value.shape(), (Shape{1, 8, 4, 6}));
  EXPECT_EQ(pyr.at(32)->value.shape(), (Shape{1, 8, 2, 3}));
  auto partial = bb.forward(img, false, {8, 16});
  EXPECT_EQ(partial.levels.size(), 2u);
  EXPECT_THROW(partial.at(4), ShapeError);
  EXPECT_THROW(bb.forward(constant(random_tensor({1, 3, 40, 64}, rng)), false), ShapeError);
  EXPECT_THROW(bb.forward(constant(random_tensor({1, 1, 64, 64}, rng)), false), ShapeError);
}

TEST(Backbone, EncoderAttentionIsStochasticAndShapePreserving) {
  std::mt19937_64 rng(12);
  ParamStore<double> store;
  TransformerEncoder<double> enc(store, "enc", 8, 2, rng);
  std::uniform_int_distribution<int> dim(1, 6);
  for (int trial = 0; trial < 5; ++trial) {
    const int h = dim(rng), w = dim(rng);
    std::vector<Tensor<double>> attn;
    auto x = constant(random_tensor({2, 8, h, w}, rng));
    auto y = enc(x, &attn);
    EXPECT_EQ(y->value.shape(), x->value.shape());
    ASSERT_EQ(attn.size(), 4u);
    for (const auto& a : attn) {
      for (int i = 0; i < h * w; ++i) {
        double s = 0;
        for (int j = 0; j < h * w; ++j) s += a.at(i, j);
        EXPECT_NEAR(s, 1.0, 1e-5);
      }
    }
  }
}

TEST(Backbone, EncoderGradient) {
  std::mt19937_64 rng(13);
  ParamStore<double> store;
  TransformerEncoder<double> enc(store, "enc", 4, 1, rng);
  EXPECT_LT(check_graph([&](const V& v) { return enc(v[0]); }, {random_tensor({1, 4, 2, 3}, rng)}), 1e-6);
}

TEST(Backbone, VariantDepths) {
  EXPECT_EQ(BackboneConfig::depths_for(Variant::Small), (std::vector<int>{2, 2, 2, 2}));
  EXPECT_EQ(BackboneConfig::depths_for(Variant::Medium), (std::vector<int>{3, 4, 6, 3}));
  EXPECT_EQ(BackboneConfig::depths_for(Variant::Large), (std::vector<int>{3, 4, 23, 3}));
  EXPECT_EQ(variant_from_string("medium"), Variant::Medium);
  EXPECT_THROW(variant_from_string("huge"), ConfigError);
  BackboneConfig bad;
  bad.stage_strides = {2, 2, 2, 2};
  EXPECT_THROW(bad.validate(), ConfigError);
}

}  // namespace
}  // namespace condlane

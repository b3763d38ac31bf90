#include <gtest/gtest.h>

#include "condlane/layers.hpp"
#include "gradcheck.hpp"

namespace condlane {
namespace {

using testing::check_graph;
using testing::random_tensor;
using V = std::vector<Var<double>>;

constexpr double kTol = 1e-6;

TEST(Ops, ElementwiseGradients) {
  std::mt19937_64 rng(1);
  auto a = random_tensor({3, 4}, rng), b = random_tensor({3, 4}, rng);
  EXPECT_LT(check_graph([](const V& v) { return ops::add(v[0], v[1]); }, {a, b}), kTol);
  EXPECT_LT(check_graph([](const V& v) { return ops::sub(v[0], v[1]); }, {a, b}), kTol);
  EXPECT_LT(check_graph([](const V& v) { return ops::mul(v[0], v[1]); }, {a, b}), kTol);
  EXPECT_LT(check_graph([](const V& v) { return ops::sigmoid(v[0]); }, {a}), kTol);
  EXPECT_LT(check_graph([](const V& v) { return ops::tanh(v[0]); }, {a}), kTol);
  EXPECT_LT(check_graph([](const V& v) { return ops::scale(v[0], 2.5); }, {a}), kTol);
  EXPECT_LT(check_graph([](const V& v) { return ops::relu(v[0]); }, {a}), kTol);
}

TEST(Ops, MatrixGradients) {
  std::mt19937_64 rng(2);
  auto a = random_tensor({3, 5}, rng), b = random_tensor({5, 2}, rng);
  auto w = random_tensor({4, 5}, rng), bias = random_tensor({4}, rng);
  EXPECT_LT(check_graph([](const V& v) { return ops::matmul(v[0], v[1]); }, {a, b}), kTol);
  EXPECT_LT(check_graph([](const V& v) { return ops::transpose(v[0]); }, {a}), kTol);
  EXPECT_LT(check_graph([](const V& v) { return ops::linear(v[0], v[1], v[2]); }, {a, w, bias}), kTol);
  EXPECT_LT(check_graph([](const V& v) { return ops::softmax_rows(v[0]); }, {a}), kTol);
}

TEST(Ops, ShapeOpGradients) {
  std::mt19937_64 rng(3);
  auto a = random_tensor({2, 3, 2, 2}, rng), b = random_tensor({2, 1, 2, 2}, rng);
  EXPECT_LT(check_graph([](const V& v) { return ops::concat(v, 1); }, {a, b}), kTol);
  EXPECT_LT(check_graph([](const V& v) { return ops::select_batch(v[0], 1); }, {a}), kTol);
  EXPECT_LT(check_graph([](const V& v) { return ops::slice(v[0], 3, 5); }, {a}), kTol);
  EXPECT_LT(check_graph([](const V& v) { return ops::upsample_nearest2x(v[0]); }, {a}), kTol);
  EXPECT_LT(check_graph([](const V& v) { return ops::reshape(v[0], {6, 4}); }, {a}), kTol);
}

TEST(Ops, ConvGradients) {
  std::mt19937_64 rng(4);
  auto x = random_tensor({2, 3, 7, 6}, rng);
  for (int k : {1, 3}) {
    for (int stride : {1, 2}) {
      auto w = random_tensor({4, 3, k, k}, rng), b = random_tensor({4}, rng);
      const int pad = k / 2;
      EXPECT_LT(check_graph([&](const V& v) { return ops::conv2d(v[0], v[1], v[2], stride, pad); }, {x, w, b}), kTol)
          << "k=" << k << " stride=" << stride;
    }
  }
}

TEST(Ops, ConvMatchesDirectSum) {
  std::mt19937_64 rng(5);
  auto x = random_tensor({1, 2, 5, 5}, rng), w = random_tensor({3, 2, 3, 3}, rng);
  auto out = ops::conv2d<double>(constant(x), constant(w), nullptr, 2, 1)->value;
  ASSERT_EQ(out.shape(), (Shape{1, 3, 3, 3}));
  for (int o = 0; o < 3; ++o) {
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) {
        double s = 0.0;
        for (int c = 0; c < 2; ++c) {
          for (int ki = 0; ki < 3; ++ki) {
            for (int kj = 0; kj < 3; ++kj) {
              const int y = 2 * i - 1 + ki, xx = 2 * j - 1 + kj;
              if (y >= 0 && y < 5 && xx >= 0 && xx < 5) s += w.at(o, c, ki, kj) * x.at(0, c, y, xx);
            }
          }
        }
        EXPECT_NEAR(out.at(0, o, i, j), s, 1e-12);
      }
    }
  }
}

TEST(Ops, BatchNormGradientsBothModes) {
  std::mt19937_64 rng(6);
  auto x = random_tensor({3, 2, 3, 3}, rng);
  auto g = random_tensor({2}, rng, 0.5, 1.5), b = random_tensor({2}, rng);
  for (bool training : {true, false}) {
    ops::BatchNormStats<double> stats{Tensor<double>({2}, 0.1), Tensor<double>({2}, 2.0)};
    EXPECT_LT(check_graph([&](const V& v) { return ops::batch_norm2d(v[0], v[1], v[2], stats, training); }, {x, g, b}),
              1e-5)
        << "training=" << training;
  }
}

TEST(Ops, BatchNormNormalisesInTraining) {
  std::mt19937_64 rng(7);
  auto x = random_tensor({4, 1, 3, 3}, rng, 2.0, 5.0);
  ops::BatchNormStats<double> stats{Tensor<double>({1}), Tensor<double>({1}, 1.0)};
  auto out = ops::batch_norm2d<double>(constant(x), constant(Tensor<double>({1}, 1.0)),
                                       constant(Tensor<double>({1})), stats, true)
                 ->value;
  double m = out.sum() / static_cast<double>(out.size()), v = 0.0;
  for (double e : out.values()) v += (e - m) * (e - m);
  EXPECT_NEAR(m, 0.0, 1e-12);
  EXPECT_NEAR(v / static_cast<double>(out.size()), 1.0, 1e-3);
  EXPECT_GT(stats.mean[0], 0.1);
}

TEST(Ops, NoGradGuardSkipsRecording) {
  auto a = leaf(Tensor<double>({2}, 1.0));
  NoGradGuard guard;
  auto b = ops::scale(a, 2.0);
  EXPECT_FALSE(b->requires_grad);
  EXPECT_TRUE(b->inputs.empty());
}

TEST(Ops, SharedSubgraphAccumulates) {
  auto a = leaf(Tensor<double>({1}, 3.0));
  auto y = ops::mul(a, a);  // d(a^2)/da = 2a
  backward(ops::sum(ops::add(y, a)));
  EXPECT_DOUBLE_EQ(a->grad[0], 7.0);
}

}  // namespace
}  // namespace condlane

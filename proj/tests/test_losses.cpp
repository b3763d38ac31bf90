#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "condlane/losses.hpp"
#include "gradcheck.hpp"

namespace condlane {
namespace {

using testing::numeric_gradient;
using testing::random_tensor;
using testing::relative_error;

RowwiseTarget target_for(const std::vector<double>& loc) {
  RowwiseTarget t;
  t.loc = loc;
  t.valid.assign(loc.size(), 0);
  for (std::size_t i = 0; i < loc.size(); ++i) {
    if (std::isnan(loc[i])) continue;
    t.valid[i] = 1;
    if (t.v_min < 0) t.v_min = static_cast<int>(i);
    t.v_max = static_cast<int>(i);
  }
  return t;
}

TEST(Losses, RowLossExamples) {
  const double nan = std::nan("");
  const std::vector<double> exact{1.0, 2.0};
  EXPECT_DOUBLE_EQ(loss::row<double>(exact, target_for({1.0, 2.0})).value, 0.0);
  const std::vector<double> half{nan, 2.5, nan};
  EXPECT_DOUBLE_EQ(loss::row<double>(std::vector<double>{9.0, 3.0, 9.0}, target_for(half)).value, 0.5);
  EXPECT_DOUBLE_EQ(loss::row<double>(std::vector<double>{2.0, 2.0}, target_for({1.0, 2.0})).value, 0.5);
}

TEST(Losses, RowLossIgnoresInvalidRows) {
  const double nan = std::nan("");
  const auto t = target_for({nan, 1.0, 3.0, nan});
  const auto a = loss::row<double>(std::vector<double>{0.0, 1.5, 2.0, 0.0}, t);
  const auto b = loss::row<double>(std::vector<double>{7.0, 1.5, 2.0, -4.0}, t);
  EXPECT_DOUBLE_EQ(a.value, b.value);
  EXPECT_EQ(b.grad[0], 0.0);
  EXPECT_EQ(b.grad[3], 0.0);
}

TEST(Losses, RangeLossExamples) {
  Tensor<double> even({5, 2});
  std::vector<std::uint8_t> valid{1, 1, 0, 0, 1};
  EXPECT_NEAR(loss::range<double>(even, valid).value, 5 * std::numbers::ln2, 1e-12);
  Tensor<double> sharp({3, 2});
  std::vector<std::uint8_t> v3{1, 0, 1};
  for (int i = 0; i < 3; ++i) sharp.at(i, v3[i] ? 1 : 0) = 50.0;
  EXPECT_LT(loss::range<double>(sharp, v3).value, 1e-12);

  // Flipping one label changes the sum by |log v - log(1-v)|.
  Tensor<double> l({2, 2});
  l.at(0, 1) = 0.8;
  const double v = ops::sigmoid_value(0.8);
  std::vector<std::uint8_t> y0{1, 0}, y1{0, 0};
  EXPECT_NEAR(loss::range<double>(l, y1).value - loss::range<double>(l, y0).value,
              std::abs(std::log(v) - std::log(1 - v)), 1e-12);
}

TEST(Losses, OffsetLossExamples) {
  RowwiseTarget t;
  t.offset_map = Tensor<double>({2, 3}, 0.25);
  t.offset_mask = {1, 1, 0, 0, 1, 1};
  Tensor<double> pred({2, 3}, 0.25);
  EXPECT_DOUBLE_EQ(loss::offset<double>(pred, t).value, 0.0);
  Tensor<double> off({2, 3}, 0.5);
  off[2] = 17.0;  // outside the band
  const auto r = loss::offset<double>(off, t);
  EXPECT_DOUBLE_EQ(r.value, 0.25);
  EXPECT_EQ(r.grad[2], 0.0);
  EXPECT_EQ(r.grad[3], 0.0);
  t.offset_mask.assign(6, 0);
  EXPECT_EQ(loss::offset<double>(off, t).value, 0.0);
}

TEST(Losses, FocalExamples) {
  Tensor<double> label({1, 3});
  label[0] = 1.0;
  Tensor<double> pred({1, 3});
  pred[0] = 0.5;
  EXPECT_NEAR(loss::focal_point<double>(pred, label, 2, 4).value, 0.25 * std::numbers::ln2, 1e-12);
  EXPECT_NEAR(loss::focal_point<double>(pred, label, 2, 4).value, 0.1733, 5e-5);

  Tensor<double> neg_label({1, 1}, 0.5);
  Tensor<double> neg_pred({1, 1}, 0.3);
  // No positives, so the normaliser is 1.
  EXPECT_NEAR(loss::focal_point<double>(neg_pred, neg_label, 2, 4).value,
              std::pow(0.5, 4) * 0.09 * -std::log(0.7), 1e-12);

  Tensor<double> perfect({1, 3}, 1e-9);
  perfect[0] = 1 - 1e-9;
  EXPECT_LT(loss::focal_point<double>(perfect, label, 2, 4).value, 1e-12);
}

TEST(Losses, StateLossExamples) {
  Tensor<double> zero({4, 2});
  std::vector<int> labels{1, 0, 1, 1};
  EXPECT_NEAR(loss::rim_state<double>(zero, labels).value, std::numbers::ln2, 1e-12);
  Tensor<double> sure({2, 2});
  sure.at(0, 0) = 40;
  sure.at(1, 1) = 40;
  EXPECT_LT(loss::rim_state<double>(sure, std::vector<int>{1, 0}).value, 1e-12);

  // Permutation invariance
  std::mt19937_64 rng(4);
  auto l = random_tensor({3, 2}, rng);
  Tensor<double> p({3, 2});
  const int perm[3] = {2, 0, 1};
  std::vector<int> y{1, 0, 1}, yp(3);
  for (int i = 0; i < 3; ++i) {
    p.at(i, 0) = l.at(perm[i], 0);
    p.at(i, 1) = l.at(perm[i], 1);
    yp[i] = y[perm[i]];
  }
  EXPECT_NEAR(loss::rim_state<double>(l, y).value, loss::rim_state<double>(p, yp).value, 1e-12);
}

TEST(Losses, TotalLossWeights) {
  LossComponents ones{1, 1, 1, 1, 1};
  EXPECT_NEAR(total_loss(ones, LossWeights{}), 4.4, 1e-12);
  EXPECT_EQ(total_loss(LossComponents{}, LossWeights{}), 0.0);
  LossWeights no_offset;
  no_offset.gamma = 0.0;
  LossComponents big{0, 0, 0, 1e6, 0};
  EXPECT_EQ(total_loss(big, no_offset), 0.0);
  EXPECT_THROW((LossWeights{1, -1, 0, 0}.validate()), ConfigError);
}

// Every analytic gradient against central differences on random inputs.
TEST(Losses, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    const int rows = 3 + trial % 4, cols = 4 + trial % 3;
    std::vector<double> loc(static_cast<std::size_t>(rows), std::nan(""));
    for (int i = 1; i < rows; ++i) loc[i] = u(rng) * (cols - 1);
    auto t = target_for(loc);
    t.offset_map = random_tensor({rows, cols}, rng, 0.0, 1.0);
    t.offset_mask.resize(static_cast<std::size_t>(rows * cols));
    for (auto& m : t.offset_mask) m = u(rng) < 0.5;

    auto e = random_tensor({rows}, rng, 0.0, cols - 1.0);
    auto fe = [&] { return loss::row<double>(e.values(), t).value; };
    EXPECT_LT(relative_error(loss::row<double>(e.values(), t).grad, numeric_gradient(fe, e)), 1e-4);

    auto rl = random_tensor({rows, 2}, rng, -3, 3);
    auto fr = [&] { return loss::range<double>(rl, t.valid).value; };
    EXPECT_LT(relative_error(loss::range<double>(rl, t.valid).grad, numeric_gradient(fr, rl)), 1e-4);

    auto op = random_tensor({rows, cols}, rng, -1, 2);
    auto fo = [&] { return loss::offset<double>(op, t).value; };
    EXPECT_LT(relative_error(loss::offset<double>(op, t).grad, numeric_gradient(fo, op)), 1e-4);

    auto hp = random_tensor({rows, cols}, rng, 0.05, 0.95);
    auto hl = random_tensor({rows, cols}, rng, 0.0, 0.9);
    hl[0] = 1.0;
    auto ff = [&] { return loss::focal_point<double>(hp, hl, 2, 4).value; };
    EXPECT_LT(relative_error(loss::focal_point<double>(hp, hl, 2, 4).grad, numeric_gradient(ff, hp)), 1e-4);

    auto sl = random_tensor({rows, 2}, rng, -3, 3);
    std::vector<int> sy(static_cast<std::size_t>(rows));
    for (auto& y : sy) y = u(rng) < 0.5;
    auto fs = [&] { return loss::rim_state<double>(sl, sy).value; };
    EXPECT_LT(relative_error(loss::rim_state<double>(sl, sy).grad, numeric_gradient(fs, sl)), 1e-4);
  }
}

TEST(Losses, TapeWrapperScalesUpstream) {
  Tensor<double> zero({2, 2});
  auto x = leaf(zero);
  auto l = ops::scale(loss_ops::rim_state(x, std::vector<int>{1, 0}), 3.0);
  backward(l);
  const auto direct = loss::rim_state<double>(zero, std::vector<int>{1, 0});
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(x->grad[i], 3.0 * direct.grad[i], 1e-15);
}

}  // namespace
}  // namespace condlane

#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "condlane/ops.hpp"
#include "condlane/geometry.hpp"

namespace condlane {

struct LossWeights {
  double alpha = 1.0;  // row
  double beta = 1.0;   // range
  double gamma = 0.4;  // offset
  double eta = 1.0;    // state

  void validate() const {
    if (alpha < 0 || beta < 0 || gamma < 0 || eta < 0) throw ConfigError("loss weights must be >= 0");
  }
};

// Exponents of the heatmap focal loss (not the loss weights above).
struct FocalParams {
  double alpha_exp = 2.0;
  double beta_exp = 4.0;

  void validate() const {
    if (alpha_exp <= 0 || beta_exp <= 0) throw ConfigError("focal exponents must be > 0");
  }
};

struct LossComponents {
  double point = 0.0;
  double row = 0.0;
  double range = 0.0;
  double offset = 0.0;
  double state = 0.0;
};

inline double total_loss(const LossComponents& c, const LossWeights& w) {
  return c.point + w.alpha * c.row + w.beta * c.range + w.gamma * c.offset + w.eta * c.state;
}

template <typename T>
struct LossGrad {
  T value{0};
  Tensor<T> grad;
};

namespace loss {

inline constexpr double kLogEps = 1e-12;

template <typename T>
T safe_log(T v) {
  return std::log(std::max(v, static_cast<T>(kLogEps)));
}
// d/dv of safe_log
template <typename T>
T safe_log_grad(T v) {
  return v > static_cast<T>(kLogEps) ? T{1} / v : T{0};
}

// Mean L1 distance between expected and labelled abscissa over valid rows.
template <typename T>
LossGrad<T> row(std::span<const T> exp_loc, const RowwiseTarget& target) {
  LossGrad<T> out{T{0}, Tensor<T>({static_cast<int>(exp_loc.size())})};
  const int nv = target.valid_count();
  if (nv == 0) return out;
  for (std::size_t i = 0; i < exp_loc.size(); ++i) {
    if (!target.valid[i]) continue;
    const T d = exp_loc[i] - static_cast<T>(target.loc[i]);
    out.value += std::abs(d);
    out.grad[i] = (d > T{0} ? T{1} : (d < T{0} ? T{-1} : T{0})) / static_cast<T>(nv);
  }
  out.value /= static_cast<T>(nv);
  return out;
}

// Two-way softmax cross-entropy summed over rows. logits is rows x 2 with
// index 1 = "crossed".
template <typename T>
LossGrad<T> range(const Tensor<T>& logits, std::span<const std::uint8_t> valid) {
  const int rows = logits.dim(0);
  LossGrad<T> out{T{0}, Tensor<T>(logits.shape())};
  for (int i = 0; i < rows; ++i) {
    const T d = logits.at(i, 1) - logits.at(i, 0);
    const T v = ops::sigmoid_value(d);       // P(crossed)
    const T nv = ops::sigmoid_value(-d);     // 1 - v, computed stably
    const T y = valid[static_cast<std::size_t>(i)] ? T{1} : T{0};
    out.value += -y * safe_log(v) - (T{1} - y) * safe_log(nv);
    // dL/dv * dv/dd with dv/dd = v(1-v), d(1-v)/dd = -v(1-v)
    const T g = (-y * safe_log_grad(v) + (T{1} - y) * safe_log_grad(nv)) * v * nv;
    out.grad.at(i, 1) = g;
    out.grad.at(i, 0) = -g;
  }
  return out;
}

// Mean L1 offset error inside the supervised band.
template <typename T>
LossGrad<T> offset(const Tensor<T>& pred, const RowwiseTarget& target) {
  LossGrad<T> out{T{0}, Tensor<T>(pred.shape())};
  const std::size_t n = target.mask_count();
  if (n == 0) return out;
  for (std::size_t k = 0; k < pred.size(); ++k) {
    if (!target.offset_mask[k]) continue;
    const T d = pred[k] - static_cast<T>(target.offset_map[k]);
    out.value += std::abs(d);
    out.grad[k] = (d > T{0} ? T{1} : (d < T{0} ? T{-1} : T{0})) / static_cast<T>(n);
  }
  out.value /= static_cast<T>(n);
  return out;
}

// Penalty-reduced focal loss over a probability heatmap. Cells with label
// exactly 1 are positives; the normaliser is their count (1 when none).
template <typename T>
LossGrad<T> focal_point(const Tensor<T>& pred, const Tensor<double>& label, double alpha, double beta) {
  if (pred.size() != label.size()) throw ShapeError("focal_point: prediction/label size mismatch");
  LossGrad<T> out{T{0}, Tensor<T>(pred.shape())};
  std::size_t np = 0;
  for (double v : label.values()) np += v >= 1.0 ? 1 : 0;
  const T norm = static_cast<T>(np == 0 ? 1 : np);
  const T a = static_cast<T>(alpha);
  for (std::size_t k = 0; k < pred.size(); ++k) {
    const T p = pred[k];
    T term, dterm;
    if (label[k] >= 1.0) {
      const T q = T{1} - p;
      term = std::pow(q, a) * safe_log(p);
      dterm = -a * std::pow(q, a - T{1}) * safe_log(p) + std::pow(q, a) * safe_log_grad(p);
    } else {
      const T w = static_cast<T>(std::pow(1.0 - label[k], beta));
      const T q = T{1} - p;
      term = w * std::pow(p, a) * safe_log(q);
      dterm = w * (a * std::pow(p, a - T{1}) * safe_log(q) - std::pow(p, a) * safe_log_grad(q));
    }
    out.value -= term / norm;
    out.grad[k] = -dterm / norm;
  }
  return out;
}

// Mean binary cross-entropy of the softmaxed "continue" probability over all
// state outputs. logits is N x 2 (index 0 = continue, 1 = stop); label 1
// means continue.
template <typename T>
LossGrad<T> rim_state(const Tensor<T>& logits, std::span<const int> labels) {
  const int n = logits.size() == 0 ? 0 : logits.dim(0);
  LossGrad<T> out{T{0}, Tensor<T>(logits.shape())};
  if (n == 0) return out;
  if (static_cast<int>(labels.size()) != n) throw ShapeError("rim_state: label count mismatch");
  for (int i = 0; i < n; ++i) {
    const T d = logits.at(i, 0) - logits.at(i, 1);
    const T s = ops::sigmoid_value(d);
    const T ns = ops::sigmoid_value(-d);
    const T y = labels[static_cast<std::size_t>(i)] ? T{1} : T{0};
    out.value += (-y * safe_log(s) - (T{1} - y) * safe_log(ns)) / static_cast<T>(n);
    const T g = (-y * safe_log_grad(s) + (T{1} - y) * safe_log_grad(ns)) * s * ns / static_cast<T>(n);
    out.grad.at(i, 0) = g;
    out.grad.at(i, 1) = -g;
  }
  return out;
}

}  // namespace loss

// Tape wrappers: the forward value comes from the pure functions above and
// the stored gradient is replayed (scaled by the upstream gradient).
namespace loss_ops {

template <typename T>
Var<T> from_loss_grad(const Var<T>& input, LossGrad<T> lg) {
  Tensor<T> v(Shape{});
  v[0] = lg.value;
  return make_result<T>(std::move(v), {input}, [g = std::move(lg.grad)](Node<T>& self) {
    auto& buf = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < buf.size(); ++i) buf[i] += self.grad[0] * g[i];
  });
}

template <typename T>
Var<T> row(const Var<T>& exp_loc, const RowwiseTarget& t) {
  return from_loss_grad(exp_loc, loss::row<T>(exp_loc->value.values(), t));
}
template <typename T>
Var<T> range(const Var<T>& logits, const RowwiseTarget& t) {
  return from_loss_grad(logits, loss::range<T>(logits->value, t.valid));
}
template <typename T>
Var<T> offset(const Var<T>& pred, const RowwiseTarget& t) {
  return from_loss_grad(pred, loss::offset<T>(pred->value, t));
}
template <typename T>
Var<T> focal_point(const Var<T>& pred, const Tensor<double>& label, const FocalParams& fp) {
  return from_loss_grad(pred, loss::focal_point<T>(pred->value, label, fp.alpha_exp, fp.beta_exp));
}
template <typename T>
Var<T> rim_state(const Var<T>& logits, const std::vector<int>& labels) {
  return from_loss_grad(logits, loss::rim_state<T>(logits->value, labels));
}

}  // namespace loss_ops

}  // namespace condlane

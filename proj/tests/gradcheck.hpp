#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>

#include "condlane/autograd.hpp"

namespace condlane::testing {

// Central finite differences of a scalar function of `x`.
inline Tensor<double> numeric_gradient(const std::function<double()>& f, Tensor<double>& x, double h = 1e-6) {
  Tensor<double> g(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = x[i];
    x[i] = orig + h;
    const double up = f();
    x[i] = orig - h;
    const double down = f();
    x[i] = orig;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

// ||a - b|| / max(||a||, ||b||); 0 when both vanish.
inline double relative_error(const Tensor<double>& a, const Tensor<double>& b) {
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double denom = std::sqrt(std::max(na, nb));
  return denom < 1e-14 ? std::sqrt(diff) : std::sqrt(diff) / denom;
}

inline Tensor<double> random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<double> t(std::move(shape));
  std::uniform_real_distribution<double> d(lo, hi);
  for (auto& v : t.values()) v = d(rng);
  return t;
}

// Projects a tensor-valued graph onto a random direction so every output
// element contributes to the checked scalar.
inline Var<double> random_projection(const Var<double>& out, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Tensor<double> w = random_tensor(out->value.shape(), rng);
  double s = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) s += w[i] * out->value[i];
  Tensor<double> v(Shape{});
  v[0] = s;
  return make_result<double>(std::move(v), {out}, [w](Node<double>& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += w[i] * self.grad[0];
  });
}

// Checks d(projection of build(inputs))/d(input k) against finite differences
// for every input; returns the worst relative error.
inline double check_graph(const std::function<Var<double>(const std::vector<Var<double>>&)>& build,
                          std::vector<Tensor<double>> inputs, std::uint64_t seed = 7) {
  std::vector<Var<double>> leaves;
  for (auto& t : inputs) leaves.push_back(leaf(t));
  auto out = random_projection(build(leaves), seed);
  backward(out);
  double worst = 0.0;
  for (std::size_t k = 0; k < leaves.size(); ++k) {
    auto f = [&]() {
      std::vector<Var<double>> ls;
      for (auto& t : inputs) ls.push_back(constant(t));
      NoGradGuard ng;
      return random_projection(build(ls), seed)->value[0];
    };
    Tensor<double> num = numeric_gradient(f, inputs[k]);
    Tensor<double> ana = leaves[k]->has_grad() ? leaves[k]->grad : Tensor<double>(inputs[k].shape());
    worst = std::max(worst, relative_error(ana, num));
  }
  return worst;
}

}  // namespace condlane::testing

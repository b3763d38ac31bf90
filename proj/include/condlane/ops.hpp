#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <vector>

#include "condlane/autograd.hpp"

namespace condlane::ops {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMatrix<T>>;

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  a->value.check_same(b->value);
  Tensor<T> out = a->value;
  out += b->value;
  return make_result<T>(std::move(out), {a, b}, [](Node<T>& self) {
    for (auto& in : self.inputs) {
      if (in->requires_grad) in->grad_buffer() += self.grad;
    }
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  a->value.check_same(b->value);
  Tensor<T> out = a->value;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b->value[i];
  return make_result<T>(std::move(out), {a, b}, [](Node<T>& self) {
    if (self.inputs[0]->requires_grad) self.inputs[0]->grad_buffer() += self.grad;
    if (self.inputs[1]->requires_grad) {
      auto& g = self.inputs[1]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  a->value.check_same(b->value);
  Tensor<T> out = a->value;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b->value[i];
  return make_result<T>(std::move(out), {a, b}, [](Node<T>& self) {
    auto& x = self.inputs[0];
    auto& y = self.inputs[1];
    if (x->requires_grad) {
      auto& g = x->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * y->value[i];
    }
    if (y->requires_grad) {
      auto& g = y->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * x->value[i];
    }
  });
}

template <typename T>
Var<T> scale(const Var<T>& a, T s) {
  Tensor<T> out = a->value;
  out *= s;
  return make_result<T>(std::move(out), {a}, [s](Node<T>& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += s * self.grad[i];
  });
}

// Generic unary op given f(x) and f'(x, f(x)).
template <typename T, typename F, typename DF>
Var<T> unary(const Var<T>& a, F f, DF df) {
  Tensor<T> out(a->value.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(a->value[i]);
  return make_result<T>(std::move(out), {a}, [df](Node<T>& self) {
    auto& in = self.inputs[0];
    auto& g = in->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * df(in->value[i], self.value[i]);
  });
}

template <typename T>
Var<T> relu(const Var<T>& a) {
  return unary(
      a, [](T x) { return x > T{0} ? x : T{0}; }, [](T x, T) { return x > T{0} ? T{1} : T{0}; });
}

template <typename T>
T sigmoid_value(T x) {
  return x >= T{0} ? T{1} / (T{1} + std::exp(-x)) : std::exp(x) / (T{1} + std::exp(x));
}

template <typename T>
Var<T> sigmoid(const Var<T>& a) {
  return unary(
      a, [](T x) { return sigmoid_value(x); }, [](T, T y) { return y * (T{1} - y); });
}

// Sigmoid clamped to [lo, hi]; zero gradient where clamped.
template <typename T>
Var<T> clamped_sigmoid(const Var<T>& a, T lo, T hi) {
  return unary(
      a, [lo, hi](T x) { return std::clamp(sigmoid_value(x), lo, hi); },
      [lo, hi](T, T y) { return (y > lo && y < hi) ? y * (T{1} - y) : T{0}; });
}

template <typename T>
Var<T> tanh(const Var<T>& a) {
  return unary(
      a, [](T x) { return std::tanh(x); }, [](T, T y) { return T{1} - y * y; });
}

template <typename T>
Var<T> reshape(const Var<T>& a, Shape shape) {
  Tensor<T> out = a->value.reshaped(std::move(shape));
  return make_result<T>(std::move(out), {a}, [](Node<T>& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

// Contiguous 1-D slice [begin, begin+len) of the flattened tensor.
template <typename T>
Var<T> slice(const Var<T>& a, std::size_t begin, std::size_t len) {
  if (begin + len > a->value.size()) throw ShapeError("slice out of range");
  Tensor<T> out(Shape{static_cast<int>(len)});
  std::copy_n(a->value.data() + begin, len, out.data());
  return make_result<T>(std::move(out), {a}, [begin, len](Node<T>& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < len; ++i) g[begin + i] += self.grad[i];
  });
}

// Concatenates along `axis`; all other dims must agree.
template <typename T>
Var<T> concat(const std::vector<Var<T>>& parts, int axis) {
  if (parts.empty()) throw ShapeError("concat of nothing");
  Shape shape = parts[0]->value.shape();
  const auto ax = static_cast<std::size_t>(axis);
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < ax; ++i) outer *= static_cast<std::size_t>(shape[i]);
  for (std::size_t i = ax + 1; i < shape.size(); ++i) inner *= static_cast<std::size_t>(shape[i]);
  int total = 0;
  std::vector<std::size_t> widths;
  for (const auto& p : parts) {
    Shape s = p->value.shape();
    if (s.size() != shape.size()) throw ShapeError("concat rank mismatch");
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (i != ax && s[i] != shape[i]) throw ShapeError("concat dim mismatch " + shape_str(s));
    }
    total += s[ax];
    widths.push_back(static_cast<std::size_t>(s[ax]) * inner);
  }
  shape[ax] = total;
  Tensor<T> out(shape);
  const std::size_t row = static_cast<std::size_t>(total) * inner;
  std::size_t col = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const T* src = parts[k]->value.data();
    for (std::size_t o = 0; o < outer; ++o) std::copy_n(src + o * widths[k], widths[k], out.data() + o * row + col);
    col += widths[k];
  }
  return make_result<T>(std::move(out), parts, [outer, row, widths](Node<T>& self) {
    std::size_t c = 0;
    for (std::size_t k = 0; k < self.inputs.size(); ++k) {
      auto& in = self.inputs[k];
      if (in->requires_grad) {
        auto& g = in->grad_buffer();
        for (std::size_t o = 0; o < outer; ++o) {
          for (std::size_t i = 0; i < widths[k]; ++i) g[o * widths[k] + i] += self.grad[o * row + c + i];
        }
      }
      c += widths[k];
    }
  });
}

// x[N, ...] -> x[n:n+1, ...]
template <typename T>
Var<T> select_batch(const Var<T>& x, int n) {
  Shape shape = x->value.shape();
  if (n < 0 || n >= shape[0]) throw ShapeError("batch index out of range");
  const std::size_t per = x->value.size() / static_cast<std::size_t>(shape[0]);
  shape[0] = 1;
  Tensor<T> out(shape);
  std::copy_n(x->value.data() + per * static_cast<std::size_t>(n), per, out.data());
  return make_result<T>(std::move(out), {x}, [per, n](Node<T>& self) {
    auto& g = self.inputs[0]->grad_buffer();
    T* dst = g.data() + per * static_cast<std::size_t>(n);
    for (std::size_t i = 0; i < per; ++i) dst[i] += self.grad[i];
  });
}

// a[M,K] * b[K,N]
template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  const auto& av = a->value;
  const auto& bv = b->value;
  if (av.rank() != 2 || bv.rank() != 2 || av.dim(1) != bv.dim(0)) {
    throw ShapeError("matmul " + shape_str(av.shape()) + " x " + shape_str(bv.shape()));
  }
  const int m = av.dim(0), k = av.dim(1), n = bv.dim(1);
  Tensor<T> out(Shape{m, n});
  MatMap<T>(out.data(), m, n).noalias() = ConstMatMap<T>(av.data(), m, k) * ConstMatMap<T>(bv.data(), k, n);
  return make_result<T>(std::move(out), {a, b}, [m, k, n](Node<T>& self) {
    auto& x = self.inputs[0];
    auto& y = self.inputs[1];
    ConstMatMap<T> g(self.grad.data(), m, n);
    if (x->requires_grad) {
      MatMap<T>(x->grad_buffer().data(), m, k).noalias() += g * ConstMatMap<T>(y->value.data(), k, n).transpose();
    }
    if (y->requires_grad) {
      MatMap<T>(y->grad_buffer().data(), k, n).noalias() += ConstMatMap<T>(x->value.data(), m, k).transpose() * g;
    }
  });
}

template <typename T>
Var<T> transpose(const Var<T>& a) {
  const int m = a->value.dim(0), n = a->value.dim(1);
  Tensor<T> out(Shape{n, m});
  MatMap<T>(out.data(), n, m) = ConstMatMap<T>(a->value.data(), m, n).transpose();
  return make_result<T>(std::move(out), {a}, [m, n](Node<T>& self) {
    MatMap<T>(self.inputs[0]->grad_buffer().data(), m, n) += ConstMatMap<T>(self.grad.data(), n, m).transpose();
  });
}

// x[M,In] W[Out,In] b[Out] -> [M,Out]
template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& b) {
  const auto& xv = x->value;
  const int in = w->value.dim(1), outd = w->value.dim(0);
  if (xv.size() % static_cast<std::size_t>(in) != 0) throw ShapeError("linear input width mismatch");
  const int m = static_cast<int>(xv.size() / static_cast<std::size_t>(in));
  Tensor<T> out(Shape{m, outd});
  MatMap<T> o(out.data(), m, outd);
  o.noalias() = ConstMatMap<T>(xv.data(), m, in) * ConstMatMap<T>(w->value.data(), outd, in).transpose();
  o.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(b->value.data(), outd);
  return make_result<T>(std::move(out), {x, w, b}, [m, in, outd](Node<T>& self) {
    ConstMatMap<T> g(self.grad.data(), m, outd);
    auto& xi = self.inputs[0];
    auto& wi = self.inputs[1];
    auto& bi = self.inputs[2];
    if (xi->requires_grad) {
      MatMap<T>(xi->grad_buffer().data(), m, in).noalias() += g * ConstMatMap<T>(wi->value.data(), outd, in);
    }
    if (wi->requires_grad) {
      MatMap<T>(wi->grad_buffer().data(), outd, in).noalias() +=
          g.transpose() * ConstMatMap<T>(xi->value.data(), m, in);
    }
    if (bi->requires_grad) {
      Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>(bi->grad_buffer().data(), outd) += g.colwise().sum();
    }
  });
}

// Row-wise softmax of a[M,N].
template <typename T>
Tensor<T> softmax_rows_value(const Tensor<T>& a) {
  const int m = a.dim(0), n = a.dim(1);
  Tensor<T> out(a.shape());
  for (int i = 0; i < m; ++i) {
    const T* r = a.data() + static_cast<std::size_t>(i) * n;
    T* o = out.data() + static_cast<std::size_t>(i) * n;
    const T mx = *std::max_element(r, r + n);
    T s{0};
    for (int j = 0; j < n; ++j) s += (o[j] = std::exp(r[j] - mx));
    for (int j = 0; j < n; ++j) o[j] /= s;
  }
  return out;
}

template <typename T>
Var<T> softmax_rows(const Var<T>& a) {
  const int m = a->value.dim(0), n = a->value.dim(1);
  return make_result<T>(softmax_rows_value(a->value), {a}, [m, n](Node<T>& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (int i = 0; i < m; ++i) {
      const std::size_t off = static_cast<std::size_t>(i) * n;
      T dot{0};
      for (int j = 0; j < n; ++j) dot += self.grad[off + j] * self.value[off + j];
      for (int j = 0; j < n; ++j) g[off + j] += self.value[off + j] * (self.grad[off + j] - dot);
    }
  });
}

// Sum of all elements -> scalar.
template <typename T>
Var<T> sum(const Var<T>& a) {
  Tensor<T> out(Shape{});
  out[0] = a->value.sum();
  return make_result<T>(std::move(out), {a}, [](Node<T>& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (auto& v : g.values()) v += self.grad[0];
  });
}

// Σ w_k * s_k over scalar nodes.
template <typename T>
Var<T> weighted_sum(const std::vector<Var<T>>& scalars, const std::vector<T>& weights) {
  if (scalars.size() != weights.size()) throw ShapeError("weighted_sum arity mismatch");
  Tensor<T> out(Shape{});
  for (std::size_t k = 0; k < scalars.size(); ++k) {
    if (scalars[k]->value.size() != 1) throw ShapeError("weighted_sum expects scalars");
    out[0] += weights[k] * scalars[k]->value[0];
  }
  return make_result<T>(std::move(out), scalars, [weights](Node<T>& self) {
    for (std::size_t k = 0; k < self.inputs.size(); ++k) {
      if (self.inputs[k]->requires_grad) self.inputs[k]->grad_buffer()[0] += weights[k] * self.grad[0];
    }
  });
}

template <typename T>
Var<T> mean(const std::vector<Var<T>>& scalars) {
  if (scalars.empty()) return constant(Tensor<T>(Shape{}));
  return weighted_sum(scalars, std::vector<T>(scalars.size(), T{1} / static_cast<T>(scalars.size())));
}

}  // namespace condlane::ops

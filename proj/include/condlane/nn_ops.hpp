#pragma once

#include <cmath>
#include <vector>

#include "condlane/ops.hpp"

namespace condlane::ops {

struct ConvGeometry {
  int channels, height, width, kernel, stride, pad;
  int out_height() const { return (height + 2 * pad - kernel) / stride + 1; }
  int out_width() const { return (width + 2 * pad - kernel) / stride + 1; }
  bool is_pointwise() const { return kernel == 1 && stride == 1 && pad == 0; }
};

namespace detail {

template <typename T>
void im2col(const T* x, const ConvGeometry& g, T* cols) {
  const int oh = g.out_height(), ow = g.out_width();
  for (int c = 0; c < g.channels; ++c) {
    const T* plane = x + static_cast<std::size_t>(c) * g.height * g.width;
    for (int ki = 0; ki < g.kernel; ++ki) {
      for (int kj = 0; kj < g.kernel; ++kj) {
        T* dst = cols + (static_cast<std::size_t>(c) * g.kernel * g.kernel + ki * g.kernel + kj) * oh * ow;
        for (int i = 0; i < oh; ++i) {
          const int y = i * g.stride - g.pad + ki;
          T* row = dst + static_cast<std::size_t>(i) * ow;
          if (y < 0 || y >= g.height) {
            std::fill(row, row + ow, T{0});
            continue;
          }
          const T* src = plane + static_cast<std::size_t>(y) * g.width;
          for (int j = 0; j < ow; ++j) {
            const int xx = j * g.stride - g.pad + kj;
            row[j] = (xx >= 0 && xx < g.width) ? src[xx] : T{0};
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* cols, const ConvGeometry& g, T* x) {
  const int oh = g.out_height(), ow = g.out_width();
  for (int c = 0; c < g.channels; ++c) {
    T* plane = x + static_cast<std::size_t>(c) * g.height * g.width;
    for (int ki = 0; ki < g.kernel; ++ki) {
      for (int kj = 0; kj < g.kernel; ++kj) {
        const T* src = cols + (static_cast<std::size_t>(c) * g.kernel * g.kernel + ki * g.kernel + kj) * oh * ow;
        for (int i = 0; i < oh; ++i) {
          const int y = i * g.stride - g.pad + ki;
          if (y < 0 || y >= g.height) continue;
          T* row = plane + static_cast<std::size_t>(y) * g.width;
          const T* s = src + static_cast<std::size_t>(i) * ow;
          for (int j = 0; j < ow; ++j) {
            const int xx = j * g.stride - g.pad + kj;
            if (xx >= 0 && xx < g.width) row[xx] += s[j];
          }
        }
      }
    }
  }
}

}  // namespace detail

// x[N,Cin,H,W], w[Cout,Cin,k,k], optional b[Cout] -> [N,Cout,Ho,Wo]
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& b, int stride, int pad) {
  const auto& xv = x->value;
  const auto& wv = w->value;
  if (xv.rank() != 4 || wv.rank() != 4 || wv.dim(1) != xv.dim(1) || wv.dim(2) != wv.dim(3)) {
    throw ShapeError("conv2d input " + shape_str(xv.shape()) + " weight " + shape_str(wv.shape()));
  }
  const ConvGeometry g{xv.dim(1), xv.dim(2), xv.dim(3), wv.dim(2), stride, pad};
  const int n = xv.dim(0), cout = wv.dim(0);
  const int oh = g.out_height(), ow = g.out_width();
  if (oh <= 0 || ow <= 0) throw ShapeError("conv2d output would be empty");
  const int ckk = g.channels * g.kernel * g.kernel;
  const int hw = oh * ow;
  const std::size_t in_per = static_cast<std::size_t>(g.channels) * g.height * g.width;
  const std::size_t out_per = static_cast<std::size_t>(cout) * hw;

  Tensor<T> out(Shape{n, cout, oh, ow});
  std::vector<T> cols(g.is_pointwise() ? 0 : static_cast<std::size_t>(ckk) * hw);
  ConstMatMap<T> wm(wv.data(), cout, ckk);
  for (int s = 0; s < n; ++s) {
    const T* src = xv.data() + in_per * s;
    if (!g.is_pointwise()) {
      detail::im2col(src, g, cols.data());
      src = cols.data();
    }
    MatMap<T> o(out.data() + out_per * s, cout, hw);
    o.noalias() = wm * ConstMatMap<T>(src, ckk, hw);
    if (b) o.colwise() += Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>(b->value.data(), cout);
  }

  std::vector<Var<T>> inputs{x, w};
  if (b) inputs.push_back(b);
  return make_result<T>(std::move(out), std::move(inputs), [g, n, cout, ckk, hw, in_per, out_per](Node<T>& self) {
    auto& xi = self.inputs[0];
    auto& wi = self.inputs[1];
    const bool has_bias = self.inputs.size() > 2;
    std::vector<T> cols(g.is_pointwise() ? 0 : static_cast<std::size_t>(ckk) * hw);
    std::vector<T> dcols(static_cast<std::size_t>(ckk) * hw);
    ConstMatMap<T> wm(wi->value.data(), cout, ckk);
    for (int s = 0; s < n; ++s) {
      ConstMatMap<T> go(self.grad.data() + out_per * s, cout, hw);
      if (wi->requires_grad) {
        const T* src = xi->value.data() + in_per * s;
        if (!g.is_pointwise()) {
          detail::im2col(src, g, cols.data());
          src = cols.data();
        }
        MatMap<T>(wi->grad_buffer().data(), cout, ckk).noalias() += go * ConstMatMap<T>(src, ckk, hw).transpose();
      }
      if (has_bias && self.inputs[2]->requires_grad) {
        Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>>(self.inputs[2]->grad_buffer().data(), cout) +=
            go.rowwise().sum();
      }
      if (xi->requires_grad) {
        T* dx = xi->grad_buffer().data() + in_per * s;
        if (g.is_pointwise()) {
          MatMap<T>(dx, ckk, hw).noalias() += wm.transpose() * go;
        } else {
          MatMap<T>(dcols.data(), ckk, hw).noalias() = wm.transpose() * go;
          detail::col2im_add(dcols.data(), g, dx);
        }
      }
    }
  });
}

// Running statistics owned by a batch-norm layer.
template <typename T>
struct BatchNormStats {
  Tensor<T> mean;
  Tensor<T> var;
};

// Batch normalization over (N,H,W) per channel. In training mode batch
// statistics are used and the running stats are updated in place.
template <typename T>
Var<T> batch_norm2d(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, BatchNormStats<T>& stats,
                    bool training, T momentum = T(0.1), T eps = T(1e-5)) {
  const auto& xv = x->value;
  if (xv.rank() != 4 || gamma->value.size() != static_cast<std::size_t>(xv.dim(1))) {
    throw ShapeError("batch_norm2d input " + shape_str(xv.shape()));
  }
  const int n = xv.dim(0), c = xv.dim(1);
  const std::size_t hw = static_cast<std::size_t>(xv.dim(2)) * xv.dim(3);
  const std::size_t count = hw * n;
  std::vector<T> mean(c), inv_std(c);
  if (training) {
    for (int ch = 0; ch < c; ++ch) {
      T s{0};
      for (int b = 0; b < n; ++b) {
        const T* p = xv.data() + (static_cast<std::size_t>(b) * c + ch) * hw;
        for (std::size_t i = 0; i < hw; ++i) s += p[i];
      }
      const T mu = s / static_cast<T>(count);
      T v{0};
      for (int b = 0; b < n; ++b) {
        const T* p = xv.data() + (static_cast<std::size_t>(b) * c + ch) * hw;
        for (std::size_t i = 0; i < hw; ++i) v += (p[i] - mu) * (p[i] - mu);
      }
      const T var = v / static_cast<T>(count);
      mean[ch] = mu;
      inv_std[ch] = T{1} / std::sqrt(var + eps);
      const T unbiased = count > 1 ? v / static_cast<T>(count - 1) : var;
      stats.mean[ch] = (T{1} - momentum) * stats.mean[ch] + momentum * mu;
      stats.var[ch] = (T{1} - momentum) * stats.var[ch] + momentum * unbiased;
    }
  } else {
    for (int ch = 0; ch < c; ++ch) {
      mean[ch] = stats.mean[ch];
      inv_std[ch] = T{1} / std::sqrt(stats.var[ch] + eps);
    }
  }
  Tensor<T> out(xv.shape());
  Tensor<T> xhat(xv.shape());
  for (int b = 0; b < n; ++b) {
    for (int ch = 0; ch < c; ++ch) {
      const std::size_t off = (static_cast<std::size_t>(b) * c + ch) * hw;
      const T gm = gamma->value[ch], bt = beta->value[ch];
      for (std::size_t i = 0; i < hw; ++i) {
        const T h = (xv[off + i] - mean[ch]) * inv_std[ch];
        xhat[off + i] = h;
        out[off + i] = gm * h + bt;
      }
    }
  }
  return make_result<T>(
      std::move(out), {x, gamma, beta},
      [xhat = std::move(xhat), inv_std, n, c, hw, count, training](Node<T>& self) {
        auto& xi = self.inputs[0];
        auto& gi = self.inputs[1];
        auto& bi = self.inputs[2];
        for (int ch = 0; ch < c; ++ch) {
          T dg{0}, db{0};
          for (int b = 0; b < n; ++b) {
            const std::size_t off = (static_cast<std::size_t>(b) * c + ch) * hw;
            for (std::size_t i = 0; i < hw; ++i) {
              dg += self.grad[off + i] * xhat[off + i];
              db += self.grad[off + i];
            }
          }
          if (gi->requires_grad) gi->grad_buffer()[ch] += dg;
          if (bi->requires_grad) bi->grad_buffer()[ch] += db;
          if (!xi->requires_grad) continue;
          auto& gx = xi->grad_buffer();
          const T gm = gi->value[ch];
          const T m = static_cast<T>(count);
          for (int b = 0; b < n; ++b) {
            const std::size_t off = (static_cast<std::size_t>(b) * c + ch) * hw;
            for (std::size_t i = 0; i < hw; ++i) {
              if (training) {
                gx[off + i] += gm * inv_std[ch] / m * (m * self.grad[off + i] - db - xhat[off + i] * dg);
              } else {
                gx[off + i] += gm * inv_std[ch] * self.grad[off + i];
              }
            }
          }
        }
      });
}

// Nearest-neighbour 2x upsampling of [N,C,H,W].
template <typename T>
Var<T> upsample_nearest2x(const Var<T>& x) {
  const auto& xv = x->value;
  const int n = xv.dim(0), c = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  Tensor<T> out(Shape{n, c, 2 * h, 2 * w});
  const std::size_t planes = static_cast<std::size_t>(n) * c;
  for (std::size_t p = 0; p < planes; ++p) {
    const T* src = xv.data() + p * h * w;
    T* dst = out.data() + p * 4 * h * w;
    for (int i = 0; i < 2 * h; ++i) {
      for (int j = 0; j < 2 * w; ++j) dst[static_cast<std::size_t>(i) * 2 * w + j] = src[(i / 2) * w + j / 2];
    }
  }
  return make_result<T>(std::move(out), {x}, [planes, h, w](Node<T>& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (std::size_t p = 0; p < planes; ++p) {
      T* dst = g.data() + p * h * w;
      const T* src = self.grad.data() + p * 4 * h * w;
      for (int i = 0; i < 2 * h; ++i) {
        for (int j = 0; j < 2 * w; ++j) dst[(i / 2) * w + j / 2] += src[static_cast<std::size_t>(i) * 2 * w + j];
      }
    }
  });
}

// Adds a constant tensor broadcast over the batch: x[N,...] + c[1,...].
template <typename T>
Var<T> add_broadcast_batch(const Var<T>& x, const Tensor<T>& c) {
  const std::size_t per = c.size();
  if (x->value.size() % per != 0) throw ShapeError("broadcast add mismatch");
  Tensor<T> out = x->value;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += c[i % per];
  return make_result<T>(std::move(out), {x}, [](Node<T>& self) { self.inputs[0]->grad_buffer() += self.grad; });
}

}  // namespace condlane::ops

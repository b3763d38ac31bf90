#pragma once

#include <memory>
#include <random>
#include <string>

#include "condlane/params.hpp"

namespace condlane::nn {

template <typename T>
struct Conv2d {
  Var<T> weight, bias;
  int stride = 1, pad = 0;

  Conv2d() = default;
  Conv2d(ParamStore<T>& store, const std::string& name, int in, int out, int kernel, int stride_, bool with_bias,
         std::mt19937_64& rng, double init_std = 0.0)
      : stride(stride_), pad(kernel / 2) {
    const int fan_in = in * kernel * kernel;
    weight = store.add_param(name + ".weight", init_std > 0.0
                                                   ? normal_init<T>({out, in, kernel, kernel}, init_std, rng)
                                                   : kaiming_normal<T>({out, in, kernel, kernel}, fan_in, rng));
    if (with_bias) bias = store.add_param(name + ".bias", Tensor<T>({out}));
  }

  Var<T> operator()(const Var<T>& x) const { return ops::conv2d(x, weight, bias, stride, pad); }
  int out_channels() const { return weight->value.dim(0); }
};

template <typename T>
struct BatchNorm2d {
  Var<T> gamma, beta;
  // Heap-allocated so the store's buffer pointers survive moves.
  std::unique_ptr<ops::BatchNormStats<T>> stats;

  BatchNorm2d() = default;
  BatchNorm2d(ParamStore<T>& store, const std::string& name, int channels)
      : stats(std::make_unique<ops::BatchNormStats<T>>()) {
    gamma = store.add_param(name + ".gamma", Tensor<T>({channels}, T{1}));
    beta = store.add_param(name + ".beta", Tensor<T>({channels}));
    stats->mean = Tensor<T>({channels});
    stats->var = Tensor<T>({channels}, T{1});
    store.add_buffer(name + ".running_mean", &stats->mean);
    store.add_buffer(name + ".running_var", &stats->var);
  }

  Var<T> operator()(const Var<T>& x, bool training) const {
    return ops::batch_norm2d(x, gamma, beta, *stats, training);
  }
};

// conv -> bn -> optional relu
template <typename T>
struct ConvBn {
  Conv2d<T> conv;
  BatchNorm2d<T> bn;
  bool relu = true;

  ConvBn() = default;
  ConvBn(ParamStore<T>& store, const std::string& name, int in, int out, int kernel, int stride, bool relu_,
         std::mt19937_64& rng)
      : conv(store, name + ".conv", in, out, kernel, stride, false, rng),
        bn(store, name + ".bn", out),
        relu(relu_) {}

  Var<T> operator()(const Var<T>& x, bool training) const {
    auto y = bn(conv(x), training);
    return relu ? ops::relu(y) : y;
  }
};

template <typename T>
struct Linear {
  Var<T> weight, bias;

  Linear() = default;
  Linear(ParamStore<T>& store, const std::string& name, int in, int out, std::mt19937_64& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    weight = store.add_param(name + ".weight", uniform_init<T>({out, in}, bound, rng));
    bias = store.add_param(name + ".bias", uniform_init<T>({out}, bound, rng));
  }

  // x is treated as rows of width `in`.
  Var<T> operator()(const Var<T>& x) const { return ops::linear(x, weight, bias); }
  int in_features() const { return weight->value.dim(1); }
  int out_features() const { return weight->value.dim(0); }
};

}  // namespace condlane::nn

#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <string>

#include "condlane/nn_ops.hpp"

namespace condlane {

// Named trainable parameters plus non-trainable buffers (batch-norm stats).
// Ordered maps keep iteration (and therefore checkpoints) deterministic.
template <typename T>
class ParamStore {
 public:
  Var<T> add_param(const std::string& name, Tensor<T> init) {
    if (params_.count(name) || buffers_.count(name)) throw ConfigError("duplicate parameter " + name);
    auto v = leaf(std::move(init), true);
    params_.emplace(name, v);
    return v;
  }
  void add_buffer(const std::string& name, Tensor<T>* buffer) {
    if (params_.count(name) || buffers_.count(name)) throw ConfigError("duplicate buffer " + name);
    buffers_.emplace(name, buffer);
  }

  const std::map<std::string, Var<T>>& params() const { return params_; }
  const std::map<std::string, Tensor<T>*>& buffers() const { return buffers_; }

  Var<T> param(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw ConfigError("unknown parameter " + name);
    return it->second;
  }

  void zero_grad() {
    for (auto& [_, p] : params_) p->grad = Tensor<T>();
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& [_, p] : params_) n += p->value.size();
    return n;
  }

 private:
  std::map<std::string, Var<T>> params_;
  std::map<std::string, Tensor<T>*> buffers_;
};

// Kaiming-normal (fan-in) initialisation.
template <typename T>
Tensor<T> kaiming_normal(Shape shape, int fan_in, std::mt19937_64& rng, T gain = T(std::sqrt(2.0))) {
  Tensor<T> t(std::move(shape));
  std::normal_distribution<double> dist(0.0, static_cast<double>(gain) / std::sqrt(static_cast<double>(fan_in)));
  for (auto& v : t.values()) v = static_cast<T>(dist(rng));
  return t;
}

template <typename T>
Tensor<T> normal_init(Shape shape, double stddev, std::mt19937_64& rng) {
  Tensor<T> t(std::move(shape));
  std::normal_distribution<double> dist(0.0, stddev);
  for (auto& v : t.values()) v = static_cast<T>(dist(rng));
  return t;
}

template <typename T>
Tensor<T> uniform_init(Shape shape, double bound, std::mt19937_64& rng) {
  Tensor<T> t(std::move(shape));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (auto& v : t.values()) v = static_cast<T>(dist(rng));
  return t;
}

struct AdamOptions {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

template <typename T>
class Adam {
 public:
  explicit Adam(AdamOptions opts = {}) : opts_(opts) {}

  void set_lr(double lr) { opts_.lr = lr; }
  double lr() const { return opts_.lr; }
  std::int64_t steps() const { return t_; }

  // Applies one update to every parameter that received a gradient.
  void step(ParamStore<T>& store) {
    ++t_;
    const double bc1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(t_));
    for (auto& [name, p] : store.params()) {
      if (!p->has_grad()) continue;
      auto& m = first_[name];
      auto& v = second_[name];
      if (m.size() != p->value.size()) {
        m = Tensor<T>(p->value.shape());
        v = Tensor<T>(p->value.shape());
      }
      for (std::size_t i = 0; i < p->value.size(); ++i) {
        double g = static_cast<double>(p->grad[i]) + opts_.weight_decay * static_cast<double>(p->value[i]);
        const double mi = opts_.beta1 * static_cast<double>(m[i]) + (1.0 - opts_.beta1) * g;
        const double vi = opts_.beta2 * static_cast<double>(v[i]) + (1.0 - opts_.beta2) * g * g;
        m[i] = static_cast<T>(mi);
        v[i] = static_cast<T>(vi);
        const double update = opts_.lr * (mi / bc1) / (std::sqrt(vi / bc2) + opts_.eps);
        p->value[i] = static_cast<T>(static_cast<double>(p->value[i]) - update);
      }
    }
  }

  // Moment tensors, exposed for checkpointing.
  std::map<std::string, Tensor<T>>& first_moments() { return first_; }
  std::map<std::string, Tensor<T>>& second_moments() { return second_; }
  void set_steps(std::int64_t t) { t_ = t; }

 private:
  AdamOptions opts_;
  std::int64_t t_ = 0;
  std::map<std::string, Tensor<T>> first_;
  std::map<std::string, Tensor<T>> second_;
};

// Step decay: lr * factor once `progress` (completed fraction of training)
// reaches `milestone`.
inline double step_decay_lr(double base_lr, double progress, double milestone = 0.8, double factor = 0.1) {
  return progress >= milestone ? base_lr * factor : base_lr;
}

}  // namespace condlane

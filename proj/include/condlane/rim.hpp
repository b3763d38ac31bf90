#pragma once

#include <algorithm>
#include <numeric>
#include <vector>

#include "condlane/geometry.hpp"
#include "condlane/heads.hpp"

namespace condlane {

inline constexpr int kStateContinue = 0;
inline constexpr int kStateStop = 1;

template <typename T>
struct RimStep {
  Var<T> state_logits;  // [1,2]: continue, stop
  Var<T> kernel;        // [134]
  bool stop() const { return state_logits->value[1] > state_logits->value[0]; }
};

// LSTM cell fed with the same proposal feature at every step; each hidden
// state is mapped to a continue/stop decision and a dynamic kernel.
template <typename T>
class RecurrentInstanceModule {
 public:
  static constexpr int kHidden = kRimFeatureSize;

  RecurrentInstanceModule(ParamStore<T>& store, std::mt19937_64& rng)
      : gates_(store, "rim.lstm", 2 * kHidden, 4 * kHidden, rng),
        state_(store, "rim.state", kHidden, 2, rng),
        kernel_(store, "rim.kernel", kHidden, kKernelSize, rng) {
    // Forget-gate bias of 1 keeps early memory from vanishing.
    auto& b = gates_.bias->value;
    for (int i = kHidden; i < 2 * kHidden; ++i) b[static_cast<std::size_t>(i)] = T{1};
  }

  // Runs exactly `steps` iterations (teacher forcing uses the label count).
  std::vector<RimStep<T>> unroll(const Var<T>& feature, int steps) const { return recur(feature, steps, false); }

  // Free-running: stops after the first "stop" state or at max_steps.
  std::vector<RimStep<T>> run(const Var<T>& feature, int max_steps) const { return recur(feature, max_steps, true); }

 private:
  std::vector<RimStep<T>> recur(const Var<T>& feature, int steps, bool stop_early) const {
    if (feature->value.size() != static_cast<std::size_t>(kHidden)) {
      throw ShapeError("RIM expects a " + std::to_string(kHidden) + "-value feature");
    }
    if (steps < 1) throw ContractViolation("RIM needs at least one step");
    auto f = ops::reshape(feature, {1, kHidden});
    auto h = constant(Tensor<T>({1, kHidden}));
    auto c = constant(Tensor<T>({1, kHidden}));
    std::vector<RimStep<T>> out;
    for (int t = 0; t < steps; ++t) {
      auto z = gates_(ops::concat<T>({f, h}, 1));
      const auto H = static_cast<std::size_t>(kHidden);
      auto i = ops::sigmoid(ops::slice(z, 0, H));
      auto fg = ops::sigmoid(ops::slice(z, H, H));
      auto g = ops::tanh(ops::slice(z, 2 * H, H));
      auto o = ops::sigmoid(ops::slice(z, 3 * H, H));
      auto c_flat = ops::add(ops::mul(fg, ops::reshape(c, {kHidden})), ops::mul(i, g));
      auto h_flat = ops::mul(o, ops::tanh(c_flat));
      c = ops::reshape(c_flat, {1, kHidden});
      h = ops::reshape(h_flat, {1, kHidden});
      out.push_back({state_(h), ops::reshape(kernel_(h), {kKernelSize})});
      if (stop_early && out.back().stop()) break;
    }
    return out;
  }

  nn::Linear<T> gates_;  // [i, f, g, o]
  nn::Linear<T> state_;
  nn::Linear<T> kernel_;
};

struct RimTeacherTargets {
  std::vector<int> order;   // instance indices, ascending mean x
  std::vector<int> labels;  // 1 = continue, 0 = stop (last)
};

// Steps 1..m-1 continue and step m stops; step t supervises order[t].
inline RimTeacherTargets rim_teacher_targets(const std::vector<LanePolyline>& instances) {
  if (instances.empty()) throw ContractViolation("RIM targets need at least one instance");
  RimTeacherTargets t;
  t.order.resize(instances.size());
  std::iota(t.order.begin(), t.order.end(), 0);
  std::stable_sort(t.order.begin(), t.order.end(),
                   [&](int a, int b) { return instances[a].mean_x() < instances[b].mean_x(); });
  t.labels.assign(instances.size(), 1);
  t.labels.back() = 0;
  return t;
}

}  // namespace condlane

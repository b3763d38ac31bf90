#pragma once

#include <span>
#include <string>
#include <utility>
#include <vector>

#include "condlane/geometry.hpp"
#include "condlane/layers.hpp"

namespace condlane {

// Dynamic kernel layout: [location weights(66), location bias,
//                          offset weights(66), offset bias].
inline constexpr int kShapeFeatureChannels = 64;
inline constexpr int kSharedChannels = kShapeFeatureChannels + 2;
inline constexpr int kBranchParams = kSharedChannels + 1;
inline constexpr int kKernelSize = 2 * kBranchParams;  // 134
inline constexpr int kRimFeatureSize = 128;

inline int param_map_channels(bool rim_enabled) { return rim_enabled ? kRimFeatureSize : kKernelSize; }

template <typename T>
struct ProposalOutput {
  Var<T> heatmap;    // [N,1,Hp,Wp], values in (0,1)
  Var<T> param_map;  // [N,Cp,Hp,Wp]
};

// Heatmap branch (conv-bn-relu, conv, sigmoid) and parameter branch
// (conv-bn-relu, conv) on the downscale-16 feature.
template <typename T>
class ProposalHead {
 public:
  static constexpr int kDownscale = 16;
  static constexpr double kProbFloor = 1e-4;

  ProposalHead(ParamStore<T>& store, int in_channels, int param_channels, const ImageSpec& image,
               std::mt19937_64& rng)
      : grid_(GridSpec::at_downscale(image, kDownscale)),
        heat1_(store, "proposal.heat.conv1", in_channels, 64, 3, 1, true, rng),
        heat2_(store, "proposal.heat.conv2", 64, 1, 3, 1, true, rng, 0.01),
        param1_(store, "proposal.param.conv1", in_channels, 64, 3, 1, true, rng),
        param2_(store, "proposal.param.conv2", 64, param_channels, 3, 1, true, rng, 0.01) {
    // Start from a low foreground prior so the focal loss is not swamped.
    heat2_.bias->value.fill(static_cast<T>(-2.19));
  }

  ProposalOutput<T> forward(const Var<T>& feature, bool training) const {
    const auto& s = feature->value.shape();
    if (s.size() != 4 || s[2] != grid_.rows || s[3] != grid_.cols) {
      throw ShapeError("proposal head expects the downscale-16 level, got " + shape_str(s));
    }
    auto heat = ops::clamped_sigmoid(heat2_(heat1_(feature, training)), static_cast<T>(kProbFloor),
                                     static_cast<T>(1.0 - kProbFloor));
    auto params = param2_(param1_(feature, training));
    return {heat, params};
  }

  const GridSpec& grid() const { return grid_; }
  int param_channels() const { return param2_.out_channels(); }

 private:
  GridSpec grid_;
  nn::ConvBn<T> heat1_;
  nn::Conv2d<T> heat2_;
  nn::ConvBn<T> param1_;
  nn::Conv2d<T> param2_;
};

// Constant [1,2,Y,X] coordinate planes: x/(X-1) then y/(Y-1).
template <typename T>
Tensor<T> coordinate_planes(int rows, int cols) {
  Tensor<T> c({1, 2, rows, cols});
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < cols; ++j) {
      c.at(0, 0, i, j) = cols > 1 ? static_cast<T>(j) / static_cast<T>(cols - 1) : T{0};
      c.at(0, 1, i, j) = rows > 1 ? static_cast<T>(i) / static_cast<T>(rows - 1) : T{0};
    }
  }
  return c;
}

// Shared part of the conditional shape head: three 3x3 convs to 64 channels
// followed by the two absolute-coordinate channels (66 total).
template <typename T>
class ShapeSharedHead {
 public:
  ShapeSharedHead(ParamStore<T>& store, int in_channels, const GridSpec& grid, std::mt19937_64& rng)
      : grid_(grid),
        conv1_(store, "shape.conv1", in_channels, kShapeFeatureChannels, 3, 1, true, rng),
        conv2_(store, "shape.conv2", kShapeFeatureChannels, kShapeFeatureChannels, 3, 1, true, rng),
        conv3_(store, "shape.conv3", kShapeFeatureChannels, kShapeFeatureChannels, 3, 1, true, rng),
        coords_(coordinate_planes<T>(grid.rows, grid.cols)) {}

  Var<T> forward(const Var<T>& feature, bool training) const {
    const auto& s = feature->value.shape();
    if (s.size() != 4 || s[2] != grid_.rows || s[3] != grid_.cols) {
      throw ShapeError("shape head expects a " + std::to_string(grid_.rows) + "x" + std::to_string(grid_.cols) +
                       " feature, got " + shape_str(s));
    }
    auto f = conv3_(conv2_(conv1_(feature, training), training));
    Tensor<T> coords({s[0], 2, grid_.rows, grid_.cols});
    for (int n = 0; n < s[0]; ++n) std::copy(coords_.storage().begin(), coords_.storage().end(),
                                             coords.data() + static_cast<std::size_t>(n) * coords_.size());
    return ops::concat<T>({f, constant(std::move(coords))}, 1);
  }

  const GridSpec& grid() const { return grid_; }

 private:
  GridSpec grid_;
  nn::ConvBn<T> conv1_, conv2_;
  nn::Conv2d<T> conv3_;
  Tensor<T> coords_;
};

// Column of the parameter map at proposal cell (x, y) of sample n -> [Cp].
template <typename T>
Var<T> gather_kernel(const Var<T>& param_map, int n, int y, int x) {
  const auto& s = param_map->value.shape();
  if (n < 0 || n >= s[0] || y < 0 || y >= s[2] || x < 0 || x >= s[3]) {
    throw IndexError("proposal point (" + std::to_string(x) + "," + std::to_string(y) + ") outside parameter map " +
                     shape_str(s));
  }
  const int c = s[1];
  const std::size_t plane = static_cast<std::size_t>(s[2]) * s[3];
  const std::size_t base = static_cast<std::size_t>(n) * c * plane + static_cast<std::size_t>(y) * s[3] + x;
  Tensor<T> out({c});
  for (int k = 0; k < c; ++k) out[k] = param_map->value[base + k * plane];
  return make_result<T>(std::move(out), {param_map}, [c, plane, base](Node<T>& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (int k = 0; k < c; ++k) g[base + k * plane] += self.grad[k];
  });
}

// Plain-tensor version over a single-sample map [Cp,Hp,Wp]; order preserved.
template <typename T>
std::vector<std::vector<T>> gather_kernels(const Tensor<T>& param_map, const std::vector<std::pair<int, int>>& points) {
  const int c = param_map.dim(0), h = param_map.dim(1), w = param_map.dim(2);
  std::vector<std::vector<T>> out;
  for (const auto& [x, y] : points) {
    if (x < 0 || x >= w || y < 0 || y >= h) throw IndexError("proposal point outside parameter map");
    std::vector<T> col(static_cast<std::size_t>(c));
    for (int k = 0; k < c; ++k) col[k] = param_map.at(k, y, x);
    out.push_back(std::move(col));
  }
  return out;
}

// 1x1 dynamic convolution of shared [1,66,Y,X] with the branch of `kernel`
// starting at `offset`: out[i][j] = sum_c w_c * shared[c][i][j] + b -> [Y,X].
template <typename T>
Var<T> dynamic_conv1x1(const Var<T>& shared, const Var<T>& kernel, int offset) {
  const auto& s = shared->value.shape();
  const int c = s[1], rows = s[2], cols = s[3];
  const int hw = rows * cols;
  if (static_cast<int>(kernel->value.size()) < offset + c + 1) throw ContractViolation("kernel too short for branch");
  Tensor<T> out({rows, cols});
  Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>> o(out.data(), hw);
  Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> w(kernel->value.data() + offset, c);
  o.noalias() = w * ops::ConstMatMap<T>(shared->value.data(), c, hw);
  o.array() += kernel->value[static_cast<std::size_t>(offset + c)];
  return make_result<T>(std::move(out), {shared, kernel}, [c, hw, offset](Node<T>& self) {
    auto& fi = self.inputs[0];
    auto& ki = self.inputs[1];
    Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> g(self.grad.data(), hw);
    if (fi->requires_grad) {
      Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> w(ki->value.data() + offset, c);
      ops::MatMap<T>(fi->grad_buffer().data(), c, hw).noalias() += w * g;
    }
    if (ki->requires_grad) {
      auto& kg = ki->grad_buffer();
      Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>(kg.data() + offset, c).noalias() +=
          g * ops::ConstMatMap<T>(fi->value.data(), c, hw).transpose();
      kg[static_cast<std::size_t>(offset + c)] += g.sum();
    }
  });
}

template <typename T>
struct ConditionalMaps {
  Var<T> location;  // [Y,X] logits
  Var<T> offset;    // [Y,X]
};

// Location and offset maps of one instance from its 134-value kernel.
template <typename T>
ConditionalMaps<T> conditional_forward(const Var<T>& shared, const Var<T>& kernel) {
  if (kernel->value.size() != static_cast<std::size_t>(kKernelSize)) {
    throw ContractViolation("dynamic kernel must have " + std::to_string(kKernelSize) + " values, got " +
                            std::to_string(kernel->value.size()));
  }
  if (shared->value.dim(1) != kSharedChannels) throw ShapeError("shared shape feature must have 66 channels");
  return {dynamic_conv1x1(shared, kernel, 0), dynamic_conv1x1(shared, kernel, kBranchParams)};
}

// Row softmax followed by the expected column index: [Y,X] -> [Y].
template <typename T>
Var<T> row_expectation(const Var<T>& logits) {
  const int rows = logits->value.dim(0), cols = logits->value.dim(1);
  Tensor<T> prob = ops::softmax_rows_value(logits->value);
  Tensor<T> out({rows});
  for (int i = 0; i < rows; ++i) {
    T e{0};
    for (int j = 0; j < cols; ++j) e += static_cast<T>(j) * prob.at(i, j);
    out[i] = e;
  }
  return make_result<T>(std::move(out), {logits}, [prob = std::move(prob), rows, cols](Node<T>& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (int i = 0; i < rows; ++i) {
      const T e = self.value[i];
      for (int j = 0; j < cols; ++j) g.at(i, j) += self.grad[i] * prob.at(i, j) * (static_cast<T>(j) - e);
    }
  });
}

// Shared linear X -> 2 applied to each raw location-map row.
template <typename T>
class VerticalRangeHead {
 public:
  VerticalRangeHead(ParamStore<T>& store, int cols, std::mt19937_64& rng) : linear_(store, "shape.range", cols, 2, rng) {}

  Var<T> forward(const Var<T>& location) const {
    if (location->value.dim(1) != linear_.in_features()) throw ShapeError("range head width mismatch");
    return linear_(location);
  }

 private:
  nn::Linear<T> linear_;
};

}  // namespace condlane

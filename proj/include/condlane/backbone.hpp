#pragma once

#include <cmath>
#include <map>
#include <numbers>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "condlane/layers.hpp"

namespace condlane {

enum class Variant { Small, Medium, Large };

inline std::string to_string(Variant v) {
  switch (v) {
    case Variant::Small: return "small";
    case Variant::Medium: return "medium";
    case Variant::Large: return "large";
  }
  return "small";
}

inline Variant variant_from_string(const std::string& s) {
  if (s == "small") return Variant::Small;
  if (s == "medium") return Variant::Medium;
  if (s == "large") return Variant::Large;
  throw ConfigError("unknown model variant '" + s + "' (expected small, medium or large)");
}

struct BackboneConfig {
  std::vector<int> stage_channels{32, 64, 128, 256};
  std::vector<int> stage_depths{1, 1, 1, 1};
  std::vector<int> stage_strides{4, 2, 2, 2};
  int fpn_channels = 64;
  bool encoder_enabled = true;
  int encoder_heads = 1;

  // Basic-block counts per stage, following ResNet-18 / 34 / 101.
  static std::vector<int> depths_for(Variant v) {
    switch (v) {
      case Variant::Small: return {2, 2, 2, 2};
      case Variant::Medium: return {3, 4, 6, 3};
      case Variant::Large: return {3, 4, 23, 3};
    }
    return {2, 2, 2, 2};
  }

  void validate() const {
    if (stage_channels.size() != 4 || stage_depths.size() != 4 || stage_strides.size() != 4) {
      throw ConfigError("backbone needs exactly 4 stages");
    }
    int ds = 1;
    const int expected[] = {4, 8, 16, 32};
    for (std::size_t i = 0; i < 4; ++i) {
      if (stage_channels[i] <= 0 || stage_depths[i] <= 0) throw ConfigError("backbone stage sizes must be positive");
      ds *= stage_strides[i];
      if (ds != expected[i]) throw ConfigError("backbone stage strides must reach downscales 4, 8, 16, 32");
    }
    if (fpn_channels <= 0) throw ConfigError("fpn_channels must be positive");
    if (encoder_heads <= 0 || stage_channels[3] % encoder_heads != 0) {
      throw ConfigError("encoder_heads must divide the deepest stage width");
    }
  }
};

// Downscale -> [N, C_f, H/s, W/s]
template <typename T>
struct FeaturePyramid {
  std::map<int, Var<T>> levels;

  const Var<T>& at(int downscale) const {
    auto it = levels.find(downscale);
    if (it == levels.end()) throw ShapeError("feature pyramid has no level at downscale " + std::to_string(downscale));
    return it->second;
  }
};

template <typename T>
struct BasicBlock {
  nn::ConvBn<T> conv1, conv2;
  std::optional<nn::ConvBn<T>> shortcut;

  BasicBlock(ParamStore<T>& store, const std::string& name, int in, int out, int stride, std::mt19937_64& rng)
      : conv1(store, name + ".conv1", in, out, 3, stride, true, rng),
        conv2(store, name + ".conv2", out, out, 3, 1, false, rng) {
    if (stride != 1 || in != out) shortcut.emplace(store, name + ".shortcut", in, out, 1, stride, false, rng);
  }

  Var<T> operator()(const Var<T>& x, bool training) const {
    auto y = conv2(conv1(x, training), training);
    auto s = shortcut ? (*shortcut)(x, training) : x;
    return ops::relu(ops::add(y, s));
  }
};

// 2-D sinusoidal positional embedding [C, h, w]: the first C/2 channels
// encode the row, the rest the column, as interleaved sin/cos pairs.
template <typename T>
Tensor<T> sine_position_embedding(int channels, int h, int w) {
  Tensor<T> pe({1, channels, h, w});
  const int half = channels / 2;
  const double two_pi = 2.0 * std::numbers::pi;
  for (int c = 0; c < channels; ++c) {
    const bool is_row = c < half;
    const int k = is_row ? c : c - half;
    const int span = is_row ? half : channels - half;
    const double freq = std::pow(10000.0, 2.0 * (k / 2) / std::max(1, span));
    for (int i = 0; i < h; ++i) {
      for (int j = 0; j < w; ++j) {
        const double pos = is_row ? (i + 1.0) / h * two_pi : (j + 1.0) / w * two_pi;
        const double a = pos / freq;
        pe.at(0, c, i, j) = static_cast<T>(k % 2 == 0 ? std::sin(a) : std::cos(a));
      }
    }
  }
  return pe;
}

// Single convolutional transformer-encoder layer on a 2-D feature map:
//   q,k from (x + pos), v from x, softmax(q^T k / sqrt(d)) over the h*w
//   positions, residual add, then a 1x1-conv feed-forward with residual.
template <typename T>
struct TransformerEncoder {
  nn::Conv2d<T> query, key, value, ffn1, ffn2;
  int channels = 0;
  int heads = 1;

  TransformerEncoder() = default;
  TransformerEncoder(ParamStore<T>& store, const std::string& name, int channels_, int heads_, std::mt19937_64& rng)
      : query(store, name + ".query", channels_, channels_, 1, 1, true, rng, 1.0 / std::sqrt(channels_)),
        key(store, name + ".key", channels_, channels_, 1, 1, true, rng, 1.0 / std::sqrt(channels_)),
        value(store, name + ".value", channels_, channels_, 1, 1, true, rng, 1.0 / std::sqrt(channels_)),
        ffn1(store, name + ".ffn1", channels_, channels_, 1, 1, true, rng),
        ffn2(store, name + ".ffn2", channels_, channels_, 1, 1, true, rng, 0.1 / std::sqrt(channels_)),
        channels(channels_),
        heads(heads_) {}

  // `attention`, when given, receives one [L, L] row-stochastic matrix per
  // sample and head.
  Var<T> operator()(const Var<T>& x, std::vector<Tensor<T>>* attention = nullptr) const {
    const int n = x->value.dim(0), h = x->value.dim(2), w = x->value.dim(3);
    if (x->value.dim(1) != channels) throw ShapeError("encoder channel mismatch");
    const int len = h * w;
    const int d = channels / heads;
    const auto pos = sine_position_embedding<T>(channels, h, w);
    auto xp = ops::add_broadcast_batch(x, pos);
    auto q = query(xp), k = key(xp), v = value(x);
    std::vector<Var<T>> per_sample;
    const T inv_sqrt = T{1} / static_cast<T>(std::sqrt(static_cast<double>(d)));
    for (int s = 0; s < n; ++s) {
      auto qs = ops::select_batch(q, s), ks = ops::select_batch(k, s), vs = ops::select_batch(v, s);
      std::vector<Var<T>> head_out;
      for (int hd = 0; hd < heads; ++hd) {
        const std::size_t begin = static_cast<std::size_t>(hd) * d * len, size = static_cast<std::size_t>(d) * len;
        auto qh = ops::reshape(ops::slice(qs, begin, size), {d, len});
        auto kh = ops::reshape(ops::slice(ks, begin, size), {d, len});
        auto vh = ops::reshape(ops::slice(vs, begin, size), {d, len});
        auto scores = ops::scale(ops::matmul(ops::transpose(qh), kh), inv_sqrt);  // [L, L]
        auto attn = ops::softmax_rows(scores);
        if (attention) attention->push_back(attn->value);
        head_out.push_back(ops::matmul(vh, ops::transpose(attn)));  // [d, L]
      }
      auto merged = heads == 1 ? head_out[0] : ops::concat(head_out, 0);
      per_sample.push_back(ops::reshape(merged, {1, channels, h, w}));
    }
    auto attended = n == 1 ? per_sample[0] : ops::concat(per_sample, 0);
    auto x1 = ops::add(x, attended);
    return ops::add(x1, ffn2(ops::relu(ffn1(x1))));
  }
};

// Residual backbone + optional encoder on the deepest stage + FPN top-down
// fusion to a uniform channel count at downscales {4, 8, 16, 32}.
template <typename T>
class Backbone {
 public:
  Backbone(ParamStore<T>& store, const BackboneConfig& cfg, std::mt19937_64& rng) : cfg_(cfg) {
    cfg.validate();
    stem_ = nn::ConvBn<T>(store, "backbone.stem", 3, cfg.stage_channels[0], 3, 2, true, rng);
    int in = cfg.stage_channels[0];
    for (int s = 0; s < 4; ++s) {
      const int out = cfg.stage_channels[s];
      // The stem already halves the input for the first stage.
      const int first_stride = s == 0 ? cfg.stage_strides[0] / 2 : cfg.stage_strides[s];
      std::vector<BasicBlock<T>> blocks;
      for (int b = 0; b < cfg.stage_depths[s]; ++b) {
        blocks.emplace_back(store, "backbone.stage" + std::to_string(s + 1) + ".block" + std::to_string(b),
                            b == 0 ? in : out, out, b == 0 ? first_stride : 1, rng);
      }
      stages_.push_back(std::move(blocks));
      in = out;
    }
    if (cfg.encoder_enabled) encoder_.emplace(store, "encoder", cfg.stage_channels[3], cfg.encoder_heads, rng);
    for (int s = 0; s < 4; ++s) {
      const std::string lvl = std::to_string(kDownscales[s]);
      lateral_.emplace_back(store, "fpn.lateral" + lvl, cfg.stage_channels[s], cfg.fpn_channels, 1, 1, true, rng);
      output_.emplace_back(store, "fpn.output" + lvl, cfg.fpn_channels, cfg.fpn_channels, 3, 1, true, rng);
    }
  }

  static constexpr int kDownscales[4] = {4, 8, 16, 32};

  // image [N,3,H,W]; only the requested pyramid levels are materialised.
  FeaturePyramid<T> forward(const Var<T>& image, bool training, const std::set<int>& wanted = {4, 8, 16, 32},
                            std::vector<Tensor<T>>* attention = nullptr) const {
    const auto& shape = image->value.shape();
    if (shape.size() != 4 || shape[1] != 3) throw ShapeError("backbone expects [N,3,H,W], got " + shape_str(shape));
    if (shape[2] % 32 != 0 || shape[3] % 32 != 0) {
      throw ShapeError("input dims " + std::to_string(shape[2]) + "x" + std::to_string(shape[3]) +
                       " must be divisible by 32");
    }
    for (int ds : wanted) {
      if (ds != 4 && ds != 8 && ds != 16 && ds != 32) throw ShapeError("no pyramid level at " + std::to_string(ds));
    }
    std::vector<Var<T>> feats;
    auto x = stem_(image, training);
    for (const auto& stage : stages_) {
      for (const auto& block : stage) x = block(x, training);
      feats.push_back(x);
    }
    if (encoder_) feats[3] = (*encoder_)(feats[3], attention);

    const int finest = *wanted.begin();
    FeaturePyramid<T> pyramid;
    Var<T> merged;
    for (int s = 3; s >= 0 && kDownscales[s] >= finest; --s) {
      auto lat = lateral_[s](feats[s]);
      merged = merged ? ops::add(lat, ops::upsample_nearest2x(merged)) : lat;
      if (wanted.count(kDownscales[s])) pyramid.levels[kDownscales[s]] = output_[s](merged);
    }
    return pyramid;
  }

  const BackboneConfig& config() const { return cfg_; }

 private:
  BackboneConfig cfg_;
  nn::ConvBn<T> stem_;
  std::vector<std::vector<BasicBlock<T>>> stages_;
  std::optional<TransformerEncoder<T>> encoder_;
  std::vector<nn::Conv2d<T>> lateral_;
  std::vector<nn::Conv2d<T>> output_;
};

}  // namespace condlane

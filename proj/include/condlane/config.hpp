#pragma once

#include <cmath>
#include <fstream>
#include <set>
#include <string>

#include <nlohmann/json.hpp>

#include "condlane/backbone.hpp"
#include "condlane/losses.hpp"
#include "condlane/synth.hpp"

namespace condlane {

using Json = nlohmann::ordered_json;

inline constexpr int kConfigSchema = 1;

struct ModelConfig {
  Variant variant = Variant::Small;
  ImageSpec image{320, 800};
  std::vector<int> stage_channels{32, 64, 128, 256};
  int fpn_channels = 64;
  bool offset = true;
  bool encoder = true;
  bool rim = false;
  int encoder_heads = 1;
  int rim_max_steps = 5;
  int omega = 5;
  double heat_sigma = 2.0;
  double proposal_threshold = 0.3;

  // Shape head reads downscale 8 for small/medium and 4 for large.
  int shape_downscale() const { return variant == Variant::Large ? 4 : 8; }

  BackboneConfig backbone() const {
    BackboneConfig b;
    b.stage_channels = stage_channels;
    b.stage_depths = BackboneConfig::depths_for(variant);
    b.fpn_channels = fpn_channels;
    b.encoder_enabled = encoder;
    b.encoder_heads = encoder_heads;
    return b;
  }

  void validate() const {
    image.validate();
    if (image.height % 32 || image.width % 32) throw ConfigError("model.image dims must be divisible by 32");
    backbone().validate();
    if (rim_max_steps < 1) throw ConfigError("model.rim_max_steps must be >= 1");
    if (omega < 1) throw ConfigError("model.omega must be >= 1");
    if (heat_sigma <= 0) throw ConfigError("model.heat_sigma must be > 0");
    if (!(proposal_threshold > 0 && proposal_threshold < 1)) throw ConfigError("model.proposal_threshold must be in (0, 1)");
  }
};

struct TrainConfig {
  double lr = 3e-4;
  double weight_decay = 0.0;
  int batch_size = 32;
  int epochs = 16;
  double lr_decay_at = 0.8;     // fraction of total epochs
  double lr_decay_factor = 0.1;
  LossWeights weights;
  FocalParams focal;
  std::uint64_t seed = 0;
  int checkpoint_every = 1;      // epochs; 0 keeps only the final checkpoint
  int log_every = 1;             // steps

  void validate() const {
    if (!(lr > 0)) throw ConfigError("train.lr must be > 0");
    if (weight_decay < 0) throw ConfigError("train.weight_decay must be >= 0");
    if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
    if (epochs < 0) throw ConfigError("train.epochs must be >= 0");
    if (lr_decay_at < 0 || lr_decay_at > 1) throw ConfigError("train.lr_decay_at must be in [0, 1]");
    if (lr_decay_factor <= 0 || lr_decay_factor > 1) throw ConfigError("train.lr_decay_factor must be in (0, 1]");
    if (checkpoint_every < 0 || log_every < 1) throw ConfigError("train.checkpoint_every/log_every out of range");
    weights.validate();
    focal.validate();
  }
};

struct DataConfig {
  SceneConfig scene;
  std::string dataset;  // directory with manifest.json (train/eval input)
  std::string output;   // run directory for train
};

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  DataConfig data;

  void validate() const {
    model.validate();
    train.validate();
    data.scene.validate();
  }
};

namespace config_detail {

// Reads known keys from `j` into fields and rejects anything else.
class Reader {
 public:
  Reader(const Json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_ + " must be an object");
  }
  ~Reader() noexcept(false) {
    if (std::uncaught_exceptions()) return;
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.count(key)) throw ConfigError("unknown config field '" + qualified(key) + "'");
    }
  }

  template <typename V>
  void get(const std::string& key, V& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<V>();
    } catch (const nlohmann::json::exception&) {
      throw ConfigError("config field '" + qualified(key) + "' has the wrong type");
    }
  }

  const Json* child(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }
  std::string qualified(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

 private:
  const Json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

inline void read_image(const Json& j, const std::string& path, ImageSpec& img) {
  Reader r(j, path);
  r.get("height", img.height);
  r.get("width", img.width);
}

}  // namespace config_detail

inline Json to_json(const ImageSpec& i) { return Json{{"height", i.height}, {"width", i.width}}; }

inline Json to_json(const ModelConfig& m) {
  return Json{{"variant", to_string(m.variant)},
              {"image", to_json(m.image)},
              {"stage_channels", m.stage_channels},
              {"fpn_channels", m.fpn_channels},
              {"offset", m.offset},
              {"encoder", m.encoder},
              {"rim", m.rim},
              {"encoder_heads", m.encoder_heads},
              {"rim_max_steps", m.rim_max_steps},
              {"omega", m.omega},
              {"heat_sigma", m.heat_sigma},
              {"proposal_threshold", m.proposal_threshold}};
}

inline Json to_json(const TrainConfig& t) {
  return Json{{"lr", t.lr},
              {"weight_decay", t.weight_decay},
              {"batch_size", t.batch_size},
              {"epochs", t.epochs},
              {"lr_decay_at", t.lr_decay_at},
              {"lr_decay_factor", t.lr_decay_factor},
              {"loss_weights",
               Json{{"alpha", t.weights.alpha}, {"beta", t.weights.beta}, {"gamma", t.weights.gamma}, {"eta", t.weights.eta}}},
              {"focal", Json{{"alpha", t.focal.alpha_exp}, {"beta", t.focal.beta_exp}}},
              {"seed", t.seed},
              {"checkpoint_every", t.checkpoint_every},
              {"log_every", t.log_every}};
}

inline Json to_json(const SceneConfig& s) {
  return Json{{"image", to_json(s.image)},
              {"lane_count_min", s.lane_count_min},
              {"lane_count_max", s.lane_count_max},
              {"curvature_min", s.curvature_min},
              {"curvature_max", s.curvature_max},
              {"fork_probability", s.fork_probability},
              {"dense_probability", s.dense_probability},
              {"dense_gap", s.dense_gap},
              {"noise", s.noise},
              {"lane_width", s.lane_width},
              {"proposal_downscale", s.proposal_downscale},
              {"seed", s.seed}};
}

inline Json to_json(const RunConfig& c) {
  return Json{{"schema", kConfigSchema},
              {"model", to_json(c.model)},
              {"train", to_json(c.train)},
              {"data", Json{{"scene", to_json(c.data.scene)}, {"dataset", c.data.dataset}, {"output", c.data.output}}}};
}

inline ModelConfig model_from_json(const Json& j, const std::string& path = "model") {
  ModelConfig m;
  config_detail::Reader r(j, path);
  std::string variant = to_string(m.variant);
  r.get("variant", variant);
  m.variant = variant_from_string(variant);
  if (const Json* img = r.child("image")) config_detail::read_image(*img, path + ".image", m.image);
  r.get("stage_channels", m.stage_channels);
  r.get("fpn_channels", m.fpn_channels);
  r.get("offset", m.offset);
  r.get("encoder", m.encoder);
  r.get("rim", m.rim);
  r.get("encoder_heads", m.encoder_heads);
  r.get("rim_max_steps", m.rim_max_steps);
  r.get("omega", m.omega);
  r.get("heat_sigma", m.heat_sigma);
  r.get("proposal_threshold", m.proposal_threshold);
  return m;
}

inline TrainConfig train_from_json(const Json& j, const std::string& path = "train") {
  TrainConfig t;
  config_detail::Reader r(j, path);
  r.get("lr", t.lr);
  r.get("weight_decay", t.weight_decay);
  r.get("batch_size", t.batch_size);
  r.get("epochs", t.epochs);
  r.get("lr_decay_at", t.lr_decay_at);
  r.get("lr_decay_factor", t.lr_decay_factor);
  if (const Json* w = r.child("loss_weights")) {
    config_detail::Reader wr(*w, path + ".loss_weights");
    wr.get("alpha", t.weights.alpha);
    wr.get("beta", t.weights.beta);
    wr.get("gamma", t.weights.gamma);
    wr.get("eta", t.weights.eta);
  }
  if (const Json* f = r.child("focal")) {
    config_detail::Reader fr(*f, path + ".focal");
    fr.get("alpha", t.focal.alpha_exp);
    fr.get("beta", t.focal.beta_exp);
  }
  r.get("seed", t.seed);
  r.get("checkpoint_every", t.checkpoint_every);
  r.get("log_every", t.log_every);
  return t;
}

inline SceneConfig scene_from_json(const Json& j, const std::string& path = "data.scene") {
  SceneConfig s;
  config_detail::Reader r(j, path);
  if (const Json* img = r.child("image")) config_detail::read_image(*img, path + ".image", s.image);
  r.get("lane_count_min", s.lane_count_min);
  r.get("lane_count_max", s.lane_count_max);
  r.get("curvature_min", s.curvature_min);
  r.get("curvature_max", s.curvature_max);
  r.get("fork_probability", s.fork_probability);
  r.get("dense_probability", s.dense_probability);
  r.get("dense_gap", s.dense_gap);
  r.get("noise", s.noise);
  r.get("lane_width", s.lane_width);
  r.get("proposal_downscale", s.proposal_downscale);
  r.get("seed", s.seed);
  return s;
}

inline RunConfig config_from_json(const Json& j) {
  RunConfig c;
  {
    config_detail::Reader r(j, "");
    int schema = kConfigSchema;
    r.get("schema", schema);
    if (schema != kConfigSchema) throw ConfigError("unsupported config schema " + std::to_string(schema));
    if (const Json* m = r.child("model")) c.model = model_from_json(*m);
    if (const Json* t = r.child("train")) c.train = train_from_json(*t);
    if (const Json* d = r.child("data")) {
      config_detail::Reader dr(*d, "data");
      if (const Json* s = dr.child("scene")) c.data.scene = scene_from_json(*s);
      dr.get("dataset", c.data.dataset);
      dr.get("output", c.data.output);
    }
  }
  c.validate();
  return c;
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  Json j;
  try {
    j = Json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config " + path + " is not valid JSON: " + e.what());
  }
  return config_from_json(j);
}

}  // namespace condlane

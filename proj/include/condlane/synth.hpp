#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "condlane/geometry.hpp"
#include "condlane/metrics.hpp"

namespace condlane {

// 8-bit RGB image, row-major HWC.
struct Image {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> rgb;

  Image() = default;
  Image(int h, int w, std::uint8_t fill = 0) : height(h), width(w), rgb(static_cast<std::size_t>(h) * w * 3, fill) {}
  std::uint8_t* px(int y, int x) { return rgb.data() + (static_cast<std::size_t>(y) * width + x) * 3; }
  const std::uint8_t* px(int y, int x) const { return rgb.data() + (static_cast<std::size_t>(y) * width + x) * 3; }
  bool operator==(const Image&) const = default;
};

inline void write_ppm(const std::string& path, const Image& img) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path);
  out << "P6\n" << img.width << ' ' << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.rgb.data()), static_cast<std::streamsize>(img.rgb.size()));
  if (!out) throw FormatError("failed writing " + path);
}

inline Image read_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path);
  auto token = [&]() {
    std::string t;
    char c;
    while (in.get(c)) {
      if (c == '#') {
        std::string skip;
        std::getline(in, skip);
      } else if (std::isspace(static_cast<unsigned char>(c))) {
        if (!t.empty()) break;
      } else {
        t += c;
      }
    }
    return t;
  };
  if (token() != "P6") throw FormatError(path + " is not a binary PPM (P6)");
  int w = 0, h = 0, maxval = 0;
  try {
    w = std::stoi(token());
    h = std::stoi(token());
    maxval = std::stoi(token());
  } catch (const std::exception&) {
    throw FormatError(path + " has a malformed PPM header");
  }
  if (w <= 0 || h <= 0 || maxval != 255) throw FormatError(path + ": only 8-bit PPM images are supported");
  Image img(h, w);
  in.read(reinterpret_cast<char*>(img.rgb.data()), static_cast<std::streamsize>(img.rgb.size()));
  if (in.gcount() != static_cast<std::streamsize>(img.rgb.size())) throw FormatError(path + " is truncated");
  return img;
}

enum class SceneCategory { Normal, Fork, Dense, Curve };

inline std::string to_string(SceneCategory c) {
  switch (c) {
    case SceneCategory::Normal: return "normal";
    case SceneCategory::Fork: return "fork";
    case SceneCategory::Dense: return "dense";
    case SceneCategory::Curve: return "curve";
  }
  return "normal";
}

struct SceneConfig {
  ImageSpec image{320, 800};
  int lane_count_min = 2;
  int lane_count_max = 4;
  double curvature_min = 0.0;    // px of lateral bend at the lane top
  double curvature_max = 80.0;
  double fork_probability = 0.0;
  double dense_probability = 0.0;
  double dense_gap = 10.0;       // px between the two lanes of a dense pair
  double noise = 6.0;            // std-dev of additive pixel noise (0..255 scale)
  double lane_width = 0.0;       // stroke width in px; 0 picks W/100
  int proposal_downscale = 16;
  std::uint64_t seed = 0;

  double stroke_width() const { return lane_width > 0.0 ? lane_width : std::max(1.5, image.width / 100.0); }
  double proposal_cell() const { return static_cast<double>(image.width) / (image.width / proposal_downscale); }

  void validate() const {
    image.validate();
    if (image.height % proposal_downscale || image.width % proposal_downscale) {
      throw ConfigError("scene image must be divisible by the proposal downscale");
    }
    if (lane_count_min < 1 || lane_count_max < lane_count_min) throw ConfigError("invalid lane_count range");
    if (curvature_min < 0 || curvature_max < curvature_min) throw ConfigError("invalid curvature range");
    if (fork_probability < 0 || fork_probability > 1 || dense_probability < 0 || dense_probability > 1) {
      throw ConfigError("probabilities must lie in [0, 1]");
    }
    if (dense_gap < 4.0) throw ConfigError("dense_gap must be >= 4 px");
    if (dense_gap >= proposal_cell()) throw ConfigError("dense_gap must fit inside one proposal cell");
    if (noise < 0 || lane_width < 0) throw ConfigError("noise and lane_width must be >= 0");
    // Separate start points need 2.5 proposal cells each across the bottom edge.
    const double needed = 2.5 * proposal_cell() * (lane_count_min - 1) + 4.0 * proposal_cell();
    if (needed > image.width) throw ConfigError("lanes do not fit: lane_count_min too large for the image width");
  }
};

struct Sample {
  Image image;
  std::vector<LanePolyline> lanes;
  SceneCategory category = SceneCategory::Normal;
};

namespace synth_detail {

struct LaneShape {
  double x0;      // bottom abscissa
  double xv;      // abscissa the lane heads toward at the horizon
  double bend;    // lateral bend at s = 1
  double branch;  // extra outward divergence (forks)
  double x_at(double s) const { return x0 + (xv - x0) * s + bend * s * s + branch * std::pow(s, 1.5); }
};

// Samples the lane from the bottom row up to `s_top`, stopping at the first
// sample that leaves the image horizontally.
inline LanePolyline trace(const LaneShape& shape, double y_bottom, double y_vanish, double s_top, int width,
                          int samples) {
  LanePolyline lane;
  for (int k = 0; k <= samples; ++k) {
    const double s = s_top * k / samples;
    const double x = shape.x_at(s);
    if (x < 0.0 || x > width - 1.0) break;
    lane.points.push_back({x, y_bottom - s * (y_bottom - y_vanish)});
  }
  return lane;
}

// Smooth value noise from a few random sinusoids.
struct Texture {
  std::array<double, 12> p{};
  double operator()(double x, double y) const {
    double v = 0.0;
    for (int k = 0; k < 4; ++k) v += p[3 * k] * std::sin(p[3 * k + 1] * x + p[3 * k + 2] * y + k);
    return v;
  }
};

inline void draw_lane(Image& img, const LanePolyline& lane, double width, const std::array<double, 3>& color) {
  const double half = width / 2.0;
  double x0 = lane.points[0].x, x1 = x0, y0 = lane.points[0].y, y1 = y0;
  for (const auto& p : lane.points) {
    x0 = std::min(x0, p.x), x1 = std::max(x1, p.x), y0 = std::min(y0, p.y), y1 = std::max(y1, p.y);
  }
  const int bx0 = std::max(0, static_cast<int>(x0 - half - 1)), bx1 = std::min(img.width - 1, static_cast<int>(x1 + half + 1));
  const int by0 = std::max(0, static_cast<int>(y0 - half - 1)), by1 = std::min(img.height - 1, static_cast<int>(y1 + half + 1));
  for (int y = by0; y <= by1; ++y) {
    for (int x = bx0; x <= bx1; ++x) {
      double d2 = 1e30;
      for (std::size_t k = 1; k < lane.points.size(); ++k) {
        d2 = std::min(d2, raster::segment_distance2(x, y, lane.points[k - 1], lane.points[k]));
      }
      // Coverage falls off linearly over one pixel at the stroke edge.
      const double cover = std::clamp(half + 0.5 - std::sqrt(d2), 0.0, 1.0);
      if (cover <= 0.0) continue;
      auto* p = img.px(y, x);
      for (int c = 0; c < 3; ++c) p[c] = static_cast<std::uint8_t>(std::lround(p[c] * (1 - cover) + color[c] * cover));
    }
  }
}

}  // namespace synth_detail

// Deterministic in (cfg.seed, index): every sample has its own generator.
inline Sample generate_scene(const SceneConfig& cfg, std::uint64_t index) {
  cfg.validate();
  std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(cfg.seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
  std::mt19937_64 rng(seq);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const int W = cfg.image.width, H = cfg.image.height;
  const double cell = cfg.proposal_cell();

  Sample sample;
  const bool fork = u(rng) < cfg.fork_probability;
  const bool dense = !fork && u(rng) < cfg.dense_probability;
  const int lane_count = cfg.lane_count_min +
                         static_cast<int>(u(rng) * (cfg.lane_count_max - cfg.lane_count_min + 1) * 0.999999);
  // Pairs (fork branch or dense neighbour) share a start cell with a base lane.
  const bool paired = (fork || dense) && lane_count >= 2;
  const int base_count = paired ? lane_count - 1 : lane_count;

  const double y_bottom = H - 1.0;
  const int samples = std::max(8, H / 10);
  double y_vanish = 0.0, bend_mag = 0.0;
  // Geometry draws are retried when a lane would leave the image too early.
  bool placed = false;
  for (int attempt = 0; attempt < 100 && !placed; ++attempt) {
    sample.lanes.clear();
    y_vanish = H * (0.30 + 0.12 * u(rng));
    const double xv = W * (0.4 + 0.2 * u(rng));
    bend_mag = cfg.curvature_min + (cfg.curvature_max - cfg.curvature_min) * u(rng);
    const double bend = (u(rng) < 0.5 ? -1.0 : 1.0) * bend_mag;

    // Bottom abscissae at least 2.5 cells apart and 2 cells from the sides.
    std::vector<double> starts;
    for (int k = 0; k < 400 && static_cast<int>(starts.size()) < base_count; ++k) {
      const double x = 2.0 * cell + (W - 4.0 * cell) * u(rng);
      if (std::all_of(starts.begin(), starts.end(), [&](double s) { return std::abs(s - x) >= 2.5 * cell; })) {
        starts.push_back(x);
      }
    }
    if (static_cast<int>(starts.size()) < base_count) continue;
    std::sort(starts.begin(), starts.end());

    std::vector<synth_detail::LaneShape> shapes;
    for (double x : starts) shapes.push_back({x, xv, bend, 0.0});

    if (paired) {
      // The outermost lane on a random side gets the partner.
      const bool left = u(rng) < 0.5;
      auto& base = left ? shapes.front() : shapes.back();
      const double dir = left ? -1.0 : 1.0;
      const double cell_lo = std::floor(base.x0 / cell) * cell;
      if (fork) {
        base.x0 = std::clamp(base.x0, cell_lo + 1.0, cell_lo + cell - 1.0);
        synth_detail::LaneShape branch = base;
        branch.branch = dir * W * (0.18 + 0.12 * u(rng));
        shapes.push_back(branch);
      } else {
        // Dense: both lanes inside the same cell, dense_gap apart at the bottom.
        const double margin = (cell - cfg.dense_gap) / 2.0;
        const double inner = left ? cell_lo + margin + cfg.dense_gap : cell_lo + margin;
        base.x0 = inner;
        synth_detail::LaneShape partner = base;
        partner.x0 = inner + dir * cfg.dense_gap;
        partner.xv = base.xv + dir * cfg.dense_gap * 0.5;
        shapes.push_back(partner);
      }
    }

    const double s_top = 0.82 + 0.1 * u(rng);
    placed = true;
    for (const auto& s : shapes) {
      auto lane = synth_detail::trace(s, y_bottom, y_vanish, s_top, W, samples);
      if (lane.size() < 2 || lane.y_bottom() - lane.y_top() < 0.25 * H) {
        placed = false;
        break;
      }
      sample.lanes.push_back(std::move(lane));
    }
  }
  if (!placed) throw ConfigError("could not place lanes inside the image; reduce lane_count or curvature_max");
  std::stable_sort(sample.lanes.begin(), sample.lanes.end(),
                   [](const LanePolyline& a, const LanePolyline& b) { return a.points[0].x < b.points[0].x; });

  sample.category = fork    ? SceneCategory::Fork
                    : dense ? SceneCategory::Dense
                    : bend_mag > 0.5 * std::max(cfg.curvature_max, 1e-9) && cfg.curvature_max > 0
                        ? SceneCategory::Curve
                        : SceneCategory::Normal;

  // Road texture: darker sky band above the horizon, textured asphalt below.
  Image img(H, W);
  synth_detail::Texture tex;
  for (int k = 0; k < 4; ++k) {
    tex.p[3 * k] = 6.0 + 6.0 * u(rng);
    tex.p[3 * k + 1] = (u(rng) - 0.5) * 0.2;
    tex.p[3 * k + 2] = (u(rng) - 0.5) * 0.2;
  }
  const double road = 70.0 + 30.0 * u(rng);
  const double sky = 150.0 + 40.0 * u(rng);
  std::normal_distribution<double> noise(0.0, cfg.noise);
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      const double base = y < y_vanish ? sky - 0.2 * (y_vanish - y) : road + 25.0 * (y - y_vanish) / (H - y_vanish);
      const double v = base + tex(x, y);
      auto* p = img.px(y, x);
      p[0] = static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0));
      p[1] = static_cast<std::uint8_t>(std::clamp(v + 2.0, 0.0, 255.0));
      p[2] = static_cast<std::uint8_t>(std::clamp(v + 6.0, 0.0, 255.0));
    }
  }
  for (std::size_t k = 0; k < sample.lanes.size(); ++k) {
    const bool yellow = u(rng) < 0.25;
    const std::array<double, 3> color = yellow ? std::array<double, 3>{235, 205, 70} : std::array<double, 3>{240, 240, 235};
    synth_detail::draw_lane(img, sample.lanes[k], cfg.stroke_width(), color);
  }
  if (cfg.noise > 0.0) {
    for (auto& c : img.rgb) c = static_cast<std::uint8_t>(std::clamp(std::lround(c + noise(rng)), 0L, 255L));
  }
  sample.image = std::move(img);
  return sample;
}

}  // namespace condlane

#pragma once

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "condlane/geometry.hpp"
#include "condlane/synth.hpp"

namespace condlane {

using Rgb = std::array<std::uint8_t, 3>;

// Instance k is drawn with kPalette[k % size].
inline constexpr std::array<Rgb, 8> kPalette{{{230, 25, 75},
                                              {60, 180, 75},
                                              {255, 225, 25},
                                              {0, 130, 200},
                                              {245, 130, 48},
                                              {145, 30, 180},
                                              {70, 240, 240},
                                              {240, 50, 230}}};

inline void put_pixel(Image& img, int x, int y, const Rgb& c) {
  if (x < 0 || y < 0 || x >= img.width || y >= img.height) return;
  std::uint8_t* p = img.px(y, x);
  p[0] = c[0], p[1] = c[1], p[2] = c[2];
}

inline void fill_disc(Image& img, double cx, double cy, double r, const Rgb& c) {
  for (int y = static_cast<int>(std::floor(cy - r)); y <= static_cast<int>(std::ceil(cy + r)); ++y) {
    for (int x = static_cast<int>(std::floor(cx - r)); x <= static_cast<int>(std::ceil(cx + r)); ++x) {
      if ((x + 0.5 - cx) * (x + 0.5 - cx) + (y + 0.5 - cy) * (y + 0.5 - cy) <= r * r) put_pixel(img, x, y, c);
    }
  }
}

inline void draw_polyline(Image& img, const LanePolyline& lane, double thickness, const Rgb& c) {
  const auto& p = lane.points;
  for (std::size_t k = 0; k + 1 < p.size(); ++k) {
    const double len = std::hypot(p[k + 1].x - p[k].x, p[k + 1].y - p[k].y);
    const int steps = std::max(1, static_cast<int>(std::ceil(len * 2)));
    for (int s = 0; s <= steps; ++s) {
      const double t = static_cast<double>(s) / steps;
      fill_disc(img, p[k].x + t * (p[k + 1].x - p[k].x), p[k].y + t * (p[k + 1].y - p[k].y), thickness / 2, c);
    }
  }
}

// Hollow square with a dark outline so it stays visible on any lane colour.
inline void draw_marker(Image& img, double cx, double cy, int half) {
  const int x0 = static_cast<int>(std::lround(cx)), y0 = static_cast<int>(std::lround(cy));
  for (int d = -half - 1; d <= half + 1; ++d) {
    for (int e : {-half - 1, half + 1}) {
      put_pixel(img, x0 + d, y0 + e, {0, 0, 0});
      put_pixel(img, x0 + e, y0 + d, {0, 0, 0});
    }
    for (int e : {-half, half}) {
      if (std::abs(d) > half) continue;
      put_pixel(img, x0 + d, y0 + e, {255, 255, 255});
      put_pixel(img, x0 + e, y0 + d, {255, 255, 255});
    }
  }
}

namespace font_detail {

// 3x5 glyphs, one row per 3 bits (MSB = left column).
inline const std::array<std::uint8_t, 5>* glyph(char ch) {
  static const std::array<std::uint8_t, 5> digits[10] = {
      {7, 5, 5, 5, 7}, {2, 6, 2, 2, 7}, {7, 1, 7, 4, 7}, {7, 1, 7, 1, 7}, {5, 5, 7, 1, 1},
      {7, 4, 7, 1, 7}, {7, 4, 7, 5, 7}, {7, 1, 1, 1, 1}, {7, 5, 7, 5, 7}, {7, 5, 7, 1, 7}};
  static const std::array<std::uint8_t, 5> l{6, 2, 2, 2, 7}, a{0, 6, 3, 5, 7}, n{0, 6, 5, 5, 5}, e{0, 7, 7, 4, 7},
      s{0, 3, 6, 1, 6};
  if (ch >= '0' && ch <= '9') return &digits[ch - '0'];
  switch (ch) {
    case 'l': return &l;
    case 'a': return &a;
    case 'n': return &n;
    case 'e': return &e;
    case 's': return &s;
    default: return nullptr;  // rendered as a blank cell
  }
}

}  // namespace font_detail

// Draws `text` on a dark backing box at (x, y) with `scale`-pixel dots.
inline void draw_text(Image& img, int x, int y, const std::string& text, int scale = 2) {
  const int w = static_cast<int>(text.size()) * 4 * scale + scale, h = 7 * scale;
  for (int yy = y; yy < y + h; ++yy) {
    for (int xx = x; xx < x + w; ++xx) put_pixel(img, xx, yy, {0, 0, 0});
  }
  for (std::size_t i = 0; i < text.size(); ++i) {
    const auto* g = font_detail::glyph(text[i]);
    if (!g) continue;
    for (int r = 0; r < 5; ++r) {
      for (int c = 0; c < 3; ++c) {
        if (!((*g)[static_cast<std::size_t>(r)] >> (2 - c) & 1)) continue;
        for (int dy = 0; dy < scale; ++dy) {
          for (int dx = 0; dx < scale; ++dx) {
            put_pixel(img, x + scale + static_cast<int>(i) * 4 * scale + c * scale + dx, y + scale + r * scale + dy,
                      {255, 255, 255});
          }
        }
      }
    }
  }
}

struct OverlayLane {
  LanePolyline lane;
  double marker_x = 0.0, marker_y = 0.0;  // proposal point in pixels
};

// Copies `base`, draws each lane in its palette colour, then the proposal
// markers and an "N lanes" caption.
inline Image render_overlay(const Image& base, const std::vector<OverlayLane>& lanes) {
  Image out = base;
  const double thickness = std::max(2.0, base.width / 160.0);
  for (std::size_t k = 0; k < lanes.size(); ++k) draw_polyline(out, lanes[k].lane, thickness, kPalette[k % kPalette.size()]);
  const int half = std::max(2, base.width / 128);
  for (const auto& l : lanes) draw_marker(out, l.marker_x, l.marker_y, half);
  draw_text(out, 2, 2, std::to_string(lanes.size()) + (lanes.size() == 1 ? " lane" : " lanes"));
  return out;
}

}  // namespace condlane

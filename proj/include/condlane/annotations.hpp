#pragma once

#include <cmath>
#include <iomanip>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "condlane/geometry.hpp"
#include "condlane/metrics.hpp"

namespace condlane {

// ---- CULane text: one lane per line, "x1 y1 x2 y2 ..." -----------------

inline void write_culane(std::ostream& out, const std::vector<LanePolyline>& lanes) {
  out << std::fixed << std::setprecision(6);
  for (const auto& lane : lanes) {
    for (std::size_t k = 0; k < lane.size(); ++k) {
      if (k) out << ' ';
      out << lane.points[k].x << ' ' << lane.points[k].y;
    }
    out << '\n';
  }
}

// Blank lines are ignored; lanes with fewer than two points are skipped and
// reported through `warnings`.
inline std::vector<LanePolyline> read_culane(std::istream& in, std::vector<std::string>* warnings = nullptr) {
  std::vector<LanePolyline> lanes;
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    std::istringstream ss(line);
    std::vector<double> values;
    std::string tok;
    while (ss >> tok) {
      std::size_t used = 0;
      double v = 0.0;
      try {
        v = std::stod(tok, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != tok.size() || !std::isfinite(v)) throw ParseError("not a number: '" + tok + "'", number);
      values.push_back(v);
    }
    if (values.empty()) continue;
    if (values.size() % 2 != 0) throw ParseError("odd number of coordinates", number);
    LanePolyline lane;
    for (std::size_t k = 0; k < values.size(); k += 2) lane.points.push_back({values[k], values[k + 1]});
    if (lane.size() < 2) {
      if (warnings) warnings->push_back("line " + std::to_string(number) + ": lane with fewer than 2 points skipped");
      continue;
    }
    lanes.push_back(std::move(lane));
  }
  return lanes;
}

// ---- TuSimple JSON lines ----------------------------------------------

inline nlohmann::ordered_json tusimple_to_json(const TuSimpleRecord& r) {
  auto num = [](double v) -> nlohmann::ordered_json {
    if (v == std::round(v) && std::abs(v) < 1e9) return static_cast<long long>(v);
    return v;
  };
  nlohmann::ordered_json j;
  j["lanes"] = nlohmann::ordered_json::array();
  for (const auto& lane : r.lanes) {
    auto arr = nlohmann::ordered_json::array();
    for (double x : lane) arr.push_back(num(x));
    j["lanes"].push_back(arr);
  }
  j["h_samples"] = nlohmann::ordered_json::array();
  for (double h : r.h_samples) j["h_samples"].push_back(num(h));
  j["raw_file"] = r.raw_file;
  return j;
}

inline void write_tusimple(std::ostream& out, const std::vector<TuSimpleRecord>& records) {
  for (const auto& r : records) {
    check_tusimple_record(r);
    out << tusimple_to_json(r).dump() << '\n';
  }
}

inline std::vector<TuSimpleRecord> read_tusimple(std::istream& in) {
  std::vector<TuSimpleRecord> out;
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    TuSimpleRecord r;
    try {
      const auto j = nlohmann::json::parse(line);
      r.raw_file = j.at("raw_file").get<std::string>();
      r.h_samples = j.at("h_samples").get<std::vector<double>>();
      r.lanes = j.at("lanes").get<std::vector<std::vector<double>>>();
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(e.what(), number);
    }
    check_tusimple_record(r);
    out.push_back(std::move(r));
  }
  return out;
}

// Polylines over the present h-samples, bottom to top; lanes with fewer than
// two present points are dropped.
inline std::vector<LanePolyline> tusimple_polylines(const TuSimpleRecord& r) {
  check_tusimple_record(r);
  std::vector<LanePolyline> lanes;
  for (const auto& xs : r.lanes) {
    LanePolyline lane;
    for (std::size_t s = 0; s < xs.size(); ++s) {
      if (xs[s] >= 0.0) lane.points.push_back({xs[s], r.h_samples[s]});
    }
    std::sort(lane.points.begin(), lane.points.end(), [](const Point& a, const Point& b) { return a.y > b.y; });
    if (lane.size() >= 2) lanes.push_back(std::move(lane));
  }
  return lanes;
}

inline TuSimpleRecord tusimple_record(const std::string& raw_file, const std::vector<LanePolyline>& lanes,
                                      const std::vector<double>& h_samples) {
  TuSimpleRecord r{raw_file, h_samples, {}};
  for (const auto& l : lanes) r.lanes.push_back(sample_at_heights(l, h_samples));
  return r;
}

// Evenly spaced h-samples from the image bottom upward, returned top-down.
inline std::vector<double> default_h_samples(const ImageSpec& image, int count = 28) {
  std::vector<double> h;
  const double step = static_cast<double>(image.height) / count;
  for (int k = count - 1; k >= 0; --k) h.push_back(std::floor(image.height - 1 - k * step));
  return h;
}

}  // namespace condlane

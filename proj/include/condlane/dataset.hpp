#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "condlane/annotations.hpp"
#include "condlane/config.hpp"
#include "condlane/synth.hpp"

namespace condlane {

inline constexpr const char* kDatasetSchema = "condlane.dataset/1";

struct DatasetEntry {
  std::string id;
  std::string image;   // relative to the dataset root
  std::string lanes;   // CULane-style label file, relative
  std::string category;
  int lane_count = 0;
  std::string digest;  // FNV-1a 64 of the image bytes
};

struct Dataset {
  std::filesystem::path root;
  SceneConfig scene;
  std::vector<double> h_samples;
  std::vector<DatasetEntry> entries;
};

struct LabeledImage {
  std::string id;
  Image image;
  std::vector<LanePolyline> lanes;
  std::string category;
};

inline std::string fnv1a_hex(const std::vector<std::uint8_t>& bytes) {
  std::uint64_t h = 1469598103934665603ull;
  for (std::uint8_t b : bytes) h = (h ^ b) * 1099511628211ull;
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

inline bool directory_has_files(const std::filesystem::path& dir) {
  return std::filesystem::exists(dir) && !std::filesystem::is_empty(dir);
}

// Writes images/, labels/ (CULane text per image plus one TuSimple JSON-lines
// file), gen.log.jsonl and manifest.json. Refuses a non-empty directory
// unless `force`, in which case only those entries are replaced.
inline Json write_dataset(const std::filesystem::path& root, const SceneConfig& scene, int count, bool force) {
  namespace fs = std::filesystem;
  scene.validate();
  if (count < 0) throw ConfigError("count must be >= 0");
  if (directory_has_files(root) && !force) {
    throw ConfigError("output directory " + root.string() + " is not empty (use --force to overwrite)");
  }
  for (const char* owned : {"images", "labels", "manifest.json", "gen.log.jsonl"}) fs::remove_all(root / owned);
  fs::create_directories(root / "images");
  fs::create_directories(root / "labels");

  const auto h_samples = default_h_samples(scene.image);
  std::ofstream tusimple(root / "labels" / "tusimple.json");
  std::ofstream log(root / "gen.log.jsonl");
  Json samples = Json::array();
  std::map<std::string, int> histogram{{"normal", 0}, {"fork", 0}, {"dense", 0}, {"curve", 0}};
  for (int i = 0; i < count; ++i) {
    const Sample s = generate_scene(scene, static_cast<std::uint64_t>(i));
    char id[16];
    std::snprintf(id, sizeof(id), "%06d", i);
    const std::string image = std::string("images/") + id + ".ppm";
    const std::string lanes = std::string("labels/") + id + ".lines.txt";
    write_ppm((root / image).string(), s.image);
    std::ofstream lf(root / lanes);
    write_culane(lf, s.lanes);
    write_tusimple(tusimple, {tusimple_record(image, s.lanes, h_samples)});
    const std::string cat = to_string(s.category);
    ++histogram[cat];
    log << Json{{"index", i}, {"category", cat}, {"lanes", s.lanes.size()}}.dump() << '\n';
    samples.push_back(Json{{"id", id},
                           {"image", image},
                           {"lanes", lanes},
                           {"category", cat},
                           {"lane_count", s.lanes.size()},
                           {"digest", fnv1a_hex(s.image.rgb)}});
  }
  Json manifest{{"schema", kDatasetSchema},
                {"scene", to_json(scene)},
                {"count", count},
                {"h_samples", h_samples},
                {"tusimple_labels", "labels/tusimple.json"},
                {"categories", histogram},
                {"samples", samples}};
  std::ofstream(root / "manifest.json") << manifest.dump(2) << '\n';
  return manifest;
}

inline Dataset open_dataset(const std::filesystem::path& root) {
  std::ifstream in(root / "manifest.json");
  if (!in) throw FormatError("no manifest.json in " + root.string());
  Json m;
  try {
    m = Json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("corrupt manifest in " + root.string() + ": " + e.what());
  }
  if (m.value("schema", "") != kDatasetSchema) throw FormatError("unsupported dataset schema in " + root.string());
  Dataset d;
  d.root = root;
  d.scene = scene_from_json(m.at("scene"), "manifest.scene");
  d.h_samples = m.at("h_samples").get<std::vector<double>>();
  for (const auto& s : m.at("samples")) {
    d.entries.push_back({s.at("id"), s.at("image"), s.at("lanes"), s.at("category"), s.at("lane_count"),
                         s.value("digest", "")});
  }
  return d;
}

inline LabeledImage load_entry(const Dataset& d, const DatasetEntry& e) {
  LabeledImage li;
  li.id = e.id;
  li.category = e.category;
  li.image = read_ppm((d.root / e.image).string());
  std::ifstream lf(d.root / e.lanes);
  if (!lf) throw FormatError("missing label file " + e.lanes);
  li.lanes = read_culane(lf);
  return li;
}

inline std::vector<LabeledImage> load_all(const Dataset& d) {
  std::vector<LabeledImage> out;
  for (const auto& e : d.entries) out.push_back(load_entry(d, e));
  return out;
}

// In-memory equivalent of write_dataset + load_all.
inline std::vector<LabeledImage> generate_dataset(const SceneConfig& scene, int count) {
  std::vector<LabeledImage> out;
  for (int i = 0; i < count; ++i) {
    Sample s = generate_scene(scene, static_cast<std::uint64_t>(i));
    char id[16];
    std::snprintf(id, sizeof(id), "%06d", i);
    out.push_back({id, std::move(s.image), std::move(s.lanes), to_string(s.category)});
  }
  return out;
}

}  // namespace condlane

#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>

#include <nlohmann/json.hpp>

#include "condlane/params.hpp"

namespace condlane {

// Layout (all integers little-endian):
//   8 bytes  magic "CLNCKPT\0"
//   u32      format version
//   u64      header length L
//   L bytes  UTF-8 JSON header {config, state, tensors:[{name,dtype,shape,offset,bytes}]}
//   ...      raw float32 tensor data; offsets are relative to the data start
inline constexpr char kCheckpointMagic[8] = {'C', 'L', 'N', 'C', 'K', 'P', 'T', '\0'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

struct CheckpointState {
  std::int64_t step = 0;
  int epoch = 0;
};

struct CheckpointContents {
  nlohmann::ordered_json config;
  CheckpointState state;
};

namespace checkpoint_detail {

template <typename T>
void append(nlohmann::ordered_json& index, std::vector<float>& blob, const std::string& name, const Tensor<T>& t) {
  const std::size_t offset = blob.size() * sizeof(float);
  for (T v : t.values()) blob.push_back(static_cast<float>(v));
  index.push_back({{"name", name}, {"dtype", "f32"}, {"shape", t.shape()}, {"offset", offset},
                   {"bytes", t.size() * sizeof(float)}});
}

}  // namespace checkpoint_detail

// Parameters are stored as "param/<name>", batch-norm statistics as
// "buffer/<name>" and optimizer moments as "adam.m/<name>", "adam.v/<name>".
template <typename T>
void save_checkpoint(const std::string& path, const nlohmann::ordered_json& config, const CheckpointState& state,
                     const ParamStore<T>& store, Adam<T>* adam = nullptr) {
  nlohmann::ordered_json index = nlohmann::ordered_json::array();
  std::vector<float> blob;
  for (const auto& [name, p] : store.params()) checkpoint_detail::append(index, blob, "param/" + name, p->value);
  for (const auto& [name, b] : store.buffers()) checkpoint_detail::append(index, blob, "buffer/" + name, *b);
  nlohmann::ordered_json st{{"step", state.step}, {"epoch", state.epoch}};
  if (adam) {
    st["adam_steps"] = adam->steps();
    for (const auto& [name, m] : adam->first_moments()) checkpoint_detail::append(index, blob, "adam.m/" + name, m);
    for (const auto& [name, v] : adam->second_moments()) checkpoint_detail::append(index, blob, "adam.v/" + name, v);
  }
  const nlohmann::ordered_json header{{"config", config}, {"state", st}, {"tensors", index}};
  const std::string text = header.dump();

  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw FormatError("cannot write checkpoint " + path);
    const std::uint32_t version = kCheckpointVersion;
    const std::uint64_t len = text.size();
    out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
    out.write(reinterpret_cast<const char*>(&version), sizeof(version));
    out.write(reinterpret_cast<const char*>(&len), sizeof(len));
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    out.write(reinterpret_cast<const char*>(blob.data()), static_cast<std::streamsize>(blob.size() * sizeof(float)));
    if (!out) throw FormatError("failed writing checkpoint " + path);
  }
  std::filesystem::rename(tmp, path);
}

struct CheckpointFile {
  nlohmann::ordered_json header;
  std::vector<char> data;
};

inline CheckpointFile read_checkpoint_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint " + path);
  char magic[8];
  std::uint32_t version = 0;
  std::uint64_t len = 0;
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kCheckpointMagic, 8) != 0) throw FormatError(path + " is not a checkpoint");
  in.read(reinterpret_cast<char*>(&version), sizeof(version));
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  if (!in || version != kCheckpointVersion) throw FormatError(path + ": unsupported checkpoint version");
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw FormatError(path + ": truncated header");
  CheckpointFile f;
  try {
    f.header = nlohmann::ordered_json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path + ": corrupt header: " + e.what());
  }
  f.data.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  return f;
}

inline nlohmann::ordered_json read_checkpoint_config(const std::string& path) {
  return read_checkpoint_file(path).header.at("config");
}

// Restores every parameter and buffer (names and shapes must match exactly)
// and, when `adam` is given, the optimizer moments.
template <typename T>
CheckpointContents load_checkpoint(const std::string& path, ParamStore<T>& store, Adam<T>* adam = nullptr) {
  const CheckpointFile f = read_checkpoint_file(path);
  std::map<std::string, const nlohmann::ordered_json*> index;
  for (const auto& e : f.header.at("tensors")) index[e.at("name").get<std::string>()] = &e;

  auto fetch = [&](const std::string& key, const Shape* expected) {
    auto it = index.find(key);
    if (it == index.end()) throw FormatError(path + ": missing tensor " + key);
    const auto& e = *it->second;
    const Shape shape = e.at("shape").get<Shape>();
    if (expected && shape != *expected) {
      throw FormatError(path + ": tensor " + key + " has shape " + shape_str(shape) + ", expected " + shape_str(*expected));
    }
    const auto offset = e.at("offset").get<std::size_t>();
    const auto bytes = e.at("bytes").get<std::size_t>();
    if (e.at("dtype") != "f32" || bytes != shape_numel(shape) * sizeof(float) || offset + bytes > f.data.size()) {
      throw FormatError(path + ": tensor " + key + " is corrupt");
    }
    Tensor<T> t(shape);
    for (std::size_t i = 0; i < t.size(); ++i) {
      float v;
      std::memcpy(&v, f.data.data() + offset + i * sizeof(float), sizeof(float));
      t[i] = static_cast<T>(v);
    }
    return t;
  };

  std::size_t expected_count = 0;
  for (const auto& [name, p] : store.params()) {
    p->value = fetch("param/" + name, &p->value.shape());
    ++expected_count;
  }
  for (const auto& [name, b] : store.buffers()) {
    *b = fetch("buffer/" + name, &b->shape());
    ++expected_count;
  }
  std::size_t stored_model = 0;
  for (const auto& [key, _] : index) stored_model += key.rfind("param/", 0) == 0 || key.rfind("buffer/", 0) == 0;
  if (stored_model != expected_count) throw FormatError(path + ": checkpoint holds tensors this model does not have");

  CheckpointContents c;
  c.config = f.header.at("config");
  const auto& st = f.header.at("state");
  c.state.step = st.at("step").get<std::int64_t>();
  c.state.epoch = st.at("epoch").get<int>();
  if (adam) {
    adam->first_moments().clear();
    adam->second_moments().clear();
    for (const auto& [key, _] : index) {
      if (key.rfind("adam.m/", 0) == 0) adam->first_moments()[key.substr(7)] = fetch(key, nullptr);
      if (key.rfind("adam.v/", 0) == 0) adam->second_moments()[key.substr(7)] = fetch(key, nullptr);
    }
    adam->set_steps(st.value("adam_steps", std::int64_t{0}));
  }
  return c;
}

}  // namespace condlane

#pragma once

// Checkpoints: <prefix>.json manifest (config, dtype, parameter names,
// shapes, byte offsets) plus <prefix>.bin, one flat little-endian blob of
// parameter data in manifest order.

#include <fstream>
#include <json.hpp>
#include <string>

#include "streamcap/model.hpp"
#include "streamcap/run_config.hpp"

namespace streamcap {

namespace detail {
template <typename Scalar>
const char* dtype_name() {
  return sizeof(Scalar) == 4 ? "f32" : "f64";
}
}  // namespace detail

template <typename Scalar>
void save_checkpoint(const std::string& prefix, const Model<Scalar>& model) {
  nlohmann::json manifest;
  manifest["format_version"] = 1;
  manifest["dtype"] = detail::dtype_name<Scalar>();
  RunConfig wrapper;
  wrapper.model = model.config();
  manifest["model"] = nlohmann::json::parse(run_config_to_json(wrapper))["model"];
  nlohmann::json params = nlohmann::json::array();
  std::ofstream blob(prefix + ".bin", std::ios::binary);
  if (!blob) throw DataError("cannot write checkpoint blob: " + prefix + ".bin");
  size_t offset = 0;
  for (const auto* p : model.params().all()) {
    nlohmann::json entry;
    entry["name"] = p->name;
    entry["shape"] = p->tensor.shape();
    entry["offset"] = offset;
    params.push_back(std::move(entry));
    const auto vals = p->tensor.values();
    blob.write(reinterpret_cast<const char*>(vals.data()),
               std::streamsize(vals.size() * sizeof(Scalar)));
    offset += vals.size() * sizeof(Scalar);
  }
  manifest["params"] = std::move(params);
  manifest["total_bytes"] = offset;
  std::ofstream mf(prefix + ".json");
  if (!mf) throw DataError("cannot write checkpoint manifest: " + prefix + ".json");
  mf << manifest.dump(2) << '\n';
}

inline nlohmann::json read_checkpoint_manifest(const std::string& prefix) {
  std::ifstream mf(prefix + ".json");
  if (!mf) throw DataError("cannot open checkpoint manifest: " + prefix + ".json");
  nlohmann::json manifest;
  try {
    mf >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("checkpoint manifest " + prefix + ".json: " + e.what());
  }
  return manifest;
}

inline ModelConfig read_checkpoint_config(const std::string& prefix) {
  auto manifest = read_checkpoint_manifest(prefix);
  nlohmann::json wrapper;
  wrapper["model"] = manifest.at("model");
  return run_config_from_json(wrapper.dump()).model;
}

inline std::string read_checkpoint_dtype(const std::string& prefix) {
  return read_checkpoint_manifest(prefix).value("dtype", "f32");
}

template <typename Scalar>
void load_checkpoint_into(const std::string& prefix, Model<Scalar>& model) {
  auto manifest = read_checkpoint_manifest(prefix);
  if (manifest.value("dtype", "f32") != detail::dtype_name<Scalar>())
    throw DataError("checkpoint dtype " + manifest.value("dtype", "?") +
                    " does not match the requested scalar type");
  std::ifstream blob(prefix + ".bin", std::ios::binary);
  if (!blob) throw DataError("cannot open checkpoint blob: " + prefix + ".bin");

  std::map<std::string, std::pair<Shape, size_t>> entries;
  for (const auto& e : manifest.at("params")) {
    entries[e.at("name").get<std::string>()] = {e.at("shape").get<Shape>(),
                                                e.at("offset").get<size_t>()};
  }
  for (auto* p : model.params().all()) {
    auto it = entries.find(p->name);
    if (it == entries.end()) throw DataError("checkpoint is missing parameter " + p->name);
    if (it->second.first != p->tensor.shape())
      throw DataError("checkpoint shape mismatch for " + p->name + ": file " +
                      shape_str(it->second.first) + " vs model " + shape_str(p->tensor.shape()));
    auto& vals = p->tensor.mutable_values();
    blob.seekg(std::streamoff(it->second.second));
    blob.read(reinterpret_cast<char*>(vals.data()), std::streamsize(vals.size() * sizeof(Scalar)));
    if (!blob) throw DataError("checkpoint blob truncated at parameter " + p->name);
  }
}

inline void save_vocabulary(const std::string& path, const Vocabulary& vocab) {
  nlohmann::json j(vocab.to_map());
  std::ofstream out(path);
  if (!out) throw DataError("cannot write vocabulary: " + path);
  out << j.dump(2) << '\n';
}

inline Vocabulary load_vocabulary(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open vocabulary: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("vocabulary " + path + ": " + e.what());
  }
  return Vocabulary::from_map(j.get<std::map<std::string, int>>());
}

}  // namespace streamcap

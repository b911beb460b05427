#pragma once

// JSON run configuration: model + codec + train + decode blocks, paths and
// the master seed. Supports dotted --set key=value overrides so a run is
// reproducible from the persisted file alone.

#include <string>
#include <vector>

#include "streamcap/codec.hpp"
#include "streamcap/infer.hpp"
#include "streamcap/model.hpp"
#include "streamcap/train.hpp"

namespace streamcap {

struct RunPaths {
  std::string dataset;
  std::string checkpoint;
  std::string output;
};

struct RunConfig {
  ModelConfig model;
  CodecConfig codec;
  TrainConfig train;
  DecodeConfig decode;
  RunPaths paths;
  uint64_t seed = 0;

  void validate() const;
};

std::string run_config_to_json(const RunConfig& cfg);
RunConfig run_config_from_json(const std::string& text);
RunConfig load_run_config(const std::string& path, const std::vector<std::string>& overrides);
void save_run_config(const std::string& path, const RunConfig& cfg);

// "a.b.c=value"; value parsed as JSON when possible, else taken as a string.
void apply_override(std::string& json_text, const std::string& assignment);

}  // namespace streamcap

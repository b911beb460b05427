#include "streamcap/run_config.hpp"

#include <fstream>
#include <json.hpp>
#include <sstream>

namespace streamcap {

using nlohmann::json;

namespace {

json model_to_json(const ModelConfig& m) {
  return json{{"segments", m.segments},
              {"frames_per_segment", m.frames_per_segment},
              {"frame_dim", m.frame_dim},
              {"encoder_tokens", m.encoder_tokens},
              {"reduced_tokens", m.reduced_tokens},
              {"tokens_per_segment", m.tokens_per_segment},
              {"d_model", m.d_model},
              {"heads", m.heads},
              {"encoder_layers", m.encoder_layers},
              {"reducer_layers", m.reducer_layers},
              {"memory_layers", m.memory_layers},
              {"decoder_layers", m.decoder_layers},
              {"ff_mult", m.ff_mult},
              {"time_bins", m.time_bins},
              {"vocab_size", m.vocab_size},
              {"max_segments", m.max_segments}};
}

ModelConfig model_from_json(const json& j) {
  ModelConfig m;
  m.segments = j.value("segments", m.segments);
  m.frames_per_segment = j.value("frames_per_segment", m.frames_per_segment);
  m.frame_dim = j.value("frame_dim", m.frame_dim);
  m.encoder_tokens = j.value("encoder_tokens", m.encoder_tokens);
  m.reduced_tokens = j.value("reduced_tokens", m.reduced_tokens);
  m.tokens_per_segment = j.value("tokens_per_segment", m.tokens_per_segment);
  m.d_model = j.value("d_model", m.d_model);
  m.heads = j.value("heads", m.heads);
  m.encoder_layers = j.value("encoder_layers", m.encoder_layers);
  m.reducer_layers = j.value("reducer_layers", m.reducer_layers);
  m.memory_layers = j.value("memory_layers", m.memory_layers);
  m.decoder_layers = j.value("decoder_layers", m.decoder_layers);
  m.ff_mult = j.value("ff_mult", m.ff_mult);
  m.time_bins = j.value("time_bins", m.time_bins);
  m.vocab_size = j.value("vocab_size", m.vocab_size);
  m.max_segments = j.value("max_segments", m.max_segments);
  return m;
}

json codec_to_json(const CodecConfig& c) {
  return json{{"bins", c.bins},
              {"time_mode", time_mode_name(c.time_mode)},
              {"interval_format", interval_format_name(c.interval_format)},
              {"use_prefix", c.use_prefix},
              {"max_caption_tokens", c.max_caption_tokens},
              {"clip_duration_cap", c.clip_duration_cap}};
}

CodecConfig codec_from_json(const json& j) {
  CodecConfig c;
  c.bins = j.value("bins", c.bins);
  c.time_mode = time_mode_from_name(j.value("time_mode", std::string(time_mode_name(c.time_mode))));
  c.interval_format = interval_format_from_name(
      j.value("interval_format", std::string(interval_format_name(c.interval_format))));
  c.use_prefix = j.value("use_prefix", c.use_prefix);
  c.max_caption_tokens = j.value("max_caption_tokens", c.max_caption_tokens);
  c.clip_duration_cap = j.value("clip_duration_cap", c.clip_duration_cap);
  return c;
}

json train_to_json(const TrainConfig& t) {
  return json{{"lr", t.lr},
              {"beta1", t.beta1},
              {"beta2", t.beta2},
              {"adam_eps", t.adam_eps},
              {"label_smoothing", t.label_smoothing},
              {"dropout", t.dropout},
              {"weight_decay", t.weight_decay},
              {"clip_norm", t.clip_norm},
              {"batch_size", t.batch_size},
              {"steps", t.steps},
              {"warmup_steps", t.warmup_steps},
              {"seed", t.seed}};
}

TrainConfig train_from_json(const json& j) {
  TrainConfig t;
  t.lr = j.value("lr", t.lr);
  t.beta1 = j.value("beta1", t.beta1);
  t.beta2 = j.value("beta2", t.beta2);
  t.adam_eps = j.value("adam_eps", t.adam_eps);
  t.label_smoothing = j.value("label_smoothing", t.label_smoothing);
  t.dropout = j.value("dropout", t.dropout);
  t.weight_decay = j.value("weight_decay", t.weight_decay);
  t.clip_norm = j.value("clip_norm", t.clip_norm);
  t.batch_size = j.value("batch_size", t.batch_size);
  t.steps = j.value("steps", t.steps);
  t.warmup_steps = j.value("warmup_steps", t.warmup_steps);
  t.seed = j.value("seed", t.seed);
  return t;
}

json decode_to_json(const DecodeConfig& d) {
  return json{{"strategy", d.strategy == DecodeStrategy::kGreedy ? "greedy" : "beam"},
              {"beam_width", d.beam_width},
              {"num_samples", d.num_samples},
              {"temperature", d.temperature},
              {"nms_iou", d.nms_iou}};
}

DecodeConfig decode_from_json(const json& j) {
  DecodeConfig d;
  const std::string strat = j.value("strategy", std::string("beam"));
  if (strat == "greedy")
    d.strategy = DecodeStrategy::kGreedy;
  else if (strat == "beam")
    d.strategy = DecodeStrategy::kBeam;
  else
    throw ConfigError("decode: unknown strategy '" + strat + "'");
  d.beam_width = j.value("beam_width", d.beam_width);
  d.num_samples = j.value("num_samples", d.num_samples);
  d.temperature = j.value("temperature", d.temperature);
  d.nms_iou = j.value("nms_iou", d.nms_iou);
  return d;
}

}  // namespace

void RunConfig::validate() const {
  model.validate();
  codec.validate();
  train.validate();
  decode.validate();
  if (codec.bins != model.time_bins)
    throw ConfigError("run config: codec.bins must equal model.time_bins");
  label_capacity(model, codec);  // throws when the prefix leaves no room
}

std::string run_config_to_json(const RunConfig& cfg) {
  json j;
  j["format_version"] = 1;
  j["seed"] = cfg.seed;
  j["model"] = model_to_json(cfg.model);
  j["codec"] = codec_to_json(cfg.codec);
  j["train"] = train_to_json(cfg.train);
  j["decode"] = decode_to_json(cfg.decode);
  j["paths"] = json{{"dataset", cfg.paths.dataset},
                    {"checkpoint", cfg.paths.checkpoint},
                    {"output", cfg.paths.output}};
  return j.dump(2);
}

RunConfig run_config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("run config: ") + e.what());
  }
  RunConfig cfg;
  cfg.seed = j.value("seed", uint64_t(0));
  if (j.contains("model")) cfg.model = model_from_json(j["model"]);
  if (j.contains("codec")) cfg.codec = codec_from_json(j["codec"]);
  if (j.contains("train")) cfg.train = train_from_json(j["train"]);
  if (j.contains("decode")) cfg.decode = decode_from_json(j["decode"]);
  if (j.contains("paths")) {
    cfg.paths.dataset = j["paths"].value("dataset", std::string());
    cfg.paths.checkpoint = j["paths"].value("checkpoint", std::string());
    cfg.paths.output = j["paths"].value("output", std::string());
  }
  return cfg;
}

void apply_override(std::string& json_text, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos)
    throw ConfigError("override '" + assignment + "' is not key=value");
  const std::string key = assignment.substr(0, eq);
  const std::string value = assignment.substr(eq + 1);
  json j = json::parse(json_text);
  json* node = &j;
  std::istringstream keys(key);
  std::string part;
  std::vector<std::string> parts;
  while (std::getline(keys, part, '.')) parts.push_back(part);
  if (parts.empty()) throw ConfigError("override '" + assignment + "' has an empty key");
  for (size_t i = 0; i + 1 < parts.size(); ++i) node = &(*node)[parts[i]];
  json parsed;
  try {
    parsed = json::parse(value);
  } catch (const json::exception&) {
    parsed = value;  // bare string
  }
  (*node)[parts.back()] = parsed;
  json_text = j.dump();
}

RunConfig load_run_config(const std::string& path, const std::vector<std::string>& overrides) {
  std::string text = "{}";
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open run config: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    text = buf.str();
  }
  for (const auto& o : overrides) apply_override(text, o);
  return run_config_from_json(text);
}

void save_run_config(const std::string& path, const RunConfig& cfg) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write run config: " + path);
  out << run_config_to_json(cfg) << '\n';
}

}  // namespace streamcap

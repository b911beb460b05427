// streamcap: synthetic data, training, streaming inference, evaluation and
// the decoder cost model behind one reproducible CLI.

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>

#include "streamcap/checkpoint.hpp"
#include "streamcap/eval.hpp"
#include "streamcap/flops.hpp"
#include "streamcap/run_config.hpp"
#include "streamcap/synth.hpp"

namespace fs = std::filesystem;
using namespace streamcap;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;

struct SynthArgs {
  SynthSpec spec;
  size_t count = 100;
  std::string output;
};

int cmd_synth(const SynthArgs& args) {
  auto data = generate_synthetic(args.spec, args.count);
  save_dataset_jsonl(args.output, data);
  auto st = validate_dataset(data);
  std::cerr << "wrote " << st.videos << " videos, " << st.events << " events to " << args.output
            << " (" << st.mean_captions_per_video << " captions/video, "
            << st.mean_words_per_video << " words/video)\n";
  return kExitOk;
}

struct TrainArgs {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string data_path;
  std::string output_dir = "runs/latest";
  std::string dtype = "f32";
};

template <typename Scalar>
int run_training(RunConfig cfg, const std::vector<VideoRecord>& data, const TrainArgs& args) {
  // Vocabulary is closed over the training captions.
  std::vector<std::string> caps;
  for (const auto& r : data)
    for (const auto& e : r.events) caps.push_back(e.caption);
  auto vocab = Vocabulary::from_captions(caps, cfg.codec.bins);
  if (cfg.model.vocab_size == 0) cfg.model.vocab_size = vocab.size();
  if (cfg.model.vocab_size != vocab.size())
    throw ConfigError("model.vocab_size " + std::to_string(cfg.model.vocab_size) +
                      " does not match the corpus vocabulary of " + std::to_string(vocab.size()));
  if (cfg.model.frame_dim == 0 && !data.empty())
    cfg.model.frame_dim = int(data[0].features[0].size());
  cfg.model.time_bins = cfg.codec.bins;
  cfg.validate();

  fs::create_directories(args.output_dir);
  save_run_config(args.output_dir + "/run_config.json", cfg);
  save_vocabulary(args.output_dir + "/vocab.json", vocab);

  Model<Scalar> model(cfg.model, cfg.seed);
  Trainer<Scalar> trainer(model, cfg.train);
  std::ofstream log(args.output_dir + "/train_log.jsonl");
  trainer.run(data, cfg.codec, vocab, [&](const StepLog& s) {
    nlohmann::json j{{"step", s.step}, {"loss", s.loss}, {"lr", s.lr}, {"grad_norm", s.grad_norm}};
    log << j.dump() << '\n';
    if (s.step % 100 == 0 || s.step == 1)
      std::cerr << "step " << s.step << " loss " << s.loss << "\n";
  });
  if (trainer.skipped() > 0)
    std::cerr << "skipped " << trainer.skipped() << " label-overflow samples\n";
  save_checkpoint(args.output_dir + "/model", model);
  std::cerr << "checkpoint written to " << args.output_dir << "/model.{json,bin}\n";
  return kExitOk;
}

int cmd_train(const TrainArgs& args) {
  RunConfig cfg = load_run_config(args.config_path, args.overrides);
  if (!args.data_path.empty()) cfg.paths.dataset = args.data_path;
  if (cfg.paths.dataset.empty()) throw ConfigError("train: no dataset path given");
  auto data = load_dataset_jsonl(cfg.paths.dataset);
  validate_dataset(data);
  if (args.dtype == "f32") return run_training<float>(std::move(cfg), data, args);
  if (args.dtype == "f64") return run_training<double>(std::move(cfg), data, args);
  throw ConfigError("train: dtype must be f32 or f64");
}

struct InferArgs {
  std::string checkpoint;
  std::string vocab_path;
  std::string data_path;
  std::string output;
  DecodeConfig decode;
  std::string strategy = "beam";
};

template <typename Scalar>
int run_inference(const InferArgs& args, const ModelConfig& mc, const Vocabulary& vocab,
                  const CodecConfig& codec) {
  Model<Scalar> model(mc, 0);
  load_checkpoint_into(args.checkpoint, model);
  auto data = load_dataset_jsonl(args.data_path);
  std::ofstream out(args.output);
  if (!out) throw DataError("cannot write predictions: " + args.output);
  size_t total_events = 0;
  for (const auto& video : data) {
    StreamSession<Scalar> session(model, codec, vocab, args.decode, video.duration, mc.segments);
    auto emit = [&](const std::vector<ScoredEvent>& events) {
      for (const auto& e : events) {
        nlohmann::json j{{"video_id", video.id},   {"segment_index", e.segment_index},
                         {"start", e.event.start}, {"end", e.event.end},
                         {"caption", e.event.caption}, {"score", e.score}};
        out << j.dump() << '\n';
        out.flush();  // line-buffered so downstream consumers see events live
        ++total_events;
      }
    };
    for (int s = 0; s < mc.segments; ++s)
      emit(session.push_segment(segment_frames_of<Scalar>(video, mc, s)));
    emit(session.finish());
  }
  std::cerr << "wrote " << total_events << " events for " << data.size() << " videos\n";
  return kExitOk;
}

int cmd_infer(InferArgs& args) {
  if (args.strategy == "greedy")
    args.decode.strategy = DecodeStrategy::kGreedy;
  else if (args.strategy == "beam")
    args.decode.strategy = DecodeStrategy::kBeam;
  else
    throw ConfigError("infer: unknown strategy '" + args.strategy + "'");
  args.decode.validate();
  if (args.vocab_path.empty())
    args.vocab_path = (fs::path(args.checkpoint).parent_path() / "vocab.json").string();
  auto vocab = load_vocabulary(args.vocab_path);
  auto mc = read_checkpoint_config(args.checkpoint);
  CodecConfig codec;
  // The codec travels with the run config next to the checkpoint when present.
  const auto run_cfg_path = fs::path(args.checkpoint).parent_path() / "run_config.json";
  if (fs::exists(run_cfg_path)) {
    codec = load_run_config(run_cfg_path.string(), {}).codec;
  } else {
    codec.bins = vocab.bins();
  }
  const auto dtype = read_checkpoint_dtype(args.checkpoint);
  if (dtype == "f64") return run_inference<double>(args, mc, vocab, codec);
  return run_inference<float>(args, mc, vocab, codec);
}

struct EvalArgs {
  std::string pred_path;
  std::string data_path;
  std::string output;
  std::string tsv_path;
};

int cmd_eval(const EvalArgs& args) {
  auto data = load_dataset_jsonl(args.data_path);
  validate_dataset(data);
  auto rows = load_predictions_jsonl(args.pred_path);
  auto report = evaluate_prediction_rows(rows, data);
  const std::string text = report.to_json_string();
  if (args.output.empty()) {
    std::cout << text << "\n";
  } else {
    std::ofstream out(args.output);
    if (!out) throw DataError("cannot write report: " + args.output);
    out << text << '\n';
    std::cerr << "report written to " << args.output << "\n";
  }
  if (!args.tsv_path.empty()) {
    std::ofstream tsv(args.tsv_path);
    tsv << report.to_tsv_header() << '\n' << report.to_tsv_row() << '\n';
  }
  return kExitOk;
}

struct FlopsArgs {
  std::string preset;
  CostConfig cfg;
  std::string output;
};

void print_cost_table(const CostConfig& cfg, const CostReport& r) {
  std::printf("%-18s %12s %12s %10s\n", "Model", "Global", "Factorized", "Savings");
  std::printf("%d seg, %d tok     %9.0f GF %9.0f GF   %+.0f%%\n", cfg.segments,
              cfg.segments * cfg.tokens_per_segment, r.global_total / 1e9,
              r.factorized_total / 1e9, r.savings_fraction * 100.0);
}

int cmd_flops(const FlopsArgs& args) {
  CostConfig cfg = args.cfg;
  if (args.preset == "paper-8seg") {
    cfg = calibrated_reference_config(8);
  } else if (args.preset == "paper-16seg") {
    cfg = calibrated_reference_config(16);
  } else if (!args.preset.empty()) {
    throw ConfigError("flops: unknown preset '" + args.preset + "'");
  }
  cfg.validate();
  auto report = compare(cfg);
  print_cost_table(cfg, report);
  const std::string text = report.to_json_string();
  if (!args.output.empty()) {
    std::ofstream out(args.output);
    if (!out) throw DataError("cannot write cost report: " + args.output);
    out << text << '\n';
  } else {
    std::cout << text << "\n";
  }
  return kExitOk;
}

int cmd_inspect(const std::string& checkpoint) {
  auto manifest = read_checkpoint_manifest(checkpoint);
  size_t total = 0;
  std::map<std::string, size_t> by_stage;
  for (const auto& e : manifest.at("params")) {
    const auto shape = e.at("shape").get<Shape>();
    const size_t n = numel(shape);
    total += n;
    const std::string name = e.at("name").get<std::string>();
    by_stage[name.substr(0, name.find('.'))] += n;
  }
  std::cout << "dtype: " << manifest.value("dtype", "?") << "\n";
  std::cout << "model config: " << manifest.at("model").dump() << "\n";
  std::cout << "parameters by stage:\n";
  for (const auto& [stage, n] : by_stage) std::cout << "  " << stage << ": " << n << "\n";
  std::cout << "total parameters: " << total << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"streaming dense video captioning with factorized decoding"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* sc_synth = app.add_subcommand("synth-data", "generate a synthetic dataset (JSONL)");
  sc_synth->add_option("--seed", synth.spec.seed, "generation seed");
  sc_synth->add_option("--count", synth.count, "number of videos");
  sc_synth->add_option("-o,--output", synth.output, "output JSONL path")->required();
  sc_synth->add_option("--duration", synth.spec.duration, "video duration in seconds");
  sc_synth->add_option("--frame-rate", synth.spec.frame_rate, "frames per second");
  sc_synth->add_option("--events-min", synth.spec.events_min, "minimum events per video");
  sc_synth->add_option("--events-max", synth.spec.events_max, "maximum events per video");
  sc_synth->add_option("--event-len-min", synth.spec.event_min_len, "shortest event (s)");
  sc_synth->add_option("--event-len-max", synth.spec.event_max_len, "longest event (s)");
  sc_synth->add_option("--gap-min", synth.spec.gap_min, "shortest gap (s)");
  sc_synth->add_option("--gap-max", synth.spec.gap_max, "longest gap (s)");
  sc_synth->add_option("--noise-std", synth.spec.noise_std, "feature noise level");
  sc_synth->add_option("--verbs", synth.spec.verbs, "verb inventory");
  sc_synth->add_option("--objects", synth.spec.objects, "object inventory");

  TrainArgs train_args;
  auto* sc_train = app.add_subcommand("train", "train a model from a run config");
  sc_train->add_option("--config", train_args.config_path, "run config JSON");
  sc_train->add_option("--set", train_args.overrides, "dotted key=value overrides");
  sc_train->add_option("--data", train_args.data_path, "dataset JSONL (overrides config)");
  sc_train->add_option("-o,--output", train_args.output_dir, "output directory");
  sc_train->add_option("--dtype", train_args.dtype, "f32 or f64");

  InferArgs infer_args;
  auto* sc_infer = app.add_subcommand("infer", "stream predictions for a dataset");
  sc_infer->add_option("--checkpoint", infer_args.checkpoint, "checkpoint prefix")->required();
  sc_infer->add_option("--vocab", infer_args.vocab_path, "vocabulary JSON");
  sc_infer->add_option("--data", infer_args.data_path, "dataset JSONL")->required();
  sc_infer->add_option("-o,--output", infer_args.output, "prediction JSONL")->required();
  sc_infer->add_option("--strategy", infer_args.strategy, "greedy or beam");
  sc_infer->add_option("--beam-width", infer_args.decode.beam_width, "beam width");
  sc_infer->add_option("--num-samples", infer_args.decode.num_samples, "hypotheses kept");
  sc_infer->add_option("--temperature", infer_args.decode.temperature, "logit temperature");
  sc_infer->add_option("--nms-iou", infer_args.decode.nms_iou, "temporal NMS threshold");

  EvalArgs eval_args;
  auto* sc_eval = app.add_subcommand("eval", "score predictions against a dataset");
  sc_eval->add_option("--pred", eval_args.pred_path, "prediction JSONL")->required();
  sc_eval->add_option("--data", eval_args.data_path, "dataset JSONL")->required();
  sc_eval->add_option("-o,--output", eval_args.output, "metrics report JSON");
  sc_eval->add_option("--tsv", eval_args.tsv_path, "flat TSV row for tabulation");

  FlopsArgs flops_args;
  auto* sc_flops = app.add_subcommand("flops", "analytic decoder cost report");
  sc_flops->add_option("--preset", flops_args.preset, "paper-8seg or paper-16seg");
  sc_flops->add_option("--segments", flops_args.cfg.segments, "segment count T");
  sc_flops->add_option("--tokens-per-segment", flops_args.cfg.tokens_per_segment, "l");
  sc_flops->add_option("--vision-tokens", flops_args.cfg.vision_tokens_per_segment, "N");
  sc_flops->add_option("--d-model", flops_args.cfg.d_model, "model width");
  sc_flops->add_option("--heads", flops_args.cfg.heads, "attention heads");
  sc_flops->add_option("--layers", flops_args.cfg.layers, "decoder layers");
  sc_flops->add_option("--ff-mult", flops_args.cfg.ff_mult, "FFN width multiplier");
  sc_flops->add_option("--vocab", flops_args.cfg.vocab, "vocabulary size");
  sc_flops->add_option("--vision-gflops", flops_args.cfg.vision_gflops_per_segment,
                       "vision-stack GFLOPs per segment for the inclusive report");
  sc_flops->add_option("-o,--output", flops_args.output, "cost report JSON");

  std::string inspect_ckpt;
  auto* sc_inspect = app.add_subcommand("inspect", "print a checkpoint manifest summary");
  sc_inspect->add_option("--checkpoint", inspect_ckpt, "checkpoint prefix")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n";
    std::cerr << app.help() << "\n";
    return kExitUsage;
  }

  try {
    if (sc_synth->parsed()) return cmd_synth(synth);
    if (sc_train->parsed()) return cmd_train(train_args);
    if (sc_infer->parsed()) return cmd_infer(infer_args);
    if (sc_eval->parsed()) return cmd_eval(eval_args);
    if (sc_flops->parsed()) return cmd_flops(flops_args);
    if (sc_inspect->parsed()) return cmd_inspect(inspect_ckpt);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitUsage;
}

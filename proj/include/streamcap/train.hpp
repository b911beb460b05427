#pragma once

// Teacher-forced training. Per segment the decoder input is
// [prefix | label] of exactly l tokens; position j predicts input j+1.
// Prefix-internal targets and PAD are excluded from the loss via the PAD id.

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "streamcap/codec.hpp"
#include "streamcap/dataset.hpp"
#include "streamcap/model.hpp"
#include "streamcap/nn.hpp"

namespace streamcap {

struct TrainConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double label_smoothing = 0.1;
  double dropout = 0.1;
  double weight_decay = 1e-5;
  double clip_norm = 1.0;
  int batch_size = 8;
  int steps = 3000;
  int warmup_steps = 100;
  uint64_t seed = 0;

  void validate() const {
    if (lr < 0 || label_smoothing < 0 || dropout < 0 || weight_decay < 0)
      throw ConfigError("train: rates must be >= 0");
    if (warmup_steps > steps) throw ConfigError("train: warmup_steps must be <= steps");
    if (batch_size <= 0 || steps <= 0) throw ConfigError("train: batch_size and steps must be positive");
  }
};

// One teacher-forcing example: decoder inputs of length T*l and shifted
// targets (PAD where no loss applies).
template <typename Scalar>
struct EncodedExample {
  Tensor<Scalar> grid;  // [T, S, frame_dim]
  std::vector<int> inputs;
  std::vector<int> targets;
};

template <typename Scalar>
struct Batch {
  std::vector<EncodedExample<Scalar>> items;
  size_t skipped = 0;  // label-overflow samples dropped, by count
};

// Label slot per segment inside the decoder's l positions.
inline int label_capacity(const ModelConfig& model_cfg, const CodecConfig& codec_cfg) {
  const int cap = model_cfg.tokens_per_segment - prefix_length(codec_cfg);
  if (cap < 4)
    throw ConfigError("tokens_per_segment leaves no room for labels after the prefix");
  return cap;
}

template <typename Scalar>
Tensor<Scalar> grid_tensor(const VideoRecord& r, const ModelConfig& cfg) {
  const size_t t = size_t(cfg.segments), s = size_t(cfg.frames_per_segment),
               f = size_t(cfg.frame_dim);
  if (r.features.size() != t * s)
    throw DataError("video " + r.id + ": " + std::to_string(r.features.size()) +
                    " frames, model expects " + std::to_string(t * s));
  std::vector<Scalar> v;
  v.reserve(t * s * f);
  for (const auto& frame : r.features) {
    if (frame.size() != f)
      throw DataError("video " + r.id + ": frame width " + std::to_string(frame.size()) +
                      ", model expects " + std::to_string(f));
    for (double x : frame) v.push_back(Scalar(x));
  }
  return Tensor<Scalar>::from_vector({t, s, f}, std::move(v));
}

template <typename Scalar>
EncodedExample<Scalar> encode_example(const VideoRecord& r, const ModelConfig& model_cfg,
                                      const CodecConfig& codec_cfg, const Vocabulary& vocab) {
  CodecConfig label_cfg = codec_cfg;
  label_cfg.max_caption_tokens = label_capacity(model_cfg, codec_cfg);
  const int T = model_cfg.segments;
  const int l = model_cfg.tokens_per_segment;
  EncodedExample<Scalar> ex;
  ex.grid = grid_tensor<Scalar>(r, model_cfg);
  ex.inputs.reserve(size_t(T * l));
  ex.targets.assign(size_t(T * l), Vocabulary::kPad);
  auto per_seg = align_events_to_segments(r.events, T, r.duration);
  for (int s = 0; s < T; ++s) {
    auto prefix = make_prefix(s, T, r.duration, codec_cfg, vocab);
    auto label = encode_segment_label(per_seg[size_t(s)], r.duration, label_cfg, vocab);
    std::vector<int> seg_inputs = prefix;
    seg_inputs.insert(seg_inputs.end(), label.begin(), label.end());
    // Position j predicts input j+1; predictions of prefix tokens carry no loss.
    for (size_t j = 0; j + 1 < seg_inputs.size(); ++j) {
      if (j + 1 >= prefix.size())
        ex.targets[size_t(s * l) + j] = seg_inputs[j + 1];
    }
    ex.inputs.insert(ex.inputs.end(), seg_inputs.begin(), seg_inputs.end());
  }
  return ex;
}

template <typename Scalar>
Batch<Scalar> build_batch(std::span<const VideoRecord> examples, const ModelConfig& model_cfg,
                          const CodecConfig& codec_cfg, const Vocabulary& vocab) {
  Batch<Scalar> batch;
  for (const auto& r : examples) {
    try {
      batch.items.push_back(encode_example<Scalar>(r, model_cfg, codec_cfg, vocab));
    } catch (const LabelOverflowError&) {
      ++batch.skipped;
    }
  }
  return batch;
}

// Adam with decoupled weight decay, linear warmup then constant rate, and
// global-norm gradient clipping.
template <typename Scalar>
class AdamW {
 public:
  AdamW(ParamRegistry<Scalar>& params, const TrainConfig& cfg) : params_(params), cfg_(cfg) {
    m_.resize(params.all().size());
    v_.resize(params.all().size());
    for (size_t i = 0; i < params.all().size(); ++i) {
      m_[i].assign(params.all()[i]->tensor.size(), 0.0);
      v_[i].assign(params.all()[i]->tensor.size(), 0.0);
    }
  }

  double grad_norm() const {
    double sq = 0;
    for (auto* p : params_.all()) {
      if (!p->tensor.has_grad()) continue;
      for (Scalar g : p->tensor.grad()) sq += double(g) * double(g);
    }
    return std::sqrt(sq);
  }

  double lr_at(int step) const {  // 1-based step
    if (cfg_.warmup_steps <= 0) return cfg_.lr;
    return cfg_.lr * std::min(1.0, double(step) / double(cfg_.warmup_steps));
  }

  // Applies one update and zeroes gradients. Returns the pre-clip grad norm.
  double step(int step_index) {
    ++t_;
    const double lr = lr_at(step_index);
    const double norm = grad_norm();
    const double clip = cfg_.clip_norm > 0 && norm > cfg_.clip_norm ? cfg_.clip_norm / norm : 1.0;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, double(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, double(t_));
    const auto& all = params_.all();
    for (size_t i = 0; i < all.size(); ++i) {
      auto& tensor = all[i]->tensor;
      if (!tensor.has_grad()) continue;
      auto& val = tensor.mutable_values();
      auto grad = tensor.grad();
      for (size_t j = 0; j < val.size(); ++j) {
        const double g = double(grad[j]) * clip;
        m_[i][j] = cfg_.beta1 * m_[i][j] + (1.0 - cfg_.beta1) * g;
        v_[i][j] = cfg_.beta2 * v_[i][j] + (1.0 - cfg_.beta2) * g * g;
        const double mhat = m_[i][j] / bc1;
        const double vhat = v_[i][j] / bc2;
        double x = double(val[j]);
        x -= lr * (mhat / (std::sqrt(vhat) + cfg_.adam_eps) + cfg_.weight_decay * x);
        val[j] = Scalar(x);
      }
      tensor.zero_grad();
    }
    return norm;
  }

 private:
  ParamRegistry<Scalar>& params_;
  TrainConfig cfg_;
  int t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

struct StepLog {
  int step = 0;
  double loss = 0;
  double lr = 0;
  double grad_norm = 0;
};

template <typename Scalar>
class Trainer {
 public:
  Trainer(Model<Scalar>& model, const TrainConfig& cfg)
      : model_(model), cfg_(cfg), opt_(model.params(), cfg), data_rng_(cfg.seed) {
    cfg_.validate();
    model_.set_dropout(cfg_.dropout);
    model_.seed_dropout(cfg_.seed + 1);
  }

  // One optimizer step over a batch; returns the logged step record.
  StepLog train_step(const Batch<Scalar>& batch) {
    if (batch.items.empty()) throw LossError("train_step: empty batch");
    ++step_;
    model_.set_train(true);
    Tape<Scalar> tape;
    Tensor<Scalar> loss;
    {
      TapeScope<Scalar> scope(tape);
      std::vector<Tensor<Scalar>> losses;
      losses.reserve(batch.items.size());
      for (const auto& ex : batch.items) {
        auto logits = model_.forward(ex.grid, ex.inputs, CrossMaskMode::kSegment);
        losses.push_back(cross_entropy(logits, ex.targets, cfg_.label_smoothing, Vocabulary::kPad));
      }
      loss = losses[0];
      for (size_t i = 1; i < losses.size(); ++i) loss = add(loss, losses[i]);
      loss = scale(loss, Scalar(1.0 / double(losses.size())));
      tape.backward(loss);
    }
    model_.set_train(false);
    StepLog log;
    log.step = step_;
    log.loss = double(loss.item());
    log.lr = opt_.lr_at(step_);
    if (!std::isfinite(log.loss)) {
      log.grad_norm = opt_.grad_norm();
      throw LossError("non-finite loss at step " + std::to_string(log.step) + " (lr=" +
                      std::to_string(log.lr) + ", grad_norm=" + std::to_string(log.grad_norm) + ")");
    }
    log.grad_norm = opt_.step(step_);
    return log;
  }

  // Runs optimizer steps over the dataset, shuffling each epoch. Callable
  // repeatedly; optimizer state and the step counter carry over.
  void run(const std::vector<VideoRecord>& data, const CodecConfig& codec_cfg,
           const Vocabulary& vocab, const std::function<void(const StepLog&)>& on_step = {},
           int max_steps = -1) {
    if (data.empty()) throw LossError("train: empty dataset");
    std::vector<size_t> order(data.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    size_t cursor = order.size();  // force an initial shuffle
    const int steps = max_steps > 0 ? max_steps : cfg_.steps;
    for (int s = 0; s < steps; ++s) {
      std::vector<VideoRecord> chunk;
      while (int(chunk.size()) < cfg_.batch_size) {
        if (cursor == order.size()) {
          for (size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[data_rng_.uniform_int(uint64_t(i))]);
          cursor = 0;
        }
        chunk.push_back(data[order[cursor++]]);
      }
      auto batch = build_batch<Scalar>(chunk, model_.config(), codec_cfg, vocab);
      skipped_ += batch.skipped;
      if (batch.items.empty()) continue;
      auto log = train_step(batch);
      if (on_step) on_step(log);
    }
  }

  size_t skipped() const { return skipped_; }
  int step_count() const { return step_; }

 private:
  Model<Scalar>& model_;
  TrainConfig cfg_;
  AdamW<Scalar> opt_;
  Rng data_rng_;
  int step_ = 0;
  size_t skipped_ = 0;
};

// Teacher-forced next-token accuracy over loss-bearing positions.
template <typename Scalar>
double token_accuracy(Model<Scalar>& model, const std::vector<VideoRecord>& data,
                      const CodecConfig& codec_cfg, const Vocabulary& vocab) {
  model.set_train(false);
  size_t hit = 0, total = 0;
  const size_t v = size_t(model.config().vocab_size);
  for (const auto& r : data) {
    auto ex = encode_example<Scalar>(r, model.config(), codec_cfg, vocab);
    auto logits = model.forward(ex.grid, ex.inputs, CrossMaskMode::kSegment);
    for (size_t pos = 0; pos < ex.targets.size(); ++pos) {
      if (ex.targets[pos] == Vocabulary::kPad) continue;
      const Scalar* row = logits.values().data() + pos * v;
      size_t best = 0;
      for (size_t j = 1; j < v; ++j)
        if (row[j] > row[best]) best = j;
      hit += int(best) == ex.targets[pos] ? 1 : 0;
      ++total;
    }
  }
  return total == 0 ? 0.0 : double(hit) / double(total);
}

}  // namespace streamcap

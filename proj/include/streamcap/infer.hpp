#pragma once

// Online per-segment generation with temporal NMS over the running
// candidate set. A candidate from segment i is withheld until segment i+1
// has been decoded (or the stream ends) so near-duplicates straddling a
// boundary can still suppress it; once emitted, an event is never retracted.

#include <functional>
#include <string>
#include <vector>

#include "streamcap/codec.hpp"
#include "streamcap/model.hpp"

namespace streamcap {

enum class DecodeStrategy { kGreedy, kBeam };

struct DecodeConfig {
  DecodeStrategy strategy = DecodeStrategy::kBeam;
  int beam_width = 24;
  int num_samples = 1;    // finished hypotheses kept per segment
  double temperature = 1.0;
  double nms_iou = 0.7;

  void validate() const {
    if (beam_width < 1) throw ConfigError("decode: beam_width must be >= 1");
    if (num_samples < 1 || num_samples > beam_width)
      throw ConfigError("decode: num_samples must lie in [1, beam_width]");
    if (temperature <= 0) throw ConfigError("decode: temperature must be positive");
    if (nms_iou <= 0 || nms_iou > 1) throw ConfigError("decode: nms_iou must be in (0, 1]");
  }

  // Default recipe: beam search with 24 outputs, NMS at 0.7.
  static DecodeConfig default_preset() { return DecodeConfig{}; }
  // Ablation recipe: 18 samples at temperature 1.
  static DecodeConfig ablation_preset() {
    DecodeConfig cfg;
    cfg.beam_width = 18;
    cfg.num_samples = 18;
    cfg.temperature = 1.0;
    return cfg;
  }
};

double temporal_iou(const Event& a, const Event& b);

struct ScoredEvent {
  Event event;
  double score = 0;         // mean per-token log-probability of the event span
  int segment_index = 0;
};

// Greedy NMS: sort by score (ties: earlier start, then caption), keep an
// event iff IoU with every kept event stays <= threshold.
std::vector<ScoredEvent> temporal_nms(std::vector<ScoredEvent> events, double iou_thresh);

// Next-token logits for a growing suffix (the generated tokens, prefix
// excluded). Returned vector has vocab size.
using StepFn = std::function<std::vector<double>(const std::vector<int>&)>;

struct ScoredSequence {
  std::vector<int> tokens;  // generated tokens, EOS excluded
  double sum_logprob = 0;
  double score = 0;  // length-normalized: sum / (len + 1), counting EOS
  std::vector<double> token_logprobs;
  bool finished = false;
};

// Deterministic beam search with temperature-scaled logits and
// length-normalized ranking. Width 1 is greedy decoding.
std::vector<ScoredSequence> beam_search(const StepFn& next_logits, int vocab_size, int eos_id,
                                        int max_tokens, int width, double temperature,
                                        int num_samples);

// One video's worth of streaming decode state.
template <typename Scalar>
class StreamSession {
 public:
  StreamSession(const Model<Scalar>& model, const CodecConfig& codec_cfg,
                const Vocabulary& vocab, const DecodeConfig& decode_cfg, double duration,
                int total_segments)
      : model_(model),
        codec_cfg_(codec_cfg),
        vocab_(vocab),
        decode_cfg_(decode_cfg),
        duration_(duration),
        total_segments_(total_segments) {
    decode_cfg_.validate();
    if (model.training()) throw ConfigError("stream session requires eval mode");
    if (prefix_length(codec_cfg) >= model.config().tokens_per_segment)
      throw ConfigError("prefix does not fit in tokens_per_segment");
  }

  size_t segments_consumed() const { return memory_.t_seen(); }
  const MemoryState<Scalar>& memory() const { return memory_; }
  size_t dropped_parses() const { return dropped_; }

  // Raw generated tokens per segment (prefix excluded); the streaming arm of
  // the offline-equivalence property.
  const std::vector<std::vector<int>>& generated_tokens() const { return generated_; }

  // Consume one segment of frames, decode it, and return newly emitted
  // events (typically the survivors from the previous segment).
  std::vector<ScoredEvent> push_segment(const Tensor<Scalar>& frames) {
    const int seg = int(memory_.t_seen());
    if (seg >= total_segments_)
      throw ConfigError("push_segment: session already consumed all segments");
    model_.push_segment_memory(memory_, frames);
    auto candidates = decode_current_segment(seg);
    return advance_nms(std::move(candidates), /*flush=*/false);
  }

  // Flush the final pending candidates after the last segment.
  std::vector<ScoredEvent> finish() { return advance_nms({}, /*flush=*/true); }

  const std::vector<ScoredEvent>& emitted() const { return emitted_; }

 private:
  std::vector<ScoredEvent> decode_current_segment(int seg) {
    const auto prefix = make_prefix(seg, total_segments_, duration_, codec_cfg_, vocab_);
    const auto& slice = memory_.ar_out.back();
    const int budget = model_.config().tokens_per_segment - int(prefix.size());
    StepFn step = [&](const std::vector<int>& generated) {
      std::vector<int> tokens = prefix;
      tokens.insert(tokens.end(), generated.begin(), generated.end());
      auto logits = model_.decode_segment_logits(tokens, slice);
      const size_t v = size_t(model_.config().vocab_size);
      const Scalar* row = logits.values().data() + (tokens.size() - 1) * v;
      return std::vector<double>(row, row + v);
    };
    const int width = decode_cfg_.strategy == DecodeStrategy::kGreedy ? 1 : decode_cfg_.beam_width;
    const int samples = decode_cfg_.strategy == DecodeStrategy::kGreedy
                            ? 1
                            : std::min(decode_cfg_.num_samples, width);
    auto hyps = beam_search(step, model_.config().vocab_size, Vocabulary::kEos, budget, width,
                            decode_cfg_.temperature, samples);
    if (!hyps.empty()) generated_.push_back(hyps[0].tokens);

    std::vector<ScoredEvent> out;
    for (const auto& h : hyps) {
      auto parsed = decode_tokens_to_events(h.tokens, duration_, codec_cfg_, vocab_);
      dropped_ += parsed.dropped;
      for (size_t e = 0; e < parsed.events.size(); ++e) {
        ScoredEvent se;
        se.event = parsed.events[e];
        se.segment_index = seg;
        double sum = 0;
        size_t n = 0;
        for (size_t t = parsed.spans[e].first; t < parsed.spans[e].second; ++t) {
          sum += h.token_logprobs[t];
          ++n;
        }
        se.score = n ? sum / double(n) : -1e30;
        out.push_back(std::move(se));
      }
    }
    return out;
  }

  // NMS over emitted + pending + fresh candidates; emitted events are fixed
  // keepers. Pending survivors are emitted, fresh survivors become pending.
  std::vector<ScoredEvent> advance_nms(std::vector<ScoredEvent> fresh, bool flush) {
    std::vector<ScoredEvent> pool = pending_;
    pool.insert(pool.end(), fresh.begin(), fresh.end());
    auto kept = nms_with_fixed(emitted_, std::move(pool), decode_cfg_.nms_iou);
    std::vector<ScoredEvent> newly;
    std::vector<ScoredEvent> next_pending;
    const int fresh_seg = fresh.empty() ? -1 : fresh[0].segment_index;
    for (auto& e : kept) {
      if (!flush && e.segment_index == fresh_seg) {
        next_pending.push_back(e);  // may still be suppressed by the next segment
      } else {
        newly.push_back(e);
      }
    }
    pending_ = std::move(next_pending);
    for (const auto& e : newly) emitted_.push_back(e);
    return newly;
  }

  static std::vector<ScoredEvent> nms_with_fixed(const std::vector<ScoredEvent>& fixed,
                                                 std::vector<ScoredEvent> candidates,
                                                 double thresh);

  const Model<Scalar>& model_;
  CodecConfig codec_cfg_;
  const Vocabulary& vocab_;
  DecodeConfig decode_cfg_;
  double duration_;
  int total_segments_;

  MemoryState<Scalar> memory_;
  std::vector<ScoredEvent> pending_;
  std::vector<ScoredEvent> emitted_;
  std::vector<std::vector<int>> generated_;
  size_t dropped_ = 0;
};

namespace detail {
bool nms_order(const ScoredEvent& a, const ScoredEvent& b);
}

template <typename Scalar>
std::vector<ScoredEvent> StreamSession<Scalar>::nms_with_fixed(
    const std::vector<ScoredEvent>& fixed, std::vector<ScoredEvent> candidates, double thresh) {
  std::sort(candidates.begin(), candidates.end(), detail::nms_order);
  std::vector<ScoredEvent> kept;
  kept.reserve(candidates.size());
  auto clear_of = [&](const ScoredEvent& c, const std::vector<ScoredEvent>& against) {
    for (const auto& k : against)
      if (temporal_iou(k.event, c.event) > thresh) return false;
    return true;
  };
  for (auto& c : candidates)
    if (clear_of(c, fixed) && clear_of(c, kept)) kept.push_back(std::move(c));
  return kept;
}

// Offline arm of the streaming-equivalence property: greedy decoding of the
// full masked pass, all segments advancing in parallel over the T*l grid.
template <typename Scalar>
std::vector<std::vector<int>> offline_greedy_decode(const Model<Scalar>& model,
                                                    const Tensor<Scalar>& grid,
                                                    const CodecConfig& codec_cfg,
                                                    const Vocabulary& vocab, double duration) {
  const auto& cfg = model.config();
  const int T = int(grid.dim(0));
  const int l = cfg.tokens_per_segment;
  const size_t v = size_t(cfg.vocab_size);
  auto memory = model.ar_memory(model.reduce(model.encode_segments(grid)));

  if (prefix_length(codec_cfg) >= l)
    throw ConfigError("prefix does not fit in tokens_per_segment");
  std::vector<std::vector<int>> seg_tokens(static_cast<size_t>(T));
  std::vector<int> prefix_len(size_t(T), 0);
  std::vector<bool> done(size_t(T), false);
  std::vector<int> text(size_t(T * l), Vocabulary::kPad);
  for (int s = 0; s < T; ++s) {
    auto p = make_prefix(s, T, duration, codec_cfg, vocab);
    prefix_len[size_t(s)] = int(p.size());
    for (size_t j = 0; j < p.size(); ++j) text[size_t(s * l) + j] = p[j];
  }
  for (int step = 0; step < l; ++step) {
    bool all_done = true;
    for (int s = 0; s < T; ++s)
      all_done = all_done && (done[size_t(s)] ||
                              prefix_len[size_t(s)] + int(seg_tokens[size_t(s)].size()) >= l);
    if (all_done) break;
    auto logits = model.decoder_forward(text, memory, CrossMaskMode::kSegment);
    for (int s = 0; s < T; ++s) {
      const int filled = prefix_len[size_t(s)] + int(seg_tokens[size_t(s)].size());
      if (done[size_t(s)] || filled >= l) continue;
      const Scalar* row = logits.values().data() + (size_t(s * l) + size_t(filled) - 1) * v;
      size_t best = 0;
      for (size_t j = 1; j < v; ++j)
        if (row[j] > row[best]) best = j;
      if (int(best) == Vocabulary::kEos) {
        done[size_t(s)] = true;
      } else {
        text[size_t(s * l) + size_t(filled)] = int(best);
        seg_tokens[size_t(s)].push_back(int(best));
      }
    }
  }
  return seg_tokens;
}

}  // namespace streamcap

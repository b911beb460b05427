#include "streamcap/infer.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>

#include "streamcap/synth.hpp"
#include "streamcap/train.hpp"

using namespace streamcap;

TEST_CASE("temporal_iou hand cases") {
  CHECK(temporal_iou({0, 10, ""}, {5, 15, ""}) == doctest::Approx(1.0 / 3.0));
  CHECK(temporal_iou({2, 4, ""}, {2, 4, ""}) == 1.0);
  CHECK(temporal_iou({0, 1, ""}, {2, 3, ""}) == 0.0);
  CHECK(temporal_iou({1, 1, ""}, {1, 1, ""}) == 0.0);  // zero-length union
}

TEST_CASE("temporal_nms suppression and tie-breaks") {
  std::vector<ScoredEvent> evs{
      {{0, 10, "a"}, 0.9, 0},
      {{1, 9, "b"}, 0.8, 0},  // IoU 0.8 with the first
  };
  auto kept = temporal_nms(evs, 0.7);
  REQUIRE(kept.size() == 1);
  CHECK(kept[0].event.caption == "a");

  std::vector<ScoredEvent> disjoint{{{0, 2, "a"}, 0.1, 0}, {{5, 7, "b"}, 0.9, 0}};
  CHECK(temporal_nms(disjoint, 0.7).size() == 2);

  std::vector<ScoredEvent> tie{{{3, 9, "late"}, 0.5, 0}, {{1, 7, "early"}, 0.5, 0}};
  auto kept_tie = temporal_nms(tie, 0.3);
  CHECK(kept_tie[0].event.caption == "early");  // equal scores: earlier start wins
}

TEST_CASE("temporal_nms is idempotent and survivors respect the threshold") {
  Rng rng(7);
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<ScoredEvent> evs;
    const int n = 1 + int(rng.uniform_int(uint64_t(12)));
    for (int i = 0; i < n; ++i) {
      const double s = rng.uniform(0.0, 50.0);
      ScoredEvent e;
      e.event = {s, s + rng.uniform(0.5, 10.0), std::string(1, char('a' + i % 5))};
      e.score = rng.uniform(-5.0, 0.0);
      evs.push_back(e);
    }
    auto kept = temporal_nms(evs, 0.7);
    for (size_t i = 0; i < kept.size(); ++i)
      for (size_t j = i + 1; j < kept.size(); ++j)
        CHECK(temporal_iou(kept[i].event, kept[j].event) <= 0.7);
    auto again = temporal_nms(kept, 0.7);
    REQUIRE(again.size() == kept.size());
    for (size_t i = 0; i < kept.size(); ++i) {
      CHECK(again[i].event.caption == kept[i].event.caption);
      CHECK(again[i].score == kept[i].score);
    }
  }
}

namespace {

// Deterministic toy language model over a small vocab; logits depend on the
// generated prefix through a seeded hash.
struct ToyLm {
  int vocab = 4;  // token 3 is EOS
  std::vector<double> operator()(const std::vector<int>& prefix) const {
    uint64_t h = 0x243f6a8885a308d3ull;
    for (int t : prefix) h = h * 0x100000001b3ull + uint64_t(t + 1);
    std::vector<double> logits(static_cast<size_t>(vocab), 0.0);
    for (int v = 0; v < vocab; ++v) {
      uint64_t x = h ^ (0x9e3779b97f4a7c15ull * uint64_t(v + 17));
      x ^= x >> 33;
      x *= 0xff51afd7ed558ccdull;
      x ^= x >> 33;
      logits[size_t(v)] = double(x % 1000) / 250.0 - 2.0;
    }
    return logits;
  }
};

std::vector<int> greedy_reference(const ToyLm& lm, int max_tokens) {
  std::vector<int> out;
  for (int i = 0; i < max_tokens; ++i) {
    auto logits = lm(out);
    size_t best = 0;
    for (size_t j = 1; j < logits.size(); ++j)
      if (logits[j] > logits[best]) best = j;
    if (int(best) == 3) break;
    out.push_back(int(best));
  }
  return out;
}

struct Enumerated {
  std::vector<int> tokens;
  double score;
  bool finished;
};

// Exhaustive enumeration of every sequence the beam loop can produce.
void enumerate_all(const ToyLm& lm, std::vector<int>& prefix, std::vector<double>& lps,
                   double sum, int max_tokens, std::vector<Enumerated>& out) {
  auto logits = lm(prefix);
  // log-softmax at temperature 1
  double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0;
  for (double v : logits) z += std::exp(v - mx);
  const double lse = mx + std::log(z);
  for (int t = 0; t < lm.vocab; ++t) {
    const double lp = logits[size_t(t)] - lse;
    if (t == 3) {
      out.push_back({prefix, (sum + lp) / double(lps.size() + 1), true});
    } else if (int(prefix.size()) + 1 <= max_tokens) {
      prefix.push_back(t);
      lps.push_back(lp);
      if (int(prefix.size()) == max_tokens)
        out.push_back({prefix, (sum + lp) / double(lps.size()), false});
      else
        enumerate_all(lm, prefix, lps, sum + lp, max_tokens, out);
      prefix.pop_back();
      lps.pop_back();
    }
  }
}

}  // namespace

TEST_CASE("beam width 1 is greedy decoding") {
  ToyLm lm;
  auto hyps = beam_search(lm, lm.vocab, 3, 6, 1, 1.0, 1);
  REQUIRE(hyps.size() == 1);
  CHECK(hyps[0].tokens == greedy_reference(lm, 6));
}

TEST_CASE("temperature to zero reproduces the greedy ranking") {
  ToyLm lm;
  auto hyps = beam_search(lm, lm.vocab, 3, 6, 8, 1e-4, 3);
  REQUIRE(!hyps.empty());
  CHECK(hyps[0].tokens == greedy_reference(lm, 6));
}

TEST_CASE("beam with exhaustive width matches the enumeration oracle") {
  ToyLm lm;
  const int max_tokens = 3;
  std::vector<Enumerated> all;
  std::vector<int> prefix;
  std::vector<double> lps;
  enumerate_all(lm, prefix, lps, 0.0, max_tokens, all);
  REQUIRE(all.size() == 40);  // 13 finished + 27 at-budget sequences
  std::sort(all.begin(), all.end(), [](const Enumerated& a, const Enumerated& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.finished != b.finished) return a.finished;
    return a.tokens < b.tokens;
  });
  auto hyps = beam_search(lm, lm.vocab, 3, max_tokens, 64, 1.0, 5);
  REQUIRE(hyps.size() == 5);
  for (size_t i = 0; i < hyps.size(); ++i) {
    CHECK(hyps[i].tokens == all[i].tokens);
    CHECK(hyps[i].score == doctest::Approx(all[i].score).epsilon(1e-12));
    CHECK(hyps[i].finished == all[i].finished);
  }
}

namespace {

struct InferSetup {
  SynthSpec spec;
  ModelConfig model_cfg;
  CodecConfig codec_cfg;
  Vocabulary vocab;
};

InferSetup infer_setup(int segments = 4) {
  InferSetup s;
  s.spec.verbs = {"pours", "stirs"};
  s.spec.objects = {"water", "pot"};
  s.spec.duration = 8.0;
  s.spec.frame_rate = 2.0;
  s.spec.events_min = 1;
  s.spec.events_max = 2;
  s.spec.event_min_len = 1.5;
  s.spec.event_max_len = 3.0;
  s.spec.gap_min = 1.0;
  s.spec.gap_max = 2.0;
  s.codec_cfg.bins = 16;
  s.codec_cfg.use_prefix = true;
  s.model_cfg.segments = segments;
  s.model_cfg.frames_per_segment = 16 / segments;
  s.model_cfg.frame_dim = s.spec.frame_dim();
  s.model_cfg.encoder_tokens = s.model_cfg.frames_per_segment;
  s.model_cfg.reduced_tokens = 2;
  s.model_cfg.tokens_per_segment = 14;
  s.model_cfg.d_model = 32;
  s.model_cfg.heads = 4;
  s.model_cfg.time_bins = 16;
  s.vocab = Vocabulary::from_captions(synth_caption_inventory(s.spec), s.codec_cfg.bins);
  s.model_cfg.vocab_size = s.vocab.size();
  return s;
}

template <typename S>
Tensor<S> segment_frames(const VideoRecord& r, const ModelConfig& cfg, int seg) {
  const size_t fs = size_t(cfg.frames_per_segment), fd = size_t(cfg.frame_dim);
  std::vector<S> v;
  v.reserve(fs * fd);
  for (size_t f = size_t(seg) * fs; f < size_t(seg + 1) * fs; ++f)
    for (double x : r.features[f]) v.push_back(S(x));
  return Tensor<S>::from_vector({fs, fd}, std::move(v));
}

}  // namespace

TEST_CASE("streaming greedy emissions equal offline greedy decode, token for token") {
  auto su = infer_setup();
  for (uint64_t seed = 0; seed < 6; ++seed) {
    Model<double> model(su.model_cfg, 100 + seed);  // untrained random weights
    SynthSpec spec = su.spec;
    spec.seed = seed;
    auto data = generate_synthetic(spec, 1);
    const auto& video = data[0];

    auto grid = grid_tensor<double>(video, su.model_cfg);
    auto offline = offline_greedy_decode(model, grid, su.codec_cfg, su.vocab, video.duration);

    DecodeConfig dc;
    dc.strategy = DecodeStrategy::kGreedy;
    StreamSession<double> session(model, su.codec_cfg, su.vocab, dc, video.duration,
                                  su.model_cfg.segments);
    for (int s = 0; s < su.model_cfg.segments; ++s)
      session.push_segment(segment_frames<double>(video, su.model_cfg, s));
    session.finish();

    REQUIRE(session.generated_tokens().size() == size_t(su.model_cfg.segments));
    for (int s = 0; s < su.model_cfg.segments; ++s)
      CHECK(session.generated_tokens()[size_t(s)] == offline[size_t(s)]);
    CHECK(session.segments_consumed() == size_t(su.model_cfg.segments));
  }
}

TEST_CASE("online invariant: future segments never change past emissions") {
  auto su = infer_setup();
  Model<double> model(su.model_cfg, 42);
  SynthSpec spec = su.spec;
  spec.seed = 11;
  auto a = generate_synthetic(spec, 1)[0];
  auto b = a;
  Rng rng(3);
  // Rewrite the last two segments of b with random frames.
  for (size_t f = a.features.size() / 2; f < a.features.size(); ++f)
    for (auto& x : b.features[f]) x = rng.normal();

  DecodeConfig dc;
  dc.strategy = DecodeStrategy::kGreedy;
  auto run_prefix = [&](const VideoRecord& v) {
    StreamSession<double> s(model, su.codec_cfg, su.vocab, dc, v.duration, su.model_cfg.segments);
    std::vector<ScoredEvent> emitted;
    for (int seg = 0; seg < su.model_cfg.segments; ++seg) {
      auto out = s.push_segment(segment_frames<double>(v, su.model_cfg, seg));
      if (seg < 2) emitted.insert(emitted.end(), out.begin(), out.end());
    }
    return std::pair(emitted, s.generated_tokens());
  };
  auto [em_a, tok_a] = run_prefix(a);
  auto [em_b, tok_b] = run_prefix(b);
  REQUIRE(em_a.size() == em_b.size());
  for (size_t i = 0; i < em_a.size(); ++i) {
    CHECK(em_a[i].event.caption == em_b[i].event.caption);
    CHECK(em_a[i].event.start == em_b[i].event.start);
    CHECK(em_a[i].score == em_b[i].score);
  }
  CHECK(tok_a[0] == tok_b[0]);
  CHECK(tok_a[1] == tok_b[1]);
}

TEST_CASE("session emissions pass through NMS and are never retracted") {
  auto su = infer_setup();
  Model<double> model(su.model_cfg, 77);
  SynthSpec spec = su.spec;
  spec.seed = 21;
  auto video = generate_synthetic(spec, 1)[0];
  DecodeConfig dc;
  dc.strategy = DecodeStrategy::kBeam;
  dc.beam_width = 4;
  dc.num_samples = 4;
  StreamSession<double> session(model, su.codec_cfg, su.vocab, dc, video.duration,
                                su.model_cfg.segments);
  std::vector<ScoredEvent> all;
  for (int s = 0; s < su.model_cfg.segments; ++s) {
    auto out = session.push_segment(segment_frames<double>(video, su.model_cfg, s));
    all.insert(all.end(), out.begin(), out.end());
  }
  auto tail = session.finish();
  all.insert(all.end(), tail.begin(), tail.end());
  CHECK(all.size() == session.emitted().size());
  for (const auto& e : all) {
    CHECK(e.event.start >= 0);
    CHECK(e.event.end <= video.duration);
    CHECK(e.event.start <= e.event.end);
  }
}

TEST_CASE("push_segment rejects wrongly shaped frames") {
  auto su = infer_setup();
  Model<double> model(su.model_cfg, 8);
  DecodeConfig dc;
  dc.strategy = DecodeStrategy::kGreedy;
  StreamSession<double> session(model, su.codec_cfg, su.vocab, dc, 8.0, su.model_cfg.segments);
  auto bad = Tensor<double>::zeros({3, size_t(su.model_cfg.frame_dim)});
  CHECK_THROWS_AS(session.push_segment(bad), ShapeError);
  CHECK(session.segments_consumed() == 0);
}

TEST_CASE("decode config validation and presets") {
  DecodeConfig dc;
  dc.beam_width = 0;
  CHECK_THROWS_AS(dc.validate(), ConfigError);
  dc = DecodeConfig::default_preset();
  CHECK(dc.beam_width == 24);
  CHECK(dc.nms_iou == 0.7);
  dc = DecodeConfig::ablation_preset();
  CHECK(dc.beam_width == 18);
  CHECK(dc.temperature == 1.0);
  dc.num_samples = 99;
  CHECK_THROWS_AS(dc.validate(), ConfigError);
}

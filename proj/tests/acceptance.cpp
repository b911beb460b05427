// Acceptance suite: one pass/fail line per criterion, exit code = number of
// failures. Tolerances are pinned in the assertions below.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "streamcap/eval.hpp"
#include "streamcap/flops.hpp"
#include "streamcap/synth.hpp"
#include "test_oracles.hpp"
#include "test_support.hpp"

using namespace streamcap;

namespace {

struct Check {
  bool ok = true;
  std::ostringstream detail;

  void require(bool cond, const std::string& what) {
    if (!cond) {
      ok = false;
      if (detail.tellp() > 0) detail << "; ";
      detail << what;
    }
  }
};

ModelConfig small_model(int segments, uint64_t = 0) {
  ModelConfig cfg;
  cfg.segments = segments;
  cfg.frames_per_segment = 4;
  cfg.frame_dim = 8;
  cfg.encoder_tokens = 4;
  cfg.reduced_tokens = 2;
  cfg.tokens_per_segment = 14;
  cfg.d_model = 32;
  cfg.heads = 4;
  cfg.time_bins = 16;
  cfg.vocab_size = 40;
  return cfg;
}

template <typename S>
Tensor<S> random_grid(const ModelConfig& cfg, Rng& rng) {
  std::vector<S> v(size_t(cfg.segments * cfg.frames_per_segment * cfg.frame_dim));
  for (auto& x : v) x = S(rng.normal());
  return Tensor<S>::from_vector(
      {size_t(cfg.segments), size_t(cfg.frames_per_segment), size_t(cfg.frame_dim)},
      std::move(v));
}

std::vector<int> random_text(const ModelConfig& cfg, Rng& rng) {
  std::vector<int> ids(size_t(cfg.segments * cfg.tokens_per_segment));
  for (auto& i : ids) i = int(rng.uniform_int(uint64_t(cfg.vocab_size)));
  return ids;
}

// --------------------------------------------------------------------------
// 1. Factorization equivalence
// --------------------------------------------------------------------------
bool criterion_factorization(std::string& detail) {
  Check c;
  {
    auto cfg = small_model(4);
    Model<double> model(cfg, 11);
    Rng rng(1);
    auto grid = random_grid<double>(cfg, rng);
    auto text = random_text(cfg, rng);
    auto memory = model.ar_memory(model.reduce(model.encode_segments(grid)));
    auto full = model.decoder_forward(text, memory, CrossMaskMode::kSegment);
    const size_t l = size_t(cfg.tokens_per_segment), v = size_t(cfg.vocab_size);
    size_t mismatches = 0;
    for (int s = 0; s < cfg.segments; ++s) {
      std::vector<int> seg(text.begin() + s * long(l), text.begin() + (s + 1) * long(l));
      auto slice = reshape(slice_rows(memory, size_t(s), 1),
                           {size_t(cfg.reduced_tokens), size_t(cfg.d_model)});
      auto logits = model.decode_segment_logits(seg, slice);
      for (size_t i = 0; i < l * v; ++i)
        if (logits.values()[i] != full.values()[size_t(s) * l * v + i]) ++mismatches;
    }
    c.require(mismatches == 0, "64-bit pass not bitwise (" + std::to_string(mismatches) + ")");
  }
  {
    auto cfg = small_model(4);
    Model<float> model(cfg, 13);
    Rng rng(2);
    auto grid = random_grid<float>(cfg, rng);
    auto text = random_text(cfg, rng);
    auto memory = model.ar_memory(model.reduce(model.encode_segments(grid)));
    auto full = model.decoder_forward(text, memory, CrossMaskMode::kSegment);
    const size_t l = size_t(cfg.tokens_per_segment), v = size_t(cfg.vocab_size);
    float max_abs = 0;
    for (int s = 0; s < cfg.segments; ++s) {
      std::vector<int> seg(text.begin() + s * long(l), text.begin() + (s + 1) * long(l));
      auto slice = reshape(slice_rows(memory, size_t(s), 1),
                           {size_t(cfg.reduced_tokens), size_t(cfg.d_model)});
      auto logits = model.decode_segment_logits(seg, slice);
      for (size_t i = 0; i < l * v; ++i)
        max_abs = std::max(max_abs,
                           std::fabs(logits.values()[i] - full.values()[size_t(s) * l * v + i]));
    }
    c.require(max_abs <= 1e-5f, "32-bit max-abs " + std::to_string(max_abs));
  }
  detail = c.detail.str();
  return c.ok;
}

SynthSpec acceptance_spec() {
  SynthSpec spec;
  spec.verbs = {"pours", "stirs", "chops", "lifts"};
  spec.objects = {"water", "pot", "onion", "box"};
  spec.duration = 16.0;
  spec.frame_rate = 2.0;  // 32 frames, 4 per segment at T=8
  spec.events_min = 2;
  spec.events_max = 4;
  spec.event_min_len = 2.0;
  spec.event_max_len = 4.0;
  spec.gap_min = 1.0;
  spec.gap_max = 3.0;
  spec.noise_std = 0.25;
  return spec;
}

// --------------------------------------------------------------------------
// 2. Streaming == offline greedy decode
// --------------------------------------------------------------------------
bool criterion_streaming(std::string& detail) {
  Check c;
  auto spec = acceptance_spec();
  CodecConfig codec;
  codec.bins = 16;
  codec.use_prefix = true;
  auto vocab = Vocabulary::from_captions(synth_caption_inventory(spec), codec.bins);
  auto cfg = small_model(8);
  cfg.frame_dim = spec.frame_dim();
  cfg.vocab_size = vocab.size();
  spec.seed = 404;
  auto data = generate_synthetic(spec, 50);

  Model<double> model(cfg, 21);
  DecodeConfig dc;
  dc.strategy = DecodeStrategy::kGreedy;
  size_t token_mismatches = 0;
  for (const auto& video : data) {
    auto grid = grid_tensor<double>(video, cfg);
    auto offline = offline_greedy_decode(model, grid, codec, vocab, video.duration);
    StreamSession<double> session(model, codec, vocab, dc, video.duration, cfg.segments);
    for (int s = 0; s < cfg.segments; ++s)
      session.push_segment(segment_frames_of<double>(video, cfg, s));
    for (int s = 0; s < cfg.segments; ++s)
      if (session.generated_tokens()[size_t(s)] != offline[size_t(s)]) ++token_mismatches;
  }
  c.require(token_mismatches == 0,
            std::to_string(token_mismatches) + " segment decodes differ across 50 videos");
  detail = c.detail.str();
  return c.ok;
}

// --------------------------------------------------------------------------
// 3. Causality under segment perturbation
// --------------------------------------------------------------------------
bool criterion_causality(std::string& detail) {
  Check c;
  auto cfg = small_model(6);
  CodecConfig codec;
  codec.bins = 16;
  codec.use_prefix = true;
  std::vector<std::string> caps{"person pours the water", "person stirs the pot"};
  auto vocab = Vocabulary::from_captions(caps, codec.bins);
  cfg.vocab_size = vocab.size();
  Model<double> model(cfg, 33);
  DecodeConfig dc;
  dc.strategy = DecodeStrategy::kGreedy;

  size_t violations = 0;
  for (int trial = 0; trial < 100; ++trial) {
    Rng rng(5000 + uint64_t(trial));
    auto grid = random_grid<double>(cfg, rng);
    const int j = 1 + int(rng.uniform_int(uint64_t(cfg.segments - 1)));
    auto grid2 = Tensor<double>::from_vector(
        grid.shape(), std::vector<double>(grid.values().begin(), grid.values().end()));
    const size_t seg_in = size_t(cfg.frames_per_segment * cfg.frame_dim);
    for (size_t i = size_t(j) * seg_in; i < size_t(j + 1) * seg_in; ++i)
      grid2.mutable_values()[i] += rng.normal();

    // AR memory outputs for segments < j must be bitwise identical.
    auto mem_a = model.ar_memory(model.reduce(model.encode_segments(grid)));
    auto mem_b = model.ar_memory(model.reduce(model.encode_segments(grid2)));
    const size_t seg_out = size_t(cfg.reduced_tokens * cfg.d_model);
    for (size_t i = 0; i < size_t(j) * seg_out; ++i)
      if (mem_a.values()[i] != mem_b.values()[i]) {
        ++violations;
        break;
      }

    // Decoded tokens for segments < j must match as well.
    auto off_a = offline_greedy_decode(model, grid, codec, vocab, 16.0);
    auto off_b = offline_greedy_decode(model, grid2, codec, vocab, 16.0);
    for (int s = 0; s < j; ++s)
      if (off_a[size_t(s)] != off_b[size_t(s)]) {
        ++violations;
        break;
      }
  }
  c.require(violations == 0, std::to_string(violations) + " causality violations in 100 trials");
  detail = c.detail.str();
  return c.ok;
}

// --------------------------------------------------------------------------
// 4. Gradient correctness, 20 seeds per primitive + end-to-end
// --------------------------------------------------------------------------
bool criterion_gradients(std::string& detail) {
  Check c;
  using testsup::gradient_matches;
  using testsup::random_tensor;
  size_t failures = 0;
  for (uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(9000 + seed);
    auto a = random_tensor({3, 5}, rng);
    auto b = random_tensor({3, 5}, rng);
    auto w = random_tensor({5, 4}, rng);
    auto mask_w = random_tensor({3, 5}, rng, 1.0, false);
    auto g = random_tensor({5}, rng);
    auto bb = random_tensor({5}, rng);
    std::vector<int> targets{1, -1, 3};
    BoolMatrix m(3, 5);
    for (size_t i = 0; i < 3; ++i) {
      m.set(i, (i + 1) % 5, true);
      for (size_t jj = 0; jj < 5; ++jj)
        if (rng.uniform() < 0.5) m.set(i, jj, true);
    }
    std::vector<double> drop_mask(15);
    for (auto& d : drop_mask) d = rng.uniform() < 0.3 ? 0.0 : 1.0 / 0.7;

    auto ok = [&](bool v) {
      if (!v) ++failures;
    };
    ok(gradient_matches([&]() { return sum_all(mul(add(a, b), mask_w)); }, a, 1e-4, 5, &rng));
    ok(gradient_matches([&]() { return sum_all(mul(sub(a, b), mask_w)); }, b, 1e-4, 5, &rng));
    ok(gradient_matches([&]() { return sum_all(mul(mul(a, b), mask_w)); }, a, 1e-4, 5, &rng));
    ok(gradient_matches([&]() { return sum_all(scale(a, 1.3)); }, a, 1e-4, 5, &rng));
    ok(gradient_matches([&]() { return sum_all(gelu(a)); }, a, 1e-4, 5, &rng));
    ok(gradient_matches([&]() { return sum_all(matmul(a, w)); }, w, 1e-4, 5, &rng));
    ok(gradient_matches([&]() { return sum_all(mul(masked_softmax(a, m), mask_w)); }, a, 1e-4, 5,
                        &rng));
    ok(gradient_matches([&]() { return sum_all(mul(layernorm(a, g, bb), mask_w)); }, a, 1e-4, 5,
                        &rng));
    ok(gradient_matches([&]() { return sum_all(mul(layernorm(a, g, bb), mask_w)); }, g, 1e-4, 5,
                        &rng));
    ok(gradient_matches([&]() { return cross_entropy(a, targets, 0.1, -1); }, a, 1e-4, 5, &rng));
    ok(gradient_matches([&]() { return sum_all(dropout_with_mask(a, drop_mask)); }, a, 1e-4, 5,
                        &rng));
    ok(gradient_matches([&]() { return sum_all(mul(reshape(split_heads(a, 1), {3, 5}), mask_w)); },
                        a, 1e-4, 5, &rng));
    ok(gradient_matches(
        [&]() { return sum_all(mul(slice_rows(a, 1, 2), slice_rows(mask_w, 0, 2))); }, a, 1e-4, 5,
        &rng));
    ok(gradient_matches(
        [&]() {
          auto t = transpose_last2(matmul(a, w));
          return sum_all(mul(t, t));
        },
        a, 1e-4, 5, &rng));
    auto table = random_tensor({7, 4}, rng);
    std::vector<int> ids{2, 5, 2};
    ok(gradient_matches([&]() { return sum_all(embedding_lookup(table, ids)); }, table, 1e-4, 5,
                        &rng));
  }
  c.require(failures == 0, std::to_string(failures) + " primitive gradient checks failed");

  // End-to-end on the tiny config, every parameter tensor sampled.
  ModelConfig tiny;
  tiny.segments = 2;
  tiny.frames_per_segment = 2;
  tiny.frame_dim = 5;
  tiny.encoder_tokens = 4;
  tiny.reduced_tokens = 2;
  tiny.tokens_per_segment = 6;
  tiny.d_model = 16;
  tiny.heads = 2;
  tiny.vocab_size = 17;
  size_t e2e_failures = 0;
  for (uint64_t seed = 0; seed < 3; ++seed) {
    Model<double> model(tiny, 700 + seed);
    Rng rng(800 + seed);
    auto grid = random_grid<double>(tiny, rng);
    grid.set_requires_grad(true);
    auto text = random_text(tiny, rng);
    std::vector<int> targets(text.size());
    for (size_t i = 0; i < targets.size(); ++i)
      targets[i] = i % 4 == 0 ? -1 : int(rng.uniform_int(uint64_t(tiny.vocab_size)));
    auto fwd = [&]() {
      return cross_entropy(model.forward(grid, text, CrossMaskMode::kSegment), targets, 0.1, -1);
    };
    Rng pick(31 + seed);
    if (!gradient_matches(fwd, grid, 1e-4, 4, &pick)) ++e2e_failures;
    for (auto* p : model.params().all())
      if (!gradient_matches(fwd, p->tensor, 1e-4, 4, &pick)) ++e2e_failures;
  }
  c.require(e2e_failures == 0,
            std::to_string(e2e_failures) + " end-to-end parameter gradients failed");
  detail = c.detail.str();
  return c.ok;
}

// --------------------------------------------------------------------------
// 5. Learning check
// --------------------------------------------------------------------------
bool criterion_learning(std::string& detail) {
  Check c;
  auto spec = acceptance_spec();
  spec.frame_rate = 4.0;  // 64 frames, 8 per segment

  CodecConfig codec;
  codec.bins = 64;
  codec.use_prefix = true;
  auto vocab = Vocabulary::from_captions(synth_caption_inventory(spec), codec.bins);

  ModelConfig cfg;
  cfg.segments = 8;
  cfg.frames_per_segment = 8;
  cfg.frame_dim = spec.frame_dim();
  cfg.encoder_tokens = 8;
  cfg.reduced_tokens = 4;
  cfg.tokens_per_segment = 15;  // prefix 5 + label slot 10
  cfg.d_model = 64;
  cfg.heads = 4;
  cfg.time_bins = codec.bins;
  cfg.vocab_size = vocab.size();
  cfg.decoder_layers = 2;

  SynthSpec train_spec = spec;
  train_spec.seed = 1001;
  auto train_data = generate_synthetic(train_spec, 512);
  SynthSpec held_spec = spec;
  held_spec.seed = 2002;
  auto held_data = generate_synthetic(held_spec, 200);

  Model<float> model(cfg, 7);
  TrainConfig tc;
  tc.lr = 1e-3;  // desk-scale rate; the stock 1e-4 suits much larger models
  tc.steps = 3000;
  tc.warmup_steps = 100;
  tc.batch_size = 6;
  tc.seed = 17;
  Trainer<float> trainer(model, tc);
  double last_loss = 0;
  trainer.run(train_data, codec, vocab, [&](const StepLog& log) { last_loss = log.loss; });

  std::vector<VideoRecord> overfit_set(train_data.begin(), train_data.begin() + 32);
  const double acc = token_accuracy(model, overfit_set, codec, vocab);
  c.require(acc >= 0.95, "teacher-forced accuracy " + std::to_string(acc) + " < 0.95");

  DecodeConfig dc;
  dc.strategy = DecodeStrategy::kGreedy;
  auto report = evaluate_model(model, held_data, codec, vocab, dc);
  c.require(report.f1.mean >= 0.6, "held-out mean F1 " + std::to_string(report.f1.mean) + " < 0.6");
  c.require(report.soda >= 0.5, "SODA-style " + std::to_string(report.soda) + " < 0.5");

  // Oracle skyline from the per-frame readout, reported alongside.
  std::map<std::string, std::vector<Event>> skyline;
  for (const auto& video : held_data) skyline[video.id] = bayes_readout(video, held_spec);
  auto sky = evaluate_predictions(skyline, held_data);
  std::ostringstream extra;
  extra << "acc=" << acc << " F1=" << report.f1.mean << " soda=" << report.soda
        << " cider=" << report.cider << " loss=" << last_loss << " | skyline F1=" << sky.f1.mean
        << " soda=" << sky.soda;
  detail = c.detail.str().empty() ? extra.str() : c.detail.str() + " | " + extra.str();
  return c.ok;
}

// --------------------------------------------------------------------------
// 6. FLOPs reproduction
// --------------------------------------------------------------------------
bool criterion_flops(std::string& detail) {
  Check c;
  auto c8 = calibrated_reference_config(8);
  auto r8 = compare(c8);
  const double per_seg_gap =
      std::fabs(r8.per_segment_flops / 1e9 - kReferencePerSegmentGflops) / kReferencePerSegmentGflops;
  c.require(per_seg_gap <= 0.05, "per-segment budget off by " + std::to_string(per_seg_gap));
  c.require(r8.savings_fraction >= 0.15 && r8.savings_fraction <= 0.25,
            "8-seg savings " + std::to_string(r8.savings_fraction));
  auto c16 = calibrated_reference_config(16);
  auto r16 = compare(c16);
  c.require(r16.savings_fraction > r8.savings_fraction, "16-seg savings do not exceed 8-seg");

  // Instrumented toy model vs the analytic count.
  ModelConfig m;
  m.segments = 4;
  m.frames_per_segment = 2;
  m.frame_dim = 3;
  m.encoder_tokens = 4;
  m.reduced_tokens = 3;
  m.tokens_per_segment = 8;
  m.d_model = 32;
  m.heads = 4;
  m.decoder_layers = 2;
  m.vocab_size = 50;
  Model<float> model(m, 3);
  Rng rng(5);
  std::vector<float> mem(size_t(m.segments * m.reduced_tokens * m.d_model));
  for (auto& v : mem) v = float(rng.normal());
  auto memory = Tensor<float>::from_vector(
      {size_t(m.segments), size_t(m.reduced_tokens), size_t(m.d_model)}, std::move(mem));
  std::vector<int> text(size_t(m.segments * m.tokens_per_segment));
  for (auto& t : text) t = int(rng.uniform_int(uint64_t(m.vocab_size)));
  auto seg = measure_segmented_decode(model, memory, text);
  auto glob = measure_global_decode(model, memory, text);
  auto cc = cost_config_of(m);
  const double analytic_seg = m.segments * decoder_matmul_multiplies(m.tokens_per_segment,
                                                                     m.tokens_per_segment,
                                                                     m.reduced_tokens, cc);
  const double analytic_glob = decoder_matmul_multiplies(
      double(m.segments) * m.tokens_per_segment, double(m.segments) * m.tokens_per_segment,
      double(m.segments) * m.reduced_tokens, cc);
  c.require(std::fabs(double(seg.total) - analytic_seg) / analytic_seg <= 0.10,
            "segment-mode count off analytic");
  c.require(std::fabs(double(glob.total) - analytic_glob) / analytic_glob <= 0.10,
            "global-mode count off analytic");
  c.require(seg.cross_scores * uint64_t(m.segments) == glob.cross_scores,
            "cross-attention multiplies are not exactly 1/T of global");
  std::ostringstream extra;
  extra << "per_seg=" << r8.per_segment_flops / 1e9 << "GF savings8=" << r8.savings_fraction * 100
        << "% savings16=" << r16.savings_fraction * 100 << "%";
  detail = c.detail.str().empty() ? extra.str() : c.detail.str() + " | " + extra.str();
  return c.ok;
}

// --------------------------------------------------------------------------
// 7. Metric oracles
// --------------------------------------------------------------------------
bool criterion_metric_oracles(std::string& detail) {
  Check c;
  Rng rng(777);
  std::vector<std::string> caps{"person pours the water", "person stirs the pot",
                                "person chops the onion", "add salt"};
  size_t soda_mismatch = 0;
  for (int trial = 0; trial < 200; ++trial) {
    auto p = testsup::random_events(rng, 6, caps);
    auto g = testsup::random_events(rng, 6, caps);
    if (std::fabs(soda_style(p, g) - testsup::exhaustive_soda(p, g)) > 1e-9) ++soda_mismatch;
  }
  c.require(soda_mismatch == 0, std::to_string(soda_mismatch) + " SODA DP mismatches");

  std::vector<std::string> words{"person", "pours", "stirs", "the", "water", "pot", "slowly"};
  auto random_caption = [&]() {
    std::string s;
    const int n = 1 + int(rng.uniform_int(uint64_t(6)));
    for (int i = 0; i < n; ++i) {
      if (i) s += ' ';
      s += words[rng.uniform_int(uint64_t(words.size()))];
    }
    return s;
  };
  size_t cider_mismatch = 0;
  for (int trial = 0; trial < 25; ++trial) {
    const size_t nv = 2 + rng.uniform_int(uint64_t(3));
    std::vector<std::vector<std::string>> preds(nv), refs(nv);
    for (size_t v = 0; v < nv; ++v) {
      for (uint64_t i = 0; i < rng.uniform_int(uint64_t(3)); ++i)
        preds[v].push_back(random_caption());
      for (uint64_t i = 0; i < 1 + rng.uniform_int(uint64_t(3)); ++i)
        refs[v].push_back(random_caption());
    }
    if (std::fabs(cider_d(preds, refs) - testsup::brute_cider(preds, refs)) > 1e-6)
      ++cider_mismatch;
  }
  c.require(cider_mismatch == 0, std::to_string(cider_mismatch) + " CIDEr mismatches");

  size_t nms_violations = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<ScoredEvent> evs;
    const int n = 1 + int(rng.uniform_int(uint64_t(14)));
    for (int i = 0; i < n; ++i) {
      const double s = rng.uniform(0.0, 60.0);
      ScoredEvent e;
      e.event = {s, s + rng.uniform(0.5, 12.0), caps[rng.uniform_int(uint64_t(caps.size()))]};
      e.score = rng.uniform(-5.0, 0.0);
      evs.push_back(e);
    }
    auto kept = temporal_nms(evs, 0.7);
    for (size_t i = 0; i < kept.size() && !nms_violations; ++i)
      for (size_t j = i + 1; j < kept.size(); ++j)
        if (temporal_iou(kept[i].event, kept[j].event) > 0.7) {
          ++nms_violations;
          break;
        }
    auto again = temporal_nms(kept, 0.7);
    if (again.size() != kept.size()) ++nms_violations;
  }
  c.require(nms_violations == 0, std::to_string(nms_violations) + " NMS violations");
  detail = c.detail.str();
  return c.ok;
}

// --------------------------------------------------------------------------
// 8. Codec round trip across the ablation knobs
// --------------------------------------------------------------------------
bool criterion_codec_roundtrip(std::string& detail) {
  Check c;
  std::vector<std::string> caps{"person pours the water", "person stirs the pot",
                                "person chops the onion", "person lifts the box"};
  size_t failures = 0;
  for (int bins : {32, 64, 128}) {
    auto vocab = Vocabulary::from_captions(caps, bins);
    for (int variant = 0; variant < 4 && failures == 0; ++variant) {
      CodecConfig cfg;
      cfg.bins = bins;
      cfg.max_caption_tokens = 16;
      cfg.use_prefix = false;
      cfg.time_mode = variant & 1 ? TimeMode::kAbsolute : TimeMode::kRelative;
      cfg.interval_format =
          variant & 2 ? IntervalFormat::kCenterDuration : IntervalFormat::kStartEnd;
      Rng rng(uint64_t(9000 + bins + variant));
      for (int trial = 0; trial < 10000; ++trial) {
        const double duration = rng.uniform(10.0, 40.0);
        cfg.clip_duration_cap = duration;
        const int T = 4;
        const double bin_w = duration / bins;
        std::vector<Event> events;
        for (int s = 0; s < T; ++s) {
          if (rng.uniform() < 0.35) continue;
          const double lo = s * duration / T, hi = (s + 1) * duration / T;
          double a = rng.uniform(lo, hi - 2.0);
          double b = std::min(a + rng.uniform(1.0, hi - a), hi - 1e-9);
          events.push_back({a, b, caps[rng.uniform_int(uint64_t(caps.size()))]});
        }
        auto per_seg = align_events_to_segments(events, T, duration);
        std::vector<Event> recovered;
        size_t dropped = 0;
        for (int s = 0; s < T; ++s) {
          auto label = encode_segment_label(per_seg[size_t(s)], duration, cfg, vocab);
          auto res = decode_tokens_to_events(label, duration, cfg, vocab);
          dropped += res.dropped;
          for (auto& e : res.events) recovered.push_back(e);
        }
        bool ok = dropped == 0 && recovered.size() == events.size();
        if (ok) {
          auto by_end = [](const Event& x, const Event& y) { return x.end < y.end; };
          std::stable_sort(events.begin(), events.end(), by_end);
          std::stable_sort(recovered.begin(), recovered.end(), by_end);
          for (size_t i = 0; i < events.size(); ++i) {
            ok = ok && recovered[i].caption == normalize_caption(events[i].caption);
            ok = ok && std::fabs(recovered[i].start - events[i].start) <= bin_w + 1e-9;
            ok = ok && std::fabs(recovered[i].end - events[i].end) <= bin_w + 1e-9;
          }
        }
        if (!ok) {
          ++failures;
          break;
        }
      }
    }
  }
  c.require(failures == 0, "round-trip failures in " + std::to_string(failures) + " variants");
  detail = c.detail.str();
  return c.ok;
}

// --------------------------------------------------------------------------
// 9. Statistics fixture
// --------------------------------------------------------------------------
bool criterion_stats_fixture(std::string& detail) {
  Check c;
  auto data = load_dataset_jsonl(std::string(STREAMCAP_FIXTURE_DIR) + "/vitt_stats_fixture.jsonl");
  std::vector<std::vector<Event>> gts;
  for (const auto& r : data) gts.push_back(r.events);
  auto st = caption_statistics(std::vector<std::vector<Event>>(data.size()), gts);
  c.require(st.gt_caption_count_mean == 7.1,
            "caption mean " + std::to_string(st.gt_caption_count_mean));
  c.require(st.gt_word_count_mean == 22.0, "word mean " + std::to_string(st.gt_word_count_mean));
  detail = c.detail.str();
  return c.ok;
}

}  // namespace

int main() {
  struct Criterion {
    int id;
    const char* name;
    std::function<bool(std::string&)> fn;
  };
  const std::vector<Criterion> criteria = {
      {1, "factorization equivalence (masked pass vs per-segment decodes)", criterion_factorization},
      {2, "streaming equals offline greedy decode on 50 videos", criterion_streaming},
      {3, "causality under segment perturbation, 100 trials", criterion_causality},
      {4, "gradient correctness, 20 seeds per primitive + end-to-end", criterion_gradients},
      {5, "learning check: overfit accuracy and held-out localization", criterion_learning},
      {6, "FLOPs reproduction and instrumented multiply counts", criterion_flops},
      {7, "metric oracles: SODA DP, CIDEr brute force, NMS properties", criterion_metric_oracles},
      {8, "codec round trip across time modes, formats and bin counts", criterion_codec_roundtrip},
      {9, "caption statistics fixture (7.1 captions, 22.0 words)", criterion_stats_fixture},
  };
  int failures = 0;
  for (const auto& c : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    std::string detail;
    bool ok = false;
    try {
      ok = c.fn(detail);
    } catch (const std::exception& e) {
      detail = std::string("exception: ") + e.what();
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("%s criterion %d: %s [%.1fs]%s%s\n", ok ? "PASS" : "FAIL", c.id, c.name, secs,
                detail.empty() ? "" : " -- ", detail.c_str());
    std::fflush(stdout);
    if (!ok) ++failures;
  }
  return failures;
}

#include "streamcap/infer.hpp"

#include <algorithm>
#include <cmath>

namespace streamcap {

double temporal_iou(const Event& a, const Event& b) {
  const double inter = std::max(0.0, std::min(a.end, b.end) - std::max(a.start, b.start));
  const double uni = (a.end - a.start) + (b.end - b.start) - inter;
  return uni > 0 ? inter / uni : 0.0;
}

namespace detail {
bool nms_order(const ScoredEvent& a, const ScoredEvent& b) {
  if (a.score != b.score) return a.score > b.score;
  if (a.event.start != b.event.start) return a.event.start < b.event.start;
  if (a.event.caption != b.event.caption) return a.event.caption < b.event.caption;
  return a.event.end < b.event.end;
}
}  // namespace detail

std::vector<ScoredEvent> temporal_nms(std::vector<ScoredEvent> events, double iou_thresh) {
  std::sort(events.begin(), events.end(), detail::nms_order);
  std::vector<ScoredEvent> kept;
  kept.reserve(events.size());
  for (auto& e : events) {
    bool ok = true;
    for (const auto& k : kept)
      if (temporal_iou(k.event, e.event) > iou_thresh) {
        ok = false;
        break;
      }
    if (ok) kept.push_back(std::move(e));
  }
  return kept;
}

namespace {

struct Hypothesis {
  std::vector<int> tokens;
  std::vector<double> logprobs;
  double sum = 0;
};

std::vector<double> log_softmax_scaled(const std::vector<double>& logits, double temperature) {
  std::vector<double> out(logits.size());
  double mx = -std::numeric_limits<double>::infinity();
  for (double v : logits) mx = std::max(mx, v / temperature);
  double sum = 0;
  for (size_t i = 0; i < logits.size(); ++i) {
    out[i] = logits[i] / temperature - mx;
    sum += std::exp(out[i]);
  }
  const double lse = std::log(sum);
  for (auto& v : out) v -= lse;
  return out;
}

}  // namespace

std::vector<ScoredSequence> beam_search(const StepFn& next_logits, int vocab_size, int eos_id,
                                        int max_tokens, int width, double temperature,
                                        int num_samples) {
  std::vector<ScoredSequence> finished;
  if (max_tokens <= 0) {
    ScoredSequence empty;
    empty.finished = false;
    finished.push_back(std::move(empty));
    return finished;
  }

  std::vector<Hypothesis> live(1);
  for (int step = 0; step < max_tokens && !live.empty(); ++step) {
    struct Cand {
      size_t hyp;
      int token;
      double sum;
      double logp;
    };
    std::vector<Cand> cands;
    cands.reserve(live.size() * size_t(vocab_size));
    for (size_t h = 0; h < live.size(); ++h) {
      const auto logp = log_softmax_scaled(next_logits(live[h].tokens), temperature);
      for (int t = 0; t < vocab_size; ++t)
        cands.push_back({h, t, live[h].sum + logp[size_t(t)], logp[size_t(t)]});
    }
    std::sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
      if (a.sum != b.sum) return a.sum > b.sum;
      if (a.token != b.token) return a.token < b.token;
      return a.hyp < b.hyp;
    });
    // The top `width` candidates overall; an EOS candidate retires its slot,
    // so width 1 is exactly greedy decoding.
    std::vector<Hypothesis> next;
    int taken = 0;
    for (const auto& c : cands) {
      if (taken >= width) break;
      ++taken;
      if (c.token == eos_id) {
        ScoredSequence done;
        done.tokens = live[c.hyp].tokens;
        done.token_logprobs = live[c.hyp].logprobs;
        done.token_logprobs.push_back(c.logp);
        done.sum_logprob = c.sum;
        done.score = c.sum / double(done.token_logprobs.size());
        done.finished = true;
        finished.push_back(std::move(done));
      } else {
        Hypothesis h = live[c.hyp];
        h.tokens.push_back(c.token);
        h.logprobs.push_back(c.logp);
        h.sum = c.sum;
        next.push_back(std::move(h));
      }
    }
    live = std::move(next);
  }

  // Out of budget: surviving beams count as unfinished hypotheses.
  for (auto& h : live) {
    ScoredSequence s;
    s.tokens = std::move(h.tokens);
    s.token_logprobs = std::move(h.logprobs);
    s.sum_logprob = h.sum;
    s.score = s.token_logprobs.empty() ? 0 : h.sum / double(s.token_logprobs.size());
    s.finished = false;
    finished.push_back(std::move(s));
  }

  std::sort(finished.begin(), finished.end(), [](const ScoredSequence& a, const ScoredSequence& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.finished != b.finished) return a.finished;
    return a.tokens < b.tokens;
  });
  if (int(finished.size()) > num_samples) finished.resize(size_t(num_samples));
  return finished;
}

}  // namespace streamcap

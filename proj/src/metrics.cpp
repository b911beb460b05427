#include "streamcap/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <json.hpp>
#include <set>
#include <sstream>

#include "streamcap/infer.hpp"

namespace streamcap {

namespace {

// Kuhn's augmenting-path matching over edges with IoU >= threshold.
bool augment(size_t u, const std::vector<std::vector<size_t>>& adj, std::vector<int>& match_gt,
             std::vector<bool>& used) {
  for (size_t v : adj[u]) {
    if (used[v]) continue;
    used[v] = true;
    if (match_gt[v] < 0 || augment(size_t(match_gt[v]), adj, match_gt, used)) {
      match_gt[v] = int(u);
      return true;
    }
  }
  return false;
}

size_t greedy_match_count(const std::vector<Event>& preds, const std::vector<Event>& gts,
                          double thr) {
  struct Pair {
    double iou;
    size_t p, g;
  };
  std::vector<Pair> pairs;
  for (size_t p = 0; p < preds.size(); ++p)
    for (size_t g = 0; g < gts.size(); ++g) {
      const double iou = temporal_iou(preds[p], gts[g]);
      if (iou >= thr) pairs.push_back({iou, p, g});
    }
  std::sort(pairs.begin(), pairs.end(), [](const Pair& a, const Pair& b) {
    if (a.iou != b.iou) return a.iou > b.iou;
    if (a.p != b.p) return a.p < b.p;
    return a.g < b.g;
  });
  std::vector<bool> used_p(preds.size()), used_g(gts.size());
  size_t matched = 0;
  for (const auto& pr : pairs) {
    if (used_p[pr.p] || used_g[pr.g]) continue;
    used_p[pr.p] = used_g[pr.g] = true;
    ++matched;
  }
  return matched;
}

size_t optimal_match_count(const std::vector<Event>& preds, const std::vector<Event>& gts,
                           double thr) {
  std::vector<std::vector<size_t>> adj(preds.size());
  for (size_t p = 0; p < preds.size(); ++p)
    for (size_t g = 0; g < gts.size(); ++g)
      if (temporal_iou(preds[p], gts[g]) >= thr) adj[p].push_back(g);
  std::vector<int> match_gt(gts.size(), -1);
  size_t matched = 0;
  for (size_t p = 0; p < preds.size(); ++p) {
    std::vector<bool> used(gts.size(), false);
    if (augment(p, adj, match_gt, used)) ++matched;
  }
  return matched;
}

double f_measure(double precision, double recall) {
  return precision + recall > 0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
}

}  // namespace

F1Result f1_localization(const std::vector<Event>& preds, const std::vector<Event>& gts,
                         const std::vector<double>& thresholds, bool exhaustive) {
  F1Result res;
  double sum = 0;
  for (double thr : thresholds) {
    double f1;
    if (preds.empty() && gts.empty()) {
      f1 = 1.0;
    } else if (preds.empty() || gts.empty()) {
      f1 = 0.0;
    } else {
      const size_t matched = exhaustive ? optimal_match_count(preds, gts, thr)
                                        : greedy_match_count(preds, gts, thr);
      f1 = f_measure(double(matched) / double(preds.size()),
                     double(matched) / double(gts.size()));
    }
    res.per_threshold.emplace_back(thr, f1);
    sum += f1;
  }
  res.mean = thresholds.empty() ? 0 : sum / double(thresholds.size());
  return res;
}

// ---------------------------------------------------------------------------
// CIDEr-D
// ---------------------------------------------------------------------------

namespace {

constexpr int kMaxNgram = 4;
constexpr double kSigma = 6.0;

using NgramCounts = std::map<std::string, double>;

std::string join_ngram(const std::vector<std::string>& words, size_t start, size_t n) {
  std::string key;
  for (size_t i = 0; i < n; ++i) {
    if (i) key.push_back('\x1f');
    key += words[start + i];
  }
  return key;
}

std::array<NgramCounts, kMaxNgram> ngram_counts(const std::string& caption) {
  std::array<NgramCounts, kMaxNgram> out;
  const auto words = tokenize_caption(caption);
  for (int n = 1; n <= kMaxNgram; ++n)
    for (size_t i = 0; i + size_t(n) <= words.size(); ++i)
      out[size_t(n - 1)][join_ngram(words, i, size_t(n))] += 1.0;
  return out;
}

struct TfIdfVec {
  std::array<NgramCounts, kMaxNgram> vec;
  std::array<double, kMaxNgram> norm{};
  double length = 0;  // bigram mass, the official length proxy
};

TfIdfVec to_tfidf(const std::array<NgramCounts, kMaxNgram>& counts,
                  const NgramCounts& document_frequency, double log_num_videos) {
  TfIdfVec out;
  for (int n = 0; n < kMaxNgram; ++n) {
    for (const auto& [g, tf] : counts[size_t(n)]) {
      auto it = document_frequency.find(g);
      const double df = std::log(std::max(1.0, it == document_frequency.end() ? 0.0 : it->second));
      const double w = tf * (log_num_videos - df);
      out.vec[size_t(n)][g] = w;
      out.norm[size_t(n)] += w * w;
      if (n == 1) out.length += tf;
    }
    out.norm[size_t(n)] = std::sqrt(out.norm[size_t(n)]);
  }
  return out;
}

double tfidf_sim(const TfIdfVec& hyp, const TfIdfVec& ref) {
  const double delta = hyp.length - ref.length;
  const double penalty = std::exp(-(delta * delta) / (2.0 * kSigma * kSigma));
  double total = 0;
  for (int n = 0; n < kMaxNgram; ++n) {
    double val = 0;
    for (const auto& [g, w] : hyp.vec[size_t(n)]) {
      auto it = ref.vec[size_t(n)].find(g);
      if (it != ref.vec[size_t(n)].end()) val += std::min(w, it->second) * it->second;
    }
    if (hyp.norm[size_t(n)] != 0 && ref.norm[size_t(n)] != 0)
      val /= hyp.norm[size_t(n)] * ref.norm[size_t(n)];
    total += val * penalty;
  }
  return total / double(kMaxNgram);
}

}  // namespace

double cider_d(const std::vector<std::vector<std::string>>& preds_by_video,
               const std::vector<std::vector<std::string>>& refs_by_video) {
  if (preds_by_video.size() != refs_by_video.size())
    throw DataError("cider_d: prediction/reference video counts differ");
  if (refs_by_video.empty()) throw DataError("cider_d: empty corpus");

  // Document frequency: a video counts once per distinct n-gram in its refs.
  NgramCounts df;
  for (const auto& refs : refs_by_video) {
    std::set<std::string> seen;
    for (const auto& r : refs) {
      const auto counts = ngram_counts(r);
      for (int n = 0; n < kMaxNgram; ++n)
        for (const auto& [g, tf] : counts[size_t(n)]) seen.insert(g);
    }
    for (const auto& g : seen) df[g] += 1.0;
  }
  const double log_n = std::log(double(refs_by_video.size()));

  double corpus = 0;
  size_t scored_videos = 0;
  for (size_t v = 0; v < refs_by_video.size(); ++v) {
    const auto& refs = refs_by_video[v];
    if (refs.empty()) continue;  // nothing to compare against
    ++scored_videos;
    std::vector<TfIdfVec> ref_vecs;
    ref_vecs.reserve(refs.size());
    for (const auto& r : refs) ref_vecs.push_back(to_tfidf(ngram_counts(r), df, log_n));
    const auto& preds = preds_by_video[v];
    if (preds.empty()) continue;  // contributes zero
    double video_score = 0;
    for (const auto& p : preds) {
      const auto hyp = to_tfidf(ngram_counts(p), df, log_n);
      double s = 0;
      for (const auto& rv : ref_vecs) s += tfidf_sim(hyp, rv);
      video_score += 10.0 * s / double(ref_vecs.size());
    }
    corpus += video_score / double(preds.size());
  }
  return scored_videos ? corpus / double(scored_videos) : 0.0;
}

// ---------------------------------------------------------------------------
// SODA-style order-preserving matching
// ---------------------------------------------------------------------------

double token_f1_similarity(const std::string& a, const std::string& b) {
  const auto wa = tokenize_caption(a);
  const auto wb = tokenize_caption(b);
  if (wa.empty() && wb.empty()) return 1.0;
  if (wa.empty() || wb.empty()) return 0.0;
  std::map<std::string, int> ca;
  for (const auto& w : wa) ++ca[w];
  int common = 0;
  for (const auto& w : wb) {
    auto it = ca.find(w);
    if (it != ca.end() && it->second > 0) {
      --it->second;
      ++common;
    }
  }
  return f_measure(double(common) / double(wa.size()), double(common) / double(wb.size()));
}

double soda_style(const std::vector<Event>& preds, const std::vector<Event>& gts,
                  const SentenceSim& sim) {
  if (preds.empty() && gts.empty()) return 1.0;
  if (preds.empty() || gts.empty()) return 0.0;
  std::vector<Event> p = preds, g = gts;
  auto by_start = [](const Event& a, const Event& b) { return a.start < b.start; };
  std::stable_sort(p.begin(), p.end(), by_start);
  std::stable_sort(g.begin(), g.end(), by_start);

  const size_t np = p.size(), ng = g.size();
  std::vector<std::vector<double>> dp(np + 1, std::vector<double>(ng + 1, 0.0));
  for (size_t i = 1; i <= np; ++i)
    for (size_t j = 1; j <= ng; ++j) {
      const double pair_score =
          sim(p[i - 1].caption, g[j - 1].caption) * temporal_iou(p[i - 1], g[j - 1]);
      dp[i][j] = std::max({dp[i - 1][j], dp[i][j - 1], dp[i - 1][j - 1] + pair_score});
    }
  const double total = dp[np][ng];
  return f_measure(total / double(np), total / double(ng));
}

CaptionStats caption_statistics(const std::vector<std::vector<Event>>& preds_by_video,
                                const std::vector<std::vector<Event>>& gts_by_video) {
  CaptionStats st;
  const size_t n = std::max(preds_by_video.size(), gts_by_video.size());
  if (n == 0) return st;
  auto words_in = [](const std::vector<Event>& evs) {
    double w = 0;
    for (const auto& e : evs) w += double(tokenize_caption(e.caption).size());
    return w;
  };
  for (size_t v = 0; v < n; ++v) {
    if (v < preds_by_video.size()) {
      st.pred_caption_count_mean += double(preds_by_video[v].size());
      st.pred_word_count_mean += words_in(preds_by_video[v]);
    }
    if (v < gts_by_video.size()) {
      st.gt_caption_count_mean += double(gts_by_video[v].size());
      st.gt_word_count_mean += words_in(gts_by_video[v]);
    }
  }
  st.pred_caption_count_mean /= double(n);
  st.pred_word_count_mean /= double(n);
  st.gt_caption_count_mean /= double(n);
  st.gt_word_count_mean /= double(n);
  return st;
}

MetricsReport evaluate_predictions(const std::map<std::string, std::vector<Event>>& preds_by_video,
                                   const std::vector<VideoRecord>& dataset,
                                   const std::vector<double>& thresholds) {
  if (dataset.empty()) throw DataError("evaluate: empty dataset");
  MetricsReport rep;
  rep.videos = dataset.size();
  rep.f1.per_threshold.resize(thresholds.size());
  for (size_t t = 0; t < thresholds.size(); ++t) rep.f1.per_threshold[t] = {thresholds[t], 0.0};

  std::vector<std::vector<std::string>> pred_caps, ref_caps;
  std::vector<std::vector<Event>> pred_events, gt_events;
  static const std::vector<Event> kNoEvents;
  for (const auto& video : dataset) {
    auto it = preds_by_video.find(video.id);
    const std::vector<Event>& preds = it == preds_by_video.end() ? kNoEvents : it->second;

    const auto f1 = f1_localization(preds, video.events, thresholds);
    for (size_t t = 0; t < thresholds.size(); ++t)
      rep.f1.per_threshold[t].second += f1.per_threshold[t].second;
    rep.soda += soda_style(preds, video.events);

    std::vector<std::string> pc, rc;
    for (const auto& e : preds) pc.push_back(e.caption);
    for (const auto& e : video.events) rc.push_back(e.caption);
    pred_caps.push_back(std::move(pc));
    ref_caps.push_back(std::move(rc));
    pred_events.push_back(preds);
    gt_events.push_back(video.events);
  }
  const double nv = double(dataset.size());
  double mean_sum = 0;
  for (auto& [thr, f1] : rep.f1.per_threshold) {
    f1 /= nv;
    mean_sum += f1;
  }
  rep.f1.mean = thresholds.empty() ? 0 : mean_sum / double(thresholds.size());
  rep.soda /= nv;
  rep.cider = cider_d(pred_caps, ref_caps);
  rep.stats = caption_statistics(pred_events, gt_events);
  return rep;
}

std::string MetricsReport::to_json_string() const {
  nlohmann::json j;
  j["format_version"] = 1;
  j["videos"] = videos;
  nlohmann::json f1j;
  for (const auto& [thr, f1] : f1.per_threshold) {
    std::ostringstream key;
    key << thr;
    f1j[key.str()] = f1;
  }
  j["f1_per_threshold"] = std::move(f1j);
  j["f1_mean"] = f1.mean;
  j["cider"] = cider;
  j["soda_style"] = soda;
  j["pred_caption_count_mean"] = stats.pred_caption_count_mean;
  j["pred_word_count_mean"] = stats.pred_word_count_mean;
  j["gt_caption_count_mean"] = stats.gt_caption_count_mean;
  j["gt_word_count_mean"] = stats.gt_word_count_mean;
  j["dropped_parse_count"] = dropped_parse_count;
  return j.dump(2);
}

std::string MetricsReport::to_tsv_header() const {
  std::ostringstream os;
  os << "videos";
  for (const auto& [thr, f1] : f1.per_threshold) os << "\tf1@" << thr;
  os << "\tf1_mean\tcider\tsoda_style\tpred_captions\tpred_words\tgt_captions\tgt_words\tdropped";
  return os.str();
}

std::string MetricsReport::to_tsv_row() const {
  std::ostringstream os;
  os << videos;
  for (const auto& [thr, f1] : f1.per_threshold) os << '\t' << f1;
  os << '\t' << f1.mean << '\t' << cider << '\t' << soda << '\t' << stats.pred_caption_count_mean
     << '\t' << stats.pred_word_count_mean << '\t' << stats.gt_caption_count_mean << '\t'
     << stats.gt_word_count_mean << '\t' << dropped_parse_count;
  return os.str();
}

}  // namespace streamcap

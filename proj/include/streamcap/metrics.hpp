#pragma once

// Dense-captioning evaluation: temporal F1 with greedy IoU matching,
// CIDEr-D over per-video reference sets, an order-preserving SODA-style
// matcher, and corpus caption statistics.

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "streamcap/codec.hpp"
#include "streamcap/dataset.hpp"

namespace streamcap {

inline const std::vector<double>& default_iou_thresholds() {
  static const std::vector<double> t{0.3, 0.5, 0.7, 0.9};
  return t;
}

struct F1Result {
  std::vector<std::pair<double, double>> per_threshold;  // (threshold, f1)
  double mean = 0;
};

// One video. Greedy one-to-one matching by descending IoU per threshold.
// Both sides empty -> 1; exactly one side empty -> 0. The exhaustive flag
// switches to optimal matching (small instances only).
F1Result f1_localization(const std::vector<Event>& preds, const std::vector<Event>& gts,
                         const std::vector<double>& thresholds = default_iou_thresholds(),
                         bool exhaustive = false);

// CIDEr-D (n-grams 1..4, sigma 6, x10) with document frequencies over the
// reference corpus; one document per video. Scores each predicted caption
// against its video's references, averages per video, then over videos.
double cider_d(const std::vector<std::vector<std::string>>& preds_by_video,
               const std::vector<std::vector<std::string>>& refs_by_video);

// Pairwise similarity for the SODA-style matcher.
using SentenceSim = std::function<double(const std::string&, const std::string&)>;

// Token-multiset F1 overlap after caption normalization.
double token_f1_similarity(const std::string& a, const std::string& b);

// Order-preserving one-to-one matching maximizing the sum of
// sim(text) * temporal IoU, reported as an F-measure. One video.
double soda_style(const std::vector<Event>& preds, const std::vector<Event>& gts,
                  const SentenceSim& sim = token_f1_similarity);

struct CaptionStats {
  double pred_caption_count_mean = 0;
  double pred_word_count_mean = 0;
  double gt_caption_count_mean = 0;
  double gt_word_count_mean = 0;
};

CaptionStats caption_statistics(const std::vector<std::vector<Event>>& preds_by_video,
                                const std::vector<std::vector<Event>>& gts_by_video);

struct MetricsReport {
  F1Result f1;
  double cider = 0;
  double soda = 0;
  CaptionStats stats;
  size_t dropped_parse_count = 0;
  size_t videos = 0;

  std::string to_json_string() const;
  std::string to_tsv_header() const;
  std::string to_tsv_row() const;
};

// Dataset-level evaluation: per-video scores averaged over videos. The
// prediction map may omit videos (treated as empty prediction sets).
MetricsReport evaluate_predictions(
    const std::map<std::string, std::vector<Event>>& preds_by_video,
    const std::vector<VideoRecord>& dataset,
    const std::vector<double>& thresholds = default_iou_thresholds());

}  // namespace streamcap

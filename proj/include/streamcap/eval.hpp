#pragma once

// Glue between streaming inference and the metrics suite: run a session per
// video, collect emitted events, score against ground truth.

#include <map>
#include <string>
#include <vector>

#include "streamcap/infer.hpp"
#include "streamcap/metrics.hpp"
#include "streamcap/train.hpp"

namespace streamcap {

template <typename Scalar>
Tensor<Scalar> segment_frames_of(const VideoRecord& r, const ModelConfig& cfg, int seg) {
  const size_t fs = size_t(cfg.frames_per_segment), fd = size_t(cfg.frame_dim);
  std::vector<Scalar> v;
  v.reserve(fs * fd);
  for (size_t f = size_t(seg) * fs; f < size_t(seg + 1) * fs; ++f) {
    if (f >= r.features.size() || r.features[f].size() != fd)
      throw DataError("video " + r.id + ": frame grid does not match the model config");
    for (double x : r.features[f]) v.push_back(Scalar(x));
  }
  return Tensor<Scalar>::from_vector({fs, fd}, std::move(v));
}

template <typename Scalar>
std::vector<PredictionRow> stream_predict(const Model<Scalar>& model, const VideoRecord& video,
                                          const CodecConfig& codec_cfg, const Vocabulary& vocab,
                                          const DecodeConfig& decode_cfg,
                                          size_t* dropped = nullptr) {
  const int t = model.config().segments;
  StreamSession<Scalar> session(model, codec_cfg, vocab, decode_cfg, video.duration, t);
  std::vector<PredictionRow> rows;
  auto emit = [&](const std::vector<ScoredEvent>& events) {
    for (const auto& e : events) {
      PredictionRow row;
      row.video_id = video.id;
      row.segment_index = e.segment_index;
      row.event = e.event;
      row.score = e.score;
      rows.push_back(std::move(row));
    }
  };
  for (int s = 0; s < t; ++s)
    emit(session.push_segment(segment_frames_of<Scalar>(video, model.config(), s)));
  emit(session.finish());
  if (dropped) *dropped += session.dropped_parses();
  return rows;
}

template <typename Scalar>
MetricsReport evaluate_model(const Model<Scalar>& model, const std::vector<VideoRecord>& data,
                             const CodecConfig& codec_cfg, const Vocabulary& vocab,
                             const DecodeConfig& decode_cfg) {
  std::map<std::string, std::vector<Event>> preds;
  size_t dropped = 0;
  for (const auto& video : data) {
    auto rows = stream_predict(model, video, codec_cfg, vocab, decode_cfg, &dropped);
    auto& events = preds[video.id];
    for (auto& r : rows) events.push_back(r.event);
  }
  auto report = evaluate_predictions(preds, data);
  report.dropped_parse_count = dropped;
  return report;
}

inline MetricsReport evaluate_prediction_rows(const std::vector<PredictionRow>& rows,
                                              const std::vector<VideoRecord>& data) {
  std::map<std::string, std::vector<Event>> preds;
  for (const auto& r : rows) preds[r.video_id].push_back(r.event);
  return evaluate_predictions(preds, data);
}

}  // namespace streamcap

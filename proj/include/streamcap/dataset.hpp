#pragma once

// Dataset and prediction files are JSON Lines.
//   video:      {"id", "duration", "features": [[...]...], "events": [...]}
//   prediction: {"video_id", "segment_index", "start", "end", "caption", "score"}

#include <map>
#include <string>
#include <vector>

#include "streamcap/codec.hpp"

namespace streamcap {

struct VideoRecord {
  std::string id;
  double duration = 0;
  std::vector<std::vector<double>> features;  // frames x frame_dim
  std::vector<Event> events;
};

void save_dataset_jsonl(const std::string& path, const std::vector<VideoRecord>& records);
std::vector<VideoRecord> load_dataset_jsonl(const std::string& path);

struct PredictionRow {
  std::string video_id;
  int segment_index = 0;
  Event event;
  double score = 0;
};

void save_predictions_jsonl(const std::string& path, const std::vector<PredictionRow>& rows);
std::vector<PredictionRow> load_predictions_jsonl(const std::string& path);

struct DatasetStats {
  size_t videos = 0;
  size_t events = 0;
  double mean_captions_per_video = 0;
  double mean_words_per_video = 0;
  double mean_duration = 0;
  size_t feature_dim = 0;
  size_t min_frames = 0;
  size_t max_frames = 0;
};

// Schema, event ordering, time ranges and feature widths. Throws DataError
// naming the line and video on the first violation.
DatasetStats validate_dataset(const std::vector<VideoRecord>& records);
DatasetStats validate_dataset_file(const std::string& path);

}  // namespace streamcap

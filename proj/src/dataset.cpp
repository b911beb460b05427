#include "streamcap/dataset.hpp"

#include <fstream>
#include <json.hpp>

namespace streamcap {

using nlohmann::json;

namespace {

json event_to_json(const Event& e) {
  return json{{"start", e.start}, {"end", e.end}, {"caption", e.caption}};
}

Event event_from_json(const json& j) {
  Event e;
  e.start = j.at("start").get<double>();
  e.end = j.at("end").get<double>();
  e.caption = j.at("caption").get<std::string>();
  return e;
}

}  // namespace

void save_dataset_jsonl(const std::string& path, const std::vector<VideoRecord>& records) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open for writing: " + path);
  for (const auto& r : records) {
    json j;
    j["id"] = r.id;
    j["duration"] = r.duration;
    j["features"] = r.features;
    json evs = json::array();
    for (const auto& e : r.events) evs.push_back(event_to_json(e));
    j["events"] = std::move(evs);
    out << j.dump() << '\n';
  }
}

std::vector<VideoRecord> load_dataset_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open: " + path);
  std::vector<VideoRecord> records;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
      VideoRecord r;
      r.id = j.at("id").get<std::string>();
      r.duration = j.at("duration").get<double>();
      r.features = j.at("features").get<std::vector<std::vector<double>>>();
      for (const auto& e : j.at("events")) r.events.push_back(event_from_json(e));
      records.push_back(std::move(r));
    } catch (const json::exception& e) {
      throw DataError(path + ": line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return records;
}

void save_predictions_jsonl(const std::string& path, const std::vector<PredictionRow>& rows) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open for writing: " + path);
  for (const auto& r : rows) {
    json j{{"video_id", r.video_id}, {"segment_index", r.segment_index},
           {"start", r.event.start}, {"end", r.event.end},
           {"caption", r.event.caption}, {"score", r.score}};
    out << j.dump() << '\n';
  }
}

std::vector<PredictionRow> load_predictions_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open: " + path);
  std::vector<PredictionRow> rows;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      json j = json::parse(line);
      PredictionRow r;
      r.video_id = j.at("video_id").get<std::string>();
      r.segment_index = j.at("segment_index").get<int>();
      r.event.start = j.at("start").get<double>();
      r.event.end = j.at("end").get<double>();
      r.event.caption = j.at("caption").get<std::string>();
      r.score = j.at("score").get<double>();
      rows.push_back(std::move(r));
    } catch (const json::exception& e) {
      throw DataError(path + ": line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return rows;
}

DatasetStats validate_dataset(const std::vector<VideoRecord>& records) {
  if (records.empty()) throw DataError("no records");
  DatasetStats st;
  st.videos = records.size();
  st.min_frames = records[0].features.size();
  double caption_sum = 0, word_sum = 0, duration_sum = 0;
  for (const auto& r : records) {
    if (r.id.empty()) throw DataError("video with empty id");
    if (r.duration <= 0) throw DataError("video " + r.id + ": non-positive duration");
    if (r.features.empty()) throw DataError("video " + r.id + ": no frames");
    for (const auto& f : r.features) {
      if (st.feature_dim == 0) st.feature_dim = f.size();
      if (f.size() != st.feature_dim)
        throw DataError("video " + r.id + ": inconsistent feature width " +
                        std::to_string(f.size()) + " vs " + std::to_string(st.feature_dim));
    }
    st.min_frames = std::min(st.min_frames, r.features.size());
    st.max_frames = std::max(st.max_frames, r.features.size());
    double prev_end = 0;
    for (const auto& e : r.events) {
      if (e.end < e.start)
        throw DataError("video " + r.id + ": event ends before it starts");
      if (e.start < 0 || e.end > r.duration + 1e-9)
        throw DataError("video " + r.id + ": event outside [0, duration]");
      if (e.end < prev_end)
        throw DataError("video " + r.id + ": events not ordered by end time");
      prev_end = e.end;
      word_sum += double(tokenize_caption(e.caption).size());
      ++st.events;
    }
    caption_sum += double(r.events.size());
    duration_sum += r.duration;
  }
  st.mean_captions_per_video = caption_sum / double(st.videos);
  st.mean_words_per_video = word_sum / double(st.videos);
  st.mean_duration = duration_sum / double(st.videos);
  return st;
}

DatasetStats validate_dataset_file(const std::string& path) {
  return validate_dataset(load_dataset_jsonl(path));
}

}  // namespace streamcap

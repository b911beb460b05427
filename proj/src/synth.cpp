#include "streamcap/synth.hpp"

#include <algorithm>
#include <cmath>

#include "streamcap/error.hpp"

namespace streamcap {

int SynthSpec::frames() const { return int(std::lround(duration * frame_rate)); }

void SynthSpec::validate() const {
  if (verbs.size() * objects.size() < 2)
    throw ConfigError("synth: need |verbs|*|objects| >= 2");
  if (duration <= 0 || frame_rate <= 0) throw ConfigError("synth: non-positive duration or rate");
  if (events_min < 0 || events_max < events_min) throw ConfigError("synth: bad event count range");
  if (event_min_len <= 0 || event_max_len < event_min_len)
    throw ConfigError("synth: bad event length range");
  if (gap_min < 0 || gap_max < gap_min) throw ConfigError("synth: bad gap range");
  if (noise_std < 0) throw ConfigError("synth: negative noise_std");
  // Two frames per event and per gap keep run-length grouping well defined.
  if (event_min_len * frame_rate < 2) throw ConfigError("synth: events shorter than two frames");
  if (events_max > 0 && gap_min * frame_rate < 1)
    throw ConfigError("synth: gaps shorter than one frame");
  const double min_total = events_max * (event_min_len + gap_min);
  if (min_total > duration)
    throw ConfigError("synth: infeasible packing, " + std::to_string(events_max) +
                      " events of >= " + std::to_string(event_min_len + gap_min) +
                      "s do not fit in " + std::to_string(duration) + "s");
}

namespace {

struct FrameEvent {
  int start_frame;
  int end_frame;  // exclusive
  size_t verb;
  size_t object;
};

// Draw event placements in whole frames so boundaries sit on the grid.
std::vector<FrameEvent> draw_events(const SynthSpec& spec, Rng& rng) {
  const int total = spec.frames();
  const int min_len = std::max(2, int(std::lround(spec.event_min_len * spec.frame_rate)));
  const int max_len = std::max(min_len, int(std::lround(spec.event_max_len * spec.frame_rate)));
  const int min_gap = std::max(1, int(std::lround(spec.gap_min * spec.frame_rate)));
  const int max_gap = std::max(min_gap, int(std::lround(spec.gap_max * spec.frame_rate)));
  const int n = spec.events_min + int(rng.uniform_int(uint64_t(spec.events_max - spec.events_min + 1)));
  for (int attempt = 0; attempt < 1000; ++attempt) {
    std::vector<FrameEvent> events;
    int cursor = 0;
    bool ok = true;
    for (int i = 0; i < n; ++i) {
      const int gap = min_gap + int(rng.uniform_int(uint64_t(max_gap - min_gap + 1)));
      const int len = min_len + int(rng.uniform_int(uint64_t(max_len - min_len + 1)));
      const int start = cursor + gap;
      if (start + len > total) {
        ok = false;
        break;
      }
      FrameEvent e;
      e.start_frame = start;
      e.end_frame = start + len;
      e.verb = rng.uniform_int(uint64_t(spec.verbs.size()));
      e.object = rng.uniform_int(uint64_t(spec.objects.size()));
      events.push_back(e);
      cursor = start + len;
    }
    if (ok) return events;
  }
  throw ConfigError("synth: could not place events after 1000 attempts; ranges too tight");
}

std::string caption_for(const SynthSpec& spec, size_t verb, size_t object) {
  return "person " + spec.verbs[verb] + " the " + spec.objects[object];
}

}  // namespace

std::vector<VideoRecord> generate_synthetic(const SynthSpec& spec, size_t count) {
  spec.validate();
  std::vector<VideoRecord> out;
  out.reserve(count);
  const int frames = spec.frames();
  const int dim = spec.frame_dim();
  for (size_t idx = 0; idx < count; ++idx) {
    // Independent stream per video keeps generation order-free.
    Rng rng(spec.seed * 0x9e3779b97f4a7c15ull + 0x100000001b3ull * (idx + 1));
    VideoRecord r;
    char buf[32];
    std::snprintf(buf, sizeof buf, "synth-%06zu", idx);
    r.id = buf;
    r.duration = spec.duration;
    const auto events = draw_events(spec, rng);
    r.features.assign(size_t(frames), std::vector<double>(size_t(dim), 0.0));
    for (auto& frame : r.features)
      for (auto& v : frame) v = spec.noise_std > 0 ? rng.normal(0.0, spec.noise_std) : 0.0;
    for (const auto& e : events) {
      for (int f = e.start_frame; f < e.end_frame; ++f) {
        r.features[size_t(f)][e.verb] += 1.0;
        r.features[size_t(f)][spec.verbs.size() + e.object] += 1.0;
      }
      Event ev;
      ev.start = e.start_frame / spec.frame_rate;
      ev.end = e.end_frame / spec.frame_rate;
      ev.caption = caption_for(spec, e.verb, e.object);
      r.events.push_back(std::move(ev));
    }
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<std::string> synth_caption_inventory(const SynthSpec& spec) {
  std::vector<std::string> caps;
  for (size_t v = 0; v < spec.verbs.size(); ++v)
    for (size_t o = 0; o < spec.objects.size(); ++o) caps.push_back(caption_for(spec, v, o));
  return caps;
}

std::vector<Event> bayes_readout(const VideoRecord& video, const SynthSpec& spec) {
  const size_t nv = spec.verbs.size();
  const size_t no = spec.objects.size();
  const int frames = int(video.features.size());

  // Per-frame classification: active when both one-hot halves clear the
  // midpoint between signal (1) and background (0).
  std::vector<int> verb_of(size_t(frames), -1), obj_of(size_t(frames), -1);
  for (int f = 0; f < frames; ++f) {
    const auto& row = video.features[size_t(f)];
    size_t bv = 0, bo = 0;
    for (size_t i = 1; i < nv; ++i)
      if (row[i] > row[bv]) bv = i;
    for (size_t i = 1; i < no; ++i)
      if (row[nv + i] > row[nv + bo]) bo = i;
    if (row[bv] >= 0.5 && row[nv + bo] >= 0.5) {
      verb_of[size_t(f)] = int(bv);
      obj_of[size_t(f)] = int(bo);
    }
  }

  // Run-length grouping; runs shorter than two frames are noise flickers.
  std::vector<Event> events;
  int f = 0;
  while (f < frames) {
    if (verb_of[size_t(f)] < 0) {
      ++f;
      continue;
    }
    int g = f + 1;
    while (g < frames && verb_of[size_t(g)] == verb_of[size_t(f)] &&
           obj_of[size_t(g)] == obj_of[size_t(f)])
      ++g;
    if (g - f >= 2) {
      Event e;
      e.start = f / spec.frame_rate;
      e.end = g / spec.frame_rate;
      e.caption = "person " + spec.verbs[size_t(verb_of[size_t(f)])] + " the " +
                  spec.objects[size_t(obj_of[size_t(f)])];
      events.push_back(std::move(e));
    }
    f = g;
  }
  return events;
}

}  // namespace streamcap

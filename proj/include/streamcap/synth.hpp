#pragma once

// Synthetic dense-captioning corpus with known event structure. Frames are
// feature vectors: one-hot(verb) ++ one-hot(object) plus Gaussian noise
// inside an event, pure noise outside. Captions follow the fixed template
// "person <verb> the <object>".

#include <string>
#include <vector>

#include "streamcap/dataset.hpp"
#include "streamcap/rng.hpp"

namespace streamcap {

struct SynthSpec {
  std::vector<std::string> verbs = {"pours", "stirs", "chops", "lifts"};
  std::vector<std::string> objects = {"water", "pot", "onion", "box"};
  double duration = 16.0;
  double frame_rate = 4.0;  // Hz
  int events_min = 2;
  int events_max = 5;
  double event_min_len = 1.5;  // seconds
  double event_max_len = 4.0;
  double gap_min = 0.5;
  double gap_max = 2.5;
  double noise_std = 0.25;
  uint64_t seed = 0;

  int frame_dim() const { return int(verbs.size() + objects.size()); }
  int frames() const;
  void validate() const;  // throws ConfigError on infeasible packing
};

// Deterministic given (spec, count). Event boundaries lie on the frame grid,
// so the per-frame readout below can recover them exactly at zero noise.
std::vector<VideoRecord> generate_synthetic(const SynthSpec& spec, size_t count);

// All caption strings the spec can emit; the training vocabulary is closed
// over these.
std::vector<std::string> synth_caption_inventory(const SynthSpec& spec);

// Per-frame argmax readout with run-length grouping: the skyline oracle.
// Recovers ground truth exactly at noise_std = 0.
std::vector<Event> bayes_readout(const VideoRecord& video, const SynthSpec& spec);

}  // namespace streamcap

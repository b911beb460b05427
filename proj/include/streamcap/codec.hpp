#pragma once

// Tokenization, time discretization and the localized-caption grammar:
//   <start_token> <start_time> <end_time> <caption words...> ... <EOS>
// Labels are aligned to the segment containing the event's end time.

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "streamcap/error.hpp"

namespace streamcap {

struct Event {
  double start = 0;
  double end = 0;
  std::string caption;
};

enum class TimeMode { kAbsolute, kRelative };
enum class IntervalFormat { kStartEnd, kCenterDuration };

struct CodecConfig {
  int bins = 32;
  TimeMode time_mode = TimeMode::kRelative;
  IntervalFormat interval_format = IntervalFormat::kStartEnd;
  bool use_prefix = true;
  int max_caption_tokens = 12;     // per-segment label slot, EOS included
  double clip_duration_cap = 0.0;  // absolute mode only

  void validate() const;
};

const char* time_mode_name(TimeMode m);
TimeMode time_mode_from_name(const std::string& s);
const char* interval_format_name(IntervalFormat f);
IntervalFormat interval_format_from_name(const std::string& s);

// Lowercases, strips punctuation, splits on whitespace.
std::vector<std::string> tokenize_caption(const std::string& caption);
std::string normalize_caption(const std::string& caption);

// Word-level vocabulary. Layout: PAD=0, BOS, EOS, SEG_START, TIME_0..TIME_{B-1},
// then word tokens in sorted order. The prefix literals ("caption the
// segment :") are always present as word tokens.
class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kSegStart = 3;

  Vocabulary() = default;
  Vocabulary(const std::vector<std::string>& words, int bins);

  static Vocabulary from_captions(std::span<const std::string> captions, int bins);

  int size() const { return static_cast<int>(token_to_id_.size()); }
  int bins() const { return bins_; }

  int id(const std::string& token) const;  // throws CodecError on unknown token
  const std::string& token(int id) const;

  bool is_time(int id) const { return id >= 4 && id < 4 + bins_; }
  int time_bin(int id) const;
  int time_token(int bin) const;
  bool is_word(int id) const { return id >= 4 + bins_ && id < size(); }

  std::vector<int> encode_words(const std::string& caption) const;
  std::string decode_words(std::span<const int> ids) const;

  std::map<std::string, int> to_map() const { return token_to_id_; }
  static Vocabulary from_map(const std::map<std::string, int>& m);

 private:
  int bins_ = 0;
  std::map<std::string, int> token_to_id_;
  std::vector<std::string> id_to_token_;
};

// floor(t / span * B) clamped to [0, B-1]; span is the video duration in
// relative mode and clip_duration_cap in absolute mode (t clamped to cap).
int time_to_bin(double t, double duration, const CodecConfig& cfg);

// Bin-center reconstruction: (bin + 0.5) / B * span.
double bin_center_time(int bin, double duration, const CodecConfig& cfg);
double bin_to_time(int token, double duration, const CodecConfig& cfg, const Vocabulary& vocab);

// Event e goes to the unique segment i with i*(duration/T) <= e.end <
// (i+1)*(duration/T); the last segment is closed on the right.
std::vector<std::vector<Event>> align_events_to_segments(std::vector<Event> events,
                                                         int segments, double duration);

// Token label for one segment's events, padded with PAD to exactly
// cfg.max_caption_tokens. Empty segment -> [EOS, PAD...]. Events that do not
// fit are dropped whole from the tail; a first event that cannot fit at all
// raises LabelOverflowError.
std::vector<int> encode_segment_label(const std::vector<Event>& events, double duration,
                                      const CodecConfig& cfg, const Vocabulary& vocab);

struct ParseResult {
  std::vector<Event> events;
  size_t dropped = 0;                            // malformed fragments discarded
  std::vector<std::pair<size_t, size_t>> spans;  // [first,last) token index per event
};

// Greedy left-to-right parse; malformed fragments are dropped, not errors.
ParseResult decode_tokens_to_events(std::span<const int> tokens, double duration,
                                    const CodecConfig& cfg, const Vocabulary& vocab);

// Decoder input prefix for a segment: "caption the segment : <time>" when
// enabled, [BOS] otherwise.
std::vector<int> make_prefix(int segment_index, int segments, double duration,
                             const CodecConfig& cfg, const Vocabulary& vocab);

inline int prefix_length(const CodecConfig& cfg) { return cfg.use_prefix ? 5 : 1; }

}  // namespace streamcap

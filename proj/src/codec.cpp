#include "streamcap/codec.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <set>
#include <sstream>

namespace streamcap {

void CodecConfig::validate() const {
  if (bins < 2) throw ConfigError("codec: bins must be >= 2, got " + std::to_string(bins));
  if (max_caption_tokens < 4)
    throw ConfigError("codec: max_caption_tokens must be >= 4 (start token, two time tokens, EOS)");
  if (time_mode == TimeMode::kAbsolute && clip_duration_cap <= 0)
    throw ConfigError("codec: absolute time mode requires clip_duration_cap > 0");
}

const char* time_mode_name(TimeMode m) {
  return m == TimeMode::kAbsolute ? "absolute" : "relative";
}
TimeMode time_mode_from_name(const std::string& s) {
  if (s == "absolute") return TimeMode::kAbsolute;
  if (s == "relative") return TimeMode::kRelative;
  throw ConfigError("unknown time mode: " + s);
}
const char* interval_format_name(IntervalFormat f) {
  return f == IntervalFormat::kStartEnd ? "start_end" : "center_duration";
}
IntervalFormat interval_format_from_name(const std::string& s) {
  if (s == "start_end") return IntervalFormat::kStartEnd;
  if (s == "center_duration") return IntervalFormat::kCenterDuration;
  throw ConfigError("unknown interval format: " + s);
}

std::vector<std::string> tokenize_caption(const std::string& caption) {
  std::vector<std::string> words;
  std::string cur;
  for (char c : caption) {
    const unsigned char u = static_cast<unsigned char>(c);
    if (std::isalnum(u)) {
      cur.push_back(static_cast<char>(std::tolower(u)));
    } else if (std::isspace(u)) {
      if (!cur.empty()) {
        words.push_back(cur);
        cur.clear();
      }
    }
    // punctuation is dropped
  }
  if (!cur.empty()) words.push_back(cur);
  return words;
}

std::string normalize_caption(const std::string& caption) {
  const auto words = tokenize_caption(caption);
  std::string out;
  for (size_t i = 0; i < words.size(); ++i) {
    if (i) out.push_back(' ');
    out += words[i];
  }
  return out;
}

namespace {
const char* kSpecialNames[] = {"<pad>", "<bos>", "<eos>", "<start_token>"};
// Word tokens the prefix template needs regardless of corpus content.
const char* kPrefixWords[] = {"caption", "the", "segment", ":"};
}  // namespace

Vocabulary::Vocabulary(const std::vector<std::string>& words, int bins) : bins_(bins) {
  if (bins < 2) throw ConfigError("vocabulary: bins must be >= 2");
  id_to_token_.clear();
  for (const char* s : kSpecialNames) id_to_token_.emplace_back(s);
  for (int b = 0; b < bins; ++b) id_to_token_.push_back("<time_" + std::to_string(b) + ">");

  std::set<std::string> uniq(words.begin(), words.end());
  for (const char* s : kPrefixWords) uniq.insert(s);
  for (const auto& w : uniq) {
    if (w.empty()) continue;
    id_to_token_.push_back(w);
  }
  for (size_t i = 0; i < id_to_token_.size(); ++i)
    token_to_id_[id_to_token_[i]] = static_cast<int>(i);
  if (token_to_id_.size() != id_to_token_.size())
    throw CodecError("vocabulary: token collision between words and specials");
}

Vocabulary Vocabulary::from_captions(std::span<const std::string> captions, int bins) {
  std::vector<std::string> words;
  for (const auto& c : captions)
    for (auto& w : tokenize_caption(c)) words.push_back(std::move(w));
  return Vocabulary(words, bins);
}

int Vocabulary::id(const std::string& token) const {
  auto it = token_to_id_.find(token);
  if (it == token_to_id_.end()) throw CodecError("vocabulary: unknown token '" + token + "'");
  return it->second;
}

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || id >= size())
    throw CodecError("vocabulary: id " + std::to_string(id) + " out of range");
  return id_to_token_[static_cast<size_t>(id)];
}

int Vocabulary::time_bin(int id) const {
  if (!is_time(id)) throw CodecError("token id " + std::to_string(id) + " is not a time token");
  return id - 4;
}

int Vocabulary::time_token(int bin) const {
  if (bin < 0 || bin >= bins_)
    throw CodecError("time bin " + std::to_string(bin) + " out of range for B=" + std::to_string(bins_));
  return 4 + bin;
}

std::vector<int> Vocabulary::encode_words(const std::string& caption) const {
  std::vector<int> out;
  for (const auto& w : tokenize_caption(caption)) out.push_back(id(w));
  return out;
}

std::string Vocabulary::decode_words(std::span<const int> ids) const {
  std::string out;
  for (size_t i = 0; i < ids.size(); ++i) {
    if (i) out.push_back(' ');
    out += token(ids[i]);
  }
  return out;
}

Vocabulary Vocabulary::from_map(const std::map<std::string, int>& m) {
  Vocabulary v;
  v.token_to_id_ = m;
  v.id_to_token_.assign(m.size(), "");
  for (const auto& [tok, id] : m) {
    if (id < 0 || static_cast<size_t>(id) >= m.size())
      throw CodecError("vocabulary map: non-contiguous id " + std::to_string(id));
    if (!v.id_to_token_[static_cast<size_t>(id)].empty())
      throw CodecError("vocabulary map: duplicate id " + std::to_string(id));
    v.id_to_token_[static_cast<size_t>(id)] = tok;
  }
  for (int i = 0; i < 4; ++i)
    if (v.id_to_token_[static_cast<size_t>(i)] != kSpecialNames[i])
      throw CodecError("vocabulary map: special token layout mismatch at id " + std::to_string(i));
  int bins = 0;
  while (4 + bins < v.size() && v.id_to_token_[static_cast<size_t>(4 + bins)] ==
                                    "<time_" + std::to_string(bins) + ">")
    ++bins;
  if (bins < 2) throw CodecError("vocabulary map: missing time tokens");
  v.bins_ = bins;
  return v;
}

int time_to_bin(double t, double duration, const CodecConfig& cfg) {
  if (t < 0) throw RangeError("time_to_bin: negative time " + std::to_string(t));
  if (duration <= 0) throw RangeError("time_to_bin: duration must be positive");
  double span = duration;
  if (cfg.time_mode == TimeMode::kAbsolute) {
    if (cfg.clip_duration_cap <= 0)
      throw ConfigError("time_to_bin: absolute mode requires clip_duration_cap");
    span = cfg.clip_duration_cap;
    t = std::min(t, span);
  }
  const int b = static_cast<int>(std::floor(t / span * cfg.bins));
  return std::clamp(b, 0, cfg.bins - 1);
}

double bin_center_time(int bin, double duration, const CodecConfig& cfg) {
  const double span = cfg.time_mode == TimeMode::kAbsolute ? cfg.clip_duration_cap : duration;
  return (bin + 0.5) / cfg.bins * span;
}

double bin_to_time(int token, double duration, const CodecConfig& cfg, const Vocabulary& vocab) {
  return bin_center_time(vocab.time_bin(token), duration, cfg);
}

std::vector<std::vector<Event>> align_events_to_segments(std::vector<Event> events,
                                                         int segments, double duration) {
  std::stable_sort(events.begin(), events.end(),
                   [](const Event& a, const Event& b) { return a.end < b.end; });
  std::vector<std::vector<Event>> per_segment(static_cast<size_t>(segments));
  const double width = duration / segments;
  for (auto& e : events) {
    int idx = static_cast<int>(std::floor(e.end / width));
    idx = std::clamp(idx, 0, segments - 1);  // end == duration lands in the last segment
    per_segment[static_cast<size_t>(idx)].push_back(std::move(e));
  }
  return per_segment;
}

namespace {

std::vector<int> event_tokens(const Event& e, double duration, const CodecConfig& cfg,
                              const Vocabulary& vocab) {
  std::vector<int> toks{Vocabulary::kSegStart};
  if (cfg.interval_format == IntervalFormat::kStartEnd) {
    toks.push_back(vocab.time_token(time_to_bin(e.start, duration, cfg)));
    toks.push_back(vocab.time_token(time_to_bin(e.end, duration, cfg)));
  } else {
    toks.push_back(vocab.time_token(time_to_bin((e.start + e.end) / 2.0, duration, cfg)));
    toks.push_back(vocab.time_token(time_to_bin(e.end - e.start, duration, cfg)));
  }
  for (int w : vocab.encode_words(e.caption)) toks.push_back(w);
  return toks;
}

}  // namespace

std::vector<int> encode_segment_label(const std::vector<Event>& events, double duration,
                                      const CodecConfig& cfg, const Vocabulary& vocab) {
  const size_t cap = static_cast<size_t>(cfg.max_caption_tokens);
  std::vector<Event> ordered = events;
  std::stable_sort(ordered.begin(), ordered.end(),
                   [](const Event& a, const Event& b) { return a.end < b.end; });
  std::vector<int> out;
  for (size_t i = 0; i < ordered.size(); ++i) {
    const auto toks = event_tokens(ordered[i], duration, cfg, vocab);
    if (out.size() + toks.size() + 1 > cap) {  // +1 leaves room for EOS
      if (i == 0)
        throw LabelOverflowError("segment label: event '" + ordered[i].caption + "' needs " +
                                 std::to_string(toks.size() + 1) + " tokens, budget is " +
                                 std::to_string(cap));
      break;  // drop this and all trailing events whole
    }
    out.insert(out.end(), toks.begin(), toks.end());
  }
  out.push_back(Vocabulary::kEos);
  out.resize(cap, Vocabulary::kPad);
  return out;
}

ParseResult decode_tokens_to_events(std::span<const int> tokens, double duration,
                                    const CodecConfig& cfg, const Vocabulary& vocab) {
  ParseResult res;
  size_t i = 0;
  const size_t n = tokens.size();
  auto is_terminator = [&](size_t j) {
    return tokens[j] == Vocabulary::kEos || tokens[j] == Vocabulary::kPad ||
           tokens[j] == Vocabulary::kSegStart;
  };
  while (i < n) {
    if (tokens[i] == Vocabulary::kEos || tokens[i] == Vocabulary::kPad) break;
    if (tokens[i] != Vocabulary::kSegStart) {  // stray token outside any event
      ++res.dropped;
      while (i < n && !is_terminator(i)) ++i;
      if (i < n && tokens[i] != Vocabulary::kSegStart) break;
      continue;
    }
    const size_t first = i;
    ++i;
    if (i + 1 >= n || !vocab.is_time(tokens[i]) || !vocab.is_time(tokens[i + 1])) {
      ++res.dropped;  // missing time tokens
      while (i < n && !is_terminator(i)) ++i;
      if (i < n && tokens[i] != Vocabulary::kSegStart) break;
      continue;
    }
    const int tok_a = tokens[i];
    const int tok_b = tokens[i + 1];
    i += 2;
    std::vector<int> words;
    bool malformed = false;
    while (i < n && !is_terminator(i)) {
      if (vocab.is_word(tokens[i])) {
        words.push_back(tokens[i]);
      } else {
        malformed = true;  // time token or BOS inside a caption
      }
      ++i;
    }
    if (malformed) {
      ++res.dropped;
      continue;
    }
    double start, end;
    if (cfg.interval_format == IntervalFormat::kStartEnd) {
      start = bin_to_time(tok_a, duration, cfg, vocab);
      end = bin_to_time(tok_b, duration, cfg, vocab);
    } else {
      const double center = bin_to_time(tok_a, duration, cfg, vocab);
      const double extent = bin_to_time(tok_b, duration, cfg, vocab);
      start = center - extent / 2.0;
      end = center + extent / 2.0;
    }
    if (end < start) {
      ++res.dropped;
      continue;
    }
    start = std::clamp(start, 0.0, duration);
    end = std::clamp(end, 0.0, duration);
    Event e;
    e.start = start;
    e.end = end;
    e.caption = vocab.decode_words(words);
    res.events.push_back(std::move(e));
    res.spans.emplace_back(first, i);
  }
  return res;
}

std::vector<int> make_prefix(int segment_index, int segments, double duration,
                             const CodecConfig& cfg, const Vocabulary& vocab) {
  if (!cfg.use_prefix) return {Vocabulary::kBos};
  const double boundary = segment_index * (duration / segments);
  return {vocab.id("caption"), vocab.id("the"), vocab.id("segment"), vocab.id(":"),
          vocab.time_token(time_to_bin(boundary, duration, cfg))};
}

}  // namespace streamcap

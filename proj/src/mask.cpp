#include "streamcap/mask.hpp"

#include <string>

#include "streamcap/error.hpp"

namespace streamcap {

BoolMatrix all_true_mask(size_t rows, size_t cols) {
  return BoolMatrix(rows, cols, true);
}

BoolMatrix causal_mask(size_t n) {
  BoolMatrix m(n, n);
  for (size_t i = 0; i < n; ++i)
    for (size_t j = 0; j <= i; ++j) m.set(i, j, true);
  return m;
}

BoolMatrix segment_causal_mask(size_t segments, size_t tokens_per_segment) {
  const size_t n = segments * tokens_per_segment;
  BoolMatrix m(n, n);
  for (size_t i = 0; i < n; ++i) {
    const size_t si = i / tokens_per_segment;
    for (size_t j = 0; j < n; ++j) {
      if (j / tokens_per_segment <= si) m.set(i, j, true);
    }
  }
  return m;
}

BoolMatrix text_block_causal_mask(size_t segments, size_t tokens_per_segment) {
  const size_t n = segments * tokens_per_segment;
  BoolMatrix m(n, n);
  for (size_t i = 0; i < n; ++i) {
    const size_t si = i / tokens_per_segment;
    for (size_t j = si * tokens_per_segment; j <= i; ++j) m.set(i, j, true);
  }
  return m;
}

BoolMatrix build_cross_mask(size_t segments, size_t tokens_per_segment,
                            size_t vision_tokens_per_segment, CrossMaskMode mode) {
  const size_t q = segments * tokens_per_segment;
  const size_t k = segments * vision_tokens_per_segment;
  if (mode == CrossMaskMode::kGlobal) return BoolMatrix(q, k, true);
  BoolMatrix m(q, k);
  for (size_t t = 0; t < q; ++t) {
    const size_t s = t / tokens_per_segment;
    const size_t lo = mode == CrossMaskMode::kSegment ? s * vision_tokens_per_segment : 0;
    const size_t hi = (s + 1) * vision_tokens_per_segment;
    for (size_t j = lo; j < hi; ++j) m.set(t, j, true);
  }
  return m;
}

const char* cross_mask_mode_name(CrossMaskMode mode) {
  switch (mode) {
    case CrossMaskMode::kGlobal: return "global";
    case CrossMaskMode::kCausal: return "causal";
    case CrossMaskMode::kSegment: return "segment";
  }
  return "?";
}

CrossMaskMode cross_mask_mode_from_name(const std::string& name) {
  if (name == "global") return CrossMaskMode::kGlobal;
  if (name == "causal") return CrossMaskMode::kCausal;
  if (name == "segment") return CrossMaskMode::kSegment;
  throw ConfigError("unknown cross-mask mode: " + name);
}

}  // namespace streamcap

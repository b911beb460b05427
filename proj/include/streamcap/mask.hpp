#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace streamcap {

// Dense boolean attention mask, true = visible.
class BoolMatrix {
 public:
  BoolMatrix() = default;
  BoolMatrix(size_t rows, size_t cols, bool fill = false)
      : rows_(rows), cols_(cols), bits_(rows * cols, fill ? 1 : 0) {}

  size_t rows() const { return rows_; }
  size_t cols() const { return cols_; }

  bool at(size_t r, size_t c) const { return bits_[r * cols_ + c] != 0; }
  void set(size_t r, size_t c, bool v) { bits_[r * cols_ + c] = v ? 1 : 0; }

  const uint8_t* row(size_t r) const { return bits_.data() + r * cols_; }

  bool operator==(const BoolMatrix& o) const {
    return rows_ == o.rows_ && cols_ == o.cols_ && bits_ == o.bits_;
  }

 private:
  size_t rows_ = 0;
  size_t cols_ = 0;
  std::vector<uint8_t> bits_;
};

enum class CrossMaskMode { kGlobal, kCausal, kSegment };

BoolMatrix all_true_mask(size_t rows, size_t cols);

// Lower-triangular: row i sees cols <= i.
BoolMatrix causal_mask(size_t n);

// Over segments * tokens_per_segment positions: a token in segment i sees
// every token in segments <= i (attention within a segment is bidirectional).
BoolMatrix segment_causal_mask(size_t segments, size_t tokens_per_segment);

// Text self-attention: token t sees token u iff both lie in the same
// segment block of length tokens_per_segment and u <= t. Segments are
// decoded independently given memory, so no text attention crosses blocks.
BoolMatrix text_block_causal_mask(size_t segments, size_t tokens_per_segment);

// Cross-attention from T*l text positions onto T*n_vision vision tokens.
// Text position t belongs to segment floor(t / l).
BoolMatrix build_cross_mask(size_t segments, size_t tokens_per_segment,
                            size_t vision_tokens_per_segment, CrossMaskMode mode);

const char* cross_mask_mode_name(CrossMaskMode mode);
CrossMaskMode cross_mask_mode_from_name(const std::string& name);

}  // namespace streamcap

#pragma once

// Four-stage architecture: per-segment encoder, dimensionality reducer,
// autoregressive memory transformer over segments, and a shared text decoder
// applied per segment (equivalently, once over T*l positions under
// cross-segment masks).
//
// The per-segment and single-pass decoder paths execute the same kernels in
// the same accumulation order, so with dropout off they agree bitwise in
// 64-bit.

#include <cmath>
#include <string>
#include <vector>

#include "streamcap/error.hpp"
#include "streamcap/mask.hpp"
#include "streamcap/nn.hpp"
#include "streamcap/tensor.hpp"

namespace streamcap {

struct ModelConfig {
  int segments = 8;            // T
  int frames_per_segment = 8;  // S
  int frame_dim = 16;
  int encoder_tokens = 8;      // K, per segment
  int reduced_tokens = 4;      // N, per segment; the decoder's memory width
  int tokens_per_segment = 16; // l, decoder positions per segment (prefix included)
  int d_model = 64;
  int heads = 4;
  int encoder_layers = 1;
  int reducer_layers = 1;
  int memory_layers = 1;
  int decoder_layers = 2;
  int ff_mult = 4;
  int time_bins = 32;
  int vocab_size = 64;
  int max_segments = 64;  // capacity of the learned segment-index table

  void validate() const {
    auto positive = [](int v, const char* name) {
      if (v <= 0) throw ConfigError(std::string("model: ") + name + " must be positive");
    };
    positive(segments, "segments");
    positive(frames_per_segment, "frames_per_segment");
    positive(frame_dim, "frame_dim");
    positive(encoder_tokens, "encoder_tokens");
    positive(reduced_tokens, "reduced_tokens");
    positive(d_model, "d_model");
    positive(heads, "heads");
    positive(vocab_size, "vocab_size");
    if (d_model % heads != 0) throw ConfigError("model: d_model must be divisible by heads");
    if (reduced_tokens >= encoder_tokens)
      throw ConfigError("model: reduced_tokens must be < encoder_tokens");
    if (encoder_tokens % frames_per_segment != 0)
      throw ConfigError("model: encoder_tokens must be a multiple of frames_per_segment");
    if (tokens_per_segment < 4)
      throw ConfigError("model: tokens_per_segment must be >= 4");
    if (segments > max_segments)
      throw ConfigError("model: segments exceed max_segments=" + std::to_string(max_segments));
  }
};

// Running state of one stream: reduced features and autoregressive outputs
// for the segments seen so far. ar_out is append-only; entry i never changes
// once segment i has been consumed.
template <typename Scalar>
struct MemoryState {
  std::vector<Tensor<Scalar>> reduced;  // each [N, d]
  std::vector<Tensor<Scalar>> ar_out;   // each [N, d]
  size_t t_seen() const { return ar_out.size(); }
};

template <typename Scalar>
class Model {
 public:
  explicit Model(const ModelConfig& cfg, uint64_t seed = 0)
      : cfg_(cfg), dropout_rng_(seed ^ 0x9e3779b97f4a7c15ull) {
    cfg_.validate();
    Rng rng(seed);
    const size_t d = size_t(cfg_.d_model);
    const size_t tokens_per_frame = size_t(cfg_.encoder_tokens / cfg_.frames_per_segment);

    frame_embed_.init("encoder.frame_embed", size_t(cfg_.frame_dim), tokens_per_frame * d, rng, reg_);
    enc_pos_ = make_embedding<Scalar>("encoder.pos", size_t(cfg_.encoder_tokens), d, rng);
    reg_.add(&enc_pos_);
    enc_blocks_.resize(size_t(cfg_.encoder_layers));
    for (size_t i = 0; i < enc_blocks_.size(); ++i)
      enc_blocks_[i].init("encoder.block" + std::to_string(i), d, size_t(cfg_.heads),
                          size_t(cfg_.ff_mult), false, rng, reg_);
    enc_ln_.init("encoder.ln_out", d, reg_);

    red_blocks_.resize(size_t(cfg_.reducer_layers));
    for (size_t i = 0; i < red_blocks_.size(); ++i)
      red_blocks_[i].init("reducer.block" + std::to_string(i), d, size_t(cfg_.heads),
                          size_t(cfg_.ff_mult), false, rng, reg_);
    red_ln_.init("reducer.ln_out", d, reg_);

    seg_pos_ = make_embedding<Scalar>("memory.segment_pos", size_t(cfg_.max_segments), d, rng);
    reg_.add(&seg_pos_);
    mem_blocks_.resize(size_t(cfg_.memory_layers));
    for (size_t i = 0; i < mem_blocks_.size(); ++i)
      mem_blocks_[i].init("memory.block" + std::to_string(i), d, size_t(cfg_.heads),
                          size_t(cfg_.ff_mult), false, rng, reg_);
    mem_ln_.init("memory.ln_out", d, reg_);

    tok_embed_ = make_embedding<Scalar>("decoder.token_embed", size_t(cfg_.vocab_size), d, rng);
    reg_.add(&tok_embed_);
    text_pos_ = make_embedding<Scalar>("decoder.pos", size_t(cfg_.tokens_per_segment), d, rng);
    reg_.add(&text_pos_);
    dec_blocks_.resize(size_t(cfg_.decoder_layers));
    for (size_t i = 0; i < dec_blocks_.size(); ++i)
      dec_blocks_[i].init("decoder.block" + std::to_string(i), d, size_t(cfg_.heads),
                          size_t(cfg_.ff_mult), true, rng, reg_);
    dec_ln_.init("decoder.ln_out", d, reg_);
    out_proj_.init("decoder.logits", d, size_t(cfg_.vocab_size), rng, reg_);
  }

  // The registry points at parameter members; the model must stay put.
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  const ModelConfig& config() const { return cfg_; }
  const ParamRegistry<Scalar>& params() const { return reg_; }
  ParamRegistry<Scalar>& params() { return reg_; }

  void set_train(bool training) { training_ = training; }
  bool training() const { return training_; }
  void set_dropout(double rate) { dropout_rate_ = rate; }
  void seed_dropout(uint64_t seed) { dropout_rng_ = Rng(seed); }

  // [S, frame_dim] -> [K, d]; depends only on this segment's frames.
  Tensor<Scalar> encode_one_segment(const Tensor<Scalar>& frames) const {
    if (frames.rank() != 2 || frames.dim(0) != size_t(cfg_.frames_per_segment) ||
        frames.dim(1) != size_t(cfg_.frame_dim))
      throw ShapeError("encode_one_segment: want [" + std::to_string(cfg_.frames_per_segment) +
                       "," + std::to_string(cfg_.frame_dim) + "], got " + shape_str(frames.shape()));
    const size_t k = size_t(cfg_.encoder_tokens), d = size_t(cfg_.d_model);
    auto x = reshape(frame_embed_.forward(frames), {k, d});
    x = add(x, enc_pos_.tensor);
    const BoolMatrix full = all_true_mask(k, k);
    for (const auto& b : enc_blocks_) x = block_forward(b, x, full, nullptr, nullptr);
    return enc_ln_.forward(x);
  }

  // [T, S, frame_dim] -> [T, K, d], segment by segment (no cross-segment mixing).
  Tensor<Scalar> encode_segments(const Tensor<Scalar>& grid) const {
    if (grid.rank() != 3 || grid.dim(1) != size_t(cfg_.frames_per_segment) ||
        grid.dim(2) != size_t(cfg_.frame_dim))
      throw ShapeError("encode_segments: want [T," + std::to_string(cfg_.frames_per_segment) + "," +
                       std::to_string(cfg_.frame_dim) + "], got " + shape_str(grid.shape()));
    const size_t t = grid.dim(0);
    std::vector<Tensor<Scalar>> outs;
    outs.reserve(t);
    for (size_t s = 0; s < t; ++s) {
      auto frames = reshape(slice_rows(grid, s, 1),
                            {size_t(cfg_.frames_per_segment), size_t(cfg_.frame_dim)});
      outs.push_back(encode_one_segment(frames));
    }
    return reshape(concat_rows(outs), {t, size_t(cfg_.encoder_tokens), size_t(cfg_.d_model)});
  }

  // [K, d] -> [N, d]: transformer over the K tokens, keep the trailing N outputs.
  Tensor<Scalar> reduce_one_segment(const Tensor<Scalar>& encoded) const {
    const size_t k = size_t(cfg_.encoder_tokens), n = size_t(cfg_.reduced_tokens);
    auto x = encoded;
    const BoolMatrix full = all_true_mask(k, k);
    for (const auto& b : red_blocks_) x = block_forward(b, x, full, nullptr, nullptr);
    return slice_rows(red_ln_.forward(x), k - n, n);
  }

  // [T, K, d] -> [T, N, d], per segment independently.
  Tensor<Scalar> reduce(const Tensor<Scalar>& encoded) const {
    if (encoded.rank() != 3 || encoded.dim(1) != size_t(cfg_.encoder_tokens))
      throw ShapeError("reduce: want [T," + std::to_string(cfg_.encoder_tokens) + "," +
                       std::to_string(cfg_.d_model) + "], got " + shape_str(encoded.shape()));
    const size_t t = encoded.dim(0);
    std::vector<Tensor<Scalar>> outs;
    outs.reserve(t);
    for (size_t s = 0; s < t; ++s) {
      auto seg = reshape(slice_rows(encoded, s, 1),
                         {size_t(cfg_.encoder_tokens), size_t(cfg_.d_model)});
      outs.push_back(reduce_one_segment(seg));
    }
    return reshape(concat_rows(outs), {t, size_t(cfg_.reduced_tokens), size_t(cfg_.d_model)});
  }

  // [t, N, d] -> [t, N, d] under a segment-causal mask; output slice i
  // summarizes segments 0..i.
  Tensor<Scalar> ar_memory(const Tensor<Scalar>& reduced) const {
    if (reduced.rank() != 3 || reduced.dim(1) != size_t(cfg_.reduced_tokens))
      throw ShapeError("ar_memory: want [t," + std::to_string(cfg_.reduced_tokens) + "," +
                       std::to_string(cfg_.d_model) + "], got " + shape_str(reduced.shape()));
    const size_t t = reduced.dim(0);
    if (t > size_t(cfg_.max_segments))
      throw ConfigError("ar_memory: " + std::to_string(t) + " segments exceed max_segments");
    const size_t n = size_t(cfg_.reduced_tokens), d = size_t(cfg_.d_model);
    std::vector<int> seg_ids(t * n);
    for (size_t i = 0; i < t * n; ++i) seg_ids[i] = int(i / n);
    auto x = add(reshape(reduced, {t * n, d}), embedding_lookup(seg_pos_.tensor, seg_ids));
    const BoolMatrix mask = segment_causal_mask(t, n);
    for (const auto& b : mem_blocks_) x = block_forward(b, x, mask, nullptr, nullptr);
    return reshape(mem_ln_.forward(x), {t, n, d});
  }

  // Single masked pass over T*l text positions. Self-attention is
  // block-causal (no text attention across segments); cross-attention mode
  // selects global / causal / segment visibility onto the T*N memory tokens.
  Tensor<Scalar> decoder_forward(const std::vector<int>& text, const Tensor<Scalar>& memory,
                                 CrossMaskMode mode) const {
    if (memory.rank() != 3 || memory.dim(1) != size_t(cfg_.reduced_tokens))
      throw ShapeError("decoder_forward: memory want [T," + std::to_string(cfg_.reduced_tokens) +
                       ",d], got " + shape_str(memory.shape()));
    const size_t t = memory.dim(0);
    const size_t l = size_t(cfg_.tokens_per_segment);
    if (text.size() != t * l)
      throw ShapeError("decoder_forward: text length " + std::to_string(text.size()) +
                       " != T*l = " + std::to_string(t * l));
    const size_t n = size_t(cfg_.reduced_tokens), d = size_t(cfg_.d_model);
    std::vector<int> pos_ids(t * l);
    for (size_t i = 0; i < t * l; ++i) pos_ids[i] = int(i % l);
    auto x = add(embedding_lookup(tok_embed_.tensor, text),
                 embedding_lookup(text_pos_.tensor, pos_ids));
    const BoolMatrix self_mask = text_block_causal_mask(t, l);
    const BoolMatrix cross = build_cross_mask(t, l, n, mode);
    auto mem_flat = reshape(memory, {t * n, d});
    for (const auto& b : dec_blocks_) x = block_forward(b, x, self_mask, &mem_flat, &cross);
    return out_proj_.forward(dec_ln_.forward(x));
  }

  // Decode path for one segment given its memory slice: causal self mask,
  // full visibility onto the N memory tokens. Bitwise-equivalent to the
  // corresponding rows of decoder_forward in segment mode.
  Tensor<Scalar> decode_segment_logits(const std::vector<int>& tokens,
                                       const Tensor<Scalar>& memory_slice) const {
    if (memory_slice.rank() != 2 || memory_slice.dim(0) != size_t(cfg_.reduced_tokens))
      throw ShapeError("decode_segment_logits: memory slice want [" +
                       std::to_string(cfg_.reduced_tokens) + ",d], got " +
                       shape_str(memory_slice.shape()));
    const size_t len = tokens.size();
    if (len == 0 || len > size_t(cfg_.tokens_per_segment))
      throw ShapeError("decode_segment_logits: length " + std::to_string(len) +
                       " outside [1," + std::to_string(cfg_.tokens_per_segment) + "]");
    std::vector<int> pos_ids(len);
    for (size_t i = 0; i < len; ++i) pos_ids[i] = int(i);
    auto x = add(embedding_lookup(tok_embed_.tensor, tokens),
                 embedding_lookup(text_pos_.tensor, pos_ids));
    const BoolMatrix self_mask = causal_mask(len);
    const BoolMatrix cross = all_true_mask(len, size_t(cfg_.reduced_tokens));
    for (const auto& b : dec_blocks_) x = block_forward(b, x, self_mask, &memory_slice, &cross);
    return out_proj_.forward(dec_ln_.forward(x));
  }

  Tensor<Scalar> forward(const Tensor<Scalar>& grid, const std::vector<int>& text,
                         CrossMaskMode mode) const {
    return decoder_forward(text, ar_memory(reduce(encode_segments(grid))), mode);
  }

  // Consume one segment: append its reduced features, recompute the
  // autoregressive pass over the prefix and append the new output slice.
  // Earlier slices are unchanged by construction (segment-causal masking).
  void push_segment_memory(MemoryState<Scalar>& state, const Tensor<Scalar>& frames) const {
    auto reduced = reduce_one_segment(encode_one_segment(frames));
    state.reduced.push_back(reduced);
    const size_t t = state.reduced.size();
    const size_t n = size_t(cfg_.reduced_tokens), d = size_t(cfg_.d_model);
    auto stacked = reshape(concat_rows(state.reduced), {t, n, d});
    auto ar = ar_memory(stacked);
    state.ar_out.push_back(reshape(slice_rows(ar, t - 1, 1), {n, d}));
  }

 private:
  Tensor<Scalar> block_forward(const TransformerBlock<Scalar>& b, const Tensor<Scalar>& x,
                               const BoolMatrix& self_mask, const Tensor<Scalar>* memory,
                               const BoolMatrix* cross_mask) const {
    return b.forward(x, self_mask, memory, cross_mask, training_, dropout_rate_,
                     training_ ? &dropout_rng_ : nullptr);
  }

  ModelConfig cfg_;
  ParamRegistry<Scalar> reg_;

  Linear<Scalar> frame_embed_;
  Parameter<Scalar> enc_pos_;
  std::vector<TransformerBlock<Scalar>> enc_blocks_;
  LayerNorm<Scalar> enc_ln_;

  std::vector<TransformerBlock<Scalar>> red_blocks_;
  LayerNorm<Scalar> red_ln_;

  Parameter<Scalar> seg_pos_;
  std::vector<TransformerBlock<Scalar>> mem_blocks_;
  LayerNorm<Scalar> mem_ln_;

  Parameter<Scalar> tok_embed_;
  Parameter<Scalar> text_pos_;
  std::vector<TransformerBlock<Scalar>> dec_blocks_;
  LayerNorm<Scalar> dec_ln_;
  Linear<Scalar> out_proj_;

  bool training_ = false;
  double dropout_rate_ = 0.1;
  mutable Rng dropout_rng_;
};

}  // namespace streamcap

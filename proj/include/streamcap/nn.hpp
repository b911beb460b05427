#pragma once

// Transformer building blocks on top of the tensor core. Pre-LN residual
// blocks; one cross-attention sublayer per decoder block, after
// self-attention.

#include <memory>
#include <set>
#include <string>
#include <vector>

#include "streamcap/error.hpp"
#include "streamcap/tensor.hpp"

namespace streamcap {

template <typename Scalar>
struct Parameter {
  std::string name;
  Tensor<Scalar> tensor;
};

template <typename Scalar>
class ParamRegistry {
 public:
  void add(Parameter<Scalar>* p) {
    if (!names_.insert(p->name).second)
      throw ConfigError("duplicate parameter name: " + p->name);
    params_.push_back(p);
  }
  const std::vector<Parameter<Scalar>*>& all() const { return params_; }

  size_t total_elements() const {
    size_t n = 0;
    for (auto* p : params_) n += p->tensor.size();
    return n;
  }

 private:
  std::vector<Parameter<Scalar>*> params_;
  std::set<std::string> names_;
};

template <typename Scalar>
struct Linear {
  Parameter<Scalar> weight;  // [in, out]
  Parameter<Scalar> bias;    // [out]

  void init(const std::string& name, size_t in, size_t out, Rng& rng,
            ParamRegistry<Scalar>& reg) {
    std::vector<Scalar> w(in * out);
    for (auto& v : w) v = static_cast<Scalar>(rng.truncated_normal(0.02));
    weight = {name + ".weight",
              Tensor<Scalar>::from_vector({in, out}, std::move(w), true)};
    bias = {name + ".bias", Tensor<Scalar>::zeros({out}, true)};
    reg.add(&weight);
    reg.add(&bias);
  }

  Tensor<Scalar> forward(const Tensor<Scalar>& x) const {
    return add(matmul(x, weight.tensor), bias.tensor);
  }
};

template <typename Scalar>
struct LayerNorm {
  Parameter<Scalar> gain;  // ones
  Parameter<Scalar> bias;  // zeros

  void init(const std::string& name, size_t d, ParamRegistry<Scalar>& reg) {
    gain = {name + ".gain", Tensor<Scalar>::full({d}, Scalar(1))};
    gain.tensor.set_requires_grad(true);
    bias = {name + ".bias", Tensor<Scalar>::zeros({d}, true)};
    reg.add(&gain);
    reg.add(&bias);
  }

  Tensor<Scalar> forward(const Tensor<Scalar>& x) const {
    return layernorm(x, gain.tensor, bias.tensor);
  }
};

template <typename Scalar>
struct Attention {
  Linear<Scalar> wq, wk, wv, wo;
  size_t heads = 1;
  bool is_cross = false;

  void init(const std::string& name, size_t d, size_t n_heads, bool cross,
            Rng& rng, ParamRegistry<Scalar>& reg) {
    heads = n_heads;
    is_cross = cross;
    wq.init(name + ".q", d, d, rng, reg);
    wk.init(name + ".k", d, d, rng, reg);
    wv.init(name + ".v", d, d, rng, reg);
    wo.init(name + ".out", d, d, rng, reg);
  }

  // q_in [sq, d], kv_in [skv, d], mask [sq, skv].
  Tensor<Scalar> forward(const Tensor<Scalar>& q_in, const Tensor<Scalar>& kv_in,
                         const BoolMatrix& mask) const {
    const size_t d = q_in.dim(1);
    const size_t hd = d / heads;
    auto q = split_heads(scale(wq.forward(q_in), Scalar(1.0 / std::sqrt(double(hd)))), heads);
    auto k = split_heads(wk.forward(kv_in), heads);
    auto v = split_heads(wv.forward(kv_in), heads);
    Tensor<Scalar> att;
    {
      // Only the score and weighted-sum matmuls count as attention work.
      CountLabel label(is_cross ? "cross_attn_scores" : "self_attn_scores");
      auto scores = matmul(q, transpose_last2(k));  // [h, sq, skv]
      auto probs = masked_softmax(scores, mask);
      att = matmul(probs, v);  // [h, sq, hd]
    }
    return wo.forward(merge_heads(att));
  }
};

template <typename Scalar>
struct TransformerBlock {
  LayerNorm<Scalar> ln_self;
  Attention<Scalar> self_attn;
  bool has_cross = false;
  LayerNorm<Scalar> ln_cross;
  Attention<Scalar> cross_attn;
  LayerNorm<Scalar> ln_ff;
  Linear<Scalar> ff1, ff2;

  void init(const std::string& name, size_t d, size_t heads, size_t ff_mult, bool cross,
            Rng& rng, ParamRegistry<Scalar>& reg) {
    has_cross = cross;
    ln_self.init(name + ".ln_self", d, reg);
    self_attn.init(name + ".self_attn", d, heads, false, rng, reg);
    if (cross) {
      ln_cross.init(name + ".ln_cross", d, reg);
      cross_attn.init(name + ".cross_attn", d, heads, true, rng, reg);
    }
    ln_ff.init(name + ".ln_ff", d, reg);
    ff1.init(name + ".ff1", d, d * ff_mult, rng, reg);
    ff2.init(name + ".ff2", d * ff_mult, d, rng, reg);
  }

  Tensor<Scalar> forward(const Tensor<Scalar>& x, const BoolMatrix& self_mask,
                         const Tensor<Scalar>* memory, const BoolMatrix* cross_mask,
                         bool training, double dropout_rate, Rng* rng) const {
    auto maybe_drop = [&](const Tensor<Scalar>& t) {
      return training && rng ? dropout(t, dropout_rate, *rng, training) : t;
    };
    auto normed = ln_self.forward(x);
    auto h = add(x, maybe_drop(self_attn.forward(normed, normed, self_mask)));
    if (has_cross) {
      if (memory == nullptr || cross_mask == nullptr)
        throw ConfigError("cross block called without memory");
      h = add(h, maybe_drop(cross_attn.forward(ln_cross.forward(h), *memory, *cross_mask)));
    }
    auto f = ff2.forward(gelu(ff1.forward(ln_ff.forward(h))));
    return add(h, maybe_drop(f));
  }
};

// Embedding table parameter initialised with truncated normal rows. The
// owner registers the stored member itself (registry keeps raw pointers).
template <typename Scalar>
Parameter<Scalar> make_embedding(const std::string& name, size_t rows, size_t d, Rng& rng) {
  std::vector<Scalar> w(rows * d);
  for (auto& v : w) v = static_cast<Scalar>(rng.truncated_normal(0.02));
  return Parameter<Scalar>{name, Tensor<Scalar>::from_vector({rows, d}, std::move(w), true)};
}

}  // namespace streamcap

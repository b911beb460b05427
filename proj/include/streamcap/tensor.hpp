#pragma once

// Dense row-major tensors with tape-based reverse-mode autodiff, sized for
// small transformers on CPU. Scalar is float or double; the double
// instantiation is what gradient-check tests run against.
//
// Forward kernels accumulate in a fixed (row, then column) order and are
// single-threaded, so identical inputs give bitwise-identical outputs.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "streamcap/error.hpp"
#include "streamcap/mask.hpp"
#include "streamcap/rng.hpp"

namespace streamcap {

using Shape = std::vector<size_t>;

inline size_t numel(const Shape& s) {
  size_t n = 1;
  for (size_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

// ---------------------------------------------------------------------------
// Multiply instrumentation. A counter is activated for a region via
// CountScope; matmul reports m*n*k multiplies under the current label.
// With no active counter the cost is a thread_local null check.
// ---------------------------------------------------------------------------

class MultiplyCounter {
 public:
  void add(const std::string& label, uint64_t n) { by_label_[label] += n; }

  uint64_t total() const {
    uint64_t t = 0;
    for (const auto& [k, v] : by_label_) t += v;
    return t;
  }
  uint64_t labeled(const std::string& label) const {
    auto it = by_label_.find(label);
    return it == by_label_.end() ? 0 : it->second;
  }
  const std::map<std::string, uint64_t>& by_label() const { return by_label_; }
  void reset() { by_label_.clear(); }

 private:
  std::map<std::string, uint64_t> by_label_;
};

namespace detail {
inline thread_local MultiplyCounter* g_counter = nullptr;
inline thread_local const char* g_count_label = "other";
}  // namespace detail

class CountScope {
 public:
  explicit CountScope(MultiplyCounter& c) : prev_(detail::g_counter) { detail::g_counter = &c; }
  ~CountScope() { detail::g_counter = prev_; }
  CountScope(const CountScope&) = delete;
  CountScope& operator=(const CountScope&) = delete;

 private:
  MultiplyCounter* prev_;
};

class CountLabel {
 public:
  explicit CountLabel(const char* label) : prev_(detail::g_count_label) { detail::g_count_label = label; }
  ~CountLabel() { detail::g_count_label = prev_; }
  CountLabel(const CountLabel&) = delete;
  CountLabel& operator=(const CountLabel&) = delete;

 private:
  const char* prev_;
};

inline void count_multiplies(uint64_t n) {
  if (detail::g_counter) detail::g_counter->add(detail::g_count_label, n);
}

// ---------------------------------------------------------------------------
// Tensor and tape
// ---------------------------------------------------------------------------

template <typename Scalar>
struct TensorNode {
  Shape shape;
  std::vector<Scalar> value;
  std::vector<Scalar> grad;  // empty until first touched by backward
  bool requires_grad = false;

  void ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), Scalar(0));
  }
};

template <typename Scalar>
class Tensor {
 public:
  using Node = TensorNode<Scalar>;

  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->value.assign(numel(n->shape), Scalar(0));
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
  }

  static Tensor full(Shape shape, Scalar v) {
    Tensor t = zeros(std::move(shape));
    std::fill(t.node_->value.begin(), t.node_->value.end(), v);
    return t;
  }

  static Tensor from_vector(Shape shape, std::vector<Scalar> values, bool requires_grad = false) {
    if (numel(shape) != values.size())
      throw ShapeError("from_vector: shape " + shape_str(shape) + " does not hold " +
                       std::to_string(values.size()) + " values");
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->value = std::move(values);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
  }

  static Tensor scalar(Scalar v) { return from_vector({1}, {v}); }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  size_t rank() const { return node_->shape.size(); }
  size_t size() const { return node_->value.size(); }
  size_t dim(size_t i) const { return node_->shape[i]; }

  std::span<const Scalar> values() const { return node_->value; }
  std::vector<Scalar>& mutable_values() { return node_->value; }
  Scalar item() const {
    if (size() != 1) throw ShapeError("item() on non-scalar tensor " + shape_str(shape()));
    return node_->value[0];
  }

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool v) {
    node_->requires_grad = v;
    return *this;
  }

  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const Scalar> grad() const { return node_->grad; }
  std::vector<Scalar>& mutable_grad() {
    node_->ensure_grad();
    return node_->grad;
  }
  void zero_grad() { node_->grad.clear(); }

  // Same storage, detached from gradient flow.
  Tensor detach() const {
    auto n = std::make_shared<Node>();
    n->shape = node_->shape;
    n->value = node_->value;
    n->requires_grad = false;
    return Tensor(std::move(n));
  }

  std::shared_ptr<Node> node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<Node> n) : node_(std::move(n)) {}
  std::shared_ptr<Node> node_;

  template <typename S>
  friend class Tape;
};

// Ordered op records; reverse iteration is the backward pass. Every op's
// inputs were produced earlier on the tape, so one reverse sweep suffices.
template <typename Scalar>
class Tape {
 public:
  struct Record {
    std::shared_ptr<TensorNode<Scalar>> output;
    std::function<void()> backward;
  };

  void record(const Tensor<Scalar>& output, std::function<void()> backward) {
    records_.push_back(Record{output.node(), std::move(backward)});
  }

  size_t size() const { return records_.size(); }
  void clear() { records_.clear(); }

  void backward(const Tensor<Scalar>& loss) {
    if (loss.size() != 1)
      throw ShapeError("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
    loss.node()->ensure_grad();
    loss.node()->grad[0] = Scalar(1);
    for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
      if (it->output->grad.empty()) continue;  // not reachable from the loss
      it->backward();
    }
  }

  static Tape*& active() {
    static thread_local Tape* t = nullptr;
    return t;
  }

 private:
  std::vector<Record> records_;
};

template <typename Scalar>
class TapeScope {
 public:
  explicit TapeScope(Tape<Scalar>& tape) : prev_(Tape<Scalar>::active()) {
    Tape<Scalar>::active() = &tape;
  }
  ~TapeScope() { Tape<Scalar>::active() = prev_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape<Scalar>* prev_;
};

namespace detail {

template <typename Scalar>
bool recording(std::initializer_list<const Tensor<Scalar>*> inputs) {
  if (Tape<Scalar>::active() == nullptr) return false;
  for (const auto* t : inputs)
    if ((*t).requires_grad()) return true;
  return false;
}

template <typename Scalar>
void mark_and_record(std::initializer_list<const Tensor<Scalar>*> inputs, Tensor<Scalar>& out,
                     std::function<void()> backward) {
  if (!recording(inputs)) return;
  out.set_requires_grad(true);
  Tape<Scalar>::active()->record(out, std::move(backward));
}

inline Shape broadcast_shapes(const Shape& a, const Shape& b) {
  const size_t r = std::max(a.size(), b.size());
  Shape out(r);
  for (size_t i = 0; i < r; ++i) {
    const size_t da = i < r - a.size() ? 1 : a[i - (r - a.size())];
    const size_t db = i < r - b.size() ? 1 : b[i - (r - b.size())];
    if (da != db && da != 1 && db != 1)
      throw ShapeError("cannot broadcast " + shape_str(a) + " with " + shape_str(b));
    out[i] = std::max(da, db);
  }
  return out;
}

// Row-major strides padded/zeroed to broadcast against `out`.
inline std::vector<size_t> broadcast_strides(const Shape& shape, const Shape& out) {
  std::vector<size_t> strides(out.size(), 0);
  size_t s = 1;
  for (size_t i = 0; i < shape.size(); ++i) {
    const size_t d = shape.size() - 1 - i;
    const size_t od = out.size() - 1 - i;
    strides[od] = shape[d] == 1 ? 0 : s;
    s *= shape[d];
  }
  return strides;
}

// Calls f(flat_out, offset_a, offset_b) for every element of `out`.
template <typename F>
void for_each_broadcast(const Shape& out, const Shape& a, const Shape& b, F&& f) {
  const size_t n = numel(out);
  const size_t r = out.size();
  if (n == 0) return;
  const auto sa = broadcast_strides(a, out);
  const auto sb = broadcast_strides(b, out);
  std::vector<size_t> coord(r, 0);
  size_t ia = 0, ib = 0;
  for (size_t flat = 0; flat < n; ++flat) {
    f(flat, ia, ib);
    for (size_t d = r; d-- > 0;) {
      ++coord[d];
      ia += sa[d];
      ib += sb[d];
      if (coord[d] < out[d]) break;
      ia -= sa[d] * out[d];
      ib -= sb[d] * out[d];
      coord[d] = 0;
    }
  }
}

// Accumulates `src` (shaped `from`) into `dst` (shaped `to`), summing over
// broadcast dimensions. `to` must be broadcastable to `from`.
template <typename Scalar>
void reduce_into(const Scalar* src, const Shape& from, Scalar* dst, const Shape& to) {
  const size_t n = numel(from);
  const size_t r = from.size();
  const auto sd = broadcast_strides(to, from);
  std::vector<size_t> coord(r, 0);
  size_t id = 0;
  for (size_t flat = 0; flat < n; ++flat) {
    dst[id] += src[flat];
    for (size_t d = r; d-- > 0;) {
      ++coord[d];
      id += sd[d];
      if (coord[d] < from[d]) break;
      id -= sd[d] * from[d];
      coord[d] = 0;
    }
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise ops
// ---------------------------------------------------------------------------

namespace detail {

enum class BinOp { kAdd, kSub, kMul };

template <typename Scalar>
Tensor<Scalar> binary_op(const Tensor<Scalar>& a, const Tensor<Scalar>& b, BinOp op) {
  const Shape out_shape = broadcast_shapes(a.shape(), b.shape());
  Tensor<Scalar> out = Tensor<Scalar>::zeros(out_shape);
  auto* ov = out.mutable_values().data();
  const Scalar* av = a.values().data();
  const Scalar* bv = b.values().data();

  if (a.shape() == b.shape()) {
    const size_t n = a.size();
    switch (op) {
      case BinOp::kAdd:
        for (size_t i = 0; i < n; ++i) ov[i] = av[i] + bv[i];
        break;
      case BinOp::kSub:
        for (size_t i = 0; i < n; ++i) ov[i] = av[i] - bv[i];
        break;
      case BinOp::kMul:
        for (size_t i = 0; i < n; ++i) ov[i] = av[i] * bv[i];
        break;
    }
  } else {
    for_each_broadcast(out_shape, a.shape(), b.shape(), [&](size_t o, size_t ia, size_t ib) {
      switch (op) {
        case BinOp::kAdd: ov[o] = av[ia] + bv[ib]; break;
        case BinOp::kSub: ov[o] = av[ia] - bv[ib]; break;
        case BinOp::kMul: ov[o] = av[ia] * bv[ib]; break;
      }
    });
  }

  auto an = a.node();
  auto bn = b.node();
  auto on = out.node();
  mark_and_record<Scalar>({&a, &b}, out, [an, bn, on, op]() {
    const Scalar* g = on->grad.data();
    switch (op) {
      case BinOp::kAdd: {
        an->ensure_grad();
        bn->ensure_grad();
        reduce_into(g, on->shape, an->grad.data(), an->shape);
        reduce_into(g, on->shape, bn->grad.data(), bn->shape);
        break;
      }
      case BinOp::kSub: {
        an->ensure_grad();
        bn->ensure_grad();
        reduce_into(g, on->shape, an->grad.data(), an->shape);
        std::vector<Scalar> neg(on->value.size());
        for (size_t i = 0; i < neg.size(); ++i) neg[i] = -g[i];
        reduce_into(neg.data(), on->shape, bn->grad.data(), bn->shape);
        break;
      }
      case BinOp::kMul: {
        an->ensure_grad();
        bn->ensure_grad();
        std::vector<Scalar> ga(on->value.size()), gb(on->value.size());
        const Scalar* av2 = an->value.data();
        const Scalar* bv2 = bn->value.data();
        for_each_broadcast(on->shape, an->shape, bn->shape,
                           [&](size_t o, size_t ia, size_t ib) {
                             ga[o] = g[o] * bv2[ib];
                             gb[o] = g[o] * av2[ia];
                           });
        reduce_into(ga.data(), on->shape, an->grad.data(), an->shape);
        reduce_into(gb.data(), on->shape, bn->grad.data(), bn->shape);
        break;
      }
    }
  });
  return out;
}

}  // namespace detail

template <typename Scalar>
Tensor<Scalar> add(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  return detail::binary_op(a, b, detail::BinOp::kAdd);
}
template <typename Scalar>
Tensor<Scalar> sub(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  return detail::binary_op(a, b, detail::BinOp::kSub);
}
template <typename Scalar>
Tensor<Scalar> mul(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  return detail::binary_op(a, b, detail::BinOp::kMul);
}

template <typename Scalar>
Tensor<Scalar> scale(const Tensor<Scalar>& a, Scalar c) {
  Tensor<Scalar> out = Tensor<Scalar>::zeros(a.shape());
  auto* ov = out.mutable_values().data();
  const Scalar* av = a.values().data();
  for (size_t i = 0; i < a.size(); ++i) ov[i] = av[i] * c;
  auto an = a.node();
  auto on = out.node();
  detail::mark_and_record<Scalar>({&a}, out, [an, on, c]() {
    an->ensure_grad();
    for (size_t i = 0; i < an->grad.size(); ++i) an->grad[i] += c * on->grad[i];
  });
  return out;
}

inline constexpr double kInvSqrt2 = 0.70710678118654752440;
inline constexpr double kInvSqrt2Pi = 0.39894228040143267794;

template <typename Scalar>
Tensor<Scalar> gelu(const Tensor<Scalar>& a) {
  Tensor<Scalar> out = Tensor<Scalar>::zeros(a.shape());
  auto* ov = out.mutable_values().data();
  const Scalar* av = a.values().data();
  for (size_t i = 0; i < a.size(); ++i) {
    const double x = static_cast<double>(av[i]);
    ov[i] = static_cast<Scalar>(0.5 * x * (1.0 + std::erf(x * kInvSqrt2)));
  }
  auto an = a.node();
  auto on = out.node();
  detail::mark_and_record<Scalar>({&a}, out, [an, on]() {
    an->ensure_grad();
    for (size_t i = 0; i < an->grad.size(); ++i) {
      const double x = static_cast<double>(an->value[i]);
      const double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
      const double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
      an->grad[i] += static_cast<Scalar>((cdf + x * pdf)) * on->grad[i];
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// Shape ops
// ---------------------------------------------------------------------------

template <typename Scalar>
Tensor<Scalar> reshape(const Tensor<Scalar>& a, Shape shape) {
  if (numel(shape) != a.size())
    throw ShapeError("reshape: " + shape_str(a.shape()) + " -> " + shape_str(shape) +
                     " changes element count");
  Tensor<Scalar> out = Tensor<Scalar>::from_vector(std::move(shape),
                                                   std::vector<Scalar>(a.values().begin(), a.values().end()));
  auto an = a.node();
  auto on = out.node();
  detail::mark_and_record<Scalar>({&a}, out, [an, on]() {
    an->ensure_grad();
    for (size_t i = 0; i < an->grad.size(); ++i) an->grad[i] += on->grad[i];
  });
  return out;
}

// Slice `count` rows starting at `start` along axis 0.
template <typename Scalar>
Tensor<Scalar> slice_rows(const Tensor<Scalar>& a, size_t start, size_t count) {
  if (a.rank() < 1 || start + count > a.dim(0))
    throw ShapeError("slice_rows: range [" + std::to_string(start) + "," +
                     std::to_string(start + count) + ") out of " + shape_str(a.shape()));
  Shape out_shape = a.shape();
  out_shape[0] = count;
  const size_t row = a.size() / a.dim(0);
  Tensor<Scalar> out = Tensor<Scalar>::zeros(out_shape);
  std::copy_n(a.values().data() + start * row, count * row, out.mutable_values().data());
  auto an = a.node();
  auto on = out.node();
  detail::mark_and_record<Scalar>({&a}, out, [an, on, start, row, count]() {
    an->ensure_grad();
    for (size_t i = 0; i < count * row; ++i) an->grad[start * row + i] += on->grad[i];
  });
  return out;
}

// Concatenate along axis 0; trailing dims must agree.
template <typename Scalar>
Tensor<Scalar> concat_rows(std::span<const Tensor<Scalar>> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  Shape tail(parts[0].shape().begin() + 1, parts[0].shape().end());
  size_t rows = 0;
  for (const auto& p : parts) {
    Shape t(p.shape().begin() + 1, p.shape().end());
    if (t != tail)
      throw ShapeError("concat_rows: trailing dims " + shape_str(p.shape()) + " vs " +
                       shape_str(parts[0].shape()));
    rows += p.dim(0);
  }
  Shape out_shape = parts[0].shape();
  out_shape[0] = rows;
  Tensor<Scalar> out = Tensor<Scalar>::zeros(out_shape);
  auto* ov = out.mutable_values().data();
  size_t off = 0;
  for (const auto& p : parts) {
    std::copy_n(p.values().data(), p.size(), ov + off);
    off += p.size();
  }
  bool any_grad = false;
  for (const auto& p : parts) any_grad = any_grad || p.requires_grad();
  if (Tape<Scalar>::active() != nullptr && any_grad) {
    out.set_requires_grad(true);
    std::vector<std::shared_ptr<TensorNode<Scalar>>> nodes;
    nodes.reserve(parts.size());
    for (const auto& p : parts) nodes.push_back(p.node());
    auto on = out.node();
    Tape<Scalar>::active()->record(out, [nodes, on]() {
      size_t off = 0;
      for (auto& n : nodes) {
        n->ensure_grad();
        for (size_t i = 0; i < n->grad.size(); ++i) n->grad[i] += on->grad[off + i];
        off += n->grad.size();
      }
    });
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> concat_rows(const std::vector<Tensor<Scalar>>& parts) {
  return concat_rows(std::span<const Tensor<Scalar>>(parts.data(), parts.size()));
}

// [s, d] -> [h, s, d/h]
template <typename Scalar>
Tensor<Scalar> split_heads(const Tensor<Scalar>& x, size_t heads) {
  if (x.rank() != 2 || x.dim(1) % heads != 0)
    throw ShapeError("split_heads: want [s,d] with d divisible by " + std::to_string(heads) +
                     ", got " + shape_str(x.shape()));
  const size_t s = x.dim(0), d = x.dim(1), hd = d / heads;
  Tensor<Scalar> out = Tensor<Scalar>::zeros({heads, s, hd});
  auto* ov = out.mutable_values().data();
  const Scalar* xv = x.values().data();
  for (size_t h = 0; h < heads; ++h)
    for (size_t i = 0; i < s; ++i)
      for (size_t j = 0; j < hd; ++j) ov[(h * s + i) * hd + j] = xv[i * d + h * hd + j];
  auto xn = x.node();
  auto on = out.node();
  detail::mark_and_record<Scalar>({&x}, out, [xn, on, heads, s, d, hd]() {
    xn->ensure_grad();
    for (size_t h = 0; h < heads; ++h)
      for (size_t i = 0; i < s; ++i)
        for (size_t j = 0; j < hd; ++j)
          xn->grad[i * d + h * hd + j] += on->grad[(h * s + i) * hd + j];
  });
  return out;
}

// [h, s, hd] -> [s, h*hd]
template <typename Scalar>
Tensor<Scalar> merge_heads(const Tensor<Scalar>& x) {
  if (x.rank() != 3) throw ShapeError("merge_heads: want [h,s,hd], got " + shape_str(x.shape()));
  const size_t heads = x.dim(0), s = x.dim(1), hd = x.dim(2), d = heads * hd;
  Tensor<Scalar> out = Tensor<Scalar>::zeros({s, d});
  auto* ov = out.mutable_values().data();
  const Scalar* xv = x.values().data();
  for (size_t h = 0; h < heads; ++h)
    for (size_t i = 0; i < s; ++i)
      for (size_t j = 0; j < hd; ++j) ov[i * d + h * hd + j] = xv[(h * s + i) * hd + j];
  auto xn = x.node();
  auto on = out.node();
  detail::mark_and_record<Scalar>({&x}, out, [xn, on, heads, s, d, hd]() {
    xn->ensure_grad();
    for (size_t h = 0; h < heads; ++h)
      for (size_t i = 0; i < s; ++i)
        for (size_t j = 0; j < hd; ++j)
          xn->grad[(h * s + i) * hd + j] += on->grad[i * d + h * hd + j];
  });
  return out;
}

template <typename Scalar>
Tensor<Scalar> transpose_last2(const Tensor<Scalar>& x) {
  if (x.rank() < 2) throw ShapeError("transpose_last2: rank >= 2 required, got " + shape_str(x.shape()));
  Shape out_shape = x.shape();
  std::swap(out_shape[x.rank() - 2], out_shape[x.rank() - 1]);
  const size_t m = x.dim(x.rank() - 2), n = x.dim(x.rank() - 1);
  const size_t batches = x.size() / (m * n);
  Tensor<Scalar> out = Tensor<Scalar>::zeros(out_shape);
  auto* ov = out.mutable_values().data();
  const Scalar* xv = x.values().data();
  for (size_t b = 0; b < batches; ++b) {
    const Scalar* xb = xv + b * m * n;
    Scalar* ob = ov + b * m * n;
    for (size_t i = 0; i < m; ++i)
      for (size_t j = 0; j < n; ++j) ob[j * m + i] = xb[i * n + j];
  }
  auto xn = x.node();
  auto on = out.node();
  detail::mark_and_record<Scalar>({&x}, out, [xn, on, m, n, batches]() {
    xn->ensure_grad();
    for (size_t b = 0; b < batches; ++b) {
      const Scalar* gb = on->grad.data() + b * m * n;
      Scalar* xg = xn->grad.data() + b * m * n;
      for (size_t i = 0; i < m; ++i)
        for (size_t j = 0; j < n; ++j) xg[i * n + j] += gb[j * m + i];
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// Matmul
// ---------------------------------------------------------------------------

namespace detail {

// C[m,n] = A[m,k] @ B[k,n], accumulation over k in index order.
template <typename Scalar>
void mm_kernel(Scalar* c, const Scalar* a, const Scalar* b, size_t m, size_t k, size_t n) {
  for (size_t i = 0; i < m; ++i) {
    Scalar* crow = c + i * n;
    std::fill_n(crow, n, Scalar(0));
    for (size_t kk = 0; kk < k; ++kk) {
      const Scalar aik = a[i * k + kk];
      const Scalar* brow = b + kk * n;
      for (size_t j = 0; j < n; ++j) crow[j] += aik * brow[j];
    }
  }
}

// dA[m,k] += dC[m,n] @ B[k,n]^T
template <typename Scalar>
void mm_grad_a(Scalar* da, const Scalar* dc, const Scalar* b, size_t m, size_t k, size_t n) {
  for (size_t i = 0; i < m; ++i)
    for (size_t kk = 0; kk < k; ++kk) {
      Scalar s = 0;
      const Scalar* dcrow = dc + i * n;
      const Scalar* brow = b + kk * n;
      for (size_t j = 0; j < n; ++j) s += dcrow[j] * brow[j];
      da[i * k + kk] += s;
    }
}

// dB[k,n] += A[m,k]^T @ dC[m,n]
template <typename Scalar>
void mm_grad_b(Scalar* db, const Scalar* a, const Scalar* dc, size_t m, size_t k, size_t n) {
  for (size_t i = 0; i < m; ++i) {
    const Scalar* dcrow = dc + i * n;
    for (size_t kk = 0; kk < k; ++kk) {
      const Scalar aik = a[i * k + kk];
      Scalar* dbrow = db + kk * n;
      for (size_t j = 0; j < n; ++j) dbrow[j] += aik * dcrow[j];
    }
  }
}

}  // namespace detail

// Batched matmul with broadcasting over leading (batch) dims.
template <typename Scalar>
Tensor<Scalar> matmul(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  if (a.rank() < 2 || b.rank() < 2)
    throw ShapeError("matmul: both operands need rank >= 2, got " + shape_str(a.shape()) +
                     " @ " + shape_str(b.shape()));
  const size_t m = a.dim(a.rank() - 2), k = a.dim(a.rank() - 1);
  const size_t k2 = b.dim(b.rank() - 2), n = b.dim(b.rank() - 1);
  if (k != k2)
    throw ShapeError("matmul: inner extents differ, " + shape_str(a.shape()) + " @ " +
                     shape_str(b.shape()));
  Shape batch_a(a.shape().begin(), a.shape().end() - 2);
  Shape batch_b(b.shape().begin(), b.shape().end() - 2);
  const Shape batch = detail::broadcast_shapes(batch_a, batch_b);
  Shape out_shape = batch;
  out_shape.push_back(m);
  out_shape.push_back(n);

  const size_t nbatch = numel(batch);
  const auto sa = detail::broadcast_strides(batch_a, batch);
  const auto sb = detail::broadcast_strides(batch_b, batch);

  // Per-batch element offsets (in units of one matrix).
  std::vector<size_t> off_a(nbatch), off_b(nbatch);
  {
    std::vector<size_t> coord(batch.size(), 0);
    size_t ia = 0, ib = 0;
    for (size_t f = 0; f < nbatch; ++f) {
      off_a[f] = ia;
      off_b[f] = ib;
      for (size_t d = batch.size(); d-- > 0;) {
        ++coord[d];
        ia += sa[d];
        ib += sb[d];
        if (coord[d] < batch[d]) break;
        ia -= sa[d] * batch[d];
        ib -= sb[d] * batch[d];
        coord[d] = 0;
      }
    }
  }

  Tensor<Scalar> out = Tensor<Scalar>::zeros(out_shape);
  auto* ov = out.mutable_values().data();
  const Scalar* av = a.values().data();
  const Scalar* bv = b.values().data();
  for (size_t f = 0; f < nbatch; ++f)
    detail::mm_kernel(ov + f * m * n, av + off_a[f] * m * k, bv + off_b[f] * k * n, m, k, n);
  count_multiplies(static_cast<uint64_t>(nbatch) * m * n * k);

  auto an = a.node();
  auto bn = b.node();
  auto on = out.node();
  detail::mark_and_record<Scalar>({&a, &b}, out, [an, bn, on, off_a, off_b, m, k, n, nbatch]() {
    an->ensure_grad();
    bn->ensure_grad();
    for (size_t f = 0; f < nbatch; ++f) {
      const Scalar* dc = on->grad.data() + f * m * n;
      detail::mm_grad_a(an->grad.data() + off_a[f] * m * k, dc, bn->value.data() + off_b[f] * k * n, m, k, n);
      detail::mm_grad_b(bn->grad.data() + off_b[f] * k * n, an->value.data() + off_a[f] * m * k, dc, m, k, n);
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// Softmax / layernorm / losses
// ---------------------------------------------------------------------------

// Rows of `mask` gate the last dim of x (shape [..., q, k]). Masked positions
// are exactly zero in the output; each row normalizes over its visible set.
template <typename Scalar>
Tensor<Scalar> masked_softmax(const Tensor<Scalar>& x, const BoolMatrix& mask) {
  if (x.rank() < 2) throw ShapeError("masked_softmax: rank >= 2 required, got " + shape_str(x.shape()));
  const size_t q = x.dim(x.rank() - 2), k = x.dim(x.rank() - 1);
  if (mask.rows() != q || mask.cols() != k)
    throw ShapeError("masked_softmax: mask " + std::to_string(mask.rows()) + "x" +
                     std::to_string(mask.cols()) + " vs logits " + shape_str(x.shape()));
  for (size_t i = 0; i < q; ++i) {
    bool any = false;
    for (size_t j = 0; j < k; ++j) any = any || mask.at(i, j);
    if (!any)
      throw MaskError("masked_softmax: row " + std::to_string(i) + " has no visible key");
  }
  const size_t batches = x.size() / (q * k);
  Tensor<Scalar> out = Tensor<Scalar>::zeros(x.shape());
  auto* ov = out.mutable_values().data();
  const Scalar* xv = x.values().data();
  for (size_t b = 0; b < batches; ++b) {
    for (size_t i = 0; i < q; ++i) {
      const Scalar* row = xv + (b * q + i) * k;
      Scalar* orow = ov + (b * q + i) * k;
      const uint8_t* mrow = mask.row(i);
      Scalar mx = -std::numeric_limits<Scalar>::infinity();
      for (size_t j = 0; j < k; ++j)
        if (mrow[j] && row[j] > mx) mx = row[j];
      Scalar sum = 0;
      for (size_t j = 0; j < k; ++j) {
        orow[j] = mrow[j] ? std::exp(row[j] - mx) : Scalar(0);
        sum += orow[j];
      }
      const Scalar inv = Scalar(1) / sum;
      for (size_t j = 0; j < k; ++j) orow[j] *= inv;
    }
  }
  auto xn = x.node();
  auto on = out.node();
  detail::mark_and_record<Scalar>({&x}, out, [xn, on, q, k, batches]() {
    xn->ensure_grad();
    for (size_t b = 0; b < batches; ++b)
      for (size_t i = 0; i < q; ++i) {
        const size_t base = (b * q + i) * k;
        const Scalar* y = on->value.data() + base;
        const Scalar* gy = on->grad.data() + base;
        Scalar dot = 0;
        for (size_t j = 0; j < k; ++j) dot += gy[j] * y[j];
        Scalar* gx = xn->grad.data() + base;
        for (size_t j = 0; j < k; ++j) gx[j] += y[j] * (gy[j] - dot);
      }
  });
  return out;
}

// Per-row normalization over the last dim, epsilon inside the square root.
template <typename Scalar>
Tensor<Scalar> layernorm(const Tensor<Scalar>& x, const Tensor<Scalar>& gain,
                         const Tensor<Scalar>& bias) {
  if (x.rank() < 1) throw ShapeError("layernorm: rank >= 1 required");
  const size_t d = x.dim(x.rank() - 1);
  if (gain.size() != d || bias.size() != d)
    throw ShapeError("layernorm: gain/bias " + shape_str(gain.shape()) + "/" +
                     shape_str(bias.shape()) + " vs feature dim " + std::to_string(d));
  const Scalar eps = Scalar(1e-5);
  const size_t rows = x.size() / d;
  Tensor<Scalar> out = Tensor<Scalar>::zeros(x.shape());
  auto* ov = out.mutable_values().data();
  const Scalar* xv = x.values().data();
  const Scalar* gv = gain.values().data();
  const Scalar* bv = bias.values().data();
  // Saved for backward: normalized activations and inverse stddev per row.
  auto xhat = std::make_shared<std::vector<Scalar>>(x.size());
  auto inv_std = std::make_shared<std::vector<Scalar>>(rows);
  for (size_t r = 0; r < rows; ++r) {
    const Scalar* row = xv + r * d;
    Scalar mean = 0;
    for (size_t j = 0; j < d; ++j) mean += row[j];
    mean /= Scalar(d);
    Scalar var = 0;
    for (size_t j = 0; j < d; ++j) {
      const Scalar c = row[j] - mean;
      var += c * c;
    }
    var /= Scalar(d);
    const Scalar inv = Scalar(1) / std::sqrt(var + eps);
    (*inv_std)[r] = inv;
    Scalar* orow = ov + r * d;
    for (size_t j = 0; j < d; ++j) {
      const Scalar h = (row[j] - mean) * inv;
      (*xhat)[r * d + j] = h;
      orow[j] = h * gv[j] + bv[j];
    }
  }
  auto xn = x.node();
  auto gn = gain.node();
  auto bn = bias.node();
  auto on = out.node();
  detail::mark_and_record<Scalar>({&x, &gain, &bias}, out, [xn, gn, bn, on, xhat, inv_std, rows, d]() {
    xn->ensure_grad();
    gn->ensure_grad();
    bn->ensure_grad();
    for (size_t r = 0; r < rows; ++r) {
      const Scalar* gy = on->grad.data() + r * d;
      const Scalar* h = xhat->data() + r * d;
      Scalar sum_g = 0, sum_gh = 0;
      for (size_t j = 0; j < d; ++j) {
        const Scalar gj = gy[j] * gn->value[j];
        sum_g += gj;
        sum_gh += gj * h[j];
        gn->grad[j] += gy[j] * h[j];
        bn->grad[j] += gy[j];
      }
      const Scalar inv = (*inv_std)[r];
      Scalar* gx = xn->grad.data() + r * d;
      for (size_t j = 0; j < d; ++j) {
        const Scalar gj = gy[j] * gn->value[j];
        gx[j] += inv * (gj - sum_g / Scalar(d) - h[j] * (sum_gh / Scalar(d)));
      }
    }
  });
  return out;
}

// Embedding row gather. Backward scatter-adds into the table.
template <typename Scalar>
Tensor<Scalar> embedding_lookup(const Tensor<Scalar>& table, const std::vector<int>& ids) {
  if (table.rank() != 2) throw ShapeError("embedding_lookup: table must be [V,d], got " + shape_str(table.shape()));
  const size_t v = table.dim(0), d = table.dim(1);
  for (int id : ids)
    if (id < 0 || static_cast<size_t>(id) >= v)
      throw RangeError("embedding_lookup: id " + std::to_string(id) + " outside table of " +
                       std::to_string(v));
  Tensor<Scalar> out = Tensor<Scalar>::zeros({ids.size(), d});
  auto* ov = out.mutable_values().data();
  const Scalar* tv = table.values().data();
  for (size_t i = 0; i < ids.size(); ++i)
    std::copy_n(tv + static_cast<size_t>(ids[i]) * d, d, ov + i * d);
  auto tn = table.node();
  auto on = out.node();
  detail::mark_and_record<Scalar>({&table}, out, [tn, on, ids, d]() {
    tn->ensure_grad();
    for (size_t i = 0; i < ids.size(); ++i) {
      const Scalar* g = on->grad.data() + i * d;
      Scalar* tg = tn->grad.data() + static_cast<size_t>(ids[i]) * d;
      for (size_t j = 0; j < d; ++j) tg[j] += g[j];
    }
  });
  return out;
}

// Inverted dropout with an explicit keep-mask; dropout() draws the mask.
template <typename Scalar>
Tensor<Scalar> dropout_with_mask(const Tensor<Scalar>& x, const std::vector<Scalar>& mask) {
  if (mask.size() != x.size()) throw ShapeError("dropout_with_mask: mask size mismatch");
  Tensor<Scalar> out = Tensor<Scalar>::zeros(x.shape());
  auto* ov = out.mutable_values().data();
  const Scalar* xv = x.values().data();
  for (size_t i = 0; i < x.size(); ++i) ov[i] = xv[i] * mask[i];
  auto xn = x.node();
  auto on = out.node();
  detail::mark_and_record<Scalar>({&x}, out, [xn, on, mask]() {
    xn->ensure_grad();
    for (size_t i = 0; i < xn->grad.size(); ++i) xn->grad[i] += on->grad[i] * mask[i];
  });
  return out;
}

template <typename Scalar>
Tensor<Scalar> dropout(const Tensor<Scalar>& x, double rate, Rng& rng, bool training) {
  if (!training || rate <= 0.0) return x;
  if (rate >= 1.0) throw RangeError("dropout: rate must be < 1");
  std::vector<Scalar> mask(x.size());
  const Scalar keep_scale = Scalar(1.0 / (1.0 - rate));
  for (size_t i = 0; i < mask.size(); ++i)
    mask[i] = rng.uniform() >= rate ? keep_scale : Scalar(0);
  return dropout_with_mask(x, mask);
}

template <typename Scalar>
Tensor<Scalar> sum_all(const Tensor<Scalar>& x) {
  Scalar s = 0;
  for (Scalar v : x.values()) s += v;
  Tensor<Scalar> out = Tensor<Scalar>::scalar(s);
  auto xn = x.node();
  auto on = out.node();
  detail::mark_and_record<Scalar>({&x}, out, [xn, on]() {
    xn->ensure_grad();
    for (size_t i = 0; i < xn->grad.size(); ++i) xn->grad[i] += on->grad[0];
  });
  return out;
}

// Label-smoothed cross entropy, mean over rows whose target != ignore_id.
// Smoothed target distribution: (1-a) * onehot + a / V.
template <typename Scalar>
Tensor<Scalar> cross_entropy(const Tensor<Scalar>& logits, const std::vector<int>& targets,
                             double smoothing, int ignore_id) {
  if (logits.rank() != 2) throw ShapeError("cross_entropy: logits must be [n,V], got " + shape_str(logits.shape()));
  const size_t n = logits.dim(0), v = logits.dim(1);
  if (targets.size() != n)
    throw ShapeError("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                     std::to_string(n) + " rows");
  size_t n_eff = 0;
  for (int t : targets) {
    if (t == ignore_id) continue;
    if (t < 0 || static_cast<size_t>(t) >= v)
      throw RangeError("cross_entropy: target " + std::to_string(t) + " outside vocab of " +
                       std::to_string(v));
    ++n_eff;
  }
  if (n_eff == 0) throw LossError("cross_entropy: every position is ignored");

  const Scalar alpha = Scalar(smoothing);
  const Scalar* lv = logits.values().data();
  auto probs = std::make_shared<std::vector<Scalar>>(logits.size(), Scalar(0));
  Scalar total = 0;
  for (size_t i = 0; i < n; ++i) {
    if (targets[i] == ignore_id) continue;
    const Scalar* row = lv + i * v;
    Scalar mx = row[0];
    for (size_t j = 1; j < v; ++j) mx = std::max(mx, row[j]);
    Scalar sum = 0;
    for (size_t j = 0; j < v; ++j) sum += std::exp(row[j] - mx);
    const Scalar lse = mx + std::log(sum);
    Scalar row_loss = -(Scalar(1) - alpha) * (row[targets[i]] - lse);
    if (alpha > 0) {
      Scalar acc = 0;
      for (size_t j = 0; j < v; ++j) acc += row[j] - lse;
      row_loss += -(alpha / Scalar(v)) * acc;
    }
    total += row_loss;
    Scalar* prow = probs->data() + i * v;
    const Scalar inv = Scalar(1) / sum;
    for (size_t j = 0; j < v; ++j) prow[j] = std::exp(row[j] - mx) * inv;
  }
  Tensor<Scalar> out = Tensor<Scalar>::scalar(total / Scalar(n_eff));
  auto ln = logits.node();
  auto on = out.node();
  detail::mark_and_record<Scalar>({&logits}, out, [ln, on, probs, targets, alpha, n, v, n_eff, ignore_id]() {
    ln->ensure_grad();
    const Scalar g = on->grad[0] / Scalar(n_eff);
    for (size_t i = 0; i < n; ++i) {
      if (targets[i] == ignore_id) continue;
      const Scalar* prow = probs->data() + i * v;
      Scalar* grow = ln->grad.data() + i * v;
      const Scalar unif = alpha / Scalar(v);
      for (size_t j = 0; j < v; ++j) {
        Scalar q = unif;
        if (j == static_cast<size_t>(targets[i])) q += Scalar(1) - alpha;
        grow[j] += g * (prow[j] - q);
      }
    }
  });
  return out;
}

template <typename Scalar>
void assert_all_finite(const Tensor<Scalar>& t, const std::string& context) {
  for (Scalar v : t.values())
    if (!std::isfinite(static_cast<double>(v)))
      throw LossError(context + ": non-finite value encountered");
}

}  // namespace streamcap

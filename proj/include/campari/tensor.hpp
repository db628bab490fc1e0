#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "campari/rng.hpp"

namespace campari {

using Shape = std::vector<int64_t>;

// All tensor storage is 64-byte aligned so Eigen's vectorized kernels take
// the same code path for every allocation; results are then bit-reproducible
// run to run.
template <typename T, size_t Align = 64>
struct AlignedAllocator {
  using value_type = T;
  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U, Align>&) {}
  T* allocate(size_t n) {
    return static_cast<T*>(::operator new(n * sizeof(T), std::align_val_t(Align)));
  }
  void deallocate(T* p, size_t) { ::operator delete(p, std::align_val_t(Align)); }
  template <typename U>
  struct rebind {
    using other = AlignedAllocator<U, Align>;
  };
  bool operator==(const AlignedAllocator&) const { return true; }
  bool operator!=(const AlignedAllocator&) const { return false; }
};

using FloatBuf = std::vector<float, AlignedAllocator<float>>;

inline int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << "]";
  return os.str();
}

class TensorError : public std::runtime_error {
 public:
  explicit TensorError(const std::string& msg) : std::runtime_error(msg) {}
};

class Tape;

// Dense row-major f32 tensor. Cheap to copy (shared buffer). A tensor may be
// bound to the tape that recorded it; unbound tensors act as constants.
class Tensor {
 public:
  Tensor() = default;

  Tensor(Shape shape, FloatBuf data)
      : shape_(std::move(shape)), data_(std::make_shared<FloatBuf>(std::move(data))) {
    if (shape_numel(shape_) != static_cast<int64_t>(data_->size()))
      throw TensorError("tensor data size does not match shape " + shape_str(shape_));
  }

  Tensor(Shape shape, const std::vector<float>& data)
      : Tensor(std::move(shape), FloatBuf(data.begin(), data.end())) {}

  Tensor(Shape shape, std::initializer_list<float> data)
      : Tensor(std::move(shape), FloatBuf(data.begin(), data.end())) {}

  static Tensor zeros(Shape shape) {
    auto n = shape_numel(shape);
    return Tensor(std::move(shape), FloatBuf(static_cast<size_t>(n), 0.0f));
  }
  static Tensor ones(Shape shape) { return full(std::move(shape), 1.0f); }
  static Tensor full(Shape shape, float v) {
    auto n = shape_numel(shape);
    return Tensor(std::move(shape), FloatBuf(static_cast<size_t>(n), v));
  }
  static Tensor scalar(float v) { return Tensor(Shape{}, std::vector<float>{v}); }

  static Tensor randn(Shape shape, Rng& rng, float mu = 0.0f, float sigma = 1.0f) {
    Tensor t = zeros(std::move(shape));
    for (auto& v : *t.data_) v = static_cast<float>(rng.normal(mu, sigma));
    return t;
  }
  static Tensor rand_uniform(Shape shape, Rng& rng, float lo = 0.0f, float hi = 1.0f) {
    Tensor t = zeros(std::move(shape));
    for (auto& v : *t.data_) v = static_cast<float>(rng.uniform(lo, hi));
    return t;
  }

  bool defined() const { return static_cast<bool>(data_); }
  const Shape& shape() const { return shape_; }
  int ndim() const { return static_cast<int>(shape_.size()); }
  int64_t dim(int i) const { return shape_[static_cast<size_t>(i)]; }
  int64_t numel() const { return defined() ? static_cast<int64_t>(data_->size()) : 0; }

  float* data() { return data_->data(); }
  const float* data() const { return data_->data(); }
  FloatBuf& buf() { return *data_; }
  const FloatBuf& buf() const { return *data_; }

  float value() const {
    if (numel() != 1) throw TensorError("value() requires a single-element tensor");
    return (*data_)[0];
  }
  float operator[](int64_t i) const { return (*data_)[static_cast<size_t>(i)]; }

  bool on_tape() const { return tape_ != nullptr; }
  Tape* tape() const { return tape_; }
  int node() const { return node_; }

  // Same buffer, detached from any tape.
  Tensor detached() const {
    Tensor t = *this;
    t.tape_ = nullptr;
    t.node_ = -1;
    return t;
  }

  // Deep copy of the buffer (never shares storage).
  Tensor clone() const {
    return Tensor(shape_, *data_);
  }

  bool all_finite() const {
    for (float v : *data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

 private:
  friend class Tape;
  Shape shape_;
  std::shared_ptr<FloatBuf> data_;
  Tape* tape_ = nullptr;
  int node_ = -1;
};

// Reverse-mode tape. Nodes are recorded in topological (insertion) order;
// each node carries a builder that emits its parents' gradient contributions
// out of ordinary tensor ops, so gradients are themselves differentiable and
// a second backward pass works without special cases.
class Tape {
 public:
  using Sink = std::function<void(int slot, const Tensor&)>;
  using VjpFn = std::function<void(const Tensor& g, const Sink& sink)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Register a leaf. Idempotent per underlying buffer.
  Tensor watch(const Tensor& t) {
    if (t.tape_ == this) return t;
    if (t.tape_ != nullptr) throw TensorError("tensor already bound to another tape");
    const void* key = t.data_.get();
    auto it = watched_.find(key);
    Tensor bound = t;
    if (it != watched_.end()) {
      bound.tape_ = this;
      bound.node_ = it->second;
      return bound;
    }
    bound.tape_ = this;
    bound.node_ = record({}, nullptr);
    watched_.emplace(key, bound.node_);
    return bound;
  }

  int record(std::vector<int> parents, VjpFn vjp) {
    nodes_.push_back(NodeRec{std::move(parents), std::move(vjp)});
    return static_cast<int>(nodes_.size()) - 1;
  }

  // For ops whose vjp references their own (tape-bound) output.
  void set_vjp(int node_id, VjpFn vjp) { nodes_[static_cast<size_t>(node_id)].vjp = std::move(vjp); }

  size_t node_count() const { return nodes_.size(); }
  bool recording() const { return pause_depth_ == 0; }

  struct PauseGuard {
    explicit PauseGuard(Tape* t) : tape(t) {
      if (tape) ++tape->pause_depth_;
    }
    ~PauseGuard() {
      if (tape) --tape->pause_depth_;
    }
    Tape* tape;
  };

  // Gradient of a scalar w.r.t. every node, for the optimizer. Emits no new
  // nodes; results are plain tensors fetched via grad().
  void backward(const Tensor& loss) {
    PauseGuard guard(this);
    grads_ = propagate(loss);
  }

  // Gradient tensor for `t` from the last backward(); zeros when `t` did not
  // influence the loss.
  Tensor grad(const Tensor& t) const {
    int id = node_of(t);
    if (id < 0 || static_cast<size_t>(id) >= grads_.size() || !grads_[static_cast<size_t>(id)].defined())
      return Tensor::zeros(t.shape());
    return grads_[static_cast<size_t>(id)];
  }

  // Differentiable gradient of scalar_out w.r.t. input: the result stays on
  // the tape, so it can enter a loss and be differentiated again. Returns
  // zeros when input is not an ancestor of scalar_out.
  Tensor grad_wrt(const Tensor& scalar_out, const Tensor& input) {
    int in_id = node_of(input);
    if (in_id < 0) throw TensorError("grad_wrt: input is not on this tape");
    auto grads = propagate(scalar_out);
    Tensor g;
    if (static_cast<size_t>(in_id) >= grads.size() || !grads[static_cast<size_t>(in_id)].defined())
      g = Tensor::zeros(input.shape());
    else
      g = grads[static_cast<size_t>(in_id)];
    // A gradient that happens to be constant (input not reached, or reached
    // only through parameter-free paths) still joins the tape as a leaf so
    // that downstream losses remain differentiable.
    if (!g.on_tape()) g = watch(g);
    return g;
  }

  Tensor bind(Tensor t, int node_id) {
    t.tape_ = this;
    t.node_ = node_id;
    return t;
  }

 private:
  struct NodeRec {
    std::vector<int> parents;
    VjpFn vjp;
  };

  int node_of(const Tensor& t) const {
    if (t.tape_ == this) return t.node_;
    auto it = watched_.find(t.data_.get());
    return it == watched_.end() ? -1 : it->second;
  }

  std::vector<Tensor> propagate(const Tensor& out);

  std::vector<NodeRec> nodes_;
  std::unordered_map<const void*, int> watched_;
  std::vector<Tensor> grads_;
  int pause_depth_ = 0;
};

namespace detail {

inline Tape* result_tape(const Tensor& a) {
  return (a.on_tape() && a.tape()->recording()) ? a.tape() : nullptr;
}
inline Tape* result_tape(const Tensor& a, const Tensor& b) {
  Tape* ta = result_tape(a);
  Tape* tb = result_tape(b);
  if (ta && tb && ta != tb) throw TensorError("operands bound to different tapes");
  return ta ? ta : tb;
}

inline Tensor record_unary(Tensor out, const Tensor& a, Tape::VjpFn vjp) {
  if (Tape* t = result_tape(a)) return t->bind(std::move(out), t->record({a.node()}, std::move(vjp)));
  return out;
}
inline Tensor record_binary(Tensor out, const Tensor& a, const Tensor& b, Tape::VjpFn vjp) {
  if (Tape* t = result_tape(a, b))
    return t->bind(std::move(out), t->record({a.on_tape() ? a.node() : -1, b.on_tape() ? b.node() : -1},
                                             std::move(vjp)));
  return out;
}

}  // namespace detail

Tensor reduce_sum(const Tensor& a, int axis);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, float c);
Tensor sigmoid(const Tensor& a);
Tensor sin(const Tensor& a);
Tensor cos(const Tensor& a);
Tensor slice(const Tensor& a, int axis, int64_t start, int64_t len);
Tensor concat(const std::vector<Tensor>& parts, int axis);

// ---------------------------------------------------------------------------
// Shape ops
// ---------------------------------------------------------------------------

inline Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel())
    throw TensorError("reshape: element count mismatch " + shape_str(a.shape()) + " -> " + shape_str(shape));
  Tensor out(shape, a.buf());
  Shape orig = a.shape();
  return detail::record_unary(std::move(out), a, [orig](const Tensor& g, const Tape::Sink& sink) {
    sink(0, reshape(g, orig));
  });
}

inline Tensor flatten(const Tensor& a) { return reshape(a, Shape{a.numel()}); }

// Insert an axis of size n at position `axis` and repeat along it.
inline Tensor broadcast_axis(const Tensor& a, int axis, int64_t n) {
  Shape out_shape = a.shape();
  if (axis < 0 || axis > a.ndim()) throw TensorError("broadcast_axis: bad axis");
  out_shape.insert(out_shape.begin() + axis, n);
  int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= a.dim(i);
  for (int i = axis; i < a.ndim(); ++i) inner *= a.dim(i);
  Tensor out = Tensor::zeros(out_shape);
  const float* src = a.data();
  float* dst = out.data();
  for (int64_t o = 0; o < outer; ++o)
    for (int64_t r = 0; r < n; ++r)
      std::copy(src + o * inner, src + (o + 1) * inner, dst + (o * n + r) * inner);
  return detail::record_unary(std::move(out), a, [axis](const Tensor& g, const Tape::Sink& sink) {
    sink(0, reduce_sum(g, axis));
  });
}

// Broadcast `a` up to `target` when a.shape is a suffix of target (or scalar).
inline Tensor broadcast_to(const Tensor& a0, const Shape& target) {
  Tensor a = a0;
  if (a.shape() == target) return a;
  if (a.numel() == 1 && a.ndim() > 0) a = reshape(a, {});  // single element acts as a scalar
  int extra = static_cast<int>(target.size()) - a.ndim();
  bool suffix_ok = extra >= 0;
  for (int i = 0; suffix_ok && i < a.ndim(); ++i)
    if (a.dim(i) != target[static_cast<size_t>(i + extra)]) suffix_ok = false;
  if (!suffix_ok)
    throw TensorError("broadcast: shape " + shape_str(a.shape()) + " is not a suffix of " + shape_str(target));
  Tensor cur = a;
  for (int i = extra - 1; i >= 0; --i) cur = broadcast_axis(cur, 0, target[static_cast<size_t>(i)]);
  return cur;
}

inline Tensor transpose(const Tensor& a) {
  if (a.ndim() != 2) throw TensorError("transpose expects a 2-d tensor");
  int64_t m = a.dim(0), n = a.dim(1);
  Tensor out = Tensor::zeros({n, m});
  const float* src = a.data();
  float* dst = out.data();
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < n; ++j) dst[j * m + i] = src[i * n + j];
  return detail::record_unary(std::move(out), a, [](const Tensor& g, const Tape::Sink& sink) {
    sink(0, transpose(g));
  });
}

inline Tensor slice(const Tensor& a, int axis, int64_t start, int64_t len);

inline Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw TensorError("concat: no inputs");
  const int nd = parts[0].ndim();
  if (axis < 0 || axis >= nd) throw TensorError("concat: bad axis");
  Shape out_shape = parts[0].shape();
  int64_t total = 0;
  for (const auto& p : parts) {
    if (p.ndim() != nd) throw TensorError("concat: rank mismatch");
    for (int i = 0; i < nd; ++i)
      if (i != axis && p.dim(i) != out_shape[static_cast<size_t>(i)])
        throw TensorError("concat: shape mismatch on non-concat axis");
    total += p.dim(axis);
  }
  out_shape[static_cast<size_t>(axis)] = total;
  int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= out_shape[static_cast<size_t>(i)];
  for (int i = axis + 1; i < nd; ++i) inner *= out_shape[static_cast<size_t>(i)];

  Tensor out = Tensor::zeros(out_shape);
  float* dst = out.data();
  int64_t offset = 0;
  for (const auto& p : parts) {
    int64_t plen = p.dim(axis) * inner;
    const float* src = p.data();
    for (int64_t o = 0; o < outer; ++o)
      std::copy(src + o * plen, src + (o + 1) * plen, dst + o * total * inner + offset);
    offset += plen;
  }

  Tape* tape = nullptr;
  for (const auto& p : parts) {
    Tape* t = detail::result_tape(p);
    if (t) {
      if (tape && tape != t) throw TensorError("concat: operands on different tapes");
      tape = t;
    }
  }
  if (!tape) return out;
  std::vector<int> parent_ids;
  std::vector<int64_t> lens;
  for (const auto& p : parts) {
    parent_ids.push_back(p.on_tape() ? p.node() : -1);
    lens.push_back(p.dim(axis));
  }
  int id = tape->record(parent_ids, [axis, lens](const Tensor& g, const Tape::Sink& sink) {
    int64_t at = 0;
    for (size_t i = 0; i < lens.size(); ++i) {
      sink(static_cast<int>(i), slice(g, axis, at, lens[i]));
      at += lens[i];
    }
  });
  return tape->bind(std::move(out), id);
}

inline Tensor slice(const Tensor& a, int axis, int64_t start, int64_t len) {
  const int nd = a.ndim();
  if (axis < 0 || axis >= nd) throw TensorError("slice: bad axis");
  if (start < 0 || len < 0 || start + len > a.dim(axis)) throw TensorError("slice: range out of bounds");
  Shape out_shape = a.shape();
  out_shape[static_cast<size_t>(axis)] = len;
  int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= a.dim(i);
  for (int i = axis + 1; i < nd; ++i) inner *= a.dim(i);
  int64_t src_stride = a.dim(axis) * inner;

  Tensor out = Tensor::zeros(out_shape);
  const float* src = a.data();
  float* dst = out.data();
  for (int64_t o = 0; o < outer; ++o)
    std::copy(src + o * src_stride + start * inner, src + o * src_stride + (start + len) * inner,
              dst + o * len * inner);

  int64_t before = start, after = a.dim(axis) - start - len;
  Shape full_shape = a.shape();
  return detail::record_unary(std::move(out), a,
                              [axis, before, after, full_shape](const Tensor& g, const Tape::Sink& sink) {
    std::vector<Tensor> pieces;
    if (before > 0) {
      Shape s = full_shape;
      s[static_cast<size_t>(axis)] = before;
      pieces.push_back(Tensor::zeros(s));
    }
    pieces.push_back(g);
    if (after > 0) {
      Shape s = full_shape;
      s[static_cast<size_t>(axis)] = after;
      pieces.push_back(Tensor::zeros(s));
    }
    sink(0, pieces.size() == 1 ? pieces[0] : concat(pieces, axis));
  });
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

inline Tensor reduce_sum(const Tensor& a, int axis) {
  const int nd = a.ndim();
  if (axis < 0 || axis >= nd) throw TensorError("reduce: bad axis");
  int64_t n = a.dim(axis);
  if (n == 0) throw TensorError("reduce: empty axis");
  Shape out_shape = a.shape();
  out_shape.erase(out_shape.begin() + axis);
  int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= a.dim(i);
  for (int i = axis + 1; i < nd; ++i) inner *= a.dim(i);

  Tensor out = Tensor::zeros(out_shape);
  const float* src = a.data();
  float* dst = out.data();
  for (int64_t o = 0; o < outer; ++o)
    for (int64_t r = 0; r < n; ++r) {
      const float* row = src + (o * n + r) * inner;
      float* acc = dst + o * inner;
      for (int64_t i = 0; i < inner; ++i) acc[i] += row[i];
    }
  return detail::record_unary(std::move(out), a, [axis, n](const Tensor& g, const Tape::Sink& sink) {
    sink(0, broadcast_axis(g, axis, n));
  });
}

inline Tensor reduce_sum_all(const Tensor& a) {
  if (a.numel() == 0) throw TensorError("reduce: empty tensor");
  return a.ndim() == 0 ? a : reduce_sum(flatten(a), 0);
}

Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, float c);

inline Tensor reduce_mean(const Tensor& a, int axis) {
  int64_t n = a.dim(axis);
  return scale(reduce_sum(a, axis), 1.0f / static_cast<float>(n));
}
inline Tensor reduce_mean_all(const Tensor& a) {
  return scale(reduce_sum_all(a), 1.0f / static_cast<float>(a.numel()));
}

// Max along an axis; ties resolve to the lowest index.
inline Tensor reduce_max(const Tensor& a, int axis) {
  const int nd = a.ndim();
  if (axis < 0 || axis >= nd) throw TensorError("reduce: bad axis");
  int64_t n = a.dim(axis);
  if (n == 0) throw TensorError("reduce: empty axis");
  Shape out_shape = a.shape();
  out_shape.erase(out_shape.begin() + axis);
  int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= a.dim(i);
  for (int i = axis + 1; i < nd; ++i) inner *= a.dim(i);

  Tensor out = Tensor::zeros(out_shape);
  Tensor mask = Tensor::zeros(a.shape());  // one-hot argmax, constant
  const float* src = a.data();
  float* dst = out.data();
  float* m = mask.data();
  for (int64_t o = 0; o < outer; ++o)
    for (int64_t i = 0; i < inner; ++i) {
      int64_t best = 0;
      float bv = src[(o * n) * inner + i];
      for (int64_t r = 1; r < n; ++r) {
        float v = src[(o * n + r) * inner + i];
        if (v > bv) {
          bv = v;
          best = r;
        }
      }
      dst[o * inner + i] = bv;
      m[(o * n + best) * inner + i] = 1.0f;
    }
  return detail::record_unary(std::move(out), a, [axis, n, mask](const Tensor& g, const Tape::Sink& sink) {
    sink(0, mul(broadcast_axis(g, axis, n), mask));
  });
}

inline Tensor reduce_max_all(const Tensor& a) {
  if (a.numel() == 0) throw TensorError("reduce: empty tensor");
  return a.ndim() == 0 ? a : reduce_max(flatten(a), 0);
}

// ---------------------------------------------------------------------------
// Elementwise ops
// ---------------------------------------------------------------------------

namespace detail {

template <typename F>
Tensor ew_unary_value(const Tensor& a, F&& f) {
  Tensor out = Tensor::zeros(a.shape());
  const float* src = a.data();
  float* dst = out.data();
  const int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) dst[i] = f(src[i]);
  return out;
}

template <typename F>
Tensor ew_binary_value(const Tensor& a, const Tensor& b, F&& f) {
  Tensor out = Tensor::zeros(a.shape());
  const float* pa = a.data();
  const float* pb = b.data();
  float* dst = out.data();
  const int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) dst[i] = f(pa[i], pb[i]);
  return out;
}

// Constant 0/1-style gate derived from a tensor's values; never on a tape, so
// its own gradient path is empty (the correct a.e. second derivative for
// piecewise-linear activations).
template <typename F>
Tensor gate(const Tensor& a, F&& f) {
  return ew_unary_value(a.detached(), std::forward<F>(f));
}

inline std::pair<Tensor, Tensor> broadcast_pair(const Tensor& a, const Tensor& b) {
  if (a.shape() == b.shape()) return {a, b};
  if (a.numel() == 1 && b.numel() == 1) {
    // both single-element: keep the higher-rank shape
    if (a.ndim() >= b.ndim()) return {a, broadcast_to(b, a.shape())};
    return {broadcast_to(a, b.shape()), b};
  }
  if (a.numel() == 1) return {broadcast_to(a, b.shape()), b};
  if (b.numel() <= a.numel()) return {a, broadcast_to(b, a.shape())};
  return {broadcast_to(a, b.shape()), b};
}

}  // namespace detail

inline Tensor add(const Tensor& a0, const Tensor& b0) {
  auto [a, b] = detail::broadcast_pair(a0, b0);
  Tensor out = detail::ew_binary_value(a, b, [](float x, float y) { return x + y; });
  return detail::record_binary(std::move(out), a, b, [](const Tensor& g, const Tape::Sink& sink) {
    sink(0, g);
    sink(1, g);
  });
}

inline Tensor negate(const Tensor& a) {
  Tensor out = detail::ew_unary_value(a, [](float x) { return -x; });
  return detail::record_unary(std::move(out), a, [](const Tensor& g, const Tape::Sink& sink) {
    sink(0, negate(g));
  });
}

inline Tensor sub(const Tensor& a0, const Tensor& b0) {
  auto [a, b] = detail::broadcast_pair(a0, b0);
  Tensor out = detail::ew_binary_value(a, b, [](float x, float y) { return x - y; });
  return detail::record_binary(std::move(out), a, b, [](const Tensor& g, const Tape::Sink& sink) {
    sink(0, g);
    sink(1, negate(g));
  });
}

inline Tensor mul(const Tensor& a0, const Tensor& b0) {
  auto [a, b] = detail::broadcast_pair(a0, b0);
  Tensor out = detail::ew_binary_value(a, b, [](float x, float y) { return x * y; });
  return detail::record_binary(std::move(out), a, b, [a, b](const Tensor& g, const Tape::Sink& sink) {
    sink(0, mul(g, b));
    sink(1, mul(g, a));
  });
}

inline Tensor div(const Tensor& a0, const Tensor& b0) {
  auto [a, b] = detail::broadcast_pair(a0, b0);
  Tensor out = detail::ew_binary_value(a, b, [](float x, float y) { return x / y; });
  return detail::record_binary(std::move(out), a, b, [a, b](const Tensor& g, const Tape::Sink& sink) {
    sink(0, div(g, b));
    sink(1, negate(div(mul(g, a), mul(b, b))));
  });
}

inline Tensor scale(const Tensor& a, float c) { return mul(a, Tensor::scalar(c)); }
inline Tensor shift(const Tensor& a, float c) { return add(a, Tensor::scalar(c)); }

namespace detail {

// Vectorized transcendental kernels (Eigen packet math); the scalar libm
// calls dominate profiles otherwise.
using ArrF = Eigen::Array<float, Eigen::Dynamic, 1>;
inline Eigen::Map<const ArrF> arr(const Tensor& t) {
  return Eigen::Map<const ArrF>(t.data(), t.numel());
}
inline Eigen::Map<ArrF> arr(Tensor& t) { return Eigen::Map<ArrF>(t.data(), t.numel()); }

}  // namespace detail

inline Tensor exp(const Tensor& a) {
  Tensor out = Tensor::zeros(a.shape());
  detail::arr(out) = detail::arr(a).exp();
  if (Tape* t = detail::result_tape(a)) {
    int id = t->record({a.node()}, nullptr);
    out = t->bind(std::move(out), id);
    Tensor bound = out;  // vjp references its own output so exp'' stays exact
    t->set_vjp(id, [bound](const Tensor& g, const Tape::Sink& sink) { sink(0, mul(g, bound)); });
  }
  return out;
}

inline Tensor log(const Tensor& a) {
  Tensor out = Tensor::zeros(a.shape());
  detail::arr(out) = detail::arr(a).log();
  return detail::record_unary(std::move(out), a, [a](const Tensor& g, const Tape::Sink& sink) {
    sink(0, div(g, a));
  });
}

inline Tensor sin(const Tensor& a) {
  Tensor out = Tensor::zeros(a.shape());
  detail::arr(out) = detail::arr(a).sin();
  return detail::record_unary(std::move(out), a, [a](const Tensor& g, const Tape::Sink& sink) {
    sink(0, mul(g, cos(a)));
  });
}

inline Tensor cos(const Tensor& a) {
  Tensor out = Tensor::zeros(a.shape());
  detail::arr(out) = detail::arr(a).cos();
  return detail::record_unary(std::move(out), a, [a](const Tensor& g, const Tape::Sink& sink) {
    sink(0, negate(mul(g, sin(a))));
  });
}

inline Tensor sqrt(const Tensor& a) {
  Tensor out = Tensor::zeros(a.shape());
  detail::arr(out) = detail::arr(a).sqrt();
  if (Tape* t = detail::result_tape(a)) {
    int id = t->record({a.node()}, nullptr);
    out = t->bind(std::move(out), id);
    Tensor bound = out;
    t->set_vjp(id, [bound](const Tensor& g, const Tape::Sink& sink) {
      sink(0, div(g, scale(bound, 2.0f)));
    });
  }
  return out;
}

inline Tensor relu(const Tensor& a) {
  Tensor out = detail::ew_unary_value(a, [](float x) { return x > 0.0f ? x : 0.0f; });
  return detail::record_unary(std::move(out), a, [a](const Tensor& g, const Tape::Sink& sink) {
    sink(0, mul(g, detail::gate(a, [](float x) { return x > 0.0f ? 1.0f : 0.0f; })));
  });
}

constexpr float kLeakySlope = 0.2f;

inline Tensor leaky_relu(const Tensor& a) {
  Tensor out = detail::ew_unary_value(a, [](float x) { return x > 0.0f ? x : kLeakySlope * x; });
  return detail::record_unary(std::move(out), a, [a](const Tensor& g, const Tape::Sink& sink) {
    sink(0, mul(g, detail::gate(a, [](float x) { return x > 0.0f ? 1.0f : kLeakySlope; })));
  });
}

inline float softplus_scalar(float x) {
  if (x > 20.0f) return x;
  if (x < -20.0f) return std::exp(x);
  return std::log1p(std::exp(x));
}
inline float sigmoid_scalar(float x) {
  return x >= 0.0f ? 1.0f / (1.0f + std::exp(-x)) : std::exp(x) / (1.0f + std::exp(x));
}

Tensor sigmoid(const Tensor& a);

inline Tensor softplus(const Tensor& a) {
  // stable vector form: max(x,0) + log(exp(-max(x,0)) + exp(x - max(x,0)))
  Tensor out = Tensor::zeros(a.shape());
  {
    auto x = detail::arr(a);
    auto m = x.max(0.0f);
    detail::arr(out) = m + ((-m).exp() + (x - m).exp()).log();
  }
  return detail::record_unary(std::move(out), a, [a](const Tensor& g, const Tape::Sink& sink) {
    sink(0, mul(g, sigmoid(a)));
  });
}

inline Tensor sigmoid(const Tensor& a) {
  // 1/(1+exp(-x)); the f32 overflow limit resolves to the correct 0/1
  Tensor out = Tensor::zeros(a.shape());
  detail::arr(out) = 1.0f / (1.0f + (-detail::arr(a)).exp());
  if (Tape* t = detail::result_tape(a)) {
    int id = t->record({a.node()}, nullptr);
    out = t->bind(std::move(out), id);
    Tensor bound = out;
    t->set_vjp(id, [bound](const Tensor& g, const Tape::Sink& sink) {
      sink(0, mul(g, mul(bound, sub(Tensor::scalar(1.0f), bound))));
    });
  }
  return out;
}

// Hard clamp; gradient is 1 inside [lo, hi] and 0 outside.
inline Tensor clamp(const Tensor& a, float lo, float hi) {
  if (!(lo < hi)) throw TensorError("clamp: lo must be < hi");
  Tensor out = detail::ew_unary_value(a, [lo, hi](float x) { return std::min(std::max(x, lo), hi); });
  return detail::record_unary(std::move(out), a, [a, lo, hi](const Tensor& g, const Tape::Sink& sink) {
    sink(0, mul(g, detail::gate(a, [lo, hi](float x) { return (x >= lo && x <= hi) ? 1.0f : 0.0f; })));
  });
}

inline Tensor atan2(const Tensor& y0, const Tensor& x0) {
  auto [y, x] = detail::broadcast_pair(y0, x0);
  Tensor out = detail::ew_binary_value(y, x, [](float yy, float xx) { return std::atan2(yy, xx); });
  return detail::record_binary(std::move(out), y, x, [y, x](const Tensor& g, const Tape::Sink& sink) {
    Tensor denom = add(mul(x, x), mul(y, y));
    sink(0, div(mul(g, x), denom));
    sink(1, negate(div(mul(g, y), denom)));
  });
}

inline Tensor square(const Tensor& a) { return mul(a, a); }

// ---------------------------------------------------------------------------
// Matrix multiply (Eigen-backed inner kernel)
// ---------------------------------------------------------------------------

Tensor matmul_nt(const Tensor& a, const Tensor& b);
Tensor matmul_tn(const Tensor& a, const Tensor& b);

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.ndim() != 2 || b.ndim() != 2) throw TensorError("matmul expects 2-d tensors");
  const int64_t m = a.dim(0), k = a.dim(1), k2 = b.dim(0), n = b.dim(1);
  if (k != k2)
    throw TensorError("matmul: inner dimensions disagree " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  Tensor out = Tensor::zeros({m, n});
  using MatRM = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  Eigen::Map<const MatRM> A(a.data(), m, k);
  Eigen::Map<const MatRM> B(b.data(), k, n);
  Eigen::Map<MatRM> C(out.data(), m, n);
  C.noalias() = A * B;
  return detail::record_binary(std::move(out), a, b, [a, b](const Tensor& g, const Tape::Sink& sink) {
    sink(0, matmul_nt(g, b));
    sink(1, matmul_tn(a, g));
  });
}

// a * b^T without materializing the transpose: [m,k] x [n,k] -> [m,n]
inline Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(1))
    throw TensorError("matmul_nt: dimension mismatch");
  const int64_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
  Tensor out = Tensor::zeros({m, n});
  using MatRM = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  Eigen::Map<const MatRM> A(a.data(), m, k);
  Eigen::Map<const MatRM> B(b.data(), n, k);
  Eigen::Map<MatRM> C(out.data(), m, n);
  C.noalias() = A * B.transpose();
  return detail::record_binary(std::move(out), a, b, [a, b](const Tensor& g, const Tape::Sink& sink) {
    sink(0, matmul(g, b));
    sink(1, matmul_tn(g, a));
  });
}

// a^T * b without materializing the transpose: [k,m] x [k,n] -> [m,n]
inline Tensor matmul_tn(const Tensor& a, const Tensor& b) {
  if (a.ndim() != 2 || b.ndim() != 2 || a.dim(0) != b.dim(0))
    throw TensorError("matmul_tn: dimension mismatch");
  const int64_t k = a.dim(0), m = a.dim(1), n = b.dim(1);
  Tensor out = Tensor::zeros({m, n});
  using MatRM = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  Eigen::Map<const MatRM> A(a.data(), k, m);
  Eigen::Map<const MatRM> B(b.data(), k, n);
  Eigen::Map<MatRM> C(out.data(), m, n);
  C.noalias() = A.transpose() * B;
  return detail::record_binary(std::move(out), a, b, [a, b](const Tensor& g, const Tape::Sink& sink) {
    sink(0, matmul_nt(b, g));
    sink(1, matmul(a, g));
  });
}

// Fused x*W + b (row-broadcast bias) so dense layers avoid materializing the
// broadcast bias tensor.
inline Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  if (x.ndim() != 2 || w.ndim() != 2 || b.ndim() != 1) throw TensorError("linear: expected [N,K]x[K,M]+[M]");
  const int64_t n = x.dim(0), k = x.dim(1), m = w.dim(1);
  if (w.dim(0) != k || b.dim(0) != m) throw TensorError("linear: dimension mismatch");
  Tensor out = Tensor::zeros({n, m});
  using MatRM = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  Eigen::Map<const MatRM> X(x.data(), n, k);
  Eigen::Map<const MatRM> W(w.data(), k, m);
  Eigen::Map<MatRM> C(out.data(), n, m);
  C.noalias() = X * W;
  C.rowwise() += Eigen::Map<const Eigen::RowVectorXf>(b.data(), m);
  Tape* t = detail::result_tape(x, w);
  if (Tape* tb = detail::result_tape(b)) {
    if (t && t != tb) throw TensorError("operands bound to different tapes");
    t = t ? t : tb;
  }
  if (t) {
    int id = t->record({x.on_tape() ? x.node() : -1, w.on_tape() ? w.node() : -1,
                        b.on_tape() ? b.node() : -1},
                       [x, w](const Tensor& g, const Tape::Sink& sink) {
                         sink(0, matmul_nt(g, w));
                         sink(1, matmul_tn(x, g));
                         sink(2, reduce_sum(g, 0));
                       });
    out = t->bind(std::move(out), id);
  }
  return out;
}

// ---------------------------------------------------------------------------
// im2col / col2im — adjoint pair backing the discriminator's convolutions
// ---------------------------------------------------------------------------

struct ConvGeom {
  int64_t batch, height, width, channels;
  int kernel, stride, pad;
  int64_t out_h() const { return (height + 2 * pad - kernel) / stride + 1; }
  int64_t out_w() const { return (width + 2 * pad - kernel) / stride + 1; }
};

Tensor col2im(const Tensor& cols, const ConvGeom& geom);

// x: [B, H, W, C] -> [B*Ho*Wo, k*k*C]
inline Tensor im2col(const Tensor& x, const ConvGeom& geom) {
  if (x.ndim() != 4 || x.dim(0) != geom.batch || x.dim(1) != geom.height || x.dim(2) != geom.width ||
      x.dim(3) != geom.channels)
    throw TensorError("im2col: input shape does not match geometry");
  const int64_t ho = geom.out_h(), wo = geom.out_w(), c = geom.channels;
  const int k = geom.kernel;
  Tensor out = Tensor::zeros({geom.batch * ho * wo, static_cast<int64_t>(k) * k * c});
  const float* src = x.data();
  float* dst = out.data();
  const int64_t patch = static_cast<int64_t>(k) * k * c;
  for (int64_t b = 0; b < geom.batch; ++b)
    for (int64_t oy = 0; oy < ho; ++oy)
      for (int64_t ox = 0; ox < wo; ++ox) {
        float* prow = dst + ((b * ho + oy) * wo + ox) * patch;
        for (int ky = 0; ky < k; ++ky) {
          int64_t iy = oy * geom.stride + ky - geom.pad;
          if (iy < 0 || iy >= geom.height) continue;  // zero padding
          for (int kx = 0; kx < k; ++kx) {
            int64_t ix = ox * geom.stride + kx - geom.pad;
            if (ix < 0 || ix >= geom.width) continue;
            const float* cell = src + ((b * geom.height + iy) * geom.width + ix) * c;
            std::copy(cell, cell + c, prow + (static_cast<int64_t>(ky) * k + kx) * c);
          }
        }
      }
  return detail::record_unary(std::move(out), x, [geom](const Tensor& g, const Tape::Sink& sink) {
    sink(0, col2im(g, geom));
  });
}

inline Tensor col2im(const Tensor& cols, const ConvGeom& geom) {
  const int64_t ho = geom.out_h(), wo = geom.out_w(), c = geom.channels;
  const int k = geom.kernel;
  const int64_t patch = static_cast<int64_t>(k) * k * c;
  if (cols.ndim() != 2 || cols.dim(0) != geom.batch * ho * wo || cols.dim(1) != patch)
    throw TensorError("col2im: input shape does not match geometry");
  Tensor out = Tensor::zeros({geom.batch, geom.height, geom.width, geom.channels});
  const float* src = cols.data();
  float* dst = out.data();
  for (int64_t b = 0; b < geom.batch; ++b)
    for (int64_t oy = 0; oy < ho; ++oy)
      for (int64_t ox = 0; ox < wo; ++ox) {
        const float* prow = src + ((b * ho + oy) * wo + ox) * patch;
        for (int ky = 0; ky < k; ++ky) {
          int64_t iy = oy * geom.stride + ky - geom.pad;
          if (iy < 0 || iy >= geom.height) continue;
          for (int kx = 0; kx < k; ++kx) {
            int64_t ix = ox * geom.stride + kx - geom.pad;
            if (ix < 0 || ix >= geom.width) continue;
            float* cell = dst + ((b * geom.height + iy) * geom.width + ix) * c;
            const float* p = prow + (static_cast<int64_t>(ky) * k + kx) * c;
            for (int64_t ch = 0; ch < c; ++ch) cell[ch] += p[ch];
          }
        }
      }
  return detail::record_unary(std::move(out), cols, [geom](const Tensor& g, const Tape::Sink& sink) {
    sink(0, im2col(g, geom));
  });
}

// ---------------------------------------------------------------------------
// Generic elementwise dispatch (single enum surface over the ops above)
// ---------------------------------------------------------------------------

enum class EwOp {
  Add,
  Sub,
  Mul,
  Div,
  Exp,
  Log,
  Sin,
  Cos,
  Sqrt,
  Relu,
  LeakyRelu,
  Softplus,
  Sigmoid,
  Negate,
  Clamp,
  Atan2,
};

inline bool ew_is_binary(EwOp op) {
  switch (op) {
    case EwOp::Add:
    case EwOp::Sub:
    case EwOp::Mul:
    case EwOp::Div:
    case EwOp::Atan2:
      return true;
    default:
      return false;
  }
}

inline Tensor elementwise(EwOp op, const Tensor& a, const Tensor* b = nullptr, float lo = 0.0f,
                          float hi = 1.0f) {
  if (ew_is_binary(op) != (b != nullptr)) throw TensorError("elementwise: operand count mismatch");
  switch (op) {
    case EwOp::Add: return add(a, *b);
    case EwOp::Sub: return sub(a, *b);
    case EwOp::Mul: return mul(a, *b);
    case EwOp::Div: return div(a, *b);
    case EwOp::Atan2: return atan2(a, *b);
    case EwOp::Exp: return exp(a);
    case EwOp::Log: return log(a);
    case EwOp::Sin: return sin(a);
    case EwOp::Cos: return cos(a);
    case EwOp::Sqrt: return sqrt(a);
    case EwOp::Relu: return relu(a);
    case EwOp::LeakyRelu: return leaky_relu(a);
    case EwOp::Softplus: return softplus(a);
    case EwOp::Sigmoid: return sigmoid(a);
    case EwOp::Negate: return negate(a);
    case EwOp::Clamp: return clamp(a, lo, hi);
  }
  throw TensorError("elementwise: unknown op");
}

// ---------------------------------------------------------------------------
// Tape backward traversal
// ---------------------------------------------------------------------------

inline std::vector<Tensor> Tape::propagate(const Tensor& out) {
  int out_id = node_of(out);
  if (out_id < 0) throw TensorError("backward: output is not on this tape");
  if (out.numel() != 1) throw TensorError("backward: output must be scalar, got " + shape_str(out.shape()));

  std::vector<Tensor> grads(static_cast<size_t>(out_id) + 1);
  grads[static_cast<size_t>(out_id)] = Tensor::ones(out.shape());

  for (int id = out_id; id >= 0; --id) {
    Tensor g = grads[static_cast<size_t>(id)];
    if (!g.defined()) continue;
    // copy out the record: vjp calls below may grow nodes_
    std::vector<int> parents = nodes_[static_cast<size_t>(id)].parents;
    VjpFn vjp = nodes_[static_cast<size_t>(id)].vjp;
    if (!vjp) continue;  // leaf
    vjp(g, [&](int slot, const Tensor& contrib) {
      int pid = parents[static_cast<size_t>(slot)];
      if (pid < 0) return;  // constant operand
      Tensor& acc = grads[static_cast<size_t>(pid)];
      acc = acc.defined() ? add(acc, contrib) : contrib;
    });
  }
  return grads;
}

}  // namespace campari

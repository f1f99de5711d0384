#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "cat/error.hpp"

namespace cat {

using Shape = std::vector<std::int64_t>;

inline std::int64_t shape_numel(const Shape& s) {
  std::int64_t n = 1;
  for (auto d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << ',';
    os << s[i];
  }
  os << ')';
  return os.str();
}

// Process-wide op accounting. Kernels are single-threaded (see the
// concurrency notes in the README), so plain counters suffice.
struct OpCounters {
  static inline std::uint64_t macs = 0;        // multiply-adds executed by matmul
  static inline std::uint64_t live_bytes = 0;  // tensor payload currently allocated
  static inline std::uint64_t peak_bytes = 0;
};

inline void reset_mac_counter() { OpCounters::macs = 0; }
inline std::uint64_t mac_counter() { return OpCounters::macs; }
inline void reset_peak_bytes() { OpCounters::peak_bytes = OpCounters::live_bytes; }
inline std::uint64_t peak_tensor_bytes() { return OpCounters::peak_bytes; }

namespace detail {

template <typename Scalar>
struct Buffer {
  std::vector<Scalar> v;

  explicit Buffer(std::vector<Scalar>&& data) : v(std::move(data)) { count(); }
  explicit Buffer(std::size_t n, Scalar fill = Scalar(0)) : v(n, fill) { count(); }
  ~Buffer() { OpCounters::live_bytes -= v.size() * sizeof(Scalar); }

  Buffer(const Buffer&) = delete;
  Buffer& operator=(const Buffer&) = delete;

 private:
  void count() {
    OpCounters::live_bytes += v.size() * sizeof(Scalar);
    OpCounters::peak_bytes = std::max(OpCounters::peak_bytes, OpCounters::live_bytes);
  }
};

}  // namespace detail

template <typename Scalar>
class Tape;

// Dense row-major tensor. Copies are cheap (shared immutable buffer).
// A tensor is "tracked" when it references a node on a Tape; untracked
// tensors never touch any tape.
template <typename Scalar>
class Tensor {
 public:
  Tensor() = default;

  Tensor(Shape shape, std::vector<Scalar> data)
      : shape_(std::move(shape)),
        buf_(std::make_shared<detail::Buffer<Scalar>>(std::move(data))) {
    if (shape_numel(shape_) != static_cast<std::int64_t>(buf_->v.size()))
      throw ShapeMismatch("tensor data length " + std::to_string(buf_->v.size()) +
                          " does not match shape " + shape_str(shape_));
  }

  static Tensor zeros(Shape shape) {
    const auto n = static_cast<std::size_t>(shape_numel(shape));
    Tensor t;
    t.shape_ = std::move(shape);
    t.buf_ = std::make_shared<detail::Buffer<Scalar>>(n);
    return t;
  }

  static Tensor full(Shape shape, Scalar value) {
    const auto n = static_cast<std::size_t>(shape_numel(shape));
    Tensor t;
    t.shape_ = std::move(shape);
    t.buf_ = std::make_shared<detail::Buffer<Scalar>>(n, value);
    return t;
  }

  static Tensor scalar(Scalar value) { return full({}, value); }

  bool defined() const { return buf_ != nullptr; }
  const Shape& shape() const { return shape_; }
  std::int64_t rank() const { return static_cast<std::int64_t>(shape_.size()); }
  std::int64_t dim(std::int64_t axis) const { return shape_[static_cast<std::size_t>(axis)]; }
  std::int64_t numel() const { return buf_ ? static_cast<std::int64_t>(buf_->v.size()) : 0; }

  const Scalar* data() const { return buf_->v.data(); }
  Scalar at(std::int64_t flat) const { return buf_->v[static_cast<std::size_t>(flat)]; }
  Scalar item() const {
    if (numel() != 1) throw NotScalar("item() on tensor of shape " + shape_str(shape_));
    return buf_->v[0];
  }
  std::vector<Scalar> to_vector() const { return buf_->v; }

  bool tracked() const { return node_ >= 0; }
  int node() const { return node_; }
  Tape<Scalar>* tape() const { return tape_; }

  Tensor detached() const {
    Tensor t = *this;
    t.tape_ = nullptr;
    t.node_ = -1;
    return t;
  }

  Tensor with_node(Tape<Scalar>* tape, int node) const {
    Tensor t = *this;
    t.tape_ = tape;
    t.node_ = node;
    return t;
  }

  // Reinterpret with a new shape of equal element count; shares the buffer.
  Tensor reshaped_view(Shape shape) const {
    if (shape_numel(shape) != numel())
      throw ShapeMismatch("reshape " + shape_str(shape_) + " -> " + shape_str(shape) +
                          " changes element count");
    Tensor t = *this;
    t.shape_ = std::move(shape);
    t.tape_ = nullptr;
    t.node_ = -1;
    return t;
  }

 private:
  Shape shape_;
  std::shared_ptr<detail::Buffer<Scalar>> buf_;
  Tape<Scalar>* tape_ = nullptr;
  int node_ = -1;
};

// Reverse-mode tape. Ops append nodes in execution order, so ids are
// topologically sorted by construction; backward() sweeps them once in
// reverse id order, accumulating gradients additively over fan-out.
template <typename Scalar>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Tensor<Scalar>&)>;

  struct Node {
    const char* op;
    std::vector<int> inputs;  // tracked input node ids
    BackwardFn backward;      // null for leaves
  };

  // Registers a named leaf (parameter or checked input).
  Tensor<Scalar> leaf(const std::string& name, const Tensor<Scalar>& value) {
    const int id = emit("leaf", {}, nullptr);
    leaves_.push_back({name, id, value.shape()});
    return value.detached().with_node(this, id);
  }

  int emit(const char* op, std::vector<int> inputs, BackwardFn fn) {
    nodes_.push_back(Node{op, std::move(inputs), std::move(fn)});
    return static_cast<int>(nodes_.size()) - 1;
  }

  void accumulate(int node, const Tensor<Scalar>& g) {
    auto& slot = grads_[static_cast<std::size_t>(node)];
    if (!slot.defined()) {
      slot = g;
      return;
    }
    if (slot.shape() != g.shape())
      throw ShapeMismatch("gradient shape " + shape_str(g.shape()) + " vs " +
                          shape_str(slot.shape()) + " at node " + std::to_string(node));
    std::vector<Scalar> out(slot.to_vector());
    const Scalar* add = g.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += add[i];
    slot = Tensor<Scalar>(slot.shape(), std::move(out));
  }

  // Seeds d(loss)/d(loss) = 1 and sweeps the tape. Returns gradients for
  // every named leaf; leaves off the path get zeros of their shape.
  std::map<std::string, Tensor<Scalar>> backward(const Tensor<Scalar>& loss) {
    if (!loss.tracked()) throw DetachedTensor("backward() on a tensor with no tape node");
    if (loss.tape() != this) throw DetachedTensor("loss was recorded on a different tape");
    if (loss.numel() != 1)
      throw NotScalar("backward() needs a scalar loss, got shape " + shape_str(loss.shape()));

    grads_.assign(nodes_.size(), Tensor<Scalar>());
    grads_[static_cast<std::size_t>(loss.node())] = Tensor<Scalar>::full(loss.shape(), Scalar(1));
    for (int id = loss.node(); id >= 0; --id) {
      const auto& g = grads_[static_cast<std::size_t>(id)];
      if (!g.defined()) continue;
      const auto& node = nodes_[static_cast<std::size_t>(id)];
      if (node.backward) node.backward(*this, g);
    }

    std::map<std::string, Tensor<Scalar>> out;
    for (const auto& lf : leaves_) {
      const auto& g = grads_[static_cast<std::size_t>(lf.node)];
      out.emplace(lf.name, g.defined() ? g : Tensor<Scalar>::zeros(lf.shape));
    }
    return out;
  }

  // Gradient of the last backward() at a node; undefined tensor if none.
  Tensor<Scalar> grad(int node) const {
    if (node < 0 || node >= static_cast<int>(grads_.size())) return {};
    return grads_[static_cast<std::size_t>(node)];
  }

  const std::vector<Node>& nodes() const { return nodes_; }
  std::size_t size() const { return nodes_.size(); }

 private:
  struct LeafInfo {
    std::string name;
    int node;
    Shape shape;
  };

  std::vector<Node> nodes_;
  std::vector<Tensor<Scalar>> grads_;
  std::vector<LeafInfo> leaves_;
};

namespace detail {

template <typename Scalar>
Tape<Scalar>* common_tape(std::initializer_list<const Tensor<Scalar>*> ts) {
  Tape<Scalar>* tape = nullptr;
  for (const auto* t : ts) {
    if (!t->tracked()) continue;
    if (tape && tape != t->tape())
      throw std::logic_error("operands recorded on different tapes");
    tape = t->tape();
  }
  return tape;
}

// b's shape must equal a's, be a suffix of it, or be rank-0.
template <typename Scalar>
void check_suffix(const Tensor<Scalar>& a, const Tensor<Scalar>& b, const char* op) {
  const auto& as = a.shape();
  const auto& bs = b.shape();
  if (bs.size() > as.size())
    throw ShapeMismatch(std::string(op) + ": " + shape_str(bs) + " is not a suffix of " +
                        shape_str(as));
  for (std::size_t i = 0; i < bs.size(); ++i) {
    if (bs[bs.size() - 1 - i] != as[as.size() - 1 - i])
      throw ShapeMismatch(std::string(op) + ": " + shape_str(bs) + " is not a suffix of " +
                          shape_str(as));
  }
}

// Untracked pointwise apply with suffix broadcast of b over a.
template <typename Scalar, typename Fn>
Tensor<Scalar> broadcast_zip(const Tensor<Scalar>& a, const Tensor<Scalar>& b, Fn&& fn) {
  const std::int64_t bn = b.numel();
  std::vector<Scalar> out(static_cast<std::size_t>(a.numel()));
  const Scalar* pa = a.data();
  const Scalar* pb = b.data();
  for (std::int64_t i = 0; i < a.numel(); ++i)
    out[static_cast<std::size_t>(i)] = fn(pa[i], pb[i % bn]);
  return Tensor<Scalar>(a.shape(), std::move(out));
}

// Sums g over leading axes until it has `target` shape (suffix of g's shape).
template <typename Scalar>
Tensor<Scalar> reduce_to_suffix(const Tensor<Scalar>& g, const Shape& target) {
  const std::int64_t tn = shape_numel(target);
  if (tn == g.numel() && target == g.shape()) return g;
  std::vector<Scalar> out(static_cast<std::size_t>(tn), Scalar(0));
  const Scalar* pg = g.data();
  for (std::int64_t i = 0; i < g.numel(); ++i) out[static_cast<std::size_t>(i % tn)] += pg[i];
  return Tensor<Scalar>(target, std::move(out));
}

template <typename Scalar>
Tensor<Scalar> add_raw(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  return broadcast_zip(a, b, [](Scalar x, Scalar y) { return x + y; });
}

template <typename Scalar>
Tensor<Scalar> mul_raw(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  return broadcast_zip(a, b, [](Scalar x, Scalar y) { return x * y; });
}

template <typename Scalar>
Tensor<Scalar> scale_raw(const Tensor<Scalar>& a, Scalar c) {
  std::vector<Scalar> out(static_cast<std::size_t>(a.numel()));
  const Scalar* pa = a.data();
  for (std::int64_t i = 0; i < a.numel(); ++i) out[static_cast<std::size_t>(i)] = pa[i] * c;
  return Tensor<Scalar>(a.shape(), std::move(out));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

template <typename Scalar>
Tensor<Scalar> add(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  detail::check_suffix(a, b, "add");
  Tensor<Scalar> out = detail::add_raw(a, b);
  Tape<Scalar>* tape = detail::common_tape<Scalar>({&a, &b});
  if (!tape) return out;
  const int an = a.node(), bn = b.node();
  const Shape bs = b.shape();
  std::vector<int> in;
  if (an >= 0) in.push_back(an);
  if (bn >= 0) in.push_back(bn);
  const int id = tape->emit("add", std::move(in),
                            [an, bn, bs](Tape<Scalar>& t, const Tensor<Scalar>& g) {
                              if (an >= 0) t.accumulate(an, g);
                              if (bn >= 0) t.accumulate(bn, detail::reduce_to_suffix(g, bs));
                            });
  return out.with_node(tape, id);
}

template <typename Scalar>
Tensor<Scalar> sub(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  detail::check_suffix(a, b, "sub");
  Tensor<Scalar> out = detail::broadcast_zip(a, b, [](Scalar x, Scalar y) { return x - y; });
  Tape<Scalar>* tape = detail::common_tape<Scalar>({&a, &b});
  if (!tape) return out;
  const int an = a.node(), bn = b.node();
  const Shape bs = b.shape();
  std::vector<int> in;
  if (an >= 0) in.push_back(an);
  if (bn >= 0) in.push_back(bn);
  const int id = tape->emit(
      "sub", std::move(in), [an, bn, bs](Tape<Scalar>& t, const Tensor<Scalar>& g) {
        if (an >= 0) t.accumulate(an, g);
        if (bn >= 0)
          t.accumulate(bn, detail::scale_raw(detail::reduce_to_suffix(g, bs), Scalar(-1)));
      });
  return out.with_node(tape, id);
}

template <typename Scalar>
Tensor<Scalar> mul(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  detail::check_suffix(a, b, "mul");
  Tensor<Scalar> out = detail::mul_raw(a, b);
  Tape<Scalar>* tape = detail::common_tape<Scalar>({&a, &b});
  if (!tape) return out;
  const int an = a.node(), bn = b.node();
  const Tensor<Scalar> av = a.detached(), bv = b.detached();
  std::vector<int> in;
  if (an >= 0) in.push_back(an);
  if (bn >= 0) in.push_back(bn);
  const int id = tape->emit(
      "mul", std::move(in), [an, bn, av, bv](Tape<Scalar>& t, const Tensor<Scalar>& g) {
        if (an >= 0) t.accumulate(an, detail::mul_raw(g, bv));
        if (bn >= 0)
          t.accumulate(bn, detail::reduce_to_suffix(detail::mul_raw(g, av), bv.shape()));
      });
  return out.with_node(tape, id);
}

template <typename Scalar>
Tensor<Scalar> scale(const Tensor<Scalar>& a, Scalar c) {
  Tensor<Scalar> out = detail::scale_raw(a, c);
  Tape<Scalar>* tape = detail::common_tape<Scalar>({&a});
  if (!tape) return out;
  const int an = a.node();
  const int id = tape->emit("scale", {an}, [an, c](Tape<Scalar>& t, const Tensor<Scalar>& g) {
    t.accumulate(an, detail::scale_raw(g, c));
  });
  return out.with_node(tape, id);
}

template <typename Scalar>
Tensor<Scalar> add_scalar(const Tensor<Scalar>& a, Scalar c) {
  std::vector<Scalar> out(static_cast<std::size_t>(a.numel()));
  const Scalar* pa = a.data();
  for (std::int64_t i = 0; i < a.numel(); ++i) out[static_cast<std::size_t>(i)] = pa[i] + c;
  Tensor<Scalar> res(a.shape(), std::move(out));
  Tape<Scalar>* tape = detail::common_tape<Scalar>({&a});
  if (!tape) return res;
  const int an = a.node();
  const int id = tape->emit("add_scalar", {an}, [an](Tape<Scalar>& t, const Tensor<Scalar>& g) {
    t.accumulate(an, g);
  });
  return res.with_node(tape, id);
}

// ---------------------------------------------------------------------------
// shape ops
// ---------------------------------------------------------------------------

template <typename Scalar>
Tensor<Scalar> reshape(const Tensor<Scalar>& a, Shape shape) {
  Tensor<Scalar> out = a.reshaped_view(std::move(shape));
  Tape<Scalar>* tape = detail::common_tape<Scalar>({&a});
  if (!tape) return out;
  const int an = a.node();
  const Shape orig = a.shape();
  const int id = tape->emit("reshape", {an}, [an, orig](Tape<Scalar>& t, const Tensor<Scalar>& g) {
    t.accumulate(an, g.reshaped_view(orig));
  });
  return out.with_node(tape, id);
}

// Arbitrary axis permutation, materialized to contiguous row-major output.
template <typename Scalar>
Tensor<Scalar> permute(const Tensor<Scalar>& a, const std::vector<int>& perm) {
  const auto r = static_cast<std::size_t>(a.rank());
  if (perm.size() != r) throw AxisOutOfRange("permute: rank mismatch");
  std::vector<bool> seen(r, false);
  for (int p : perm) {
    if (p < 0 || static_cast<std::size_t>(p) >= r || seen[static_cast<std::size_t>(p)])
      throw AxisOutOfRange("permute: invalid permutation");
    seen[static_cast<std::size_t>(p)] = true;
  }

  const Shape& in_shape = a.shape();
  Shape out_shape(r);
  for (std::size_t i = 0; i < r; ++i)
    out_shape[i] = in_shape[static_cast<std::size_t>(perm[i])];

  std::vector<std::int64_t> in_strides(r, 1);
  for (std::size_t i = r; i-- > 1;)
    in_strides[i - 1] = in_strides[i] * in_shape[i];
  // stride of output axis i in the input buffer
  std::vector<std::int64_t> gather(r, 1);
  for (std::size_t i = 0; i < r; ++i) gather[i] = in_strides[static_cast<std::size_t>(perm[i])];

  std::vector<Scalar> out(static_cast<std::size_t>(a.numel()));
  const Scalar* pa = a.data();
  std::vector<std::int64_t> idx(r, 0);
  std::int64_t src = 0;
  for (std::int64_t flat = 0; flat < a.numel(); ++flat) {
    out[static_cast<std::size_t>(flat)] = pa[src];
    for (std::size_t ax = r; ax-- > 0;) {
      idx[ax]++;
      src += gather[ax];
      if (idx[ax] < out_shape[ax]) break;
      src -= gather[ax] * out_shape[ax];
      idx[ax] = 0;
    }
  }

  Tensor<Scalar> res(std::move(out_shape), std::move(out));
  Tape<Scalar>* tape = detail::common_tape<Scalar>({&a});
  if (!tape) return res;
  const int an = a.node();
  std::vector<int> inv(r);
  for (std::size_t i = 0; i < r; ++i) inv[static_cast<std::size_t>(perm[i])] = static_cast<int>(i);
  const int id = tape->emit("permute", {an}, [an, inv](Tape<Scalar>& t, const Tensor<Scalar>& g) {
    t.accumulate(an, permute(g, inv));
  });
  return res.with_node(tape, id);
}

template <typename Scalar>
Tensor<Scalar> transpose(const Tensor<Scalar>& a, std::int64_t axis0, std::int64_t axis1) {
  const std::int64_t r = a.rank();
  if (axis0 < 0 || axis0 >= r || axis1 < 0 || axis1 >= r)
    throw AxisOutOfRange("transpose: axes (" + std::to_string(axis0) + "," +
                         std::to_string(axis1) + ") out of range for rank " + std::to_string(r));
  if (axis0 == axis1) throw AxisOutOfRange("transpose: axes must be distinct");
  std::vector<int> perm(static_cast<std::size_t>(r));
  for (std::int64_t i = 0; i < r; ++i) perm[static_cast<std::size_t>(i)] = static_cast<int>(i);
  std::swap(perm[static_cast<std::size_t>(axis0)], perm[static_cast<std::size_t>(axis1)]);
  return permute(a, perm);
}

// out = a[..., start : start+len] along the last axis.
template <typename Scalar>
Tensor<Scalar> slice_last(const Tensor<Scalar>& a, std::int64_t start, std::int64_t len) {
  const std::int64_t d = a.dim(a.rank() - 1);
  if (start < 0 || len <= 0 || start + len > d)
    throw AxisOutOfRange("slice_last: [" + std::to_string(start) + "," +
                         std::to_string(start + len) + ") out of range for dim " +
                         std::to_string(d));
  const std::int64_t rows = a.numel() / d;
  std::vector<Scalar> out(static_cast<std::size_t>(rows * len));
  const Scalar* pa = a.data();
  for (std::int64_t r = 0; r < rows; ++r)
    std::copy(pa + r * d + start, pa + r * d + start + len, out.begin() + r * len);
  Shape shape = a.shape();
  shape.back() = len;
  Tensor<Scalar> res(std::move(shape), std::move(out));
  Tape<Scalar>* tape = detail::common_tape<Scalar>({&a});
  if (!tape) return res;
  const int an = a.node();
  const Shape orig = a.shape();
  const int id = tape->emit(
      "slice_last", {an}, [an, orig, start, len, d, rows](Tape<Scalar>& t, const Tensor<Scalar>& g) {
        std::vector<Scalar> gi(static_cast<std::size_t>(shape_numel(orig)), Scalar(0));
        const Scalar* pg = g.data();
        for (std::int64_t r = 0; r < rows; ++r)
          std::copy(pg + r * len, pg + (r + 1) * len, gi.begin() + r * d + start);
        t.accumulate(an, Tensor<Scalar>(orig, std::move(gi)));
      });
  return res.with_node(tape, id);
}

// Stacks equally shaped tensors along a new leading axis.
template <typename Scalar>
Tensor<Scalar> stack_rows(const std::vector<Tensor<Scalar>>& xs) {
  if (xs.empty()) throw ShapeMismatch("stack_rows: empty input");
  const Shape& s0 = xs[0].shape();
  const std::int64_t n = xs[0].numel();
  std::vector<Scalar> out(static_cast<std::size_t>(n * static_cast<std::int64_t>(xs.size())));
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (xs[i].shape() != s0) throw ShapeMismatch("stack_rows: ragged shapes");
    std::copy(xs[i].data(), xs[i].data() + n, out.begin() + static_cast<std::int64_t>(i) * n);
  }
  Shape shape;
  shape.push_back(static_cast<std::int64_t>(xs.size()));
  shape.insert(shape.end(), s0.begin(), s0.end());
  Tensor<Scalar> res(std::move(shape), std::move(out));

  Tape<Scalar>* tape = nullptr;
  for (const auto& x : xs) {
    if (!x.tracked()) continue;
    if (tape && tape != x.tape()) throw std::logic_error("stack_rows: mixed tapes");
    tape = x.tape();
  }
  if (!tape) return res;
  std::vector<int> nodes(xs.size());
  std::vector<int> in;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    nodes[i] = xs[i].node();
    if (nodes[i] >= 0) in.push_back(nodes[i]);
  }
  const int id = tape->emit(
      "stack_rows", std::move(in), [nodes, s0, n](Tape<Scalar>& t, const Tensor<Scalar>& g) {
        const Scalar* pg = g.data();
        for (std::size_t i = 0; i < nodes.size(); ++i) {
          if (nodes[i] < 0) continue;
          std::vector<Scalar> gi(pg + static_cast<std::int64_t>(i) * n,
                                 pg + static_cast<std::int64_t>(i + 1) * n);
          t.accumulate(nodes[i], Tensor<Scalar>(s0, std::move(gi)));
        }
      });
  return res.with_node(tape, id);
}

// ---------------------------------------------------------------------------
// matmul
// ---------------------------------------------------------------------------

namespace detail {

template <typename Scalar>
using EigenRowMat =
    Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

}  // namespace detail

// Batched matrix product. Leading batch dims must match exactly; the two
// trailing dims contract as [m,k] x [k,n] -> [m,n].
template <typename Scalar>
Tensor<Scalar> matmul(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  if (a.rank() < 2 || b.rank() < 2)
    throw ShapeMismatch("matmul: operands must have rank >= 2");
  if (a.rank() != b.rank())
    throw ShapeMismatch("matmul: rank mismatch " + shape_str(a.shape()) + " vs " +
                        shape_str(b.shape()));
  const auto& as = a.shape();
  const auto& bs = b.shape();
  const std::size_t r = as.size();
  for (std::size_t i = 0; i + 2 < r; ++i) {
    if (as[i] != bs[i])
      throw ShapeMismatch("matmul: batch dims disagree " + shape_str(as) + " vs " +
                          shape_str(bs));
  }
  const std::int64_t m = as[r - 2], k = as[r - 1], k2 = bs[r - 2], n = bs[r - 1];
  if (k != k2)
    throw ShapeMismatch("matmul: contraction dims disagree " + shape_str(as) + " vs " +
                        shape_str(bs));

  std::int64_t batch = 1;
  for (std::size_t i = 0; i + 2 < r; ++i) batch *= as[i];

  std::vector<Scalar> out(static_cast<std::size_t>(batch * m * n));
  using Map = Eigen::Map<const detail::EigenRowMat<Scalar>>;
  using MapMut = Eigen::Map<detail::EigenRowMat<Scalar>>;
  for (std::int64_t bi = 0; bi < batch; ++bi) {
    Map A(a.data() + bi * m * k, m, k);
    Map B(b.data() + bi * k * n, k, n);
    MapMut C(out.data() + bi * m * n, m, n);
    C.noalias() = A * B;
  }
  OpCounters::macs += static_cast<std::uint64_t>(batch * m * n * k);

  Shape shape(as.begin(), as.end() - 2);
  shape.push_back(m);
  shape.push_back(n);
  Tensor<Scalar> res(std::move(shape), std::move(out));

  Tape<Scalar>* tape = detail::common_tape<Scalar>({&a, &b});
  if (!tape) return res;
  const int an = a.node(), bn = b.node();
  const Tensor<Scalar> av = a.detached(), bv = b.detached();
  std::vector<int> in;
  if (an >= 0) in.push_back(an);
  if (bn >= 0) in.push_back(bn);
  const int id = tape->emit(
      "matmul", std::move(in), [an, bn, av, bv](Tape<Scalar>& t, const Tensor<Scalar>& g) {
        const std::int64_t rr = av.rank();
        if (an >= 0) t.accumulate(an, matmul(g, transpose(bv, rr - 2, rr - 1)));
        if (bn >= 0) t.accumulate(bn, matmul(transpose(av, rr - 2, rr - 1), g));
      });
  return res.with_node(tape, id);
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

template <typename Scalar>
Tensor<Scalar> sum(const Tensor<Scalar>& a) {
  Scalar acc = 0;
  const Scalar* pa = a.data();
  for (std::int64_t i = 0; i < a.numel(); ++i) acc += pa[i];
  Tensor<Scalar> res = Tensor<Scalar>::scalar(acc);
  Tape<Scalar>* tape = detail::common_tape<Scalar>({&a});
  if (!tape) return res;
  const int an = a.node();
  const Shape shape = a.shape();
  const int id = tape->emit("sum", {an}, [an, shape](Tape<Scalar>& t, const Tensor<Scalar>& g) {
    t.accumulate(an, Tensor<Scalar>::full(shape, g.item()));
  });
  return res.with_node(tape, id);
}

// Mean over every axis except the last: [..., d] -> [d].
template <typename Scalar>
Tensor<Scalar> mean_leading(const Tensor<Scalar>& a) {
  if (a.rank() < 1) throw ShapeMismatch("mean_leading: rank 0 input");
  const std::int64_t d = a.dim(a.rank() - 1);
  const std::int64_t rows = a.numel() / d;
  std::vector<Scalar> out(static_cast<std::size_t>(d), Scalar(0));
  const Scalar* pa = a.data();
  for (std::int64_t r = 0; r < rows; ++r)
    for (std::int64_t j = 0; j < d; ++j) out[static_cast<std::size_t>(j)] += pa[r * d + j];
  const Scalar inv = Scalar(1) / static_cast<Scalar>(rows);
  for (auto& v : out) v *= inv;
  Tensor<Scalar> res({d}, std::move(out));
  Tape<Scalar>* tape = detail::common_tape<Scalar>({&a});
  if (!tape) return res;
  const int an = a.node();
  const Shape shape = a.shape();
  const int id = tape->emit(
      "mean_leading", {an}, [an, shape, rows, d](Tape<Scalar>& t, const Tensor<Scalar>& g) {
        std::vector<Scalar> gi(static_cast<std::size_t>(rows * d));
        const Scalar* pg = g.data();
        const Scalar inv2 = Scalar(1) / static_cast<Scalar>(rows);
        for (std::int64_t r = 0; r < rows; ++r)
          for (std::int64_t j = 0; j < d; ++j)
            gi[static_cast<std::size_t>(r * d + j)] = pg[j] * inv2;
        t.accumulate(an, Tensor<Scalar>(shape, std::move(gi)));
      });
  return res.with_node(tape, id);
}

// ---------------------------------------------------------------------------
// normalization and activations
// ---------------------------------------------------------------------------

// Per trailing vector: (x - mean) / sqrt(var + eps) * scale + shift, with
// biased variance. scale/shift have shape [d].
template <typename Scalar>
Tensor<Scalar> layer_norm(const Tensor<Scalar>& x, const Tensor<Scalar>& scale_t,
                          const Tensor<Scalar>& shift_t, Scalar eps) {
  if (eps <= Scalar(0)) throw std::invalid_argument("layer_norm: eps must be > 0");
  const std::int64_t d = x.dim(x.rank() - 1);
  if (scale_t.shape() != Shape{d} || shift_t.shape() != Shape{d})
    throw ShapeMismatch("layer_norm: affine params must have shape (" + std::to_string(d) + ")");
  const std::int64_t rows = x.numel() / d;

  std::vector<Scalar> out(static_cast<std::size_t>(x.numel()));
  std::vector<Scalar> xhat(static_cast<std::size_t>(x.numel()));
  std::vector<Scalar> rstd(static_cast<std::size_t>(rows));
  const Scalar* px = x.data();
  const Scalar* psc = scale_t.data();
  const Scalar* psh = shift_t.data();
  for (std::int64_t r = 0; r < rows; ++r) {
    const Scalar* row = px + r * d;
    Scalar mean = 0;
    for (std::int64_t j = 0; j < d; ++j) mean += row[j];
    mean /= static_cast<Scalar>(d);
    Scalar var = 0;
    for (std::int64_t j = 0; j < d; ++j) {
      const Scalar c = row[j] - mean;
      var += c * c;
    }
    var /= static_cast<Scalar>(d);
    const Scalar rs = Scalar(1) / std::sqrt(var + eps);
    rstd[static_cast<std::size_t>(r)] = rs;
    for (std::int64_t j = 0; j < d; ++j) {
      const Scalar xh = (row[j] - mean) * rs;
      xhat[static_cast<std::size_t>(r * d + j)] = xh;
      out[static_cast<std::size_t>(r * d + j)] = xh * psc[j] + psh[j];
    }
  }

  Tensor<Scalar> res(x.shape(), std::move(out));
  Tape<Scalar>* tape = detail::common_tape<Scalar>({&x, &scale_t, &shift_t});
  if (!tape) return res;
  const int xn = x.node(), scn = scale_t.node(), shn = shift_t.node();
  const Tensor<Scalar> xhat_t(x.shape(), std::move(xhat));
  const Tensor<Scalar> rstd_t({rows}, std::move(rstd));
  const Tensor<Scalar> scv = scale_t.detached();
  std::vector<int> in;
  for (int nid : {xn, scn, shn})
    if (nid >= 0) in.push_back(nid);
  const int id = tape->emit(
      "layer_norm", std::move(in),
      [xn, scn, shn, xhat_t, rstd_t, scv, rows, d](Tape<Scalar>& t, const Tensor<Scalar>& g) {
        const Scalar* pg = g.data();
        const Scalar* ph = xhat_t.data();
        if (scn >= 0) {
          std::vector<Scalar> ds(static_cast<std::size_t>(d), Scalar(0));
          for (std::int64_t r = 0; r < rows; ++r)
            for (std::int64_t j = 0; j < d; ++j)
              ds[static_cast<std::size_t>(j)] += pg[r * d + j] * ph[r * d + j];
          t.accumulate(scn, Tensor<Scalar>({d}, std::move(ds)));
        }
        if (shn >= 0) {
          std::vector<Scalar> dh(static_cast<std::size_t>(d), Scalar(0));
          for (std::int64_t r = 0; r < rows; ++r)
            for (std::int64_t j = 0; j < d; ++j) dh[static_cast<std::size_t>(j)] += pg[r * d + j];
          t.accumulate(shn, Tensor<Scalar>({d}, std::move(dh)));
        }
        if (xn >= 0) {
          const Scalar* psc2 = scv.data();
          const Scalar* prs = rstd_t.data();
          std::vector<Scalar> dx(static_cast<std::size_t>(rows * d));
          for (std::int64_t r = 0; r < rows; ++r) {
            Scalar mean_dxh = 0, mean_dxh_xh = 0;
            for (std::int64_t j = 0; j < d; ++j) {
              const Scalar dxh = pg[r * d + j] * psc2[j];
              mean_dxh += dxh;
              mean_dxh_xh += dxh * ph[r * d + j];
            }
            mean_dxh /= static_cast<Scalar>(d);
            mean_dxh_xh /= static_cast<Scalar>(d);
            for (std::int64_t j = 0; j < d; ++j) {
              const Scalar dxh = pg[r * d + j] * psc2[j];
              dx[static_cast<std::size_t>(r * d + j)] =
                  prs[r] * (dxh - mean_dxh - ph[r * d + j] * mean_dxh_xh);
            }
          }
          t.accumulate(xn, Tensor<Scalar>(xhat_t.shape(), std::move(dx)));
        }
      });
  return res.with_node(tape, id);
}

// Normalizes the dh channels inside each (position, head) group to zero
// mean / unit biased variance, then applies that head's scalar affine.
// x: [..., H, dh], scale/shift: [H].
template <typename Scalar>
Tensor<Scalar> group_norm_heads(const Tensor<Scalar>& x, const Tensor<Scalar>& scale_t,
                                const Tensor<Scalar>& shift_t, Scalar eps) {
  if (eps <= Scalar(0)) throw std::invalid_argument("group_norm_heads: eps must be > 0");
  if (x.rank() < 2) throw ShapeMismatch("group_norm_heads: input must have rank >= 2");
  const std::int64_t dh = x.dim(x.rank() - 1);
  const std::int64_t H = x.dim(x.rank() - 2);
  if (scale_t.shape() != Shape{H} || shift_t.shape() != Shape{H})
    throw ShapeMismatch("group_norm_heads: affine params must have shape (" + std::to_string(H) +
                        ")");
  const std::int64_t groups = x.numel() / dh;  // positions * H

  std::vector<Scalar> out(static_cast<std::size_t>(x.numel()));
  std::vector<Scalar> xhat(static_cast<std::size_t>(x.numel()));
  std::vector<Scalar> rstd(static_cast<std::size_t>(groups));
  const Scalar* px = x.data();
  const Scalar* psc = scale_t.data();
  const Scalar* psh = shift_t.data();
  for (std::int64_t gidx = 0; gidx < groups; ++gidx) {
    const std::int64_t h = gidx % H;
    const Scalar* row = px + gidx * dh;
    Scalar mean = 0;
    for (std::int64_t j = 0; j < dh; ++j) mean += row[j];
    mean /= static_cast<Scalar>(dh);
    Scalar var = 0;
    for (std::int64_t j = 0; j < dh; ++j) {
      const Scalar c = row[j] - mean;
      var += c * c;
    }
    var /= static_cast<Scalar>(dh);
    const Scalar rs = Scalar(1) / std::sqrt(var + eps);
    rstd[static_cast<std::size_t>(gidx)] = rs;
    for (std::int64_t j = 0; j < dh; ++j) {
      const Scalar xh = (row[j] - mean) * rs;
      xhat[static_cast<std::size_t>(gidx * dh + j)] = xh;
      out[static_cast<std::size_t>(gidx * dh + j)] = xh * psc[h] + psh[h];
    }
  }

  Tensor<Scalar> res(x.shape(), std::move(out));
  Tape<Scalar>* tape = detail::common_tape<Scalar>({&x, &scale_t, &shift_t});
  if (!tape) return res;
  const int xn = x.node(), scn = scale_t.node(), shn = shift_t.node();
  const Tensor<Scalar> xhat_t(x.shape(), std::move(xhat));
  const Tensor<Scalar> rstd_t({groups}, std::move(rstd));
  const Tensor<Scalar> scv = scale_t.detached();
  std::vector<int> in;
  for (int nid : {xn, scn, shn})
    if (nid >= 0) in.push_back(nid);
  const int id = tape->emit(
      "group_norm_heads", std::move(in),
      [xn, scn, shn, xhat_t, rstd_t, scv, groups, H, dh](Tape<Scalar>& t,
                                                         const Tensor<Scalar>& g) {
        const Scalar* pg = g.data();
        const Scalar* ph = xhat_t.data();
        if (scn >= 0) {
          std::vector<Scalar> ds(static_cast<std::size_t>(H), Scalar(0));
          for (std::int64_t gi = 0; gi < groups; ++gi)
            for (std::int64_t j = 0; j < dh; ++j)
              ds[static_cast<std::size_t>(gi % H)] += pg[gi * dh + j] * ph[gi * dh + j];
          t.accumulate(scn, Tensor<Scalar>({H}, std::move(ds)));
        }
        if (shn >= 0) {
          std::vector<Scalar> dsh(static_cast<std::size_t>(H), Scalar(0));
          for (std::int64_t gi = 0; gi < groups; ++gi)
            for (std::int64_t j = 0; j < dh; ++j)
              dsh[static_cast<std::size_t>(gi % H)] += pg[gi * dh + j];
          t.accumulate(shn, Tensor<Scalar>({H}, std::move(dsh)));
        }
        if (xn >= 0) {
          const Scalar* psc2 = scv.data();
          const Scalar* prs = rstd_t.data();
          std::vector<Scalar> dx(static_cast<std::size_t>(groups * dh));
          for (std::int64_t gi = 0; gi < groups; ++gi) {
            const Scalar sc = psc2[gi % H];
            Scalar mean_dxh = 0, mean_dxh_xh = 0;
            for (std::int64_t j = 0; j < dh; ++j) {
              const Scalar dxh = pg[gi * dh + j] * sc;
              mean_dxh += dxh;
              mean_dxh_xh += dxh * ph[gi * dh + j];
            }
            mean_dxh /= static_cast<Scalar>(dh);
            mean_dxh_xh /= static_cast<Scalar>(dh);
            for (std::int64_t j = 0; j < dh; ++j) {
              const Scalar dxh = pg[gi * dh + j] * sc;
              dx[static_cast<std::size_t>(gi * dh + j)] =
                  prs[gi] * (dxh - mean_dxh - ph[gi * dh + j] * mean_dxh_xh);
            }
          }
          t.accumulate(xn, Tensor<Scalar>(xhat_t.shape(), std::move(dx)));
        }
      });
  return res.with_node(tape, id);
}

// Exact gaussian-error linear unit: x * Phi(x).
template <typename Scalar>
Tensor<Scalar> gelu(const Tensor<Scalar>& x) {
  constexpr double inv_sqrt2 = 0.70710678118654752440;
  constexpr double inv_sqrt2pi = 0.39894228040143267794;
  std::vector<Scalar> out(static_cast<std::size_t>(x.numel()));
  const Scalar* px = x.data();
  for (std::int64_t i = 0; i < x.numel(); ++i) {
    const double v = static_cast<double>(px[i]);
    const double phi = 0.5 * (1.0 + std::erf(v * inv_sqrt2));
    out[static_cast<std::size_t>(i)] = static_cast<Scalar>(v * phi);
  }
  Tensor<Scalar> res(x.shape(), std::move(out));
  Tape<Scalar>* tape = detail::common_tape<Scalar>({&x});
  if (!tape) return res;
  const int xn = x.node();
  const Tensor<Scalar> xv = x.detached();
  const int id = tape->emit("gelu", {xn}, [xn, xv](Tape<Scalar>& t, const Tensor<Scalar>& g) {
    std::vector<Scalar> dx(static_cast<std::size_t>(xv.numel()));
    const Scalar* px2 = xv.data();
    const Scalar* pg = g.data();
    for (std::int64_t i = 0; i < xv.numel(); ++i) {
      const double v = static_cast<double>(px2[i]);
      const double phi = 0.5 * (1.0 + std::erf(v * inv_sqrt2));
      const double dens = inv_sqrt2pi * std::exp(-0.5 * v * v);
      dx[static_cast<std::size_t>(i)] = static_cast<Scalar>(pg[i] * (phi + v * dens));
    }
    t.accumulate(xn, Tensor<Scalar>(xv.shape(), std::move(dx)));
  });
  return res.with_node(tape, id);
}

// Max-subtracted softmax along the last axis.
template <typename Scalar>
Tensor<Scalar> softmax(const Tensor<Scalar>& x) {
  const std::int64_t d = x.dim(x.rank() - 1);
  const std::int64_t rows = x.numel() / d;
  std::vector<Scalar> out(static_cast<std::size_t>(x.numel()));
  const Scalar* px = x.data();
  for (std::int64_t r = 0; r < rows; ++r) {
    const Scalar* row = px + r * d;
    Scalar m = row[0];
    for (std::int64_t j = 1; j < d; ++j) m = std::max(m, row[j]);
    Scalar denom = 0;
    for (std::int64_t j = 0; j < d; ++j) {
      const Scalar e = std::exp(row[j] - m);
      out[static_cast<std::size_t>(r * d + j)] = e;
      denom += e;
    }
    const Scalar inv = Scalar(1) / denom;
    for (std::int64_t j = 0; j < d; ++j) out[static_cast<std::size_t>(r * d + j)] *= inv;
  }
  Tensor<Scalar> res(x.shape(), std::move(out));
  Tape<Scalar>* tape = detail::common_tape<Scalar>({&x});
  if (!tape) return res;
  const int xn = x.node();
  const Tensor<Scalar> yv = res.detached();
  const int id = tape->emit(
      "softmax", {xn}, [xn, yv, rows, d](Tape<Scalar>& t, const Tensor<Scalar>& g) {
        std::vector<Scalar> dx(static_cast<std::size_t>(yv.numel()));
        const Scalar* py = yv.data();
        const Scalar* pg = g.data();
        for (std::int64_t r = 0; r < rows; ++r) {
          Scalar dot = 0;
          for (std::int64_t j = 0; j < d; ++j) dot += pg[r * d + j] * py[r * d + j];
          for (std::int64_t j = 0; j < d; ++j)
            dx[static_cast<std::size_t>(r * d + j)] = py[r * d + j] * (pg[r * d + j] - dot);
        }
        t.accumulate(xn, Tensor<Scalar>(yv.shape(), std::move(dx)));
      });
  return res.with_node(tape, id);
}

// Mean over the batch of -log softmax(logits)[label].
template <typename Scalar>
Tensor<Scalar> cross_entropy(const Tensor<Scalar>& logits, const std::vector<int>& labels) {
  if (logits.rank() != 2)
    throw ShapeMismatch("cross_entropy: logits must be [batch, classes], got " +
                        shape_str(logits.shape()));
  const std::int64_t B = logits.dim(0), C = logits.dim(1);
  if (static_cast<std::int64_t>(labels.size()) != B)
    throw ShapeMismatch("cross_entropy: batch " + std::to_string(B) + " vs " +
                        std::to_string(labels.size()) + " labels");
  for (int lb : labels)
    if (lb < 0 || lb >= C)
      throw LabelOutOfRange("cross_entropy: label " + std::to_string(lb) + " not in [0," +
                            std::to_string(C) + ")");

  std::vector<Scalar> probs(static_cast<std::size_t>(B * C));
  const Scalar* pl = logits.data();
  Scalar loss = 0;
  for (std::int64_t i = 0; i < B; ++i) {
    const Scalar* row = pl + i * C;
    Scalar m = row[0];
    for (std::int64_t c = 1; c < C; ++c) m = std::max(m, row[c]);
    Scalar denom = 0;
    for (std::int64_t c = 0; c < C; ++c) {
      const Scalar e = std::exp(row[c] - m);
      probs[static_cast<std::size_t>(i * C + c)] = e;
      denom += e;
    }
    const Scalar inv = Scalar(1) / denom;
    for (std::int64_t c = 0; c < C; ++c) probs[static_cast<std::size_t>(i * C + c)] *= inv;
    loss += m + std::log(denom) - row[labels[static_cast<std::size_t>(i)]];
  }
  loss /= static_cast<Scalar>(B);

  Tensor<Scalar> res = Tensor<Scalar>::scalar(loss);
  Tape<Scalar>* tape = detail::common_tape<Scalar>({&logits});
  if (!tape) return res;
  const int ln = logits.node();
  const Tensor<Scalar> probs_t(logits.shape(), std::move(probs));
  const int id = tape->emit(
      "cross_entropy", {ln},
      [ln, probs_t, labels, B, C](Tape<Scalar>& t, const Tensor<Scalar>& g) {
        const Scalar gv = g.item() / static_cast<Scalar>(B);
        std::vector<Scalar> dl(probs_t.to_vector());
        for (std::int64_t i = 0; i < B; ++i)
          dl[static_cast<std::size_t>(i * C + labels[static_cast<std::size_t>(i)])] -= Scalar(1);
        for (auto& v : dl) v *= gv;
        t.accumulate(ln, Tensor<Scalar>(probs_t.shape(), std::move(dl)));
      });
  return res.with_node(tape, id);
}

// ---------------------------------------------------------------------------
// composite helpers
// ---------------------------------------------------------------------------

// Affine map along the last axis: [..., din] x [din, dout] + [dout].
template <typename Scalar>
Tensor<Scalar> linear(const Tensor<Scalar>& x, const Tensor<Scalar>& w, const Tensor<Scalar>& b) {
  const std::int64_t din = x.dim(x.rank() - 1);
  if (w.rank() != 2 || w.dim(0) != din)
    throw ShapeMismatch("linear: weight " + shape_str(w.shape()) + " does not accept input " +
                        shape_str(x.shape()));
  const std::int64_t dout = w.dim(1);
  const std::int64_t rows = x.numel() / din;
  Tensor<Scalar> flat = reshape(x, {rows, din});
  Tensor<Scalar> y = matmul(flat, w);
  if (b.defined()) {
    if (b.shape() != Shape{dout}) throw ShapeMismatch("linear: bias shape " + shape_str(b.shape()));
    y = add(y, b);
  }
  Shape out_shape = x.shape();
  out_shape.back() = dout;
  return reshape(y, out_shape);
}

}  // namespace cat

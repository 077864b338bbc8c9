#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstddef>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "dreamrace/errors.hpp"
#include "dreamrace/rng.hpp"

namespace dreamrace {

using Shape = std::vector<int>;

inline long numel(const Shape& s) {
  long n = 1;
  for (int d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

// learnable parameter; persists across tapes, gradient accumulates until
// explicitly cleared
template <typename T>
struct Param {
  std::string name;
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;

  Param() = default;
  Param(std::string n, Shape s)
      : name(std::move(n)), shape(std::move(s)) {
    value.assign(numel(shape), T(0));
    grad.assign(numel(shape), T(0));
  }

  long size() const { return long(value.size()); }
  void zero_grad() { std::fill(grad.begin(), grad.end(), T(0)); }
};

template <typename T>
class Tape;

// lightweight handle to a node in a tape
template <typename T>
struct Tensor {
  Tape<T>* tape = nullptr;
  int id = -1;

  bool valid() const { return tape != nullptr && id >= 0; }
  const Shape& shape() const;
  std::vector<T>& val();
  const std::vector<T>& val() const;
  std::vector<T>& grad();
  T scalar() const;
  int rows() const { return shape()[0]; }
  int cols() const { return int(numel(shape()) / shape()[0]); }
};

// reverse-mode computation graph; nodes are recorded in evaluation order,
// so walking them in reverse is a valid reverse-topological traversal
template <typename T>
class Tape {
 public:
  struct Node {
    Shape shape;
    std::vector<T> val;
    std::vector<T> grad;  // sized lazily during backward
    std::function<void(Tape&, int)> back;  // empty for leaves
    Param<T>* param = nullptr;
    bool needs_grad = false;
  };

  Tensor<T> constant(Shape shape, std::vector<T> val) {
    if (long(val.size()) != numel(shape))
      throw DimensionError("constant: " + std::to_string(val.size()) +
                           " values for shape " + shape_str(shape));
    return push(std::move(shape), std::move(val), nullptr, false);
  }

  Tensor<T> zeros(Shape shape) {
    std::vector<T> v(numel(shape), T(0));
    return push(std::move(shape), std::move(v), nullptr, false);
  }

  Tensor<T> full(Shape shape, T fill) {
    std::vector<T> v(numel(shape), fill);
    return push(std::move(shape), std::move(v), nullptr, false);
  }

  // mount a parameter as a leaf; one node per parameter per tape
  Tensor<T> param(Param<T>& p) {
    for (const auto& [ptr, id] : params_)
      if (ptr == &p) return {this, id};
    Tensor<T> t = push(p.shape, p.value, nullptr, true);
    node(t.id).param = &p;
    params_.push_back({&p, t.id});
    return t;
  }

  // accumulate d(loss)/d(param) into every mounted parameter's grad
  void backward(Tensor<T> loss) {
    if (numel(node(loss.id).shape) != 1)
      throw UsageError("backward: loss must be scalar, got " +
                       shape_str(node(loss.id).shape));
    ensure_grad(loss.id);
    node(loss.id).grad[0] += T(1);
    for (int id = loss.id; id >= 0; --id) {
      Node& n = node(id);
      if (n.grad.empty() || !n.back) continue;
      n.back(*this, id);
    }
    for (const auto& [ptr, id] : params_) {
      Node& n = node(id);
      if (n.grad.empty()) continue;
      for (long i = 0; i < long(n.grad.size()); ++i) ptr->grad[i] += n.grad[i];
      std::fill(n.grad.begin(), n.grad.end(), T(0));
    }
  }

  void reset() {
    nodes_.clear();
    params_.clear();
  }

  int size() const { return int(nodes_.size()); }
  Node& node(int id) { return nodes_[id]; }
  const Node& node(int id) const { return nodes_[id]; }

  void ensure_grad(int id) {
    Node& n = node(id);
    if (n.grad.empty()) n.grad.assign(n.val.size(), T(0));
  }

  Tensor<T> push(Shape shape, std::vector<T> val,
                 std::function<void(Tape&, int)> back, bool needs_grad) {
    Node n;
    n.shape = std::move(shape);
    n.val = std::move(val);
    n.back = std::move(back);
    n.needs_grad = needs_grad;
    nodes_.push_back(std::move(n));
    return {this, int(nodes_.size()) - 1};
  }

 private:
  std::vector<Node> nodes_;
  std::vector<std::pair<Param<T>*, int>> params_;
};

template <typename T>
const Shape& Tensor<T>::shape() const {
  return tape->node(id).shape;
}
template <typename T>
std::vector<T>& Tensor<T>::val() {
  return tape->node(id).val;
}
template <typename T>
const std::vector<T>& Tensor<T>::val() const {
  return tape->node(id).val;
}
template <typename T>
std::vector<T>& Tensor<T>::grad() {
  tape->ensure_grad(id);
  return tape->node(id).grad;
}
template <typename T>
T Tensor<T>::scalar() const {
  if (numel(shape()) != 1) throw UsageError("scalar() on non-scalar tensor");
  return val()[0];
}

// ---------------------------------------------------------------------------
// op helpers

namespace detail {

template <typename T>
using MatMap =
    Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <typename T>
using ConstMatMap = Eigen::Map<
    const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

template <typename T>
inline void check_same_tape(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.tape != b.tape) throw UsageError("operands from different tapes");
}

template <typename T>
inline void check_same_shape(const char* op, const Tensor<T>& a,
                             const Tensor<T>& b) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shape mismatch " +
                         shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

template <typename T>
inline bool wants_grad(const Tensor<T>& t) {
  return t.tape->node(t.id).needs_grad;
}

// softmax with a uniform mixture floor; rows of length c, g groups per row
template <typename T>
inline void softmax_unimix(const T* logits, T* probs, int c, T unimix) {
  T mx = logits[0];
  for (int i = 1; i < c; ++i) mx = std::max(mx, logits[i]);
  T sum = T(0);
  for (int i = 0; i < c; ++i) {
    probs[i] = std::exp(logits[i] - mx);
    sum += probs[i];
  }
  const T inv = T(1) / sum;
  for (int i = 0; i < c; ++i)
    probs[i] = (T(1) - unimix) * probs[i] * inv + unimix / T(c);
}

// plain softmax (unimix = 0 fast path shares the same code)
template <typename T>
inline void softmax_row(const T* logits, T* probs, int c) {
  softmax_unimix(logits, probs, c, T(0));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise ops

enum class Act { tanh, silu, exp, sigmoid, softplus, none };

template <typename T>
inline T act_forward(Act k, T x) {
  switch (k) {
    case Act::tanh: return std::tanh(x);
    case Act::silu: return x / (T(1) + std::exp(-x));
    case Act::exp: return std::exp(x);
    case Act::sigmoid: return T(1) / (T(1) + std::exp(-x));
    case Act::softplus:
      return x > T(0) ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
    default: return x;
  }
}

// derivative expressed from input x and output y
template <typename T>
inline T act_backward(Act k, T x, T y) {
  switch (k) {
    case Act::tanh: return T(1) - y * y;
    case Act::silu: {
      const T s = T(1) / (T(1) + std::exp(-x));
      return s * (T(1) + x * (T(1) - s));
    }
    case Act::exp: return y;
    case Act::sigmoid: return y * (T(1) - y);
    case Act::softplus: return T(1) / (T(1) + std::exp(-x));
    default: return T(1);
  }
}

template <typename T>
Tensor<T> activation(Tensor<T> x, Act kind) {
  Tape<T>& tp = *x.tape;
  const auto& xv = x.val();
  std::vector<T> out(xv.size());
  for (size_t i = 0; i < xv.size(); ++i) out[i] = act_forward(kind, xv[i]);
  const int xid = x.id;
  auto back = [xid, kind](Tape<T>& t, int self) {
    auto& g = t.node(self).grad;
    t.ensure_grad(xid);
    auto& xg = t.node(xid).grad;
    const auto& xv = t.node(xid).val;
    const auto& yv = t.node(self).val;
    for (size_t i = 0; i < g.size(); ++i)
      xg[i] += g[i] * act_backward(kind, xv[i], yv[i]);
  };
  return tp.push(x.shape(), std::move(out),
                 detail::wants_grad(x) ? std::function<void(Tape<T>&, int)>(back)
                                       : nullptr,
                 detail::wants_grad(x));
}

template <typename T> Tensor<T> tanh(Tensor<T> x) { return activation(x, Act::tanh); }
template <typename T> Tensor<T> silu(Tensor<T> x) { return activation(x, Act::silu); }
template <typename T> Tensor<T> exp(Tensor<T> x) { return activation(x, Act::exp); }
template <typename T> Tensor<T> sigmoid(Tensor<T> x) { return activation(x, Act::sigmoid); }
template <typename T> Tensor<T> softplus(Tensor<T> x) { return activation(x, Act::softplus); }

namespace detail {

// generic elementwise binary op; dfa/dfb give local derivatives from (a, b)
template <typename T, typename F, typename Da, typename Db>
Tensor<T> binary(const char* name, Tensor<T> a, Tensor<T> b, F f, Da dfa,
                 Db dfb) {
  check_same_tape(a, b);
  check_same_shape(name, a, b);
  Tape<T>& tp = *a.tape;
  const auto& av = a.val();
  const auto& bv = b.val();
  std::vector<T> out(av.size());
  for (size_t i = 0; i < av.size(); ++i) out[i] = f(av[i], bv[i]);
  const bool ga = wants_grad(a), gb = wants_grad(b);
  if (!ga && !gb) return tp.push(a.shape(), std::move(out), nullptr, false);
  const int aid = a.id, bid = b.id;
  auto back = [aid, bid, dfa, dfb, ga, gb](Tape<T>& t, int self) {
    const auto& g = t.node(self).grad;
    const auto& av = t.node(aid).val;
    const auto& bv = t.node(bid).val;
    if (ga) {
      t.ensure_grad(aid);
      auto& ag = t.node(aid).grad;
      for (size_t i = 0; i < g.size(); ++i) ag[i] += g[i] * dfa(av[i], bv[i]);
    }
    if (gb) {
      t.ensure_grad(bid);
      auto& bg = t.node(bid).grad;
      for (size_t i = 0; i < g.size(); ++i) bg[i] += g[i] * dfb(av[i], bv[i]);
    }
  };
  return tp.push(a.shape(), std::move(out), back, true);
}

}  // namespace detail

template <typename T>
Tensor<T> add(Tensor<T> a, Tensor<T> b) {
  return detail::binary(
      "add", a, b, [](T x, T y) { return x + y; },
      [](T, T) { return T(1); }, [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> sub(Tensor<T> a, Tensor<T> b) {
  return detail::binary(
      "sub", a, b, [](T x, T y) { return x - y; },
      [](T, T) { return T(1); }, [](T, T) { return T(-1); });
}

template <typename T>
Tensor<T> mul(Tensor<T> a, Tensor<T> b) {
  return detail::binary(
      "mul", a, b, [](T x, T y) { return x * y; },
      [](T, T y) { return y; }, [](T x, T) { return x; });
}

// elementwise minimum; ties go to the first operand
template <typename T>
Tensor<T> min2(Tensor<T> a, Tensor<T> b) {
  return detail::binary(
      "min2", a, b, [](T x, T y) { return x <= y ? x : y; },
      [](T x, T y) { return x <= y ? T(1) : T(0); },
      [](T x, T y) { return x <= y ? T(0) : T(1); });
}

template <typename T>
Tensor<T> operator+(Tensor<T> a, Tensor<T> b) { return add(a, b); }
template <typename T>
Tensor<T> operator-(Tensor<T> a, Tensor<T> b) { return sub(a, b); }
template <typename T>
Tensor<T> operator*(Tensor<T> a, Tensor<T> b) { return mul(a, b); }

namespace detail {

template <typename T, typename F, typename D>
Tensor<T> unary(Tensor<T> x, F f, D df) {
  Tape<T>& tp = *x.tape;
  const auto& xv = x.val();
  std::vector<T> out(xv.size());
  for (size_t i = 0; i < xv.size(); ++i) out[i] = f(xv[i]);
  if (!wants_grad(x)) return tp.push(x.shape(), std::move(out), nullptr, false);
  const int xid = x.id;
  auto back = [xid, df](Tape<T>& t, int self) {
    const auto& g = t.node(self).grad;
    t.ensure_grad(xid);
    auto& xg = t.node(xid).grad;
    const auto& xv = t.node(xid).val;
    for (size_t i = 0; i < g.size(); ++i) xg[i] += g[i] * df(xv[i]);
  };
  return tp.push(x.shape(), std::move(out), back, true);
}

}  // namespace detail

template <typename T>
Tensor<T> scale(Tensor<T> x, T c) {
  return detail::unary(
      x, [c](T v) { return c * v; }, [c](T) { return c; });
}

template <typename T>
Tensor<T> add_scalar(Tensor<T> x, T c) {
  return detail::unary(
      x, [c](T v) { return v + c; }, [](T) { return T(1); });
}

template <typename T>
Tensor<T> neg(Tensor<T> x) { return scale(x, T(-1)); }

template <typename T>
Tensor<T> square(Tensor<T> x) {
  return detail::unary(
      x, [](T v) { return v * v; }, [](T v) { return T(2) * v; });
}

// elementwise max against a constant (free-bits style clipping);
// the gradient is zero at and below the floor
template <typename T>
Tensor<T> max_const(Tensor<T> x, T c) {
  return detail::unary(
      x, [c](T v) { return v > c ? v : c; },
      [c](T v) { return v > c ? T(1) : T(0); });
}

template <typename T>
Tensor<T> clamp_const(Tensor<T> x, T lo, T hi) {
  return detail::unary(
      x, [lo, hi](T v) { return v < lo ? lo : (v > hi ? hi : v); },
      [lo, hi](T v) { return (v > lo && v < hi) ? T(1) : T(0); });
}

// identity forward, blocks the gradient
template <typename T>
Tensor<T> stop_grad(Tensor<T> x) {
  return x.tape->push(x.shape(), x.val(), nullptr, false);
}

// ---------------------------------------------------------------------------
// affine

// y = x W + b with x:[B x I], W:[I x O], b:[O]
template <typename T>
Tensor<T> affine(Tensor<T> x, Tensor<T> W, Tensor<T> b) {
  detail::check_same_tape(x, W);
  detail::check_same_tape(x, b);
  if (x.shape().size() != 2 || W.shape().size() != 2 ||
      x.shape()[1] != W.shape()[0] || W.shape()[1] != int(numel(b.shape())))
    throw DimensionError("affine: x" + shape_str(x.shape()) + " W" +
                         shape_str(W.shape()) + " b" + shape_str(b.shape()));
  Tape<T>& tp = *x.tape;
  const int B = x.shape()[0], I = x.shape()[1], O = W.shape()[1];
  std::vector<T> out(size_t(B) * O);
  {
    detail::ConstMatMap<T> X(x.val().data(), B, I);
    detail::ConstMatMap<T> Wm(W.val().data(), I, O);
    detail::MatMap<T> Y(out.data(), B, O);
    Y.noalias() = X * Wm;
    Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> bm(b.val().data(), O);
    Y.rowwise() += bm;
  }
  const bool gx = detail::wants_grad(x), gw = detail::wants_grad(W),
             gb = detail::wants_grad(b);
  if (!gx && !gw && !gb)
    return tp.push({B, O}, std::move(out), nullptr, false);
  const int xid = x.id, wid = W.id, bid = b.id;
  auto back = [xid, wid, bid, B, I, O, gx, gw, gb](Tape<T>& t, int self) {
    detail::ConstMatMap<T> G(t.node(self).grad.data(), B, O);
    if (gx) {
      t.ensure_grad(xid);
      detail::MatMap<T> Xg(t.node(xid).grad.data(), B, I);
      detail::ConstMatMap<T> Wm(t.node(wid).val.data(), I, O);
      Xg.noalias() += G * Wm.transpose();
    }
    if (gw) {
      t.ensure_grad(wid);
      detail::MatMap<T> Wg(t.node(wid).grad.data(), I, O);
      detail::ConstMatMap<T> X(t.node(xid).val.data(), B, I);
      Wg.noalias() += X.transpose() * G;
    }
    if (gb) {
      t.ensure_grad(bid);
      Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>> bg(
          t.node(bid).grad.data(), O);
      bg += G.colwise().sum();
    }
  };
  return tp.push({B, O}, std::move(out), back, true);
}

// ---------------------------------------------------------------------------
// structural ops

template <typename T>
Tensor<T> concat_cols(const std::vector<Tensor<T>>& xs) {
  if (xs.empty()) throw UsageError("concat_cols: empty input");
  Tape<T>& tp = *xs[0].tape;
  const int B = xs[0].shape()[0];
  int total = 0;
  bool any_grad = false;
  for (const auto& x : xs) {
    if (x.shape()[0] != B)
      throw DimensionError("concat_cols: row mismatch " +
                           shape_str(xs[0].shape()) + " vs " +
                           shape_str(x.shape()));
    total += x.cols();
    any_grad = any_grad || detail::wants_grad(x);
  }
  std::vector<T> out(size_t(B) * total);
  int off = 0;
  for (const auto& x : xs) {
    const int C = x.cols();
    const auto& v = x.val();
    for (int r = 0; r < B; ++r)
      std::copy(v.data() + size_t(r) * C, v.data() + size_t(r) * C + C,
                out.data() + size_t(r) * total + off);
    off += C;
  }
  if (!any_grad) return tp.push({B, total}, std::move(out), nullptr, false);
  std::vector<int> ids, colns;
  std::vector<char> grads;
  for (const auto& x : xs) {
    ids.push_back(x.id);
    colns.push_back(x.cols());
    grads.push_back(detail::wants_grad(x) ? 1 : 0);
  }
  auto back = [ids, colns, grads, B, total](Tape<T>& t, int self) {
    const auto& g = t.node(self).grad;
    int off = 0;
    for (size_t k = 0; k < ids.size(); ++k) {
      const int C = colns[k];
      if (grads[k]) {
        t.ensure_grad(ids[k]);
        auto& xg = t.node(ids[k]).grad;
        for (int r = 0; r < B; ++r)
          for (int c = 0; c < C; ++c)
            xg[size_t(r) * C + c] += g[size_t(r) * total + off + c];
      }
      off += C;
    }
  };
  return tp.push({B, total}, std::move(out), back, true);
}

template <typename T>
Tensor<T> slice_cols(Tensor<T> x, int start, int len) {
  Tape<T>& tp = *x.tape;
  const int B = x.shape()[0], C = x.cols();
  if (start < 0 || start + len > C)
    throw DimensionError("slice_cols: [" + std::to_string(start) + "," +
                         std::to_string(start + len) + ") of " +
                         shape_str(x.shape()));
  std::vector<T> out(size_t(B) * len);
  const auto& v = x.val();
  for (int r = 0; r < B; ++r)
    std::copy(v.data() + size_t(r) * C + start,
              v.data() + size_t(r) * C + start + len,
              out.data() + size_t(r) * len);
  if (!detail::wants_grad(x))
    return tp.push({B, len}, std::move(out), nullptr, false);
  const int xid = x.id;
  auto back = [xid, start, len, B, C](Tape<T>& t, int self) {
    const auto& g = t.node(self).grad;
    t.ensure_grad(xid);
    auto& xg = t.node(xid).grad;
    for (int r = 0; r < B; ++r)
      for (int c = 0; c < len; ++c)
        xg[size_t(r) * C + start + c] += g[size_t(r) * len + c];
  };
  return tp.push({B, len}, std::move(out), back, true);
}

template <typename T>
Tensor<T> concat_rows(const std::vector<Tensor<T>>& xs) {
  if (xs.empty()) throw UsageError("concat_rows: empty input");
  Tape<T>& tp = *xs[0].tape;
  const int C = xs[0].cols();
  int total = 0;
  bool any_grad = false;
  for (const auto& x : xs) {
    if (x.cols() != C)
      throw DimensionError("concat_rows: col mismatch " +
                           shape_str(xs[0].shape()) + " vs " +
                           shape_str(x.shape()));
    total += x.shape()[0];
    any_grad = any_grad || detail::wants_grad(x);
  }
  std::vector<T> out;
  out.reserve(size_t(total) * C);
  for (const auto& x : xs) out.insert(out.end(), x.val().begin(), x.val().end());
  if (!any_grad) return tp.push({total, C}, std::move(out), nullptr, false);
  std::vector<int> ids, rows;
  std::vector<char> grads;
  for (const auto& x : xs) {
    ids.push_back(x.id);
    rows.push_back(x.shape()[0]);
    grads.push_back(detail::wants_grad(x) ? 1 : 0);
  }
  auto back = [ids, rows, grads, C](Tape<T>& t, int self) {
    const auto& g = t.node(self).grad;
    size_t off = 0;
    for (size_t k = 0; k < ids.size(); ++k) {
      const size_t n = size_t(rows[k]) * C;
      if (grads[k]) {
        t.ensure_grad(ids[k]);
        auto& xg = t.node(ids[k]).grad;
        for (size_t i = 0; i < n; ++i) xg[i] += g[off + i];
      }
      off += n;
    }
  };
  return tp.push({total, C}, std::move(out), back, true);
}

template <typename T>
Tensor<T> slice_rows(Tensor<T> x, int start, int count) {
  Tape<T>& tp = *x.tape;
  const int R = x.shape()[0], C = x.cols();
  if (start < 0 || start + count > R)
    throw DimensionError("slice_rows: [" + std::to_string(start) + "," +
                         std::to_string(start + count) + ") of " +
                         shape_str(x.shape()));
  std::vector<T> out(x.val().begin() + size_t(start) * C,
                     x.val().begin() + size_t(start + count) * C);
  if (!detail::wants_grad(x))
    return tp.push({count, C}, std::move(out), nullptr, false);
  const int xid = x.id;
  auto back = [xid, start, count, C](Tape<T>& t, int self) {
    const auto& g = t.node(self).grad;
    t.ensure_grad(xid);
    auto& xg = t.node(xid).grad;
    for (size_t i = 0; i < size_t(count) * C; ++i)
      xg[size_t(start) * C + i] += g[i];
  };
  return tp.push({count, C}, std::move(out), back, true);
}

// scale each row of x by the constant weight of that row
template <typename T>
Tensor<T> mask_rows(Tensor<T> x, std::vector<T> keep) {
  Tape<T>& tp = *x.tape;
  const int B = x.shape()[0], C = x.cols();
  if (int(keep.size()) != B)
    throw DimensionError("mask_rows: " + std::to_string(keep.size()) +
                         " weights for " + shape_str(x.shape()));
  std::vector<T> out(x.val());
  for (int r = 0; r < B; ++r)
    for (int c = 0; c < C; ++c) out[size_t(r) * C + c] *= keep[r];
  if (!detail::wants_grad(x))
    return tp.push(x.shape(), std::move(out), nullptr, false);
  const int xid = x.id;
  auto back = [xid, keep, B, C](Tape<T>& t, int self) {
    const auto& g = t.node(self).grad;
    t.ensure_grad(xid);
    auto& xg = t.node(xid).grad;
    for (int r = 0; r < B; ++r)
      for (int c = 0; c < C; ++c)
        xg[size_t(r) * C + c] += g[size_t(r) * C + c] * keep[r];
  };
  return tp.push(x.shape(), std::move(out), back, true);
}

// rows[b, :] = weight[b] * v[:], broadcasting a vector into weighted rows
template <typename T>
Tensor<T> outer_rows(Tensor<T> v, std::vector<T> weight) {
  Tape<T>& tp = *v.tape;
  const int D = int(numel(v.shape()));
  const int B = int(weight.size());
  std::vector<T> out(size_t(B) * D);
  for (int r = 0; r < B; ++r)
    for (int c = 0; c < D; ++c) out[size_t(r) * D + c] = weight[r] * v.val()[c];
  if (!detail::wants_grad(v))
    return tp.push({B, D}, std::move(out), nullptr, false);
  const int vid = v.id;
  auto back = [vid, weight, B, D](Tape<T>& t, int self) {
    const auto& g = t.node(self).grad;
    t.ensure_grad(vid);
    auto& vg = t.node(vid).grad;
    for (int r = 0; r < B; ++r)
      for (int c = 0; c < D; ++c) vg[c] += weight[r] * g[size_t(r) * D + c];
  };
  return tp.push({B, D}, std::move(out), back, true);
}

// ---------------------------------------------------------------------------
// reductions

template <typename T>
Tensor<T> sum_all(Tensor<T> x) {
  Tape<T>& tp = *x.tape;
  T acc = T(0);
  for (T v : x.val()) acc += v;
  if (!detail::wants_grad(x)) return tp.push({1}, {acc}, nullptr, false);
  const int xid = x.id;
  auto back = [xid](Tape<T>& t, int self) {
    const T g = t.node(self).grad[0];
    t.ensure_grad(xid);
    for (auto& v : t.node(xid).grad) v += g;
  };
  return tp.push({1}, {acc}, back, true);
}

template <typename T>
Tensor<T> mean_all(Tensor<T> x) {
  const T n = T(numel(x.shape()));
  return scale(sum_all(x), T(1) / n);
}

// per-row sum: [B x D] -> [B]
template <typename T>
Tensor<T> row_sum(Tensor<T> x) {
  Tape<T>& tp = *x.tape;
  const int B = x.shape()[0], C = x.cols();
  std::vector<T> out(B, T(0));
  for (int r = 0; r < B; ++r)
    for (int c = 0; c < C; ++c) out[r] += x.val()[size_t(r) * C + c];
  if (!detail::wants_grad(x)) return tp.push({B}, std::move(out), nullptr, false);
  const int xid = x.id;
  auto back = [xid, B, C](Tape<T>& t, int self) {
    const auto& g = t.node(self).grad;
    t.ensure_grad(xid);
    auto& xg = t.node(xid).grad;
    for (int r = 0; r < B; ++r)
      for (int c = 0; c < C; ++c) xg[size_t(r) * C + c] += g[r];
  };
  return tp.push({B}, std::move(out), back, true);
}

// weighted mean: sum(w_i x_i) / sum(w_i); weights are constants
template <typename T>
Tensor<T> weighted_mean(Tensor<T> x, const std::vector<T>& w) {
  T wsum = T(0);
  for (T v : w) wsum += v;
  if (wsum <= T(0)) throw UsageError("weighted_mean: weights sum to zero");
  Tensor<T> ww = x.tape->constant(x.shape(), std::vector<T>(w));
  return scale(sum_all(mul(x, ww)), T(1) / wsum);
}

// ---------------------------------------------------------------------------
// categorical ops over grouped logits; tensors are [B x (G*C)] with G groups
// of C classes per row

template <typename T>
inline void check_groups(const Tensor<T>& t, int groups, int classes) {
  if (t.cols() != groups * classes)
    throw DimensionError("grouped op: " + shape_str(t.shape()) + " vs " +
                         std::to_string(groups) + " groups x " +
                         std::to_string(classes) + " classes");
}

template <typename T>
Tensor<T> log_softmax_groups(Tensor<T> x, int groups, int classes) {
  check_groups(x, groups, classes);
  Tape<T>& tp = *x.tape;
  const int B = x.shape()[0];
  const int C = classes;
  std::vector<T> out(x.val().size());
  const auto& v = x.val();
  for (int r = 0; r < B * groups; ++r) {
    const T* in = v.data() + size_t(r) * C;
    T* o = out.data() + size_t(r) * C;
    T mx = in[0];
    for (int i = 1; i < C; ++i) mx = std::max(mx, in[i]);
    T sum = T(0);
    for (int i = 0; i < C; ++i) sum += std::exp(in[i] - mx);
    const T lse = mx + std::log(sum);
    for (int i = 0; i < C; ++i) o[i] = in[i] - lse;
  }
  if (!detail::wants_grad(x))
    return tp.push(x.shape(), std::move(out), nullptr, false);
  const int xid = x.id;
  auto back = [xid, B, groups, C](Tape<T>& t, int self) {
    const auto& g = t.node(self).grad;
    const auto& yv = t.node(self).val;
    t.ensure_grad(xid);
    auto& xg = t.node(xid).grad;
    for (int r = 0; r < B * groups; ++r) {
      const T* gr = g.data() + size_t(r) * C;
      const T* yr = yv.data() + size_t(r) * C;
      T* xr = xg.data() + size_t(r) * C;
      T gsum = T(0);
      for (int i = 0; i < C; ++i) gsum += gr[i];
      for (int i = 0; i < C; ++i) xr[i] += gr[i] - std::exp(yr[i]) * gsum;
    }
  };
  return tp.push(x.shape(), std::move(out), back, true);
}

enum class SampleMode { sample, mode, smooth };

// one-hot sample per group with a straight-through gradient: the backward
// pass treats the output as the (unimixed) softmax probabilities.
// smooth mode returns the probabilities themselves, which is the objective
// the estimator is unbiased for; gradient checks use it.
template <typename T>
Tensor<T> categorical_sample_st(Tensor<T> logits, int groups, int classes,
                                T unimix, Rng& rng,
                                SampleMode mode = SampleMode::sample) {
  check_groups(logits, groups, classes);
  Tape<T>& tp = *logits.tape;
  const int B = logits.shape()[0];
  const int C = classes;
  const auto& lv = logits.val();
  for (T v : lv)
    if (!std::isfinite(v))
      throw NumericError("categorical_sample_st: non-finite logits");
  std::vector<T> out(lv.size(), T(0));
  std::vector<T> probs(C);
  for (int r = 0; r < B * groups; ++r) {
    const T* in = lv.data() + size_t(r) * C;
    T* o = out.data() + size_t(r) * C;
    detail::softmax_unimix(in, probs.data(), C, unimix);
    if (mode == SampleMode::smooth) {
      for (int i = 0; i < C; ++i) o[i] = probs[i];
    } else if (mode == SampleMode::mode) {
      int best = 0;
      for (int i = 1; i < C; ++i)
        if (probs[i] > probs[best]) best = i;
      o[best] = T(1);
    } else {
      o[rng.categorical(probs.data(), C)] = T(1);
    }
  }
  if (!detail::wants_grad(logits))
    return tp.push(logits.shape(), std::move(out), nullptr, false);
  const int lid = logits.id;
  auto back = [lid, B, groups, C, unimix](Tape<T>& t, int self) {
    const auto& g = t.node(self).grad;
    const auto& lv = t.node(lid).val;
    t.ensure_grad(lid);
    auto& lg = t.node(lid).grad;
    std::vector<T> s(C);
    const T alpha = T(1) - unimix;
    for (int r = 0; r < B * groups; ++r) {
      const T* in = lv.data() + size_t(r) * C;
      const T* gr = g.data() + size_t(r) * C;
      T* lr = lg.data() + size_t(r) * C;
      detail::softmax_row(in, s.data(), C);
      T dot = T(0);
      for (int i = 0; i < C; ++i) dot += gr[i] * s[i];
      for (int i = 0; i < C; ++i) lr[i] += alpha * s[i] * (gr[i] - dot);
    }
  };
  return tp.push(logits.shape(), std::move(out), back, true);
}

// KL(p || q) per row, summed over groups, both distributions given as logits
template <typename T>
Tensor<T> categorical_kl(Tensor<T> p_logits, Tensor<T> q_logits, int groups,
                         int classes, T unimix = T(0)) {
  detail::check_same_tape(p_logits, q_logits);
  detail::check_same_shape("categorical_kl", p_logits, q_logits);
  check_groups(p_logits, groups, classes);
  Tape<T>& tp = *p_logits.tape;
  const int B = p_logits.shape()[0];
  const int C = classes;
  std::vector<T> out(B, T(0));
  std::vector<T> p(C), q(C);
  for (int r = 0; r < B * groups; ++r) {
    detail::softmax_unimix(p_logits.val().data() + size_t(r) * C, p.data(), C,
                           unimix);
    detail::softmax_unimix(q_logits.val().data() + size_t(r) * C, q.data(), C,
                           unimix);
    T kl = T(0);
    for (int i = 0; i < C; ++i) kl += p[i] * (std::log(p[i]) - std::log(q[i]));
    out[r / groups] += kl;
  }
  const bool gp = detail::wants_grad(p_logits),
             gq = detail::wants_grad(q_logits);
  if (!gp && !gq) return tp.push({B}, std::move(out), nullptr, false);
  const int pid = p_logits.id, qid = q_logits.id;
  auto back = [pid, qid, B, groups, C, unimix, gp, gq](Tape<T>& t, int self) {
    const auto& g = t.node(self).grad;
    const auto& pv = t.node(pid).val;
    const auto& qv = t.node(qid).val;
    if (gp) t.ensure_grad(pid);
    if (gq) t.ensure_grad(qid);
    std::vector<T> p(C), q(C), sp(C), sq(C);
    const T alpha = T(1) - unimix;
    for (int r = 0; r < B * groups; ++r) {
      const T gy = g[r / groups];
      if (gy == T(0)) continue;
      const T* pl = pv.data() + size_t(r) * C;
      const T* ql = qv.data() + size_t(r) * C;
      detail::softmax_unimix(pl, p.data(), C, unimix);
      detail::softmax_unimix(ql, q.data(), C, unimix);
      detail::softmax_row(pl, sp.data(), C);
      detail::softmax_row(ql, sq.data(), C);
      if (gp) {
        // d/dpl_j = alpha * sp_j * ((log(p/q)+1)_j - sum_c sp_c (log(p/q)+1)_c)
        T dot = T(0);
        std::vector<T> term(C);
        for (int i = 0; i < C; ++i) {
          term[i] = std::log(p[i]) - std::log(q[i]) + T(1);
          dot += sp[i] * term[i];
        }
        T* pg = t.node(pid).grad.data() + size_t(r) * C;
        for (int i = 0; i < C; ++i)
          pg[i] += gy * alpha * sp[i] * (term[i] - dot);
      }
      if (gq) {
        // d/dql_j = -alpha * sq_j * ((p/q)_j - sum_c sq_c (p/q)_c)
        T dot = T(0);
        std::vector<T> term(C);
        for (int i = 0; i < C; ++i) {
          term[i] = p[i] / q[i];
          dot += sq[i] * term[i];
        }
        T* qg = t.node(qid).grad.data() + size_t(r) * C;
        for (int i = 0; i < C; ++i)
          qg[i] += -gy * alpha * sq[i] * (term[i] - dot);
      }
    }
  };
  return tp.push({B}, std::move(out), back, gp || gq);
}

// entropy per row, summed over groups
template <typename T>
Tensor<T> categorical_entropy(Tensor<T> logits, int groups, int classes,
                              T unimix = T(0)) {
  check_groups(logits, groups, classes);
  Tape<T>& tp = *logits.tape;
  const int B = logits.shape()[0];
  const int C = classes;
  std::vector<T> out(B, T(0));
  std::vector<T> p(C);
  for (int r = 0; r < B * groups; ++r) {
    detail::softmax_unimix(logits.val().data() + size_t(r) * C, p.data(), C,
                           unimix);
    T h = T(0);
    for (int i = 0; i < C; ++i) h -= p[i] * std::log(p[i]);
    out[r / groups] += h;
  }
  if (!detail::wants_grad(logits))
    return tp.push({B}, std::move(out), nullptr, false);
  const int lid = logits.id;
  auto back = [lid, B, groups, C, unimix](Tape<T>& t, int self) {
    const auto& g = t.node(self).grad;
    const auto& lv = t.node(lid).val;
    t.ensure_grad(lid);
    auto& lg = t.node(lid).grad;
    std::vector<T> p(C), s(C);
    const T alpha = T(1) - unimix;
    for (int r = 0; r < B * groups; ++r) {
      const T gy = g[r / groups];
      if (gy == T(0)) continue;
      const T* in = lv.data() + size_t(r) * C;
      detail::softmax_unimix(in, p.data(), C, unimix);
      detail::softmax_row(in, s.data(), C);
      T dot = T(0);
      std::vector<T> term(C);
      for (int i = 0; i < C; ++i) {
        term[i] = -(std::log(p[i]) + T(1));
        dot += s[i] * term[i];
      }
      T* lr = lg.data() + size_t(r) * C;
      for (int i = 0; i < C; ++i) lr[i] += gy * alpha * s[i] * (term[i] - dot);
    }
  };
  return tp.push({B}, std::move(out), back, true);
}

// ---------------------------------------------------------------------------
// likelihood heads

// unit-variance Gaussian negative log-likelihood per row, including the
// normalization constant: 0.5 * sum (m - t)^2 + 0.5 * D * log(2 pi)
template <typename T>
Tensor<T> gaussian_nll(Tensor<T> mean, Tensor<T> target) {
  detail::check_same_tape(mean, target);
  detail::check_same_shape("gaussian_nll", mean, target);
  Tape<T>& tp = *mean.tape;
  const int B = mean.shape()[0], C = mean.cols();
  const T c0 = T(0.5) * T(C) * T(1.8378770664093453);  // log(2 pi)
  std::vector<T> out(B, c0);
  for (int r = 0; r < B; ++r)
    for (int c = 0; c < C; ++c) {
      const T d = mean.val()[size_t(r) * C + c] - target.val()[size_t(r) * C + c];
      out[r] += T(0.5) * d * d;
    }
  if (!detail::wants_grad(mean))
    return tp.push({B}, std::move(out), nullptr, false);
  const int mid = mean.id, tid = target.id;
  auto back = [mid, tid, B, C](Tape<T>& t, int self) {
    const auto& g = t.node(self).grad;
    t.ensure_grad(mid);
    auto& mg = t.node(mid).grad;
    const auto& mv = t.node(mid).val;
    const auto& tv = t.node(tid).val;
    for (int r = 0; r < B; ++r)
      for (int c = 0; c < C; ++c)
        mg[size_t(r) * C + c] +=
            g[r] * (mv[size_t(r) * C + c] - tv[size_t(r) * C + c]);
  };
  return tp.push({B}, std::move(out), back, true);
}

// Bernoulli negative log-likelihood from logits, targets in {0,1}
template <typename T>
Tensor<T> bernoulli_nll(Tensor<T> logits, Tensor<T> target) {
  detail::check_same_tape(logits, target);
  detail::check_same_shape("bernoulli_nll", logits, target);
  Tape<T>& tp = *logits.tape;
  const long n = numel(logits.shape());
  std::vector<T> out(n);
  for (long i = 0; i < n; ++i) {
    const T l = logits.val()[i], y = target.val()[i];
    out[i] = y * act_forward(Act::softplus, -l) +
             (T(1) - y) * act_forward(Act::softplus, l);
  }
  if (!detail::wants_grad(logits))
    return tp.push(logits.shape(), std::move(out), nullptr, false);
  const int lid = logits.id, tid = target.id;
  auto back = [lid, tid, n](Tape<T>& t, int self) {
    const auto& g = t.node(self).grad;
    t.ensure_grad(lid);
    auto& lg = t.node(lid).grad;
    const auto& lv = t.node(lid).val;
    const auto& tv = t.node(tid).val;
    for (long i = 0; i < n; ++i)
      lg[i] += g[i] * (act_forward(Act::sigmoid, lv[i]) - tv[i]);
  };
  return tp.push(logits.shape(), std::move(out), back, true);
}

// cross-entropy of a constant target distribution under softmax(logits),
// per row: -sum_k t_k log softmax(l)_k
template <typename T>
Tensor<T> softmax_ce(Tensor<T> logits, Tensor<T> target_probs) {
  detail::check_same_tape(logits, target_probs);
  detail::check_same_shape("softmax_ce", logits, target_probs);
  Tape<T>& tp = *logits.tape;
  const int B = logits.shape()[0], C = logits.cols();
  std::vector<T> out(B, T(0));
  for (int r = 0; r < B; ++r) {
    const T* in = logits.val().data() + size_t(r) * C;
    const T* tr = target_probs.val().data() + size_t(r) * C;
    T mx = in[0];
    for (int i = 1; i < C; ++i) mx = std::max(mx, in[i]);
    T sum = T(0);
    for (int i = 0; i < C; ++i) sum += std::exp(in[i] - mx);
    const T lse = mx + std::log(sum);
    for (int i = 0; i < C; ++i) out[r] -= tr[i] * (in[i] - lse);
  }
  if (!detail::wants_grad(logits))
    return tp.push({B}, std::move(out), nullptr, false);
  const int lid = logits.id, tid = target_probs.id;
  auto back = [lid, tid, B, C](Tape<T>& t, int self) {
    const auto& g = t.node(self).grad;
    t.ensure_grad(lid);
    auto& lg = t.node(lid).grad;
    const auto& lv = t.node(lid).val;
    const auto& tv = t.node(tid).val;
    std::vector<T> s(C);
    for (int r = 0; r < B; ++r) {
      if (g[r] == T(0)) continue;
      detail::softmax_row(lv.data() + size_t(r) * C, s.data(), C);
      T tsum = T(0);
      for (int i = 0; i < C; ++i) tsum += tv[size_t(r) * C + i];
      T* lr = lg.data() + size_t(r) * C;
      for (int i = 0; i < C; ++i)
        lr[i] += g[r] * (tsum * s[i] - tv[size_t(r) * C + i]);
    }
  };
  return tp.push({B}, std::move(out), back, true);
}

}  // namespace dreamrace

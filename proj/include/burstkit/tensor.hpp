#pragma once

// Reverse-mode autodiff over dense row-major tensors. Tensor<S> is a cheap
// value-semantic handle onto a graph node; operations build the graph as they
// run and backward() walks it once in reverse-recording order. S is float for
// training and double for finite-difference gradient checks.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "burstkit/common.hpp"

namespace burstkit {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? " x " : "") << s[i];
  os << "]";
  return os.str();
}

class ShapeError : public ValidationError {
 public:
  explicit ShapeError(const std::string& msg) : ValidationError(msg) {}
};

namespace detail {

template <typename S>
struct Node {
  Shape shape;
  std::vector<S> value;
  std::vector<S> grad;  // empty until first needed
  bool requires_grad = false;
  bool leaf = true;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  std::size_t size() const { return value.size(); }
  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), S(0));
  }
};

}  // namespace detail

template <typename S>
class Tensor {
 public:
  using NodeT = detail::Node<S>;

  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return filled(std::move(shape), S(0), requires_grad);
  }

  static Tensor filled(Shape shape, S v, bool requires_grad = false) {
    Tensor t;
    t.node_ = std::make_shared<NodeT>();
    t.node_->shape = std::move(shape);
    t.node_->value.assign(shape_numel(t.node_->shape), v);
    t.node_->requires_grad = requires_grad;
    return t;
  }

  static Tensor from_data(Shape shape, std::vector<S> data, bool requires_grad = false) {
    if (shape_numel(shape) != data.size()) {
      throw ShapeError("tensor data length " + std::to_string(data.size()) +
                       " does not match shape " + shape_str(shape));
    }
    Tensor t;
    t.node_ = std::make_shared<NodeT>();
    t.node_->shape = std::move(shape);
    t.node_->value = std::move(data);
    t.node_->requires_grad = requires_grad;
    return t;
  }

  static Tensor scalar(S v) { return from_data({1}, {v}); }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t size() const { return node_->value.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape[i]; }

  const std::vector<S>& value() const { return node_->value; }
  // Mutable access for parameter updates; only meaningful on leaves.
  std::vector<S>& mutable_value() { return node_->value; }

  S item() const {
    if (size() != 1) throw ShapeError("item() on non-scalar tensor " + shape_str(shape()));
    return node_->value[0];
  }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool rg) { node_->requires_grad = rg; }
  bool is_leaf() const { return node_->leaf; }

  bool has_grad() const { return !node_->grad.empty(); }
  const std::vector<S>& grad() const {
    if (node_->grad.empty()) throw std::runtime_error("tensor has no gradient populated");
    return node_->grad;
  }
  void zero_grad() {
    if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), S(0));
  }

  std::shared_ptr<NodeT> node() const { return node_; }

 private:
  std::shared_ptr<NodeT> node_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

namespace detail {

// New op node: value computed, parents attached, backward_fn set only when a
// parent requires grad (inference builds no closures).
template <typename S, typename F>
Tensor<S> make_op(Shape shape, std::vector<S> value,
                  std::vector<Tensor<S>> parents, F&& backward_fn) {
  Tensor<S> out = Tensor<S>::from_data(std::move(shape), std::move(value));
  auto node = out.node();
  node->leaf = false;
  bool rg = false;
  for (const auto& p : parents) {
    node->parents.push_back(p.node());
    rg = rg || p.node()->requires_grad;
  }
  node->requires_grad = rg;
  if (rg) node->backward_fn = std::forward<F>(backward_fn);
  return out;
}

template <typename S>
void accum(Node<S>& parent, const S* g, std::size_t n) {
  if (!parent.requires_grad) return;
  parent.ensure_grad();
  for (std::size_t i = 0; i < n; ++i) parent.grad[i] += g[i];
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Graph: the reverse-recording order used by backward. Exposed separately so
// traversal invariants are testable.
// ---------------------------------------------------------------------------

template <typename S>
struct Graph {
  std::vector<detail::Node<S>*> order;  // root first; every node precedes its parents

  static Graph trace(const Tensor<S>& root) {
    Graph g;
    std::unordered_set<detail::Node<S>*> visited;
    // Iterative post-order DFS over parents; reversed post-order puts the root
    // first and each node before all of its parents.
    std::vector<std::pair<detail::Node<S>*, std::size_t>> stack;
    stack.emplace_back(root.node().get(), 0);
    visited.insert(root.node().get());
    std::vector<detail::Node<S>*> post;
    while (!stack.empty()) {
      auto& [node, idx] = stack.back();
      if (idx < node->parents.size()) {
        detail::Node<S>* p = node->parents[idx++].get();
        if (visited.insert(p).second) stack.emplace_back(p, 0);
      } else {
        post.push_back(node);
        stack.pop_back();
      }
    }
    g.order.assign(post.rbegin(), post.rend());
    return g;
  }
};

// Accumulates gradients into every requires_grad leaf reachable from root.
// Interior gradients are reset on each call; leaf gradients accumulate until
// zero_grad(), so calling backward twice doubles leaf gradients.
template <typename S>
void backward(const Tensor<S>& root) {
  if (root.size() != 1) {
    throw ShapeError("backward requires a scalar root, got shape " + shape_str(root.shape()));
  }
  Graph<S> g = Graph<S>::trace(root);
  for (auto* n : g.order) {
    if (!n->leaf) n->grad.assign(n->size(), S(0));
  }
  root.node()->ensure_grad();
  root.node()->grad[0] += S(1);
  for (auto* n : g.order) {
    if (n->backward_fn && n->requires_grad) n->backward_fn(*n);
  }
  for (auto* n : g.order) {
    if (n->leaf && n->requires_grad) n->ensure_grad();
  }
}

// ---------------------------------------------------------------------------
// Broadcasting (numpy rules on trailing dimensions)
// ---------------------------------------------------------------------------

inline Shape broadcast_shape(const Shape& a, const Shape& b) {
  std::size_t r = std::max(a.size(), b.size());
  Shape out(r);
  for (std::size_t i = 0; i < r; ++i) {
    std::size_t da = i < a.size() ? a[a.size() - 1 - i] : 1;
    std::size_t db = i < b.size() ? b[b.size() - 1 - i] : 1;
    if (da != db && da != 1 && db != 1) {
      throw ShapeError("shapes not broadcastable: " + shape_str(a) + " vs " + shape_str(b));
    }
    out[r - 1 - i] = std::max(da, db);
  }
  return out;
}

namespace detail {

inline std::vector<std::size_t> row_major_strides(const Shape& s) {
  std::vector<std::size_t> st(s.size(), 1);
  for (std::size_t i = s.size(); i-- > 1;) st[i - 1] = st[i] * s[i];
  return st;
}

// Strides of `from` viewed in the broadcast frame `to` (0 on broadcast axes).
inline std::vector<std::size_t> broadcast_strides(const Shape& from, const Shape& to) {
  std::vector<std::size_t> fs = row_major_strides(from);
  std::vector<std::size_t> out(to.size(), 0);
  for (std::size_t i = 0; i < to.size(); ++i) {
    std::size_t ri = to.size() - 1 - i;
    if (i < from.size()) {
      std::size_t fi = from.size() - 1 - i;
      out[ri] = (from[fi] == to[ri]) ? fs[fi] : 0;
    }
  }
  return out;
}

// Sums `g` (laid out as shape `from`) down to shape `to` (for broadcast
// backward). `to` must be broadcastable to `from`.
template <typename S>
std::vector<S> reduce_to_shape(const std::vector<S>& g, const Shape& from, const Shape& to) {
  std::vector<S> out(shape_numel(to), S(0));
  std::vector<std::size_t> tstr = broadcast_strides(to, from);
  std::size_t n = g.size();
  std::vector<std::size_t> idx(from.size(), 0);
  std::size_t toff = 0;
  for (std::size_t i = 0; i < n; ++i) {
    out[toff] += g[i];
    for (std::size_t d = from.size(); d-- > 0;) {
      idx[d]++;
      toff += tstr[d];
      if (idx[d] < from[d]) break;
      toff -= tstr[d] * from[d];
      idx[d] = 0;
    }
  }
  return out;
}

// Elementwise binary op with broadcasting. Fast path for identical shapes.
template <typename S, typename FwdFn>
std::vector<S> bcast_apply(const Tensor<S>& a, const Tensor<S>& b, const Shape& out_shape,
                           FwdFn f) {
  const auto& av = a.value();
  const auto& bv = b.value();
  std::size_t n = shape_numel(out_shape);
  std::vector<S> out(n);
  if (a.shape() == b.shape()) {
    for (std::size_t i = 0; i < n; ++i) out[i] = f(av[i], bv[i]);
    return out;
  }
  auto astr = broadcast_strides(a.shape(), out_shape);
  auto bstr = broadcast_strides(b.shape(), out_shape);
  std::vector<std::size_t> idx(out_shape.size(), 0);
  std::size_t ao = 0, bo = 0;
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = f(av[ao], bv[bo]);
    for (std::size_t d = out_shape.size(); d-- > 0;) {
      idx[d]++;
      ao += astr[d];
      bo += bstr[d];
      if (idx[d] < out_shape[d]) break;
      ao -= astr[d] * out_shape[d];
      bo -= bstr[d] * out_shape[d];
      idx[d] = 0;
    }
  }
  return out;
}

// Walks the broadcast frame once, handing (out_index, a_index, b_index) to fn.
template <typename S, typename Fn>
void bcast_walk(const Shape& a_shape, const Shape& b_shape, const Shape& out_shape, Fn fn) {
  std::size_t n = shape_numel(out_shape);
  if (a_shape == b_shape) {
    for (std::size_t i = 0; i < n; ++i) fn(i, i, i);
    return;
  }
  auto astr = broadcast_strides(a_shape, out_shape);
  auto bstr = broadcast_strides(b_shape, out_shape);
  std::vector<std::size_t> idx(out_shape.size(), 0);
  std::size_t ao = 0, bo = 0;
  for (std::size_t i = 0; i < n; ++i) {
    fn(i, ao, bo);
    for (std::size_t d = out_shape.size(); d-- > 0;) {
      idx[d]++;
      ao += astr[d];
      bo += bstr[d];
      if (idx[d] < out_shape[d]) break;
      ao -= astr[d] * out_shape[d];
      bo -= bstr[d] * out_shape[d];
      idx[d] = 0;
    }
  }
}

template <typename S>
void accum_reduced(Node<S>& parent, const std::vector<S>& g, const Shape& gshape) {
  if (!parent.requires_grad) return;
  parent.ensure_grad();
  if (parent.shape == gshape) {
    for (std::size_t i = 0; i < g.size(); ++i) parent.grad[i] += g[i];
  } else {
    std::vector<S> r = reduce_to_shape(g, gshape, parent.shape);
    for (std::size_t i = 0; i < r.size(); ++i) parent.grad[i] += r[i];
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise binary ops
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
  Shape os = broadcast_shape(a.shape(), b.shape());
  auto v = detail::bcast_apply(a, b, os, [](S x, S y) { return x + y; });
  return detail::make_op<S>(os, std::move(v), {a, b}, [os](detail::Node<S>& self) {
    detail::accum_reduced(*self.parents[0], self.grad, os);
    detail::accum_reduced(*self.parents[1], self.grad, os);
  });
}

template <typename S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
  Shape os = broadcast_shape(a.shape(), b.shape());
  auto v = detail::bcast_apply(a, b, os, [](S x, S y) { return x - y; });
  return detail::make_op<S>(os, std::move(v), {a, b}, [os](detail::Node<S>& self) {
    detail::accum_reduced(*self.parents[0], self.grad, os);
    std::vector<S> ng(self.grad.size());
    for (std::size_t i = 0; i < ng.size(); ++i) ng[i] = -self.grad[i];
    detail::accum_reduced(*self.parents[1], ng, os);
  });
}

template <typename S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
  Shape os = broadcast_shape(a.shape(), b.shape());
  auto v = detail::bcast_apply(a, b, os, [](S x, S y) { return x * y; });
  Shape as = a.shape(), bs = b.shape();
  return detail::make_op<S>(os, std::move(v), {a, b}, [os, as, bs](detail::Node<S>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    std::vector<S> ga(self.grad.size()), gb(self.grad.size());
    detail::bcast_walk<S>(as, bs, os, [&](std::size_t i, std::size_t ai, std::size_t bi) {
      ga[i] = self.grad[i] * pb.value[bi];
      gb[i] = self.grad[i] * pa.value[ai];
    });
    detail::accum_reduced(pa, ga, os);
    detail::accum_reduced(pb, gb, os);
  });
}

template <typename S>
Tensor<S> divide(const Tensor<S>& a, const Tensor<S>& b) {
  Shape os = broadcast_shape(a.shape(), b.shape());
  auto v = detail::bcast_apply(a, b, os, [](S x, S y) { return x / y; });
  Shape as = a.shape(), bs = b.shape();
  return detail::make_op<S>(os, std::move(v), {a, b}, [os, as, bs](detail::Node<S>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    std::vector<S> ga(self.grad.size()), gb(self.grad.size());
    detail::bcast_walk<S>(as, bs, os, [&](std::size_t i, std::size_t ai, std::size_t bi) {
      S y = pb.value[bi];
      ga[i] = self.grad[i] / y;
      gb[i] = -self.grad[i] * pa.value[ai] / (y * y);
    });
    detail::accum_reduced(pa, ga, os);
    detail::accum_reduced(pb, gb, os);
  });
}

// ---------------------------------------------------------------------------
// Elementwise unary ops
// ---------------------------------------------------------------------------

namespace detail {

// dfn maps (x, y, g) -> contribution to dx.
template <typename S, typename FwdFn, typename BwdFn>
Tensor<S> unary_op(const Tensor<S>& a, FwdFn f, BwdFn dfn) {
  std::size_t n = a.size();
  std::vector<S> v(n);
  const auto& av = a.value();
  for (std::size_t i = 0; i < n; ++i) v[i] = f(av[i]);
  return make_op<S>(a.shape(), std::move(v), {a}, [dfn](Node<S>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    for (std::size_t i = 0; i < self.size(); ++i) {
      p.grad[i] += dfn(p.value[i], self.value[i], self.grad[i]);
    }
  });
}

}  // namespace detail

template <typename S>
Tensor<S> neg(const Tensor<S>& a) {
  return detail::unary_op(
      a, [](S x) { return -x; }, [](S, S, S g) { return -g; });
}

template <typename S>
Tensor<S> relu(const Tensor<S>& a) {
  return detail::unary_op(
      a, [](S x) { return x > S(0) ? x : S(0); },
      [](S x, S, S g) { return x > S(0) ? g : S(0); });
}

template <typename S>
Tensor<S> sigmoid(const Tensor<S>& a) {
  return detail::unary_op(
      a, [](S x) { return S(1) / (S(1) + std::exp(-x)); },
      [](S, S y, S g) { return g * y * (S(1) - y); });
}

template <typename S>
Tensor<S> tanh_t(const Tensor<S>& a) {
  return detail::unary_op(
      a, [](S x) { return std::tanh(x); },
      [](S, S y, S g) { return g * (S(1) - y * y); });
}

template <typename S>
Tensor<S> exp_t(const Tensor<S>& a) {
  return detail::unary_op(
      a, [](S x) { return std::exp(x); }, [](S, S y, S g) { return g * y; });
}

template <typename S>
Tensor<S> log_t(const Tensor<S>& a) {
  return detail::unary_op(
      a, [](S x) { return std::log(x); }, [](S x, S, S g) { return g / x; });
}

template <typename S>
Tensor<S> sqrt_t(const Tensor<S>& a) {
  return detail::unary_op(
      a, [](S x) { return std::sqrt(x); },
      [](S, S y, S g) { return y > S(0) ? g * S(0.5) / y : S(0); });
}

template <typename S>
Tensor<S> square(const Tensor<S>& a) {
  return detail::unary_op(
      a, [](S x) { return x * x; }, [](S x, S, S g) { return S(2) * g * x; });
}

template <typename S>
Tensor<S> clamp_min(const Tensor<S>& a, S floor) {
  return detail::unary_op(
      a, [floor](S x) { return x > floor ? x : floor; },
      [floor](S x, S, S g) { return x > floor ? g : S(0); });
}

template <typename S>
Tensor<S> add_scalar(const Tensor<S>& a, S c) {
  return detail::unary_op(
      a, [c](S x) { return x + c; }, [](S, S, S g) { return g; });
}

template <typename S>
Tensor<S> mul_scalar(const Tensor<S>& a, S c) {
  return detail::unary_op(
      a, [c](S x) { return x * c; }, [c](S, S, S g) { return g * c; });
}

// ---------------------------------------------------------------------------
// Matmul / transpose (2-D)
// ---------------------------------------------------------------------------

namespace detail {

// C(M x N) += A(M x K) * B(K x N); plain i-k-j so the inner loop vectorizes.
template <typename S>
void gemm_nn(const S* a, const S* b, S* c, std::size_t m, std::size_t k, std::size_t n) {
  parallel_for(m, [&](std::size_t ib, std::size_t ie) {
    for (std::size_t i = ib; i < ie; ++i) {
      S* crow = c + i * n;
      const S* arow = a + i * k;
      for (std::size_t kk = 0; kk < k; ++kk) {
        S av = arow[kk];
        const S* brow = b + kk * n;
        for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
    }
  });
}

// C(M x N) += A(M x K) * B(N x K)^T
template <typename S>
void gemm_nt(const S* a, const S* b, S* c, std::size_t m, std::size_t k, std::size_t n) {
  parallel_for(m, [&](std::size_t ib, std::size_t ie) {
    for (std::size_t i = ib; i < ie; ++i) {
      const S* arow = a + i * k;
      S* crow = c + i * n;
      for (std::size_t j = 0; j < n; ++j) {
        const S* brow = b + j * k;
        S acc = S(0);
        for (std::size_t kk = 0; kk < k; ++kk) acc += arow[kk] * brow[kk];
        crow[j] += acc;
      }
    }
  });
}

// C(M x N) += A(K x M)^T * B(K x N)
template <typename S>
void gemm_tn(const S* a, const S* b, S* c, std::size_t m, std::size_t k, std::size_t n) {
  parallel_for(m, [&](std::size_t ib, std::size_t ie) {
    for (std::size_t i = ib; i < ie; ++i) {
      S* crow = c + i * n;
      for (std::size_t kk = 0; kk < k; ++kk) {
        S av = a[kk * m + i];
        const S* brow = b + kk * n;
        for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
    }
  });
}

}  // namespace detail

template <typename S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul shape mismatch: " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
  std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<S> v(m * n, S(0));
  detail::gemm_nn(a.value().data(), b.value().data(), v.data(), m, k, n);
  return detail::make_op<S>({m, n}, std::move(v), {a, b}, [m, k, n](detail::Node<S>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) {
      pa.ensure_grad();
      detail::gemm_nt(self.grad.data(), pb.value.data(), pa.grad.data(), m, n, k);
    }
    if (pb.requires_grad) {
      pb.ensure_grad();
      detail::gemm_tn(pa.value.data(), self.grad.data(), pb.grad.data(), k, m, n);
    }
  });
}

template <typename S>
Tensor<S> transpose(const Tensor<S>& a) {
  if (a.rank() != 2) throw ShapeError("transpose requires rank 2, got " + shape_str(a.shape()));
  std::size_t r = a.dim(0), c = a.dim(1);
  std::vector<S> v(r * c);
  const auto& av = a.value();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) v[j * r + i] = av[i * c + j];
  return detail::make_op<S>({c, r}, std::move(v), {a}, [r, c](detail::Node<S>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    for (std::size_t j = 0; j < c; ++j)
      for (std::size_t i = 0; i < r; ++i) p.grad[i * c + j] += self.grad[j * r + i];
  });
}

// ---------------------------------------------------------------------------
// Shape ops
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> reshape(const Tensor<S>& a, Shape s) {
  if (shape_numel(s) != a.size()) {
    throw ShapeError("reshape " + shape_str(a.shape()) + " -> " + shape_str(s) +
                     " changes element count");
  }
  std::vector<S> v = a.value();
  return detail::make_op<S>(std::move(s), std::move(v), {a}, [](detail::Node<S>& self) {
    detail::accum(*self.parents[0], self.grad.data(), self.grad.size());
  });
}

// Columns [start, start+count) of a 2-D tensor.
template <typename S>
Tensor<S> slice_cols(const Tensor<S>& a, std::size_t start, std::size_t count) {
  if (a.rank() != 2 || start + count > a.dim(1)) {
    throw ShapeError("slice_cols [" + std::to_string(start) + ", +" + std::to_string(count) +
                     ") out of range for " + shape_str(a.shape()));
  }
  std::size_t r = a.dim(0), c = a.dim(1);
  std::vector<S> v(r * count);
  const auto& av = a.value();
  for (std::size_t i = 0; i < r; ++i)
    std::copy_n(av.data() + i * c + start, count, v.data() + i * count);
  return detail::make_op<S>({r, count}, std::move(v), {a},
                            [r, c, start, count](detail::Node<S>& self) {
                              auto& p = *self.parents[0];
                              if (!p.requires_grad) return;
                              p.ensure_grad();
                              for (std::size_t i = 0; i < r; ++i)
                                for (std::size_t j = 0; j < count; ++j)
                                  p.grad[i * c + start + j] += self.grad[i * count + j];
                            });
}

// Concatenation of 2-D tensors along axis 0 (rows) or 1 (cols).
template <typename S>
Tensor<S> concat(const std::vector<Tensor<S>>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat of zero tensors");
  if (axis > 1) throw ShapeError("concat supports 2-D tensors, axis 0 or 1");
  std::size_t other = axis == 0 ? 1 : 0;
  for (const auto& p : parts) {
    if (p.rank() != 2 || p.dim(other) != parts[0].dim(other)) {
      throw ShapeError("concat mismatch: " + shape_str(parts[0].shape()) + " vs " +
                       shape_str(p.shape()));
    }
  }
  std::size_t total = 0;
  for (const auto& p : parts) total += p.dim(axis);
  Shape os = parts[0].shape();
  os[axis] = total;
  std::vector<S> v(shape_numel(os));
  std::size_t cols = os[1];
  std::size_t off = 0;
  for (const auto& p : parts) {
    const auto& pv = p.value();
    if (axis == 0) {
      std::copy(pv.begin(), pv.end(), v.begin() + off * cols);
      off += p.dim(0);
    } else {
      for (std::size_t i = 0; i < os[0]; ++i)
        std::copy_n(pv.data() + i * p.dim(1), p.dim(1), v.data() + i * cols + off);
      off += p.dim(1);
    }
  }
  std::vector<std::size_t> widths;
  for (const auto& p : parts) widths.push_back(p.dim(axis));
  return detail::make_op<S>(os, std::move(v), parts,
                            [axis, widths, os](detail::Node<S>& self) {
                              std::size_t cols = os[1];
                              std::size_t off = 0;
                              for (std::size_t pi = 0; pi < self.parents.size(); ++pi) {
                                auto& p = *self.parents[pi];
                                std::size_t w = widths[pi];
                                if (p.requires_grad) {
                                  p.ensure_grad();
                                  if (axis == 0) {
                                    for (std::size_t i = 0; i < w * cols; ++i)
                                      p.grad[i] += self.grad[off * cols + i];
                                  } else {
                                    for (std::size_t i = 0; i < os[0]; ++i)
                                      for (std::size_t j = 0; j < w; ++j)
                                        p.grad[i * w + j] += self.grad[i * cols + off + j];
                                  }
                                }
                                off += w;
                              }
                            });
}

// ---------------------------------------------------------------------------
// Reductions (keepdims semantics on 2-D tensors; full reductions on any rank)
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> reduce_sum(const Tensor<S>& a, std::size_t axis) {
  if (a.rank() != 2 || axis > 1) {
    throw ShapeError("reduce_sum(axis) supports 2-D tensors, got " + shape_str(a.shape()));
  }
  std::size_t r = a.dim(0), c = a.dim(1);
  const auto& av = a.value();
  if (axis == 0) {
    std::vector<S> v(c, S(0));
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) v[j] += av[i * c + j];
    return detail::make_op<S>({1, c}, std::move(v), {a}, [r, c](detail::Node<S>& self) {
      auto& p = *self.parents[0];
      if (!p.requires_grad) return;
      p.ensure_grad();
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) p.grad[i * c + j] += self.grad[j];
    });
  }
  std::vector<S> v(r, S(0));
  for (std::size_t i = 0; i < r; ++i) {
    S acc = S(0);
    for (std::size_t j = 0; j < c; ++j) acc += av[i * c + j];
    v[i] = acc;
  }
  return detail::make_op<S>({r, 1}, std::move(v), {a}, [r, c](detail::Node<S>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) p.grad[i * c + j] += self.grad[i];
  });
}

template <typename S>
Tensor<S> reduce_mean(const Tensor<S>& a, std::size_t axis) {
  std::size_t n = axis == 0 ? a.dim(0) : a.dim(1);
  return mul_scalar(reduce_sum(a, axis), S(1) / static_cast<S>(n));
}

template <typename S>
Tensor<S> sum_all(const Tensor<S>& a) {
  S acc = S(0);
  for (S x : a.value()) acc += x;
  return detail::make_op<S>({1}, {acc}, {a}, [](detail::Node<S>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    for (std::size_t i = 0; i < p.size(); ++i) p.grad[i] += self.grad[0];
  });
}

template <typename S>
Tensor<S> mean_all(const Tensor<S>& a) {
  return mul_scalar(sum_all(a), S(1) / static_cast<S>(a.size()));
}

// ---------------------------------------------------------------------------
// Softmax over the last axis (rows for 2-D)
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> softmax(const Tensor<S>& a) {
  if (a.rank() < 1) throw ShapeError("softmax needs rank >= 1");
  std::size_t c = a.shape().back();
  std::size_t rows = a.size() / c;
  std::vector<S> v(a.size());
  const auto& av = a.value();
  for (std::size_t i = 0; i < rows; ++i) {
    const S* x = av.data() + i * c;
    S* y = v.data() + i * c;
    S mx = x[0];
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, x[j]);
    S sum = S(0);
    for (std::size_t j = 0; j < c; ++j) {
      y[j] = std::exp(x[j] - mx);
      sum += y[j];
    }
    for (std::size_t j = 0; j < c; ++j) y[j] /= sum;
  }
  return detail::make_op<S>(a.shape(), std::move(v), {a}, [rows, c](detail::Node<S>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    for (std::size_t i = 0; i < rows; ++i) {
      const S* y = self.value.data() + i * c;
      const S* g = self.grad.data() + i * c;
      S dot = S(0);
      for (std::size_t j = 0; j < c; ++j) dot += g[j] * y[j];
      for (std::size_t j = 0; j < c; ++j) p.grad[i * c + j] += y[j] * (g[j] - dot);
    }
  });
}

// ---------------------------------------------------------------------------
// Composition helpers
// ---------------------------------------------------------------------------

// x (B x I) * W (I x O) + b (broadcast over rows)
template <typename S>
Tensor<S> linear(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& b) {
  return add(matmul(x, w), b);
}

// Population variance along an axis of a 2-D tensor: E[x^2] - E[x]^2.
template <typename S>
Tensor<S> variance(const Tensor<S>& a, std::size_t axis) {
  Tensor<S> m = reduce_mean(a, axis);
  return sub(reduce_mean(square(a), axis), square(m));
}

// Rows (axis 1) or columns (axis 0) scaled to unit L2 norm; zero vectors map
// to zero through the eps guard.
template <typename S>
Tensor<S> l2_normalize(const Tensor<S>& a, std::size_t axis, S eps) {
  Tensor<S> n2 = reduce_sum(square(a), axis);
  Tensor<S> denom = sqrt_t(clamp_min(n2, eps * eps));
  return divide(a, denom);
}

// Whole-tensor L2 normalization (flattened norm).
template <typename S>
Tensor<S> l2_normalize_all(const Tensor<S>& a, S eps) {
  Tensor<S> n2 = sum_all(square(a));
  Tensor<S> denom = sqrt_t(clamp_min(n2, eps * eps));
  return divide(a, denom);
}

template <typename S>
Tensor<S> operator+(const Tensor<S>& a, const Tensor<S>& b) { return add(a, b); }
template <typename S>
Tensor<S> operator-(const Tensor<S>& a, const Tensor<S>& b) { return sub(a, b); }
template <typename S>
Tensor<S> operator*(const Tensor<S>& a, const Tensor<S>& b) { return mul(a, b); }
template <typename S>
Tensor<S> operator/(const Tensor<S>& a, const Tensor<S>& b) { return divide(a, b); }
template <typename S>
Tensor<S> operator-(const Tensor<S>& a) { return neg(a); }

}  // namespace burstkit

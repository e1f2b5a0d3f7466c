#pragma once

// Reverse-mode automatic differentiation over dense float64 tensors.
//
// A Graph is an append-only tape. Every op computes its forward value eagerly
// and records a backward closure; Graph::backward walks the tape once in
// reverse insertion order, which is a valid reverse topological order because
// inputs are always recorded before their consumers. Parameters live outside
// the graph as Tensors and receive accumulated gradients when the tape is
// unwound. A fresh graph is built per training step.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "sqgan/errors.hpp"

namespace sqgan::ad {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string to_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

class Tensor {
 public:
  Tensor() : shape_{0} {}
  explicit Tensor(Shape shape, double fill = 0.0)
      : shape_(std::move(shape)), data_(numel(shape_), fill) {}
  Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (numel(shape_) != data_.size()) {
      throw DimensionError("tensor shape " + to_string(shape_) + " holds " +
                           std::to_string(numel(shape_)) + " values, got " +
                           std::to_string(data_.size()));
    }
  }

  static Tensor scalar(double v) { return Tensor(Shape{}, std::vector<double>{v}); }
  static Tensor vector(std::vector<double> v) {
    const std::size_t n = v.size();
    return Tensor(Shape{n}, std::move(v));
  }
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r ? rows.begin()->size() : 0;
    std::vector<double> d;
    d.reserve(r * c);
    for (const auto& row : rows) {
      if (row.size() != c) throw DimensionError("ragged matrix literal");
      d.insert(d.end(), row.begin(), row.end());
    }
    return Tensor(Shape{r, c}, std::move(d));
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  std::size_t rows() const { return shape_.at(0); }
  std::size_t cols() const { return shape_.at(1); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::vector<double>& values() { return data_; }
  const std::vector<double>& values() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& operator()(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }
  std::span<double> row(std::size_t i) { return {data_.data() + i * shape_[1], shape_[1]}; }
  std::span<const double> row(std::size_t i) const {
    return {data_.data() + i * shape_[1], shape_[1]};
  }

  bool requires_grad() const { return requires_grad_; }
  void set_requires_grad(bool on) {
    requires_grad_ = on;
    if (!on) grad_.clear();
  }
  bool has_grad() const { return !grad_.empty(); }
  std::span<const double> grad() const { return grad_; }
  std::span<double> grad() { return grad_; }
  void zero_grad() { grad_.assign(data_.size(), 0.0); }
  void accumulate_grad(std::span<const double> g) {
    if (!requires_grad_) return;
    if (grad_.empty()) grad_.assign(data_.size(), 0.0);
    for (std::size_t i = 0; i < g.size(); ++i) grad_[i] += g[i];
  }

 private:
  Shape shape_;
  std::vector<double> data_;
  bool requires_grad_ = false;
  std::vector<double> grad_;
};

enum class Op {
  constant,
  parameter,
  matmul,
  linear,
  add,
  sub,
  mul,
  neg,
  scale,
  add_scalar,
  leaky_relu,
  tanh,
  exp,
  log,
  square,
  sqrt,
  softplus,
  stop_gradient,
  straight_through,
  sum,
  mean,
  l2_norm_sq,
  reshape,
  transpose,
  gather_rows,
  normalize_rows,
  custom,
};

class Graph;

// Handle to a node of a Graph. Cheap to copy; valid while the graph lives.
class Var {
 public:
  Var() = default;
  Var(Graph* g, std::size_t id) : g_(g), id_(id) {}

  Graph& graph() const { return *g_; }
  std::size_t id() const { return id_; }
  const Shape& shape() const;
  std::size_t size() const;
  std::span<const double> value() const;
  double item() const;
  bool requires_grad() const;
  // Gradient of the last backward() root with respect to this node; empty if
  // the node did not receive any.
  std::span<const double> grad() const;
  Tensor to_tensor() const;

 private:
  Graph* g_ = nullptr;
  std::size_t id_ = 0;
};

class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, std::size_t)>;

  struct Node {
    Op op;
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;
    std::vector<std::size_t> inputs;
    bool requires_grad = false;
    Tensor* parameter = nullptr;
    BackwardFn backward;
  };

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(const Tensor& t) { return constant(t.shape(), t.values()); }
  Var constant(Shape shape, std::vector<double> value) {
    if (numel(shape) != value.size()) {
      throw DimensionError("constant of shape " + to_string(shape) + " given " +
                           std::to_string(value.size()) + " values");
    }
    Node n;
    n.op = Op::constant;
    n.shape = std::move(shape);
    n.value = std::move(value);
    return push(std::move(n));
  }
  Var scalar(double v) { return constant(Shape{}, {v}); }

  // Leaf bound to an external tensor. Gradient flows into p.grad on backward
  // when p.requires_grad() and `track` are both set; otherwise the leaf is a
  // constant snapshot of p.
  Var parameter(Tensor& p, bool track = true) {
    Node n;
    n.op = Op::parameter;
    n.shape = p.shape();
    n.value = p.values();
    if (track && p.requires_grad()) {
      n.requires_grad = true;
      n.parameter = &p;
    }
    return push(std::move(n));
  }

  // Records a computed node. requires_grad is inherited from the inputs; the
  // backward closure is dropped when no input needs a gradient.
  Var record(Op op, Shape shape, std::vector<double> value, std::vector<std::size_t> inputs,
             BackwardFn backward) {
    Node n;
    n.op = op;
    n.shape = std::move(shape);
    n.value = std::move(value);
    for (std::size_t in : inputs) n.requires_grad = n.requires_grad || nodes_[in].requires_grad;
    n.inputs = std::move(inputs);
    if (n.requires_grad) n.backward = std::move(backward);
    return push(std::move(n));
  }

  Node& node(std::size_t id) { return nodes_[id]; }
  const Node& node(std::size_t id) const { return nodes_[id]; }
  std::size_t size() const { return nodes_.size(); }

  // Zero-initialized gradient buffer of a node, allocated on first use. Only
  // meaningful for nodes that require grad; returns an empty span otherwise.
  std::span<double> grad_buffer(std::size_t id) {
    Node& n = nodes_[id];
    if (!n.requires_grad) return {};
    if (n.grad.empty()) n.grad.assign(n.value.size(), 0.0);
    return n.grad;
  }

  void backward(Var root) {
    Node& r = nodes_.at(root.id());
    if (r.value.size() != 1) {
      throw DimensionError("backward root must be a scalar, got shape " + to_string(r.shape));
    }
    for (Node& n : nodes_) n.grad.clear();
    if (!r.requires_grad) return;
    r.grad.assign(1, 1.0);
    for (std::size_t id = root.id() + 1; id-- > 0;) {
      Node& n = nodes_[id];
      if (!n.requires_grad || n.grad.empty()) continue;
      if (n.parameter) {
        n.parameter->accumulate_grad(n.grad);
      } else if (n.backward) {
        n.backward(*this, id);
      }
    }
  }

 private:
  Var push(Node&& n) {
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
  }

  std::vector<Node> nodes_;
};

inline const Shape& Var::shape() const { return g_->node(id_).shape; }
inline std::size_t Var::size() const { return g_->node(id_).value.size(); }
inline std::span<const double> Var::value() const { return g_->node(id_).value; }
inline double Var::item() const {
  const auto& v = g_->node(id_).value;
  if (v.size() != 1) throw DimensionError("item() on tensor of shape " + to_string(shape()));
  return v[0];
}
inline bool Var::requires_grad() const { return g_->node(id_).requires_grad; }
inline std::span<const double> Var::grad() const { return g_->node(id_).grad; }
inline Tensor Var::to_tensor() const { return Tensor(shape(), g_->node(id_).value); }

namespace detail {

inline void require_same_graph(const Var& a, const Var& b) {
  if (&a.graph() != &b.graph()) throw Error("operands belong to different graphs");
}

inline void require_rank(const Var& a, std::size_t rank, const char* op) {
  if (a.shape().size() != rank) {
    throw DimensionError(std::string(op) + " expects rank " + std::to_string(rank) +
                         ", got shape " + to_string(a.shape()));
  }
}

// Accumulates `g` into the gradient buffer of node `id` when it wants one.
inline void accumulate(Graph& G, std::size_t id, std::span<const double> g) {
  auto buf = G.grad_buffer(id);
  if (buf.empty()) return;
  for (std::size_t i = 0; i < g.size(); ++i) buf[i] += g[i];
}

// c[m×n] += a[m×k] · b[k×n]
inline void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                    std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* ci = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = a[i * k + p];
      const double* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += aip * bp[j];
    }
  }
}

// c[m×k] += a[m×n] · b[k×n]ᵀ
inline void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t n,
                    std::size_t k) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double* bp = b + p * n;
      double acc = 0.0;
      for (std::size_t j = 0; j < n; ++j) acc += ai[j] * bp[j];
      c[i * k + p] += acc;
    }
  }
}

// c[k×n] += a[m×k]ᵀ · b[m×n]
inline void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                    std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* bi = b + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = a[i * k + p];
      if (aip == 0.0) continue;
      double* cp = c + p * n;
      for (std::size_t j = 0; j < n; ++j) cp[j] += aip * bi[j];
    }
  }
}

// Scalar-or-equal-shape check for binary elementwise ops.
inline Shape broadcast_shape(const Var& a, const Var& b, const char* op) {
  if (a.shape() == b.shape()) return a.shape();
  if (b.size() == 1) return a.shape();
  if (a.size() == 1) return b.shape();
  throw DimensionError(std::string(op) + ": shapes " + to_string(a.shape()) + " and " +
                       to_string(b.shape()) + " are not equal and neither is a scalar");
}

template <class Fwd, class Deriv>
Var unary(Op op, Var x, Fwd fwd, Deriv deriv) {
  Graph& G = x.graph();
  const auto in = x.value();
  std::vector<double> out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = fwd(in[i], i);
  const std::size_t xid = x.id();
  return G.record(op, x.shape(), std::move(out), {xid}, [xid, deriv](Graph& g, std::size_t self) {
    auto gx = g.grad_buffer(xid);
    if (gx.empty()) return;
    const auto& n = g.node(self);
    const auto& xv = g.node(xid).value;
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += n.grad[i] * deriv(xv[i], n.value[i]);
  });
}

enum class BinaryKind { add, sub, mul };

inline Var binary(BinaryKind kind, Var a, Var b) {
  require_same_graph(a, b);
  static constexpr const char* names[] = {"add", "sub", "mul"};
  Shape shape = broadcast_shape(a, b, names[static_cast<int>(kind)]);
  const auto av = a.value();
  const auto bv = b.value();
  const std::size_t n = numel(shape);
  const bool sa = av.size() == 1 && n != 1;
  const bool sb = bv.size() == 1 && n != 1;
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double x = av[sa ? 0 : i];
    const double y = bv[sb ? 0 : i];
    switch (kind) {
      case BinaryKind::add: out[i] = x + y; break;
      case BinaryKind::sub: out[i] = x - y; break;
      case BinaryKind::mul: out[i] = x * y; break;
    }
  }
  const std::size_t aid = a.id(), bid = b.id();
  const Op op = kind == BinaryKind::add ? Op::add : kind == BinaryKind::sub ? Op::sub : Op::mul;
  return a.graph().record(
      op, std::move(shape), std::move(out), {aid, bid},
      [=](Graph& g, std::size_t self) {
        const auto& go = g.node(self).grad;
        const auto& x = g.node(aid).value;
        const auto& y = g.node(bid).value;
        if (auto ga = g.grad_buffer(aid); !ga.empty()) {
          for (std::size_t i = 0; i < go.size(); ++i) {
            double d = go[i];
            if (kind == BinaryKind::mul) d *= y[sb ? 0 : i];
            ga[sa ? 0 : i] += d;
          }
        }
        if (auto gb = g.grad_buffer(bid); !gb.empty()) {
          for (std::size_t i = 0; i < go.size(); ++i) {
            double d = go[i];
            if (kind == BinaryKind::sub) d = -d;
            if (kind == BinaryKind::mul) d *= x[sa ? 0 : i];
            gb[sb ? 0 : i] += d;
          }
        }
      });
}

struct AxisSplit {
  std::size_t outer, len, inner;
  Shape out_shape;
};

inline AxisSplit split_axis(const Shape& shape, const std::optional<std::size_t>& axis, const char* op) {
  if (!axis) return {1, numel(shape), 1, Shape{}};
  if (*axis >= shape.size()) {
    throw AxisError(std::string(op) + ": axis " + std::to_string(*axis) +
                    " out of range for shape " + to_string(shape));
  }
  AxisSplit s{1, shape[*axis], 1, {}};
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i < *axis) s.outer *= shape[i];
    if (i > *axis) s.inner *= shape[i];
    if (i != *axis) s.out_shape.push_back(shape[i]);
  }
  return s;
}

enum class ReduceKind { sum, mean, l2_norm_sq };

inline Var reduce(ReduceKind kind, Var x, const std::optional<std::size_t>& axis) {
  static constexpr const char* names[] = {"sum", "mean", "l2_norm_sq"};
  const AxisSplit s = split_axis(x.shape(), axis, names[static_cast<int>(kind)]);
  const auto xv = x.value();
  std::vector<double> out(s.outer * s.inner, 0.0);
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t l = 0; l < s.len; ++l) {
      const double* src = xv.data() + (o * s.len + l) * s.inner;
      double* dst = out.data() + o * s.inner;
      for (std::size_t i = 0; i < s.inner; ++i) {
        dst[i] += kind == ReduceKind::l2_norm_sq ? src[i] * src[i] : src[i];
      }
    }
  }
  if (kind == ReduceKind::mean) {
    const double inv = 1.0 / static_cast<double>(s.len);
    for (double& v : out) v *= inv;
  }
  const std::size_t xid = x.id();
  const Op op = kind == ReduceKind::sum ? Op::sum : kind == ReduceKind::mean ? Op::mean : Op::l2_norm_sq;
  return x.graph().record(op, s.out_shape, std::move(out), {xid}, [=](Graph& g, std::size_t self) {
    auto gx = g.grad_buffer(xid);
    const auto& go = g.node(self).grad;
    const auto& xv = g.node(xid).value;
    const double scale = kind == ReduceKind::mean ? 1.0 / static_cast<double>(s.len) : 1.0;
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t l = 0; l < s.len; ++l) {
        const std::size_t base = (o * s.len + l) * s.inner;
        for (std::size_t i = 0; i < s.inner; ++i) {
          const double d = go[o * s.inner + i];
          gx[base + i] += kind == ReduceKind::l2_norm_sq ? 2.0 * xv[base + i] * d : scale * d;
        }
      }
    }
  });
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear algebra

inline Var matmul(Var a, Var b) {
  detail::require_same_graph(a, b);
  if (a.shape().size() != 2 || b.shape().size() != 2 || a.shape()[1] != b.shape()[0]) {
    throw DimensionError("matmul: cannot multiply " + to_string(a.shape()) + " by " +
                         to_string(b.shape()));
  }
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  std::vector<double> out(m * n, 0.0);
  detail::gemm_nn(a.value().data(), b.value().data(), out.data(), m, k, n);
  const std::size_t aid = a.id(), bid = b.id();
  return a.graph().record(Op::matmul, Shape{m, n}, std::move(out), {aid, bid},
                          [=](Graph& g, std::size_t self) {
                            const double* go = g.node(self).grad.data();
                            if (auto ga = g.grad_buffer(aid); !ga.empty()) {
                              detail::gemm_nt(go, g.node(bid).value.data(), ga.data(), m, n, k);
                            }
                            if (auto gb = g.grad_buffer(bid); !gb.empty()) {
                              detail::gemm_tn(g.node(aid).value.data(), go, gb.data(), m, k, n);
                            }
                          });
}

// x[n×in] · w[in×out] + b, with the bias row (shape [out] or [1×out]) added
// to every row.
inline Var linear(Var x, Var w, Var b) {
  detail::require_same_graph(x, w);
  detail::require_same_graph(x, b);
  if (x.shape().size() != 2 || w.shape().size() != 2 || x.shape()[1] != w.shape()[0]) {
    throw DimensionError("linear: cannot multiply " + to_string(x.shape()) + " by " +
                         to_string(w.shape()));
  }
  const std::size_t n = x.shape()[0], in = x.shape()[1], out = w.shape()[1];
  if (b.size() != out) {
    throw DimensionError("linear: bias " + to_string(b.shape()) + " does not match output width " +
                         std::to_string(out));
  }
  std::vector<double> y(n * out);
  const auto bv = b.value();
  for (std::size_t i = 0; i < n; ++i) std::copy(bv.begin(), bv.end(), y.begin() + i * out);
  detail::gemm_nn(x.value().data(), w.value().data(), y.data(), n, in, out);
  const std::size_t xid = x.id(), wid = w.id(), bid = b.id();
  return x.graph().record(Op::linear, Shape{n, out}, std::move(y), {xid, wid, bid},
                          [=](Graph& g, std::size_t self) {
                            const double* go = g.node(self).grad.data();
                            if (auto gx = g.grad_buffer(xid); !gx.empty()) {
                              detail::gemm_nt(go, g.node(wid).value.data(), gx.data(), n, out, in);
                            }
                            if (auto gw = g.grad_buffer(wid); !gw.empty()) {
                              detail::gemm_tn(g.node(xid).value.data(), go, gw.data(), n, in, out);
                            }
                            if (auto gb = g.grad_buffer(bid); !gb.empty()) {
                              for (std::size_t i = 0; i < n; ++i)
                                for (std::size_t j = 0; j < out; ++j) gb[j] += go[i * out + j];
                            }
                          });
}

inline Var transpose(Var x) {
  detail::require_rank(x, 2, "transpose");
  const std::size_t r = x.shape()[0], c = x.shape()[1];
  const auto xv = x.value();
  std::vector<double> out(r * c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = xv[i * c + j];
  const std::size_t xid = x.id();
  return x.graph().record(Op::transpose, Shape{c, r}, std::move(out), {xid},
                          [=](Graph& g, std::size_t self) {
                            auto gx = g.grad_buffer(xid);
                            const auto& go = g.node(self).grad;
                            for (std::size_t i = 0; i < r; ++i)
                              for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += go[j * r + i];
                          });
}

inline Var reshape(Var x, Shape shape) {
  if (numel(shape) != x.size()) {
    throw DimensionError("reshape: cannot view " + to_string(x.shape()) + " as " +
                         to_string(shape));
  }
  const std::size_t xid = x.id();
  std::vector<double> v(x.value().begin(), x.value().end());
  return x.graph().record(Op::reshape, std::move(shape), std::move(v), {xid},
                          [xid](Graph& g, std::size_t self) {
                            detail::accumulate(g, xid, g.node(self).grad);
                          });
}

// Rows of a 2-D table selected by index; gradients scatter-add back.
inline Var gather_rows(Var table, std::span<const std::size_t> indices) {
  detail::require_rank(table, 2, "gather_rows");
  const std::size_t rows = table.shape()[0], cols = table.shape()[1];
  const auto tv = table.value();
  std::vector<double> out(indices.size() * cols);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= rows) {
      throw DimensionError("gather_rows: index " + std::to_string(indices[i]) +
                           " out of range for table " + to_string(table.shape()));
    }
    std::copy_n(tv.begin() + indices[i] * cols, cols, out.begin() + i * cols);
  }
  const std::size_t tid = table.id();
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  return table.graph().record(Op::gather_rows, Shape{idx.size(), cols}, std::move(out), {tid},
                              [=](Graph& g, std::size_t self) {
                                auto gt = g.grad_buffer(tid);
                                const auto& go = g.node(self).grad;
                                for (std::size_t i = 0; i < idx.size(); ++i)
                                  for (std::size_t j = 0; j < cols; ++j)
                                    gt[idx[i] * cols + j] += go[i * cols + j];
                              });
}

// Divides each row of a 2-D tensor by its Euclidean norm. Rows whose norm is
// below `min_norm` raise DegenerateProjectionError.
inline Var normalize_rows(Var x, double min_norm = 1e-12) {
  detail::require_rank(x, 2, "normalize_rows");
  const std::size_t r = x.shape()[0], c = x.shape()[1];
  const auto xv = x.value();
  std::vector<double> out(r * c), norms(r);
  for (std::size_t i = 0; i < r; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += xv[i * c + j] * xv[i * c + j];
    norms[i] = std::sqrt(s);
    if (!(norms[i] >= min_norm)) throw DegenerateProjectionError(i);
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = xv[i * c + j] / norms[i];
  }
  const std::size_t xid = x.id();
  return x.graph().record(Op::normalize_rows, x.shape(), std::move(out), {xid},
                          [=](Graph& g, std::size_t self) {
                            auto gx = g.grad_buffer(xid);
                            const auto& n = g.node(self);
                            for (std::size_t i = 0; i < r; ++i) {
                              // d(x/|x|) = (I - y yᵀ)/|x|
                              double dot = 0.0;
                              for (std::size_t j = 0; j < c; ++j)
                                dot += n.grad[i * c + j] * n.value[i * c + j];
                              for (std::size_t j = 0; j < c; ++j)
                                gx[i * c + j] +=
                                    (n.grad[i * c + j] - dot * n.value[i * c + j]) / norms[i];
                            }
                          });
}

// ---------------------------------------------------------------------------
// Elementwise

inline Var add(Var a, Var b) { return detail::binary(detail::BinaryKind::add, a, b); }
inline Var sub(Var a, Var b) { return detail::binary(detail::BinaryKind::sub, a, b); }
inline Var mul(Var a, Var b) { return detail::binary(detail::BinaryKind::mul, a, b); }

inline Var neg(Var x) {
  return detail::unary(Op::neg, x, [](double v, std::size_t) { return -v; },
                       [](double, double) { return -1.0; });
}

inline Var scale(Var x, double c) {
  return detail::unary(Op::scale, x, [c](double v, std::size_t) { return c * v; },
                       [c](double, double) { return c; });
}

inline Var add_scalar(Var x, double c) {
  return detail::unary(Op::add_scalar, x, [c](double v, std::size_t) { return v + c; },
                       [](double, double) { return 1.0; });
}

inline Var leaky_relu(Var x, double alpha = 0.2) {
  return detail::unary(
      Op::leaky_relu, x, [alpha](double v, std::size_t) { return v > 0.0 ? v : alpha * v; },
      [alpha](double v, double) { return v > 0.0 ? 1.0 : alpha; });
}

inline Var tanh(Var x) {
  return detail::unary(Op::tanh, x, [](double v, std::size_t) { return std::tanh(v); },
                       [](double, double y) { return 1.0 - y * y; });
}

inline Var exp(Var x) {
  return detail::unary(Op::exp, x, [](double v, std::size_t) { return std::exp(v); },
                       [](double, double y) { return y; });
}

inline Var log(Var x) {
  return detail::unary(
      Op::log, x,
      [](double v, std::size_t i) {
        if (!(v > 0.0)) throw DomainError("log of non-positive value", i);
        return std::log(v);
      },
      [](double v, double) { return 1.0 / v; });
}

inline Var square(Var x) {
  return detail::unary(Op::square, x, [](double v, std::size_t) { return v * v; },
                       [](double v, double) { return 2.0 * v; });
}

inline Var sqrt(Var x) {
  return detail::unary(
      Op::sqrt, x,
      [](double v, std::size_t i) {
        if (!(v > 0.0)) throw DomainError("sqrt of non-positive value", i);
        return std::sqrt(v);
      },
      [](double, double y) { return 0.5 / y; });
}

// log(1 + e^x), evaluated without overflow.
inline double softplus(double v) { return std::max(v, 0.0) + std::log1p(std::exp(-std::abs(v))); }

inline double sigmoid(double v) {
  if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}

inline Var softplus(Var x) {
  return detail::unary(Op::softplus, x, [](double v, std::size_t) { return softplus(v); },
                       [](double v, double) { return sigmoid(v); });
}

// ---------------------------------------------------------------------------
// Gradient routing

// Forward identity; the result is a constant as far as backward is concerned.
inline Var stop_gradient(Var x) {
  Graph& g = x.graph();
  Graph::Node& n = g.node(x.id());
  Var out = g.constant(n.shape, n.value);
  g.node(out.id()).op = Op::stop_gradient;
  return out;
}

// Forward value is `quantized`; the incoming gradient is passed unchanged to
// `pre` and nothing flows into `quantized` through this node.
inline Var straight_through(Var pre, Var quantized) {
  detail::require_same_graph(pre, quantized);
  if (pre.shape() != quantized.shape()) {
    throw DimensionError("straight_through: shapes " + to_string(pre.shape()) + " and " +
                         to_string(quantized.shape()) + " differ");
  }
  const std::size_t pid = pre.id();
  std::vector<double> v(quantized.value().begin(), quantized.value().end());
  return pre.graph().record(Op::straight_through, pre.shape(), std::move(v), {pid},
                            [pid](Graph& g, std::size_t self) {
                              detail::accumulate(g, pid, g.node(self).grad);
                            });
}

// ---------------------------------------------------------------------------
// Reductions. With no axis the result is a rank-0 scalar.

inline Var sum(Var x, std::optional<std::size_t> axis = std::nullopt) {
  return detail::reduce(detail::ReduceKind::sum, x, axis);
}
inline Var mean(Var x, std::optional<std::size_t> axis = std::nullopt) {
  return detail::reduce(detail::ReduceKind::mean, x, axis);
}
inline Var l2_norm_sq(Var x, std::optional<std::size_t> axis = std::nullopt) {
  return detail::reduce(detail::ReduceKind::l2_norm_sq, x, axis);
}

}  // namespace sqgan::ad

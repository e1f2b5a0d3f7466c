#pragma once

// Discrete optimal transport between two weighted point sets: an exact
// min-cost-flow solver for small instances, entropic Sinkhorn-Knopp scaling in
// both the plain and log domains, and the plan-weighted alignment loss.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "sqgan/autodiff.hpp"
#include "sqgan/errors.hpp"

namespace sqgan {

enum class Metric { euclidean, cosine };

inline std::string to_string(Metric m) { return m == Metric::euclidean ? "euclidean" : "cosine"; }

inline Metric metric_from_string(const std::string& s) {
  if (s == "euclidean") return Metric::euclidean;
  if (s == "cosine" || s == "cosine_distance") return Metric::cosine;
  throw ConfigError("unknown metric '" + s + "'");
}

struct CostMatrix {
  ad::Tensor values;  // n × m, finite and non-negative
  Metric metric = Metric::euclidean;

  std::size_t rows() const { return values.rows(); }
  std::size_t cols() const { return values.cols(); }
};

struct TransportPlan {
  ad::Tensor coupling;  // n × m, non-negative
  std::vector<double> p, q;
};

inline std::vector<double> uniform_marginal(std::size_t n) {
  return std::vector<double>(n, 1.0 / static_cast<double>(n));
}

// Scales costs so the largest entry is 1; an all-zero matrix is returned as is.
inline CostMatrix normalized(CostMatrix c) {
  double mx = 0.0;
  for (double v : c.values.values()) mx = std::max(mx, v);
  if (mx > 0.0)
    for (double& v : c.values.values()) v /= mx;
  return c;
}

inline double frobenius(const ad::Tensor& plan, const ad::Tensor& cost) {
  double s = 0.0;
  for (std::size_t i = 0; i < plan.size(); ++i) s += plan[i] * cost[i];
  return s;
}

// h(γ) = −Σ γ log γ with 0 log 0 = 0.
inline double entropy(const ad::Tensor& plan) {
  double h = 0.0;
  for (double v : plan.values())
    if (v > 0.0) h -= v * std::log(v);
  return h;
}

// Total absolute deviation of row sums from p plus column sums from q (an L1
// distance, so it also bounds every individual entry's violation).
inline double marginal_violation(const ad::Tensor& plan, std::span<const double> p,
                                 std::span<const double> q) {
  const std::size_t n = plan.rows(), m = plan.cols();
  double err = 0.0;
  std::vector<double> col(m, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double r = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      r += plan(i, j);
      col[j] += plan(i, j);
    }
    err += std::abs(r - p[i]);
  }
  for (std::size_t j = 0; j < m; ++j) err += std::abs(col[j] - q[j]);
  return err;
}

namespace detail {

inline void check_simplex(std::span<const double> w, const char* name) {
  double s = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (!(w[i] >= -1e-9)) {
      throw InvalidMarginalError(std::string(name) + " has negative entry at index " +
                                 std::to_string(i));
    }
    s += w[i];
  }
  if (w.empty() || std::abs(s - 1.0) > 1e-9) {
    throw InvalidMarginalError(std::string(name) + " sums to " + std::to_string(s) +
                               ", expected 1");
  }
}

inline void check_problem(const CostMatrix& c, std::span<const double> p,
                          std::span<const double> q) {
  if (c.values.rank() != 2 || c.rows() != p.size() || c.cols() != q.size()) {
    throw DimensionError("cost matrix " + ad::to_string(c.values.shape()) +
                         " does not match marginals of length " + std::to_string(p.size()) +
                         " and " + std::to_string(q.size()));
  }
  for (std::size_t i = 0; i < c.values.size(); ++i) {
    if (!std::isfinite(c.values[i]) || c.values[i] < 0.0) {
      throw DomainError("cost matrix entries must be finite and non-negative", i);
    }
  }
  check_simplex(p, "p");
  check_simplex(q, "q");
}

inline double log_sum_exp(std::span<const double> x) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double v : x) mx = std::max(mx, v);
  if (!std::isfinite(mx)) return mx;
  double s = 0.0;
  for (double v : x) s += std::exp(v - mx);
  return mx + std::log(s);
}

}  // namespace detail

struct ExactOt {
  double value = 0.0;
  TransportPlan plan;
};

// Exact optimum of the transportation LP by successive shortest augmenting
// paths (Bellman-Ford on the residual network). Intended for oracle-scale
// instances, n·m ≤ 64.
inline ExactOt exact_ot(const CostMatrix& cost, std::span<const double> p,
                        std::span<const double> q) {
  detail::check_problem(cost, p, q);
  const std::size_t n = p.size(), m = q.size();
  if (n * m > 64) {
    throw DimensionError("exact_ot is limited to n*m <= 64, got " + std::to_string(n) + "x" +
                         std::to_string(m));
  }
  struct Edge {
    std::size_t to;
    double cap, cost;
  };
  const std::size_t source = n + m, sink = n + m + 1, nodes = n + m + 2;
  std::vector<Edge> edges;
  std::vector<std::vector<std::size_t>> adj(nodes);
  auto add_edge = [&](std::size_t a, std::size_t b, double cap, double c) {
    adj[a].push_back(edges.size());
    edges.push_back({b, cap, c});
    adj[b].push_back(edges.size());
    edges.push_back({a, 0.0, -c});
  };
  for (std::size_t i = 0; i < n; ++i) add_edge(source, i, p[i], 0.0);
  std::vector<std::size_t> cell_edge(n * m);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      cell_edge[i * m + j] = edges.size();
      add_edge(i, n + j, std::numeric_limits<double>::infinity(), cost.values(i, j));
    }
  for (std::size_t j = 0; j < m; ++j) add_edge(n + j, sink, q[j], 0.0);

  constexpr double kResidualEps = 1e-15;
  const double target = std::min(std::accumulate(p.begin(), p.end(), 0.0),
                                 std::accumulate(q.begin(), q.end(), 0.0));
  double flow = 0.0;
  const std::size_t max_rounds = 16 * nodes * nodes * (n * m + 1);
  for (std::size_t round = 0; round < max_rounds && flow < target - kResidualEps; ++round) {
    std::vector<double> dist(nodes, std::numeric_limits<double>::infinity());
    std::vector<std::size_t> via(nodes, edges.size());
    dist[source] = 0.0;
    for (std::size_t pass = 0; pass + 1 < nodes; ++pass) {
      bool changed = false;
      for (std::size_t a = 0; a < nodes; ++a) {
        if (!std::isfinite(dist[a])) continue;
        for (std::size_t e : adj[a]) {
          if (edges[e].cap <= kResidualEps) continue;
          const double nd = dist[a] + edges[e].cost;
          if (nd < dist[edges[e].to] - 1e-15) {
            dist[edges[e].to] = nd;
            via[edges[e].to] = e;
            changed = true;
          }
        }
      }
      if (!changed) break;
    }
    if (!std::isfinite(dist[sink])) break;
    double push = target - flow;
    for (std::size_t v = sink; v != source; v = edges[via[v] ^ 1].to)
      push = std::min(push, edges[via[v]].cap);
    for (std::size_t v = sink; v != source; v = edges[via[v] ^ 1].to) {
      edges[via[v]].cap -= push;
      edges[via[v] ^ 1].cap += push;
    }
    flow += push;
  }

  ExactOt r;
  r.plan.p.assign(p.begin(), p.end());
  r.plan.q.assign(q.begin(), q.end());
  r.plan.coupling = ad::Tensor({n, m});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j)
      r.plan.coupling(i, j) = std::max(0.0, edges[cell_edge[i * m + j] ^ 1].cap);
  r.value = frobenius(r.plan.coupling, cost.values);
  return r;
}

struct SinkhornState {
  std::vector<double> u, v;          // scalings; may overflow in log-domain runs
  std::vector<double> log_u, log_v;  // always valid
  ad::Tensor gibbs;                  // K = exp(−C/η); left empty by the log-domain solver
  ad::Tensor plan;                   // γ = diag(u) K diag(v)
  std::vector<double> p, q;
  double eta = 0.0;
  std::size_t iterations = 0;
  double marginal_error = std::numeric_limits<double>::infinity();
  bool converged = false;
  bool log_domain = false;
  std::vector<double> error_history;  // marginal_error after each iteration

  TransportPlan transport_plan() const { return {plan, p, q}; }
  double transport_cost(const CostMatrix& c) const { return frobenius(plan, c.values); }
  // ⟨γ, C⟩ − η h(γ)
  double entropic_objective(const CostMatrix& c) const {
    return transport_cost(c) - eta * entropy(plan);
  }
};

struct SinkhornOptions {
  double eta = 0.05;
  double tol = 1e-6;
  std::size_t max_iter = 1000;
};

// Sinkhorn-Knopp scaling from v = 1: u ← p ⊘ Kv, v ← q ⊘ Kᵀu until the
// total (L1) marginal violation is at most tol. Hitting max_iter leaves
// `converged` false rather than throwing.
inline SinkhornState sinkhorn(const CostMatrix& cost, std::span<const double> p,
                              std::span<const double> q, double eta, double tol,
                              std::size_t max_iter) {
  detail::check_problem(cost, p, q);
  if (!(eta > 0.0)) throw Error("sinkhorn: eta must be positive");
  if (!(tol > 0.0)) throw Error("sinkhorn: tol must be positive");
  const std::size_t n = p.size(), m = q.size();
  SinkhornState st;
  st.p.assign(p.begin(), p.end());
  st.q.assign(q.begin(), q.end());
  st.eta = eta;
  st.gibbs = ad::Tensor({n, m});
  for (std::size_t i = 0; i < n * m; ++i) st.gibbs[i] = std::exp(-cost.values[i] / eta);
  const ad::Tensor& K = st.gibbs;
  for (std::size_t i = 0; i < n; ++i) {
    if (std::all_of(K.row(i).begin(), K.row(i).end(), [](double x) { return x == 0.0; })) {
      throw KernelUnderflowError("Gibbs kernel row " + std::to_string(i) +
                                 " underflowed to zero; eta is too small for the plain solver, "
                                 "use the log-domain solver");
    }
  }
  for (std::size_t j = 0; j < m; ++j) {
    bool any = false;
    for (std::size_t i = 0; i < n && !any; ++i) any = K(i, j) != 0.0;
    if (!any) {
      throw KernelUnderflowError("Gibbs kernel column " + std::to_string(j) +
                                 " underflowed to zero; eta is too small for the plain solver, "
                                 "use the log-domain solver");
    }
  }

  st.u.assign(n, 1.0);
  st.v.assign(m, 1.0);
  std::vector<double> kv(n), ktu(m);
  auto k_times_v = [&] {
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < m; ++j) s += K(i, j) * st.v[j];
      kv[i] = s;
    }
  };
  k_times_v();
  for (std::size_t it = 1; it <= max_iter; ++it) {
    for (std::size_t i = 0; i < n; ++i) st.u[i] = p[i] / kv[i];
    std::fill(ktu.begin(), ktu.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) ktu[j] += K(i, j) * st.u[i];
    for (std::size_t j = 0; j < m; ++j) st.v[j] = q[j] / ktu[j];
    // Columns now match q exactly; the row sums u ⊙ Kv are the remaining
    // violation, and Kv is reused by the next u-update.
    k_times_v();
    double err = 0.0;
    for (std::size_t i = 0; i < n; ++i) err += std::abs(st.u[i] * kv[i] - p[i]);
    st.iterations = it;
    st.marginal_error = err;
    st.error_history.push_back(err);
    if (!std::isfinite(err)) {
      throw KernelUnderflowError("plain Sinkhorn scalings overflowed; use the log-domain solver");
    }
    if (err <= tol) {
      st.converged = true;
      break;
    }
  }
  st.plan = ad::Tensor({n, m});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) st.plan(i, j) = st.u[i] * K(i, j) * st.v[j];
  st.marginal_error = marginal_violation(st.plan, p, q);
  st.log_u.resize(n);
  st.log_v.resize(m);
  for (std::size_t i = 0; i < n; ++i) st.log_u[i] = std::log(st.u[i]);
  for (std::size_t j = 0; j < m; ++j) st.log_v[j] = std::log(st.v[j]);
  return st;
}

inline SinkhornState sinkhorn(const CostMatrix& cost, std::span<const double> p,
                              std::span<const double> q, const SinkhornOptions& o = {}) {
  return sinkhorn(cost, p, q, o.eta, o.tol, o.max_iter);
}

// Same fixed point as sinkhorn(), iterated on log-scalings with log-sum-exp so
// that tiny eta cannot underflow the kernel.
inline SinkhornState log_domain_sinkhorn(const CostMatrix& cost, std::span<const double> p,
                                         std::span<const double> q, double eta, double tol,
                                         std::size_t max_iter) {
  detail::check_problem(cost, p, q);
  if (!(eta > 0.0)) throw Error("log_domain_sinkhorn: eta must be positive");
  if (!(tol > 0.0)) throw Error("log_domain_sinkhorn: tol must be positive");
  const std::size_t n = p.size(), m = q.size();
  SinkhornState st;
  st.log_domain = true;
  st.p.assign(p.begin(), p.end());
  st.q.assign(q.begin(), q.end());
  st.eta = eta;
  ad::Tensor logk({n, m});
  for (std::size_t i = 0; i < n * m; ++i) logk[i] = -cost.values[i] / eta;
  std::vector<double> log_p(n), log_q(m);
  for (std::size_t i = 0; i < n; ++i) log_p[i] = std::log(p[i]);
  for (std::size_t j = 0; j < m; ++j) log_q[j] = std::log(q[j]);

  st.log_u.assign(n, 0.0);
  st.log_v.assign(m, 0.0);
  std::vector<double> buf(std::max(n, m)), lse_row(n);
  auto row_lse = [&] {
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < m; ++j) buf[j] = logk(i, j) + st.log_v[j];
      lse_row[i] = detail::log_sum_exp({buf.data(), m});
    }
  };
  row_lse();
  for (std::size_t it = 1; it <= max_iter; ++it) {
    for (std::size_t i = 0; i < n; ++i) st.log_u[i] = log_p[i] - lse_row[i];
    for (std::size_t j = 0; j < m; ++j) {
      for (std::size_t i = 0; i < n; ++i) buf[i] = logk(i, j) + st.log_u[i];
      st.log_v[j] = log_q[j] - detail::log_sum_exp({buf.data(), n});
    }
    row_lse();
    double err = 0.0;
    for (std::size_t i = 0; i < n; ++i) err += std::abs(std::exp(st.log_u[i] + lse_row[i]) - p[i]);
    st.iterations = it;
    st.marginal_error = err;
    st.error_history.push_back(err);
    if (err <= tol) {
      st.converged = true;
      break;
    }
  }
  st.plan = ad::Tensor({n, m});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) st.plan(i, j) = std::exp(st.log_u[i] + logk(i, j) + st.log_v[j]);
  st.marginal_error = marginal_violation(st.plan, p, q);
  st.u.resize(n);
  st.v.resize(m);
  for (std::size_t i = 0; i < n; ++i) st.u[i] = std::exp(st.log_u[i]);
  for (std::size_t j = 0; j < m; ++j) st.v[j] = std::exp(st.log_v[j]);
  return st;
}

inline SinkhornState log_domain_sinkhorn(const CostMatrix& cost, std::span<const double> p,
                                         std::span<const double> q,
                                         const SinkhornOptions& o = {}) {
  return log_domain_sinkhorn(cost, p, q, o.eta, o.tol, o.max_iter);
}

// ---------------------------------------------------------------------------
// Pairwise token distances

inline double token_distance(std::span<const double> a, std::span<const double> b, Metric metric) {
  if (metric == Metric::euclidean) {
    double s = 0.0;
    for (std::size_t e = 0; e < a.size(); ++e) s += (a[e] - b[e]) * (a[e] - b[e]);
    return std::sqrt(s);
  }
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t e = 0; e < a.size(); ++e) {
    dot += a[e] * b[e];
    na += a[e] * a[e];
    nb += b[e] * b[e];
  }
  na = std::sqrt(na);
  nb = std::sqrt(nb);
  if (na < 1e-12 || nb < 1e-12) return 1.0;
  return std::clamp(1.0 - dot / (na * nb), 0.0, 2.0);
}

namespace detail {

struct PairLayout {
  std::size_t batch, s, l, d;
  ad::Shape out_shape;
};

inline PairLayout pair_layout(const ad::Shape& a, const ad::Shape& b) {
  auto fail = [&] {
    return DimensionError("pairwise_cost: incompatible token sets " + ad::to_string(a) + " and " +
                          ad::to_string(b));
  };
  if (a.size() == 2 && b.size() == 2) {
    if (a[1] != b[1]) throw fail();
    return {1, a[0], b[0], a[1], {a[0], b[0]}};
  }
  if (a.size() == 3 && b.size() == 3) {
    if (a[0] != b[0] || a[2] != b[2]) throw fail();
    return {a[0], a[1], b[1], a[2], {a[0], a[1], b[1]}};
  }
  throw fail();
}

}  // namespace detail

// Distances between every token of `a` and every token of `b`, pair by pair.
// Accepts [s×d] with [l×d] giving [s×l], or batched [B×s×d] with [B×l×d]
// giving [B×s×l]. Differentiable in both arguments; at coincident points
// (euclidean) or zero-norm tokens (cosine) the gradient is taken as zero.
inline ad::Var pairwise_cost(ad::Var a, ad::Var b, Metric metric) {
  const detail::PairLayout L = detail::pair_layout(a.shape(), b.shape());
  const auto av = a.value();
  const auto bv = b.value();
  std::vector<double> out(L.batch * L.s * L.l);
  for (std::size_t n = 0; n < L.batch; ++n)
    for (std::size_t j = 0; j < L.s; ++j)
      for (std::size_t k = 0; k < L.l; ++k)
        out[(n * L.s + j) * L.l + k] =
            token_distance(av.subspan((n * L.s + j) * L.d, L.d), bv.subspan((n * L.l + k) * L.d, L.d),
                           metric);
  const std::size_t aid = a.id(), bid = b.id();
  return a.graph().record(
      ad::Op::custom, L.out_shape, std::move(out), {aid, bid},
      [=](ad::Graph& g, std::size_t self) {
        const auto& node = g.node(self);
        const auto& A = g.node(aid).value;
        const auto& B = g.node(bid).value;
        auto ga = g.grad_buffer(aid);
        auto gb = g.grad_buffer(bid);
        std::vector<double> dir(L.d);
        for (std::size_t n = 0; n < L.batch; ++n) {
          for (std::size_t j = 0; j < L.s; ++j) {
            const double* x = A.data() + (n * L.s + j) * L.d;
            for (std::size_t k = 0; k < L.l; ++k) {
              const double* y = B.data() + (n * L.l + k) * L.d;
              const std::size_t o = (n * L.s + j) * L.l + k;
              const double go = node.grad[o];
              if (go == 0.0) continue;
              if (metric == Metric::euclidean) {
                const double d = node.value[o];
                if (d <= 0.0) continue;
                for (std::size_t e = 0; e < L.d; ++e) dir[e] = (x[e] - y[e]) / d;
                if (!ga.empty())
                  for (std::size_t e = 0; e < L.d; ++e) ga[(n * L.s + j) * L.d + e] += go * dir[e];
                if (!gb.empty())
                  for (std::size_t e = 0; e < L.d; ++e) gb[(n * L.l + k) * L.d + e] -= go * dir[e];
              } else {
                double dot = 0.0, nx = 0.0, ny = 0.0;
                for (std::size_t e = 0; e < L.d; ++e) {
                  dot += x[e] * y[e];
                  nx += x[e] * x[e];
                  ny += y[e] * y[e];
                }
                nx = std::sqrt(nx);
                ny = std::sqrt(ny);
                if (nx < 1e-12 || ny < 1e-12) continue;
                const double c = dot / (nx * ny);
                // d = 1 − c; ∂c/∂x = (ŷ − c x̂)/|x|
                if (!ga.empty())
                  for (std::size_t e = 0; e < L.d; ++e)
                    ga[(n * L.s + j) * L.d + e] -= go * (y[e] / ny - c * x[e] / nx) / nx;
                if (!gb.empty())
                  for (std::size_t e = 0; e < L.d; ++e)
                    gb[(n * L.l + k) * L.d + e] -= go * (x[e] / nx - c * y[e] / ny) / ny;
              }
            }
          }
        }
      });
}

// Numeric cost matrix between two token sets [s×d] and [l×d].
inline CostMatrix pairwise_cost_matrix(const ad::Tensor& a, const ad::Tensor& b, Metric metric) {
  if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.cols()) {
    throw DimensionError("cost matrix: token sets " + ad::to_string(a.shape()) + " and " +
                         ad::to_string(b.shape()) + " have different embedding widths");
  }
  CostMatrix c{ad::Tensor({a.rows(), b.rows()}), metric};
  for (std::size_t j = 0; j < a.rows(); ++j)
    for (std::size_t k = 0; k < b.rows(); ++k) c.values(j, k) = token_distance(a.row(j), b.row(k), metric);
  return c;
}

// Σ γ*ᵢⱼ d(tᵢ, fⱼ) averaged over pairs, plans held constant. T and F are
// [s×d]/[l×d] with one plan, or [B×s×d]/[B×l×d] with B plans.
inline ad::Var ot_loss(ad::Var T, ad::Var F, std::span<const TransportPlan> plans, Metric metric) {
  ad::Var cost = pairwise_cost(T, F, metric);
  const detail::PairLayout L = detail::pair_layout(T.shape(), F.shape());
  if (plans.size() != L.batch) {
    throw DimensionError("ot_loss: " + std::to_string(plans.size()) + " plans for " +
                         std::to_string(L.batch) + " pairs");
  }
  std::vector<double> weights;
  weights.reserve(L.batch * L.s * L.l);
  for (const auto& plan : plans) {
    if (plan.coupling.rank() != 2 || plan.coupling.rows() != L.s || plan.coupling.cols() != L.l) {
      throw DimensionError("ot_loss: plan " + ad::to_string(plan.coupling.shape()) +
                           " does not match token counts " + std::to_string(L.s) + "x" +
                           std::to_string(L.l));
    }
    weights.insert(weights.end(), plan.coupling.values().begin(), plan.coupling.values().end());
  }
  ad::Var w = T.graph().constant(cost.shape(), std::move(weights));
  return ad::scale(ad::sum(ad::mul(cost, w)), 1.0 / static_cast<double>(L.batch));
}

inline ad::Var ot_loss(ad::Var T, ad::Var F, const TransportPlan& plan, Metric metric) {
  return ot_loss(T, F, std::span<const TransportPlan>(&plan, 1), metric);
}

}  // namespace sqgan

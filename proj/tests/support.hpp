#pragma once

// Test-only oracles shared by the unit suites and the acceptance binary.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <vector>

#include "sqgan/autodiff.hpp"
#include "sqgan/rng.hpp"

namespace sqgan::testing {

inline ad::Tensor random_tensor(const ad::Shape& shape, Rng& rng, double sd = 1.0) {
  ad::Tensor t(shape);
  for (double& v : t.values()) v = rng.normal(0.0, sd);
  return t;
}

inline ad::Tensor positive_tensor(const ad::Shape& shape, Rng& rng, double lo = 0.2, double hi = 3.0) {
  ad::Tensor t(shape);
  for (double& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

using ScalarFn = std::function<ad::Var(ad::Graph&, const std::vector<ad::Var>&)>;

struct GradCheckResult {
  double relative_error = 0.0;  // ‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖)
  double analytic_norm = 0.0;
  double numeric_norm = 0.0;
};

// Compares reverse-mode gradients of `f` against central differences of
// `oracle` over every input element. The two differ when `f` routes
// gradients through stop_gradient and the oracle holds that branch fixed.
inline GradCheckResult gradcheck_against(const ScalarFn& f, const ScalarFn& oracle, std::vector<ad::Tensor> inputs,
                                         double h = 1e-5) {
  std::vector<double> analytic;
  {
    for (auto& t : inputs) t.set_requires_grad(true);
    ad::Graph g;
    std::vector<ad::Var> vars;
    for (auto& t : inputs) vars.push_back(g.parameter(t));
    ad::Var out = f(g, vars);
    for (auto& t : inputs) t.zero_grad();
    g.backward(out);
    for (auto& t : inputs)
      for (double v : t.grad()) analytic.push_back(v);
  }
  auto eval = [&]() {
    ad::Graph g;
    std::vector<ad::Var> vars;
    for (auto& t : inputs) vars.push_back(g.constant(t));
    return oracle(g, vars).item();
  };
  std::vector<double> numeric;
  for (auto& t : inputs) {
    for (std::size_t i = 0; i < t.size(); ++i) {
      const double x = t[i];
      const double step = h * std::max(1.0, std::abs(x));
      t[i] = x + step;
      const double fp = eval();
      t[i] = x - step;
      const double fm = eval();
      t[i] = x;
      numeric.push_back((fp - fm) / (2.0 * step));
    }
  }
  GradCheckResult r;
  double diff = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    diff += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
    r.analytic_norm += analytic[i] * analytic[i];
    r.numeric_norm += numeric[i] * numeric[i];
  }
  diff = std::sqrt(diff);
  r.analytic_norm = std::sqrt(r.analytic_norm);
  r.numeric_norm = std::sqrt(r.numeric_norm);
  const double scale = std::max(r.analytic_norm, r.numeric_norm);
  r.relative_error = scale < 1e-12 ? diff : diff / scale;
  return r;
}

inline GradCheckResult gradcheck(const ScalarFn& f, std::vector<ad::Tensor> inputs, double h = 1e-5) {
  return gradcheck_against(f, f, std::move(inputs), h);
}

// Same comparison for parameters that live outside the graph (network
// weights, codebooks). `loss` builds the scalar in a fresh graph each call.
inline GradCheckResult parameter_gradcheck(const std::vector<ad::Tensor*>& params,
                                           const std::function<ad::Var(ad::Graph&)>& loss, double h = 1e-5) {
  for (ad::Tensor* p : params) p->zero_grad();
  {
    ad::Graph g;
    g.backward(loss(g));
  }
  auto eval = [&]() {
    ad::Graph g;
    return loss(g).item();
  };
  GradCheckResult r;
  double diff = 0.0;
  for (ad::Tensor* p : params) {
    for (std::size_t i = 0; i < p->size(); ++i) {
      const double x = (*p)[i];
      const double step = h * std::max(1.0, std::abs(x));
      (*p)[i] = x + step;
      const double fp = eval();
      (*p)[i] = x - step;
      const double fm = eval();
      (*p)[i] = x;
      const double numeric = (fp - fm) / (2.0 * step);
      const double analytic = p->grad()[i];
      diff += (analytic - numeric) * (analytic - numeric);
      r.analytic_norm += analytic * analytic;
      r.numeric_norm += numeric * numeric;
    }
  }
  diff = std::sqrt(diff);
  r.analytic_norm = std::sqrt(r.analytic_norm);
  r.numeric_norm = std::sqrt(r.numeric_norm);
  const double scale = std::max(r.analytic_norm, r.numeric_norm);
  r.relative_error = scale < 1e-12 ? diff : diff / scale;
  return r;
}

}  // namespace sqgan::testing

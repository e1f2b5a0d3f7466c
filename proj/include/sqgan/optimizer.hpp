#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "sqgan/autodiff.hpp"

namespace sqgan {

struct AdamOptions {
  double lr = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adaptive moment estimation with bias correction. Parameters are held by
// pointer and must outlive the optimizer.
class Adam {
 public:
  Adam() = default;
  Adam(std::vector<ad::Tensor*> params, AdamOptions opts) : params_(std::move(params)), opts_(opts) {
    for (ad::Tensor* p : params_) {
      m_.emplace_back(p->size(), 0.0);
      v_.emplace_back(p->size(), 0.0);
    }
  }

  const AdamOptions& options() const { return opts_; }
  std::size_t steps() const { return t_; }

  void zero_grad() {
    for (ad::Tensor* p : params_) p->zero_grad();
  }

  double grad_norm() const {
    double s = 0.0;
    for (const ad::Tensor* p : params_)
      for (double g : p->grad()) s += g * g;
    return std::sqrt(s);
  }

  void step() {
    ++t_;
    const double c1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(t_));
    for (std::size_t k = 0; k < params_.size(); ++k) {
      ad::Tensor& p = *params_[k];
      if (!p.has_grad()) continue;
      auto g = p.grad();
      auto x = p.data();
      for (std::size_t i = 0; i < x.size(); ++i) {
        m_[k][i] = opts_.beta1 * m_[k][i] + (1.0 - opts_.beta1) * g[i];
        v_[k][i] = opts_.beta2 * v_[k][i] + (1.0 - opts_.beta2) * g[i] * g[i];
        x[i] -= opts_.lr * (m_[k][i] / c1) / (std::sqrt(v_[k][i] / c2) + opts_.eps);
      }
    }
  }

 private:
  std::vector<ad::Tensor*> params_;
  AdamOptions opts_;
  std::vector<std::vector<double>> m_, v_;
  std::size_t t_ = 0;
};

}  // namespace sqgan

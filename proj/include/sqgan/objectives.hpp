#pragma once

// Adversarial losses, latent consistency regularization and its quantized
// counterpart, and the generator/discriminator totals.
//
// Reduction convention: expectations are batch means and squared norms are
// means over the non-batch elements.

#include <string>
#include <vector>

#include "sqgan/autodiff.hpp"
#include "sqgan/errors.hpp"
#include "sqgan/networks.hpp"
#include "sqgan/quantizer.hpp"
#include "sqgan/rng.hpp"

namespace sqgan {

struct LossWeights {
  double lambda_sq = 0.01;
  double lambda_qcr = 0.01;
  double lambda_fd = 10.0;
  double lambda_g = 0.5;
  double sigma = 0.1;
  double beta = 0.25;

  void validate() const {
    for (double v : {lambda_sq, lambda_qcr, lambda_fd, lambda_g, sigma, beta})
      if (!(v >= 0.0)) throw ConfigError("loss weights must be non-negative");
  }
};

// E[1 − log σ(logit)] = E[1 + softplus(−logit)]
inline ad::Var adv_g(ad::Var fake_logits) {
  return ad::add_scalar(ad::mean(ad::softplus(ad::neg(fake_logits))), 1.0);
}

// −E[log σ(real)] − E[log(1 − σ(fake))] = E[softplus(−real)] + E[softplus(fake)]
inline ad::Var adv_d(ad::Var real_logits, ad::Var fake_logits) {
  return ad::add(ad::mean(ad::softplus(ad::neg(real_logits))),
                 ad::mean(ad::softplus(fake_logits)));
}

inline ad::Var cr_d(ad::Var logits_a, ad::Var logits_b, double lambda_fd) {
  if (logits_a.shape() != logits_b.shape()) {
    throw DimensionError("cr_d: logit batches " + ad::to_string(logits_a.shape()) + " and " +
                         ad::to_string(logits_b.shape()) + " differ");
  }
  return ad::scale(ad::mean(ad::square(ad::sub(logits_a, logits_b))), lambda_fd);
}

// Diversity reward on the generator; never positive.
inline ad::Var cr_g(ad::Var x_a, ad::Var x_b, double lambda_g) {
  if (x_a.shape() != x_b.shape()) {
    throw DimensionError("cr_g: sample batches " + ad::to_string(x_a.shape()) + " and " +
                         ad::to_string(x_b.shape()) + " differ");
  }
  return ad::scale(ad::mean(ad::square(ad::sub(x_a, x_b))), -lambda_g);
}

inline ad::Tensor gaussian_like(const ad::Tensor& like, double stddev, Rng& rng) {
  ad::Tensor t(like.shape());
  for (double& v : t.values()) v = rng.normal(0.0, stddev);
  return t;
}

struct QcrTerm {
  ad::Var loss;
  std::vector<std::size_t> indices_clean;
  std::vector<std::size_t> indices_perturbed;
};

// E‖f_D(g(Q(f_W(z)))) − f_D(g(Q(f_W(z + ε))))‖² with the generator path held
// fixed; only discriminator parameters receive gradients.
inline QcrTerm qcr_d(ad::Graph& g, GanModel& model, const ad::Tensor& z, const ad::Tensor& eps) {
  if (z.shape() != eps.shape()) throw DimensionError("qcr_d: z and ε shapes differ");
  ad::Tensor z_pert = z;
  for (std::size_t i = 0; i < z.size(); ++i) z_pert[i] += eps[i];
  ad::Var codes = g.parameter(model.codebook.codes, false);
  auto fake = [&](const ad::Tensor& latent, std::vector<std::size_t>& idx) {
    ad::Var w = map_style(g.constant(latent), model, false);
    StyleQuantization q = quantize_styles(w, codes);
    idx = q.indices;
    ad::Var x = generate(q.proxy, model, false);
    return ad::stop_gradient(x);
  };
  QcrTerm t;
  ad::Var xa = fake(z, t.indices_clean);
  ad::Var xb = fake(z_pert, t.indices_perturbed);
  t.loss = ad::mean(ad::square(ad::sub(discriminate(xa, model), discriminate(xb, model))));
  return t;
}

// Draws an independent ε ~ N(0, σ²I) per sample.
inline QcrTerm qcr_d(ad::Graph& g, GanModel& model, const ad::Tensor& z, double sigma, Rng& rng) {
  if (!(sigma > 0.0)) throw Error("qcr_d: sigma must be positive");
  return qcr_d(g, model, z, gaussian_like(z, sigma, rng));
}

inline ad::Var total_g(ad::Var adv, ad::Var sq, ad::Var uniformity, double lambda_sq) {
  return ad::add(adv, ad::scale(ad::add(sq, uniformity), lambda_sq));
}

inline ad::Var total_d(ad::Var adv, ad::Var qcr, double lambda_qcr) {
  return ad::add(adv, ad::scale(qcr, lambda_qcr));
}

}  // namespace sqgan

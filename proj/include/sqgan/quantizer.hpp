#pragma once

// Style-space quantization: contiguous sub-vector split, nearest-code lookup
// against a shared learnable codebook, straight-through proxy composition,
// and the two codebook regularizers (quantization/commitment and hyperspherical
// uniformity).

#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "sqgan/autodiff.hpp"
#include "sqgan/errors.hpp"
#include "sqgan/rng.hpp"

namespace sqgan {

struct Codebook {
  ad::Tensor codes;       // k × d_c
  ad::Tensor projection;  // d_p × d_c, maps codes onto the sphere before normalization
  double rbf_scale = 2.0;

  std::size_t size() const { return codes.rows(); }
  std::size_t code_dim() const { return codes.cols(); }
  std::size_t projection_dim() const { return projection.rows(); }

  // Codes ~ N(0, 1/d_c); projection = I + N(0, noise²) (square when d_p == d_c).
  static Codebook random(std::size_t k, std::size_t code_dim, std::size_t projection_dim,
                         Rng& rng, double rbf_scale = 2.0, double projection_noise = 0.01) {
    Codebook cb;
    cb.codes = ad::Tensor({k, code_dim});
    const double sd = 1.0 / std::sqrt(static_cast<double>(code_dim));
    for (double& v : cb.codes.values()) v = rng.normal(0.0, sd);
    cb.projection = ad::Tensor({projection_dim, code_dim});
    for (std::size_t i = 0; i < projection_dim; ++i)
      for (std::size_t j = 0; j < code_dim; ++j)
        cb.projection(i, j) = (i == j ? 1.0 : 0.0) + rng.normal(0.0, projection_noise);
    cb.rbf_scale = rbf_scale;
    cb.codes.set_requires_grad(true);
    cb.projection.set_requires_grad(true);
    return cb;
  }
};

// Partition of a style vector into s equal contiguous sub-vectors.
inline std::vector<std::vector<double>> split(std::span<const double> w, std::size_t s) {
  if (s == 0 || w.size() % s != 0) {
    throw DimensionError("cannot split style vector of length " + std::to_string(w.size()) +
                         " into " + std::to_string(s) + " sub-vectors");
  }
  const std::size_t d = w.size() / s;
  std::vector<std::vector<double>> out(s);
  for (std::size_t i = 0; i < s; ++i) out[i].assign(w.begin() + i * d, w.begin() + (i + 1) * d);
  return out;
}

struct CodeMatch {
  std::size_t index = 0;
  double distance_sq = 0.0;
};

// Nearest codebook row by Euclidean distance, lowest index on ties.
inline CodeMatch nearest_code(std::span<const double> sub, const ad::Tensor& codes) {
  if (codes.rank() != 2 || codes.rows() == 0) throw DimensionError("empty codebook");
  if (sub.size() != codes.cols()) {
    throw DimensionError("sub-vector length " + std::to_string(sub.size()) +
                         " does not match code dimension " + std::to_string(codes.cols()));
  }
  CodeMatch best{0, std::numeric_limits<double>::infinity()};
  for (std::size_t j = 0; j < codes.rows(); ++j) {
    const auto c = codes.row(j);
    double d = 0.0;
    for (std::size_t e = 0; e < sub.size(); ++e) d += (sub[e] - c[e]) * (sub[e] - c[e]);
    if (d < best.distance_sq) best = {j, d};
  }
  return best;
}

struct QuantizedSub {
  std::size_t index;
  std::vector<double> code;
};

inline QuantizedSub quantize(std::span<const double> sub, const Codebook& codebook) {
  const CodeMatch m = nearest_code(sub, codebook.codes);
  const auto row = codebook.codes.row(m.index);
  return {m.index, std::vector<double>(row.begin(), row.end())};
}

// Full split/quantize/concatenate record for one style vector.
struct QuantizedStyle {
  std::vector<double> pre;
  std::vector<std::vector<double>> sub_vectors;
  std::vector<std::size_t> indices;
  std::vector<std::vector<double>> quantized_subs;
  std::vector<double> proxy;
};

inline QuantizedStyle quantize_style(std::span<const double> w, const Codebook& codebook) {
  const std::size_t d_c = codebook.code_dim();
  if (d_c == 0 || w.size() % d_c != 0) {
    throw DimensionError("style length " + std::to_string(w.size()) +
                         " is not a multiple of code dimension " + std::to_string(d_c));
  }
  QuantizedStyle q;
  q.pre.assign(w.begin(), w.end());
  q.sub_vectors = split(w, w.size() / d_c);
  for (const auto& sub : q.sub_vectors) {
    QuantizedSub qs = quantize(sub, codebook);
    q.indices.push_back(qs.index);
    q.proxy.insert(q.proxy.end(), qs.code.begin(), qs.code.end());
    q.quantized_subs.push_back(std::move(qs.code));
  }
  return q;
}

// Batched quantization wired into a graph.
struct StyleQuantization {
  ad::Var sub_vectors;  // (n·s) × d_c pre-quantization sub-vectors, flows into the mapper
  ad::Var selected;     // (n·s) × d_c selected codebook rows, flows into the codebook
  ad::Var proxy;        // n × d_w, forward = concatenated codes, backward = straight-through
  std::vector<std::size_t> indices;  // n·s, row-major by (sample, slot)
  std::size_t batch = 0;
};

inline StyleQuantization quantize_styles(ad::Var w, ad::Var codes) {
  if (w.shape().size() != 2 || codes.shape().size() != 2) {
    throw DimensionError("quantize_styles expects rank-2 styles and codes, got " +
                         ad::to_string(w.shape()) + " and " + ad::to_string(codes.shape()));
  }
  const std::size_t n = w.shape()[0], d_w = w.shape()[1], d_c = codes.shape()[1];
  if (d_c == 0 || d_w % d_c != 0) {
    throw DimensionError("style width " + std::to_string(d_w) +
                         " is not a multiple of code dimension " + std::to_string(d_c));
  }
  const std::size_t s = d_w / d_c;
  StyleQuantization q;
  q.batch = n;
  q.sub_vectors = ad::reshape(w, {n * s, d_c});
  const ad::Tensor table = codes.to_tensor();
  const auto subs = q.sub_vectors.value();
  q.indices.resize(n * s);
  for (std::size_t i = 0; i < n * s; ++i)
    q.indices[i] = nearest_code(subs.subspan(i * d_c, d_c), table).index;
  q.selected = ad::gather_rows(codes, q.indices);
  ad::Graph& g = w.graph();
  const auto sel = q.selected.value();
  ad::Var quantized = g.constant({n, d_w}, std::vector<double>(sel.begin(), sel.end()));
  q.proxy = ad::straight_through(w, quantized);
  return q;
}

struct SqLoss {
  ad::Var codebook_term;    // ||sg(ŵ) − c||², moves codes only
  ad::Var commitment_term;  // ||ŵ − sg(c)||², moves the mapper only (unweighted)
  ad::Var total;            // codebook_term + β · commitment_term
};

// Squared norms are summed over sub-vectors and elements, then averaged over
// the batch.
inline SqLoss sq_loss(const StyleQuantization& q, double beta) {
  if (beta < 0.0) throw Error("sq_loss: beta must be non-negative");
  const double inv_n = 1.0 / static_cast<double>(q.batch);
  SqLoss l;
  l.codebook_term =
      ad::scale(ad::l2_norm_sq(ad::sub(ad::stop_gradient(q.sub_vectors), q.selected)), inv_n);
  l.commitment_term =
      ad::scale(ad::l2_norm_sq(ad::sub(q.sub_vectors, ad::stop_gradient(q.selected))), inv_n);
  l.total = ad::add(l.codebook_term, ad::scale(l.commitment_term, beta));
  return l;
}

// log of the mean RBF potential exp(−t‖c̄ᵢ − c̄ⱼ‖²) over ordered pairs i ≠ j,
// with c̄ = normalize(P·c).
inline ad::Var uniformity_loss(ad::Var codes, ad::Var projection, double t) {
  const std::size_t k = codes.shape().at(0);
  if (k < 2) throw Error("uniformity_loss needs at least two codes, got " + std::to_string(k));
  ad::Var unit = ad::normalize_rows(ad::matmul(codes, ad::transpose(projection)));
  ad::Var gram = ad::matmul(unit, ad::transpose(unit));
  // ‖a − b‖² = 2 − 2 a·b on the unit sphere
  ad::Var potential = ad::exp(ad::add_scalar(ad::scale(gram, 2.0 * t), -2.0 * t));
  std::vector<double> mask(k * k, 1.0);
  for (std::size_t i = 0; i < k; ++i) mask[i * k + i] = 0.0;
  ad::Var off_diag = ad::mul(potential, codes.graph().constant({k, k}, std::move(mask)));
  return ad::log(ad::scale(ad::sum(off_diag), 1.0 / static_cast<double>(k * (k - 1))));
}

inline ad::Var uniformity_loss(ad::Graph& g, Codebook& codebook, bool track = true) {
  return uniformity_loss(g.parameter(codebook.codes, track), g.parameter(codebook.projection, track),
                         codebook.rbf_scale);
}

// Fraction of the k codebook entries selected at least once.
inline double usage(std::span<const std::size_t> indices, std::size_t k) {
  if (indices.empty()) throw Error("usage: empty index history");
  std::unordered_set<std::size_t> seen(indices.begin(), indices.end());
  return static_cast<double>(seen.size()) / static_cast<double>(k);
}

inline double usage(std::span<const QuantizedStyle> history, std::size_t k) {
  std::vector<std::size_t> all;
  for (const auto& q : history) all.insert(all.end(), q.indices.begin(), q.indices.end());
  return usage(all, k);
}

}  // namespace sqgan

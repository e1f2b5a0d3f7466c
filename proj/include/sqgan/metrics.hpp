#pragma once

// Evaluation statistics: mixture mode coverage, unbiased Gaussian-kernel
// MMD², mean pairwise cosine similarity, and the metrics CSV row.

#include <cmath>
#include <cstdio>
#include <limits>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "sqgan/autodiff.hpp"
#include "sqgan/dataset.hpp"
#include "sqgan/errors.hpp"

namespace sqgan {

// A mode is covered when at least `min_fraction` of the samples fall within
// `std_multiple`·std of its center.
inline double mode_coverage(const ad::Tensor& samples, const Dataset& data, double std_multiple = 3.0,
                            double min_fraction = 0.01) {
  if (data.spec.kind != DatasetKind::gauss_mixture)
    throw Error("mode_coverage requires a gauss_mixture dataset, got " + to_string(data.spec.kind));
  if (samples.rank() != 2 || samples.cols() != 2)
    throw DimensionError("mode_coverage expects [n x 2] samples, got " + ad::to_string(samples.shape()));
  const auto centers = data.centers();
  const double r2 = std::pow(std_multiple * data.spec.std, 2);
  std::vector<std::size_t> hits(centers.size(), 0);
  for (std::size_t i = 0; i < samples.rows(); ++i) {
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < centers.size(); ++k) {
      const double dx = samples(i, 0) - centers[k][0], dy = samples(i, 1) - centers[k][1];
      const double d = dx * dx + dy * dy;
      if (d < best_d) {
        best_d = d;
        best = k;
      }
    }
    if (best_d <= r2) ++hits[best];
  }
  std::size_t covered = 0;
  for (std::size_t h : hits)
    if (static_cast<double>(h) >= min_fraction * static_cast<double>(samples.rows())) ++covered;
  return static_cast<double>(covered) / static_cast<double>(centers.size());
}

// Unbiased MMD² with k(x, y) = exp(−‖x − y‖² / 2h²).
inline double kernel_mmd(const ad::Tensor& generated, const ad::Tensor& real, double bandwidth) {
  if (generated.rank() != 2 || real.rank() != 2 || generated.cols() != real.cols())
    throw DimensionError("kernel_mmd: sample sets " + ad::to_string(generated.shape()) + " and " +
                         ad::to_string(real.shape()) + " differ in dimension");
  const std::size_t m = generated.rows(), n = real.rows(), d = real.cols();
  if (m < 2 || n < 2) throw Error("kernel_mmd needs at least 2 samples per side");
  const double inv = -1.0 / (2.0 * bandwidth * bandwidth);
  auto k = [&](std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t e = 0; e < d; ++e) s += (a[e] - b[e]) * (a[e] - b[e]);
    return std::exp(s * inv);
  };
  auto within = [&](const ad::Tensor& x) {
    double s = 0.0;
    for (std::size_t i = 0; i < x.rows(); ++i)
      for (std::size_t j = i + 1; j < x.rows(); ++j) s += k(x.row(i), x.row(j));
    const double r = static_cast<double>(x.rows());
    return 2.0 * s / (r * (r - 1.0));
  };
  double cross = 0.0;
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) cross += k(generated.row(i), real.row(j));
  return within(generated) + within(real) -
         2.0 * cross / (static_cast<double>(m) * static_cast<double>(n));
}

struct CosineSimilarity {
  double mean = 0.0;
  std::size_t excluded = 0;  // zero-norm rows left out
};

// Mean cosine similarity over unordered pairs of rows.
inline CosineSimilarity mean_cosine_similarity(const ad::Tensor& features) {
  if (features.rank() != 2 || features.rows() < 2)
    throw Error("mean_cosine_similarity needs at least 2 rows");
  const std::size_t n = features.rows(), d = features.cols();
  std::vector<std::vector<double>> unit;
  CosineSimilarity r;
  for (std::size_t i = 0; i < n; ++i) {
    const auto row = features.row(i);
    double s = 0.0;
    for (double v : row) s += v * v;
    s = std::sqrt(s);
    if (s < 1e-12) {
      ++r.excluded;
      continue;
    }
    std::vector<double> u(d);
    for (std::size_t e = 0; e < d; ++e) u[e] = row[e] / s;
    unit.push_back(std::move(u));
  }
  if (unit.size() < 2) throw Error("mean_cosine_similarity: fewer than 2 non-zero rows");
  // Σ_{i<j} uᵢ·uⱼ = (‖Σ uᵢ‖² − Σ‖uᵢ‖²) / 2
  std::vector<double> total(d, 0.0);
  double self = 0.0;
  for (const auto& u : unit)
    for (std::size_t e = 0; e < d; ++e) {
      total[e] += u[e];
      self += u[e] * u[e];
    }
  double tt = 0.0;
  for (double v : total) tt += v * v;
  const double pairs = static_cast<double>(unit.size()) * static_cast<double>(unit.size() - 1) / 2.0;
  r.mean = (tt - self) / 2.0 / pairs;
  return r;
}

struct MetricsRow {
  std::size_t step = 0;
  double adv_g = 0.0;
  double adv_d = 0.0;
  double sq = 0.0;
  double uniformity = 0.0;
  double qcr = 0.0;
  double usage = 0.0;
  double mode_coverage = 0.0;
  double kernel_mmd = 0.0;
  double mean_cos_sim = 0.0;
};

inline constexpr const char* kMetricsHeader =
    "step,adv_g,adv_d,sq,uniformity,qcr,usage,mode_coverage,kernel_mmd,mean_cos_sim";

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string to_csv(const MetricsRow& r) {
  std::ostringstream s;
  s << r.step;
  for (double v : {r.adv_g, r.adv_d, r.sq, r.uniformity, r.qcr, r.usage, r.mode_coverage,
                   r.kernel_mmd, r.mean_cos_sim})
    s << ',' << format_double(v);
  return s.str();
}

inline MetricsRow metrics_from_csv(const std::string& line) {
  std::istringstream s(line);
  std::string cell;
  std::vector<std::string> cells;
  while (std::getline(s, cell, ',')) cells.push_back(cell);
  if (cells.size() != 10) throw Error("metrics row has " + std::to_string(cells.size()) + " cells");
  MetricsRow r;
  r.step = std::stoul(cells[0]);
  double* f[] = {&r.adv_g, &r.adv_d, &r.sq, &r.uniformity, &r.qcr, &r.usage, &r.mode_coverage,
                 &r.kernel_mmd, &r.mean_cos_sim};
  for (std::size_t i = 0; i < 9; ++i) *f[i] = std::strtod(cells[i + 1].c_str(), nullptr);
  return r;
}

}  // namespace sqgan

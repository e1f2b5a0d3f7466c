#pragma once

// Deterministic synthetic datasets: a Gaussian mixture on a circle,
// concentric rings, and an 8×8 raster corpus assembled from a fixed
// vocabulary of eight 4×4 glyphs.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "sqgan/autodiff.hpp"
#include "sqgan/errors.hpp"
#include "sqgan/rng.hpp"

namespace sqgan {

enum class DatasetKind { gauss_mixture, rings, tiny_raster };

inline std::string to_string(DatasetKind k) {
  switch (k) {
    case DatasetKind::gauss_mixture: return "gauss_mixture";
    case DatasetKind::rings: return "rings";
    case DatasetKind::tiny_raster: return "tiny_raster";
  }
  return "?";
}

inline DatasetKind dataset_kind_from_string(const std::string& s) {
  if (s == "gauss_mixture") return DatasetKind::gauss_mixture;
  if (s == "rings") return DatasetKind::rings;
  if (s == "tiny_raster") return DatasetKind::tiny_raster;
  throw ConfigError("unknown dataset kind '" + s + "'");
}

struct DatasetSpec {
  DatasetKind kind = DatasetKind::gauss_mixture;
  std::size_t size = 2000;
  std::uint64_t seed = 0;
  std::size_t modes = 8;  // mixture components, or ring count for `rings`
  double radius = 2.0;    // circle radius; outermost ring radius
  double std = 0.02;      // per-coordinate noise (pixel noise for rasters)

  std::size_t data_dim() const { return kind == DatasetKind::tiny_raster ? 64 : 2; }
};

struct Dataset {
  DatasetSpec spec;
  ad::Tensor samples;              // size × data_dim
  std::vector<std::size_t> labels;  // mixture component / ring index; glyph ids packed base 8 for rasters

  std::size_t size() const { return samples.rows(); }
  std::size_t dim() const { return samples.cols(); }

  // Centers of a gauss_mixture, equally spaced on the circle.
  std::vector<std::array<double, 2>> centers() const {
    if (spec.kind != DatasetKind::gauss_mixture)
      throw Error("centers() is only defined for gauss_mixture datasets");
    std::vector<std::array<double, 2>> c(spec.modes);
    for (std::size_t k = 0; k < spec.modes; ++k) {
      const double a = 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(spec.modes);
      c[k] = {spec.radius * std::cos(a), spec.radius * std::sin(a)};
    }
    return c;
  }

  ad::Tensor rows(std::span<const std::size_t> idx) const {
    ad::Tensor out({idx.size(), dim()});
    for (std::size_t i = 0; i < idx.size(); ++i) {
      const auto r = samples.row(idx[i]);
      std::copy(r.begin(), r.end(), out.row(i).begin());
    }
    return out;
  }
};

// The eight 4×4 glyphs of the raster vocabulary, row-major, values in {0,1}.
inline const std::array<std::array<double, 16>, 8>& raster_glyphs() {
  static const std::array<std::array<double, 16>, 8> g = {{
      {0, 0, 0, 0, 1, 1, 1, 1, 1, 1, 1, 1, 0, 0, 0, 0},  // horizontal bar
      {0, 1, 1, 0, 0, 1, 1, 0, 0, 1, 1, 0, 0, 1, 1, 0},  // vertical bar
      {1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1},  // diagonal
      {0, 0, 0, 1, 0, 0, 1, 0, 0, 1, 0, 0, 1, 0, 0, 0},  // anti-diagonal
      {1, 1, 1, 1, 1, 0, 0, 1, 1, 0, 0, 1, 1, 1, 1, 1},  // box outline
      {1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1},  // filled
      {0, 1, 1, 0, 1, 1, 1, 1, 1, 1, 1, 1, 0, 1, 1, 0},  // disc
      {1, 0, 0, 1, 0, 0, 0, 0, 0, 0, 0, 0, 1, 0, 0, 1},  // corners
  }};
  return g;
}

// Pixel (r, c) of the 8×8 raster lives at r*8 + c; quadrant q = 2*(r/4) + c/4.
inline Dataset make_dataset(const DatasetSpec& spec) {
  if (spec.size == 0) throw ConfigError("dataset size must be positive");
  Dataset d;
  d.spec = spec;
  Rng rng(spec.seed, "dataset:" + to_string(spec.kind));
  d.samples = ad::Tensor({spec.size, spec.data_dim()});
  d.labels.resize(spec.size);
  switch (spec.kind) {
    case DatasetKind::gauss_mixture: {
      if (spec.modes == 0) throw ConfigError("gauss_mixture needs at least one mode");
      const auto c = d.centers();
      for (std::size_t i = 0; i < spec.size; ++i) {
        const std::size_t k = rng.index(spec.modes);
        d.labels[i] = k;
        d.samples(i, 0) = rng.normal(c[k][0], spec.std);
        d.samples(i, 1) = rng.normal(c[k][1], spec.std);
      }
      break;
    }
    case DatasetKind::rings: {
      if (spec.modes == 0) throw ConfigError("rings needs at least one ring");
      for (std::size_t i = 0; i < spec.size; ++i) {
        const std::size_t k = rng.index(spec.modes);
        const double r = spec.radius * static_cast<double>(k + 1) / static_cast<double>(spec.modes);
        const double a = rng.uniform(0.0, 2.0 * std::numbers::pi);
        const double rr = rng.normal(r, spec.std);
        d.labels[i] = k;
        d.samples(i, 0) = rr * std::cos(a);
        d.samples(i, 1) = rr * std::sin(a);
      }
      break;
    }
    case DatasetKind::tiny_raster: {
      const auto& glyphs = raster_glyphs();
      for (std::size_t i = 0; i < spec.size; ++i) {
        std::size_t code = 0;
        for (std::size_t q = 0; q < 4; ++q) {
          const std::size_t gidx = rng.index(glyphs.size());
          code = code * 8 + gidx;
          for (std::size_t r = 0; r < 4; ++r)
            for (std::size_t c = 0; c < 4; ++c) {
              const std::size_t pr = 4 * (q / 2) + r, pc = 4 * (q % 2) + c;
              d.samples(i, pr * 8 + pc) = glyphs[gidx][r * 4 + c] + rng.normal(0.0, spec.std);
            }
        }
        d.labels[i] = code;
      }
      break;
    }
  }
  return d;
}

// Splits one sample into `tokens` equal pieces: 4×4 quadrant patches for
// rasters (tokens must be 4), contiguous chunks otherwise.
inline ad::Tensor tokenize(std::span<const double> x, DatasetKind kind, std::size_t tokens) {
  if (kind == DatasetKind::tiny_raster) {
    if (tokens != 4 || x.size() != 64)
      throw DimensionError("tiny_raster samples tokenize into exactly 4 quadrant patches");
    ad::Tensor t({4, 16});
    for (std::size_t q = 0; q < 4; ++q)
      for (std::size_t r = 0; r < 4; ++r)
        for (std::size_t c = 0; c < 4; ++c)
          t(q, r * 4 + c) = x[(4 * (q / 2) + r) * 8 + 4 * (q % 2) + c];
    return t;
  }
  if (tokens == 0 || x.size() % tokens != 0) {
    throw DimensionError("sample of width " + std::to_string(x.size()) + " cannot split into " +
                         std::to_string(tokens) + " tokens");
  }
  const std::size_t w = x.size() / tokens;
  return ad::Tensor({tokens, w}, std::vector<double>(x.begin(), x.end()));
}

}  // namespace sqgan

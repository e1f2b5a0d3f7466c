#pragma once

// Knowledge-enhanced codebook initialization. Codes and data are embedded into
// a shared feature space by a frozen provider, aligned token-by-token with
// entropic optimal transport, and the codebook, projection, mapping network
// and code embedder are pre-trained on
//
//     L = L_sq + L_uf + L_ot.
//
// Code sample i is paired with data sample i mod n; each pair is transported
// over token positions (s code tokens against l data tokens, uniform
// marginals) and the per-pair losses are averaged.

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "sqgan/autodiff.hpp"
#include "sqgan/dataset.hpp"
#include "sqgan/errors.hpp"
#include "sqgan/networks.hpp"
#include "sqgan/optimizer.hpp"
#include "sqgan/quantizer.hpp"
#include "sqgan/rng.hpp"
#include "sqgan/sinkhorn.hpp"

namespace sqgan {

enum class FeatureSource { data, codes };

struct FeatureSet {
  ad::Tensor features;  // batch × tokens × d_e
  FeatureSource source = FeatureSource::data;

  std::size_t batch() const { return features.shape().at(0); }
  std::size_t tokens() const { return features.shape().at(1); }
  std::size_t dim() const { return features.shape().at(2); }
  // Tokens of one sample as a [tokens × d_e] matrix.
  ad::Tensor sample(std::size_t i) const {
    const std::size_t w = tokens() * dim();
    const auto v = features.data().subspan(i * w, w);
    return ad::Tensor({tokens(), dim()}, std::vector<double>(v.begin(), v.end()));
  }
};

// Feature file: ASCII header line "n tokens dim", then n·tokens·dim
// little-endian float32 values.
inline void write_feature_file(const std::string& path, const FeatureSet& f) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open feature file for writing: " + path);
  out << f.batch() << ' ' << f.tokens() << ' ' << f.dim() << '\n';
  for (double v : f.features.values()) {
    const float x = static_cast<float>(v);
    std::uint32_t bits;
    std::memcpy(&bits, &x, 4);
    const unsigned char b[4] = {static_cast<unsigned char>(bits), static_cast<unsigned char>(bits >> 8),
                                static_cast<unsigned char>(bits >> 16),
                                static_cast<unsigned char>(bits >> 24)};
    out.write(reinterpret_cast<const char*>(b), 4);
  }
  if (!out) throw Error("failed writing feature file: " + path);
}

inline FeatureSet read_feature_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open feature file: " + path);
  std::string header;
  std::getline(in, header);
  std::istringstream hs(header);
  std::size_t n = 0, l = 0, d = 0;
  if (!(hs >> n >> l >> d) || n == 0 || l == 0 || d == 0) {
    throw DimensionError("feature file " + path + ": malformed header '" + header + "'");
  }
  const std::size_t count = n * l * d;
  std::vector<unsigned char> raw(count * 4);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (static_cast<std::size_t>(in.gcount()) != raw.size()) {
    throw DimensionError("feature file " + path + " declares (" + std::to_string(n) + ", " +
                         std::to_string(l) + ", " + std::to_string(d) + ") but holds only " +
                         std::to_string(in.gcount() / 4) + " values");
  }
  if (in.peek() != std::char_traits<char>::eof()) {
    throw DimensionError("feature file " + path + " has trailing data beyond declared shape");
  }
  FeatureSet f;
  f.features = ad::Tensor({n, l, d});
  for (std::size_t i = 0; i < count; ++i) {
    const std::uint32_t bits = std::uint32_t(raw[4 * i]) | std::uint32_t(raw[4 * i + 1]) << 8 |
                               std::uint32_t(raw[4 * i + 2]) << 16 | std::uint32_t(raw[4 * i + 3]) << 24;
    float x;
    std::memcpy(&x, &bits, 4);
    f.features[i] = x;
  }
  return f;
}

enum class ProviderKind { frozen_random_mlp, file_backed };

// Frozen feature extractor shared by the data and code sides.
//
// frozen_random_mlp: a data token is lifted by a fixed random linear map to
// d_e and passed through a fixed random tanh MLP (d_e → hidden → d_e); code
// tokens enter the same MLP after the trainable embedder.
// file_backed: data features are read from a feature file indexed by dataset
// row, and the code-side encoder is the identity.
class FeatureProvider {
 public:
  static FeatureProvider frozen_random_mlp(DatasetKind data_kind, std::size_t data_dim,
                                           std::size_t tokens, std::size_t d_e, std::size_t hidden,
                                           std::uint64_t seed) {
    FeatureProvider p;
    p.kind_ = ProviderKind::frozen_random_mlp;
    p.data_kind_ = data_kind;
    p.tokens_ = tokens;
    p.d_e_ = d_e;
    const ad::Tensor probe = tokenize(std::vector<double>(data_dim, 0.0), data_kind, tokens);
    p.lift_ = Mlp(MlpSpec{{probe.cols(), d_e}, {Activation::none}, Rng::mix(seed, "provider-lift")});
    p.encoder_ = Mlp(MlpSpec{{d_e, hidden, d_e}, {Activation::tanh, Activation::none},
                             Rng::mix(seed, "provider-encoder")});
    for (Mlp* m : {&p.lift_, &p.encoder_})
      for (ad::Tensor* t : m->parameters()) t->set_requires_grad(false);
    return p;
  }

  static FeatureProvider file_backed(const std::string& path) {
    FeatureProvider p;
    p.kind_ = ProviderKind::file_backed;
    p.stored_ = read_feature_file(path);
    p.tokens_ = p.stored_.tokens();
    p.d_e_ = p.stored_.dim();
    return p;
  }

  ProviderKind kind() const { return kind_; }
  std::size_t tokens() const { return tokens_; }
  std::size_t dim() const { return d_e_; }
  const Mlp& encoder() const { return encoder_; }

  // Code-side encoder applied per token: [N × d_e] → [N × d_e]. Frozen.
  ad::Var encode_tokens(ad::Var tokens) const {
    if (tokens.shape().size() != 2 || tokens.shape()[1] != d_e_) {
      throw DimensionError("encoder expects [N x " + std::to_string(d_e_) + "] tokens, got " +
                           ad::to_string(tokens.shape()));
    }
    if (kind_ == ProviderKind::file_backed) return tokens;
    return encoder_.evaluate(tokens);
  }

  // Features of dataset rows; never part of any gradient computation.
  FeatureSet embed_rows(const Dataset& data, std::span<const std::size_t> rows) const {
    FeatureSet f;
    f.source = FeatureSource::data;
    f.features = ad::Tensor({rows.size(), tokens_, d_e_});
    if (kind_ == ProviderKind::file_backed) {
      if (stored_.batch() != data.size()) {
        throw DimensionError("feature file holds " + std::to_string(stored_.batch()) +
                             " samples, dataset has " + std::to_string(data.size()));
      }
      const std::size_t w = tokens_ * d_e_;
      for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto src = stored_.features.data().subspan(rows[i] * w, w);
        std::copy(src.begin(), src.end(), f.features.data().begin() + i * w);
      }
      return f;
    }
    return embed(data.rows(rows));
  }

  // Features of raw samples [n × data_dim] (frozen_random_mlp only).
  FeatureSet embed(const ad::Tensor& x) const {
    if (kind_ != ProviderKind::file_backed) {
      ad::Graph g;
      std::vector<double> tok;
      std::size_t token_dim = 0;
      for (std::size_t i = 0; i < x.rows(); ++i) {
        const ad::Tensor t = tokenize(x.row(i), data_kind_, tokens_);
        token_dim = t.cols();
        tok.insert(tok.end(), t.values().begin(), t.values().end());
      }
      ad::Var lifted = lift_.evaluate(g.constant({x.rows() * tokens_, token_dim}, std::move(tok)));
      ad::Var enc = encoder_.evaluate(lifted);
      FeatureSet f;
      f.source = FeatureSource::data;
      f.features = ad::Tensor({x.rows(), tokens_, d_e_},
                              std::vector<double>(enc.value().begin(), enc.value().end()));
      return f;
    }
    throw Error("file-backed provider embeds dataset rows, not raw samples");
  }

 private:
  ProviderKind kind_ = ProviderKind::frozen_random_mlp;
  DatasetKind data_kind_ = DatasetKind::gauss_mixture;
  std::size_t tokens_ = 0, d_e_ = 0;
  Mlp lift_, encoder_;
  FeatureSet stored_;
};

inline FeatureSet embed_data(const Dataset& data, std::span<const std::size_t> rows,
                             const FeatureProvider& provider) {
  return provider.embed_rows(data, rows);
}

// Trainable linear map d_c → d_e followed by the frozen provider encoder.
struct CodeEmbedder {
  Mlp mlp;

  static CodeEmbedder create(std::size_t code_dim, std::size_t d_e, std::uint64_t seed) {
    return {Mlp(MlpSpec{{code_dim, d_e}, {Activation::none}, Rng::mix(seed, "code-embedder")})};
  }
};

// Quantized codes as graph tokens whose forward value is the selected codes
// and whose gradient reaches both the pre-quantization sub-vectors
// (straight-through) and the selected codebook rows.
inline ad::Var code_tokens(const StyleQuantization& q) {
  ad::Var st = ad::straight_through(q.sub_vectors, ad::stop_gradient(q.selected));
  return ad::add(st, ad::sub(q.selected, ad::stop_gradient(q.selected)));
}

// m × s × d_e code features.
inline ad::Var embed_codes(const StyleQuantization& q, CodeEmbedder& embedder,
                           const FeatureProvider& provider, bool track = true) {
  ad::Var tokens = code_tokens(q);
  if (tokens.shape()[1] != embedder.mlp.spec().input_width()) {
    throw DimensionError("code embedder expects width " +
                         std::to_string(embedder.mlp.spec().input_width()) + ", got " +
                         std::to_string(tokens.shape()[1]));
  }
  ad::Var h = provider.encode_tokens(embedder.mlp.forward(tokens, track));
  const std::size_t s = tokens.shape()[0] / q.batch;
  return ad::reshape(h, {q.batch, s, provider.dim()});
}

// s × l cost between one code sample and one data sample.
inline CostMatrix align_cost(const ad::Tensor& t, const ad::Tensor& f, Metric metric) {
  if (t.rank() != 2 || f.rank() != 2 || t.cols() != f.cols()) {
    throw DimensionError("align_cost: embedding widths differ between " +
                         ad::to_string(t.shape()) + " and " + ad::to_string(f.shape()));
  }
  return pairwise_cost_matrix(t, f, metric);
}

struct CbiWeights {
  double sq = 1.0;
  double uf = 1.0;
  double ot = 1.0;
};

struct CbiSettings {
  std::size_t steps = 2000;
  std::size_t batch_data = 64;    // n
  std::size_t batch_latent = 64;  // m
  std::size_t tokens = 1;         // l, data tokens per sample
  std::size_t d_e = 16;
  std::size_t hidden = 64;
  Metric metric = Metric::cosine;
  SinkhornOptions sinkhorn{0.05, 1e-6, 1000};
  AdamOptions adam{1e-3, 0.5, 0.999, 1e-8};
  CbiWeights weights;
  ProviderKind provider = ProviderKind::frozen_random_mlp;
  std::string feature_file;
  std::size_t usage_samples = 2000;
};

struct CbiLosses {
  double sq = 0.0;
  double uf = 0.0;
  double ot = 0.0;
  double total = 0.0;
  double max_marginal_error = 0.0;
  bool plans_converged = true;
};

// Solves one plan per (code sample, paired data sample) from the current code
// features. Costs are max-normalized before scaling.
inline std::vector<TransportPlan> alignment_plans(const ad::Tensor& T, const FeatureSet& F_paired,
                                                  Metric metric, const SinkhornOptions& opts,
                                                  CbiLosses* diag = nullptr) {
  const std::size_t m = T.shape()[0], s = T.shape()[1], d = T.shape()[2];
  const std::vector<double> p = uniform_marginal(s), q = uniform_marginal(F_paired.tokens());
  std::vector<TransportPlan> plans;
  plans.reserve(m);
  for (std::size_t i = 0; i < m; ++i) {
    const auto v = T.data().subspan(i * s * d, s * d);
    ad::Tensor t({s, d}, std::vector<double>(v.begin(), v.end()));
    const CostMatrix c = normalized(align_cost(t, F_paired.sample(i), metric));
    SinkhornState st = log_domain_sinkhorn(c, p, q, opts);
    if (diag) {
      diag->max_marginal_error = std::max(diag->max_marginal_error, st.marginal_error);
      diag->plans_converged = diag->plans_converged && st.converged;
    }
    plans.push_back(st.transport_plan());
  }
  return plans;
}

// Optimizer state for the initialization phase.
class CbiSession {
 public:
  CbiSession(GanModel& model, CodeEmbedder& embedder, const FeatureProvider& provider,
             CbiSettings settings, double beta)
      : model_(model), embedder_(embedder), provider_(provider), settings_(std::move(settings)), beta_(beta) {
    std::vector<ad::Tensor*> params = model_.mapper.parameters();
    params.push_back(&model_.codebook.codes);
    params.push_back(&model_.codebook.projection);
    for (ad::Tensor* t : embedder_.mlp.parameters()) params.push_back(t);
    adam_ = Adam(std::move(params), settings_.adam);
  }

  const CbiSettings& settings() const { return settings_; }

  // One update on latent batch z [m × d_z] against data features F [n × l × d_e].
  CbiLosses step(const ad::Tensor& z, const FeatureSet& F) {
    if (F.dim() != provider_.dim()) {
      throw DimensionError("data features have width " + std::to_string(F.dim()) +
                           ", provider produces " + std::to_string(provider_.dim()));
    }
    adam_.zero_grad();
    ad::Graph g;
    ad::Var codes = g.parameter(model_.codebook.codes);
    ad::Var proj = g.parameter(model_.codebook.projection);
    ad::Var w = map_style(g.constant(z), model_);
    StyleQuantization q = quantize_styles(w, codes);
    ad::Var sq = sq_loss(q, beta_).total;
    ad::Var uf = uniformity_loss(codes, proj, model_.codebook.rbf_scale);

    CbiLosses out;
    const CbiWeights& wt = settings_.weights;
    ad::Var total = ad::add(ad::scale(sq, wt.sq), ad::scale(uf, wt.uf));
    if (wt.ot != 0.0) {
      ad::Var T = embed_codes(q, embedder_, provider_);
      const std::size_t m = T.shape()[0], n = F.batch();
      FeatureSet paired;
      paired.features = ad::Tensor({m, F.tokens(), F.dim()});
      const std::size_t w_tok = F.tokens() * F.dim();
      for (std::size_t i = 0; i < m; ++i) {
        const auto src = F.features.data().subspan((i % n) * w_tok, w_tok);
        std::copy(src.begin(), src.end(), paired.features.data().begin() + i * w_tok);
      }
      const std::vector<TransportPlan> plans =
          alignment_plans(T.to_tensor(), paired, settings_.metric, settings_.sinkhorn, &out);
      ad::Var ot = ot_loss(T, g.constant(paired.features), plans, settings_.metric);
      out.ot = ot.item();
      total = ad::add(total, ad::scale(ot, wt.ot));
    }
    out.sq = sq.item();
    out.uf = uf.item();
    out.total = total.item();
    if (!std::isfinite(out.total)) return out;
    g.backward(total);
    adam_.step();
    return out;
  }

 private:
  GanModel& model_;
  CodeEmbedder& embedder_;
  const FeatureProvider& provider_;
  CbiSettings settings_;
  double beta_;
  Adam adam_;
};

struct CbiReport {
  std::vector<CbiLosses> trace;
  double initial_usage = 0.0;
  double final_usage = 0.0;
};

// Codebook usage over a fixed set of latent draws.
inline double latent_usage(GanModel& model, std::size_t samples, std::uint64_t seed) {
  Rng rng(seed, "usage-latents");
  ad::Tensor z({samples, model.dims.d_z});
  for (double& v : z.values()) v = rng.normal();
  ad::Graph g;
  ad::Var w = map_style(g.constant(z), model, false);
  StyleQuantization q = quantize_styles(w, g.parameter(model.codebook.codes, false));
  return usage(q.indices, model.codebook.size());
}

inline CbiReport run_cbi(GanModel& model, CodeEmbedder& embedder, const FeatureProvider& provider,
                         const Dataset& data, const CbiSettings& settings, double beta,
                         std::uint64_t seed) {
  CbiReport report;
  report.initial_usage = latent_usage(model, settings.usage_samples, seed);
  CbiSession session(model, embedder, provider, settings, beta);
  Rng z_rng(seed, "cbi-latents");
  Rng data_rng(seed, "cbi-data");
  for (std::size_t step = 0; step < settings.steps; ++step) {
    ad::Tensor z({settings.batch_latent, model.dims.d_z});
    for (double& v : z.values()) v = z_rng.normal();
    std::vector<std::size_t> rows(settings.batch_data);
    for (auto& r : rows) r = data_rng.index(data.size());
    const FeatureSet F = embed_data(data, rows, provider);
    const CbiLosses l = session.step(z, F);
    if (!std::isfinite(l.total)) {
      std::ostringstream msg;
      msg << "non-finite codebook-initialization loss at step " << step << ": sq=" << l.sq
          << " uf=" << l.uf << " ot=" << l.ot;
      throw NumericAbort(msg.str());
    }
    report.trace.push_back(l);
  }
  report.final_usage = latent_usage(model, settings.usage_samples, seed);
  return report;
}

}  // namespace sqgan

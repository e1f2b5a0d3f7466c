#pragma once

// Adversarial training loop with periodic evaluation, metrics CSV output and
// checkpointing.
//
// Every source of randomness is a separate named stream derived from the
// config seed, so enabling one feature (perturbations, codebook
// initialization) never shifts the draws seen by another.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "sqgan/cbi.hpp"
#include "sqgan/checkpoint.hpp"
#include "sqgan/config.hpp"
#include "sqgan/dataset.hpp"
#include "sqgan/metrics.hpp"
#include "sqgan/networks.hpp"
#include "sqgan/objectives.hpp"
#include "sqgan/optimizer.hpp"
#include "sqgan/quantizer.hpp"

namespace sqgan {

inline GanModel build_model(const TrainConfig& c) {
  GanModel m;
  m.dims = c.dims;
  m.mapper = Mlp(c.mapper);
  m.generator = Mlp(c.generator);
  m.discriminator = Mlp(c.discriminator);
  Rng rng(c.seed, "codebook");
  m.codebook = Codebook::random(c.codebook.k, c.code_dim(), c.projection_dim(), rng, c.codebook.t,
                                c.codebook.projection_noise);
  m.validate();
  return m;
}

inline FeatureProvider make_provider(const TrainConfig& c) {
  const CbiSettings& s = *c.cbi;
  if (s.provider == ProviderKind::file_backed) return FeatureProvider::file_backed(s.feature_file);
  return FeatureProvider::frozen_random_mlp(c.dataset.kind, c.dataset.data_dim(), s.tokens, s.d_e, s.hidden,
                                            Rng::mix(c.seed, "provider"));
}

// Samples from the generator with frozen parameters; quantized modes route
// the style vector through the codebook.
struct GeneratedBatch {
  ad::Tensor samples;
  std::vector<std::size_t> indices;
};

inline GeneratedBatch sample_generator(GanModel& model, const ad::Tensor& z, bool quantized) {
  ad::Graph g;
  ad::Var w = model.mapper.evaluate(g.constant(z));
  GeneratedBatch out;
  if (quantized) {
    StyleQuantization q = quantize_styles(w, g.constant(model.codebook.codes));
    w = q.proxy;
    out.indices = std::move(q.indices);
  }
  out.samples = model.generator.evaluate(w).to_tensor();
  return out;
}

struct StepLosses {
  double adv_g = 0.0;
  double adv_d = 0.0;
  double sq = 0.0;
  double uniformity = 0.0;
  double qcr = 0.0;  // QCR term for quantized modes, the discriminator CR term for gan_cr
  double total_g = 0.0;
  double total_d = 0.0;
};

struct EvalSummary {
  MetricsRow row;
  double generated_cos_sim = 0.0;
  std::size_t excluded_rows = 0;
};

class Trainer {
 public:
  explicit Trainer(TrainConfig config)
      : cfg_(std::move(config)),
        data_(make_dataset(cfg_.dataset)),
        model_(build_model(cfg_)),
        data_rng_(cfg_.seed, "train-data"),
        latent_rng_(cfg_.seed, "train-latents"),
        perturb_rng_(cfg_.seed, "train-perturb") {
    cfg_.validate();
    Rng eval_z(cfg_.seed, "eval-latents");
    eval_z_ = ad::Tensor({cfg_.eval.samples, cfg_.dims.d_z});
    for (double& v : eval_z_.values()) v = eval_z.normal();
    Rng eval_d(cfg_.seed, "eval-data");
    std::vector<std::size_t> rows(cfg_.eval.samples);
    for (auto& r : rows) r = eval_d.index(data_.size());
    eval_real_ = data_.rows(rows);
  }

  Trainer(const Trainer&) = delete;
  Trainer& operator=(const Trainer&) = delete;

  const TrainConfig& config() const { return cfg_; }
  const Dataset& data() const { return data_; }
  GanModel& model() { return model_; }
  const std::optional<CbiReport>& cbi_report() const { return cbi_report_; }
  const CodeEmbedder* embedder() const { return embedder_ ? &*embedder_ : nullptr; }
  std::size_t steps_done() const { return step_; }

  // Codebook initialization for sq_gan_cbi; a no-op otherwise. Called by
  // run() before the first adversarial step.
  void initialize() {
    if (initialized_) return;
    initialized_ = true;
    if (cfg_.mode != Mode::sq_gan_cbi) return;
    provider_.emplace(make_provider(cfg_));
    embedder_.emplace(CodeEmbedder::create(cfg_.code_dim(), provider_->dim(), Rng::mix(cfg_.seed, "embedder")));
    cbi_report_ = run_cbi(model_, *embedder_, *provider_, data_, *cfg_.cbi, cfg_.loss.beta, cfg_.seed);
  }

  StepLosses step() {
    initialize();
    if (!opt_d_) make_optimizers();
    ++step_;
    const std::size_t n = cfg_.optimizer.batch_size;
    const bool quantized = is_quantized(cfg_.mode);
    StepLosses out;

    std::vector<std::size_t> rows(n);
    for (auto& r : rows) r = data_rng_.index(data_.size());
    const ad::Tensor real = data_.rows(rows);
    const ad::Tensor z_d = draw_latents(n);

    // Discriminator update.
    {
      opt_d_->zero_grad();
      ad::Graph g;
      const ad::Tensor fake = sample_generator(model_, z_d, quantized).samples;
      ad::Var fake_logits = discriminate(g.constant(fake), model_);
      ad::Var adv = adv_d(discriminate(g.constant(real), model_), fake_logits);
      ad::Var total = adv;
      if (quantized) {
        QcrTerm q = qcr_d(g, model_, z_d, cfg_.loss.sigma, perturb_rng_);
        out.qcr = q.loss.item();
        total = total_d(adv, q.loss, cfg_.loss.lambda_qcr);
      } else if (cfg_.mode == Mode::gan_cr) {
        const ad::Tensor z_b = perturbed(z_d);
        const ad::Tensor fake_b = sample_generator(model_, z_b, false).samples;
        ad::Var cr = cr_d(fake_logits, discriminate(g.constant(fake_b), model_), cfg_.loss.lambda_fd);
        out.qcr = cr.item();
        total = ad::add(adv, cr);
      }
      out.adv_d = adv.item();
      out.total_d = total.item();
      if (!std::isfinite(out.total_d)) abort_step(out, "discriminator");
      g.backward(total);
      opt_d_->step();
    }

    // Generator / mapper / codebook update.
    {
      opt_g_->zero_grad();
      ad::Graph g;
      const ad::Tensor z_g = draw_latents(n);
      ad::Var w = map_style(g.constant(z_g), model_);
      ad::Var x;
      std::optional<StyleQuantization> q;
      if (quantized) {
        q = quantize_styles(w, g.parameter(model_.codebook.codes));
        x = generate(q->proxy, model_);
      } else {
        x = generate(w, model_);
      }
      ad::Var adv = adv_g(discriminate(x, model_, false));
      ad::Var total = adv;
      if (quantized) {
        ad::Var sq = sq_loss(*q, cfg_.loss.beta).total;
        ad::Var uf = uniformity_loss(g.parameter(model_.codebook.codes), g.parameter(model_.codebook.projection),
                                     model_.codebook.rbf_scale);
        out.sq = sq.item();
        out.uniformity = uf.item();
        total = total_g(adv, sq, uf, cfg_.loss.lambda_sq);
      } else if (cfg_.mode == Mode::gan_cr) {
        const ad::Tensor z_b = perturbed(z_g);
        ad::Var x_b = generate(map_style(g.constant(z_b), model_), model_);
        total = ad::add(adv, cr_g(x, x_b, cfg_.loss.lambda_g));
      }
      out.adv_g = adv.item();
      out.total_g = total.item();
      if (!std::isfinite(out.total_g)) abort_step(out, "generator");
      g.backward(total);
      opt_g_->step();
    }
    last_ = out;
    return out;
  }

  EvalSummary evaluate() {
    const bool quantized = is_quantized(cfg_.mode);
    EvalSummary s;
    MetricsRow& r = s.row;
    r.step = step_;
    r.adv_g = last_.adv_g;
    r.adv_d = last_.adv_d;
    r.sq = last_.sq;
    r.uniformity = last_.uniformity;
    r.qcr = last_.qcr;
    GeneratedBatch gen = sample_generator(model_, eval_z_, quantized);
    r.usage = quantized ? usage(gen.indices, model_.codebook.size()) : 0.0;
    r.mode_coverage = data_.spec.kind == DatasetKind::gauss_mixture
                          ? mode_coverage(gen.samples, data_, cfg_.eval.coverage_std_multiple,
                                          cfg_.eval.coverage_min_fraction)
                          : std::nan("");
    r.kernel_mmd = kernel_mmd(gen.samples, eval_real_, cfg_.eval.mmd_bandwidth);
    ad::Graph g;
    ad::Var features;
    model_.discriminator.evaluate(g.constant(eval_real_), &features);
    const CosineSimilarity cs = mean_cosine_similarity(features.to_tensor());
    r.mean_cos_sim = cs.mean;
    s.excluded_rows = cs.excluded;
    s.generated_cos_sim = mean_cosine_similarity(gen.samples).mean;
    return s;
  }

  // Full run. Files are written only when output_dir is set: config.json,
  // metrics.csv (flushed after every row), step_<N>.ckpt at the checkpoint
  // interval and final.ckpt.
  std::vector<MetricsRow> run(const std::function<void(const MetricsRow&)>& on_row = {}) {
    initialize();
    namespace fs = std::filesystem;
    std::ofstream csv;
    const std::uint64_t hash = config_hash(cfg_);
    const bool files = !cfg_.output_dir.empty();
    if (files) {
      fs::create_directories(cfg_.output_dir);
      std::ofstream(fs::path(cfg_.output_dir) / "config.json") << config_json(cfg_).dump(2) << '\n';
      csv.open(fs::path(cfg_.output_dir) / "metrics.csv", std::ios::trunc);
      if (!csv) throw Error("cannot write metrics.csv in " + cfg_.output_dir);
      csv << kMetricsHeader << '\n' << std::flush;
    }
    std::vector<MetricsRow> rows;
    auto emit = [&] {
      rows.push_back(evaluate().row);
      if (files) csv << to_csv(rows.back()) << '\n' << std::flush;
      if (on_row) on_row(rows.back());
    };
    for (std::size_t i = 0; i < cfg_.optimizer.steps; ++i) {
      step();
      const bool last = step_ == cfg_.optimizer.steps;
      if (cfg_.eval.interval > 0 && (step_ % cfg_.eval.interval == 0 || last)) emit();
      else if (cfg_.eval.interval == 0 && last) emit();
      if (files && cfg_.checkpoint_interval > 0 && step_ % cfg_.checkpoint_interval == 0)
        save_checkpoint((fs::path(cfg_.output_dir) / ("step_" + std::to_string(step_) + ".ckpt")).string(), model_,
                        hash);
    }
    if (files) save_checkpoint((fs::path(cfg_.output_dir) / "final.ckpt").string(), model_, hash);
    return rows;
  }

 private:
  ad::Tensor draw_latents(std::size_t n) {
    ad::Tensor z({n, cfg_.dims.d_z});
    for (double& v : z.values()) v = latent_rng_.normal();
    return z;
  }

  ad::Tensor perturbed(const ad::Tensor& z) {
    ad::Tensor out = gaussian_like(z, cfg_.loss.sigma, perturb_rng_);
    for (std::size_t i = 0; i < z.size(); ++i) out[i] += z[i];
    return out;
  }

  void make_optimizers() {
    std::vector<ad::Tensor*> gp = model_.mapper.parameters();
    for (ad::Tensor* t : model_.generator.parameters()) gp.push_back(t);
    if (is_quantized(cfg_.mode)) {
      gp.push_back(&model_.codebook.codes);
      gp.push_back(&model_.codebook.projection);
    }
    opt_g_.emplace(std::move(gp), cfg_.optimizer.adam);
    opt_d_.emplace(model_.discriminator.parameters(), cfg_.optimizer.adam);
  }

  [[noreturn]] void abort_step(const StepLosses& l, const char* phase) {
    std::ostringstream m;
    m << "non-finite " << phase << " loss at step " << step_ << ": adv_g=" << l.adv_g << " adv_d=" << l.adv_d
      << " sq=" << l.sq << " uniformity=" << l.uniformity << " qcr=" << l.qcr << " total_g=" << l.total_g
      << " total_d=" << l.total_d << "; grad norms g=" << opt_g_->grad_norm() << " d=" << opt_d_->grad_norm();
    throw NumericAbort(m.str());
  }

  TrainConfig cfg_;
  Dataset data_;
  GanModel model_;
  Rng data_rng_, latent_rng_, perturb_rng_;
  ad::Tensor eval_z_, eval_real_;
  std::optional<Adam> opt_g_, opt_d_;
  std::optional<FeatureProvider> provider_;
  std::optional<CodeEmbedder> embedder_;
  std::optional<CbiReport> cbi_report_;
  StepLosses last_;
  std::size_t step_ = 0;
  bool initialized_ = false;
};

}  // namespace sqgan

#pragma once

// Training configuration, read from JSON. Unknown keys are rejected so a
// misspelled option never falls back silently to a default.

#include <cstdint>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "sqgan/cbi.hpp"
#include "sqgan/dataset.hpp"
#include "sqgan/errors.hpp"
#include "sqgan/networks.hpp"
#include "sqgan/objectives.hpp"
#include "sqgan/optimizer.hpp"
#include "sqgan/sinkhorn.hpp"

namespace sqgan {

enum class Mode { plain_gan, gan_cr, sq_gan, sq_gan_cbi };

inline std::string to_string(Mode m) {
  switch (m) {
    case Mode::plain_gan: return "plain_gan";
    case Mode::gan_cr: return "gan_cr";
    case Mode::sq_gan: return "sq_gan";
    case Mode::sq_gan_cbi: return "sq_gan_cbi";
  }
  return "?";
}

inline Mode mode_from_string(const std::string& s) {
  if (s == "plain_gan") return Mode::plain_gan;
  if (s == "gan_cr") return Mode::gan_cr;
  if (s == "sq_gan") return Mode::sq_gan;
  if (s == "sq_gan_cbi") return Mode::sq_gan_cbi;
  throw ConfigError("unknown mode '" + s + "' (expected plain_gan, gan_cr, sq_gan or sq_gan_cbi)");
}

inline bool is_quantized(Mode m) { return m == Mode::sq_gan || m == Mode::sq_gan_cbi; }

struct CodebookConfig {
  std::size_t k = 256;
  double t = 2.0;
  double beta = 0.25;
  std::size_t d_p = 0;  // 0 means d_c
  double projection_noise = 0.01;
};

struct OptimizerConfig {
  AdamOptions adam{};
  std::size_t steps = 20000;
  std::size_t batch_size = 64;
};

struct EvalConfig {
  std::size_t interval = 500;
  std::size_t samples = 2000;
  double mmd_bandwidth = 0.1;
  double coverage_std_multiple = 3.0;
  double coverage_min_fraction = 0.01;
};

struct TrainConfig {
  Mode mode = Mode::sq_gan;
  std::uint64_t seed = 0;
  std::string output_dir;  // empty: keep everything in memory
  DatasetSpec dataset;
  ModelDims dims;
  MlpSpec mapper, generator, discriminator;
  CodebookConfig codebook;
  LossWeights loss;
  OptimizerConfig optimizer;
  EvalConfig eval;
  std::size_t checkpoint_interval = 0;  // 0: final checkpoint only
  std::optional<CbiSettings> cbi;

  std::size_t code_dim() const { return dims.code_dim(); }
  std::size_t projection_dim() const { return codebook.d_p == 0 ? code_dim() : codebook.d_p; }

  void validate() const {
    if (dims.s == 0 || dims.d_w % dims.s != 0)
      throw ConfigError("d_w=" + std::to_string(dims.d_w) + " is not divisible by s=" + std::to_string(dims.s));
    if (dims.data_dim != dataset.data_dim())
      throw ConfigError("data_dim does not match the dataset (" + std::to_string(dataset.data_dim()) + ")");
    mapper.validate("mapper");
    generator.validate("generator");
    discriminator.validate("discriminator");
    if (mapper.input_width() != dims.d_z || mapper.output_width() != dims.d_w)
      throw ConfigError("mapper layer_widths must run from d_z to d_w");
    if (generator.input_width() != dims.d_w || generator.output_width() != dims.data_dim)
      throw ConfigError("generator layer_widths must run from d_w to the data dimension");
    if (discriminator.input_width() != dims.data_dim || discriminator.output_width() != 1)
      throw ConfigError("discriminator layer_widths must run from the data dimension to 1");
    if (codebook.k < 2) throw ConfigError("codebook.k must be at least 2");
    if (!(codebook.t > 0.0)) throw ConfigError("codebook.t must be positive");
    loss.validate();
    if (!(optimizer.adam.lr > 0.0)) throw ConfigError("optimizer.lr must be positive");
    if (optimizer.batch_size < 2) throw ConfigError("optimizer.batch_size must be at least 2");
    if (eval.samples < 2) throw ConfigError("eval.samples must be at least 2");
    if (mode == Mode::sq_gan_cbi && !cbi) throw ConfigError("mode sq_gan_cbi requires a cbi section");
    if (cbi) {
      if (cbi->batch_data == 0 || cbi->batch_latent == 0) throw ConfigError("cbi batch sizes must be positive");
      if (cbi->provider == ProviderKind::file_backed && cbi->feature_file.empty())
        throw ConfigError("cbi provider file_backed requires feature_file");
      if (!(cbi->sinkhorn.eta > 0.0)) throw ConfigError("cbi.eta must be positive");
    }
  }
};

namespace detail {

using nlohmann::json;

inline void check_keys(const json& j, const std::string& where, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
  const std::set<std::string> ok(allowed.begin(), allowed.end());
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!ok.count(it.key())) throw ConfigError("unknown key '" + it.key() + "' in " + where);
}

template <class T>
void read(const json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(where + "." + key + " has the wrong type");
  }
}

inline MlpSpec read_mlp(const json& j, const std::string& where, std::size_t in, std::size_t out,
                        std::uint64_t seed) {
  std::vector<std::size_t> hidden = {64, 64, 64};
  std::string act = "leaky_relu";
  MlpSpec spec = MlpSpec::uniform(in, hidden, out, Activation::leaky_relu, seed);
  if (j.is_null()) return spec;
  check_keys(j, where, {"layer_widths", "nonlinearity", "seed"});
  read(j, "layer_widths", spec.layer_widths, where);
  read(j, "nonlinearity", act, where);
  read(j, "seed", spec.seed, where);
  if (spec.layer_widths.size() < 2) throw ConfigError(where + ".layer_widths needs at least 2 entries");
  spec.activations.assign(spec.layer_widths.size() - 2, activation_from_string(act));
  spec.activations.push_back(Activation::none);
  return spec;
}

inline json mlp_json(const MlpSpec& s) {
  return {{"layer_widths", s.layer_widths},
          {"nonlinearity", s.activations.size() > 1 ? to_string(s.activations.front()) : "none"},
          {"seed", s.seed}};
}

}  // namespace detail

inline TrainConfig parse_config(const nlohmann::json& j) {
  using detail::read;
  detail::check_keys(j, "config", {"mode", "seed", "output_dir", "dataset", "dims", "mapper", "generator",
                                   "discriminator", "codebook", "loss", "optimizer", "eval", "checkpoint", "cbi"});
  TrainConfig c;
  std::string mode = "sq_gan";
  read(j, "mode", mode, "config");
  c.mode = mode_from_string(mode);
  read(j, "seed", c.seed, "config");
  read(j, "output_dir", c.output_dir, "config");

  c.dataset.seed = c.seed;
  if (j.contains("dataset")) {
    const auto& d = j["dataset"];
    detail::check_keys(d, "dataset", {"kind", "size", "seed", "modes", "radius", "std"});
    std::string kind = "gauss_mixture";
    read(d, "kind", kind, "dataset");
    c.dataset.kind = dataset_kind_from_string(kind);
    if (c.dataset.kind == DatasetKind::tiny_raster) c.dataset.std = 0.05;
    read(d, "size", c.dataset.size, "dataset");
    read(d, "seed", c.dataset.seed, "dataset");
    read(d, "modes", c.dataset.modes, "dataset");
    read(d, "radius", c.dataset.radius, "dataset");
    read(d, "std", c.dataset.std, "dataset");
  }
  c.dims.data_dim = c.dataset.data_dim();
  if (j.contains("dims")) {
    const auto& d = j["dims"];
    detail::check_keys(d, "dims", {"d_z", "d_w", "s"});
    read(d, "d_z", c.dims.d_z, "dims");
    read(d, "d_w", c.dims.d_w, "dims");
    read(d, "s", c.dims.s, "dims");
  }
  auto section = [&](const char* k) { return j.contains(k) ? j[k] : nlohmann::json(); };
  c.mapper = detail::read_mlp(section("mapper"), "mapper", c.dims.d_z, c.dims.d_w, Rng::mix(c.seed, "mapper"));
  c.generator =
      detail::read_mlp(section("generator"), "generator", c.dims.d_w, c.dims.data_dim, Rng::mix(c.seed, "generator"));
  c.discriminator = detail::read_mlp(section("discriminator"), "discriminator", c.dims.data_dim, 1,
                                     Rng::mix(c.seed, "discriminator"));

  if (j.contains("codebook")) {
    const auto& d = j["codebook"];
    detail::check_keys(d, "codebook", {"k", "d_c", "t", "beta", "d_p", "projection_noise"});
    read(d, "k", c.codebook.k, "codebook");
    read(d, "t", c.codebook.t, "codebook");
    read(d, "beta", c.codebook.beta, "codebook");
    read(d, "d_p", c.codebook.d_p, "codebook");
    read(d, "projection_noise", c.codebook.projection_noise, "codebook");
    if (d.contains("d_c")) {
      std::size_t d_c = 0;
      read(d, "d_c", d_c, "codebook");
      if (c.dims.s == 0 || d_c * c.dims.s != c.dims.d_w)
        throw ConfigError("codebook.d_c=" + std::to_string(d_c) + " must equal d_w / s");
    }
  }
  c.loss.beta = c.codebook.beta;
  if (j.contains("loss")) {
    const auto& d = j["loss"];
    detail::check_keys(d, "loss", {"lambda_sq", "lambda_qcr", "lambda_fd", "lambda_g", "sigma"});
    read(d, "lambda_sq", c.loss.lambda_sq, "loss");
    read(d, "lambda_qcr", c.loss.lambda_qcr, "loss");
    read(d, "lambda_fd", c.loss.lambda_fd, "loss");
    read(d, "lambda_g", c.loss.lambda_g, "loss");
    read(d, "sigma", c.loss.sigma, "loss");
  }
  if (j.contains("optimizer")) {
    const auto& d = j["optimizer"];
    detail::check_keys(d, "optimizer", {"lr", "beta1", "beta2", "eps", "steps", "batch_size"});
    read(d, "lr", c.optimizer.adam.lr, "optimizer");
    read(d, "beta1", c.optimizer.adam.beta1, "optimizer");
    read(d, "beta2", c.optimizer.adam.beta2, "optimizer");
    read(d, "eps", c.optimizer.adam.eps, "optimizer");
    read(d, "steps", c.optimizer.steps, "optimizer");
    read(d, "batch_size", c.optimizer.batch_size, "optimizer");
  }
  if (j.contains("eval")) {
    const auto& d = j["eval"];
    detail::check_keys(d, "eval",
                       {"interval", "samples", "mmd_bandwidth", "coverage_std_multiple", "coverage_min_fraction"});
    read(d, "interval", c.eval.interval, "eval");
    read(d, "samples", c.eval.samples, "eval");
    read(d, "mmd_bandwidth", c.eval.mmd_bandwidth, "eval");
    read(d, "coverage_std_multiple", c.eval.coverage_std_multiple, "eval");
    read(d, "coverage_min_fraction", c.eval.coverage_min_fraction, "eval");
  }
  if (j.contains("checkpoint")) {
    const auto& d = j["checkpoint"];
    detail::check_keys(d, "checkpoint", {"interval"});
    read(d, "interval", c.checkpoint_interval, "checkpoint");
  }
  if (j.contains("cbi")) {
    const auto& d = j["cbi"];
    detail::check_keys(d, "cbi",
                       {"steps", "batch_data", "batch_latent", "tokens", "d_e", "hidden", "metric", "eta", "tol",
                        "max_iter", "lr", "weights", "provider", "feature_file", "usage_samples"});
    CbiSettings s;
    if (c.dataset.kind == DatasetKind::tiny_raster) s.tokens = 4;
    read(d, "steps", s.steps, "cbi");
    read(d, "batch_data", s.batch_data, "cbi");
    read(d, "batch_latent", s.batch_latent, "cbi");
    read(d, "tokens", s.tokens, "cbi");
    read(d, "d_e", s.d_e, "cbi");
    read(d, "hidden", s.hidden, "cbi");
    std::string metric = to_string(s.metric);
    read(d, "metric", metric, "cbi");
    s.metric = metric_from_string(metric);
    read(d, "eta", s.sinkhorn.eta, "cbi");
    read(d, "tol", s.sinkhorn.tol, "cbi");
    read(d, "max_iter", s.sinkhorn.max_iter, "cbi");
    read(d, "lr", s.adam.lr, "cbi");
    if (d.contains("weights")) {
      const auto& w = d["weights"];
      detail::check_keys(w, "cbi.weights", {"sq", "uf", "ot"});
      read(w, "sq", s.weights.sq, "cbi.weights");
      read(w, "uf", s.weights.uf, "cbi.weights");
      read(w, "ot", s.weights.ot, "cbi.weights");
    }
    std::string provider = "frozen_random_mlp";
    read(d, "provider", provider, "cbi");
    if (provider == "frozen_random_mlp")
      s.provider = ProviderKind::frozen_random_mlp;
    else if (provider == "file_backed")
      s.provider = ProviderKind::file_backed;
    else
      throw ConfigError("unknown cbi provider '" + provider + "'");
    read(d, "feature_file", s.feature_file, "cbi");
    read(d, "usage_samples", s.usage_samples, "cbi");
    c.cbi = s;
  }
  c.validate();
  return c;
}

inline TrainConfig parse_config_text(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  return parse_config(j);
}

inline TrainConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_config_text(text);
}

// Fully resolved config; parse_config(config_json(c)) reproduces c.
inline nlohmann::json config_json(const TrainConfig& c) {
  nlohmann::json j;
  j["mode"] = to_string(c.mode);
  j["seed"] = c.seed;
  j["output_dir"] = c.output_dir;
  j["dataset"] = {{"kind", to_string(c.dataset.kind)}, {"size", c.dataset.size}, {"seed", c.dataset.seed},
                  {"modes", c.dataset.modes},          {"radius", c.dataset.radius}, {"std", c.dataset.std}};
  j["dims"] = {{"d_z", c.dims.d_z}, {"d_w", c.dims.d_w}, {"s", c.dims.s}};
  j["mapper"] = detail::mlp_json(c.mapper);
  j["generator"] = detail::mlp_json(c.generator);
  j["discriminator"] = detail::mlp_json(c.discriminator);
  j["codebook"] = {{"k", c.codebook.k},       {"d_c", c.code_dim()}, {"t", c.codebook.t},
                   {"beta", c.codebook.beta}, {"d_p", c.projection_dim()}, {"projection_noise", c.codebook.projection_noise}};
  j["loss"] = {{"lambda_sq", c.loss.lambda_sq}, {"lambda_qcr", c.loss.lambda_qcr}, {"lambda_fd", c.loss.lambda_fd},
               {"lambda_g", c.loss.lambda_g},   {"sigma", c.loss.sigma}};
  j["optimizer"] = {{"lr", c.optimizer.adam.lr},     {"beta1", c.optimizer.adam.beta1},
                    {"beta2", c.optimizer.adam.beta2}, {"eps", c.optimizer.adam.eps},
                    {"steps", c.optimizer.steps},      {"batch_size", c.optimizer.batch_size}};
  j["eval"] = {{"interval", c.eval.interval},
               {"samples", c.eval.samples},
               {"mmd_bandwidth", c.eval.mmd_bandwidth},
               {"coverage_std_multiple", c.eval.coverage_std_multiple},
               {"coverage_min_fraction", c.eval.coverage_min_fraction}};
  j["checkpoint"] = {{"interval", c.checkpoint_interval}};
  if (c.cbi) {
    const CbiSettings& s = *c.cbi;
    j["cbi"] = {{"steps", s.steps},
                {"batch_data", s.batch_data},
                {"batch_latent", s.batch_latent},
                {"tokens", s.tokens},
                {"d_e", s.d_e},
                {"hidden", s.hidden},
                {"metric", to_string(s.metric)},
                {"eta", s.sinkhorn.eta},
                {"tol", s.sinkhorn.tol},
                {"max_iter", s.sinkhorn.max_iter},
                {"lr", s.adam.lr},
                {"weights", {{"sq", s.weights.sq}, {"uf", s.weights.uf}, {"ot", s.weights.ot}}},
                {"provider", s.provider == ProviderKind::file_backed ? "file_backed" : "frozen_random_mlp"},
                {"feature_file", s.feature_file},
                {"usage_samples", s.usage_samples}};
  }
  return j;
}

// FNV-1a over the canonical JSON text.
inline std::uint64_t config_hash(const TrainConfig& c) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : config_json(c).dump()) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace sqgan

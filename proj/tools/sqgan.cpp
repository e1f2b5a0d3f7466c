// Command-line front end: train, init-codebook, eval, sinkhorn, gen-data.
//
// Exit codes: 0 success, 1 configuration or input error, 2 numeric abort.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "sqgan/cbi.hpp"
#include "sqgan/checkpoint.hpp"
#include "sqgan/config.hpp"
#include "sqgan/dataset.hpp"
#include "sqgan/metrics.hpp"
#include "sqgan/sinkhorn.hpp"
#include "sqgan/trainer.hpp"

namespace fs = std::filesystem;
using namespace sqgan;

namespace {

int cmd_train(const std::string& config_path, bool quiet) {
  Trainer trainer(load_config(config_path));
  const TrainConfig& c = trainer.config();
  if (!quiet)
    std::cerr << "mode " << to_string(c.mode) << ", " << c.optimizer.steps << " steps, seed " << c.seed << '\n';
  trainer.initialize();
  if (!quiet && trainer.cbi_report()) {
    const CbiReport& r = *trainer.cbi_report();
    std::cerr << "codebook initialization: usage " << r.initial_usage << " -> " << r.final_usage << '\n';
  }
  trainer.run([&](const MetricsRow& r) {
    if (quiet) return;
    std::cerr << "step " << r.step << "  adv_g " << r.adv_g << "  adv_d " << r.adv_d << "  usage " << r.usage
              << "  coverage " << r.mode_coverage << "  mmd " << r.kernel_mmd << '\n';
  });
  if (!c.output_dir.empty() && !quiet) std::cerr << "wrote " << c.output_dir << '\n';
  return 0;
}

int cmd_init_codebook(const std::string& config_path, const std::string& out) {
  TrainConfig c = load_config(config_path);
  if (!c.cbi) throw ConfigError("init-codebook requires a cbi section in the config");
  c.mode = Mode::sq_gan_cbi;
  Trainer trainer(c);
  trainer.initialize();
  const CbiReport& r = *trainer.cbi_report();
  save_checkpoint(out, trainer.model(), config_hash(c));
  std::cout << "usage_before " << r.initial_usage << "\nusage_after " << r.final_usage << "\nfinal_ot "
            << (r.trace.empty() ? 0.0 : r.trace.back().ot) << '\n';
  return 0;
}

int cmd_eval(const std::string& ckpt, const std::string& metrics, std::string config_path) {
  if (config_path.empty()) config_path = (fs::path(ckpt).parent_path() / "config.json").string();
  TrainConfig c = load_config(config_path);
  c.output_dir.clear();
  CheckpointInfo info;
  GanModel model = load_checkpoint(ckpt, c.dims, &info);
  if (info.config_hash != config_hash(load_config(config_path)))
    std::cerr << "warning: checkpoint was written under a different config\n";
  Trainer trainer(c);
  trainer.model() = std::move(model);
  const EvalSummary s = trainer.evaluate();
  std::ofstream out(metrics, std::ios::trunc);
  if (!out) throw Error("cannot write " + metrics);
  out << kMetricsHeader << '\n' << to_csv(s.row) << '\n';
  return 0;
}

ad::Tensor read_matrix(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open cost file " + path);
  std::vector<double> values;
  std::size_t rows = 0, cols = 0;
  std::string line;
  while (std::getline(in, line)) {
    for (char& ch : line)
      if (ch == ',') ch = ' ';
    std::istringstream s(line);
    std::vector<double> row;
    double v;
    while (s >> v) row.push_back(v);
    if (!s.eof()) throw ConfigError("non-numeric entry in cost file " + path);
    if (row.empty()) continue;
    if (cols == 0) cols = row.size();
    if (row.size() != cols) throw ConfigError("ragged cost matrix in " + path);
    values.insert(values.end(), row.begin(), row.end());
    ++rows;
  }
  if (rows == 0) throw ConfigError("empty cost file " + path);
  return ad::Tensor({rows, cols}, std::move(values));
}

int cmd_sinkhorn(const std::string& path, double eta, double tol, std::size_t max_iter, bool log_domain,
                 bool normalize) {
  CostMatrix c{read_matrix(path)};
  if (normalize) c = normalized(std::move(c));
  const auto p = uniform_marginal(c.values.rows()), q = uniform_marginal(c.values.cols());
  const SinkhornState st =
      log_domain ? log_domain_sinkhorn(c, p, q, eta, tol, max_iter) : sinkhorn(c, p, q, eta, tol, max_iter);
  std::printf("iterations %zu\nconverged %d\nmarginal_error %.3e\ntransport_cost %.12g\n", st.iterations,
              st.converged ? 1 : 0, st.marginal_error, st.transport_cost(c));
  for (std::size_t i = 0; i < st.plan.rows(); ++i) {
    for (std::size_t j = 0; j < st.plan.cols(); ++j) std::printf(j ? " %.10g" : "%.10g", st.plan(i, j));
    std::printf("\n");
  }
  return 0;
}

int cmd_gen_data(const std::string& kind, std::size_t size, std::uint64_t seed, const std::string& out_path) {
  DatasetSpec spec;
  spec.kind = dataset_kind_from_string(kind);
  spec.size = size;
  spec.seed = seed;
  if (spec.kind == DatasetKind::tiny_raster) spec.std = 0.05;
  const Dataset d = make_dataset(spec);
  std::ofstream out(out_path, std::ios::trunc);
  if (!out) throw Error("cannot write " + out_path);
  for (std::size_t j = 0; j < d.dim(); ++j) out << 'x' << j << ',';
  out << "label\n";
  for (std::size_t i = 0; i < d.size(); ++i) {
    for (double v : d.samples.row(i)) out << format_double(v) << ',';
    out << d.labels[i] << '\n';
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Style-quantized GAN toolkit"};
  app.require_subcommand(1);

  std::string config, out, ckpt, metrics, cost, kind;
  bool quiet = false, log_domain = false, normalize = false;
  double eta = 0.05, tol = 1e-6;
  std::size_t max_iter = 1000, size = 2000;
  std::uint64_t seed = 0;

  auto* train = app.add_subcommand("train", "run adversarial training from a JSON config");
  train->add_option("--config", config, "config file")->required();
  train->add_flag("--quiet", quiet, "suppress progress output");

  auto* init = app.add_subcommand("init-codebook", "run codebook initialization only and save a checkpoint");
  init->add_option("--config", config, "config file with a cbi section")->required();
  init->add_option("--out", out, "checkpoint path")->required();

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint and write one metrics row");
  eval->add_option("--ckpt", ckpt, "checkpoint path")->required();
  eval->add_option("--metrics", metrics, "output CSV")->required();
  eval->add_option("--config", config, "config file (default: config.json next to the checkpoint)");

  auto* sk = app.add_subcommand("sinkhorn", "solve entropic OT for a cost matrix with uniform marginals");
  sk->add_option("--cost", cost, "whitespace- or comma-separated cost matrix")->required();
  sk->add_option("--eta", eta, "entropic regularization")->capture_default_str();
  sk->add_option("--tol", tol, "marginal tolerance")->capture_default_str();
  sk->add_option("--max-iter", max_iter, "iteration cap")->capture_default_str();
  sk->add_flag("--log-domain", log_domain, "use the log-domain solver");
  sk->add_flag("--normalize", normalize, "divide costs by their maximum first");

  auto* gen = app.add_subcommand("gen-data", "write a synthetic dataset as CSV");
  gen->add_option("--kind", kind, "gauss_mixture, rings or tiny_raster")->required();
  gen->add_option("--size", size, "number of samples")->capture_default_str();
  gen->add_option("--seed", seed, "dataset seed")->capture_default_str();
  gen->add_option("--out", out, "output CSV")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    if (*train) return cmd_train(config, quiet);
    if (*init) return cmd_init_codebook(config, out);
    if (*eval) return cmd_eval(ckpt, metrics, config);
    if (*sk) return cmd_sinkhorn(cost, eta, tol, max_iter, log_domain, normalize);
    if (*gen) return cmd_gen_data(kind, size, seed, out);
  } catch (const NumericAbort& e) {
    std::cerr << "numeric abort: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

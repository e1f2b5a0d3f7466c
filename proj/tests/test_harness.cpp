#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>
#include <vector>

#include "sqgan/checkpoint.hpp"
#include "sqgan/config.hpp"
#include "sqgan/dataset.hpp"
#include "sqgan/metrics.hpp"
#include "sqgan/trainer.hpp"
#include "support.hpp"

namespace fs = std::filesystem;
using namespace sqgan;
using sqgan::testing::random_tensor;

namespace {

Dataset mixture(std::size_t size, std::uint64_t seed) {
  DatasetSpec s;
  s.size = size;
  s.seed = seed;
  return make_dataset(s);
}

TrainConfig tiny_config(Mode mode, std::uint64_t seed = 0) {
  std::ostringstream j;
  j << R"({"mode":")" << to_string(mode) << R"(","seed":)" << seed << R"(,
    "dims":{"d_z":8,"d_w":8,"s":4},
    "mapper":{"layer_widths":[8,16,8]},
    "generator":{"layer_widths":[8,16,2]},
    "discriminator":{"layer_widths":[2,16,1]},
    "codebook":{"k":16},
    "optimizer":{"steps":12,"batch_size":16},
    "eval":{"interval":4,"samples":64})";
  if (mode == Mode::sq_gan_cbi) j << R"(,"cbi":{"steps":3,"batch_data":8,"batch_latent":8,"d_e":4,"hidden":8,"usage_samples":64})";
  j << "}";
  return parse_config_text(j.str());
}

std::vector<double> all_parameters(GanModel& m) {
  std::vector<double> out;
  for (Mlp* net : {&m.mapper, &m.generator, &m.discriminator})
    for (ad::Tensor* p : net->parameters()) out.insert(out.end(), p->values().begin(), p->values().end());
  out.insert(out.end(), m.codebook.codes.values().begin(), m.codebook.codes.values().end());
  out.insert(out.end(), m.codebook.projection.values().begin(), m.codebook.projection.values().end());
  out.push_back(m.codebook.rbf_scale);
  return out;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / ("sqgan_" + name)) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

}  // namespace

// ---------------------------------------------------------------- datasets

TEST(Dataset, MixtureModeCountsWithinMultinomialBound) {
  DatasetSpec s;
  s.size = 8000;
  const Dataset d = make_dataset(s);
  std::vector<std::size_t> counts(8, 0);
  for (std::size_t l : d.labels) ++counts[l];
  for (std::size_t c : counts) EXPECT_NEAR(static_cast<double>(c), 1000.0, 80.0);
  const auto centers = d.centers();
  for (std::size_t k = 0; k < 8; ++k) {
    EXPECT_NEAR(std::hypot(centers[k][0], centers[k][1]), 2.0, 1e-12);
    const double angle = 2.0 * std::numbers::pi * static_cast<double>(k) / 8.0;
    EXPECT_NEAR(centers[k][0], 2.0 * std::cos(angle), 1e-12);
  }
  for (std::size_t i = 0; i < d.size(); ++i) {
    const auto& c = centers[d.labels[i]];
    EXPECT_LT(std::hypot(d.samples(i, 0) - c[0], d.samples(i, 1) - c[1]), 6.0 * 0.02 * std::sqrt(2.0));
  }
}

TEST(Dataset, DeterministicRegeneration) {
  for (DatasetKind kind : {DatasetKind::gauss_mixture, DatasetKind::rings, DatasetKind::tiny_raster}) {
    DatasetSpec s;
    s.kind = kind;
    s.size = 300;
    s.seed = 5;
    const Dataset a = make_dataset(s), b = make_dataset(s);
    EXPECT_EQ(a.samples.values(), b.samples.values());
    EXPECT_EQ(a.labels, b.labels);
    s.seed = 6;
    EXPECT_NE(make_dataset(s).samples.values(), a.samples.values());
  }
  EXPECT_THROW(dataset_kind_from_string("mnist"), ConfigError);
  DatasetSpec empty;
  empty.size = 0;
  EXPECT_THROW(make_dataset(empty), ConfigError);
}

TEST(Dataset, RingRadiiWithinSixSigma) {
  DatasetSpec s;
  s.kind = DatasetKind::rings;
  s.size = 3000;
  s.modes = 3;
  const Dataset d = make_dataset(s);
  for (std::size_t i = 0; i < d.size(); ++i) {
    const double r = 2.0 * static_cast<double>(d.labels[i] + 1) / 3.0;
    EXPECT_LT(std::abs(std::hypot(d.samples(i, 0), d.samples(i, 1)) - r), 6.0 * s.std);
  }
}

TEST(Dataset, RasterGlyphsAreRecoverable) {
  DatasetSpec s;
  s.kind = DatasetKind::tiny_raster;
  s.size = 50;
  s.std = 0.0;
  const Dataset d = make_dataset(s);
  ASSERT_EQ(d.dim(), 64u);
  const auto& glyphs = raster_glyphs();
  for (std::size_t i = 0; i < d.size(); ++i) {
    const ad::Tensor tok = tokenize(d.samples.row(i), DatasetKind::tiny_raster, 4);
    ASSERT_EQ(tok.shape(), (ad::Shape{4, 16}));
    std::size_t code = d.labels[i];
    for (std::size_t q = 4; q-- > 0;) {
      const std::size_t gidx = code % 8;
      code /= 8;
      for (std::size_t p = 0; p < 16; ++p) EXPECT_EQ(tok(q, p), glyphs[gidx][p]);
    }
  }
}

// ---------------------------------------------------------------- metrics

TEST(ModeCoverage, TrivialCases) {
  const Dataset d = mixture(100, 0);
  const auto centers = d.centers();
  ad::Tensor even({800, 2}), collapsed({800, 2});
  for (std::size_t i = 0; i < 800; ++i) {
    even(i, 0) = centers[i % 8][0];
    even(i, 1) = centers[i % 8][1];
    collapsed(i, 0) = centers[3][0];
    collapsed(i, 1) = centers[3][1];
  }
  EXPECT_EQ(mode_coverage(even, d), 1.0);
  EXPECT_EQ(mode_coverage(collapsed, d), 1.0 / 8.0);
  DatasetSpec rings;
  rings.kind = DatasetKind::rings;
  EXPECT_THROW(mode_coverage(even, make_dataset(rings)), Error);
}

TEST(ModeCoverage, MatchesBruteForceAssignment) {
  const Dataset d = mixture(100, 1);
  const auto centers = d.centers();
  Rng rng(1, "coverage");
  for (int trial = 0; trial < 50; ++trial) {
    ad::Tensor x({400, 2});
    for (std::size_t i = 0; i < 400; ++i) {
      // Mix of near-center draws and background noise.
      const auto& c = centers[rng.index(trial % 8 + 1)];
      const double spread = rng.uniform() < 0.5 ? 0.05 : 1.0;
      x(i, 0) = c[0] + rng.normal(0.0, spread);
      x(i, 1) = c[1] + rng.normal(0.0, spread);
    }
    std::vector<std::size_t> hits(8, 0);
    for (std::size_t i = 0; i < 400; ++i) {
      for (std::size_t k = 0; k < 8; ++k) {
        const auto& c = centers[k];
        if (std::hypot(x(i, 0) - c[0], x(i, 1) - c[1]) <= 0.06) ++hits[k];
      }
    }
    double covered = 0.0;
    for (std::size_t h : hits)
      if (h >= 4) covered += 1.0;
    EXPECT_EQ(mode_coverage(x, d), covered / 8.0) << "trial " << trial;
  }
}

TEST(KernelMmd, PointMassClosedForm) {
  const double h = 0.5, dist = 1.3;
  ad::Tensor a({200, 2}), b({200, 2});
  for (std::size_t i = 0; i < 200; ++i) b(i, 0) = dist;
  const double expected = 2.0 * (1.0 - std::exp(-dist * dist / (2.0 * h * h)));
  EXPECT_NEAR(kernel_mmd(a, b, h), expected, 1e-12);
}

TEST(KernelMmd, SameSetStaysWithinVarianceBound) {
  Rng rng(2, "mmd");
  for (std::size_t n : {50u, 200u, 800u}) {
    const auto x = random_tensor({n, 2}, rng);
    EXPECT_LT(std::abs(kernel_mmd(x, x, 0.5)), 3.0 / std::sqrt(static_cast<double>(n)));
  }
}

TEST(KernelMmd, PermutationInvariantAndErrors) {
  Rng rng(3, "mmd-perm");
  const auto x = random_tensor({30, 2}, rng), y = random_tensor({40, 2}, rng, 2.0);
  ad::Tensor xr({30, 2});
  for (std::size_t i = 0; i < 30; ++i)
    for (std::size_t e = 0; e < 2; ++e) xr(i, e) = x(29 - i, e);
  EXPECT_NEAR(kernel_mmd(x, y, 0.3), kernel_mmd(xr, y, 0.3), 1e-14);
  const double direct = [&] {
    auto k = [](std::span<const double> a, std::span<const double> b) {
      return std::exp(-((a[0] - b[0]) * (a[0] - b[0]) + (a[1] - b[1]) * (a[1] - b[1])) / (2.0 * 0.09));
    };
    double xx = 0, yy = 0, xy = 0;
    for (std::size_t i = 0; i < 30; ++i)
      for (std::size_t j = 0; j < 30; ++j)
        if (i != j) xx += k(x.row(i), x.row(j));
    for (std::size_t i = 0; i < 40; ++i)
      for (std::size_t j = 0; j < 40; ++j)
        if (i != j) yy += k(y.row(i), y.row(j));
    for (std::size_t i = 0; i < 30; ++i)
      for (std::size_t j = 0; j < 40; ++j) xy += k(x.row(i), y.row(j));
    return xx / (30.0 * 29.0) + yy / (40.0 * 39.0) - 2.0 * xy / (30.0 * 40.0);
  }();
  EXPECT_NEAR(kernel_mmd(x, y, 0.3), direct, 1e-12);
  EXPECT_THROW(kernel_mmd(ad::Tensor({1, 2}), y, 0.3), Error);
  EXPECT_THROW(kernel_mmd(x, ad::Tensor({5, 3}), 0.3), Error);
}

TEST(CosineSimilarity, TrivialCasesAndBruteForce) {
  EXPECT_NEAR(mean_cosine_similarity(ad::Tensor::matrix({{1, 2}, {2, 4}, {0.5, 1}})).mean, 1.0, 1e-15);
  EXPECT_NEAR(mean_cosine_similarity(ad::Tensor::matrix({{1, 0, 0}, {0, 3, 0}, {0, 0, 2}})).mean, 0.0, 1e-15);
  Rng rng(4, "cos");
  for (int trial = 0; trial < 20; ++trial) {
    const auto x = random_tensor({10, 5}, rng);
    double s = 0.0;
    int pairs = 0;
    for (std::size_t i = 0; i < 10; ++i)
      for (std::size_t j = i + 1; j < 10; ++j) {
        double dot = 0, a = 0, b = 0;
        for (std::size_t e = 0; e < 5; ++e) {
          dot += x(i, e) * x(j, e);
          a += x(i, e) * x(i, e);
          b += x(j, e) * x(j, e);
        }
        s += dot / std::sqrt(a * b);
        ++pairs;
      }
    EXPECT_NEAR(mean_cosine_similarity(x).mean, s / pairs, 1e-13);
  }
  const CosineSimilarity z = mean_cosine_similarity(ad::Tensor::matrix({{1, 0}, {0, 0}, {1, 1}}));
  EXPECT_EQ(z.excluded, 1u);
  EXPECT_NEAR(z.mean, 1.0 / std::sqrt(2.0), 1e-15);
  EXPECT_THROW(mean_cosine_similarity(ad::Tensor({1, 3})), Error);
}

TEST(MetricsCsv, RoundTripAndHeader) {
  EXPECT_STREQ(kMetricsHeader, "step,adv_g,adv_d,sq,uniformity,qcr,usage,mode_coverage,kernel_mmd,mean_cos_sim");
  MetricsRow r{17, 1.1, 0.1 + 0.2, -3e-300, 1.0 / 3.0, 0.0, 0.5, std::nan(""), 1e17, -0.25};
  const MetricsRow back = metrics_from_csv(to_csv(r));
  EXPECT_EQ(back.step, 17u);
  EXPECT_EQ(back.adv_d, r.adv_d);
  EXPECT_EQ(back.sq, r.sq);
  EXPECT_EQ(back.uniformity, r.uniformity);
  EXPECT_TRUE(std::isnan(back.mode_coverage));
  EXPECT_EQ(back.kernel_mmd, r.kernel_mmd);
  EXPECT_EQ(to_csv(back), to_csv(r));
  EXPECT_THROW(metrics_from_csv("1,2,3"), Error);
}

// ---------------------------------------------------------------- checkpoints

TEST(Checkpoint, RoundTripIsBitwise) {
  Trainer t(tiny_config(Mode::sq_gan));
  for (int i = 0; i < 3; ++i) t.step();
  const auto bytes = serialize_checkpoint(t.model(), 42);
  CheckpointInfo info;
  GanModel back = deserialize_checkpoint(bytes, &info);
  EXPECT_EQ(info.config_hash, 42u);
  EXPECT_EQ(all_parameters(back), all_parameters(t.model()));
  EXPECT_EQ(back.dims, t.model().dims);
  EXPECT_EQ(serialize_checkpoint(back, 42), bytes);
}

TEST(Checkpoint, EveryCorruptedByteIsDetected) {
  Trainer t(tiny_config(Mode::plain_gan));
  const auto bytes = serialize_checkpoint(t.model(), 7);
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    auto bad = bytes;
    bad[i] ^= 0x5A;
    EXPECT_THROW(deserialize_checkpoint(bad), CheckpointError) << "byte " << i;
  }
}

TEST(Checkpoint, DistinctErrorsForVersionTruncationAndChecksum) {
  Trainer t(tiny_config(Mode::plain_gan));
  const auto bytes = serialize_checkpoint(t.model(), 7);
  auto version = bytes;
  version[8] = 9;
  EXPECT_THROW(deserialize_checkpoint(version), VersionError);
  for (std::size_t cut : {std::size_t{0}, std::size_t{5}, std::size_t{30}, bytes.size() / 2, bytes.size() - 1}) {
    const std::vector<std::uint8_t> shorter(bytes.begin(), bytes.begin() + static_cast<long>(cut));
    EXPECT_THROW(deserialize_checkpoint(shorter), TruncatedError) << "cut " << cut;
  }
  auto payload = bytes;
  payload[bytes.size() / 2] ^= 1;
  EXPECT_THROW(deserialize_checkpoint(payload), ChecksumError);
  auto magic = bytes;
  magic[0] = 'X';
  EXPECT_THROW(deserialize_checkpoint(magic), FormatError);
}

TEST(Checkpoint, FileRoundTripAndDimensionMismatch) {
  TempDir dir("ckpt");
  Trainer t(tiny_config(Mode::sq_gan));
  const std::string path = (dir.path / "m.ckpt").string();
  save_checkpoint(path, t.model(), 3);
  GanModel back = load_checkpoint(path, t.model().dims);
  EXPECT_EQ(all_parameters(back), all_parameters(t.model()));
  ModelDims other = t.model().dims;
  other.d_z = 9;
  try {
    load_checkpoint(path, other);
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find(other.to_string()), std::string::npos) << msg;
    EXPECT_NE(msg.find(t.model().dims.to_string()), std::string::npos) << msg;
  }
  EXPECT_THROW(load_checkpoint((dir.path / "missing.ckpt").string()), Error);
}

// ---------------------------------------------------------------- config

TEST(Config, DefaultsAndCanonicalForm) {
  const TrainConfig c = parse_config_text("{}");
  EXPECT_EQ(c.mode, Mode::sq_gan);
  EXPECT_EQ(c.dims.d_z, 16u);
  EXPECT_EQ(c.code_dim(), 4u);
  EXPECT_EQ(c.codebook.beta, 0.25);
  EXPECT_EQ(c.loss.lambda_sq, 0.01);
  EXPECT_EQ(c.optimizer.adam.lr, 2e-4);
  EXPECT_EQ(c.optimizer.adam.beta1, 0.5);
  EXPECT_EQ(c.eval.interval, 500u);
  EXPECT_EQ(c.eval.samples, 2000u);
  const TrainConfig again = parse_config(config_json(c));
  EXPECT_EQ(config_json(again).dump(), config_json(c).dump());
  EXPECT_EQ(config_hash(again), config_hash(c));
  TrainConfig d = c;
  d.seed = 1;
  EXPECT_NE(config_hash(d), config_hash(c));
}

TEST(Config, UnknownKeysAreErrors) {
  for (const char* text : {R"({"optimiser":{}})", R"({"optimizer":{"learning_rate":1}})",
                           R"({"mapper":{"layers":[1]}})", R"({"cbi":{"stepz":1}})",
                           R"({"cbi":{"weights":{"ot":1,"qq":2}}})", R"({"eval":{"every":3}})"}) {
    EXPECT_THROW(parse_config_text(text), ConfigError) << text;
  }
}

TEST(Config, ConsistencyChecks) {
  EXPECT_THROW(parse_config_text(R"({"dims":{"d_w":15,"s":4}})"), ConfigError);
  EXPECT_THROW(parse_config_text(R"({"mode":"sq_gan_cbi"})"), ConfigError);
  EXPECT_THROW(parse_config_text(R"({"mode":"wgan"})"), ConfigError);
  EXPECT_THROW(parse_config_text(R"({"codebook":{"d_c":3}})"), ConfigError);
  EXPECT_THROW(parse_config_text(R"({"loss":{"lambda_sq":-1}})"), ConfigError);
  EXPECT_THROW(parse_config_text(R"({"seed":"zero"})"), ConfigError);
  EXPECT_THROW(parse_config_text("{not json"), ConfigError);
  EXPECT_NO_THROW(parse_config_text(R"({"mode":"sq_gan_cbi","cbi":{}})"));
}

// ---------------------------------------------------------------- training

TEST(Trainer, SameConfigGivesIdenticalArtifacts) {
  for (Mode mode : {Mode::plain_gan, Mode::gan_cr, Mode::sq_gan, Mode::sq_gan_cbi}) {
    // The checkpoint records the config, output directory included, so both
    // runs write to the same place.
    TempDir dir("det");
    TrainConfig c = tiny_config(mode, 3);
    c.output_dir = dir.path.string();
    Trainer(c).run();
    const std::string metrics = slurp(dir.path / "metrics.csv"), ckpt = slurp(dir.path / "final.ckpt");
    Trainer(c).run();
    EXPECT_EQ(slurp(dir.path / "metrics.csv"), metrics) << to_string(mode);
    EXPECT_TRUE(slurp(dir.path / "final.ckpt") == ckpt) << to_string(mode);
    EXPECT_NE(ckpt, "");
  }
}

TEST(Trainer, MetricsFileIsParseableCsvWithOneRowPerInterval) {
  TempDir dir("metrics");
  TrainConfig c = tiny_config(Mode::sq_gan, 4);
  c.output_dir = dir.path.string();
  c.optimizer.steps = 10;
  const auto rows = Trainer(c).run();
  std::ifstream in(dir.path / "metrics.csv");
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, kMetricsHeader);
  std::vector<std::size_t> steps;
  while (std::getline(in, line)) steps.push_back(metrics_from_csv(line).step);
  EXPECT_EQ(steps, (std::vector<std::size_t>{4, 8, 10}));
  ASSERT_EQ(rows.size(), 3u);
  for (const auto& r : rows) {
    EXPECT_GT(r.usage, 0.0);
    EXPECT_LE(r.usage, 1.0);
    EXPECT_TRUE(std::isfinite(r.kernel_mmd));
  }
  const TrainConfig written = load_config((dir.path / "config.json").string());
  EXPECT_EQ(config_hash(written), config_hash(c));
}

TEST(Trainer, CbiModeDiffersOnlyInStyleStateAtStepZero) {
  Trainer plain(tiny_config(Mode::sq_gan, 5)), cbi(tiny_config(Mode::sq_gan_cbi, 5));
  plain.initialize();
  cbi.initialize();
  auto flat = [](Mlp& m) {
    std::vector<double> v;
    for (ad::Tensor* p : m.parameters()) v.insert(v.end(), p->values().begin(), p->values().end());
    return v;
  };
  EXPECT_EQ(flat(plain.model().generator), flat(cbi.model().generator));
  EXPECT_EQ(flat(plain.model().discriminator), flat(cbi.model().discriminator));
  EXPECT_NE(plain.model().codebook.codes.values(), cbi.model().codebook.codes.values());
  EXPECT_NE(flat(plain.model().mapper), flat(cbi.model().mapper));
  ASSERT_TRUE(cbi.cbi_report().has_value());
  EXPECT_EQ(cbi.cbi_report()->trace.size(), 3u);
  EXPECT_EQ(cbi.embedder() != nullptr, true);
}

TEST(Trainer, NonQuantizedModesReportZeroUsage) {
  Trainer t(tiny_config(Mode::plain_gan));
  t.step();
  const EvalSummary s = t.evaluate();
  EXPECT_EQ(s.row.usage, 0.0);
  EXPECT_EQ(s.row.sq, 0.0);
  EXPECT_GE(s.row.mode_coverage, 0.0);
}

TEST(Trainer, NonFiniteLossAborts) {
  Trainer t(tiny_config(Mode::plain_gan));
  t.model().discriminator.bias(1)[0] = std::nan("");
  try {
    t.step();
    FAIL() << "expected NumericAbort";
  } catch (const NumericAbort& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("step 1"), std::string::npos) << msg;
    EXPECT_NE(msg.find("grad norms"), std::string::npos) << msg;
  }
}

TEST(Trainer, ZeroConsistencyWeightsMatchPlainGan) {
  TempDir a("zero_a"), b("zero_b");
  TrainConfig plain = tiny_config(Mode::plain_gan, 6), cr = tiny_config(Mode::gan_cr, 6);
  cr.loss.lambda_fd = 0.0;
  cr.loss.lambda_g = 0.0;
  plain.output_dir = a.path.string();
  cr.output_dir = b.path.string();
  Trainer(plain).run();
  Trainer(cr).run();
  EXPECT_EQ(slurp(a.path / "metrics.csv"), slurp(b.path / "metrics.csv"));
}

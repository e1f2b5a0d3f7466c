#pragma once

// Toy-scale mapping network, synthesis network and discriminator: plain
// multilayer perceptrons over vectors.

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "sqgan/autodiff.hpp"
#include "sqgan/errors.hpp"
#include "sqgan/quantizer.hpp"
#include "sqgan/rng.hpp"

namespace sqgan {

enum class Activation { leaky_relu, tanh, none };

inline std::string to_string(Activation a) {
  switch (a) {
    case Activation::leaky_relu: return "leaky_relu";
    case Activation::tanh: return "tanh";
    case Activation::none: return "none";
  }
  return "?";
}

inline Activation activation_from_string(const std::string& s) {
  if (s == "leaky_relu") return Activation::leaky_relu;
  if (s == "tanh") return Activation::tanh;
  if (s == "none") return Activation::none;
  throw ConfigError("unknown nonlinearity '" + s + "'");
}

// layer_widths lists every width from input to output, so an MLP with L
// affine layers has L+1 widths and L activations.
struct MlpSpec {
  std::vector<std::size_t> layer_widths;
  std::vector<Activation> activations;
  std::uint64_t seed = 0;

  std::size_t layers() const { return activations.size(); }
  std::size_t input_width() const { return layer_widths.front(); }
  std::size_t output_width() const { return layer_widths.back(); }

  void validate(const std::string& name) const {
    if (activations.empty()) throw ConfigError(name + ": at least one layer required");
    if (layer_widths.size() != activations.size() + 1) {
      throw ConfigError(name + ": " + std::to_string(layer_widths.size()) + " widths for " +
                        std::to_string(activations.size()) + " layers");
    }
    for (std::size_t w : layer_widths)
      if (w == 0) throw ConfigError(name + ": layer widths must be positive");
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (std::size_t l = 0; l < layers(); ++l)
      n += layer_widths[l] * layer_widths[l + 1] + layer_widths[l + 1];
    return n;
  }

  static MlpSpec uniform(std::size_t in, std::vector<std::size_t> hidden, std::size_t out,
                         Activation act, std::uint64_t seed) {
    MlpSpec s;
    s.layer_widths.push_back(in);
    for (std::size_t h : hidden) s.layer_widths.push_back(h);
    s.layer_widths.push_back(out);
    s.activations.assign(hidden.size(), act);
    s.activations.push_back(Activation::none);
    s.seed = seed;
    return s;
  }
};

class Mlp {
 public:
  Mlp() = default;

  // Weights ~ N(0, 2/fan_in), biases zero.
  explicit Mlp(MlpSpec spec) : spec_(std::move(spec)) {
    spec_.validate("mlp");
    Rng rng(spec_.seed, "mlp-init");
    for (std::size_t l = 0; l < spec_.layers(); ++l) {
      const std::size_t in = spec_.layer_widths[l], out = spec_.layer_widths[l + 1];
      ad::Tensor w({in, out});
      const double sd = std::sqrt(2.0 / static_cast<double>(in));
      for (double& v : w.values()) v = rng.normal(0.0, sd);
      ad::Tensor b({out});
      w.set_requires_grad(true);
      b.set_requires_grad(true);
      weights_.push_back(std::move(w));
      biases_.push_back(std::move(b));
    }
  }

  const MlpSpec& spec() const { return spec_; }
  std::size_t layers() const { return weights_.size(); }
  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (std::size_t l = 0; l < layers(); ++l) n += weights_[l].size() + biases_[l].size();
    return n;
  }

  ad::Tensor& weight(std::size_t l) { return weights_[l]; }
  ad::Tensor& bias(std::size_t l) { return biases_[l]; }
  const ad::Tensor& weight(std::size_t l) const { return weights_[l]; }
  const ad::Tensor& bias(std::size_t l) const { return biases_[l]; }

  std::vector<ad::Tensor*> parameters() {
    std::vector<ad::Tensor*> p;
    for (std::size_t l = 0; l < layers(); ++l) {
      p.push_back(&weights_[l]);
      p.push_back(&biases_[l]);
    }
    return p;
  }

  // Runs the network; with `track` false the parameters enter the graph as
  // constants. `features`, when given, receives the activation feeding the
  // last affine layer (the penultimate representation).
  ad::Var forward(ad::Var x, bool track = true, ad::Var* features = nullptr) {
    ad::Graph& g = x.graph();
    return run(*this, x, features, [&](ad::Tensor& t) { return g.parameter(t, track); });
  }

  // Frozen evaluation; parameters are always constants.
  ad::Var evaluate(ad::Var x, ad::Var* features = nullptr) const {
    ad::Graph& g = x.graph();
    return run(*this, x, features, [&](const ad::Tensor& t) { return g.constant(t); });
  }

 private:
  template <class Self, class Bind>
  static ad::Var run(Self& self, ad::Var x, ad::Var* features, Bind bind) {
    const MlpSpec& spec = self.spec_;
    if (x.shape().size() != 2 || x.shape()[1] != spec.input_width()) {
      throw DimensionError("mlp expects input [n x " + std::to_string(spec.input_width()) +
                           "], got " + ad::to_string(x.shape()));
    }
    ad::Var h = x;
    for (std::size_t l = 0; l < self.layers(); ++l) {
      if (features && l + 1 == self.layers()) *features = h;
      h = ad::linear(h, bind(self.weights_[l]), bind(self.biases_[l]));
      switch (spec.activations[l]) {
        case Activation::leaky_relu: h = ad::leaky_relu(h, 0.2); break;
        case Activation::tanh: h = ad::tanh(h); break;
        case Activation::none: break;
      }
    }
    return h;
  }

  MlpSpec spec_;
  std::vector<ad::Tensor> weights_;
  std::vector<ad::Tensor> biases_;
};

struct ModelDims {
  std::size_t d_z = 16;
  std::size_t d_w = 16;
  std::size_t s = 4;
  std::size_t data_dim = 2;

  std::size_t code_dim() const { return d_w / s; }
  bool operator==(const ModelDims&) const = default;
  std::string to_string() const {
    return "(d_z=" + std::to_string(d_z) + ", d_w=" + std::to_string(d_w) +
           ", s=" + std::to_string(s) + ", data_dim=" + std::to_string(data_dim) + ")";
  }
};

struct GanModel {
  ModelDims dims;
  Mlp mapper;         // z -> w
  Mlp generator;      // w (or wq) -> x
  Mlp discriminator;  // x -> logit
  Codebook codebook;

  void validate() const {
    if (dims.s == 0 || dims.d_w % dims.s != 0) {
      throw ConfigError("d_w=" + std::to_string(dims.d_w) + " not divisible by s=" +
                        std::to_string(dims.s));
    }
    const auto& m = mapper.spec();
    const auto& g = generator.spec();
    const auto& d = discriminator.spec();
    if (m.input_width() != dims.d_z || m.output_width() != dims.d_w)
      throw ConfigError("mapper widths must run from d_z to d_w");
    if (g.input_width() != dims.d_w || g.output_width() != dims.data_dim)
      throw ConfigError("generator widths must run from d_w to data_dim");
    if (d.input_width() != dims.data_dim || d.output_width() != 1)
      throw ConfigError("discriminator widths must run from data_dim to a single logit");
    if (codebook.code_dim() != dims.code_dim())
      throw ConfigError("codebook code dimension must equal d_w / s");
  }
};

inline ad::Var map_style(ad::Var z, GanModel& model, bool track = true) {
  return model.mapper.forward(z, track);
}

inline ad::Var generate(ad::Var wq, GanModel& model, bool track = true) {
  return model.generator.forward(wq, track);
}

// One logit per row, shape [n].
inline ad::Var discriminate(ad::Var x, GanModel& model, bool track = true,
                            ad::Var* features = nullptr) {
  ad::Var out = model.discriminator.forward(x, track, features);
  return ad::reshape(out, {out.shape()[0]});
}

}  // namespace sqgan

#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace sqgan {

// Named, independently seeded random streams. Each consumer (data batches,
// latent draws, perturbations, initialization...) owns its own stream so
// that enabling one feature never shifts the draws of another.
class Rng {
 public:
  Rng(std::uint64_t seed, std::string_view stream) : engine_(mix(seed, stream)) {}
  explicit Rng(std::uint64_t seed) : engine_(mix(seed, "")) {}

  double normal() { return normal_(engine_); }
  double normal(double mean, double stddev) { return mean + stddev * normal_(engine_); }
  double uniform() { return uniform_(engine_); }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform_(engine_); }
  std::size_t index(std::size_t n) {
    return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_);
  }
  std::mt19937_64& engine() { return engine_; }

  static std::uint64_t mix(std::uint64_t seed, std::string_view stream) {
    // FNV-1a over the stream name, folded into the seed with splitmix64.
    std::uint64_t h = 1469598103934665603ull;
    for (char c : stream) {
      h ^= static_cast<unsigned char>(c);
      h *= 1099511628211ull;
    }
    std::uint64_t x = seed ^ h;
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
  }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

}  // namespace sqgan

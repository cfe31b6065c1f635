#pragma once

// Deterministic random streams. Every stochastic step in the simulator draws
// from Rng rather than <random> distributions, whose algorithms differ between
// standard library implementations; this keeps result records byte-identical
// for a given master seed regardless of toolchain.

#include <array>
#include <cmath>
#include <cstdint>
#include <initializer_list>

namespace cmsim {

inline std::uint64_t splitmix64(std::uint64_t& state) {
  state += 0x9e3779b97f4a7c15ull;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

/// Derive an independent child seed from a master seed and a tag path,
/// e.g. derive_seed(master, {kTrain, net_index}). Streams with distinct tag
/// paths are statistically independent.
inline std::uint64_t derive_seed(std::uint64_t master,
                                 std::initializer_list<std::uint64_t> tags) {
  std::uint64_t state = master;
  splitmix64(state);
  for (std::uint64_t t : tags) {
    state ^= t + 0x9e3779b97f4a7c15ull + (state << 6) + (state >> 2);
    splitmix64(state);
  }
  std::uint64_t s = state;
  return splitmix64(s);
}

/// xoshiro256** seeded via splitmix64.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) {
    std::uint64_t sm = seed;
    for (auto& word : state_) word = splitmix64(sm);
  }

  std::uint64_t next_u64() {
    const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  /// Uniform double in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Uniform double in [a, b).
  double uniform(double a, double b) { return a + (b - a) * uniform(); }

  /// Unbiased uniform integer in [0, n). n must be > 0.
  std::uint64_t uniform_below(std::uint64_t n) {
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
    std::uint64_t x;
    do {
      x = next_u64();
    } while (x >= limit);
    return x % n;
  }

  bool bernoulli(double p) { return uniform() < p; }

  /// Standard normal via Box-Muller (second value discarded so the stream
  /// consumption per call is fixed).
  double normal() {
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  /// Lognormal with parameters of the underlying normal.
  double lognormal(double mu_log, double sigma_log) {
    return std::exp(normal(mu_log, sigma_log));
  }

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
  }
  std::array<std::uint64_t, 4> state_{};
};

// Tag constants for derive_seed, one per stochastic stage.
namespace rng_tag {
inline constexpr std::uint64_t kInit = 1;         // weight initialisation
inline constexpr std::uint64_t kShuffle = 2;      // SGD minibatch shuffling
inline constexpr std::uint64_t kPopulation = 3;   // device population sampling
inline constexpr std::uint64_t kProgram = 4;      // programming noise
inline constexpr std::uint64_t kRtn = 5;          // read-stage RTN
inline constexpr std::uint64_t kCommittee = 6;    // committee sampling
inline constexpr std::uint64_t kSplit = 7;        // optional shuffled split
}  // namespace rng_tag

}  // namespace cmsim

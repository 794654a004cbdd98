#pragma once

#include <cstddef>
#include <cstdint>
#include <random>

namespace rls {

// splitmix64 finaliser; derives statistically independent stream seeds from
// (seed, stream index) pairs.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

// Seeded generator. Distributions are computed here from raw engine output
// rather than through <random> distribution objects, whose algorithms are
// implementation-defined, so a seed reproduces bitwise on any toolchain.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }
  // Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Uniform integer on [0, n); n must be positive.
  std::size_t below(std::size_t n);
  // Standard normal via Box-Muller; the second variate is cached.
  double normal();
  // Unit-mean exponential.
  double exponential();

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace rls

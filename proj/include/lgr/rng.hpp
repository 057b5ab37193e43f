#pragma once

#include <array>
#include <cstdint>

namespace lgr {

/// splitmix64 step (Steele, Lea, Flood): increment 0x9E3779B97F4A7C15,
/// multipliers 0xBF58476D1CE4E5B9 and 0x94D049BB133111EB.
std::uint64_t splitmix64(std::uint64_t& state);

/// xoshiro256** (Blackman, Vigna) seeded through splitmix64.
///
/// Every stochastic operation in the library takes an explicit Rng so that a
/// run is reproducible from its seeds alone. Distributions are implemented
/// here rather than through <random> because the standard distributions are
/// not specified bit-for-bit across library vendors.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0);

  std::uint64_t next_u64();
  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n). Unbiased (rejection sampling).
  std::uint64_t below(std::uint64_t n);
  /// Standard normal via Box-Muller; the second variate is cached.
  double normal();
  double normal(double mean, double sd) { return mean + sd * normal(); }

  /// Independent child stream identified by `stream`; does not advance *this.
  Rng fork(std::uint64_t stream) const;

 private:
  std::array<std::uint64_t, 4> s_{};
  std::uint64_t seed_ = 0;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace lgr

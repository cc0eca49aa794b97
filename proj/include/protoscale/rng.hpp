#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <vector>

namespace protoscale {

/// Seeded generator. All randomness in the project flows through this type;
/// streams are derived from a master seed plus counters, never the clock.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);
  /// Independent stream keyed by (seed, keys...).
  static Rng derive(std::uint64_t seed, std::initializer_list<std::uint64_t> keys);

  double uniform(double lo = 0.0, double hi = 1.0);
  double normal(double mean = 0.0, double stddev = 1.0);
  /// Uniform integer in [lo, hi].
  std::int64_t integer(std::int64_t lo, std::int64_t hi);
  bool bernoulli(double p);
  std::uint64_t next_u64() { return engine_(); }

  std::vector<double> normal_vector(std::size_t n, double stddev);

 private:
  std::mt19937_64 engine_;
};

}  // namespace protoscale

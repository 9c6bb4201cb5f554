#ifndef NORMLAB_RNG_HPP_
#define NORMLAB_RNG_HPP_

#include <cstdint>
#include <random>
#include <vector>

#include "normlab/tensor.hpp"

namespace normlab {

/// Seeded random source. One seed plus one call sequence yields one
/// bit-identical output sequence; normal variates use Box-Muller on top of
/// the raw 64-bit stream so the sequence does not depend on library
/// distribution internals.
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed) {}

  uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1).
  double uniform();
  /// Uniform in [lo, hi).
  double uniform(double lo, double hi);
  /// Standard normal.
  double normal();
  /// Uniform integer in [0, n), n >= 1.
  int64_t below(int64_t n);
  /// In-place Fisher-Yates shuffle.
  void shuffle(std::vector<int64_t>& v);

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

/// I.i.d. Gaussian tensor; requires stddev >= 0.
Tensor randn(Rng& rng, const Shape& shape, double mean = 0.0,
             double stddev = 1.0);

}  // namespace normlab

#endif  // NORMLAB_RNG_HPP_

#include "normlab/rng.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace normlab {

double Rng::uniform() {
  // 53 random mantissa bits -> [0, 1)
  return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) {
  if (!(hi >= lo)) throw std::invalid_argument("uniform: hi < lo");
  return lo + (hi - lo) * uniform();
}

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  // Box-Muller; u1 in (0,1] keeps the log finite.
  double u1 = 1.0 - uniform();
  double u2 = uniform();
  double r = std::sqrt(-2.0 * std::log(u1));
  double a = 2.0 * std::numbers::pi * u2;
  spare_ = r * std::sin(a);
  has_spare_ = true;
  return r * std::cos(a);
}

int64_t Rng::below(int64_t n) {
  if (n < 1) throw std::invalid_argument("below: n must be >= 1");
  uint64_t un = static_cast<uint64_t>(n);
  uint64_t limit = UINT64_MAX - UINT64_MAX % un;
  uint64_t v;
  do {
    v = engine_();
  } while (v >= limit);
  return static_cast<int64_t>(v % un);
}

void Rng::shuffle(std::vector<int64_t>& v) {
  for (int64_t i = static_cast<int64_t>(v.size()) - 1; i > 0; --i) {
    int64_t j = below(i + 1);
    std::swap(v[static_cast<size_t>(i)], v[static_cast<size_t>(j)]);
  }
}

Tensor randn(Rng& rng, const Shape& shape, double mean, double stddev) {
  if (stddev < 0.0) throw std::invalid_argument("randn: stddev must be >= 0");
  Tensor out(shape);
  for (int64_t i = 0; i < out.numel(); ++i)
    out[i] = mean + stddev * rng.normal();
  return out;
}

}  // namespace normlab

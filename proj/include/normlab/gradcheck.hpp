#ifndef NORMLAB_GRADCHECK_HPP_
#define NORMLAB_GRADCHECK_HPP_

#include "normlab/norm.hpp"
#include "normlab/rng.hpp"
#include "normlab/tensor.hpp"

namespace normlab {

/// Central-difference gradient of <g, f(x)> with respect to x. f must be a
/// pure function; only forward paths are exercised, which keeps this
/// independent of any analytic backward it is used to check.
template <typename F>
Tensor fd_gradient(F&& f, const Tensor& x, const Tensor& g, double h = 1e-5) {
  Tensor grad(x.shape());
  Tensor xp = x;
  for (int64_t i = 0; i < x.numel(); ++i) {
    double orig = xp[i];
    xp[i] = orig + h;
    Tensor up = f(xp);
    xp[i] = orig - h;
    Tensor dn = f(xp);
    xp[i] = orig;
    double acc = 0.0;
    for (int64_t j = 0; j < up.numel(); ++j) acc += g[j] * (up[j] - dn[j]);
    grad[i] = acc / (2.0 * h);
  }
  return grad;
}

/// max over elements of |a - b| / max(1, |a|, |b|).
double max_rel_err(const Tensor& a, const Tensor& b);

struct NormGradCheck {
  double err_input = 0.0;
  double err_gamma = 0.0;  // stays 0 when the layer carries no affine
  double err_beta = 0.0;
  bool has_affine = false;
  double worst() const;
};

/// Spec used by the gradcheck harness: affine on, default eps, and a GN
/// group size derived from the channel count of the shape.
NormSpec gradcheck_spec(NormKind kind, const Shape& shape);

/// Random-input comparison of the analytic backward against central
/// differences for one layer kind. gamma/beta are randomized so their
/// gradients are exercised too.
NormGradCheck check_norm_gradients(const NormSpec& spec, const Shape& shape,
                                   uint64_t seed, double h = 1e-5);

}  // namespace normlab

#endif  // NORMLAB_GRADCHECK_HPP_

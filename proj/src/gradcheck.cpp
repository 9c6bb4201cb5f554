#include "normlab/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace normlab {

double max_rel_err(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b))
    throw std::invalid_argument("max_rel_err: shape mismatch " +
                                shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
  double worst = 0.0;
  for (int64_t i = 0; i < a.numel(); ++i) {
    double denom = std::max({1.0, std::abs(a[i]), std::abs(b[i])});
    worst = std::max(worst, std::abs(a[i] - b[i]) / denom);
  }
  return worst;
}

double NormGradCheck::worst() const {
  return std::max({err_input, err_gamma, err_beta});
}

NormSpec gradcheck_spec(NormKind kind, const Shape& shape) {
  NormSpec spec;
  spec.kind = kind;
  spec.affine = kind != NormKind::L2;  // plain l2 carries no affine
  if (kind == NormKind::GN) {
    int64_t c = shape.size() >= 2 ? shape[1] : 1;
    // prefer a proper divisor so groups neither collapse to IN nor span LN
    int64_t cpg = c;
    for (int64_t k = c - 1; k >= 2; --k)
      if (c % k == 0) {
        cpg = k;
        break;
      }
    spec.channels_per_group = cpg;
  }
  return spec;
}

NormGradCheck check_norm_gradients(const NormSpec& spec, const Shape& shape,
                                   uint64_t seed, double h) {
  Rng rng(seed);
  Tensor x = randn(rng, shape);
  Tensor g = randn(rng, shape);

  int64_t features = shape[1];  // d for [b,d], C for [b,C,H,W]
  NormState proto = NormState::init(spec, features);
  proto.mode = NormState::Mode::train;
  if (spec.affine) {
    // randomized affine so its gradient paths are not trivially identity
    proto.gamma = randn(rng, {features}, 1.0, 0.2);
    proto.beta = randn(rng, {features}, 0.0, 0.2);
  }

  NormGradCheck out;
  out.has_affine = spec.affine;

  NormState st = proto;
  NormResult fw = norm_forward(x, spec, st);
  NormGrads an = norm_backward(g, fw.cache, spec, st);

  Tensor fd_in = fd_gradient(
      [&](const Tensor& xx) {
        NormState s = proto;
        return norm_forward(xx, spec, s).y;
      },
      x, g, h);
  out.err_input = max_rel_err(an.input, fd_in);

  if (spec.affine) {
    Tensor fd_gamma = fd_gradient(
        [&](const Tensor& gm) {
          NormState s = proto;
          s.gamma = gm;
          return norm_forward(x, spec, s).y;
        },
        proto.gamma, g, h);
    Tensor fd_beta = fd_gradient(
        [&](const Tensor& bt) {
          NormState s = proto;
          s.beta = bt;
          return norm_forward(x, spec, s).y;
        },
        proto.beta, g, h);
    out.err_gamma = max_rel_err(an.gamma, fd_gamma);
    out.err_beta = max_rel_err(an.beta, fd_beta);
  }
  return out;
}

}  // namespace normlab

#include "normlab/norm.hpp"

#include <omp.h>

#include <cmath>
#include <stdexcept>

#include "normlab/exec.hpp"
#include "normlab/kernels.hpp"

namespace normlab {

const char* to_string(NormKind k) {
  switch (k) {
    case NormKind::L2: return "l2";
    case NormKind::BN: return "bn";
    case NormKind::LN: return "ln";
    case NormKind::IN: return "in";
    case NormKind::PN: return "pn";
    case NormKind::GN: return "gn";
    case NormKind::L2BN: return "l2bn";
    case NormKind::LNBN: return "lnbn";
    case NormKind::INBN: return "inbn";
    case NormKind::PNBN: return "pnbn";
  }
  return "?";
}

NormKind norm_kind_from_string(const std::string& s) {
  for (NormKind k : {NormKind::L2, NormKind::BN, NormKind::LN, NormKind::IN,
                     NormKind::PN, NormKind::GN, NormKind::L2BN, NormKind::LNBN,
                     NormKind::INBN, NormKind::PNBN})
    if (s == to_string(k)) return k;
  throw std::invalid_argument("unknown normalization kind: " + s);
}

bool is_composite(NormKind k) {
  return k == NormKind::L2BN || k == NormKind::LNBN || k == NormKind::INBN ||
         k == NormKind::PNBN;
}

bool has_bn_stage(NormKind k) { return k == NormKind::BN || is_composite(k); }

NormKind inner_kind(NormKind k) {
  switch (k) {
    case NormKind::L2BN: return NormKind::L2;
    case NormKind::LNBN: return NormKind::LN;
    case NormKind::INBN: return NormKind::IN;
    case NormKind::PNBN: return NormKind::PN;
    default:
      throw std::invalid_argument(std::string("inner_kind: ") + to_string(k) +
                                  " is not a composite");
  }
}

void NormSpec::validate() const {
  if (kind == NormKind::L2 && affine)
    throw std::invalid_argument(
        "NormSpec: plain l2 normalization has no affine stage");
  if (!(eps_l2 > 0.0)) throw std::invalid_argument("NormSpec: eps_l2 must be > 0");
  if (!(eps_var > 0.0)) throw std::invalid_argument("NormSpec: eps_var must be > 0");
  if (!(momentum > 0.0 && momentum <= 1.0))
    throw std::invalid_argument("NormSpec: momentum must be in (0,1]");
  if (kind == NormKind::GN && channels_per_group < 1)
    throw std::invalid_argument("NormSpec: channels_per_group must be >= 1");
}

NormState NormState::init(const NormSpec& spec, int64_t num_features) {
  spec.validate();
  if (num_features < 1)
    throw std::invalid_argument("NormState: num_features must be >= 1");
  NormState st;
  st.features = num_features;
  if (spec.affine) {
    st.gamma = Tensor::ones({num_features});
    st.beta = Tensor::zeros({num_features});
  }
  if (has_bn_stage(spec.kind)) {
    st.running_mean = Tensor::zeros({num_features});
    st.running_var = Tensor::ones({num_features});
  }
  return st;
}

namespace {

using Family = MomentStageCache::Family;

// Every input is viewed as [b, C, S]: flat features are [b, d, 1], feature
// maps are [b, C, H*W].
struct Bcs {
  int64_t b, C, S;
};

Bcs as_bcs(const Tensor& x) {
  if (x.rank() == 2) return {x.dim(0), x.dim(1), 1};
  if (x.rank() == 4) return {x.dim(0), x.dim(1), x.dim(2) * x.dim(3)};
  throw std::invalid_argument("normalization input must be rank 2 or 4, got " +
                              shape_str(x.shape()));
}

bool needs_rank4(NormKind k) {
  return k == NormKind::IN || k == NormKind::PN || k == NormKind::GN ||
         k == NormKind::INBN || k == NormKind::PNBN;
}

void check_input(const Tensor& x, const NormSpec& spec, const NormState& state) {
  spec.validate();
  if (!x.all_finite())
    throw std::runtime_error(std::string(to_string(spec.kind)) +
                             " forward: non-finite input");
  Bcs v = as_bcs(x);
  if (needs_rank4(spec.kind) && x.rank() != 4)
    throw std::invalid_argument(std::string(to_string(spec.kind)) +
                                " requires rank-4 input, got " +
                                shape_str(x.shape()));
  NormKind stat_kind = is_composite(spec.kind) ? inner_kind(spec.kind) : spec.kind;
  if ((stat_kind == NormKind::GN || spec.kind == NormKind::GN) &&
      v.C % spec.channels_per_group != 0)
    throw std::invalid_argument(
        "gn: channels " + std::to_string(v.C) + " not divisible by group size " +
        std::to_string(spec.channels_per_group));
  if (state.features != v.C)
    throw std::invalid_argument("norm state built for " +
                                std::to_string(state.features) +
                                " features, input has " + std::to_string(v.C));
}

// ---- l2 stage -------------------------------------------------------------

void l2_stage_forward(const Tensor& x, const NormSpec& spec, Tensor& y,
                      L2StageCache* cache) {
  Bcs v = as_bcs(x);
  int64_t b = v.b, D = v.C * v.S;
  double out_scale = spec.effective_sqrt_numel(x.rank())
                         ? std::sqrt(static_cast<double>(D))
                         : 1.0;
  std::vector<double> sumsq(static_cast<size_t>(b));
  kernels::row_sumsq(x.data(), sumsq.data(), b, D);

  if (cache) {
    cache->unit = Tensor({b, D});
    cache->norms.resize(static_cast<size_t>(b));
    cache->floored.assign(static_cast<size_t>(b), 0);
    cache->out_scale = out_scale;
    cache->b = b;
    cache->D = D;
  }

  const double* xp = x.data();
  double* yp = y.data();
  double* up = cache ? cache->unit.data() : nullptr;
#pragma omp parallel for num_threads(exec::threads()) schedule(static) \
    if (exec::parallel())
  for (int64_t r = 0; r < b; ++r) {
    double norm = std::sqrt(sumsq[static_cast<size_t>(r)]);
    bool floored = norm <= spec.eps_l2;
    double denom = floored ? spec.eps_l2 : norm;
    double f = out_scale / denom;
    const double* xr = xp + r * D;
    double* yr = yp + r * D;
    for (int64_t j = 0; j < D; ++j) yr[j] = f * xr[j];
    if (cache) {
      cache->norms[static_cast<size_t>(r)] = norm;
      cache->floored[static_cast<size_t>(r)] = floored ? 1 : 0;
      double* ur = up + r * D;
      if (floored) {
        for (int64_t j = 0; j < D; ++j) ur[j] = 0.0;
      } else {
        double inv = 1.0 / norm;
        for (int64_t j = 0; j < D; ++j) ur[j] = xr[j] * inv;
      }
    }
  }
}

// For y = s*x/||x|| the Jacobian-vector product is s*(g - (g.u)u)/||x||
// with u = x/||x||; below the floor the map is linear with slope s/eps.
Tensor l2_stage_backward(const Tensor& go, const L2StageCache& c, double eps_l2) {
  Tensor gx(go.shape());
  const double* gp = go.data();
  const double* up = c.unit.data();
  double* op = gx.data();
  int64_t b = c.b, D = c.D;
#pragma omp parallel for num_threads(exec::threads()) schedule(static) \
    if (exec::parallel())
  for (int64_t r = 0; r < b; ++r) {
    const double* gr = gp + r * D;
    double* outr = op + r * D;
    if (c.floored[static_cast<size_t>(r)]) {
      double f = c.out_scale / eps_l2;
      for (int64_t j = 0; j < D; ++j) outr[j] = f * gr[j];
      continue;
    }
    const double* ur = up + r * D;
    double dot = 0.0;
    for (int64_t j = 0; j < D; ++j) dot += gr[j] * ur[j];
    double f = c.out_scale / c.norms[static_cast<size_t>(r)];
    for (int64_t j = 0; j < D; ++j) outr[j] = f * (gr[j] - dot * ur[j]);
  }
  return gx;
}

// ---- moment stages (BN / LN / IN / PN / GN) --------------------------------

struct FamilyPlan {
  Family family;
  int64_t runs_per_sample = 1;
};

FamilyPlan plan_for(NormKind stat_kind, int64_t C, int64_t cpg) {
  switch (stat_kind) {
    case NormKind::BN: return {Family::channel};
    case NormKind::LN: return {Family::run, 1};
    case NormKind::IN: return {Family::run, C};
    case NormKind::GN: return {Family::run, C / cpg};
    case NormKind::PN: return {Family::position};
    default:
      throw std::invalid_argument("no moment stage for this kind");
  }
}

// Statistics are over groups; gamma/beta always index channels, which may
// vary within a run/position group, so the backward uses the general form.
void moment_stage_forward(const Tensor& x, Bcs v, const FamilyPlan& plan,
                          double eps_var, const Tensor* gamma,
                          const Tensor* beta, Tensor& y, MomentStageCache* mc,
                          Tensor* batch_mean_out, Tensor* batch_var_out) {
  int64_t b = v.b, C = v.C, S = v.S;
  int64_t G, m;
  switch (plan.family) {
    case Family::channel: G = C; m = b * S; break;
    case Family::run: G = b * plan.runs_per_sample;
                      m = (C / plan.runs_per_sample) * S; break;
    case Family::position: G = b * S; m = C; break;
    default: throw std::logic_error("bad family");
  }
  Tensor gmean({G}), gvar({G});
  switch (plan.family) {
    case Family::channel:
      kernels::plane_moments(x.data(), gmean.data(), gvar.data(), b, C, S);
      break;
    case Family::run:
      kernels::row_moments(x.data(), gmean.data(), gvar.data(), G, m);
      break;
    case Family::position:
      kernels::position_moments(x.data(), gmean.data(), gvar.data(), b, C, S);
      break;
  }
  Tensor inv_std({G});
  for (int64_t g = 0; g < G; ++g)
    inv_std[g] = 1.0 / std::sqrt(gvar[g] + eps_var);

  bool affine = gamma != nullptr;
  if (mc) {
    mc->family = plan.family;
    mc->b = b; mc->C = C; mc->S = S;
    mc->runs_per_sample = plan.runs_per_sample;
    mc->groups = G;
    mc->group_size = m;
    mc->affine = affine;
    mc->xhat = Tensor(x.shape());
    mc->inv_std = inv_std;
  }
  const double* xp = x.data();
  double* yp = y.data();
  double* xhp = mc ? mc->xhat.data() : nullptr;

  switch (plan.family) {
    case Family::channel: {
#pragma omp parallel for num_threads(exec::threads()) schedule(static) \
    if (exec::parallel())
      for (int64_t c = 0; c < C; ++c) {
        double mu = gmean[c], is = inv_std[c];
        double ga = affine ? (*gamma)[c] : 1.0;
        double be = affine ? (*beta)[c] : 0.0;
        for (int64_t i = 0; i < b; ++i) {
          int64_t base = (i * C + c) * S;
          for (int64_t s = 0; s < S; ++s) {
            double xh = (xp[base + s] - mu) * is;
            if (xhp) xhp[base + s] = xh;
            yp[base + s] = affine ? ga * xh + be : xh;
          }
        }
      }
      break;
    }
    case Family::run: {
      int64_t R = plan.runs_per_sample, cpr = C / R;
#pragma omp parallel for num_threads(exec::threads()) schedule(static) \
    if (exec::parallel())
      for (int64_t g = 0; g < G; ++g) {
        double mu = gmean[g], is = inv_std[g];
        int64_t base = g * m, c0 = (g % R) * cpr;
        for (int64_t j = 0; j < m; ++j) {
          double xh = (xp[base + j] - mu) * is;
          if (xhp) xhp[base + j] = xh;
          if (affine) {
            int64_t c = c0 + j / S;
            yp[base + j] = (*gamma)[c] * xh + (*beta)[c];
          } else {
            yp[base + j] = xh;
          }
        }
      }
      break;
    }
    case Family::position: {
#pragma omp parallel for num_threads(exec::threads()) schedule(static) \
    if (exec::parallel())
      for (int64_t g = 0; g < G; ++g) {
        double mu = gmean[g], is = inv_std[g];
        int64_t i = g / S, s = g % S;
        for (int64_t c = 0; c < C; ++c) {
          int64_t idx = (i * C + c) * S + s;
          double xh = (xp[idx] - mu) * is;
          if (xhp) xhp[idx] = xh;
          yp[idx] = affine ? (*gamma)[c] * xh + (*beta)[c] : xh;
        }
      }
      break;
    }
  }
  if (batch_mean_out) *batch_mean_out = gmean;
  if (batch_var_out) *batch_var_out = gvar;
}

void bn_eval_forward(const Tensor& x, Bcs v, const NormSpec& spec,
                     const NormState& state, bool affine, Tensor& y) {
  int64_t b = v.b, C = v.C, S = v.S;
  const double* xp = x.data();
  double* yp = y.data();
#pragma omp parallel for num_threads(exec::threads()) schedule(static) \
    if (exec::parallel())
  for (int64_t c = 0; c < C; ++c) {
    double mu = state.running_mean[c];
    double is = 1.0 / std::sqrt(state.running_var[c] + spec.eps_var);
    double ga = affine ? state.gamma[c] : 1.0;
    double be = affine ? state.beta[c] : 0.0;
    for (int64_t i = 0; i < b; ++i) {
      int64_t base = (i * C + c) * S;
      for (int64_t s = 0; s < S; ++s)
        yp[base + s] = ga * (xp[base + s] - mu) * is + be;
    }
  }
}

// grad_x through group statistics; h = gamma_c * grad_out when the stage
// carried the affine, else grad_out itself:
//   gx_j = inv_std * (h_j - (S1 + xhat_j * S2) / m),  S1 = sum h, S2 = sum h*xhat
Tensor moment_stage_backward(const Tensor& go, const MomentStageCache& mc,
                             const Tensor* gamma, Tensor* ggamma,
                             Tensor* gbeta) {
  int64_t b = mc.b, C = mc.C, S = mc.S;
  const double* gp = go.data();
  const double* xhp = mc.xhat.data();
  Tensor gx(go.shape());
  double* op = gx.data();
  const double minv = 1.0 / static_cast<double>(mc.group_size);

  switch (mc.family) {
    case Family::channel: {
#pragma omp parallel for num_threads(exec::threads()) schedule(static) \
    if (exec::parallel())
      for (int64_t c = 0; c < C; ++c) {
        double ga = mc.affine ? (*gamma)[c] : 1.0;
        double is = mc.inv_std[c];
        double s1 = 0.0, s2 = 0.0;
        for (int64_t i = 0; i < b; ++i) {
          int64_t base = (i * C + c) * S;
          for (int64_t s = 0; s < S; ++s) {
            double h = ga * gp[base + s];
            s1 += h;
            s2 += h * xhp[base + s];
          }
        }
        for (int64_t i = 0; i < b; ++i) {
          int64_t base = (i * C + c) * S;
          for (int64_t s = 0; s < S; ++s) {
            double h = ga * gp[base + s];
            op[base + s] = is * (h - (s1 + xhp[base + s] * s2) * minv);
          }
        }
      }
      break;
    }
    case Family::run: {
      int64_t R = mc.runs_per_sample, cpr = C / R, m = mc.group_size;
#pragma omp parallel for num_threads(exec::threads()) schedule(static) \
    if (exec::parallel())
      for (int64_t g = 0; g < mc.groups; ++g) {
        int64_t base = g * m, c0 = (g % R) * cpr;
        double is = mc.inv_std[g];
        double s1 = 0.0, s2 = 0.0;
        for (int64_t j = 0; j < m; ++j) {
          double h = mc.affine ? (*gamma)[c0 + j / S] * gp[base + j]
                               : gp[base + j];
          s1 += h;
          s2 += h * xhp[base + j];
        }
        for (int64_t j = 0; j < m; ++j) {
          double h = mc.affine ? (*gamma)[c0 + j / S] * gp[base + j]
                               : gp[base + j];
          op[base + j] = is * (h - (s1 + xhp[base + j] * s2) * minv);
        }
      }
      break;
    }
    case Family::position: {
#pragma omp parallel for num_threads(exec::threads()) schedule(static) \
    if (exec::parallel())
      for (int64_t g = 0; g < mc.groups; ++g) {
        int64_t i = g / S, s = g % S;
        double is = mc.inv_std[g];
        double s1 = 0.0, s2 = 0.0;
        for (int64_t c = 0; c < C; ++c) {
          int64_t idx = (i * C + c) * S + s;
          double h = mc.affine ? (*gamma)[c] * gp[idx] : gp[idx];
          s1 += h;
          s2 += h * xhp[idx];
        }
        for (int64_t c = 0; c < C; ++c) {
          int64_t idx = (i * C + c) * S + s;
          double h = mc.affine ? (*gamma)[c] * gp[idx] : gp[idx];
          op[idx] = is * (h - (s1 + xhp[idx] * s2) * minv);
        }
      }
      break;
    }
  }

  if (mc.affine && ggamma && gbeta) {
    *ggamma = Tensor({C});
    *gbeta = Tensor({C});
    double* ggp = ggamma->data();
    double* gbp = gbeta->data();
#pragma omp parallel for num_threads(exec::threads()) schedule(static) \
    if (exec::parallel())
    for (int64_t c = 0; c < C; ++c) {
      double sg = 0.0, sb = 0.0;
      for (int64_t i = 0; i < b; ++i) {
        int64_t base = (i * C + c) * S;
        for (int64_t s = 0; s < S; ++s) {
          sg += gp[base + s] * xhp[base + s];
          sb += gp[base + s];
        }
      }
      ggp[c] = sg;
      gbp[c] = sb;
    }
  }
  return gx;
}

void update_running_stats(NormState& state, const NormSpec& spec,
                          const Tensor& batch_mean, const Tensor& batch_var) {
  double mom = spec.momentum;
  for (int64_t c = 0; c < state.features; ++c) {
    state.running_mean[c] = (1.0 - mom) * state.running_mean[c] + mom * batch_mean[c];
    state.running_var[c] = (1.0 - mom) * state.running_var[c] + mom * batch_var[c];
  }
  ++state.num_batches_tracked;
}

}  // namespace

NormResult norm_forward(const Tensor& x, const NormSpec& spec,
                        NormState& state) {
  check_input(x, spec, state);
  Bcs v = as_bcs(x);
  const bool train = state.mode == NormState::Mode::train;
  const bool bn_stage = has_bn_stage(spec.kind);

  if (bn_stage) {
    if (train && v.b < 2)
      throw std::invalid_argument(std::string(to_string(spec.kind)) +
                                  ": train-mode batch must have >= 2 samples, got " +
                                  std::to_string(v.b));
    if (!train && state.num_batches_tracked == 0)
      throw std::runtime_error(std::string(to_string(spec.kind)) +
                               ": eval mode before any train-mode batch");
  }

  NormResult res;
  res.y = Tensor(x.shape());
  res.cache.in_shape = x.shape();
  res.cache.valid = train;

  const Tensor* gamma = spec.affine ? &state.gamma : nullptr;
  const Tensor* beta = spec.affine ? &state.beta : nullptr;

  // stage 1: per-sample normalizer (standalone L2/LN/IN/PN/GN or the inner
  // stage of a composite). Composites never put the affine here.
  Tensor mid(x.shape());
  const Tensor* stage2_in = &x;

  if (spec.kind == NormKind::L2 || spec.kind == NormKind::L2BN) {
    L2StageCache l2c;
    l2_stage_forward(x, spec, mid, train ? &l2c : nullptr);
    if (train) res.cache.l2 = std::move(l2c);
    if (spec.kind == NormKind::L2) {
      res.y = std::move(mid);
      return res;
    }
    stage2_in = &mid;
  } else if (is_composite(spec.kind)) {
    NormKind ik = inner_kind(spec.kind);
    FamilyPlan plan = plan_for(ik, v.C, spec.channels_per_group);
    MomentStageCache imc;
    moment_stage_forward(x, v, plan, spec.eps_var, nullptr, nullptr, mid,
                         train ? &imc : nullptr, nullptr, nullptr);
    if (train) res.cache.inner = std::move(imc);
    stage2_in = &mid;
  } else if (spec.kind != NormKind::BN) {
    // standalone LN / IN / PN / GN: per-sample statistics in both modes
    FamilyPlan plan = plan_for(spec.kind, v.C, spec.channels_per_group);
    MomentStageCache mc;
    moment_stage_forward(x, v, plan, spec.eps_var, gamma, beta, res.y,
                         train ? &mc : nullptr, nullptr, nullptr);
    if (train) res.cache.moment = std::move(mc);
    return res;
  }

  // stage 2: batch normalization (standalone BN or the BN stage of a
  // composite); running statistics describe this stage's input.
  Tensor out(x.shape());
  if (train) {
    MomentStageCache mc;
    Tensor bm, bv;
    moment_stage_forward(*stage2_in, v, {Family::channel}, spec.eps_var, gamma,
                         beta, out, &mc, &bm, &bv);
    update_running_stats(state, spec, bm, bv);
    res.cache.moment = std::move(mc);
  } else {
    bn_eval_forward(*stage2_in, v, spec, state, spec.affine, out);
  }
  res.y = std::move(out);
  return res;
}

NormGrads norm_backward(const Tensor& grad_out, NormCache& cache,
                        const NormSpec& spec, const NormState& state) {
  if (!cache.valid)
    throw std::runtime_error("norm_backward: no cache (eval-mode forward "
                             "does not produce one)");
  if (cache.consumed)
    throw std::runtime_error("norm_backward: cache already consumed");
  cache.consumed = true;
  if (grad_out.shape() != cache.in_shape)
    throw std::invalid_argument("norm_backward: grad shape " +
                                shape_str(grad_out.shape()) +
                                " does not match forward shape " +
                                shape_str(cache.in_shape));

  NormGrads grads;
  const Tensor* gamma = spec.affine ? &state.gamma : nullptr;
  Tensor g = grad_out;

  if (cache.moment) {
    Tensor* gg = cache.moment->affine ? &grads.gamma : nullptr;
    Tensor* gb = cache.moment->affine ? &grads.beta : nullptr;
    g = moment_stage_backward(g, *cache.moment, gamma, gg, gb);
  }
  if (cache.inner)
    g = moment_stage_backward(g, *cache.inner, nullptr, nullptr, nullptr);
  if (cache.l2) g = l2_stage_backward(g, *cache.l2, spec.eps_l2);

  grads.input = std::move(g);
  return grads;
}

}  // namespace normlab

#ifndef NORMLAB_NORM_HPP_
#define NORMLAB_NORM_HPP_

#include <optional>
#include <string>
#include <vector>

#include "normlab/tensor.hpp"

namespace normlab {

// The normalization zoo. Composites chain a per-sample normalizer (which
// never carries its own affine) into a batch-norm stage that owns the
// single gamma/beta pair and the running statistics.
enum class NormKind { L2, BN, LN, IN, PN, GN, L2BN, LNBN, INBN, PNBN };

const char* to_string(NormKind k);
NormKind norm_kind_from_string(const std::string& s);
bool is_composite(NormKind k);
bool has_bn_stage(NormKind k);  // BN itself or any composite
NormKind inner_kind(NormKind k);  // composite -> its per-sample stage

struct NormSpec {
  NormKind kind = NormKind::BN;
  double eps_l2 = 1e-12;   // floor for the per-sample l2 denominator
  double eps_var = 1e-5;   // added to the variance inside the square root
  double momentum = 0.1;   // running <- (1-momentum)*running + momentum*batch
  bool affine = true;
  // The sqrt(sample element count) factor on the l2 stage. Unset resolves
  // by input rank: on for feature maps (rank 4), off for flat features.
  std::optional<bool> scale_by_sqrt_numel{};
  int64_t channels_per_group = 1;  // GN only

  bool effective_sqrt_numel(int64_t rank) const {
    return scale_by_sqrt_numel.value_or(rank == 4);
  }
  void validate() const;
};

struct NormState {
  enum class Mode { train, eval };

  Tensor gamma, beta;                // [features], present iff spec.affine
  Tensor running_mean, running_var;  // [features], BN-stage kinds only
  int64_t num_batches_tracked = 0;
  Mode mode = Mode::train;
  int64_t features = 0;

  /// Fresh state: gamma 1, beta 0, running mean 0, running variance 1.
  static NormState init(const NormSpec& spec, int64_t num_features);
};

// Saved intermediates from a train-mode forward, consumed exactly once by
// the matching backward.

struct L2StageCache {
  Tensor unit;                 // [b, D] rows x/||x|| (zeros where floored)
  std::vector<double> norms;   // true Euclidean norms, unfloored
  std::vector<char> floored;   // rows where ||x|| <= eps_l2
  double out_scale = 1.0;      // sqrt(D) or 1
  int64_t b = 0, D = 0;
};

struct MomentStageCache {
  enum class Family { channel, run, position };
  Family family = Family::channel;
  int64_t b = 0, C = 0, S = 0;
  int64_t runs_per_sample = 1;  // run family
  int64_t groups = 0, group_size = 0;
  bool affine = false;  // whether gamma/beta were applied in this stage
  Tensor xhat;          // normalized pre-affine activations, input shape
  Tensor inv_std;       // [groups]
};

struct NormCache {
  bool valid = false;     // only train-mode forwards populate a cache
  bool consumed = false;
  Shape in_shape;
  std::optional<L2StageCache> l2;           // L2 / L2BN
  std::optional<MomentStageCache> inner;    // LNBN / INBN / PNBN inner stage
  std::optional<MomentStageCache> moment;   // BN stage or standalone LN/IN/PN/GN
};

struct NormResult {
  Tensor y;
  NormCache cache;
};

/// One forward pass. Train mode uses batch statistics, updates running
/// statistics on BN stages, and returns a cache; eval mode uses running
/// statistics, mutates nothing, and returns an invalid cache.
NormResult norm_forward(const Tensor& x, const NormSpec& spec,
                        NormState& state);

struct NormGrads {
  Tensor input;
  Tensor gamma, beta;  // empty when the layer has no affine stage
};

/// Exact analytic gradients through the cached forward. The cache is
/// consumed; calling twice on the same cache is an error.
NormGrads norm_backward(const Tensor& grad_out, NormCache& cache,
                        const NormSpec& spec, const NormState& state);

}  // namespace normlab

#endif  // NORMLAB_NORM_HPP_

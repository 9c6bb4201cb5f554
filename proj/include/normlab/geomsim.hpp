#ifndef NORMLAB_GEOMSIM_HPP_
#define NORMLAB_GEOMSIM_HPP_

#include <optional>
#include <string>
#include <vector>

#include "normlab/norm.hpp"
#include "normlab/tensor.hpp"

namespace normlab {

// Iterates identity-mapping + normalization over a set of class centers
// (gamma = 1, beta = 0, batch statistics taken over the centers themselves)
// and tracks the minimum pairwise angle. The batch-norm step here is the
// bare centering/whitening map with no epsilon; a coordinate with zero
// variance means the configuration degenerated and is reported as an error.

struct CenterConfig {
  Tensor centers;                 // [C, d] initial class centers
  NormKind norm_kind = NormKind::L2BN;  // BN or L2BN
  int max_iters = 200;
  double convergence_tol_deg = 1e-4;  // <= 0 disables early stopping
  bool record_centers = false;

  void validate() const;  // C >= 2, d >= 2, no zero rows
};

struct Trajectory {
  std::vector<double> min_angle_deg;   // after each full step
  std::vector<Tensor> centers_per_iter;  // populated when requested
  std::optional<int> converged_at;     // 1-based step index
};

Trajectory iterate(const CenterConfig& config);

/// Rows scaled to unit Euclidean norm; a (near-)zero row is an error.
Tensor l2_normalize_rows(const Tensor& m);

/// Minimum pairwise angle (degrees) between rows.
double min_pairwise_angle_deg(const Tensor& centers);

// Probes the angle theta between the centered vector (x - mu) and the
// direction of mu, for vectors x at a fixed angle phi to mu but varying
// Euclidean length. thetas_l2 repeats the probe with x normalized to unit
// length first, which removes the dependence on the length entirely.
struct ThetaProbe {
  Tensor mu;
  double phi_deg = 0.0;
  std::vector<double> norms;
  std::vector<double> thetas;     // raw x
  std::vector<double> thetas_l2;  // x / ||x|| first
};

ThetaProbe theta_probe(const Tensor& mu, double phi_deg,
                       const std::vector<double>& norms);

/// CSV with columns iter,min_angle_deg[,c<i>_<j>...].
void export_trajectory(const Trajectory& t, const std::string& path);

}  // namespace normlab

#endif  // NORMLAB_GEOMSIM_HPP_

#include "normlab/geomsim.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <stdexcept>

namespace normlab {

namespace {

constexpr double kRadToDeg = 180.0 / std::numbers::pi;
constexpr double kCollapseNorm = 1e-300;

double row_norm(const Tensor& m, int64_t r) {
  double acc = 0.0;
  for (int64_t j = 0; j < m.dim(1); ++j) {
    double v = m.at2(r, j);
    acc += v * v;
  }
  return std::sqrt(acc);
}

// x <- (x - mean) / std per column, over the C rows (the "batch")
void bn_step(Tensor& m, int iter) {
  int64_t C = m.dim(0), d = m.dim(1);
  for (int64_t j = 0; j < d; ++j) {
    double s = 0.0;
    for (int64_t i = 0; i < C; ++i) s += m.at2(i, j);
    double mu = s / static_cast<double>(C);
    double acc = 0.0;
    for (int64_t i = 0; i < C; ++i) {
      double dev = m.at2(i, j) - mu;
      acc += dev * dev;
    }
    double sd = std::sqrt(acc / static_cast<double>(C));
    if (sd < kCollapseNorm)
      throw std::runtime_error(
          "geomsim: configuration degenerated (zero variance in coordinate " +
          std::to_string(j) + ") at iteration " + std::to_string(iter));
    for (int64_t i = 0; i < C; ++i) m.at2(i, j) = (m.at2(i, j) - mu) / sd;
  }
}

void l2_step(Tensor& m, int iter) {
  for (int64_t i = 0; i < m.dim(0); ++i) {
    double n = row_norm(m, i);
    if (n < kCollapseNorm)
      throw std::runtime_error("geomsim: center " + std::to_string(i) +
                               " collapsed to zero at iteration " +
                               std::to_string(iter));
    for (int64_t j = 0; j < m.dim(1); ++j) m.at2(i, j) /= n;
  }
}

}  // namespace

void CenterConfig::validate() const {
  if (centers.rank() != 2 || centers.dim(0) < 2 || centers.dim(1) < 2)
    throw std::invalid_argument("geomsim: centers must be [C>=2, d>=2], got " +
                                shape_str(centers.shape()));
  if (norm_kind != NormKind::BN && norm_kind != NormKind::L2BN)
    throw std::invalid_argument("geomsim: norm_kind must be bn or l2bn");
  if (max_iters < 1) throw std::invalid_argument("geomsim: max_iters must be >= 1");
  for (int64_t i = 0; i < centers.dim(0); ++i)
    if (row_norm(centers, i) < kCollapseNorm)
      throw std::invalid_argument("geomsim: initial center " + std::to_string(i) +
                                  " is the zero vector");
}

Tensor l2_normalize_rows(const Tensor& m) {
  Tensor out = m;
  l2_step(out, 0);
  return out;
}

double min_pairwise_angle_deg(const Tensor& centers) {
  int64_t C = centers.dim(0);
  double best = 180.0;
  for (int64_t i = 0; i < C; ++i) {
    double ni = row_norm(centers, i);
    for (int64_t j = i + 1; j < C; ++j) {
      double dot = 0.0;
      for (int64_t k = 0; k < centers.dim(1); ++k)
        dot += centers.at2(i, k) * centers.at2(j, k);
      double c = std::clamp(dot / (ni * row_norm(centers, j)), -1.0, 1.0);
      best = std::min(best, std::acos(c) * kRadToDeg);
    }
  }
  return best;
}

Trajectory iterate(const CenterConfig& config) {
  config.validate();
  Tensor m = config.centers;
  Trajectory traj;
  int flat_steps = 0;
  for (int it = 1; it <= config.max_iters; ++it) {
    if (config.norm_kind == NormKind::L2BN) l2_step(m, it);
    bn_step(m, it);
    double ang = min_pairwise_angle_deg(m);
    traj.min_angle_deg.push_back(ang);
    if (config.record_centers) traj.centers_per_iter.push_back(m);
    if (config.convergence_tol_deg > 0.0 && traj.min_angle_deg.size() >= 2) {
      double prev = traj.min_angle_deg[traj.min_angle_deg.size() - 2];
      flat_steps = std::abs(ang - prev) < config.convergence_tol_deg
                       ? flat_steps + 1
                       : 0;
      if (flat_steps >= 3) {
        traj.converged_at = it;
        break;
      }
    }
  }
  return traj;
}

ThetaProbe theta_probe(const Tensor& mu, double phi_deg,
                       const std::vector<double>& norms) {
  if (mu.rank() != 1 || mu.dim(0) != 2)
    throw std::invalid_argument("theta_probe: mu must be a 2-d vector");
  for (double r : norms)
    if (!(r > 0.0))
      throw std::invalid_argument("theta_probe: norms must be positive");

  // direction of mu anchors both the phi construction and the theta
  // reference; with mu = 0 the x axis stands in and centering is a no-op
  double mu_norm = std::sqrt(mu[0] * mu[0] + mu[1] * mu[1]);
  double ex0 = 1.0, ex1 = 0.0;
  if (mu_norm > 0.0) {
    ex0 = mu[0] / mu_norm;
    ex1 = mu[1] / mu_norm;
  }
  double ey0 = -ex1, ey1 = ex0;

  double phi = phi_deg / kRadToDeg;
  double dir0 = std::cos(phi) * ex0 + std::sin(phi) * ey0;
  double dir1 = std::cos(phi) * ex1 + std::sin(phi) * ey1;

  auto angle_to_ref = [&](double v0, double v1) {
    double n = std::sqrt(v0 * v0 + v1 * v1);
    if (n < kCollapseNorm)
      throw std::runtime_error("theta_probe: centered vector vanished");
    double c = std::clamp((v0 * ex0 + v1 * ex1) / n, -1.0, 1.0);
    return std::acos(c) * kRadToDeg;
  };

  ThetaProbe probe;
  probe.mu = mu;
  probe.phi_deg = phi_deg;
  probe.norms = norms;
  for (double r : norms) {
    double x0 = r * dir0, x1 = r * dir1;
    probe.thetas.push_back(angle_to_ref(x0 - mu[0], x1 - mu[1]));
    // unit-length x first: the centered direction no longer depends on r
    double n = std::sqrt(x0 * x0 + x1 * x1);
    probe.thetas_l2.push_back(angle_to_ref(x0 / n - mu[0], x1 / n - mu[1]));
  }
  return probe;
}

void export_trajectory(const Trajectory& t, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path + " for writing");
  f << "iter,min_angle_deg";
  if (!t.centers_per_iter.empty()) {
    const Tensor& c0 = t.centers_per_iter.front();
    for (int64_t i = 0; i < c0.dim(0); ++i)
      for (int64_t j = 0; j < c0.dim(1); ++j)
        f << ",c" << i << "_" << j;
  }
  f << "\n";
  f.precision(17);
  for (size_t k = 0; k < t.min_angle_deg.size(); ++k) {
    f << (k + 1) << "," << t.min_angle_deg[k];
    if (!t.centers_per_iter.empty()) {
      const Tensor& c = t.centers_per_iter[k];
      for (int64_t i = 0; i < c.numel(); ++i) f << "," << c[i];
    }
    f << "\n";
  }
  if (!f) throw std::runtime_error("write failed: " + path);
}

}  // namespace normlab

#include "normlab/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace normlab {

namespace {

constexpr double kRadToDeg = 180.0 / std::numbers::pi;
// a center below this norm carries no usable direction
constexpr double kDegenerateNorm = 1e-12;

double row_norm(const Tensor& t, int64_t r) {
  int64_t d = t.dim(1);
  double acc = 0.0;
  for (int64_t j = 0; j < d; ++j) {
    double v = t.at2(r, j);
    acc += v * v;
  }
  return std::sqrt(acc);
}

// angle between rows in degrees; cosine clamped to [-1,1] before arccos
double row_angle_deg(const Tensor& a, int64_t ra, const Tensor& b, int64_t rb,
                     double norm_a, double norm_b) {
  int64_t d = a.dim(1);
  double dot = 0.0;
  for (int64_t j = 0; j < d; ++j) dot += a.at2(ra, j) * b.at2(rb, j);
  double c = dot / (norm_a * norm_b);
  c = std::clamp(c, -1.0, 1.0);
  return std::acos(c) * kRadToDeg;
}

}  // namespace

void LabeledFeatures::validate() const {
  if (features.rank() != 2)
    throw std::invalid_argument("features must be [N, d], got " +
                                shape_str(features.shape()));
  if (static_cast<int64_t>(labels.size()) != features.dim(0))
    throw std::invalid_argument("labels length " + std::to_string(labels.size()) +
                                " does not match feature rows " +
                                std::to_string(features.dim(0)));
  if (num_classes < 1) throw std::invalid_argument("num_classes must be >= 1");
  for (size_t i = 0; i < labels.size(); ++i)
    if (labels[i] < 0 || labels[i] >= num_classes)
      throw std::invalid_argument("label " + std::to_string(labels[i]) +
                                  " at row " + std::to_string(i) +
                                  " outside [0," + std::to_string(num_classes) + ")");
  for (int64_t r = 0; r < features.dim(0); ++r)
    if (row_norm(features, r) <= kDegenerateNorm)
      throw std::invalid_argument("zero-norm feature row " + std::to_string(r) +
                                  "; callers must eps-floor features first");
}

std::vector<int64_t> ClassCenters::degenerate() const {
  std::vector<int64_t> out;
  for (int64_t i = 0; i < centers.dim(0); ++i)
    if (row_norm(centers, i) <= kDegenerateNorm) out.push_back(i);
  return out;
}

ClassCenters compute_centers(const LabeledFeatures& train) {
  train.validate();
  int64_t C = train.num_classes, d = train.features.dim(1);
  Tensor centers({C, d});
  std::vector<int64_t> counts(static_cast<size_t>(C), 0);
  for (int64_t r = 0; r < train.features.dim(0); ++r) {
    int64_t cls = train.labels[static_cast<size_t>(r)];
    double inv = 1.0 / row_norm(train.features, r);
    for (int64_t j = 0; j < d; ++j)
      centers.at2(cls, j) += train.features.at2(r, j) * inv;
    ++counts[static_cast<size_t>(cls)];
  }
  for (int64_t i = 0; i < C; ++i) {
    if (counts[static_cast<size_t>(i)] == 0)
      throw std::invalid_argument("class " + std::to_string(i) +
                                  " has no samples");
    double inv = 1.0 / static_cast<double>(counts[static_cast<size_t>(i)]);
    for (int64_t j = 0; j < d; ++j) centers.at2(i, j) *= inv;
  }
  return ClassCenters{std::move(centers)};
}

double intra_angle(const LabeledFeatures& data, const ClassCenters& centers) {
  data.validate();
  if (centers.num_classes() != data.num_classes)
    throw std::invalid_argument("centers built for " +
                                std::to_string(centers.num_classes()) +
                                " classes, data has " +
                                std::to_string(data.num_classes));
  auto bad = centers.degenerate();
  if (!bad.empty())
    throw std::invalid_argument("zero-norm class center " +
                                std::to_string(bad.front()));
  std::vector<double> center_norms(static_cast<size_t>(centers.num_classes()));
  for (int64_t i = 0; i < centers.num_classes(); ++i)
    center_norms[static_cast<size_t>(i)] = row_norm(centers.centers, i);

  double total = 0.0;
  int64_t n = data.features.dim(0);
  for (int64_t r = 0; r < n; ++r) {
    int64_t cls = data.labels[static_cast<size_t>(r)];
    total += row_angle_deg(data.features, r, centers.centers, cls,
                           row_norm(data.features, r),
                           center_norms[static_cast<size_t>(cls)]);
  }
  return total / static_cast<double>(n);
}

double inter_angle(const ClassCenters& centers) {
  int64_t C = centers.num_classes();
  if (C < 2)
    throw std::invalid_argument("inter_angle needs >= 2 classes, got " +
                                std::to_string(C));
  auto bad = centers.degenerate();
  if (!bad.empty())
    throw std::invalid_argument("zero-norm class center " +
                                std::to_string(bad.front()));
  std::vector<double> norms(static_cast<size_t>(C));
  for (int64_t i = 0; i < C; ++i)
    norms[static_cast<size_t>(i)] = row_norm(centers.centers, i);

  double total = 0.0;
  for (int64_t i = 0; i < C; ++i) {
    double best = 180.0;
    for (int64_t j = 0; j < C; ++j) {
      if (j == i) continue;
      best = std::min(best, row_angle_deg(centers.centers, i, centers.centers,
                                          j, norms[static_cast<size_t>(i)],
                                          norms[static_cast<size_t>(j)]));
    }
    total += best;
  }
  return total / static_cast<double>(C);
}

double iir(double intra_deg, double inter_deg) {
  if (inter_deg == 0.0)
    throw std::invalid_argument("iir: inter-angle is zero");
  return intra_deg / inter_deg;
}

AngleReport angle_report(const LabeledFeatures& train,
                         const LabeledFeatures* test) {
  ClassCenters centers = compute_centers(train);
  AngleReport rep;
  rep.intra_train = intra_angle(train, centers);
  rep.inter = inter_angle(centers);
  rep.iir_train = iir(rep.intra_train, rep.inter);
  if (test != nullptr) {
    rep.intra_test = intra_angle(*test, centers);
    rep.iir_test = iir(*rep.intra_test, rep.inter);
  }
  return rep;
}

}  // namespace normlab

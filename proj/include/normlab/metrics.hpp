#ifndef NORMLAB_METRICS_HPP_
#define NORMLAB_METRICS_HPP_

#include <optional>
#include <vector>

#include "normlab/tensor.hpp"

namespace normlab {

struct LabeledFeatures {
  Tensor features;               // [N, d]
  std::vector<int64_t> labels;   // values in [0, num_classes)
  int64_t num_classes = 0;

  void validate() const;  // shape/label-range checks, no zero-norm rows
};

struct ClassCenters {
  Tensor centers;  // [C, d]; row i = mean of unit-normalized class-i features
  int64_t num_classes() const { return centers.dim(0); }
  /// Classes whose center collapsed to (near) zero norm.
  std::vector<int64_t> degenerate() const;
};

/// Per-class mean of unit vectors. Every class must have at least one
/// sample; an empty class is an error naming the class.
ClassCenters compute_centers(const LabeledFeatures& train);

/// Mean angle (degrees) between each sample and its class center. Centers
/// come from the training split even when scoring test data.
double intra_angle(const LabeledFeatures& data, const ClassCenters& centers);

/// Mean over classes of the minimum angle (degrees) to any other center.
double inter_angle(const ClassCenters& centers);

/// intra / inter; smaller is better. inter == 0 is an error.
double iir(double intra_deg, double inter_deg);

struct AngleReport {
  double intra_train = 0.0;
  std::optional<double> intra_test{};
  double inter = 0.0;
  double iir_train = 0.0;
  std::optional<double> iir_test{};
};

/// Full report: centers from train, intra/IIR for train and (optionally)
/// test. Test inter-angle is intentionally not computed.
AngleReport angle_report(const LabeledFeatures& train,
                         const LabeledFeatures* test = nullptr);

}  // namespace normlab

#endif  // NORMLAB_METRICS_HPP_

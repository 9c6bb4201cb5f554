#ifndef NORMLAB_TENSOR_HPP_
#define NORMLAB_TENSOR_HPP_

#include <cstdint>
#include <string>
#include <vector>

namespace normlab {

using Shape = std::vector<int64_t>;

std::string shape_str(const Shape& s);

/// Dense row-major tensor of 64-bit floats. Values are immutable after
/// construction unless mutated through data(); no internal locking, so
/// read-only sharing across threads is safe.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor zeros(const Shape& shape);
  static Tensor ones(const Shape& shape);
  static Tensor full(const Shape& shape, double value);
  /// Builds a [rows, cols] matrix from nested initializer data.
  static Tensor row_matrix(const std::vector<std::vector<double>>& rows);

  const Shape& shape() const { return shape_; }
  int64_t rank() const { return static_cast<int64_t>(shape_.size()); }
  int64_t dim(int64_t i) const;
  int64_t numel() const { return static_cast<int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  double operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }
  double& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }

  double at2(int64_t r, int64_t c) const;
  double& at2(int64_t r, int64_t c);

  /// Same data, new shape; element counts must agree.
  Tensor reshape(const Shape& new_shape) const;
  /// Rank-2 transpose.
  Tensor transpose() const;
  /// Rows [begin, end) along the first axis, any rank.
  Tensor slice_rows(int64_t begin, int64_t end) const;

  bool all_finite() const;
  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
  /// Exact bitwise equality of shape and every element.
  bool bit_equal(const Tensor& other) const;

 private:
  Shape shape_;
  std::vector<double> data_;
};

// Elementwise arithmetic; shapes must match exactly and mismatches throw
// with both shapes in the message.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);  // non-finite quotient is an error
Tensor scale(const Tensor& a, double s);
Tensor sqrt(const Tensor& a);  // negative input is an error

// Rank-2 reductions. axis 0 collapses rows (result [cols]); axis 1
// collapses columns (result [rows]). Variance is uncorrected: divide by N.
Tensor sum(const Tensor& a, int axis);
Tensor mean(const Tensor& a, int axis);
Tensor var_uncorrected(const Tensor& a, int axis);

Tensor matmul(const Tensor& a, const Tensor& b);

}  // namespace normlab

#endif  // NORMLAB_TENSOR_HPP_

#include "normlab/tensor.hpp"

#include <cmath>
#include <cstring>
#include <sstream>
#include <stdexcept>

#include "normlab/kernels.hpp"

namespace normlab {

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) os << ',';
    os << s[i];
  }
  os << ']';
  return os.str();
}

namespace {

int64_t checked_numel(const Shape& shape) {
  if (shape.empty()) throw std::invalid_argument("tensor shape must not be empty");
  int64_t n = 1;
  for (int64_t d : shape) {
    if (d < 1)
      throw std::invalid_argument("tensor dimensions must be >= 1, got " +
                                  shape_str(shape));
    n *= d;
  }
  return n;
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b))
    throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
}

void check_rank2(const Tensor& t, const char* op) {
  if (t.rank() != 2)
    throw std::invalid_argument(std::string(op) + ": expected rank-2 tensor, got " +
                                shape_str(t.shape()));
}

}  // namespace

Tensor::Tensor(Shape shape, double fill) {
  int64_t n = checked_numel(shape);
  shape_ = std::move(shape);
  data_.assign(static_cast<size_t>(n), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data) {
  int64_t n = checked_numel(shape);
  if (n != static_cast<int64_t>(data.size()))
    throw std::invalid_argument("tensor data length " +
                                std::to_string(data.size()) +
                                " does not match shape " + shape_str(shape));
  shape_ = std::move(shape);
  data_ = std::move(data);
}

Tensor Tensor::zeros(const Shape& shape) { return Tensor(shape, 0.0); }
Tensor Tensor::ones(const Shape& shape) { return Tensor(shape, 1.0); }
Tensor Tensor::full(const Shape& shape, double value) { return Tensor(shape, value); }

Tensor Tensor::row_matrix(const std::vector<std::vector<double>>& rows) {
  if (rows.empty()) throw std::invalid_argument("row_matrix: no rows");
  int64_t cols = static_cast<int64_t>(rows[0].size());
  Tensor out({static_cast<int64_t>(rows.size()), cols});
  for (size_t r = 0; r < rows.size(); ++r) {
    if (static_cast<int64_t>(rows[r].size()) != cols)
      throw std::invalid_argument("row_matrix: ragged rows");
    std::memcpy(out.data() + static_cast<int64_t>(r) * cols, rows[r].data(),
                static_cast<size_t>(cols) * sizeof(double));
  }
  return out;
}

int64_t Tensor::dim(int64_t i) const {
  if (i < 0 || i >= rank())
    throw std::invalid_argument("dim index " + std::to_string(i) +
                                " out of range for " + shape_str(shape_));
  return shape_[static_cast<size_t>(i)];
}

double Tensor::at2(int64_t r, int64_t c) const {
  return data_[static_cast<size_t>(r * shape_[1] + c)];
}
double& Tensor::at2(int64_t r, int64_t c) {
  return data_[static_cast<size_t>(r * shape_[1] + c)];
}

Tensor Tensor::reshape(const Shape& new_shape) const {
  int64_t n = checked_numel(new_shape);
  if (n != numel())
    throw std::invalid_argument("reshape: cannot view " + shape_str(shape_) +
                                " as " + shape_str(new_shape));
  Tensor out;
  out.shape_ = new_shape;
  out.data_ = data_;
  return out;
}

Tensor Tensor::transpose() const {
  check_rank2(*this, "transpose");
  int64_t r = shape_[0], c = shape_[1];
  Tensor out({c, r});
  for (int64_t i = 0; i < r; ++i)
    for (int64_t j = 0; j < c; ++j) out[j * r + i] = (*this)[i * c + j];
  return out;
}

Tensor Tensor::slice_rows(int64_t begin, int64_t end) const {
  int64_t rows = shape_[0];
  if (begin < 0 || end > rows || begin >= end)
    throw std::invalid_argument("slice_rows: invalid range [" +
                                std::to_string(begin) + "," +
                                std::to_string(end) + ") for " +
                                shape_str(shape_));
  int64_t row_sz = numel() / rows;
  Shape out_shape = shape_;
  out_shape[0] = end - begin;
  Tensor out(out_shape);
  std::memcpy(out.data(), data() + begin * row_sz,
              static_cast<size_t>((end - begin) * row_sz) * sizeof(double));
  return out;
}

bool Tensor::all_finite() const {
  for (double v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

bool Tensor::bit_equal(const Tensor& other) const {
  return shape_ == other.shape_ &&
         std::memcmp(data_.data(), other.data_.data(),
                     data_.size() * sizeof(double)) == 0;
}

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  Tensor out(a.shape());
  for (int64_t i = 0; i < a.numel(); ++i) out[i] = a[i] + b[i];
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  Tensor out(a.shape());
  for (int64_t i = 0; i < a.numel(); ++i) out[i] = a[i] - b[i];
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  Tensor out(a.shape());
  for (int64_t i = 0; i < a.numel(); ++i) out[i] = a[i] * b[i];
  return out;
}

Tensor div(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "div");
  Tensor out(a.shape());
  for (int64_t i = 0; i < a.numel(); ++i) {
    out[i] = a[i] / b[i];
    if (!std::isfinite(out[i]))
      throw std::runtime_error("div: non-finite quotient at index " +
                               std::to_string(i) + " (" + std::to_string(a[i]) +
                               " / " + std::to_string(b[i]) + ")");
  }
  return out;
}

Tensor scale(const Tensor& a, double s) {
  Tensor out(a.shape());
  for (int64_t i = 0; i < a.numel(); ++i) out[i] = a[i] * s;
  return out;
}

Tensor sqrt(const Tensor& a) {
  Tensor out(a.shape());
  for (int64_t i = 0; i < a.numel(); ++i) {
    if (a[i] < 0.0)
      throw std::runtime_error("sqrt: negative input at index " +
                               std::to_string(i));
    out[i] = std::sqrt(a[i]);
  }
  return out;
}

namespace {

enum class Reduce { kSum, kMean, kVar };

Tensor reduce2(const Tensor& a, int axis, Reduce what) {
  check_rank2(a, "reduce");
  if (axis != 0 && axis != 1)
    throw std::invalid_argument("reduce: axis must be 0 or 1");
  int64_t rows = a.dim(0), cols = a.dim(1);
  int64_t out_n = axis == 0 ? cols : rows;
  int64_t red_n = axis == 0 ? rows : cols;
  Tensor out({out_n});
  for (int64_t o = 0; o < out_n; ++o) {
    double s = 0.0;
    for (int64_t r = 0; r < red_n; ++r)
      s += axis == 0 ? a.at2(r, o) : a.at2(o, r);
    if (what == Reduce::kSum) {
      out[o] = s;
      continue;
    }
    double m = s / static_cast<double>(red_n);
    if (what == Reduce::kMean) {
      out[o] = m;
      continue;
    }
    double acc = 0.0;
    for (int64_t r = 0; r < red_n; ++r) {
      double d = (axis == 0 ? a.at2(r, o) : a.at2(o, r)) - m;
      acc += d * d;
    }
    out[o] = acc / static_cast<double>(red_n);
  }
  return out;
}

}  // namespace

Tensor sum(const Tensor& a, int axis) { return reduce2(a, axis, Reduce::kSum); }
Tensor mean(const Tensor& a, int axis) { return reduce2(a, axis, Reduce::kMean); }
Tensor var_uncorrected(const Tensor& a, int axis) {
  return reduce2(a, axis, Reduce::kVar);
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  check_rank2(a, "matmul");
  check_rank2(b, "matmul");
  if (a.dim(1) != b.dim(0))
    throw std::invalid_argument("matmul: shape mismatch " + shape_str(a.shape()) +
                                " vs " + shape_str(b.shape()));
  Tensor out({a.dim(0), b.dim(1)});
  kernels::matmul(a.data(), b.data(), out.data(), a.dim(0), a.dim(1), b.dim(1));
  return out;
}

}  // namespace normlab

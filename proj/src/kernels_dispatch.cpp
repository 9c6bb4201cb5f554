#include "normlab/exec.hpp"
#include "normlab/kernels.hpp"

namespace normlab::kernels {

namespace {
// fork/join costs more than the work below roughly this many flops
constexpr int64_t kParallelCutoff = 16384;

inline bool go_parallel(int64_t work) {
  return exec::parallel() && work >= kParallelCutoff;
}
}  // namespace

void matmul(const double* a, const double* b, double* c, int64_t m, int64_t k,
            int64_t n) {
  if (go_parallel(m * k * n))
    omp::matmul(a, b, c, m, k, n);
  else
    serial::matmul(a, b, c, m, k, n);
}

void matmul_tn(const double* a, const double* b, double* c, int64_t m,
               int64_t k, int64_t n) {
  if (go_parallel(m * k * n))
    omp::matmul_tn(a, b, c, m, k, n);
  else
    serial::matmul_tn(a, b, c, m, k, n);
}

void matmul_nt(const double* a, const double* b, double* c, int64_t m,
               int64_t k, int64_t n) {
  if (go_parallel(m * k * n))
    omp::matmul_nt(a, b, c, m, k, n);
  else
    serial::matmul_nt(a, b, c, m, k, n);
}

void row_sumsq(const double* x, double* out, int64_t rows, int64_t cols) {
  if (go_parallel(rows * cols))
    omp::row_sumsq(x, out, rows, cols);
  else
    serial::row_sumsq(x, out, rows, cols);
}

void row_moments(const double* x, double* mean, double* var, int64_t rows,
                 int64_t cols) {
  if (go_parallel(rows * cols))
    omp::row_moments(x, mean, var, rows, cols);
  else
    serial::row_moments(x, mean, var, rows, cols);
}

void plane_moments(const double* x, double* mean, double* var, int64_t n,
                   int64_t c, int64_t s) {
  if (go_parallel(n * c * s))
    omp::plane_moments(x, mean, var, n, c, s);
  else
    serial::plane_moments(x, mean, var, n, c, s);
}

void position_moments(const double* x, double* mean, double* var, int64_t n,
                      int64_t c, int64_t s) {
  if (go_parallel(n * c * s))
    omp::position_moments(x, mean, var, n, c, s);
  else
    serial::position_moments(x, mean, var, n, c, s);
}

void conv3x3_forward(const double* x, const double* w, double* y, int64_t n,
                     int64_t cin, int64_t h, int64_t wd, int64_t cout,
                     int64_t stride) {
  if (go_parallel(n * cout * cin * h * wd))
    omp::conv3x3_forward(x, w, y, n, cin, h, wd, cout, stride);
  else
    serial::conv3x3_forward(x, w, y, n, cin, h, wd, cout, stride);
}

void conv3x3_backward_input(const double* gy, const double* w, double* gx,
                            int64_t n, int64_t cin, int64_t h, int64_t wd,
                            int64_t cout, int64_t stride) {
  if (go_parallel(n * cout * cin * h * wd))
    omp::conv3x3_backward_input(gy, w, gx, n, cin, h, wd, cout, stride);
  else
    serial::conv3x3_backward_input(gy, w, gx, n, cin, h, wd, cout, stride);
}

void conv3x3_backward_weight(const double* gy, const double* x, double* gw,
                             int64_t n, int64_t cin, int64_t h, int64_t wd,
                             int64_t cout, int64_t stride) {
  if (go_parallel(n * cout * cin * h * wd))
    omp::conv3x3_backward_weight(gy, x, gw, n, cin, h, wd, cout, stride);
  else
    serial::conv3x3_backward_weight(gy, x, gw, n, cin, h, wd, cout, stride);
}

}  // namespace normlab::kernels

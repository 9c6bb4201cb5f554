#ifndef NORMLAB_KERNELS_HPP_
#define NORMLAB_KERNELS_HPP_

#include <cstdint>

// Hot inner loops, each in two builds: a serial reference and an OpenMP
// variant parallelized over independent outputs. The serial build is the
// ground truth the parallel one is tested against (see
// tests/test_kernels.cpp) and the two are compared in bench/.

namespace normlab::kernels {

#define NORMLAB_KERNEL_DECLS                                                   \
  /* c[m,n] = a[m,k] * b[k,n] */                                               \
  void matmul(const double* a, const double* b, double* c, int64_t m,          \
              int64_t k, int64_t n);                                           \
  /* c[m,n] = a[k,m]^T * b[k,n] */                                             \
  void matmul_tn(const double* a, const double* b, double* c, int64_t m,       \
                 int64_t k, int64_t n);                                        \
  /* c[m,n] = a[m,k] * b[n,k]^T */                                             \
  void matmul_nt(const double* a, const double* b, double* c, int64_t m,       \
                 int64_t k, int64_t n);                                        \
  /* out[r] = sum_j x[r,j]^2 */                                                \
  void row_sumsq(const double* x, double* out, int64_t rows, int64_t cols);    \
  /* per-row mean and uncorrected variance */                                  \
  void row_moments(const double* x, double* mean, double* var, int64_t rows,   \
                   int64_t cols);                                              \
  /* x viewed as [n,c,s]: per-channel mean/variance over (n,s) */              \
  void plane_moments(const double* x, double* mean, double* var, int64_t n,    \
                     int64_t c, int64_t s);                                    \
  /* x viewed as [n,c,s]: per-(sample,position) mean/variance over c */        \
  void position_moments(const double* x, double* mean, double* var,            \
                        int64_t n, int64_t c, int64_t s);                      \
  /* 3x3 convolution, padding 1; y dims ho=(h-1)/stride+1, wo likewise */      \
  void conv3x3_forward(const double* x, const double* w, double* y,            \
                       int64_t n, int64_t cin, int64_t h, int64_t wd,          \
                       int64_t cout, int64_t stride);                          \
  void conv3x3_backward_input(const double* gy, const double* w, double* gx,   \
                              int64_t n, int64_t cin, int64_t h, int64_t wd,   \
                              int64_t cout, int64_t stride);                   \
  void conv3x3_backward_weight(const double* gy, const double* x, double* gw,  \
                               int64_t n, int64_t cin, int64_t h, int64_t wd,  \
                               int64_t cout, int64_t stride);

namespace serial {
NORMLAB_KERNEL_DECLS
}

namespace omp {
NORMLAB_KERNEL_DECLS
}

#undef NORMLAB_KERNEL_DECLS

// Dispatchers: route to the OpenMP kernel when exec::threads() > 1 and the
// problem is large enough to amortize the fork/join.
void matmul(const double* a, const double* b, double* c, int64_t m, int64_t k,
            int64_t n);
void matmul_tn(const double* a, const double* b, double* c, int64_t m,
               int64_t k, int64_t n);
void matmul_nt(const double* a, const double* b, double* c, int64_t m,
               int64_t k, int64_t n);
void row_sumsq(const double* x, double* out, int64_t rows, int64_t cols);
void row_moments(const double* x, double* mean, double* var, int64_t rows,
                 int64_t cols);
void plane_moments(const double* x, double* mean, double* var, int64_t n,
                   int64_t c, int64_t s);
void position_moments(const double* x, double* mean, double* var, int64_t n,
                      int64_t c, int64_t s);
void conv3x3_forward(const double* x, const double* w, double* y, int64_t n,
                     int64_t cin, int64_t h, int64_t wd, int64_t cout,
                     int64_t stride);
void conv3x3_backward_input(const double* gy, const double* w, double* gx,
                            int64_t n, int64_t cin, int64_t h, int64_t wd,
                            int64_t cout, int64_t stride);
void conv3x3_backward_weight(const double* gy, const double* x, double* gw,
                             int64_t n, int64_t cin, int64_t h, int64_t wd,
                             int64_t cout, int64_t stride);

}  // namespace normlab::kernels

#endif  // NORMLAB_KERNELS_HPP_

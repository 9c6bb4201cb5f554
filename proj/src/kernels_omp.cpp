#include <omp.h>

#include "normlab/exec.hpp"
#include "normlab/kernels.hpp"

// OpenMP kernels. Work is split only across loops whose iterations write
// disjoint outputs; every reduction stays inside one iteration in its
// serial order, so output bits match the serial reference for any thread
// count or schedule.

namespace normlab::kernels::omp {

namespace {
inline int nthreads() { return exec::threads(); }
}

void matmul(const double* a, const double* b, double* c, int64_t m, int64_t k,
            int64_t n) {
#pragma omp parallel for num_threads(nthreads()) schedule(static)
  for (int64_t i = 0; i < m; ++i) {
    for (int64_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (int64_t p = 0; p < k; ++p) acc += a[i * k + p] * b[p * n + j];
      c[i * n + j] = acc;
    }
  }
}

void matmul_tn(const double* a, const double* b, double* c, int64_t m,
               int64_t k, int64_t n) {
#pragma omp parallel for num_threads(nthreads()) schedule(static)
  for (int64_t i = 0; i < m; ++i) {
    for (int64_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (int64_t p = 0; p < k; ++p) acc += a[p * m + i] * b[p * n + j];
      c[i * n + j] = acc;
    }
  }
}

void matmul_nt(const double* a, const double* b, double* c, int64_t m,
               int64_t k, int64_t n) {
#pragma omp parallel for num_threads(nthreads()) schedule(static)
  for (int64_t i = 0; i < m; ++i) {
    for (int64_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (int64_t p = 0; p < k; ++p) acc += a[i * k + p] * b[j * k + p];
      c[i * n + j] = acc;
    }
  }
}

void row_sumsq(const double* x, double* out, int64_t rows, int64_t cols) {
#pragma omp parallel for num_threads(nthreads()) schedule(static)
  for (int64_t r = 0; r < rows; ++r) {
    const double* p = x + r * cols;
    double acc = 0.0;
    for (int64_t j = 0; j < cols; ++j) acc += p[j] * p[j];
    out[r] = acc;
  }
}

void row_moments(const double* x, double* mean, double* var, int64_t rows,
                 int64_t cols) {
#pragma omp parallel for num_threads(nthreads()) schedule(static)
  for (int64_t r = 0; r < rows; ++r) {
    const double* p = x + r * cols;
    double s = 0.0;
    for (int64_t j = 0; j < cols; ++j) s += p[j];
    double m = s / static_cast<double>(cols);
    double acc = 0.0;
    for (int64_t j = 0; j < cols; ++j) {
      double d = p[j] - m;
      acc += d * d;
    }
    mean[r] = m;
    var[r] = acc / static_cast<double>(cols);
  }
}

void plane_moments(const double* x, double* mean, double* var, int64_t n,
                   int64_t c, int64_t s) {
  const double count = static_cast<double>(n * s);
#pragma omp parallel for num_threads(nthreads()) schedule(static)
  for (int64_t ch = 0; ch < c; ++ch) {
    double sum = 0.0;
    for (int64_t i = 0; i < n; ++i) {
      const double* p = x + (i * c + ch) * s;
      for (int64_t j = 0; j < s; ++j) sum += p[j];
    }
    double m = sum / count;
    double acc = 0.0;
    for (int64_t i = 0; i < n; ++i) {
      const double* p = x + (i * c + ch) * s;
      for (int64_t j = 0; j < s; ++j) {
        double d = p[j] - m;
        acc += d * d;
      }
    }
    mean[ch] = m;
    var[ch] = acc / count;
  }
}

void position_moments(const double* x, double* mean, double* var, int64_t n,
                      int64_t c, int64_t s) {
  const double count = static_cast<double>(c);
#pragma omp parallel for num_threads(nthreads()) schedule(static)
  for (int64_t g = 0; g < n * s; ++g) {
    int64_t i = g / s, j = g % s;
    const double* base = x + i * c * s + j;
    double sum = 0.0;
    for (int64_t ch = 0; ch < c; ++ch) sum += base[ch * s];
    double m = sum / count;
    double acc = 0.0;
    for (int64_t ch = 0; ch < c; ++ch) {
      double d = base[ch * s] - m;
      acc += d * d;
    }
    mean[g] = m;
    var[g] = acc / count;
  }
}

void conv3x3_forward(const double* x, const double* w, double* y, int64_t n,
                     int64_t cin, int64_t h, int64_t wd, int64_t cout,
                     int64_t stride) {
  const int64_t ho = (h - 1) / stride + 1;
  const int64_t wo = (wd - 1) / stride + 1;
#pragma omp parallel for collapse(2) num_threads(nthreads()) schedule(static)
  for (int64_t img = 0; img < n; ++img) {
    for (int64_t co = 0; co < cout; ++co) {
      double* yp = y + (img * cout + co) * ho * wo;
      for (int64_t oh = 0; oh < ho; ++oh) {
        for (int64_t ow = 0; ow < wo; ++ow) {
          double acc = 0.0;
          for (int64_t ci = 0; ci < cin; ++ci) {
            const double* xp = x + (img * cin + ci) * h * wd;
            const double* wp = w + (co * cin + ci) * 9;
            for (int64_t kh = 0; kh < 3; ++kh) {
              int64_t ih = oh * stride + kh - 1;
              if (ih < 0 || ih >= h) continue;
              for (int64_t kw = 0; kw < 3; ++kw) {
                int64_t iw = ow * stride + kw - 1;
                if (iw < 0 || iw >= wd) continue;
                acc += xp[ih * wd + iw] * wp[kh * 3 + kw];
              }
            }
          }
          yp[oh * wo + ow] = acc;
        }
      }
    }
  }
}

void conv3x3_backward_input(const double* gy, const double* w, double* gx,
                            int64_t n, int64_t cin, int64_t h, int64_t wd,
                            int64_t cout, int64_t stride) {
  const int64_t ho = (h - 1) / stride + 1;
  const int64_t wo = (wd - 1) / stride + 1;
#pragma omp parallel for collapse(2) num_threads(nthreads()) schedule(static)
  for (int64_t img = 0; img < n; ++img) {
    for (int64_t ci = 0; ci < cin; ++ci) {
      double* gxp = gx + (img * cin + ci) * h * wd;
      for (int64_t ih = 0; ih < h; ++ih) {
        for (int64_t iw = 0; iw < wd; ++iw) {
          double acc = 0.0;
          for (int64_t co = 0; co < cout; ++co) {
            const double* gyp = gy + (img * cout + co) * ho * wo;
            const double* wp = w + (co * cin + ci) * 9;
            for (int64_t kh = 0; kh < 3; ++kh) {
              int64_t oh_num = ih + 1 - kh;
              if (oh_num < 0 || oh_num % stride != 0) continue;
              int64_t oh = oh_num / stride;
              if (oh >= ho) continue;
              for (int64_t kw = 0; kw < 3; ++kw) {
                int64_t ow_num = iw + 1 - kw;
                if (ow_num < 0 || ow_num % stride != 0) continue;
                int64_t ow = ow_num / stride;
                if (ow >= wo) continue;
                acc += gyp[oh * wo + ow] * wp[kh * 3 + kw];
              }
            }
          }
          gxp[ih * wd + iw] = acc;
        }
      }
    }
  }
}

void conv3x3_backward_weight(const double* gy, const double* x, double* gw,
                             int64_t n, int64_t cin, int64_t h, int64_t wd,
                             int64_t cout, int64_t stride) {
  const int64_t ho = (h - 1) / stride + 1;
  const int64_t wo = (wd - 1) / stride + 1;
#pragma omp parallel for collapse(2) num_threads(nthreads()) schedule(static)
  for (int64_t co = 0; co < cout; ++co) {
    for (int64_t ci = 0; ci < cin; ++ci) {
      double* gwp = gw + (co * cin + ci) * 9;
      for (int64_t kh = 0; kh < 3; ++kh) {
        for (int64_t kw = 0; kw < 3; ++kw) {
          double acc = 0.0;
          for (int64_t img = 0; img < n; ++img) {
            const double* gyp = gy + (img * cout + co) * ho * wo;
            const double* xp = x + (img * cin + ci) * h * wd;
            for (int64_t oh = 0; oh < ho; ++oh) {
              int64_t ih = oh * stride + kh - 1;
              if (ih < 0 || ih >= h) continue;
              for (int64_t ow = 0; ow < wo; ++ow) {
                int64_t iw = ow * stride + kw - 1;
                if (iw < 0 || iw >= wd) continue;
                acc += gyp[oh * wo + ow] * xp[ih * wd + iw];
              }
            }
          }
          gwp[kh * 3 + kw] = acc;
        }
      }
    }
  }
}

}  // namespace normlab::kernels::omp

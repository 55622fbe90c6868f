// Compiled with -mavx2 -mfma. Only reached through avx2_table() after a CPU check.
#include "coex/kernels.hpp"

#include <immintrin.h>

namespace coex::kernels {
namespace {

inline double hsum(__m256d v) {
  const __m128d lo = _mm256_castpd256_pd128(v);
  const __m128d hi = _mm256_extractf128_pd(v, 1);
  const __m128d s = _mm_add_pd(lo, hi);
  return _mm_cvtsd_f64(_mm_add_sd(s, _mm_unpackhi_pd(s, s)));
}

double dot_avx2(const double* a, const double* b, std::size_t n) {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
    acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 4), _mm256_loadu_pd(b + i + 4), acc1);
  }
  for (; i + 4 <= n; i += 4) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
  }
  double s = hsum(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) s += a[i] * b[i];
  return s;
}

void axpy_avx2(double alpha, const double* x, double* y, std::size_t n) {
  const __m256d a = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(a, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
    _mm256_storeu_pd(y + i + 4,
                     _mm256_fmadd_pd(a, _mm256_loadu_pd(x + i + 4), _mm256_loadu_pd(y + i + 4)));
  }
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(a, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  }
  for (; i < n; ++i) y[i] += alpha * x[i];
}

// Four output rows per pass so each load of x feeds four FMAs.
void matmul_wt_avx2(const double* x, const double* w, double* y, std::size_t rows,
                    std::size_t n_in, std::size_t n_out) {
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x + r * n_in;
    double* yr = y + r * n_out;
    std::size_t o = 0;
    for (; o + 4 <= n_out; o += 4) {
      const double* w0 = w + o * n_in;
      const double* w1 = w0 + n_in;
      const double* w2 = w1 + n_in;
      const double* w3 = w2 + n_in;
      __m256d a0 = _mm256_setzero_pd(), a1 = _mm256_setzero_pd();
      __m256d a2 = _mm256_setzero_pd(), a3 = _mm256_setzero_pd();
      std::size_t i = 0;
      for (; i + 4 <= n_in; i += 4) {
        const __m256d xv = _mm256_loadu_pd(xr + i);
        a0 = _mm256_fmadd_pd(xv, _mm256_loadu_pd(w0 + i), a0);
        a1 = _mm256_fmadd_pd(xv, _mm256_loadu_pd(w1 + i), a1);
        a2 = _mm256_fmadd_pd(xv, _mm256_loadu_pd(w2 + i), a2);
        a3 = _mm256_fmadd_pd(xv, _mm256_loadu_pd(w3 + i), a3);
      }
      double s0 = hsum(a0), s1 = hsum(a1), s2 = hsum(a2), s3 = hsum(a3);
      for (; i < n_in; ++i) {
        s0 += xr[i] * w0[i];
        s1 += xr[i] * w1[i];
        s2 += xr[i] * w2[i];
        s3 += xr[i] * w3[i];
      }
      yr[o] = s0;
      yr[o + 1] = s1;
      yr[o + 2] = s2;
      yr[o + 3] = s3;
    }
    for (; o < n_out; ++o) yr[o] = dot_avx2(xr, w + o * n_in, n_in);
  }
}

void matmul_acc_avx2(const double* dy, const double* w, double* dx, std::size_t rows,
                     std::size_t n_in, std::size_t n_out) {
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t o = 0; o < n_out; ++o) {
      const double g = dy[r * n_out + o];
      if (g != 0.0) axpy_avx2(g, w + o * n_in, dx + r * n_in, n_in);
    }
  }
}

void outer_acc_avx2(const double* dy, const double* x, double* dw, std::size_t rows,
                    std::size_t n_in, std::size_t n_out) {
  for (std::size_t o = 0; o < n_out; ++o) {
    for (std::size_t r = 0; r < rows; ++r) {
      const double g = dy[r * n_out + o];
      if (g != 0.0) axpy_avx2(g, x + r * n_in, dw + o * n_in, n_in);
    }
  }
}

}  // namespace

const KernelTable* avx2_table() {
  static const KernelTable table{"avx2",         dot_avx2,        axpy_avx2,
                                 matmul_wt_avx2, matmul_acc_avx2, outer_acc_avx2};
  return &table;
}

}  // namespace coex::kernels

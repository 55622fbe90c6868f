#pragma once

// Dense double-precision kernels used by the policy networks.
//
// Every kernel has a portable scalar reference and an AVX2/FMA variant. The
// variant is chosen once per process from the CPU feature bits; setting
// COEX_SIMD=scalar in the environment forces the reference path. Matrices are
// row-major and tightly packed.

#include <cstddef>
#include <string_view>

namespace coex::kernels {

struct KernelTable {
  std::string_view name;

  double (*dot)(const double* a, const double* b, std::size_t n);
  // y += alpha * x
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
  // Y[rows x n_out] = X[rows x n_in] * W^T, W is [n_out x n_in]. Overwrites Y.
  void (*matmul_wt)(const double* x, const double* w, double* y, std::size_t rows,
                    std::size_t n_in, std::size_t n_out);
  // dX[rows x n_in] += dY[rows x n_out] * W
  void (*matmul_acc)(const double* dy, const double* w, double* dx, std::size_t rows,
                     std::size_t n_in, std::size_t n_out);
  // dW[n_out x n_in] += dY^T * X
  void (*outer_acc)(const double* dy, const double* x, double* dw, std::size_t rows,
                    std::size_t n_in, std::size_t n_out);
};

const KernelTable& scalar_table();
// nullptr when the binary was built without AVX2 support.
const KernelTable* avx2_table();
bool cpu_has_avx2();

// The table selected for this process.
const KernelTable& active();

inline double dot(const double* a, const double* b, std::size_t n) { return active().dot(a, b, n); }
inline void axpy(double alpha, const double* x, double* y, std::size_t n) {
  active().axpy(alpha, x, y, n);
}
inline void matmul_wt(const double* x, const double* w, double* y, std::size_t rows,
                      std::size_t n_in, std::size_t n_out) {
  active().matmul_wt(x, w, y, rows, n_in, n_out);
}
inline void matmul_acc(const double* dy, const double* w, double* dx, std::size_t rows,
                       std::size_t n_in, std::size_t n_out) {
  active().matmul_acc(dy, w, dx, rows, n_in, n_out);
}
inline void outer_acc(const double* dy, const double* x, double* dw, std::size_t rows,
                      std::size_t n_in, std::size_t n_out) {
  active().outer_acc(dy, x, dw, rows, n_in, n_out);
}

}  // namespace coex::kernels

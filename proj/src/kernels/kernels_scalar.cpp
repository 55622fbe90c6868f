#include "coex/kernels.hpp"

namespace coex::kernels {
namespace {

double dot_scalar(const double* a, const double* b, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

void axpy_scalar(double alpha, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void matmul_wt_scalar(const double* x, const double* w, double* y, std::size_t rows,
                      std::size_t n_in, std::size_t n_out) {
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t o = 0; o < n_out; ++o) {
      y[r * n_out + o] = dot_scalar(x + r * n_in, w + o * n_in, n_in);
    }
  }
}

void matmul_acc_scalar(const double* dy, const double* w, double* dx, std::size_t rows,
                       std::size_t n_in, std::size_t n_out) {
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t o = 0; o < n_out; ++o) {
      const double g = dy[r * n_out + o];
      if (g != 0.0) axpy_scalar(g, w + o * n_in, dx + r * n_in, n_in);
    }
  }
}

void outer_acc_scalar(const double* dy, const double* x, double* dw, std::size_t rows,
                      std::size_t n_in, std::size_t n_out) {
  for (std::size_t o = 0; o < n_out; ++o) {
    for (std::size_t r = 0; r < rows; ++r) {
      const double g = dy[r * n_out + o];
      if (g != 0.0) axpy_scalar(g, x + r * n_in, dw + o * n_in, n_in);
    }
  }
}

}  // namespace

const KernelTable& scalar_table() {
  static const KernelTable table{"scalar",          dot_scalar,       axpy_scalar,
                                 matmul_wt_scalar,  matmul_acc_scalar, outer_acc_scalar};
  return table;
}

}  // namespace coex::kernels

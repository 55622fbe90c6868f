#include <doctest.h>

#include <stdexcept>

#include <cmath>
#include <vector>

#include "coex/kernels.hpp"
#include "coex/rng.hpp"

using namespace coex;

namespace {

std::vector<double> random_vec(Rng& rng, std::size_t n) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(-1.0, 1.0);
  return v;
}

void check_close(const std::vector<double>& a, const std::vector<double>& b, double scale) {
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::abs(a[i] - b[i]) <= 1e-12 * scale);
}

}  // namespace

TEST_SUITE("kernels") {
TEST_CASE("scalar matmul matches a naive triple loop") {
  Rng rng(1);
  const std::size_t rows = 3, n_in = 7, n_out = 5;
  const auto x = random_vec(rng, rows * n_in);
  const auto w = random_vec(rng, n_out * n_in);
  std::vector<double> y(rows * n_out, 99.0);
  kernels::scalar_table().matmul_wt(x.data(), w.data(), y.data(), rows, n_in, n_out);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t o = 0; o < n_out; ++o) {
      double s = 0.0;
      for (std::size_t i = 0; i < n_in; ++i) s += x[r * n_in + i] * w[o * n_in + i];
      CHECK(y[r * n_out + o] == doctest::Approx(s).epsilon(1e-14));
    }
  }
}

TEST_CASE("avx2 kernels agree with the scalar reference") {
  const kernels::KernelTable* simd = kernels::avx2_table();
  if (simd == nullptr || !kernels::cpu_has_avx2()) {
    MESSAGE("AVX2 not available; equivalence not exercised");
    return;
  }
  const kernels::KernelTable& ref = kernels::scalar_table();
  Rng rng(7);
  // Sizes straddle the 4-wide vector width and its remainders.
  for (std::size_t n_in : {1u, 3u, 4u, 5u, 8u, 13u, 64u, 69u, 307u}) {
    for (std::size_t n_out : {1u, 2u, 4u, 7u, 16u}) {
      for (std::size_t rows : {1u, 3u, 6u}) {
        const auto x = random_vec(rng, rows * n_in);
        const auto w = random_vec(rng, n_out * n_in);
        const auto dy = random_vec(rng, rows * n_out);
        const double scale = static_cast<double>(n_in + rows);

        std::vector<double> y1(rows * n_out), y2(rows * n_out);
        ref.matmul_wt(x.data(), w.data(), y1.data(), rows, n_in, n_out);
        simd->matmul_wt(x.data(), w.data(), y2.data(), rows, n_in, n_out);
        check_close(y1, y2, scale);

        std::vector<double> dx1(rows * n_in, 0.5), dx2(rows * n_in, 0.5);
        ref.matmul_acc(dy.data(), w.data(), dx1.data(), rows, n_in, n_out);
        simd->matmul_acc(dy.data(), w.data(), dx2.data(), rows, n_in, n_out);
        check_close(dx1, dx2, scale);

        std::vector<double> dw1(n_out * n_in, -0.25), dw2(n_out * n_in, -0.25);
        ref.outer_acc(dy.data(), x.data(), dw1.data(), rows, n_in, n_out);
        simd->outer_acc(dy.data(), x.data(), dw2.data(), rows, n_in, n_out);
        check_close(dw1, dw2, scale);
      }
    }
    const auto a = random_vec(rng, n_in);
    const auto b = random_vec(rng, n_in);
    CHECK(std::abs(ref.dot(a.data(), b.data(), n_in) - simd->dot(a.data(), b.data(), n_in)) <= 1e-12 * n_in);
    std::vector<double> y1 = b, y2 = b;
    ref.axpy(0.3, a.data(), y1.data(), n_in);
    simd->axpy(0.3, a.data(), y2.data(), n_in);
    check_close(y1, y2, 1.0);
  }
}

TEST_CASE("the active table is one of the two implementations") {
  const std::string_view name = kernels::active().name;
  CHECK((name == kernels::scalar_table().name ||
         (kernels::avx2_table() != nullptr && name == kernels::avx2_table()->name)));
}
}

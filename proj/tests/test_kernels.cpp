// Every SIMD variant must agree with the scalar reference.

#include <cmath>
#include <random>
#include <stdexcept>
#include <vector>

#include "doctest.h"
#include "nsl/kernels/kernels.hpp"

namespace k = nsl::kernels;

namespace {

std::vector<double> random_vec(std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> d(-1.0, 1.0);
  std::vector<double> v(n);
  for (double& x : v) x = d(rng);
  return v;
}

void expect_close(const std::vector<double>& a, const std::vector<double>& b, double scale) {
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(std::abs(a[i] - b[i]) <= 1e-12 * scale);
  }
}

std::vector<k::Isa> simd_variants() {
  std::vector<k::Isa> out;
  if (k::available(k::Isa::kAvx2)) out.push_back(k::Isa::kAvx2);
  return out;
}

}  // namespace

TEST_CASE("scalar kernels compute textbook results") {
  const double x[] = {1, 2, 3};
  const double y[] = {4, 5, 6};
  CHECK(k::scalar::dot(x, y, 3) == 32.0);
  double z[] = {1, 1, 1};
  k::scalar::axpy(2.0, x, z, 3);
  CHECK(z[2] == 7.0);

  // [[1,2],[3,4]] * [[5],[6]]
  const double a[] = {1, 2, 3, 4};
  const double b[] = {5, 6};
  double c[] = {0, 0};
  k::scalar::gemm_nn(2, 1, 2, a, 2, b, 1, c, 1);
  CHECK(c[0] == 17.0);
  CHECK(c[1] == 39.0);
}

TEST_CASE("active table is always usable") {
  const auto& t = k::active();
  CHECK(k::available(t.isa));
  CHECK(k::table(k::Isa::kScalar).isa == k::Isa::kScalar);
}

TEST_CASE("SIMD dot and axpy match scalar across tail lengths") {
  std::mt19937_64 rng(11);
  for (k::Isa isa : simd_variants()) {
    const auto& t = k::table(isa);
    for (std::size_t n : {0u, 1u, 3u, 4u, 7u, 8u, 9u, 15u, 16u, 33u, 128u, 131u}) {
      auto x = random_vec(n, rng);
      auto y = random_vec(n, rng);
      CHECK(std::abs(t.dot(x.data(), y.data(), n) - k::scalar::dot(x.data(), y.data(), n)) <=
            1e-12 * static_cast<double>(n + 1));
      auto y1 = y, y2 = y;
      t.axpy(0.37, x.data(), y1.data(), n);
      k::scalar::axpy(0.37, x.data(), y2.data(), n);
      expect_close(y1, y2, 1.0);
    }
  }
}

TEST_CASE("SIMD gemm variants match scalar on ragged shapes") {
  std::mt19937_64 rng(5);
  for (k::Isa isa : simd_variants()) {
    const auto& t = k::table(isa);
    for (std::size_t m : {1u, 3u, 4u, 5u, 9u}) {
      for (std::size_t n : {1u, 7u, 8u, 12u, 17u}) {
        for (std::size_t kk : {1u, 2u, 6u, 13u}) {
          auto a = random_vec(m * kk, rng);
          auto b = random_vec(kk * n, rng);
          auto c0 = random_vec(m * n, rng);
          const double scale = static_cast<double>(kk + 1);

          auto c1 = c0, c2 = c0;
          t.gemm_nn(m, n, kk, a.data(), kk, b.data(), n, c1.data(), n);
          k::scalar::gemm_nn(m, n, kk, a.data(), kk, b.data(), n, c2.data(), n);
          expect_close(c1, c2, scale);

          // B stored as [n x k]
          auto bt = random_vec(n * kk, rng);
          c1 = c0;
          c2 = c0;
          t.gemm_nt(m, n, kk, a.data(), kk, bt.data(), kk, c1.data(), n);
          k::scalar::gemm_nt(m, n, kk, a.data(), kk, bt.data(), kk, c2.data(), n);
          expect_close(c1, c2, scale);

          // A stored as [k x m]
          auto at = random_vec(kk * m, rng);
          c1 = c0;
          c2 = c0;
          t.gemm_tn(m, n, kk, at.data(), m, b.data(), n, c1.data(), n);
          k::scalar::gemm_tn(m, n, kk, at.data(), m, b.data(), n, c2.data(), n);
          expect_close(c1, c2, scale);
        }
      }
    }
  }
}

TEST_CASE("requesting an unavailable ISA throws") {
  if (!k::available(k::Isa::kAvx2)) {
    CHECK_THROWS_AS(k::table(k::Isa::kAvx2), std::invalid_argument);
  }
}

// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <limits>
#include <random>
#include <vector>

#include "deer/errors.hpp"
#include "deer/smallmat.hpp"
#include "doctest.h"

using namespace deer;

namespace {

SmallMatrix<double> random_matrix(std::size_t n, double scale, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-scale, scale);
  SmallMatrix<double> m(n);
  for (auto& v : m.data()) v = u(rng);
  return m;
}

SmallMatrix<double> naive_matmul(const SmallMatrix<double>& a, const SmallMatrix<double>& b) {
  const std::size_t n = a.size();
  SmallMatrix<double> c(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0;
      for (std::size_t k = 0; k < n; ++k) s += a(i, k) * b(k, j);
      c(i, j) = s;
    }
  return c;
}

// sum_{k<terms} a^k / (k + offset)!, i.e. exp for offset 0 and phi_1 for offset 1.
SmallMatrix<double> taylor(const SmallMatrix<double>& a, std::size_t terms, std::size_t offset) {
  const std::size_t n = a.size();
  SmallMatrix<double> sum(n), term = SmallMatrix<double>::identity(n);
  double fact = 1;
  for (std::size_t k = 1; k <= offset; ++k) fact *= double(k);
  term *= 1.0 / fact;
  for (std::size_t k = 0; k < terms; ++k) {
    sum += term;
    term = naive_matmul(term, a);
    term *= 1.0 / double(k + 1 + offset);
  }
  return sum;
}

double max_diff(const SmallMatrix<double>& a, const SmallMatrix<double>& b) {
  double d = 0;
  for (std::size_t k = 0; k < a.data().size(); ++k) d = std::max(d, std::abs(a.data()[k] - b.data()[k]));
  return d;
}

}  // namespace

TEST_CASE("matmul and matvec agree with triple loops") {
  std::mt19937_64 rng(1);
  for (std::size_t n : {1u, 3u, 4u, 5u, 16u}) {
    const auto a = random_matrix(n, 1.0, rng), b = random_matrix(n, 1.0, rng);
    CHECK(max_diff(matmul(a, b), naive_matmul(a, b)) < 1e-13);
    std::vector<double> x(n);
    for (std::size_t k = 0; k < n; ++k) x[k] = double(k) - 1.5;
    const auto y = matvec(a, x);
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0;
      for (std::size_t k = 0; k < n; ++k) s += a(i, k) * x[k];
      CHECK(y[i] == doctest::Approx(s).epsilon(1e-13));
    }
  }
}

TEST_CASE("raw kernels with transposes and offsets") {
  std::mt19937_64 rng(2);
  for (std::size_t n : {2u, 4u, 7u}) {
    const auto a = random_matrix(n, 1.0, rng), b = random_matrix(n, 1.0, rng);
    SmallMatrix<double> out(n);
    kernels::gemm_transposed<double>(n, a.data().data(), b.data().data(), out.data().data());
    CHECK(max_diff(out, naive_matmul(transpose(a), b)) < 1e-13);
    std::vector<double> x(n, 0.5), c(n, 2.0), y(n);
    kernels::gemv_transposed<double>(n, a.data().data(), x.data(), c.data(), y.data());
    for (std::size_t j = 0; j < n; ++j) {
      double s = 2.0;
      for (std::size_t i = 0; i < n; ++i) s += a(i, j) * 0.5;
      CHECK(y[j] == doctest::Approx(s).epsilon(1e-13));
    }
  }
}

TEST_CASE("expm closed forms") {
  CHECK(max_diff(expm(SmallMatrix<double>(3)), SmallMatrix<double>::identity(3)) == 0.0);
  const std::vector<double> d{-1.0, 0.5, 3.0};
  const auto e = expm(SmallMatrix<double>::diagonal(d));
  for (std::size_t i = 0; i < 3; ++i) CHECK(e(i, i) == doctest::Approx(std::exp(d[i])).epsilon(1e-14));
  // rotation generator
  const double w = 2.5;
  const auto r = expm(SmallMatrix<double>(2, {0.0, w, -w, 0.0}));
  CHECK(r(0, 0) == doctest::Approx(std::cos(w)).epsilon(1e-13));
  CHECK(r(0, 1) == doctest::Approx(std::sin(w)).epsilon(1e-13));
  CHECK(r(1, 0) == doctest::Approx(-std::sin(w)).epsilon(1e-13));
  // nilpotent
  const auto nil = expm(SmallMatrix<double>(2, {0.0, 1.0, 0.0, 0.0}));
  CHECK(max_diff(nil, SmallMatrix<double>(2, {1.0, 1.0, 0.0, 1.0})) < 1e-15);
}

TEST_CASE("expm and phi1 match long Taylor series") {
  std::mt19937_64 rng(3);
  for (std::size_t n : {1u, 2u, 5u, 12u}) {
    for (double scale : {1e-3, 0.1, 0.4}) {
      const auto a = random_matrix(n, scale, rng);
      const auto e_ref = taylor(a, 30, 0);
      const auto p_ref = taylor(a, 30, 1);
      CHECK(max_diff(expm(a), e_ref) < 1e-13);
      CHECK(max_diff(phi1(a), p_ref) < 1e-13);
      const auto [e, p] = expm_phi1(a);
      CHECK(max_diff(e, e_ref) < 1e-13);
      CHECK(max_diff(p, p_ref) < 1e-13);
    }
  }
}

TEST_CASE("expm with scaling and squaring") {
  // Large-norm matrix: check exp(A) exp(-A) = I and the scalar case.
  std::mt19937_64 rng(4);
  const auto a = random_matrix(4, 3.0, rng);
  SmallMatrix<double> minus = a;
  minus *= -1.0;
  CHECK(max_diff(naive_matmul(expm(a), expm(minus)), SmallMatrix<double>::identity(4)) < 1e-10);
  CHECK(expm(SmallMatrix<double>(1, {20.0}))(0, 0) == doctest::Approx(std::exp(20.0)).epsilon(1e-13));
  CHECK(expm(SmallMatrix<double>(1, {-30.0}))(0, 0) == doctest::Approx(std::exp(-30.0)).epsilon(1e-12));
}

TEST_CASE("phi1 scalar and singular cases") {
  for (double a : {-40.0, -3.0, -1e-3, 1e-9, 0.7, 5.0}) {
    const double ref = a == 0 ? 1.0 : std::expm1(a) / a;
    CHECK(phi1(SmallMatrix<double>(1, {a}))(0, 0) == doctest::Approx(ref).epsilon(1e-13));
  }
  CHECK(max_diff(phi1(SmallMatrix<double>(2)), SmallMatrix<double>::identity(2)) == 0.0);
  // phi1(N) = I + N/2 for N^2 = 0
  const auto p = phi1(SmallMatrix<double>(2, {0.0, 3.0, 0.0, 0.0}));
  CHECK(max_diff(p, SmallMatrix<double>(2, {1.0, 1.5, 0.0, 1.0})) < 1e-15);
}

TEST_CASE("float expm") {
  const auto e = expm(SmallMatrix<float>(2, {0.0f, 1.0f, -1.0f, 0.0f}));
  CHECK(e(0, 1) == doctest::Approx(std::sin(1.0)).epsilon(1e-6));
}

TEST_CASE("solve with pivoting") {
  const SmallMatrix<double> a(3, {0.0, 2.0, 1.0, 1.0, 1.0, 0.0, 3.0, 0.0, 1.0});
  const std::vector<double> x_true{1.0, -2.0, 0.5};
  const auto b = matvec(a, x_true);
  const auto x = solve(a, std::span<const double>(b));
  for (std::size_t i = 0; i < 3; ++i) CHECK(x[i] == doctest::Approx(x_true[i]).epsilon(1e-14));
  const auto inv = solve(a, SmallMatrix<double>::identity(3));
  CHECK(max_diff(naive_matmul(a, inv), SmallMatrix<double>::identity(3)) < 1e-14);
}

TEST_CASE("error paths") {
  CHECK_THROWS_AS(solve(SmallMatrix<double>(2, {1.0, 2.0, 2.0, 4.0}), SmallMatrix<double>::identity(2)),
                  SingularMatrixError);
  CHECK_THROWS_AS(expm(SmallMatrix<double>(1, {std::numeric_limits<double>::infinity()})), NumericDomainError);
  CHECK_THROWS_AS(phi1(SmallMatrix<double>(1, {std::nan("")})), NumericDomainError);
  SmallMatrix<double> a(2);
  CHECK_THROWS_AS(a += SmallMatrix<double>(3), ContractError);
  CHECK_THROWS_AS(SmallMatrix<double>(2, {1.0, 2.0}), ContractError);
}

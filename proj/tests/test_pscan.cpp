// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <random>
#include <vector>

#include "deer/errors.hpp"
#include "deer/pscan.hpp"
#include "deer/thread_pool.hpp"
#include "doctest.h"

using namespace deer;

namespace {

struct System {
  std::vector<double> y0;
  MatrixSequence<double> A;
  Sequence<double> b;
};

System random_system(std::size_t L, std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  // Entries scaled so products of A stay bounded.
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  System s{std::vector<double>(n), MatrixSequence<double>(L, n), Sequence<double>(L, n)};
  const double scale = 0.9 / double(n);
  for (auto& v : s.y0) v = u(rng);
  for (auto& v : s.A.values()) v = scale * u(rng);
  for (auto& v : s.b.values()) v = u(rng);
  return s;
}

// y_i = A_i y_{i-1} + b_i, written out directly.
Sequence<double> loop_oracle(const System& s) {
  const std::size_t L = s.b.length(), n = s.y0.size();
  Sequence<double> out(L, n);
  std::vector<double> prev = s.y0;
  for (std::size_t i = 0; i < L; ++i) {
    const double* A = s.A.matrix(i);
    for (std::size_t r = 0; r < n; ++r) {
      double acc = s.b(i, r);
      for (std::size_t c = 0; c < n; ++c) acc += A[r * n + c] * prev[c];
      out(i, r) = acc;
    }
    for (std::size_t r = 0; r < n; ++r) prev[r] = out(i, r);
  }
  return out;
}

// w_{L-1} = g_{L-1}, w_i = g_i + A_{i+1}^T w_{i+1}.
Sequence<double> reverse_oracle(const MatrixSequence<double>& A, const Sequence<double>& g) {
  const std::size_t L = g.length(), n = g.dim();
  Sequence<double> w(L, n);
  for (std::size_t k = 0; k < n; ++k) w(L - 1, k) = g(L - 1, k);
  for (std::size_t i = L - 1; i-- > 0;) {
    const double* M = A.matrix(i + 1);
    for (std::size_t c = 0; c < n; ++c) {
      double acc = g(i, c);
      for (std::size_t r = 0; r < n; ++r) acc += M[r * n + c] * w(i + 1, r);
      w(i, c) = acc;
    }
  }
  return w;
}

double rel_error(const Sequence<double>& a, const Sequence<double>& b) {
  double num = 0, den = 0;
  for (std::size_t k = 0; k < a.values().size(); ++k) {
    num = std::max(num, std::abs(a.values()[k] - b.values()[k]));
    den = std::max(den, std::abs(b.values()[k]));
  }
  return num / std::max(den, 1e-300);
}

}  // namespace

TEST_CASE("combine composes earlier then later") {
  const ScanElement<double> a{SmallMatrix<double>(1, {2.0}), {1.0}};
  const ScanElement<double> b{SmallMatrix<double>(1, {3.0}), {5.0}};
  const auto c = combine(a, b);
  CHECK(c.M(0, 0) == 6.0);
  CHECK(c.v[0] == 8.0);  // 3 * 1 + 5
  const auto id = ScanElement<double>::identity(1);
  CHECK(combine(id, a).v[0] == 1.0);
  CHECK(combine(a, id).M(0, 0) == 2.0);
  CHECK_THROWS_AS(combine(a, ScanElement<double>::identity(2)), ContractError);
}

TEST_CASE("scalar recurrence by hand") {
  // y_i = 0.5 y_{i-1} + 1 from y0 = 2: 2, 2, 2 ; A = 2, b = -1 from 1: 1, 1
  MatrixSequence<double> A(3, 1, 0.5);
  Sequence<double> b(3, 1, 1.0), out(3, 1);
  const std::vector<double> y0{2.0};
  scan_recurrence<double>(y0, A, b, out);
  for (std::size_t i = 0; i < 3; ++i) CHECK(out(i, 0) == 2.0);
  MatrixSequence<double> A2(3, 1, 3.0);
  Sequence<double> b2(3, 1, 1.0);
  scan_recurrence<double>(std::vector<double>{0.0}, A2, b2, out);
  CHECK(out(0, 0) == 1.0);
  CHECK(out(1, 0) == 4.0);
  CHECK(out(2, 0) == 13.0);
}

TEST_CASE("scan_inclusive matches the sequential element scan") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  std::vector<ScanElement<double>> elems(37, ScanElement<double>::identity(3));
  for (auto& e : elems) {
    for (auto& v : e.M.data()) v = u(rng);
    for (auto& v : e.v) v = u(rng);
  }
  ScanElement<double> init = ScanElement<double>::identity(3);
  init.v = {1.0, -1.0, 0.25};
  ScanOptions opt;
  opt.chunk_size = 4;
  const auto par = scan_inclusive<double>(init, elems, opt);
  const auto seq = sequential_scan<double>(init, elems);
  REQUIRE(par.size() == seq.size());
  for (std::size_t i = 0; i < par.size(); ++i)
    for (std::size_t k = 0; k < 3; ++k) CHECK(par[i][k] == doctest::Approx(seq[i][k]).epsilon(1e-12));
  CHECK(scan_inclusive<double>(init, std::span<const ScanElement<double>>{}).empty());
}

TEST_CASE("parallel recurrence matches the loop oracle") {
  ThreadPool pool(4);
  for (std::size_t n : {1u, 2u, 5u}) {
    for (std::size_t L : {1u, 2u, 7u, 256u, 257u, 1000u}) {
      for (std::size_t chunk : {1u, 3u, 64u, 256u}) {
        const System s = random_system(L, n, 100 * n + L + chunk);
        Sequence<double> out(L, n);
        scan_recurrence<double>(s.y0, s.A, s.b, out, {chunk, &pool});
        CHECK(rel_error(out, loop_oracle(s)) < 1e-12);
        Sequence<double> seq(L, n);
        sequential_recurrence<double>(s.y0, s.A, s.b, seq);
        CHECK(rel_error(seq, loop_oracle(s)) < 1e-14);
      }
    }
  }
}

TEST_CASE("bitwise identical across thread counts") {
  const System s = random_system(5000, 3, 9);
  Sequence<double> reference(5000, 3);
  {
    ThreadPool one(1);
    scan_recurrence<double>(s.y0, s.A, s.b, reference, {128, &one});
  }
  for (std::size_t threads : {2u, 3u, 8u}) {
    ThreadPool pool(threads);
    Sequence<double> out(5000, 3);
    scan_recurrence<double>(s.y0, s.A, s.b, out, {128, &pool});
    CHECK(out == reference);
  }
}

TEST_CASE("reverse transposed scan") {
  SUBCASE("hand example") {
    MatrixSequence<double> A(3, 1, 0.5);
    Sequence<double> g(3, 1, std::vector<double>{0.0, 0.0, 1.0}), w(3, 1);
    scan_reverse_transposed<double>(A, g, w);
    CHECK(w(0, 0) == 0.25);
    CHECK(w(1, 0) == 0.5);
    CHECK(w(2, 0) == 1.0);
  }
  SUBCASE("identity transitions accumulate") {
    MatrixSequence<double> A(4, 2);
    for (std::size_t i = 0; i < 4; ++i) A.set(i, SmallMatrix<double>::identity(2));
    Sequence<double> g(4, 2), w(4, 2);
    g(3, 0) = 2.0;
    g(3, 1) = -1.0;
    scan_reverse_transposed<double>(A, g, w, {1, nullptr});
    for (std::size_t i = 0; i < 4; ++i) {
      CHECK(w(i, 0) == 2.0);
      CHECK(w(i, 1) == -1.0);
    }
  }
  SUBCASE("random systems") {
    ThreadPool pool(3);
    for (std::size_t L : {1u, 5u, 300u, 1025u}) {
      const System s = random_system(L, 3, L);
      Sequence<double> w(L, 3), seq(L, 3);
      scan_reverse_transposed<double>(s.A, s.b, w, {16, &pool});
      const auto ref = reverse_oracle(s.A, s.b);
      CHECK(rel_error(w, ref) < 1e-12);
      sequential_reverse_transposed<double>(s.A, s.b, seq);
      CHECK(rel_error(seq, ref) < 1e-14);
    }
  }
}

TEST_CASE("pass counter counts one per scan") {
  const System s = random_system(100, 2, 3);
  Sequence<double> out(100, 2);
  const auto before = scan_pass_count();
  scan_recurrence<double>(s.y0, s.A, s.b, out);
  CHECK(scan_pass_count() == before + 1);
  scan_reverse_transposed<double>(s.A, s.b, out);
  CHECK(scan_pass_count() == before + 2);
}

TEST_CASE("sign flip hook corrupts the parallel scan only") {
  const System s = random_system(600, 2, 4);
  Sequence<double> good(600, 2), bad(600, 2), seq(600, 2);
  scan_recurrence<double>(s.y0, s.A, s.b, good, {32, nullptr});
  testing::set_combine_sign_flip(true);
  scan_recurrence<double>(s.y0, s.A, s.b, bad, {32, nullptr});
  sequential_recurrence<double>(s.y0, s.A, s.b, seq);
  testing::set_combine_sign_flip(false);
  CHECK(rel_error(bad, good) > 1e-3);
  CHECK(rel_error(seq, good) < 1e-12);
}

TEST_CASE("shape errors") {
  MatrixSequence<double> A(3, 2);
  Sequence<double> b(2, 2), out(3, 2);
  CHECK_THROWS_AS(scan_recurrence<double>(std::vector<double>(2), A, b, out), ContractError);
  Sequence<double> b3(3, 2);
  CHECK_THROWS_AS(scan_recurrence<double>(std::vector<double>(1), A, b3, out), ContractError);
  CHECK_THROWS_AS(scan_recurrence<double>(std::vector<double>(2), A, b3, out, {0, nullptr}), ContractError);
}

TEST_CASE("float scan") {
  MatrixSequence<float> A(1000, 1, 0.999f);
  Sequence<float> b(1000, 1, 0.001f), out(1000, 1);
  scan_recurrence<float>(std::vector<float>{0.0f}, A, b, out, {50, nullptr});
  CHECK(out(999, 0) == doctest::Approx(1.0 - std::pow(0.999, 1000)).epsilon(1e-4));
}

// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <vector>

#include "deer/errors.hpp"
#include "deer/gru.hpp"
#include "deer/rnn.hpp"
#include "deer/thread_pool.hpp"
#include "doctest.h"

using namespace deer;

namespace {

// y_i = a * y_i-1 + c * x_i channel-wise, with the analytic Jacobian.
DynamicsSpec<double> diagonal_linear_cell(std::vector<double> a, double c) {
  const std::size_t n = a.size();
  DynamicsSpec<double> d;
  d.state_dim = n;
  d.input_dim = 1;
  d.eval = [a, c, n](ShiftedStates<double> s, std::span<const double> x, std::span<double> out) {
    for (std::size_t i = 0; i < n; ++i) out[i] = a[i] * s[0][i] + c * x[0];
  };
  d.jacobian = [a, n](ShiftedStates<double>, std::span<const double>, std::size_t, std::span<double> out) {
    std::fill(out.begin(), out.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i) out[i * n + i] = a[i];
  };
  return d;
}

DynamicsSpec<double> copy_cell() {
  DynamicsSpec<double> d;
  d.state_dim = 1;
  d.input_dim = 1;
  d.eval = [](ShiftedStates<double>, std::span<const double> x, std::span<double> out) { out[0] = x[0]; };
  return d;
}

Sequence<double> counting_inputs(std::size_t L) {
  Sequence<double> x(L, 1);
  for (std::size_t i = 0; i < L; ++i) x(i, 0) = double(i + 1);
  return x;
}

}  // namespace

TEST_CASE("copy cell reproduces the inputs") {
  const auto x = counting_inputs(40);
  const auto r = deer_eval_rnn(copy_cell(), x, std::vector<double>{7.0}, DeerConfig<double>{});
  CHECK(r.report.converged);
  CHECK(r.states == x);
}

TEST_CASE("linear cell matches the loop") {
  const auto cell = diagonal_linear_cell({0.5, -0.8}, 1.0);
  const auto x = counting_inputs(30);
  const std::vector<double> y0{1.0, 2.0};
  const auto r = deer_eval_rnn(cell, x, y0, DeerConfig<double>{});
  std::vector<double> y = y0;
  for (std::size_t i = 0; i < 30; ++i) {
    y[0] = 0.5 * y[0] + x(i, 0);
    y[1] = -0.8 * y[1] + x(i, 0);
    CHECK(std::abs(r.states(i, 0) - y[0]) < 1e-12 * std::max(1.0, std::abs(y[0])));
    CHECK(std::abs(r.states(i, 1) - y[1]) < 1e-12 * std::max(1.0, std::abs(y[1])));
  }
  CHECK(r.report.residual_history.size() == 2);
}

TEST_CASE("gru cell matches the sequential evaluation") {
  for (std::size_t n : {2u, 8u}) {
    const auto p = GruParams<double>::random(n, n, 3 + n);
    const auto cell = gru_dynamics(p);
    const auto x = gaussian_inputs<double>(1500, n, 11);
    const std::vector<double> y0(n, 0.0);
    const auto r = deer_eval_rnn(cell, x, y0, DeerConfig<double>{});
    REQUIRE(r.report.converged);
    const auto seq = sequential_eval_rnn(cell, x, y0);
    CHECK(residual(r.states, seq) <= 1e-9);
  }
}

TEST_CASE("gru cell in float") {
  const auto p = GruParams<float>::random(2, 2, 1);
  const auto cell = gru_dynamics(p);
  const auto x = gaussian_inputs<float>(500, 2, 2);
  const std::vector<float> y0(2, 0.0f);
  const auto r = deer_eval_rnn(cell, x, y0, DeerConfig<float>{});
  REQUIRE(r.report.converged);
  CHECK(residual(r.states, sequential_eval_rnn(cell, x, y0)) <= 5e-6);
}

TEST_CASE("sequential evaluation validates shapes") {
  const auto cell = diagonal_linear_cell({0.5}, 1.0);
  CHECK_THROWS_AS(sequential_eval_rnn(cell, Sequence<double>(4, 2), std::vector<double>{0.0}), ContractError);
  CHECK_THROWS_AS(sequential_eval_rnn(cell, Sequence<double>(4, 1), std::vector<double>{0.0, 1.0}), ContractError);
}

TEST_CASE("linearize_rnn gives A = J and b = f - J y") {
  const auto cell = diagonal_linear_cell({0.5}, 2.0);
  const auto x = counting_inputs(3);
  Sequence<double> states(3, 1, std::vector<double>{1.0, 1.0, 1.0});
  const auto sys = linearize_rnn(cell, x, std::vector<double>{4.0}, states);
  REQUIRE(sys.length() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(sys.A.matrix(i)[0] == 0.5);
    CHECK(sys.b(i, 0) == doctest::Approx(2.0 * x(i, 0)));
  }
  CHECK(sys.y0 == std::vector<double>{4.0});
}

TEST_CASE("single head with stride one equals the plain solve") {
  const auto p = GruParams<double>::random(4, 4, 9);
  const auto cell = gru_dynamics(p);
  const auto x = gaussian_inputs<double>(300, 4, 10);
  const std::vector<double> y0{0.1, -0.1, 0.2, 0.0};
  HeadLayout layout{{{0, 4, 1}}};
  const auto s = eval_strided<double>({cell}, layout, x, y0, DeerConfig<double>{});
  const auto r = deer_eval_rnn(cell, x, y0, DeerConfig<double>{});
  CHECK(s.converged());
  CHECK(s.lane_reports.size() == 1);
  CHECK(s.states == r.states);
}

TEST_CASE("stride two interleaves independent lanes") {
  // y_i = y_i-2 + x_i on two lanes
  const auto cell = diagonal_linear_cell({1.0}, 1.0);
  const auto x = counting_inputs(6);
  HeadLayout layout{{{0, 1, 2}}};
  const auto s = eval_strided<double>({cell}, layout, x, std::vector<double>{0.0}, DeerConfig<double>{});
  CHECK(s.lane_reports.size() == 2);
  const std::vector<double> expected{1, 2, 4, 6, 9, 12};
  for (std::size_t i = 0; i < 6; ++i) CHECK(s.states(i, 0) == doctest::Approx(expected[i]));
}

TEST_CASE("two heads match a hand-written strided loop") {
  const auto c0 = diagonal_linear_cell({0.9, 0.3}, 1.0);
  const auto c1 = diagonal_linear_cell({-0.5, 0.7}, 0.5);
  HeadLayout layout{{{0, 2, 1}, {2, 4, 2}}};
  const std::size_t L = 101;
  const auto x = gaussian_inputs<double>(L, 1, 5);
  const std::vector<double> y0{1, 2, 3, 4};
  DeerConfig<double> config;
  ThreadPool pool(3);
  config.scan.pool = &pool;
  const auto s = eval_strided<double>({c0, c1}, layout, x, y0, config);
  CHECK(s.converged());
  CHECK(s.lane_reports.size() == 3);
  const double a[4] = {0.9, 0.3, -0.5, 0.7}, c[4] = {1.0, 1.0, 0.5, 0.5};
  const std::size_t stride[4] = {1, 1, 2, 2};
  Sequence<double> oracle(L, 4);
  for (std::size_t i = 0; i < L; ++i)
    for (std::size_t k = 0; k < 4; ++k) {
      const double prev = i >= stride[k] ? oracle(i - stride[k], k) : y0[k];
      oracle(i, k) = a[k] * prev + c[k] * x(i, 0);
    }
  for (std::size_t i = 0; i < L; ++i)
    for (std::size_t k = 0; k < 4; ++k) CHECK(std::abs(s.states(i, k) - oracle(i, k)) < 1e-12);
}

TEST_CASE("strided solve honours a user guess") {
  const auto cell = diagonal_linear_cell({0.5}, 1.0);
  const auto x = counting_inputs(9);
  HeadLayout layout{{{0, 1, 3}}};
  DeerConfig<double> config;
  config.init_guess = InitGuess::user;
  config.initial_sequence = Sequence<double>(9, 1, std::vector<double>(9, 3.0));
  const auto s = eval_strided<double>({cell}, layout, x, std::vector<double>{0.0}, config);
  CHECK(s.converged());
  CHECK(s.states(8, 0) == doctest::Approx(0.5 * (0.5 * 3 + 6) + 9));
  config.initial_sequence = Sequence<double>(8, 1);
  CHECK_THROWS_AS(eval_strided<double>({cell}, layout, x, std::vector<double>{0.0}, config), ContractError);
}

TEST_CASE("head layouts") {
  const auto e = HeadLayout::exponential(12, 4, 2);
  REQUIRE(e.heads.size() == 4);
  CHECK(e.heads[0].stride == 1);
  CHECK(e.heads[1].stride == 2);
  CHECK(e.heads[2].stride == 1);
  CHECK(e.heads[3].channel_begin == 9);
  CHECK(e.heads[3].width() == 3);
  CHECK_THROWS_AS(HeadLayout::exponential(10, 4, 2), ContractError);
  CHECK_THROWS_AS(HeadLayout::exponential(32, 1, 1), ContractError);  // width 32 > 16
  CHECK_THROWS_AS((HeadLayout{{{0, 2, 1}, {1, 4, 1}}}).validate(4), ContractError);  // overlap
  CHECK_THROWS_AS((HeadLayout{{{0, 2, 1}}}).validate(4), ContractError);              // gap
  CHECK_THROWS_AS((HeadLayout{{{0, 4, 0}}}).validate(4), ContractError);              // zero stride
  const auto cell = diagonal_linear_cell({0.5}, 1.0);
  CHECK_THROWS_AS(eval_strided<double>({cell, cell}, HeadLayout{{{0, 2, 1}}}, counting_inputs(3),
                                       std::vector<double>{0.0, 0.0}, DeerConfig<double>{}),
                  ContractError);
}

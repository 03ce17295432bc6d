// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <random>
#include <vector>

#include "deer/errors.hpp"
#include "deer/gru.hpp"
#include "deer/pscan.hpp"
#include "deer/rnn.hpp"
#include "deer/sensitivity.hpp"
#include "deer/thread_pool.hpp"
#include "doctest.h"

using namespace deer;

namespace {

LinearRecurrenceSystem<double> scalar_system(std::vector<double> a, std::vector<double> b, double y0) {
  LinearRecurrenceSystem<double> s;
  s.A = MatrixSequence<double>(a.size(), 1);
  const std::size_t L = b.size();
  s.b = Sequence<double>(L, 1, std::move(b));
  for (std::size_t i = 0; i < a.size(); ++i) s.A.values()[i] = a[i];
  s.y0 = {y0};
  return s;
}

LinearRecurrenceSystem<double> random_system(std::size_t L, std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  LinearRecurrenceSystem<double> s;
  s.A = MatrixSequence<double>(L, n);
  s.b = Sequence<double>(L, n);
  for (auto& v : s.A.values()) v = u(rng) / std::sqrt(double(n));
  for (auto& v : s.b.values()) v = u(rng);
  s.y0.resize(n);
  for (auto& v : s.y0) v = u(rng);
  return s;
}

Sequence<double> random_sequence(std::size_t L, std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  Sequence<double> s(L, n);
  for (auto& v : s.values()) v = g(rng);
  return s;
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double relative_error(double got, double want) { return std::abs(got - want) / std::max(std::abs(want), 1e-12); }

// Loss = sum_i <g_i, y_i> evaluated with the plain loop.
double loss(const GruParams<double>& p, const Sequence<double>& x, const std::vector<double>& y0,
            const Sequence<double>& g) {
  const auto y = sequential_eval_rnn(gru_dynamics(p), x, y0);
  return dot(y.values(), g.values());
}

GruParams<double> perturbed(const GruParams<double>& p, const std::vector<double>& dir, double h) {
  auto theta = p.flatten();
  for (std::size_t k = 0; k < theta.size(); ++k) theta[k] += h * dir[k];
  return GruParams<double>::unflatten(p.input_dim, p.state_dim, theta);
}

struct GruFixture {
  std::size_t n = 4, L = 200;
  GruParams<double> p = GruParams<double>::random(4, 4, 17);
  Sequence<double> x = gaussian_inputs<double>(200, 4, 18);
  std::vector<double> y0{0.1, -0.2, 0.05, 0.3};
  Sequence<double> g = random_sequence(200, 4, 19);
  DeerResult<double> forward;

  GruFixture() {
    DeerConfig<double> c;
    c.tolerance = 1e-12;
    forward = deer_eval_rnn(gru_dynamics(p), x, y0, c);
    REQUIRE(forward.report.converged);
  }
};

}  // namespace

TEST_CASE("zero forcing gives zero sensitivity") {
  const auto s = random_system(50, 3, 1);
  const auto dy = forward_sensitivity(s, Sequence<double>(50, 3));
  for (double v : dy.values()) CHECK(v == 0.0);
}

TEST_CASE("scalar recurrence by hand") {
  const auto s = scalar_system({0.9, 0.9, 0.9}, {0, 0, 0}, 0.0);
  const auto dy = forward_sensitivity(s, Sequence<double>(3, 1, 1.0));
  CHECK(dy(0, 0) == doctest::Approx(1.0));
  CHECK(dy(1, 0) == doctest::Approx(1.9));
  CHECK(dy(2, 0) == doctest::Approx(2.71));

  const auto h = scalar_system({0.5, 0.5, 0.5}, {0, 0, 0}, 0.0);
  const auto r = backward_gradient(h, Sequence<double>(3, 1, std::vector<double>{0, 0, 1}));
  CHECK(r.adjoint(0, 0) == doctest::Approx(0.25));
  CHECK(r.adjoint(1, 0) == doctest::Approx(0.5));
  CHECK(r.adjoint(2, 0) == doctest::Approx(1.0));
  CHECK(r.grad_y0[0] == doctest::Approx(0.125));

  const auto id = scalar_system({1, 1, 1}, {0, 0, 0}, 0.0);
  const auto acc = backward_gradient(id, Sequence<double>(3, 1, std::vector<double>{1, 2, 3}));
  CHECK(acc.adjoint(0, 0) == doctest::Approx(6));
  CHECK(acc.adjoint(1, 0) == doctest::Approx(5));
  CHECK(acc.adjoint(2, 0) == doctest::Approx(3));
}

TEST_CASE("backward is the transpose of forward") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const std::size_t L = 300 + 37 * seed, n = 1 + seed;
    const auto s = random_system(L, n, seed);
    const auto db = random_sequence(L, n, 100 + seed);
    const auto g = random_sequence(L, n, 200 + seed);
    const auto dy = forward_sensitivity(s, db);
    const auto r = backward_gradient(s, g);
    const double lhs = dot(g.values(), dy.values());
    const double rhs = dot(r.adjoint.values(), db.values());
    CHECK(std::abs(lhs - rhs) <= 1e-11 * std::max(1.0, std::abs(lhs)));
  }
}

TEST_CASE("grad_y0 matches a loop through y0") {
  const auto s = random_system(40, 3, 7);
  const auto g = random_sequence(40, 3, 8);
  const auto r = backward_gradient(s, g);
  // loss is linear in y0; probe each coordinate exactly
  for (std::size_t k = 0; k < 3; ++k) {
    auto sp = s;
    sp.y0[k] += 1.0;
    Sequence<double> y0(40, 3), y1(40, 3);
    sequential_recurrence<double>(s.y0, s.A, s.b, y0);
    sequential_recurrence<double>(sp.y0, sp.A, sp.b, y1);
    CHECK(r.grad_y0[k] == doctest::Approx(dot(g.values(), y1.values()) - dot(g.values(), y0.values())).epsilon(1e-11));
  }
}

TEST_CASE("each direction costs one scan pass") {
  const auto s = random_system(1000, 2, 3);
  const auto g = random_sequence(1000, 2, 4);
  auto before = scan_pass_count();
  (void)backward_gradient(s, g);
  CHECK(scan_pass_count() - before == 1);
  before = scan_pass_count();
  (void)forward_sensitivity(s, g);
  CHECK(scan_pass_count() - before == 1);
}

TEST_CASE("shape errors") {
  const auto s = random_system(10, 2, 3);
  CHECK_THROWS_AS(forward_sensitivity(s, Sequence<double>(9, 2)), ContractError);
  CHECK_THROWS_AS(backward_gradient(s, Sequence<double>(10, 3)), ContractError);
}

TEST_CASE("gru forward sensitivity matches finite differences") {
  GruFixture f;
  const std::size_t P = GruParams<double>::parameter_count(f.n, f.n);
  std::mt19937_64 rng(5);
  std::normal_distribution<double> gauss;
  std::vector<double> dir(P);
  for (auto& v : dir) v = gauss(rng);
  const auto forcing = gru_parameter_forcing(f.p, f.x, f.y0, f.forward.states, dir);
  const auto dy = forward_sensitivity(*f.forward.system, forcing);
  const double h = 1e-5;
  const auto cell_p = gru_dynamics(perturbed(f.p, dir, h));
  const auto cell_m = gru_dynamics(perturbed(f.p, dir, -h));
  const auto yp = sequential_eval_rnn(cell_p, f.x, f.y0);
  const auto ym = sequential_eval_rnn(cell_m, f.x, f.y0);
  double max_err = 0, scale = 0;
  for (std::size_t k = 0; k < dy.values().size(); ++k) {
    const double fd = (yp.values()[k] - ym.values()[k]) / (2 * h);
    max_err = std::max(max_err, std::abs(dy.values()[k] - fd));
    scale = std::max(scale, std::abs(fd));
  }
  CHECK(max_err <= 1e-6 * scale);
}

TEST_CASE("gru parameter gradient matches finite differences") {
  GruFixture f;
  const auto cell = gru_dynamics(f.p);
  for (auto source : {JacobianSource::reuse, JacobianSource::recompute}) {
    const auto system = rnn_gradient_system(f.forward, cell, f.x, f.y0, source);
    const auto adj = backward_gradient(system, f.g);
    const auto grad = gru_parameter_gradient(f.p, f.x, f.y0, f.forward.states, adj.adjoint);
    const std::size_t P = grad.size();
    REQUIRE(P == GruParams<double>::parameter_count(4, 4));
    const double h = 1e-5;
    // a spread of individual coordinates across all nine blocks
    for (std::size_t k = 0; k < P; k += 7) {
      std::vector<double> e(P, 0.0);
      e[k] = 1.0;
      const double fd = (loss(perturbed(f.p, e, h), f.x, f.y0, f.g) - loss(perturbed(f.p, e, -h), f.x, f.y0, f.g)) /
                        (2 * h);
      CHECK(relative_error(grad[k], fd) <= 1e-5);
    }
  }
}

TEST_CASE("gru input and initial-state gradients match finite differences") {
  GruFixture f;
  const auto adj = backward_gradient(*f.forward.system, f.g);
  const auto gx = gru_input_gradient(f.p, f.x, f.y0, f.forward.states, adj.adjoint);
  const double h = 1e-5;
  for (std::size_t i : {0u, 57u, 199u}) {
    for (std::size_t k = 0; k < 4; ++k) {
      auto xp = f.x, xm = f.x;
      xp(i, k) += h;
      xm(i, k) -= h;
      const double fd = (loss(f.p, xp, f.y0, f.g) - loss(f.p, xm, f.y0, f.g)) / (2 * h);
      CHECK(relative_error(gx(i, k), fd) <= 1e-5);
    }
  }
  for (std::size_t k = 0; k < 4; ++k) {
    auto yp = f.y0, ym = f.y0;
    yp[k] += h;
    ym[k] -= h;
    const double fd = (loss(f.p, f.x, yp, f.g) - loss(f.p, f.x, ym, f.g)) / (2 * h);
    CHECK(relative_error(adj.grad_y0[k], fd) <= 1e-5);
  }
}

TEST_CASE("parameter gradient does not depend on the worker count") {
  GruFixture f;
  const auto adj = backward_gradient(*f.forward.system, f.g);
  std::vector<double> reference;
  for (std::size_t threads : {1u, 2u, 5u}) {
    ThreadPool pool(threads);
    ScanOptions o;
    o.pool = &pool;
    o.chunk_size = 16;
    const auto grad = gru_parameter_gradient(f.p, f.x, f.y0, f.forward.states, adj.adjoint, o);
    if (reference.empty())
      reference = grad;
    else
      CHECK(grad == reference);
  }
}

TEST_CASE("accumulation sums every step") {
  Sequence<double> adj(10, 1, 1.0);
  const auto total = accumulate_parameter_gradient<double>(
      2, adj, [](std::size_t i, std::span<const double> w, std::span<double> g) {
        g[0] += w[0] * double(i);
        g[1] += 1.0;
      });
  CHECK(total[0] == 45.0);
  CHECK(total[1] == 10.0);
}

TEST_CASE("ode sensitivities on a forced linear system") {
  // dy/dt = M y + (u, 0): the discrete solution is affine in u
  OdeProblem<double> p;
  p.dynamics.state_dim = 2;
  p.dynamics.input_dim = 1;
  p.dynamics.eval = [](ShiftedStates<double> s, std::span<const double> x, std::span<double> out) {
    out[0] = -0.2 * s[0][0] + 1.1 * s[0][1] + x[0];
    out[1] = -1.1 * s[0][0] - 0.2 * s[0][1];
  };
  p.dynamics.jacobian = [](ShiftedStates<double>, std::span<const double>, std::size_t, std::span<double> out) {
    out[0] = -0.2;
    out[1] = 1.1;
    out[2] = -1.1;
    out[3] = -0.2;
  };
  const std::size_t L = 120;
  p.y0 = {0.5, 0.0};
  p.grid = TimeGrid::uniform(0.0, 4.0, L);
  p.inputs = Sequence<double>(L + 1, 1);
  for (std::size_t i = 0; i <= L; ++i) p.inputs(i, 0) = std::sin(p.grid.time(i));

  for (auto mode : {Interpolation::midpoint, Interpolation::left_value}) {
    DeerConfig<double> c;
    c.tolerance = 1e-13;
    const auto base = deer_solve_ode(p, c, mode);
    const auto lin = linearize_ode(p, base.states, mode);
    const auto du = random_sequence(L + 1, 1, 31);
    Sequence<double> df(L + 1, 2);
    for (std::size_t i = 0; i <= L; ++i) df(i, 0) = du(i, 0);
    const auto dy = forward_sensitivity(lin, df);
    REQUIRE(dy.length() == L);

    auto q = p;
    for (std::size_t i = 0; i <= L; ++i) q.inputs(i, 0) += du(i, 0);
    const auto shifted = deer_solve_ode(q, c, mode);
    for (std::size_t i = 0; i < L; ++i)
      for (std::size_t k = 0; k < 2; ++k)
        CHECK(std::abs(dy(i, k) - (shifted.states(i + 1, k) - base.states(i + 1, k))) < 1e-10);

    const auto g = random_sequence(L, 2, 32);
    const auto r = backward_gradient(lin, g);
    REQUIRE(r.adjoint.length() == L + 1);
    CHECK(dot(r.adjoint.values(), df.values()) == doctest::Approx(dot(g.values(), dy.values())).epsilon(1e-11));

    auto q0 = p;
    q0.y0[1] += 1.0;
    const auto moved = deer_solve_ode(q0, c, mode);
    double change = 0;
    for (std::size_t i = 0; i < L; ++i)
      for (std::size_t k = 0; k < 2; ++k) change += g(i, k) * (moved.states(i + 1, k) - base.states(i + 1, k));
    CHECK(r.grad_y0[1] == doctest::Approx(change).epsilon(1e-9));
  }
}

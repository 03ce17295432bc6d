// SPDX-License-Identifier: Apache-2.0
#include "deer/ode.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "deer/errors.hpp"
#include "deer/smallmat.hpp"
#include "deer/thread_pool.hpp"

namespace deer {

namespace {

constexpr std::size_t kStepBlock = 128;

template <class T>
void eval_f(const DynamicsSpec<T>& dyn, std::span<const T> y, std::span<const T> x, std::span<T> out) {
  const std::span<const T> views[1] = {y};
  dyn.eval(views, x, out);
}

// Per-step G and z after interpolation.
template <class T>
void interpolate_step(const MatrixSequence<T>& G, const Sequence<T>& z, std::size_t i, Interpolation mode,
                      SmallMatrix<T>& g_step, std::vector<T>& z_step) {
  const std::size_t n = z.dim();
  const T* g0 = G.matrix(i);
  if (mode == Interpolation::left_value) {
    std::copy_n(g0, n * n, g_step.data().data());
    std::copy(z.row(i).begin(), z.row(i).end(), z_step.begin());
    return;
  }
  const T* g1 = G.matrix(i + 1);
  for (std::size_t k = 0; k < n * n; ++k) g_step.data()[k] = T(0.5) * (g0[k] + g1[k]);
  for (std::size_t k = 0; k < n; ++k) z_step[k] = T(0.5) * (z(i, k) + z(i + 1, k));
}

// A = exp(-G D), W = D phi_1(-G D).
template <class T>
void exponential_step(const SmallMatrix<T>& g_step, double delta, SmallMatrix<T>& A, SmallMatrix<T>& W) {
  SmallMatrix<T> arg = g_step;
  arg *= T(-delta);
  auto [e, phi] = expm_phi1(arg);
  A = std::move(e);
  W = std::move(phi);
  W *= T(delta);
}

template <class T>
void linearize_point(const DynamicsSpec<T>& dyn, std::span<const T> y, std::span<const T> x, T* G, std::span<T> z,
                     std::vector<T>& jac) {
  const std::size_t n = dyn.state_dim;
  const std::span<const T> views[1] = {y};
  dyn.linearize(views, x, z, jac);
  for (std::size_t r = 0; r < n; ++r) {
    T acc = 0;
    for (std::size_t c = 0; c < n; ++c) {
      acc += jac[r * n + c] * y[c];
      G[r * n + c] = -jac[r * n + c];
    }
    z[r] -= acc;
  }
}

}  // namespace

std::string_view to_string(Interpolation mode) {
  return mode == Interpolation::midpoint ? "midpoint" : "left";
}

template <class T>
void OdeProblem<T>::validate() const {
  dynamics.validate();
  if (dynamics.num_shifts != 1) throw ContractError("OdeProblem: dynamics must have exactly one shift");
  if (y0.size() != dynamics.state_dim)
    throw ContractError("OdeProblem: y0 has " + std::to_string(y0.size()) + " entries, expected " +
                        std::to_string(dynamics.state_dim));
  if (grid.steps() == 0) throw ContractError("OdeProblem: empty time grid");
  if (inputs.length() != grid.steps() + 1 || inputs.dim() != dynamics.input_dim)
    throw ContractError("OdeProblem: inputs must have " + std::to_string(grid.steps() + 1) + " rows of width " +
                        std::to_string(dynamics.input_dim));
}

template <class T>
void discretize_linear(const MatrixSequence<T>& G, const Sequence<T>& z, const TimeGrid& grid,
                       ConstView<T> y0, Interpolation mode, LinearRecurrenceSystem<T>& out, ThreadPool* pool,
                       MatrixSequence<T>* forcing_weights) {
  const std::size_t L = grid.steps();
  const std::size_t n = y0.size();
  if (G.count() != L + 1 || z.length() != L + 1)
    throw ContractError("discretize_linear: need " + std::to_string(L + 1) + " samples of G and z");
  if (G.dim() != n || z.dim() != n) throw ContractError("discretize_linear: dimension mismatch");

  if (out.A.count() != L || out.A.dim() != n) out.A = MatrixSequence<T>(L, n);
  if (out.b.length() != L || out.b.dim() != n) out.b = Sequence<T>(L, n);
  out.y0.assign(y0.begin(), y0.end());
  if (forcing_weights && (forcing_weights->count() != L || forcing_weights->dim() != n))
    *forcing_weights = MatrixSequence<T>(L, n);

  ThreadPool& workers = pool ? *pool : default_pool();
  const std::size_t blocks = (L + kStepBlock - 1) / kStepBlock;
  workers.parallel_for(blocks, [&](std::size_t block) {
    SmallMatrix<T> g_step(n), A(n), W(n);
    std::vector<T> z_step(n);
    const std::size_t end = std::min(L, (block + 1) * kStepBlock);
    for (std::size_t i = block * kStepBlock; i < end; ++i) {
      interpolate_step(G, z, i, mode, g_step, z_step);
      exponential_step(g_step, grid.delta(i), A, W);
      out.A.set(i, A);
      kernels::gemv<T>(n, W.data().data(), z_step.data(), nullptr, out.b.row(i).data());
      if (forcing_weights) forcing_weights->set(i, W);
    }
  });
}

template <class T>
LinearRecurrenceSystem<T> discretize_linear(const MatrixSequence<T>& G, const Sequence<T>& z, const TimeGrid& grid,
                                            ConstView<T> y0, Interpolation mode) {
  LinearRecurrenceSystem<T> out;
  discretize_linear(G, z, grid, y0, mode, out);
  return out;
}

template <class T>
Linearizer<T> make_ode_linearizer(const TimeGrid& grid, Interpolation mode, ThreadPool* pool) {
  return [grid, mode, pool](const std::vector<MatrixSequence<T>>& G, const Sequence<T>& z, ConstView<T> y0,
                            LinearRecurrenceSystem<T>& out) {
    if (G.size() != 1) throw ContractError("ode linearizer: expected a single shift");
    discretize_linear(G[0], z, grid, y0, mode, out, pool);
  };
}

template <class T>
DeerResult<T> deer_solve_ode(const OdeProblem<T>& problem, const DeerConfig<T>& config, Interpolation mode) {
  problem.validate();
  const std::size_t L = problem.steps();
  const std::size_t n = problem.dynamics.state_dim;

  DeerConfig<T> engine_config = config;
  if (config.init_guess == InitGuess::user && config.initial_sequence &&
      config.initial_sequence->length() == L + 1) {
    const auto& full = *config.initial_sequence;
    Sequence<T> trimmed(L, n);
    std::copy(full.values().begin() + n, full.values().end(), trimmed.values().begin());
    engine_config.initial_sequence = std::move(trimmed);
  }

  DeerResult<T> inner =
      deer_solve(problem.dynamics, make_grid_shifter<T>(), make_ode_linearizer<T>(problem.grid, mode, config.scan.pool),
                 problem.inputs, std::span<const T>(problem.y0), L, engine_config);

  Sequence<T> states(L + 1, n);
  std::copy(problem.y0.begin(), problem.y0.end(), states.row(0).begin());
  std::copy(inner.states.values().begin(), inner.states.values().end(), states.values().begin() + n);
  inner.states = std::move(states);
  return inner;
}

template <class T>
Sequence<T> reference_rk4(const OdeProblem<T>& problem, std::size_t substeps) {
  problem.validate();
  if (substeps == 0) throw ContractError("reference_rk4: substeps must be at least 1");
  const std::size_t L = problem.steps();
  const std::size_t n = problem.dynamics.state_dim;
  const std::size_t m = problem.dynamics.input_dim;
  Sequence<T> out(L + 1, n);
  std::copy(problem.y0.begin(), problem.y0.end(), out.row(0).begin());

  std::vector<T> y(problem.y0), tmp(n), k1(n), k2(n), k3(n), k4(n), x(m);
  auto input_at = [&](std::size_t i, double frac) {
    for (std::size_t j = 0; j < m; ++j)
      x[j] = T(problem.inputs(i, j) + frac * (problem.inputs(i + 1, j) - problem.inputs(i, j)));
  };
  for (std::size_t i = 0; i < L; ++i) {
    const double delta = problem.grid.delta(i);
    const double h = delta / double(substeps);
    for (std::size_t s = 0; s < substeps; ++s) {
      const double f0 = double(s) / double(substeps);
      const double fm = (double(s) + 0.5) / double(substeps);
      const double f1 = double(s + 1) / double(substeps);
      input_at(i, f0);
      eval_f<T>(problem.dynamics, y, x, k1);
      for (std::size_t k = 0; k < n; ++k) tmp[k] = y[k] + T(0.5 * h) * k1[k];
      input_at(i, fm);
      eval_f<T>(problem.dynamics, tmp, x, k2);
      for (std::size_t k = 0; k < n; ++k) tmp[k] = y[k] + T(0.5 * h) * k2[k];
      eval_f<T>(problem.dynamics, tmp, x, k3);
      for (std::size_t k = 0; k < n; ++k) tmp[k] = y[k] + T(h) * k3[k];
      input_at(i, f1);
      eval_f<T>(problem.dynamics, tmp, x, k4);
      for (std::size_t k = 0; k < n; ++k) y[k] += T(h / 6.0) * (k1[k] + T(2) * k2[k] + T(2) * k3[k] + k4[k]);
    }
    std::copy(y.begin(), y.end(), out.row(i + 1).begin());
  }
  return out;
}

template <class T>
Sequence<T> sequential_deer_fixed_point(const OdeProblem<T>& problem, const DeerConfig<T>& config,
                                        Interpolation mode) {
  problem.validate();
  config.validate();
  const std::size_t L = problem.steps();
  const std::size_t n = problem.dynamics.state_dim;
  const T eps = std::numeric_limits<T>::epsilon();

  Sequence<T> out(L + 1, n);
  std::copy(problem.y0.begin(), problem.y0.end(), out.row(0).begin());
  MatrixSequence<T> G(2, n);
  Sequence<T> z(2, n);
  std::vector<T> jac(n * n), guess(n), next(n), f(n), z_step(n);
  SmallMatrix<T> g_step(n), A(n), W(n);

  // out.row(i + 1) = A y_i + W z_step, with G/z slot 0 at t_i and slot 1 at t_{i+1}.
  auto advance = [&](std::size_t i, std::span<T> result) {
    interpolate_step(G, z, 0, mode, g_step, z_step);
    exponential_step(g_step, problem.grid.delta(i), A, W);
    kernels::gemv<T>(n, A.data().data(), out.row(i).data(), nullptr, result.data());
    kernels::gemv<T>(n, W.data().data(), z_step.data(), result.data(), next.data());
    std::copy(next.begin(), next.end(), result.begin());
  };

  for (std::size_t i = 0; i < L; ++i) {
    linearize_point<T>(problem.dynamics, out.row(i), problem.inputs.row(i), G.matrix(0), z.row(0), jac);
    if (mode == Interpolation::left_value) {
      std::vector<T> result(n);
      advance(i, result);
      std::copy(result.begin(), result.end(), out.row(i + 1).begin());
    } else {
      // Explicit Euler predictor, then fixed-point iteration on the implicit step.
      eval_f<T>(problem.dynamics, out.row(i), problem.inputs.row(i), f);
      for (std::size_t k = 0; k < n; ++k) guess[k] = out(i, k) + T(problem.grid.delta(i)) * f[k];
      T last_change = std::numeric_limits<T>::infinity();
      bool done = false;
      for (std::size_t it = 0; it < config.max_iters && !done; ++it) {
        linearize_point<T>(problem.dynamics, guess, problem.inputs.row(i + 1), G.matrix(1), z.row(1), jac);
        std::vector<T> result(n);
        advance(i, result);
        T change = 0, scale = 1;
        for (std::size_t k = 0; k < n; ++k) {
          change = std::max(change, std::abs(result[k] - guess[k]));
          scale = std::max(scale, std::abs(result[k]));
        }
        guess = result;
        // Converged to round-off, or stagnated at it.
        done = change <= T(4) * eps * scale || (it > 2 && change >= last_change && change <= T(1e3) * eps * scale);
        last_change = change;
      }
      if (!done)
        throw NumericDomainError("sequential_deer_fixed_point: step " + std::to_string(i) +
                                 " did not converge within max_iters inner iterations");
      std::copy(guess.begin(), guess.end(), out.row(i + 1).begin());
    }
    for (std::size_t k = 0; k < n; ++k)
      if (!std::isfinite(out(i + 1, k)))
        throw NumericDomainError("sequential_deer_fixed_point: non-finite state at step " + std::to_string(i + 1));
  }
  return out;
}

template <class T>
OdeLinearization<T> linearize_ode(const OdeProblem<T>& problem, const Sequence<T>& states, Interpolation mode,
                                  ThreadPool* pool) {
  problem.validate();
  const std::size_t L = problem.steps();
  const std::size_t n = problem.dynamics.state_dim;
  if (states.length() != L + 1 || states.dim() != n)
    throw ContractError("linearize_ode: states must have " + std::to_string(L + 1) + " rows");
  MatrixSequence<T> G(L + 1, n);
  Sequence<T> z(L + 1, n);
  ThreadPool& workers = pool ? *pool : default_pool();
  const std::size_t blocks = (L + 1 + kStepBlock - 1) / kStepBlock;
  workers.parallel_for(blocks, [&](std::size_t block) {
    std::vector<T> jac(n * n);
    const std::size_t end = std::min(L + 1, (block + 1) * kStepBlock);
    for (std::size_t k = block * kStepBlock; k < end; ++k)
      linearize_point<T>(problem.dynamics, states.row(k), problem.inputs.row(k), G.matrix(k), z.row(k), jac);
  });
  OdeLinearization<T> lin;
  lin.interpolation = mode;
  discretize_linear(G, z, problem.grid, std::span<const T>(problem.y0), mode, lin.system, pool, &lin.forcing_weights);
  return lin;
}

template <class T>
Sequence<T> push_forcing(const OdeLinearization<T>& lin, const Sequence<T>& delta_f) {
  const std::size_t L = lin.system.length();
  const std::size_t n = lin.system.dim();
  if (delta_f.length() != L + 1 || delta_f.dim() != n)
    throw ContractError("push_forcing: expected " + std::to_string(L + 1) + " rows of width " + std::to_string(n));
  Sequence<T> out(L, n);
  std::vector<T> avg(n);
  for (std::size_t i = 0; i < L; ++i) {
    for (std::size_t k = 0; k < n; ++k)
      avg[k] = lin.interpolation == Interpolation::midpoint ? T(0.5) * (delta_f(i, k) + delta_f(i + 1, k))
                                                            : delta_f(i, k);
    kernels::gemv<T>(n, lin.forcing_weights.matrix(i), avg.data(), nullptr, out.row(i).data());
  }
  return out;
}

template <class T>
Sequence<T> pull_forcing(const OdeLinearization<T>& lin, const Sequence<T>& adjoint) {
  const std::size_t L = lin.system.length();
  const std::size_t n = lin.system.dim();
  if (adjoint.length() != L || adjoint.dim() != n)
    throw ContractError("pull_forcing: expected " + std::to_string(L) + " rows of width " + std::to_string(n));
  Sequence<T> out(L + 1, n);
  std::vector<T> tmp(n);
  for (std::size_t i = 0; i < L; ++i) {
    kernels::gemv_transposed<T>(n, lin.forcing_weights.matrix(i), adjoint.row(i).data(), nullptr, tmp.data());
    if (lin.interpolation == Interpolation::midpoint) {
      for (std::size_t k = 0; k < n; ++k) {
        out(i, k) += T(0.5) * tmp[k];
        out(i + 1, k) += T(0.5) * tmp[k];
      }
    } else {
      for (std::size_t k = 0; k < n; ++k) out(i, k) += tmp[k];
    }
  }
  return out;
}

#define DEER_INSTANTIATE_ODE(T)                                                                                    \
  template struct OdeProblem<T>;                                                                                   \
  template void discretize_linear(const MatrixSequence<T>&, const Sequence<T>&, const TimeGrid&,                   \
                                  std::span<const T>, Interpolation, LinearRecurrenceSystem<T>&, ThreadPool*,      \
                                  MatrixSequence<T>*);                                                             \
  template LinearRecurrenceSystem<T> discretize_linear(const MatrixSequence<T>&, const Sequence<T>&,               \
                                                       const TimeGrid&, std::span<const T>, Interpolation);        \
  template Linearizer<T> make_ode_linearizer(const TimeGrid&, Interpolation, ThreadPool*);                         \
  template DeerResult<T> deer_solve_ode(const OdeProblem<T>&, const DeerConfig<T>&, Interpolation);                \
  template Sequence<T> reference_rk4(const OdeProblem<T>&, std::size_t);                                           \
  template Sequence<T> sequential_deer_fixed_point(const OdeProblem<T>&, const DeerConfig<T>&, Interpolation);     \
  template OdeLinearization<T> linearize_ode(const OdeProblem<T>&, const Sequence<T>&, Interpolation,              \
                                             ThreadPool*);                                                         \
  template Sequence<T> push_forcing(const OdeLinearization<T>&, const Sequence<T>&);                               \
  template Sequence<T> pull_forcing(const OdeLinearization<T>&, const Sequence<T>&);

DEER_INSTANTIATE_ODE(float)
DEER_INSTANTIATE_ODE(double)

}  // namespace deer

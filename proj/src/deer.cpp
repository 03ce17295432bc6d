// SPDX-License-Identifier: Apache-2.0
#include "deer/deer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <string>

#include "deer/errors.hpp"
#include "deer/pscan.hpp"
#include "deer/thread_pool.hpp"

namespace deer {

namespace {

// Evaluation points handled per parallel task when linearizing f.
constexpr std::size_t kPointBlock = 128;

template <class T>
bool all_finite(std::span<const T> values) {
  return std::all_of(values.begin(), values.end(), [](T v) { return std::isfinite(v); });
}

template <class T>
double max_abs(const Sequence<T>& s) {
  double m = 0.0;
  for (T v : s.values()) m = std::max(m, double(std::abs(v)));
  return m;
}

}  // namespace

template <class T>
void LinearRecurrenceSystem<T>::validate() const {
  const std::size_t n = y0.size();
  if (A.count() != b.length()) throw ContractError("LinearRecurrenceSystem: A and b lengths differ");
  if (b.length() > 0 && (A.dim() != n || b.dim() != n))
    throw ContractError("LinearRecurrenceSystem: dimension mismatch");
  if (!all_finite<T>(A.values()) || !b.all_finite() || !all_finite<T>(y0))
    throw NumericDomainError("LinearRecurrenceSystem: non-finite entry");
}

template <class T>
Shifter<T> make_delay_shifter(std::vector<std::size_t> shifts) {
  if (shifts.empty()) throw ContractError("make_delay_shifter: need at least one shift");
  return [shifts = std::move(shifts)](const Sequence<T>& y, std::span<const T> boundary) {
    if (boundary.size() != y.dim()) throw ContractError("delay shifter: boundary size mismatch");
    std::vector<Sequence<T>> out;
    out.reserve(shifts.size());
    for (std::size_t s : shifts) {
      Sequence<T> shifted(y.length(), y.dim());
      for (std::size_t i = 0; i < y.length(); ++i) {
        auto src = i >= s ? y.row(i - s) : boundary;
        std::copy(src.begin(), src.end(), shifted.row(i).begin());
      }
      out.push_back(std::move(shifted));
    }
    return out;
  };
}

template <class T>
Shifter<T> make_grid_shifter() {
  return [](const Sequence<T>& y, std::span<const T> boundary) {
    if (boundary.size() != y.dim()) throw ContractError("grid shifter: boundary size mismatch");
    Sequence<T> samples(y.length() + 1, y.dim());
    std::copy(boundary.begin(), boundary.end(), samples.row(0).begin());
    std::copy(y.values().begin(), y.values().end(), samples.values().begin() + y.dim());
    std::vector<Sequence<T>> out;
    out.push_back(std::move(samples));
    return out;
  };
}

template <class T>
double residual(const Sequence<T>& prev, const Sequence<T>& next) {
  if (prev.length() != next.length() || prev.dim() != next.dim())
    throw ContractError("residual: shape mismatch");
  double m = 0.0;
  auto a = prev.values();
  auto b = next.values();
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = std::abs(double(b[i]) - double(a[i]));
    if (std::isnan(d)) return std::numeric_limits<double>::quiet_NaN();
    m = std::max(m, d);
  }
  return m;
}

template <class T>
DeerResult<T> deer_solve(const DynamicsSpec<T>& dynamics, const Shifter<T>& shifter, const Linearizer<T>& linearizer,
                         const Sequence<T>& inputs, ConstView<T> y0, std::size_t length,
                         const DeerConfig<T>& config) {
  using clock = std::chrono::steady_clock;
  const auto started = clock::now();
  config.validate();
  dynamics.validate();
  const std::size_t n = dynamics.state_dim;
  const std::size_t P = dynamics.num_shifts;
  const std::size_t nn = n * n;
  if (y0.size() != n)
    throw ContractError("deer_solve: initial state has " + std::to_string(y0.size()) + " entries, expected " +
                        std::to_string(n));
  if (!all_finite(y0)) throw NumericDomainError("deer_solve: non-finite initial state");

  Sequence<T> y(length, n);
  if (config.init_guess == InitGuess::user) {
    const auto& guess = *config.initial_sequence;
    if (guess.length() != length || guess.dim() != n)
      throw ContractError("deer_solve: initial guess shape (" + std::to_string(guess.length()) + ", " +
                          std::to_string(guess.dim()) + ") does not match (" + std::to_string(length) + ", " +
                          std::to_string(n) + ")");
    if (!guess.all_finite()) throw NumericDomainError("deer_solve: non-finite initial guess");
    y = guess;
  }

  ThreadPool& pool = config.scan.resolve_pool();
  std::vector<MatrixSequence<T>> G;
  Sequence<T> z;
  LinearRecurrenceSystem<T> work, best_system;
  Sequence<T> next(length, n), best = y;
  double best_metric = std::numeric_limits<double>::infinity();
  double first_metric = 0.0;
  DeerReport report;

  for (std::size_t iter = 1; iter <= config.max_iters; ++iter) {
    const std::vector<Sequence<T>> shifted = shifter(y, y0);
    if (shifted.size() != P)
      throw ContractError("deer_solve: shifter produced " + std::to_string(shifted.size()) + " sequences, expected " +
                          std::to_string(P));
    const std::size_t points = shifted[0].length();
    for (const auto& s : shifted)
      if (s.length() != points || s.dim() != n) throw ContractError("deer_solve: inconsistent shifter output");
    if (inputs.length() != points || inputs.dim() != dynamics.input_dim)
      throw ContractError("deer_solve: inputs shape (" + std::to_string(inputs.length()) + ", " +
                          std::to_string(inputs.dim()) + ") does not match " + std::to_string(points) +
                          " evaluation points of width " + std::to_string(dynamics.input_dim));

    if (G.size() != P || G[0].count() != points) G.assign(P, MatrixSequence<T>(points, n));
    if (z.length() != points || z.dim() != n) z = Sequence<T>(points, n);

    const std::size_t blocks = (points + kPointBlock - 1) / kPointBlock;
    pool.parallel_for(blocks, [&](std::size_t block) {
      std::vector<T> value(n), jac(P * nn);
      std::vector<std::span<const T>> views(P);
      const std::size_t end = std::min(points, (block + 1) * kPointBlock);
      for (std::size_t k = block * kPointBlock; k < end; ++k) {
        for (std::size_t p = 0; p < P; ++p) views[p] = shifted[p].row(k);
        try {
          dynamics.linearize(views, inputs.row(k), value, jac);
        } catch (const NumericDomainError& e) {
          throw DivergenceError(iter, e.what());
        }
        if (!all_finite<T>(value) || !all_finite<T>(jac))
          throw DivergenceError(iter, "non-finite f or Jacobian at evaluation point " + std::to_string(k));
        // z = f + sum_p G_p y_p with G_p = -J_p
        auto zk = z.row(k);
        std::copy(value.begin(), value.end(), zk.begin());
        for (std::size_t p = 0; p < P; ++p) {
          const T* J = jac.data() + p * nn;
          T* Gp = G[p].matrix(k);
          const auto yp = views[p];
          for (std::size_t r = 0; r < n; ++r) {
            T acc = 0;
            for (std::size_t c = 0; c < n; ++c) {
              acc += J[r * n + c] * yp[c];
              Gp[r * n + c] = -J[r * n + c];
            }
            zk[r] -= acc;
          }
        }
      }
    });

    linearizer(G, z, y0, work);
    if (work.length() != length || work.dim() != n)
      throw ContractError("deer_solve: linearizer produced a system of length " + std::to_string(work.length()) +
                          ", expected " + std::to_string(length));
    scan_recurrence<T>(y0, work.A, work.b, next, config.scan);
    if (!next.all_finite()) throw DivergenceError(iter, "non-finite iterate");

    double metric = residual(y, next);
    if (config.relative_tolerance) metric /= std::max(max_abs(next), double(std::numeric_limits<T>::min()));
    report.residual_history.push_back(metric);
    report.iterations = iter;
    if (iter == 1)
      first_metric = metric;
    else if (metric > config.divergence_factor * first_metric)
      throw DivergenceError(iter, "residual " + std::to_string(metric) + " exceeds " +
                                      std::to_string(config.divergence_factor) + " x the first residual " +
                                      std::to_string(first_metric));
    if (metric < best_metric) {
      best_metric = metric;
      best = next;
      if (config.keep_linearization) std::swap(work, best_system);
    }
    std::swap(y, next);
    if (metric <= double(config.tolerance)) {
      report.converged = true;
      break;
    }
  }

  report.wall_time = std::chrono::duration<double>(clock::now() - started).count();
  DeerResult<T> result{std::move(best), std::move(report), std::nullopt};
  if (config.keep_linearization) {
    best_system.y0.assign(y0.begin(), y0.end());
    result.system = std::move(best_system);
  }
  return result;
}

#define DEER_INSTANTIATE_ENGINE(T)                                                                         \
  template struct LinearRecurrenceSystem<T>;                                                               \
  template Shifter<T> make_delay_shifter(std::vector<std::size_t>);                                       \
  template Shifter<T> make_grid_shifter();                                                                 \
  template double residual(const Sequence<T>&, const Sequence<T>&);                                       \
  template DeerResult<T> deer_solve(const DynamicsSpec<T>&, const Shifter<T>&, const Linearizer<T>&,       \
                                    const Sequence<T>&, std::span<const T>, std::size_t, const DeerConfig<T>&);

DEER_INSTANTIATE_ENGINE(float)
DEER_INSTANTIATE_ENGINE(double)

}  // namespace deer

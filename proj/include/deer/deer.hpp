// SPDX-License-Identifier: Apache-2.0
//
// Generic DEER iteration. Each step linearizes f around the current iterate
// with G_p = -df/dy(r - s_p), assembles the linear recurrence that inverts
//
//     L[y] + sum_p G_p y(r - s_p) = f(...) + sum_p G_p y(r - s_p)
//
// and solves it with the parallel scan. This is Newton's method on
// L[y] - f(y) = 0, so convergence near the solution is quadratic.
#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "deer/core.hpp"

namespace deer {

/// y_i = A_i y_{i-1} + b_i for i = 1..L, starting from y0.
template <class T>
struct LinearRecurrenceSystem {
  MatrixSequence<T> A;
  Sequence<T> b;
  std::vector<T> y0;

  std::size_t length() const noexcept { return b.length(); }
  std::size_t dim() const noexcept { return y0.size(); }
  /// Throws ContractError on inconsistent shapes, NumericDomainError on non-finite entries.
  void validate() const;
};

/// Maps an iterate (L rows) and its boundary value to the P sequences
/// y(r - s_p) at every evaluation point.
template <class T>
using Shifter = std::function<std::vector<Sequence<T>>(const Sequence<T>& y, std::span<const T> boundary)>;

/// Discrete delays: output p holds y_{i - s_p}, with indices before the start
/// taking `boundary`. Used by recurrences (s = 1).
template <class T>
Shifter<T> make_delay_shifter(std::vector<std::size_t> shifts);

/// Grid samples for an initial-value problem: `boundary` followed by y, so
/// evaluation points are t_0..t_L (L + 1 rows) with zero shift.
template <class T>
Shifter<T> make_grid_shifter();

/// Builds the linear recurrence from the per-point matrices G_p (one
/// MatrixSequence per shift), the forcing z = f + sum_p G_p y(r - s_p) and the
/// initial state. Writes into `out`, reusing its storage.
template <class T>
using Linearizer = std::function<void(const std::vector<MatrixSequence<T>>& G, const Sequence<T>& z,
                                      ConstView<T> y0, LinearRecurrenceSystem<T>& out)>;

template <class T>
struct DeerResult {
  Sequence<T> states;
  DeerReport report;
  /// Linear system whose solution is `states` (set when keep_linearization).
  std::optional<LinearRecurrenceSystem<T>> system;
};

/// Max-abs elementwise difference. Throws ContractError on shape mismatch.
template <class T>
double residual(const Sequence<T>& prev, const Sequence<T>& next);

/// Runs the fixed-point iteration until the max-abs change between iterates
/// drops to `config.tolerance` or `config.max_iters` is reached.
///
/// `inputs` needs one row per evaluation point produced by `shifter`. The
/// iterate has as many rows as the linearizer's system. On exhaustion the
/// iterate with the smallest residual is returned with converged = false.
/// Throws DivergenceError on a non-finite iterate or when the residual grows
/// beyond divergence_factor times the first one.
template <class T>
DeerResult<T> deer_solve(const DynamicsSpec<T>& dynamics, const Shifter<T>& shifter, const Linearizer<T>& linearizer,
                         const Sequence<T>& inputs, ConstView<T> y0, std::size_t length,
                         const DeerConfig<T>& config);

}  // namespace deer

// SPDX-License-Identifier: Apache-2.0
//
// Initial-value problems dy/dt = f(y, x(t)) solved with DEER. Between grid
// points the linearized equation dy/dt + G y = z is integrated exactly with G
// and z held constant, giving
//
//     y_{i+1} = exp(-G_i D_i) y_i + D_i phi_1(-G_i D_i) z_i,   D_i = t_{i+1} - t_i.
//
// phi_1 keeps the update finite when G_i is singular. G_i, z_i are either the
// average of the two endpoint samples (midpoint, local error O(D^3)) or the
// left sample (local error O(D^2)).
#pragma once

#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

#include "deer/core.hpp"
#include "deer/deer.hpp"

namespace deer {

enum class Interpolation { midpoint, left_value };

std::string_view to_string(Interpolation mode);

template <class T>
struct OdeProblem {
  /// Single zero shift: f(y(t), x(t)).
  DynamicsSpec<T> dynamics;
  std::vector<T> y0;
  TimeGrid grid;
  /// Input samples at t_0..t_L; width dynamics.input_dim (may be zero).
  Sequence<T> inputs;

  std::size_t steps() const noexcept { return grid.steps(); }
  /// Throws ContractError if shapes disagree or the dynamics has more than one shift.
  void validate() const;
};

/// A discretized linearization plus the per-step forcing weights
/// W_i = D_i phi_1(-G_i D_i), so that b_i = W_i z_i.
template <class T>
struct OdeLinearization {
  LinearRecurrenceSystem<T> system;
  MatrixSequence<T> forcing_weights;
  Interpolation interpolation = Interpolation::midpoint;
};

/// Builds the L-step recurrence from G and z sampled at all L + 1 grid points.
/// `forcing_weights`, when non-null, receives W_i.
template <class T>
void discretize_linear(const MatrixSequence<T>& G, const Sequence<T>& z, const TimeGrid& grid,
                       ConstView<T> y0, Interpolation mode, LinearRecurrenceSystem<T>& out,
                       ThreadPool* pool = nullptr, MatrixSequence<T>* forcing_weights = nullptr);

template <class T>
LinearRecurrenceSystem<T> discretize_linear(const MatrixSequence<T>& G, const Sequence<T>& z, const TimeGrid& grid,
                                            ConstView<T> y0, Interpolation mode = Interpolation::midpoint);

template <class T>
Linearizer<T> make_ode_linearizer(const TimeGrid& grid, Interpolation mode, ThreadPool* pool = nullptr);

/// DEER solve of an initial-value problem. `states` has L + 1 rows (t_0..t_L,
/// row 0 is y0). A user initial guess may have L + 1 rows (row 0 ignored) or
/// L rows.
template <class T>
DeerResult<T> deer_solve_ode(const OdeProblem<T>& problem, const DeerConfig<T>& config,
                             Interpolation mode = Interpolation::midpoint);

/// Classical RK4 with `substeps` equal steps per grid interval, inputs
/// interpolated linearly. Returns L + 1 rows.
template <class T>
Sequence<T> reference_rk4(const OdeProblem<T>& problem, std::size_t substeps);

/// Marches the same per-step exponential equations forward in time, solving
/// each implicit midpoint step by fixed-point iteration to round-off. The
/// result is the discrete solution DEER converges to. `config.max_iters` caps
/// the inner iteration. Returns L + 1 rows.
template <class T>
Sequence<T> sequential_deer_fixed_point(const OdeProblem<T>& problem, const DeerConfig<T>& config,
                                        Interpolation mode = Interpolation::midpoint);

/// Linearization at a given trajectory (L + 1 rows), for sensitivity passes.
template <class T>
OdeLinearization<T> linearize_ode(const OdeProblem<T>& problem, const Sequence<T>& states,
                                  Interpolation mode = Interpolation::midpoint, ThreadPool* pool = nullptr);

/// Maps per-grid-point forcing perturbations (L + 1 rows) to per-step offsets
/// (L rows) through the same interpolation and W_i weighting as b.
template <class T>
Sequence<T> push_forcing(const OdeLinearization<T>& lin, const Sequence<T>& delta_f);

/// Transpose of push_forcing: per-step adjoints (L rows) to per-grid-point
/// cotangents on f (L + 1 rows).
template <class T>
Sequence<T> pull_forcing(const OdeLinearization<T>& lin, const Sequence<T>& adjoint);

}  // namespace deer

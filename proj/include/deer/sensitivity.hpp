// SPDX-License-Identifier: Apache-2.0
//
// Derivatives of a converged DEER solution. With the final linear system
// y_i = A_i y_{i-1} + b_i, a perturbation of the forcing propagates as
//
//     dy_i = A_i dy_{i-1} + db_i,   dy_0 = 0,
//
// and a loss cotangent g is pulled back through the transposed recurrence
// run in reverse time,
//
//     w_{L-1} = g_{L-1},   w_i = g_i + A_{i+1}^T w_{i+1},   dLoss/dy0 = A_0^T w_0,
//
// so that dLoss/db_i = w_i. Each costs one scan pass.
#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "deer/core.hpp"
#include "deer/deer.hpp"
#include "deer/gru.hpp"
#include "deer/ode.hpp"

namespace deer {

/// Solves dy_i = A_i dy_{i-1} + delta_b_i from dy_0 = 0. `delta_b` already
/// carries the discretization of the forcing (identity for recurrences; see
/// push_forcing for ODEs).
template <class T>
Sequence<T> forward_sensitivity(const LinearRecurrenceSystem<T>& system, const Sequence<T>& delta_b,
                                const ScanOptions& options = {});

template <class T>
struct AdjointResult {
  /// w_i = dLoss/db_i, one row per step.
  Sequence<T> adjoint;
  std::vector<T> grad_y0;
};

template <class T>
AdjointResult<T> backward_gradient(const LinearRecurrenceSystem<T>& system, const CotangentSequence<T>& cotangent,
                                   const ScanOptions& options = {});

/// ODE forms: per-grid-point forcing perturbations (L + 1 rows) in, states at
/// t_1..t_L out; the adjoint result's `adjoint` is replaced by the exact
/// transpose onto grid-point forcing (L + 1 rows).
template <class T>
Sequence<T> forward_sensitivity(const OdeLinearization<T>& lin, const Sequence<T>& delta_f,
                                const ScanOptions& options = {});

template <class T>
AdjointResult<T> backward_gradient(const OdeLinearization<T>& lin, const CotangentSequence<T>& cotangent,
                                   const ScanOptions& options = {});

/// Whether gradients use the linear system saved by the forward solve or
/// relinearize at the returned states.
enum class JacobianSource { reuse, recompute };

/// System for a recurrence solve. `reuse` needs forward.system.
template <class T>
LinearRecurrenceSystem<T> rnn_gradient_system(const DeerResult<T>& forward, const DynamicsSpec<T>& cell,
                                              const Sequence<T>& inputs, ConstView<T> y0,
                                              JacobianSource source = JacobianSource::reuse,
                                              ThreadPool* pool = nullptr);

/// Adds w_i^T df_i/dtheta into `grad` for step i.
template <class T>
using StepVjp = std::function<void(std::size_t i, std::span<const T> w, std::span<T> grad)>;

/// Sum over steps of the per-step contributions. Steps are grouped into
/// fixed chunks summed in order, so the result does not depend on the
/// number of workers.
template <class T>
std::vector<T> accumulate_parameter_gradient(std::size_t parameter_count, const Sequence<T>& adjoint,
                                             const StepVjp<T>& vjp, const ScanOptions& options = {});

/// Flat (GruParams order) gradient of the loss for a GRU recurrence.
template <class T>
std::vector<T> gru_parameter_gradient(const GruParams<T>& params, const Sequence<T>& inputs, ConstView<T> y0,
                                      const Sequence<T>& states, const Sequence<T>& adjoint,
                                      const ScanOptions& options = {});

/// dLoss/dx_i for a GRU recurrence, one row per step.
template <class T>
Sequence<T> gru_input_gradient(const GruParams<T>& params, const Sequence<T>& inputs, ConstView<T> y0,
                               const Sequence<T>& states, const Sequence<T>& adjoint, ThreadPool* pool = nullptr);

/// (df_i/dtheta) dtheta for every step, the forcing of a parameter perturbation.
template <class T>
Sequence<T> gru_parameter_forcing(const GruParams<T>& params, const Sequence<T>& inputs, ConstView<T> y0,
                                  const Sequence<T>& states, ConstView<T> dtheta, ThreadPool* pool = nullptr);

}  // namespace deer

// SPDX-License-Identifier: Apache-2.0
#include "deer/sensitivity.hpp"

#include <algorithm>
#include <string>

#include "deer/errors.hpp"
#include "deer/pscan.hpp"
#include "deer/rnn.hpp"
#include "deer/thread_pool.hpp"

namespace deer {

namespace {

constexpr std::size_t kStepBlock = 256;

template <class T>
void check_rows(const LinearRecurrenceSystem<T>& system, const Sequence<T>& rows, const char* who) {
  system.validate();
  if (rows.length() != system.length() || rows.dim() != system.dim())
    throw ContractError(std::string(who) + ": expected " + std::to_string(system.length()) + " rows of width " +
                        std::to_string(system.dim()) + ", got (" + std::to_string(rows.length()) + ", " +
                        std::to_string(rows.dim()) + ")");
}

template <class T>
void check_trajectory(const GruParams<T>& params, const Sequence<T>& inputs, ConstView<T> y0,
                      const Sequence<T>& states, const char* who) {
  const std::size_t L = inputs.length();
  if (inputs.dim() != params.input_dim || y0.size() != params.state_dim || states.length() != L ||
      states.dim() != params.state_dim)
    throw ContractError(std::string(who) + ": inconsistent trajectory shapes");
}

}  // namespace

template <class T>
Sequence<T> forward_sensitivity(const LinearRecurrenceSystem<T>& system, const Sequence<T>& delta_b,
                                const ScanOptions& options) {
  check_rows(system, delta_b, "forward_sensitivity");
  const std::vector<T> zero(system.dim(), T(0));
  Sequence<T> out(system.length(), system.dim());
  scan_recurrence<T>(zero, system.A, delta_b, out, options);
  return out;
}

template <class T>
AdjointResult<T> backward_gradient(const LinearRecurrenceSystem<T>& system, const CotangentSequence<T>& cotangent,
                                   const ScanOptions& options) {
  check_rows(system, cotangent, "backward_gradient");
  const std::size_t n = system.dim();
  AdjointResult<T> result{Sequence<T>(system.length(), n), std::vector<T>(n)};
  scan_reverse_transposed<T>(system.A, cotangent, result.adjoint, options);
  if (system.length() > 0)
    kernels::gemv_transposed<T>(n, system.A.matrix(0), result.adjoint.row(0).data(), nullptr,
                                result.grad_y0.data());
  return result;
}

template <class T>
Sequence<T> forward_sensitivity(const OdeLinearization<T>& lin, const Sequence<T>& delta_f,
                                const ScanOptions& options) {
  return forward_sensitivity(lin.system, push_forcing(lin, delta_f), options);
}

template <class T>
AdjointResult<T> backward_gradient(const OdeLinearization<T>& lin, const CotangentSequence<T>& cotangent,
                                   const ScanOptions& options) {
  AdjointResult<T> r = backward_gradient(lin.system, cotangent, options);
  r.adjoint = pull_forcing(lin, r.adjoint);
  return r;
}

template <class T>
LinearRecurrenceSystem<T> rnn_gradient_system(const DeerResult<T>& forward, const DynamicsSpec<T>& cell,
                                              const Sequence<T>& inputs, ConstView<T> y0,
                                              JacobianSource source, ThreadPool* pool) {
  if (source == JacobianSource::reuse) {
    if (!forward.system) throw ContractError("rnn_gradient_system: forward solve kept no linear system");
    return *forward.system;
  }
  return linearize_rnn(cell, inputs, y0, forward.states, pool);
}

template <class T>
std::vector<T> accumulate_parameter_gradient(std::size_t parameter_count, const Sequence<T>& adjoint,
                                             const StepVjp<T>& vjp, const ScanOptions& options) {
  const std::size_t L = adjoint.length();
  const std::size_t chunk = std::max<std::size_t>(1, options.chunk_size);
  const std::size_t chunks = (L + chunk - 1) / chunk;
  std::vector<std::vector<T>> partial(chunks, std::vector<T>(parameter_count, T(0)));
  options.resolve_pool().parallel_for(chunks, [&](std::size_t c) {
    const std::size_t end = std::min(L, (c + 1) * chunk);
    for (std::size_t i = c * chunk; i < end; ++i) vjp(i, adjoint.row(i), partial[c]);
  });
  std::vector<T> total(parameter_count, T(0));
  for (const auto& p : partial)
    for (std::size_t k = 0; k < parameter_count; ++k) total[k] += p[k];
  return total;
}

template <class T>
std::vector<T> gru_parameter_gradient(const GruParams<T>& params, const Sequence<T>& inputs, ConstView<T> y0,
                                      const Sequence<T>& states, const Sequence<T>& adjoint,
                                      const ScanOptions& options) {
  check_trajectory(params, inputs, y0, states, "gru_parameter_gradient");
  if (adjoint.length() != states.length() || adjoint.dim() != states.dim())
    throw ContractError("gru_parameter_gradient: adjoint shape does not match states");
  const StepVjp<T> vjp = [&](std::size_t i, std::span<const T> w, std::span<T> grad) {
    const std::span<const T> prev = i == 0 ? y0 : states.row(i - 1);
    gru_vjp<T>(params, prev, inputs.row(i), w, grad, {});
  };
  return accumulate_parameter_gradient<T>(params.parameter_count(), adjoint, vjp, options);
}

template <class T>
Sequence<T> gru_input_gradient(const GruParams<T>& params, const Sequence<T>& inputs, ConstView<T> y0,
                               const Sequence<T>& states, const Sequence<T>& adjoint, ThreadPool* pool) {
  check_trajectory(params, inputs, y0, states, "gru_input_gradient");
  const std::size_t L = inputs.length();
  Sequence<T> out(L, inputs.dim());
  ThreadPool& workers = pool ? *pool : default_pool();
  workers.parallel_for((L + kStepBlock - 1) / kStepBlock, [&](std::size_t block) {
    std::vector<T> scratch(params.parameter_count());
    const std::size_t end = std::min(L, (block + 1) * kStepBlock);
    for (std::size_t i = block * kStepBlock; i < end; ++i) {
      const std::span<const T> prev = i == 0 ? y0 : states.row(i - 1);
      gru_vjp<T>(params, prev, inputs.row(i), adjoint.row(i), scratch, out.row(i));
    }
  });
  return out;
}

template <class T>
Sequence<T> gru_parameter_forcing(const GruParams<T>& params, const Sequence<T>& inputs, ConstView<T> y0,
                                  const Sequence<T>& states, ConstView<T> dtheta, ThreadPool* pool) {
  check_trajectory(params, inputs, y0, states, "gru_parameter_forcing");
  const std::size_t L = inputs.length();
  Sequence<T> out(L, params.state_dim);
  ThreadPool& workers = pool ? *pool : default_pool();
  workers.parallel_for((L + kStepBlock - 1) / kStepBlock, [&](std::size_t block) {
    const std::size_t end = std::min(L, (block + 1) * kStepBlock);
    for (std::size_t i = block * kStepBlock; i < end; ++i) {
      const std::span<const T> prev = i == 0 ? y0 : states.row(i - 1);
      gru_param_jvp<T>(params, prev, inputs.row(i), dtheta, out.row(i));
    }
  });
  return out;
}

#define DEER_INSTANTIATE_SENSITIVITY(T)                                                                           \
  template Sequence<T> forward_sensitivity(const LinearRecurrenceSystem<T>&, const Sequence<T>&,                  \
                                           const ScanOptions&);                                                   \
  template AdjointResult<T> backward_gradient(const LinearRecurrenceSystem<T>&, const CotangentSequence<T>&,      \
                                              const ScanOptions&);                                                \
  template Sequence<T> forward_sensitivity(const OdeLinearization<T>&, const Sequence<T>&, const ScanOptions&);   \
  template AdjointResult<T> backward_gradient(const OdeLinearization<T>&, const CotangentSequence<T>&,            \
                                              const ScanOptions&);                                                \
  template LinearRecurrenceSystem<T> rnn_gradient_system(const DeerResult<T>&, const DynamicsSpec<T>&,            \
                                                         const Sequence<T>&, std::span<const T>, JacobianSource,  \
                                                         ThreadPool*);                                            \
  template std::vector<T> accumulate_parameter_gradient(std::size_t, const Sequence<T>&, const StepVjp<T>&,       \
                                                        const ScanOptions&);                                      \
  template std::vector<T> gru_parameter_gradient(const GruParams<T>&, const Sequence<T>&, std::span<const T>,     \
                                                 const Sequence<T>&, const Sequence<T>&, const ScanOptions&);     \
  template Sequence<T> gru_input_gradient(const GruParams<T>&, const Sequence<T>&, std::span<const T>,            \
                                          const Sequence<T>&, const Sequence<T>&, ThreadPool*);                   \
  template Sequence<T> gru_parameter_forcing(const GruParams<T>&, const Sequence<T>&, std::span<const T>,         \
                                             const Sequence<T>&, std::span<const T>, ThreadPool*);

DEER_INSTANTIATE_SENSITIVITY(float)
DEER_INSTANTIATE_SENSITIVITY(double)

}  // namespace deer

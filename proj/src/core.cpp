// SPDX-License-Identifier: Apache-2.0
#include "deer/core.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "deer/errors.hpp"
#include "deer/thread_pool.hpp"

namespace deer {

std::string_view to_string(Precision p) {
  return p == Precision::f32 ? "f32" : "f64";
}

TimeGrid::TimeGrid(std::vector<double> times) : times_(std::move(times)) {
  if (times_.size() < 2) throw ContractError("TimeGrid: need at least two time points");
  deltas_.resize(times_.size() - 1);
  for (std::size_t i = 0; i + 1 < times_.size(); ++i) {
    deltas_[i] = times_[i + 1] - times_[i];
    if (!std::isfinite(times_[i]) || !std::isfinite(times_[i + 1]) || !(deltas_[i] > 0.0))
      throw ContractError("TimeGrid: times must be finite and strictly increasing (index " + std::to_string(i) + ")");
  }
}

TimeGrid TimeGrid::uniform(double t0, double t1, std::size_t steps) {
  if (steps == 0) throw ContractError("TimeGrid::uniform: steps must be positive");
  std::vector<double> t(steps + 1);
  const double dt = (t1 - t0) / double(steps);
  for (std::size_t i = 0; i <= steps; ++i) t[i] = t0 + dt * double(i);
  t[steps] = t1;
  return TimeGrid(std::move(t));
}

template <class T>
Sequence<T>::Sequence(std::size_t length, std::size_t dim, std::vector<T> data)
    : length_(length), dim_(dim), data_(std::move(data)) {
  if (data_.size() != length * dim)
    throw ContractError("Sequence: " + std::to_string(data_.size()) + " values for shape (" + std::to_string(length) +
                        ", " + std::to_string(dim) + ")");
  for (std::size_t i = 0; i < data_.size(); ++i)
    if (!std::isfinite(data_[i]))
      throw NumericDomainError("Sequence: non-finite value at step " + std::to_string(i / std::max<std::size_t>(dim, 1)) +
                               ", channel " + std::to_string(i % std::max<std::size_t>(dim, 1)));
}

template <class T>
bool Sequence<T>::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
}

template <class T>
void MatrixSequence<T>::set(std::size_t i, const SmallMatrix<T>& m) {
  if (m.size() != n_) throw ContractError("MatrixSequence::set: matrix size mismatch");
  std::copy(m.data().begin(), m.data().end(), matrix(i));
}

template <class T>
void DynamicsSpec<T>::validate() const {
  if (state_dim == 0) throw ContractError("DynamicsSpec: state_dim must be positive");
  if (num_shifts == 0) throw ContractError("DynamicsSpec: num_shifts must be positive");
  if (!eval) throw ContractError("DynamicsSpec: eval is not set");
}

template <class T>
void DynamicsSpec<T>::linearize(ShiftedStates<T> shifted, std::span<const T> x, std::span<T> value,
                                std::span<T> jacobians) const {
  const std::size_t nn = state_dim * state_dim;
  if (eval_with_jacobians) {
    eval_with_jacobians(shifted, x, value, jacobians);
    return;
  }
  eval(shifted, x, value);
  for (std::size_t p = 0; p < num_shifts; ++p) {
    auto block = jacobians.subspan(p * nn, nn);
    if (jacobian)
      jacobian(shifted, x, p, block);
    else
      finite_difference_jacobian(*this, shifted, x, p, block);
  }
}

template <class T>
void finite_difference_jacobian(const DynamicsSpec<T>& dynamics, ShiftedStates<T> shifted, std::span<const T> x,
                                std::size_t p, std::span<T> out, T h) {
  const std::size_t n = dynamics.state_dim;
  if (p >= shifted.size()) throw ContractError("finite_difference_jacobian: shift index out of range");
  if (shifted[p].size() != n || out.size() != n * n)
    throw ContractError("finite_difference_jacobian: shape mismatch");
  if (h < T(0) || !std::isfinite(h)) throw ContractError("finite_difference_jacobian: step must be positive");

  // Private copies of every shifted state so that only coordinate l of shift p moves.
  std::vector<std::vector<T>> storage(shifted.size());
  std::vector<std::span<const T>> views(shifted.size());
  for (std::size_t q = 0; q < shifted.size(); ++q) {
    storage[q].assign(shifted[q].begin(), shifted[q].end());
    views[q] = storage[q];
  }
  std::vector<T> plus(n), minus(n);
  const T auto_scale = std::cbrt(std::numeric_limits<T>::epsilon());
  auto& y = storage[p];
  for (std::size_t l = 0; l < n; ++l) {
    const T base = y[l];
    const T step = h > T(0) ? h : auto_scale * std::max(T(1), std::abs(base));
    y[l] = base + step;
    const T hi = y[l];
    dynamics.eval(views, x, plus);
    y[l] = base - step;
    const T lo = y[l];
    dynamics.eval(views, x, minus);
    y[l] = base;
    for (std::size_t k = 0; k < n; ++k) {
      if (!std::isfinite(plus[k]) || !std::isfinite(minus[k]))
        throw NumericDomainError("finite_difference_jacobian: f output " + std::to_string(k) +
                                 " is non-finite when perturbing shift " + std::to_string(p) + " coordinate " +
                                 std::to_string(l));
      out[k * n + l] = (plus[k] - minus[k]) / (hi - lo);
    }
  }
}

template <class T>
SmallMatrix<T> finite_difference_jacobian(const DynamicsSpec<T>& dynamics, ShiftedStates<T> shifted,
                                          std::span<const T> x, std::size_t p, T h) {
  SmallMatrix<T> j(dynamics.state_dim);
  finite_difference_jacobian(dynamics, shifted, x, p, j.data(), h);
  return j;
}

ThreadPool& ScanOptions::resolve_pool() const {
  return pool ? *pool : default_pool();
}

template <class T>
void DeerConfig<T>::validate() const {
  if (!(tolerance >= T(0)) || !std::isfinite(tolerance)) throw ContractError("DeerConfig: tolerance must be nonnegative");
  if (max_iters < 1) throw ContractError("DeerConfig: max_iters must be at least 1");
  if (!(divergence_factor > 1.0)) throw ContractError("DeerConfig: divergence_factor must exceed 1");
  if (scan.chunk_size == 0) throw ContractError("DeerConfig: chunk_size must be positive");
  if (init_guess == InitGuess::user && !initial_sequence)
    throw ContractError("DeerConfig: user init_guess requires initial_sequence");
}

#define DEER_INSTANTIATE_CORE(T)                                                                              \
  template class Sequence<T>;                                                                                 \
  template class MatrixSequence<T>;                                                                           \
  template struct DynamicsSpec<T>;                                                                            \
  template struct DeerConfig<T>;                                                                              \
  template void finite_difference_jacobian(const DynamicsSpec<T>&, ShiftedStates<T>, std::span<const T>,      \
                                           std::size_t, std::span<T>, T);                                     \
  template SmallMatrix<T> finite_difference_jacobian(const DynamicsSpec<T>&, ShiftedStates<T>,                \
                                                     std::span<const T>, std::size_t, T);

DEER_INSTANTIATE_CORE(float)
DEER_INSTANTIATE_CORE(double)

}  // namespace deer

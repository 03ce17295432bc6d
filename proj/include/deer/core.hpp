// SPDX-License-Identifier: Apache-2.0
//
// Shared domain types for the DEER solvers: time grids, state and input
// sequences, the dynamics contract, solver configuration and diagnostics.
#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string_view>
#include <type_traits>
#include <vector>

#include "deer/smallmat.hpp"

namespace deer {

class ThreadPool;

enum class Precision { f32, f64 };

template <class T>
constexpr Precision precision_of();
template <>
constexpr Precision precision_of<float>() { return Precision::f32; }
template <>
constexpr Precision precision_of<double>() { return Precision::f64; }

std::string_view to_string(Precision p);

/// Convergence tolerance on the max-abs iterate change: 1e-4 for f32, 1e-7 for f64.
template <class T>
constexpr T default_tolerance() {
  return precision_of<T>() == Precision::f32 ? T(1e-4) : T(1e-7);
}

/// Strictly increasing sample times t_0..t_L.
class TimeGrid {
 public:
  TimeGrid() = default;
  /// Throws ContractError unless there are at least two strictly increasing, finite times.
  explicit TimeGrid(std::vector<double> times);

  static TimeGrid uniform(double t0, double t1, std::size_t steps);

  /// Number of intervals L.
  std::size_t steps() const noexcept { return deltas_.size(); }
  std::span<const double> times() const noexcept { return times_; }
  std::span<const double> deltas() const noexcept { return deltas_; }
  double time(std::size_t i) const { return times_[i]; }
  double delta(std::size_t i) const { return deltas_[i]; }

 private:
  std::vector<double> times_;
  std::vector<double> deltas_;
};

/// Row-per-step dense array: `length` rows of `dim` values.
template <class T>
class Sequence {
 public:
  Sequence() = default;
  Sequence(std::size_t length, std::size_t dim, T fill = T(0)) : length_(length), dim_(dim), data_(length * dim, fill) {}
  /// Throws ContractError on a size mismatch and NumericDomainError on non-finite entries.
  Sequence(std::size_t length, std::size_t dim, std::vector<T> data);

  std::size_t length() const noexcept { return length_; }
  std::size_t dim() const noexcept { return dim_; }
  bool empty() const noexcept { return length_ == 0; }

  std::span<T> row(std::size_t i) noexcept { return {data_.data() + i * dim_, dim_}; }
  std::span<const T> row(std::size_t i) const noexcept { return {data_.data() + i * dim_, dim_}; }
  T& operator()(std::size_t i, std::size_t k) noexcept { return data_[i * dim_ + k]; }
  T operator()(std::size_t i, std::size_t k) const noexcept { return data_[i * dim_ + k]; }

  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }

  bool all_finite() const;

  friend bool operator==(const Sequence&, const Sequence&) = default;

 private:
  std::size_t length_ = 0;
  std::size_t dim_ = 0;
  std::vector<T> data_;
};

/// The discretized output signal y: L steps of n channels.
template <class T>
using StateSequence = Sequence<T>;
/// External inputs x, one row per evaluation point.
template <class T>
using InputSequence = Sequence<T>;
/// Loss gradients with respect to each row of a StateSequence.
template <class T>
using CotangentSequence = Sequence<T>;

/// Batches are independent sequences solved one after another on a shared pool.
template <class T>
using SequenceBatch = std::vector<Sequence<T>>;

/// `count` row-major n x n matrices stored back to back.
template <class T>
class MatrixSequence {
 public:
  MatrixSequence() = default;
  MatrixSequence(std::size_t count, std::size_t n, T fill = T(0)) : count_(count), n_(n), data_(count * n * n, fill) {}

  std::size_t count() const noexcept { return count_; }
  std::size_t dim() const noexcept { return n_; }

  T* matrix(std::size_t i) noexcept { return data_.data() + i * n_ * n_; }
  const T* matrix(std::size_t i) const noexcept { return data_.data() + i * n_ * n_; }
  std::span<T> span(std::size_t i) noexcept { return {matrix(i), n_ * n_}; }
  std::span<const T> span(std::size_t i) const noexcept { return {matrix(i), n_ * n_}; }
  SmallMatrix<T> at(std::size_t i) const { return SmallMatrix<T>(n_, span(i)); }
  void set(std::size_t i, const SmallMatrix<T>& m);

  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }

 private:
  std::size_t count_ = 0;
  std::size_t n_ = 0;
  std::vector<T> data_;
};

/// Read-only vector parameter that does not take part in template argument
/// deduction, so callers may pass a std::vector.
template <class T>
using ConstView = std::type_identity_t<std::span<const T>>;
template <class T>
using MutableView = std::type_identity_t<std::span<T>>;

/// Values y(r - s_1), ..., y(r - s_P) handed to the dynamics at one point.
template <class T>
using ShiftedStates = std::span<const std::span<const T>>;

/// The right-hand side f of L[y](r) = f(y(r - s_1), ..., y(r - s_P), x(r), theta).
///
/// Parameters theta are bound into the callables. All callables must be
/// reentrant: the solvers invoke them concurrently for different points.
template <class T>
struct DynamicsSpec {
  std::size_t state_dim = 0;
  std::size_t input_dim = 0;
  std::size_t num_shifts = 1;

  /// out (n) = f(shifted, x).
  std::function<void(ShiftedStates<T> shifted, std::span<const T> x, std::span<T> out)> eval;

  /// out (n x n, row-major) = df / dy(r - s_p). Optional; central differences otherwise.
  std::function<void(ShiftedStates<T> shifted, std::span<const T> x, std::size_t p, std::span<T> out)> jacobian;

  /// Optional fused evaluation: f into `value`, all P Jacobians back to back into `jacobians`.
  std::function<void(ShiftedStates<T> shifted, std::span<const T> x, std::span<T> value, std::span<T> jacobians)>
      eval_with_jacobians;

  /// Throws ContractError when dimensions are zero or `eval` is missing.
  void validate() const;

  /// Evaluates f and every shift Jacobian using the cheapest hooks available.
  void linearize(ShiftedStates<T> shifted, std::span<const T> x, std::span<T> value, std::span<T> jacobians) const;
};

/// Central-difference Jacobian df/dy(r - s_p) at one point.
///
/// `h > 0` is used as the absolute step for every coordinate; `h == 0` picks
/// cbrt(eps) * max(1, |y_l|) per coordinate. Throws NumericDomainError naming
/// the coordinate when f returns a non-finite value.
template <class T>
void finite_difference_jacobian(const DynamicsSpec<T>& dynamics, ShiftedStates<T> shifted, std::span<const T> x,
                                std::size_t p, std::span<T> out, T h = T(0));

template <class T>
SmallMatrix<T> finite_difference_jacobian(const DynamicsSpec<T>& dynamics, ShiftedStates<T> shifted,
                                          std::span<const T> x, std::size_t p, T h = T(0));

/// Chunking of the parallel scan. The combination tree depends only on
/// `chunk_size`, never on the number of workers.
struct ScanOptions {
  std::size_t chunk_size = 256;
  ThreadPool* pool = nullptr;  ///< nullptr selects default_pool()

  ThreadPool& resolve_pool() const;
};

enum class InitGuess { zeros, user };

template <class T>
struct DeerConfig {
  static constexpr Precision precision = precision_of<T>();

  T tolerance = default_tolerance<T>();
  std::size_t max_iters = 100;
  InitGuess init_guess = InitGuess::zeros;
  /// Required when init_guess == user; shape must match the solve.
  std::optional<Sequence<T>> initial_sequence;
  /// Divide the max-abs change by max|y| before comparing with `tolerance`.
  bool relative_tolerance = false;
  /// A residual this many times larger than the first one counts as divergence.
  double divergence_factor = 1e6;
  /// Return the linear system of the final iteration alongside the solution.
  bool keep_linearization = true;
  ScanOptions scan;

  void validate() const;
};

struct DeerReport {
  std::size_t iterations = 0;
  std::vector<double> residual_history;
  bool converged = false;
  double wall_time = 0.0;
};

}  // namespace deer

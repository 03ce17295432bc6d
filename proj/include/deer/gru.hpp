// SPDX-License-Identifier: Apache-2.0
//
// GRU cell in row-vector convention, W: m x n, U: n x n:
//
//     z  = sigmoid(x W_z + y U_z + b_z)
//     r  = sigmoid(x W_r + y U_r + b_r)
//     h~ = tanh(x W_h + (r * y) U_h + b_h)
//     y' = (1 - z) * y + z * h~
//
// with * elementwise. Flat parameter order (row-major within each block):
// W_z, W_r, W_h, U_z, U_r, U_h, b_z, b_r, b_h.
#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "deer/core.hpp"
#include "deer/smallmat.hpp"

namespace deer {

template <class T>
struct GruParams {
  std::size_t input_dim = 0;  ///< m
  std::size_t state_dim = 0;  ///< n
  std::vector<T> W_z, W_r, W_h;
  std::vector<T> U_z, U_r, U_h;
  std::vector<T> b_z, b_r, b_h;

  static GruParams zeros(std::size_t m, std::size_t n);
  /// Weights uniform in (-1/sqrt(n), 1/sqrt(n)), zero biases.
  static GruParams random(std::size_t m, std::size_t n, std::uint64_t seed);

  static std::size_t parameter_count(std::size_t m, std::size_t n) { return 3 * m * n + 3 * n * n + 3 * n; }
  std::size_t parameter_count() const { return parameter_count(input_dim, state_dim); }

  std::vector<T> flatten() const;
  static GruParams unflatten(std::size_t m, std::size_t n, std::span<const T> flat);

  /// Throws ContractError on inconsistent shapes, NumericDomainError on non-finite entries.
  void validate() const;
};

/// {"input_dim": m, "state_dim": n, "params": [flat values]}
template <class T>
std::string gru_to_json(const GruParams<T>& params);
template <class T>
GruParams<T> gru_from_json(const std::string& text);

/// Binary blob: magic "DEERGRU1", uint64 m, uint64 n, then the flat values as
/// little-endian float64.
template <class T>
void gru_save(std::ostream& out, const GruParams<T>& params);
template <class T>
GruParams<T> gru_load(std::istream& in);

template <class T>
std::vector<T> gru_step(const GruParams<T>& params, ConstView<T> y_prev, ConstView<T> x);

/// d y' / d y_prev, row-major n x n.
template <class T>
SmallMatrix<T> gru_jacobian(const GruParams<T>& params, ConstView<T> y_prev, ConstView<T> x);

/// Recurrence cell f(y_{i-1}, x_i) with analytic and fused Jacobian hooks.
template <class T>
DynamicsSpec<T> gru_dynamics(GruParams<T> params);

/// (df/dtheta) dtheta for a flat parameter direction.
template <class T>
void gru_param_jvp(const GruParams<T>& params, ConstView<T> y_prev, ConstView<T> x,
                   ConstView<T> dtheta, MutableView<T> out);

/// Accumulates g^T df/dtheta into grad_theta (flat) and, when non-empty,
/// g^T df/dx into grad_x.
template <class T>
void gru_vjp(const GruParams<T>& params, ConstView<T> y_prev, ConstView<T> x, ConstView<T> g,
             MutableView<T> grad_theta, MutableView<T> grad_x);

/// L x m standard normal inputs.
template <class T>
Sequence<T> gaussian_inputs(std::size_t length, std::size_t dim, std::uint64_t seed);

}  // namespace deer

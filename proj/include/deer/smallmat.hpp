// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <utility>
#include <vector>

namespace deer {

/// Dense square matrix, row-major, sized for the n = 1..64 range DEER targets.
template <class T>
class SmallMatrix {
 public:
  SmallMatrix() = default;
  explicit SmallMatrix(std::size_t n, T fill = T(0)) : n_(n), data_(n * n, fill) {}
  /// Row-major construction; `values.size()` must equal n * n.
  SmallMatrix(std::size_t n, std::initializer_list<T> values);
  SmallMatrix(std::size_t n, std::span<const T> values);

  static SmallMatrix identity(std::size_t n);
  static SmallMatrix diagonal(std::span<const T> diag);

  std::size_t size() const noexcept { return n_; }
  T& operator()(std::size_t i, std::size_t j) { return data_[i * n_ + j]; }
  T operator()(std::size_t i, std::size_t j) const { return data_[i * n_ + j]; }
  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }

  /// Maximum absolute column sum.
  T norm1() const;
  bool all_finite() const;

  SmallMatrix& operator+=(const SmallMatrix& other);
  SmallMatrix& operator-=(const SmallMatrix& other);
  SmallMatrix& operator*=(T scale);

  friend bool operator==(const SmallMatrix&, const SmallMatrix&) = default;

 private:
  std::size_t n_ = 0;
  std::vector<T> data_;
};

template <class T>
SmallMatrix<T> operator+(SmallMatrix<T> a, const SmallMatrix<T>& b) { return a += b; }
template <class T>
SmallMatrix<T> operator-(SmallMatrix<T> a, const SmallMatrix<T>& b) { return a -= b; }
template <class T>
SmallMatrix<T> operator*(T s, SmallMatrix<T> a) { return a *= s; }

template <class T>
SmallMatrix<T> transpose(const SmallMatrix<T>& a);

/// Throws ContractError on shape mismatch.
template <class T>
SmallMatrix<T> matmul(const SmallMatrix<T>& a, const SmallMatrix<T>& b);

template <class T>
std::vector<T> matvec(const SmallMatrix<T>& a, std::span<const T> x);
template <class T>
std::vector<T> matvec(const SmallMatrix<T>& a, const std::vector<T>& x) {
  return matvec(a, std::span<const T>(x));
}

/// Solves a x = b by Gaussian elimination with row pivoting.
/// Throws SingularMatrixError when a pivot falls below 1e3 * eps * ||a||_1.
template <class T>
std::vector<T> solve(const SmallMatrix<T>& a, std::span<const T> b);
template <class T>
std::vector<T> solve(const SmallMatrix<T>& a, const std::vector<T>& b) {
  return solve(a, std::span<const T>(b));
}

/// Solves a X = b for a matrix right-hand side.
template <class T>
SmallMatrix<T> solve(const SmallMatrix<T>& a, const SmallMatrix<T>& b);

/// e^A by scaling and squaring with a [6/6] Pade approximant.
/// Throws NumericDomainError on non-finite input.
template <class T>
SmallMatrix<T> expm(const SmallMatrix<T>& a);

/// phi_1(A) = A^{-1}(e^A - I), finite for singular A.
template <class T>
SmallMatrix<T> phi1(const SmallMatrix<T>& a);

/// Both e^A and phi_1(A) from a single exponential of the block matrix
/// [[A, I], [0, 0]], whose top-right block is phi_1(A).
template <class T>
std::pair<SmallMatrix<T>, SmallMatrix<T>> expm_phi1(const SmallMatrix<T>& a);

/// Raw kernels over contiguous row-major n x n storage, used on hot paths
/// where the matrices live inside larger per-step arrays.
namespace kernels {

/// out = a * b. `out` must not alias `a` or `b`.
template <class T>
void gemm(std::size_t n, const T* a, const T* b, T* out);

/// y = a * x (+ c when c is non-null). `y` must not alias `x`.
template <class T>
void gemv(std::size_t n, const T* a, const T* x, const T* c, T* y);

/// y = a^T * x (+ c when c is non-null). `y` must not alias `x`.
template <class T>
void gemv_transposed(std::size_t n, const T* a, const T* x, const T* c, T* y);

/// out = a^T * b. `out` must not alias `a` or `b`.
template <class T>
void gemm_transposed(std::size_t n, const T* a, const T* b, T* out);

}  // namespace kernels

}  // namespace deer

// SPDX-License-Identifier: Apache-2.0
#include "deer/smallmat.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "deer/errors.hpp"

namespace deer {

namespace {

template <class T>
using RowMajor = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;

// Below this size plain loops beat Eigen's dynamic-size dispatch.
constexpr std::size_t kLoopKernelMax = 4;

template <class T>
void require_same_size(const SmallMatrix<T>& a, const SmallMatrix<T>& b, const char* op) {
  if (a.size() != b.size())
    throw ContractError(std::string(op) + ": size mismatch (" + std::to_string(a.size()) +
                        " vs " + std::to_string(b.size()) + ")");
}

template <class T>
void require_finite(const SmallMatrix<T>& a, const char* op) {
  if (!a.all_finite()) throw NumericDomainError(std::string(op) + ": non-finite matrix entry");
}

// Degree-6 diagonal Pade coefficients for exp.
constexpr double kPade6[7] = {1.0,          1.0 / 2.0,     5.0 / 44.0,     1.0 / 66.0,
                              1.0 / 792.0,  1.0 / 15840.0, 1.0 / 665280.0};

// Scaled norm bound under which the [6/6] approximant is accurate to double precision.
constexpr double kPadeTheta = 0.5;

// phi_1 switches to its Taylor series below this 1-norm.
constexpr double kPhiTaylorNorm = 1e-2;
constexpr int kPhiTaylorTerms = 12;

// Overwrites the n x cols row-major block `x` with a^{-1} x.
template <class T>
void solve_in_place(const SmallMatrix<T>& a, T* x, std::size_t cols) {
  const std::size_t n = a.size();
  const T threshold = T(1e3) * std::numeric_limits<T>::epsilon() * a.norm1();
  SmallMatrix<T> lu = a;
  for (std::size_t k = 0; k < n; ++k) {
    std::size_t pivot = k;
    for (std::size_t i = k + 1; i < n; ++i)
      if (std::abs(lu(i, k)) > std::abs(lu(pivot, k))) pivot = i;
    if (!(std::abs(lu(pivot, k)) > threshold))
      throw SingularMatrixError("solve: pivot " + std::to_string(double(lu(pivot, k))) + " in column " +
                                std::to_string(k) + " below threshold " + std::to_string(double(threshold)));
    if (pivot != k) {
      for (std::size_t j = 0; j < n; ++j) std::swap(lu(k, j), lu(pivot, j));
      for (std::size_t j = 0; j < cols; ++j) std::swap(x[k * cols + j], x[pivot * cols + j]);
    }
    for (std::size_t i = k + 1; i < n; ++i) {
      const T factor = lu(i, k) / lu(k, k);
      if (factor == T(0)) continue;
      for (std::size_t j = k; j < n; ++j) lu(i, j) -= factor * lu(k, j);
      for (std::size_t j = 0; j < cols; ++j) x[i * cols + j] -= factor * x[k * cols + j];
    }
  }
  for (std::size_t k = n; k-- > 0;) {
    for (std::size_t j = 0; j < cols; ++j) {
      T acc = x[k * cols + j];
      for (std::size_t i = k + 1; i < n; ++i) acc -= lu(k, i) * x[i * cols + j];
      x[k * cols + j] = acc / lu(k, k);
    }
  }
}

template <class T>
SmallMatrix<T> pade_exp(const SmallMatrix<T>& a) {
  const std::size_t n = a.size();
  const T norm = a.norm1();
  int squarings = 0;
  if (norm > T(kPadeTheta)) squarings = static_cast<int>(std::ceil(std::log2(double(norm) / kPadeTheta)));

  RowMajor<T> A = Eigen::Map<const RowMajor<T>>(a.data().data(), n, n);
  if (squarings > 0) A *= T(std::ldexp(1.0, -squarings));
  const RowMajor<T> I = RowMajor<T>::Identity(n, n);
  const RowMajor<T> A2 = A * A;
  const RowMajor<T> A4 = A2 * A2;
  const RowMajor<T> A6 = A4 * A2;
  const RowMajor<T> U = A * (T(kPade6[1]) * I + T(kPade6[3]) * A2 + T(kPade6[5]) * A4);
  const RowMajor<T> V = T(kPade6[0]) * I + T(kPade6[2]) * A2 + T(kPade6[4]) * A4 + T(kPade6[6]) * A6;

  SmallMatrix<T> num(n), den(n);
  Eigen::Map<RowMajor<T>>(num.data().data(), n, n) = V + U;
  Eigen::Map<RowMajor<T>>(den.data().data(), n, n) = V - U;
  SmallMatrix<T> r = solve(den, num);
  for (int s = 0; s < squarings; ++s) r = matmul(r, r);
  return r;
}

// phi_1(A) = sum_k A^k / (k+1)!, evaluated by Horner's rule.
template <class T>
SmallMatrix<T> phi1_taylor(const SmallMatrix<T>& a) {
  const std::size_t n = a.size();
  double factorials[kPhiTaylorTerms + 1];
  factorials[0] = 1.0;
  for (int k = 1; k <= kPhiTaylorTerms; ++k) factorials[k] = factorials[k - 1] * k;

  SmallMatrix<T> p = SmallMatrix<T>::identity(n);
  p *= T(1.0 / factorials[kPhiTaylorTerms]);
  for (int k = kPhiTaylorTerms - 2; k >= 0; --k) {
    p = matmul(a, p);
    for (std::size_t i = 0; i < n; ++i) p(i, i) += T(1.0 / factorials[k + 1]);
  }
  return p;
}

}  // namespace

template <class T>
SmallMatrix<T>::SmallMatrix(std::size_t n, std::initializer_list<T> values)
    : SmallMatrix(n, std::span<const T>(values.begin(), values.size())) {}

template <class T>
SmallMatrix<T>::SmallMatrix(std::size_t n, std::span<const T> values) : n_(n), data_(values.begin(), values.end()) {
  if (values.size() != n * n)
    throw ContractError("SmallMatrix: expected " + std::to_string(n * n) + " values, got " +
                        std::to_string(values.size()));
}

template <class T>
SmallMatrix<T> SmallMatrix<T>::identity(std::size_t n) {
  SmallMatrix m(n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = T(1);
  return m;
}

template <class T>
SmallMatrix<T> SmallMatrix<T>::diagonal(std::span<const T> diag) {
  SmallMatrix m(diag.size());
  for (std::size_t i = 0; i < diag.size(); ++i) m(i, i) = diag[i];
  return m;
}

template <class T>
T SmallMatrix<T>::norm1() const {
  T best = 0;
  for (std::size_t j = 0; j < n_; ++j) {
    T col = 0;
    for (std::size_t i = 0; i < n_; ++i) col += std::abs(data_[i * n_ + j]);
    best = std::max(best, col);
  }
  return best;
}

template <class T>
bool SmallMatrix<T>::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
}

template <class T>
SmallMatrix<T>& SmallMatrix<T>::operator+=(const SmallMatrix& other) {
  require_same_size(*this, other, "operator+=");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

template <class T>
SmallMatrix<T>& SmallMatrix<T>::operator-=(const SmallMatrix& other) {
  require_same_size(*this, other, "operator-=");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= other.data_[i];
  return *this;
}

template <class T>
SmallMatrix<T>& SmallMatrix<T>::operator*=(T scale) {
  for (auto& v : data_) v *= scale;
  return *this;
}

template <class T>
SmallMatrix<T> transpose(const SmallMatrix<T>& a) {
  SmallMatrix<T> t(a.size());
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < a.size(); ++j) t(j, i) = a(i, j);
  return t;
}

template <class T>
SmallMatrix<T> matmul(const SmallMatrix<T>& a, const SmallMatrix<T>& b) {
  require_same_size(a, b, "matmul");
  SmallMatrix<T> out(a.size());
  kernels::gemm(a.size(), a.data().data(), b.data().data(), out.data().data());
  return out;
}

template <class T>
std::vector<T> matvec(const SmallMatrix<T>& a, std::span<const T> x) {
  if (x.size() != a.size())
    throw ContractError("matvec: vector length " + std::to_string(x.size()) + " != " + std::to_string(a.size()));
  std::vector<T> y(a.size());
  kernels::gemv<T>(a.size(), a.data().data(), x.data(), nullptr, y.data());
  return y;
}

template <class T>
SmallMatrix<T> solve(const SmallMatrix<T>& a, const SmallMatrix<T>& b) {
  require_same_size(a, b, "solve");
  SmallMatrix<T> x = b;
  solve_in_place(a, x.data().data(), a.size());
  return x;
}

template <class T>
std::vector<T> solve(const SmallMatrix<T>& a, std::span<const T> b) {
  if (b.size() != a.size())
    throw ContractError("solve: right-hand side length " + std::to_string(b.size()) + " != " +
                        std::to_string(a.size()));
  std::vector<T> x(b.begin(), b.end());
  solve_in_place(a, x.data(), 1);
  return x;
}

template <class T>
SmallMatrix<T> expm(const SmallMatrix<T>& a) {
  require_finite(a, "expm");
  if (a.size() == 0) return a;
  return pade_exp(a);
}

template <class T>
SmallMatrix<T> phi1(const SmallMatrix<T>& a) {
  return expm_phi1(a).second;
}

template <class T>
std::pair<SmallMatrix<T>, SmallMatrix<T>> expm_phi1(const SmallMatrix<T>& a) {
  require_finite(a, "phi1");
  const std::size_t n = a.size();
  if (n == 0) return {a, a};
  if (a.norm1() < T(kPhiTaylorNorm)) {
    SmallMatrix<T> phi = phi1_taylor(a);
    // e^A = I + A phi_1(A)
    SmallMatrix<T> e = matmul(a, phi);
    for (std::size_t i = 0; i < n; ++i) e(i, i) += T(1);
    return {std::move(e), std::move(phi)};
  }
  SmallMatrix<T> block(2 * n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) block(i, j) = a(i, j);
    block(i, n + i) = T(1);
  }
  const SmallMatrix<T> e_block = pade_exp(block);
  SmallMatrix<T> e(n), phi(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      e(i, j) = e_block(i, j);
      phi(i, j) = e_block(i, n + j);
    }
  }
  return {std::move(e), std::move(phi)};
}

namespace kernels {

template <class T>
void gemm(std::size_t n, const T* a, const T* b, T* out) {
  if (n <= kLoopKernelMax) {
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        T acc = 0;
        for (std::size_t k = 0; k < n; ++k) acc += a[i * n + k] * b[k * n + j];
        out[i * n + j] = acc;
      }
    }
    return;
  }
  Eigen::Map<RowMajor<T>>(out, n, n).noalias() =
      Eigen::Map<const RowMajor<T>>(a, n, n) * Eigen::Map<const RowMajor<T>>(b, n, n);
}

template <class T>
void gemm_transposed(std::size_t n, const T* a, const T* b, T* out) {
  if (n <= kLoopKernelMax) {
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        T acc = 0;
        for (std::size_t k = 0; k < n; ++k) acc += a[k * n + i] * b[k * n + j];
        out[i * n + j] = acc;
      }
    }
    return;
  }
  Eigen::Map<RowMajor<T>>(out, n, n).noalias() =
      Eigen::Map<const RowMajor<T>>(a, n, n).transpose() * Eigen::Map<const RowMajor<T>>(b, n, n);
}

template <class T>
void gemv(std::size_t n, const T* a, const T* x, const T* c, T* y) {
  if (n <= kLoopKernelMax) {
    for (std::size_t i = 0; i < n; ++i) {
      T acc = c ? c[i] : T(0);
      for (std::size_t k = 0; k < n; ++k) acc += a[i * n + k] * x[k];
      y[i] = acc;
    }
    return;
  }
  Eigen::Map<Vec<T>> yv(y, n);
  yv.noalias() = Eigen::Map<const RowMajor<T>>(a, n, n) * Eigen::Map<const Vec<T>>(x, n);
  if (c) yv += Eigen::Map<const Vec<T>>(c, n);
}

template <class T>
void gemv_transposed(std::size_t n, const T* a, const T* x, const T* c, T* y) {
  if (n <= kLoopKernelMax) {
    for (std::size_t i = 0; i < n; ++i) {
      T acc = c ? c[i] : T(0);
      for (std::size_t k = 0; k < n; ++k) acc += a[k * n + i] * x[k];
      y[i] = acc;
    }
    return;
  }
  Eigen::Map<Vec<T>> yv(y, n);
  yv.noalias() = Eigen::Map<const RowMajor<T>>(a, n, n).transpose() * Eigen::Map<const Vec<T>>(x, n);
  if (c) yv += Eigen::Map<const Vec<T>>(c, n);
}

}  // namespace kernels

#define DEER_INSTANTIATE_SMALLMAT(T)                                                          \
  template class SmallMatrix<T>;                                                              \
  template SmallMatrix<T> transpose(const SmallMatrix<T>&);                                   \
  template SmallMatrix<T> matmul(const SmallMatrix<T>&, const SmallMatrix<T>&);               \
  template std::vector<T> matvec(const SmallMatrix<T>&, std::span<const T>);                  \
  template std::vector<T> solve(const SmallMatrix<T>&, std::span<const T>);                   \
  template SmallMatrix<T> solve(const SmallMatrix<T>&, const SmallMatrix<T>&);                \
  template SmallMatrix<T> expm(const SmallMatrix<T>&);                                        \
  template SmallMatrix<T> phi1(const SmallMatrix<T>&);                                        \
  template std::pair<SmallMatrix<T>, SmallMatrix<T>> expm_phi1(const SmallMatrix<T>&);        \
  template void kernels::gemm(std::size_t, const T*, const T*, T*);                           \
  template void kernels::gemm_transposed(std::size_t, const T*, const T*, T*);                \
  template void kernels::gemv(std::size_t, const T*, const T*, const T*, T*);                 \
  template void kernels::gemv_transposed(std::size_t, const T*, const T*, const T*, T*);

DEER_INSTANTIATE_SMALLMAT(float)
DEER_INSTANTIATE_SMALLMAT(double)

}  // namespace deer

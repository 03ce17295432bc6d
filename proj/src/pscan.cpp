// SPDX-License-Identifier: Apache-2.0
#include "deer/pscan.hpp"

#include <algorithm>
#include <atomic>
#include <bit>
#include <string>

#include "deer/errors.hpp"
#include "deer/thread_pool.hpp"

namespace deer {

namespace {

std::atomic<std::uint64_t> g_scan_passes{0};
std::atomic<bool> g_sign_flip{false};

// y_i = A_i y_{i-1} + b_i over physical rows in order.
template <class T>
struct ForwardSource {
  const MatrixSequence<T>& A;
  const Sequence<T>& b;
  std::size_t n;
  T sign;

  std::size_t out_row(std::size_t j) const { return j; }
  // out = M_j x + v_j
  void step(std::size_t j, const T* x, T* out) const {
    kernels::gemv<T>(n, A.matrix(j), x, nullptr, out);
    const T* bj = b.row(j).data();
    for (std::size_t k = 0; k < n; ++k) out[k] += sign * bj[k];
  }
  // out = M_j acc
  void compose(std::size_t j, const T* acc, T* out) const { kernels::gemm<T>(n, A.matrix(j), acc, out); }
  void load_matrix(std::size_t j, T* out) const { std::copy_n(A.matrix(j), n * n, out); }
  void load_offset(std::size_t j, T* out) const {
    const T* bj = b.row(j).data();
    for (std::size_t k = 0; k < n; ++k) out[k] = sign * bj[k];
  }
};

// Logical step j handles physical row L-1-j with transition A_{L-j}^T. The
// first logical step has no transition (its carried-in state is zero), so it
// acts as the identity.
template <class T>
struct ReverseTransposedSource {
  const MatrixSequence<T>& A;
  const Sequence<T>& g;
  std::size_t n;
  std::size_t L;
  T sign;

  std::size_t out_row(std::size_t j) const { return L - 1 - j; }
  void step(std::size_t j, const T* x, T* out) const {
    const T* gj = g.row(L - 1 - j).data();
    if (j == 0) {
      for (std::size_t k = 0; k < n; ++k) out[k] = x[k] + sign * gj[k];
      return;
    }
    kernels::gemv_transposed<T>(n, A.matrix(L - j), x, nullptr, out);
    for (std::size_t k = 0; k < n; ++k) out[k] += sign * gj[k];
  }
  void compose(std::size_t j, const T* acc, T* out) const {
    if (j == 0) {
      std::copy_n(acc, n * n, out);
      return;
    }
    kernels::gemm_transposed<T>(n, A.matrix(L - j), acc, out);
  }
  void load_matrix(std::size_t j, T* out) const {
    if (j == 0) {
      std::fill_n(out, n * n, T(0));
      for (std::size_t k = 0; k < n; ++k) out[k * n + k] = T(1);
      return;
    }
    const T* a = A.matrix(L - j);
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c < n; ++c) out[r * n + c] = a[c * n + r];
  }
  void load_offset(std::size_t j, T* out) const {
    const T* gj = g.row(L - 1 - j).data();
    for (std::size_t k = 0; k < n; ++k) out[k] = sign * gj[k];
  }
};

// Tree node update: later <- earlier . later, in place on `later`.
template <class T>
void combine_into(std::size_t n, const T* earlier_m, const T* earlier_v, T* later_m, T* later_v, T sign,
                  std::vector<T>& scratch) {
  scratch.resize(n * n + n);
  T* m = scratch.data();
  T* v = scratch.data() + n * n;
  kernels::gemm<T>(n, later_m, earlier_m, m);
  kernels::gemv<T>(n, later_m, earlier_v, nullptr, v);
  for (std::size_t k = 0; k < n; ++k) later_v[k] = v[k] + sign * later_v[k];
  std::copy_n(m, n * n, later_m);
}

template <class T, class Source>
void run_scan(const Source& src, std::size_t L, std::size_t n, ConstView<T> y0, Sequence<T>& out,
              const ScanOptions& options) {
  g_scan_passes.fetch_add(1, std::memory_order_relaxed);
  if (L == 0) return;
  const std::size_t chunk = options.chunk_size;
  if (chunk == 0) throw ContractError("scan: chunk_size must be positive");
  const std::size_t chunks = (L + chunk - 1) / chunk;
  const T sign = g_sign_flip.load(std::memory_order_relaxed) ? T(-1) : T(1);

  auto replay = [&](std::size_t c, const T* start) {
    const std::size_t begin = c * chunk;
    const std::size_t end = std::min(L, begin + chunk);
    const T* prev = start;
    for (std::size_t j = begin; j < end; ++j) {
      T* row = out.row(src.out_row(j)).data();
      src.step(j, prev, row);
      prev = row;
    }
  };

  if (chunks == 1) {
    replay(0, y0.data());
    return;
  }
  ThreadPool& pool = options.resolve_pool();

  // Chunk aggregates (M | v) for chunks 0..C-2; the first one starts from y0
  // so every exclusive prefix below carries an actual state in its v part.
  // Tree storage is padded to a power of two with identity elements.
  const std::size_t leaves = std::bit_ceil(chunks);
  MatrixSequence<T> tree_m(leaves, n);
  Sequence<T> tree_v(leaves, n);
  for (std::size_t c = chunks - 1; c < leaves; ++c) {
    T* m = tree_m.matrix(c);
    for (std::size_t k = 0; k < n; ++k) m[k * n + k] = T(1);
  }
  pool.parallel_for(chunks - 1, [&](std::size_t c) {
    const std::size_t begin = c * chunk;
    const std::size_t end = std::min(L, begin + chunk);
    std::vector<T> tmp(n * n + n);
    T* m = tree_m.matrix(c);
    T* v = tree_v.row(c).data();
    src.load_matrix(begin, m);
    if (c == 0)
      src.step(begin, y0.data(), v);
    else
      src.load_offset(begin, v);
    for (std::size_t j = begin + 1; j < end; ++j) {
      src.compose(j, m, tmp.data());
      std::copy_n(tmp.data(), n * n, m);
      src.step(j, v, tmp.data() + n * n);
      std::copy_n(tmp.data() + n * n, n, v);
    }
  });

  // Up-sweep.
  for (std::size_t d = 1; d < leaves; d *= 2) {
    pool.parallel_for(leaves / (2 * d), [&](std::size_t k) {
      std::vector<T> scratch;
      const std::size_t right = (k + 1) * 2 * d - 1;
      const std::size_t left = right - d;
      combine_into<T>(n, tree_m.matrix(left), tree_v.row(left).data(), tree_m.matrix(right),
                      tree_v.row(right).data(), sign, scratch);
    });
  }
  // Down-sweep to exclusive prefixes.
  {
    T* root_m = tree_m.matrix(leaves - 1);
    std::fill_n(root_m, n * n, T(0));
    for (std::size_t k = 0; k < n; ++k) root_m[k * n + k] = T(1);
    std::fill_n(tree_v.row(leaves - 1).data(), n, T(0));
  }
  for (std::size_t d = leaves / 2; d >= 1; d /= 2) {
    pool.parallel_for(leaves / (2 * d), [&](std::size_t k) {
      std::vector<T> scratch;
      std::vector<T> saved_m(n * n), saved_v(n);
      const std::size_t right = (k + 1) * 2 * d - 1;
      const std::size_t left = right - d;
      T* lm = tree_m.matrix(left);
      T* lv = tree_v.row(left).data();
      T* rm = tree_m.matrix(right);
      T* rv = tree_v.row(right).data();
      // left <- prefix; right <- prefix . (left subtree)
      std::copy_n(lm, n * n, saved_m.data());
      std::copy_n(lv, n, saved_v.data());
      std::copy_n(rm, n * n, lm);
      std::copy_n(rv, n, lv);
      combine_into<T>(n, lm, lv, saved_m.data(), saved_v.data(), sign, scratch);
      std::copy_n(saved_m.data(), n * n, rm);
      std::copy_n(saved_v.data(), n, rv);
    });
  }

  pool.parallel_for(chunks, [&](std::size_t c) { replay(c, c == 0 ? y0.data() : tree_v.row(c).data()); });
}

template <class T>
void check_system(ConstView<T> y0, const MatrixSequence<T>& A, const Sequence<T>& b, const char* op) {
  const std::size_t n = y0.size();
  if (A.count() != b.length())
    throw ContractError(std::string(op) + ": " + std::to_string(A.count()) + " matrices but " +
                        std::to_string(b.length()) + " offsets");
  if (b.length() > 0 && (A.dim() != n || b.dim() != n))
    throw ContractError(std::string(op) + ": dimension mismatch (state " + std::to_string(n) + ", matrices " +
                        std::to_string(A.dim()) + ", offsets " + std::to_string(b.dim()) + ")");
}

template <class T>
void pack_elements(const ScanElement<T>& init, std::span<const ScanElement<T>> elems, MatrixSequence<T>& A,
                   Sequence<T>& b) {
  const std::size_t n = init.size();
  if (init.v.size() != n) throw ContractError("scan: init element has inconsistent shapes");
  A = MatrixSequence<T>(elems.size(), n);
  b = Sequence<T>(elems.size(), n);
  for (std::size_t i = 0; i < elems.size(); ++i) {
    if (elems[i].size() != n || elems[i].v.size() != n)
      throw ContractError("scan: element " + std::to_string(i) + " has size " + std::to_string(elems[i].size()) +
                          ", expected " + std::to_string(n));
    A.set(i, elems[i].M);
    std::copy(elems[i].v.begin(), elems[i].v.end(), b.row(i).begin());
  }
}

template <class T>
std::vector<std::vector<T>> unpack_rows(const Sequence<T>& s) {
  std::vector<std::vector<T>> rows(s.length());
  for (std::size_t i = 0; i < s.length(); ++i) rows[i].assign(s.row(i).begin(), s.row(i).end());
  return rows;
}

}  // namespace

template <class T>
ScanElement<T> combine(const ScanElement<T>& earlier, const ScanElement<T>& later) {
  if (earlier.size() != later.size() || earlier.v.size() != earlier.size() || later.v.size() != later.size())
    throw ContractError("combine: element sizes differ");
  const T sign = g_sign_flip.load(std::memory_order_relaxed) ? T(-1) : T(1);
  ScanElement<T> out{matmul(later.M, earlier.M), matvec(later.M, std::span<const T>(earlier.v))};
  for (std::size_t k = 0; k < out.v.size(); ++k) out.v[k] += sign * later.v[k];
  return out;
}

template <class T>
std::vector<std::vector<T>> scan_inclusive(const ScanElement<T>& init, std::span<const ScanElement<T>> elems,
                                           const ScanOptions& options) {
  MatrixSequence<T> A;
  Sequence<T> b;
  pack_elements(init, elems, A, b);
  Sequence<T> out(elems.size(), init.size());
  scan_recurrence<T>(init.v, A, b, out, options);
  return unpack_rows(out);
}

template <class T>
std::vector<std::vector<T>> sequential_scan(const ScanElement<T>& init, std::span<const ScanElement<T>> elems) {
  MatrixSequence<T> A;
  Sequence<T> b;
  pack_elements(init, elems, A, b);
  Sequence<T> out(elems.size(), init.size());
  sequential_recurrence<T>(init.v, A, b, out);
  return unpack_rows(out);
}

template <class T>
void scan_recurrence(ConstView<T> y0, const MatrixSequence<T>& A, const Sequence<T>& b, Sequence<T>& out,
                     const ScanOptions& options) {
  check_system(y0, A, b, "scan_recurrence");
  const std::size_t n = y0.size();
  if (out.length() != b.length() || out.dim() != n) out = Sequence<T>(b.length(), n);
  const T sign = g_sign_flip.load(std::memory_order_relaxed) ? T(-1) : T(1);
  run_scan<T>(ForwardSource<T>{A, b, n, sign}, b.length(), n, y0, out, options);
}

template <class T>
void sequential_recurrence(ConstView<T> y0, const MatrixSequence<T>& A, const Sequence<T>& b,
                           Sequence<T>& out) {
  check_system(y0, A, b, "sequential_recurrence");
  const std::size_t n = y0.size();
  const std::size_t L = b.length();
  if (out.length() != L || out.dim() != n) out = Sequence<T>(L, n);
  std::vector<T> prev(y0.begin(), y0.end());
  for (std::size_t i = 0; i < L; ++i) {
    const T* a = A.matrix(i);
    for (std::size_t r = 0; r < n; ++r) {
      T acc = b(i, r);
      for (std::size_t c = 0; c < n; ++c) acc += a[r * n + c] * prev[c];
      out(i, r) = acc;
    }
    std::copy(out.row(i).begin(), out.row(i).end(), prev.begin());
  }
}

template <class T>
void scan_reverse_transposed(const MatrixSequence<T>& A, const Sequence<T>& g, Sequence<T>& out,
                             const ScanOptions& options) {
  const std::size_t n = g.dim();
  const std::vector<T> zero(n, T(0));
  check_system<T>(zero, A, g, "scan_reverse_transposed");
  const std::size_t L = g.length();
  if (out.length() != L || out.dim() != n) out = Sequence<T>(L, n);
  const T sign = g_sign_flip.load(std::memory_order_relaxed) ? T(-1) : T(1);
  run_scan<T>(ReverseTransposedSource<T>{A, g, n, L, sign}, L, n, zero, out, options);
}

template <class T>
void sequential_reverse_transposed(const MatrixSequence<T>& A, const Sequence<T>& g, Sequence<T>& out) {
  const std::size_t n = g.dim();
  const std::vector<T> zero(n, T(0));
  check_system<T>(zero, A, g, "sequential_reverse_transposed");
  const std::size_t L = g.length();
  if (out.length() != L || out.dim() != n) out = Sequence<T>(L, n);
  for (std::size_t i = L; i-- > 0;) {
    for (std::size_t r = 0; r < n; ++r) {
      T acc = g(i, r);
      if (i + 1 < L) {
        const T* a = A.matrix(i + 1);
        for (std::size_t c = 0; c < n; ++c) acc += a[c * n + r] * out(i + 1, c);
      }
      out(i, r) = acc;
    }
  }
}

std::uint64_t scan_pass_count() noexcept {
  return g_scan_passes.load(std::memory_order_relaxed);
}

namespace testing {
void set_combine_sign_flip(bool enabled) noexcept { g_sign_flip.store(enabled, std::memory_order_relaxed); }
bool combine_sign_flip() noexcept { return g_sign_flip.load(std::memory_order_relaxed); }
}  // namespace testing

#define DEER_INSTANTIATE_PSCAN(T)                                                                                 \
  template ScanElement<T> combine(const ScanElement<T>&, const ScanElement<T>&);                                  \
  template std::vector<std::vector<T>> scan_inclusive(const ScanElement<T>&, std::span<const ScanElement<T>>,     \
                                                      const ScanOptions&);                                        \
  template std::vector<std::vector<T>> sequential_scan(const ScanElement<T>&, std::span<const ScanElement<T>>);   \
  template void scan_recurrence(std::span<const T>, const MatrixSequence<T>&, const Sequence<T>&, Sequence<T>&,   \
                                const ScanOptions&);                                                              \
  template void sequential_recurrence(std::span<const T>, const MatrixSequence<T>&, const Sequence<T>&,           \
                                      Sequence<T>&);                                                              \
  template void scan_reverse_transposed(const MatrixSequence<T>&, const Sequence<T>&, Sequence<T>&,               \
                                        const ScanOptions&);                                                      \
  template void sequential_reverse_transposed(const MatrixSequence<T>&, const Sequence<T>&, Sequence<T>&);

DEER_INSTANTIATE_PSCAN(float)
DEER_INSTANTIATE_PSCAN(double)

}  // namespace deer

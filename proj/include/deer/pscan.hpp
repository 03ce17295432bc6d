// SPDX-License-Identifier: Apache-2.0
//
// Associative scan over (M | v) pairs, the solver for every linearized DEER
// system. Composition follows
//
//     (M_a | v_a) . (M_b | v_b) = (M_b M_a | M_b v_a + v_b),
//
// with `a` the earlier element, so prefix compositions starting from
// (I | y_0) carry the states of y_i = M_i y_{i-1} + v_i in their v part.
#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "deer/core.hpp"
#include "deer/smallmat.hpp"

namespace deer {

template <class T>
struct ScanElement {
  SmallMatrix<T> M;
  std::vector<T> v;

  static ScanElement identity(std::size_t n) { return {SmallMatrix<T>::identity(n), std::vector<T>(n, T(0))}; }
  std::size_t size() const noexcept { return M.size(); }
};

/// Composes `earlier` then `later`. Throws ContractError on mismatched sizes.
template <class T>
ScanElement<T> combine(const ScanElement<T>& earlier, const ScanElement<T>& later);

/// v parts of init.e_1, init.e_1.e_2, ... computed with the chunked parallel
/// scan. Empty `elems` yields an empty result.
template <class T>
std::vector<std::vector<T>> scan_inclusive(const ScanElement<T>& init, std::span<const ScanElement<T>> elems,
                                           const ScanOptions& options = {});

/// Same contract as scan_inclusive, one element at a time.
template <class T>
std::vector<std::vector<T>> sequential_scan(const ScanElement<T>& init, std::span<const ScanElement<T>> elems);

/// Solves y_i = A_i y_{i-1} + b_i for i = 1..L (rows 0..L-1 of `out`).
///
/// Work splits into fixed chunks of `options.chunk_size` steps: chunk
/// aggregates are built in parallel, combined by an up-sweep/down-sweep tree
/// over the chunk list, and each chunk is then replayed from its carried-in
/// state. The tree shape depends on the chunk count only, so the output is
/// bitwise identical for any number of workers.
template <class T>
void scan_recurrence(ConstView<T> y0, const MatrixSequence<T>& A, const Sequence<T>& b, Sequence<T>& out,
                     const ScanOptions& options = {});

template <class T>
void sequential_recurrence(ConstView<T> y0, const MatrixSequence<T>& A, const Sequence<T>& b,
                           Sequence<T>& out);

/// Solves the dual recurrence w_i = g_i + A_{i+1}^T w_{i+1}, w_{L-1} = g_{L-1}
/// (0-based rows), by running the parallel scan on time-reversed, transposed
/// elements.
template <class T>
void scan_reverse_transposed(const MatrixSequence<T>& A, const Sequence<T>& g, Sequence<T>& out,
                             const ScanOptions& options = {});

template <class T>
void sequential_reverse_transposed(const MatrixSequence<T>& A, const Sequence<T>& g, Sequence<T>& out);

/// Number of parallel scan passes run by this process so far.
std::uint64_t scan_pass_count() noexcept;

namespace testing {
/// Mutation hook: negates the later element's v in every parallel combine.
void set_combine_sign_flip(bool enabled) noexcept;
bool combine_sign_flip() noexcept;
}  // namespace testing

}  // namespace deer

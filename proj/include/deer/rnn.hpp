// SPDX-License-Identifier: Apache-2.0
//
// Discrete recurrences y_i = f(y_{i-1}, x_i) solved with DEER. The linearized
// step is y_i = A_i y_{i-1} + b_i with A_i = df/dy at the previous iterate and
// b_i = f(y_{i-1}, x_i) - A_i y_{i-1}.
#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "deer/core.hpp"
#include "deer/deer.hpp"

namespace deer {

/// A_i = -G_i, b_i = z_i.
template <class T>
Linearizer<T> make_rnn_linearizer(ThreadPool* pool = nullptr);

/// `cell` has one shift; `inputs` has one row per step. States hold y_1..y_L.
template <class T>
DeerResult<T> deer_eval_rnn(const DynamicsSpec<T>& cell, const Sequence<T>& inputs, ConstView<T> y0,
                            const DeerConfig<T>& config);

/// Plain left-to-right evaluation.
template <class T>
Sequence<T> sequential_eval_rnn(const DynamicsSpec<T>& cell, const Sequence<T>& inputs, ConstView<T> y0);

/// The linear system of the recurrence linearized along `states` (y_1..y_L).
template <class T>
LinearRecurrenceSystem<T> linearize_rnn(const DynamicsSpec<T>& cell, const Sequence<T>& inputs,
                                        ConstView<T> y0, const Sequence<T>& states, ThreadPool* pool = nullptr);

/// Channels [channel_begin, channel_end) advancing with step `stride`.
struct HeadSpec {
  std::size_t channel_begin = 0;
  std::size_t channel_end = 0;
  std::size_t stride = 1;

  std::size_t width() const noexcept { return channel_end - channel_begin; }
};

struct HeadLayout {
  static constexpr std::size_t max_head_width = 16;

  std::vector<HeadSpec> heads;

  /// Throws ContractError unless the heads partition [0, state_dim), every
  /// stride is at least 1 and no head is wider than max_head_width.
  void validate(std::size_t state_dim) const;

  /// `num_heads` equal-width heads; head h gets stride 2^(h mod num_strides).
  static HeadLayout exponential(std::size_t state_dim, std::size_t num_heads, std::size_t num_strides);
};

template <class T>
struct StridedResult {
  Sequence<T> states;
  /// One report per (head, lane), heads in layout order, lanes by offset.
  std::vector<DeerReport> lane_reports;

  bool converged() const;
};

/// Head h evolves channels of its range over the lanes {j, j + s, j + 2s, ...}
/// for j < s, each lane an independent recurrence of `cells[h]` starting at
/// the head's slice of y0. `cells[h]` sees the head's channels as its state
/// and the full input row. Lanes run concurrently.
template <class T>
StridedResult<T> eval_strided(const std::vector<DynamicsSpec<T>>& cells, const HeadLayout& layout,
                              const Sequence<T>& inputs, ConstView<T> y0, const DeerConfig<T>& config);

}  // namespace deer

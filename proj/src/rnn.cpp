// SPDX-License-Identifier: Apache-2.0
#include "deer/rnn.hpp"

#include <algorithm>
#include <atomic>
#include <string>

#include "deer/errors.hpp"
#include "deer/thread_pool.hpp"

namespace deer {

namespace {

constexpr std::size_t kStepBlock = 256;

template <class T>
void check_cell(const DynamicsSpec<T>& cell, const Sequence<T>& inputs, ConstView<T> y0, const char* who) {
  cell.validate();
  if (cell.num_shifts != 1) throw ContractError(std::string(who) + ": recurrence cells take exactly one shift");
  if (y0.size() != cell.state_dim)
    throw ContractError(std::string(who) + ": y0 has " + std::to_string(y0.size()) + " entries, expected " +
                        std::to_string(cell.state_dim));
  if (inputs.dim() != cell.input_dim)
    throw ContractError(std::string(who) + ": inputs have width " + std::to_string(inputs.dim()) + ", expected " +
                        std::to_string(cell.input_dim));
  if (inputs.length() == 0) throw ContractError(std::string(who) + ": empty input sequence");
}

}  // namespace

template <class T>
Linearizer<T> make_rnn_linearizer(ThreadPool* pool) {
  return [pool](const std::vector<MatrixSequence<T>>& G, const Sequence<T>& z, ConstView<T> y0,
                LinearRecurrenceSystem<T>& out) {
    if (G.size() != 1) throw ContractError("rnn linearizer: expected a single shift");
    const std::size_t L = z.length();
    const std::size_t n = z.dim();
    if (out.A.count() != L || out.A.dim() != n) out.A = MatrixSequence<T>(L, n);
    out.b = z;
    out.y0.assign(y0.begin(), y0.end());
    ThreadPool& workers = pool ? *pool : default_pool();
    const std::size_t blocks = (L + kStepBlock - 1) / kStepBlock;
    workers.parallel_for(blocks, [&](std::size_t block) {
      const std::size_t begin = block * kStepBlock * n * n;
      const std::size_t end = std::min(L, (block + 1) * kStepBlock) * n * n;
      const auto src = G[0].values();
      auto dst = out.A.values();
      for (std::size_t k = begin; k < end; ++k) dst[k] = -src[k];
    });
  };
}

template <class T>
DeerResult<T> deer_eval_rnn(const DynamicsSpec<T>& cell, const Sequence<T>& inputs, ConstView<T> y0,
                            const DeerConfig<T>& config) {
  check_cell(cell, inputs, y0, "deer_eval_rnn");
  return deer_solve(cell, make_delay_shifter<T>({1}), make_rnn_linearizer<T>(config.scan.pool), inputs, y0,
                    inputs.length(), config);
}

template <class T>
Sequence<T> sequential_eval_rnn(const DynamicsSpec<T>& cell, const Sequence<T>& inputs, ConstView<T> y0) {
  check_cell(cell, inputs, y0, "sequential_eval_rnn");
  const std::size_t L = inputs.length();
  const std::size_t n = cell.state_dim;
  Sequence<T> out(L, n);
  std::span<const T> prev = y0;
  for (std::size_t i = 0; i < L; ++i) {
    const std::span<const T> views[1] = {prev};
    cell.eval(views, inputs.row(i), out.row(i));
    prev = out.row(i);
  }
  return out;
}

template <class T>
LinearRecurrenceSystem<T> linearize_rnn(const DynamicsSpec<T>& cell, const Sequence<T>& inputs,
                                        ConstView<T> y0, const Sequence<T>& states, ThreadPool* pool) {
  check_cell(cell, inputs, y0, "linearize_rnn");
  const std::size_t L = inputs.length();
  const std::size_t n = cell.state_dim;
  if (states.length() != L || states.dim() != n)
    throw ContractError("linearize_rnn: states must have " + std::to_string(L) + " rows of width " +
                        std::to_string(n));
  LinearRecurrenceSystem<T> sys{MatrixSequence<T>(L, n), Sequence<T>(L, n), std::vector<T>(y0.begin(), y0.end())};
  ThreadPool& workers = pool ? *pool : default_pool();
  const std::size_t blocks = (L + kStepBlock - 1) / kStepBlock;
  workers.parallel_for(blocks, [&](std::size_t block) {
    std::vector<T> value(n);
    const std::size_t end = std::min(L, (block + 1) * kStepBlock);
    for (std::size_t i = block * kStepBlock; i < end; ++i) {
      const std::span<const T> prev = i == 0 ? y0 : states.row(i - 1);
      const std::span<const T> views[1] = {prev};
      T* A = sys.A.matrix(i);
      cell.linearize(views, inputs.row(i), value, std::span<T>(A, n * n));
      auto b = sys.b.row(i);
      for (std::size_t r = 0; r < n; ++r) {
        T acc = 0;
        for (std::size_t c = 0; c < n; ++c) acc += A[r * n + c] * prev[c];
        b[r] = value[r] - acc;
      }
    }
  });
  return sys;
}

void HeadLayout::validate(std::size_t state_dim) const {
  if (heads.empty()) throw ContractError("HeadLayout: no heads");
  std::vector<HeadSpec> sorted = heads;
  std::sort(sorted.begin(), sorted.end(),
            [](const HeadSpec& a, const HeadSpec& b) { return a.channel_begin < b.channel_begin; });
  std::size_t expected = 0;
  for (const auto& h : sorted) {
    if (h.channel_begin != expected || h.channel_end <= h.channel_begin)
      throw ContractError("HeadLayout: heads do not partition channels [0, " + std::to_string(state_dim) +
                          "); gap or overlap at channel " + std::to_string(expected));
    if (h.stride == 0) throw ContractError("HeadLayout: stride must be at least 1");
    if (h.width() > max_head_width)
      throw ContractError("HeadLayout: head width " + std::to_string(h.width()) + " exceeds " +
                          std::to_string(max_head_width));
    expected = h.channel_end;
  }
  if (expected != state_dim)
    throw ContractError("HeadLayout: heads cover " + std::to_string(expected) + " channels, expected " +
                        std::to_string(state_dim));
}

HeadLayout HeadLayout::exponential(std::size_t state_dim, std::size_t num_heads, std::size_t num_strides) {
  if (num_heads == 0 || num_strides == 0 || state_dim % num_heads != 0)
    throw ContractError("HeadLayout::exponential: state_dim must split evenly into a positive number of heads");
  if (num_strides > 62) throw ContractError("HeadLayout::exponential: too many strides");
  HeadLayout layout;
  const std::size_t width = state_dim / num_heads;
  for (std::size_t h = 0; h < num_heads; ++h)
    layout.heads.push_back({h * width, (h + 1) * width, std::size_t(1) << (h % num_strides)});
  layout.validate(state_dim);
  return layout;
}

template <class T>
bool StridedResult<T>::converged() const {
  return std::all_of(lane_reports.begin(), lane_reports.end(), [](const DeerReport& r) { return r.converged; });
}

template <class T>
StridedResult<T> eval_strided(const std::vector<DynamicsSpec<T>>& cells, const HeadLayout& layout,
                              const Sequence<T>& inputs, ConstView<T> y0, const DeerConfig<T>& config) {
  layout.validate(y0.size());
  config.validate();
  if (cells.size() != layout.heads.size())
    throw ContractError("eval_strided: " + std::to_string(cells.size()) + " cells for " +
                        std::to_string(layout.heads.size()) + " heads");
  const std::size_t L = inputs.length();
  const std::size_t n = y0.size();
  if (L == 0) throw ContractError("eval_strided: empty input sequence");
  if (config.init_guess == InitGuess::user &&
      (config.initial_sequence->length() != L || config.initial_sequence->dim() != n))
    throw ContractError("eval_strided: initial guess shape does not match");

  struct Lane {
    std::size_t head, offset, length;
  };
  std::vector<Lane> lanes;
  for (std::size_t h = 0; h < layout.heads.size(); ++h) {
    const auto& spec = layout.heads[h];
    if (cells[h].state_dim != spec.width())
      throw ContractError("eval_strided: cell " + std::to_string(h) + " has state_dim " +
                          std::to_string(cells[h].state_dim) + ", head width is " + std::to_string(spec.width()));
    for (std::size_t j = 0; j < std::min(spec.stride, L); ++j)
      lanes.push_back({h, j, (L - j + spec.stride - 1) / spec.stride});
  }

  StridedResult<T> result{Sequence<T>(L, n), std::vector<DeerReport>(lanes.size())};
  ThreadPool& pool = config.scan.resolve_pool();
  pool.parallel_for(lanes.size(), [&](std::size_t li) {
    const Lane& lane = lanes[li];
    const HeadSpec& spec = layout.heads[lane.head];
    const std::size_t w = spec.width();
    Sequence<T> lane_inputs(lane.length, inputs.dim());
    for (std::size_t k = 0; k < lane.length; ++k) {
      const auto src = inputs.row(lane.offset + k * spec.stride);
      std::copy(src.begin(), src.end(), lane_inputs.row(k).begin());
    }
    DeerConfig<T> lane_config = config;
    if (config.init_guess == InitGuess::user) {
      Sequence<T> guess(lane.length, w);
      for (std::size_t k = 0; k < lane.length; ++k)
        for (std::size_t c = 0; c < w; ++c)
          guess(k, c) = (*config.initial_sequence)(lane.offset + k * spec.stride, spec.channel_begin + c);
      lane_config.initial_sequence = std::move(guess);
    }
    DeerResult<T> r =
        deer_eval_rnn(cells[lane.head], lane_inputs, y0.subspan(spec.channel_begin, w), lane_config);
    for (std::size_t k = 0; k < lane.length; ++k)
      for (std::size_t c = 0; c < w; ++c)
        result.states(lane.offset + k * spec.stride, spec.channel_begin + c) = r.states(k, c);
    result.lane_reports[li] = std::move(r.report);
  });
  return result;
}

#define DEER_INSTANTIATE_RNN(T)                                                                                  \
  template Linearizer<T> make_rnn_linearizer(ThreadPool*);                                                       \
  template DeerResult<T> deer_eval_rnn(const DynamicsSpec<T>&, const Sequence<T>&, std::span<const T>,           \
                                       const DeerConfig<T>&);                                                    \
  template Sequence<T> sequential_eval_rnn(const DynamicsSpec<T>&, const Sequence<T>&, std::span<const T>);      \
  template LinearRecurrenceSystem<T> linearize_rnn(const DynamicsSpec<T>&, const Sequence<T>&,                   \
                                                   std::span<const T>, const Sequence<T>&, ThreadPool*);         \
  template struct StridedResult<T>;                                                                              \
  template StridedResult<T> eval_strided(const std::vector<DynamicsSpec<T>>&, const HeadLayout&,                 \
                                         const Sequence<T>&, std::span<const T>, const DeerConfig<T>&);

DEER_INSTANTIATE_RNN(float)
DEER_INSTANTIATE_RNN(double)

}  // namespace deer

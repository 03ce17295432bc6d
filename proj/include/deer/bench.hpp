// SPDX-License-Identifier: Apache-2.0
//
// Timing harness comparing DEER with sequential evaluation of an untrained
// GRU over a grid of sequence lengths, state sizes, batch sizes and seeds.
#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "deer/core.hpp"

namespace deer {

enum class BenchMethod { deer, sequential };

std::string_view to_string(BenchMethod method);

struct BenchRecord {
  BenchMethod method = BenchMethod::deer;
  std::size_t seq_len = 0;
  std::size_t dims = 0;
  std::size_t batch = 0;
  std::uint64_t seed = 0;
  /// Median wall time of the timed runs for the whole batch; empty when skipped.
  std::optional<double> wall_time_s;
  /// Largest iteration count over the batch (0 for sequential).
  std::optional<std::size_t> iterations;
  /// Max-abs difference against sequential evaluation.
  std::optional<double> max_abs_diff;

  bool skipped() const noexcept { return !wall_time_s.has_value(); }
  friend bool operator==(const BenchRecord&, const BenchRecord&) = default;
};

struct BenchOptions {
  Precision precision = Precision::f64;
  std::size_t warmup_runs = 2;
  std::size_t timed_runs = 5;
  /// Cells whose estimated working set exceeds this are skipped.
  std::size_t memory_budget_bytes = std::size_t(4) << 30;
  /// Input width; 0 uses the state size.
  std::size_t input_dim = 0;
  /// tolerance <= 0 selects the precision default.
  double tolerance = 0.0;
  std::size_t max_iters = 100;
  ScanOptions scan;
};

/// Bytes held by a DEER solve of batch B: per step the G and A matrices plus
/// the scan's state and aggregate buffers.
std::size_t estimate_memory_bytes(std::size_t seq_len, std::size_t dims, std::size_t batch, Precision precision);

/// Runs every (L, n, B, seed) cell, sequential then DEER, one at a time.
/// Throws NumericDomainError when a DEER solve fails to converge.
std::vector<BenchRecord> run_grid(const std::vector<std::size_t>& lengths, const std::vector<std::size_t>& dims,
                                  const std::vector<std::size_t>& batches, const std::vector<std::uint64_t>& seeds,
                                  const BenchOptions& options = {});

struct OutputComparison {
  double max_abs = 0.0;
  double mean_abs = 0.0;
  std::size_t argmax_row = 0;
  std::size_t argmax_col = 0;
};

template <class T>
OutputComparison compare_outputs(const Sequence<T>& a, const Sequence<T>& b);

extern const char* const kBenchCsvHeader;

/// RFC-4180 CSV with kBenchCsvHeader; reals with 17 significant digits,
/// skipped fields as "-".
void write_bench_csv(std::ostream& out, const std::vector<BenchRecord>& records);
/// Throws ContractError naming the line on malformed input.
std::vector<BenchRecord> read_bench_csv(std::istream& in);
/// One JSON object per record; skipped fields are null.
void write_bench_jsonl(std::ostream& out, const std::vector<BenchRecord>& records);

}  // namespace deer

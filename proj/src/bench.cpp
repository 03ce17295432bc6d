// SPDX-License-Identifier: Apache-2.0
#include "deer/bench.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <istream>
#include <ostream>
#include <string>

#include <json.hpp>

#include "deer/errors.hpp"
#include "deer/gru.hpp"
#include "deer/rnn.hpp"

namespace deer {

const char* const kBenchCsvHeader = "method,seq_len,dims,batch,seed,wall_time_s,iterations,max_abs_diff";

std::string_view to_string(BenchMethod method) { return method == BenchMethod::deer ? "deer" : "sequential"; }

std::size_t estimate_memory_bytes(std::size_t seq_len, std::size_t dims, std::size_t batch, Precision precision) {
  const std::size_t scalar = precision == Precision::f32 ? sizeof(float) : sizeof(double);
  // G, A, kept best system: 3 n^2; z, b, iterates, shifted copy, inputs: ~8 n.
  const long double per_step = 3.0L * dims * dims + 8.0L * dims;
  const long double total = per_step * seq_len * batch * scalar;
  return total >= static_cast<long double>(SIZE_MAX) ? SIZE_MAX : static_cast<std::size_t>(total);
}

template <class T>
OutputComparison compare_outputs(const Sequence<T>& a, const Sequence<T>& b) {
  if (a.length() != b.length() || a.dim() != b.dim())
    throw ContractError("compare_outputs: shapes (" + std::to_string(a.length()) + ", " + std::to_string(a.dim()) +
                        ") and (" + std::to_string(b.length()) + ", " + std::to_string(b.dim()) + ") differ");
  OutputComparison c;
  const auto va = a.values();
  const auto vb = b.values();
  double sum = 0.0;
  for (std::size_t k = 0; k < va.size(); ++k) {
    const double d = std::abs(double(va[k]) - double(vb[k]));
    sum += d;
    if (d > c.max_abs || std::isnan(d)) {
      c.max_abs = d;
      c.argmax_row = k / a.dim();
      c.argmax_col = k % a.dim();
      if (std::isnan(d)) break;
    }
  }
  c.mean_abs = va.empty() ? 0.0 : sum / double(va.size());
  return c;
}

namespace {

using clock = std::chrono::steady_clock;

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

template <class T>
void run_cell(std::size_t L, std::size_t n, std::size_t B, std::uint64_t seed, const BenchOptions& options,
              std::vector<BenchRecord>& out) {
  const std::size_t m = options.input_dim == 0 ? n : options.input_dim;
  const DynamicsSpec<T> cell = gru_dynamics(GruParams<T>::random(m, n, seed));
  std::vector<Sequence<T>> inputs;
  for (std::size_t b = 0; b < B; ++b) inputs.push_back(gaussian_inputs<T>(L, m, seed * 1000003u + b));
  const std::vector<T> y0(n, T(0));

  DeerConfig<T> config;
  if (options.tolerance > 0) config.tolerance = T(options.tolerance);
  config.max_iters = options.max_iters;
  config.keep_linearization = false;
  config.scan = options.scan;

  const std::size_t runs = options.warmup_runs + std::max<std::size_t>(1, options.timed_runs);
  std::vector<double> seq_times, deer_times;
  std::vector<Sequence<T>> seq_out(B), deer_out(B);
  std::size_t iterations = 0;
  for (std::size_t run = 0; run < runs; ++run) {
    auto t0 = clock::now();
    for (std::size_t b = 0; b < B; ++b) seq_out[b] = sequential_eval_rnn(cell, inputs[b], std::span<const T>(y0));
    auto t1 = clock::now();
    for (std::size_t b = 0; b < B; ++b) {
      DeerResult<T> r = deer_eval_rnn(cell, inputs[b], std::span<const T>(y0), config);
      if (!r.report.converged)
        throw NumericDomainError("run_grid: DEER did not converge at L=" + std::to_string(L) + " n=" +
                                 std::to_string(n) + " seed=" + std::to_string(seed) + " batch element " +
                                 std::to_string(b));
      iterations = std::max(iterations, r.report.iterations);
      deer_out[b] = std::move(r.states);
    }
    auto t2 = clock::now();
    if (run >= options.warmup_runs) {
      seq_times.push_back(std::chrono::duration<double>(t1 - t0).count());
      deer_times.push_back(std::chrono::duration<double>(t2 - t1).count());
    }
  }
  double diff = 0.0;
  for (std::size_t b = 0; b < B; ++b) diff = std::max(diff, compare_outputs(seq_out[b], deer_out[b]).max_abs);

  // Guard against a zero reading from a coarse clock.
  const double tiny = 1e-9;
  out.push_back({BenchMethod::sequential, L, n, B, seed, std::max(tiny, median(seq_times)), std::size_t(0), 0.0});
  out.push_back({BenchMethod::deer, L, n, B, seed, std::max(tiny, median(deer_times)), iterations, diff});
}

std::string format_real(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string quote_field(const std::string& s) {
  if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char c : s) {
    if (c == '"') q += '"';
    q += c;
  }
  return q + "\"";
}

// One logical CSV record; quoted fields may span lines.
bool read_record(std::istream& in, std::vector<std::string>& fields, std::size_t& line) {
  fields.clear();
  std::string field;
  bool quoted = false, any = false;
  char c;
  while (in.get(c)) {
    any = true;
    if (quoted) {
      if (c == '"') {
        if (in.peek() == '"') {
          in.get(c);
          field += '"';
        } else {
          quoted = false;
        }
      } else {
        if (c == '\n') ++line;
        field += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(field));
      field.clear();
    } else if (c == '\n') {
      ++line;
      fields.push_back(std::move(field));
      return true;
    } else if (c != '\r') {
      field += c;
    }
  }
  if (quoted) throw ContractError("read_bench_csv: unterminated quote at line " + std::to_string(line));
  if (!any) return false;
  fields.push_back(std::move(field));
  return true;
}

template <class V>
V parse_number(const std::string& s, std::size_t line, const char* column) {
  V v{};
  const char* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || ptr != end)
    throw ContractError("read_bench_csv: line " + std::to_string(line) + ": bad " + column + " '" + s + "'");
  return v;
}

}  // namespace

std::vector<BenchRecord> run_grid(const std::vector<std::size_t>& lengths, const std::vector<std::size_t>& dims,
                                  const std::vector<std::size_t>& batches, const std::vector<std::uint64_t>& seeds,
                                  const BenchOptions& options) {
  if (lengths.empty() || dims.empty() || batches.empty() || seeds.empty())
    throw ContractError("run_grid: every axis needs at least one value");
  for (auto v : lengths)
    if (v == 0) throw ContractError("run_grid: sequence lengths must be positive");
  for (auto v : dims)
    if (v == 0) throw ContractError("run_grid: dims must be positive");
  for (auto v : batches)
    if (v == 0) throw ContractError("run_grid: batch sizes must be positive");
  if (options.timed_runs == 0) throw ContractError("run_grid: need at least one timed run");
  std::vector<BenchRecord> records;
  for (std::size_t L : lengths)
    for (std::size_t n : dims)
      for (std::size_t B : batches)
        for (std::uint64_t seed : seeds) {
          if (estimate_memory_bytes(L, n, B, options.precision) > options.memory_budget_bytes) {
            records.push_back({BenchMethod::sequential, L, n, B, seed, {}, {}, {}});
            records.push_back({BenchMethod::deer, L, n, B, seed, {}, {}, {}});
            continue;
          }
          if (options.precision == Precision::f32)
            run_cell<float>(L, n, B, seed, options, records);
          else
            run_cell<double>(L, n, B, seed, options, records);
        }
  return records;
}

void write_bench_csv(std::ostream& out, const std::vector<BenchRecord>& records) {
  out << kBenchCsvHeader << '\n';
  for (const auto& r : records) {
    out << quote_field(std::string(to_string(r.method))) << ',' << r.seq_len << ',' << r.dims << ',' << r.batch << ','
        << r.seed << ',' << (r.wall_time_s ? format_real(*r.wall_time_s) : "-") << ','
        << (r.iterations ? std::to_string(*r.iterations) : "-") << ','
        << (r.max_abs_diff ? format_real(*r.max_abs_diff) : "-") << '\n';
  }
}

std::vector<BenchRecord> read_bench_csv(std::istream& in) {
  std::vector<std::string> fields;
  std::size_t line = 1;
  if (!read_record(in, fields, line)) throw ContractError("read_bench_csv: empty input");
  std::string header;
  for (std::size_t k = 0; k < fields.size(); ++k) header += (k ? "," : "") + fields[k];
  if (header != kBenchCsvHeader) throw ContractError("read_bench_csv: line 1: unexpected header '" + header + "'");
  std::vector<BenchRecord> records;
  while (true) {
    const std::size_t record_line = line;
    if (!read_record(in, fields, line)) break;
    if (fields.size() == 1 && fields[0].empty()) continue;
    if (fields.size() != 8)
      throw ContractError("read_bench_csv: line " + std::to_string(record_line) + ": expected 8 fields, got " +
                          std::to_string(fields.size()));
    BenchRecord r;
    if (fields[0] == "deer")
      r.method = BenchMethod::deer;
    else if (fields[0] == "sequential")
      r.method = BenchMethod::sequential;
    else
      throw ContractError("read_bench_csv: line " + std::to_string(record_line) + ": unknown method '" + fields[0] +
                          "'");
    r.seq_len = parse_number<std::size_t>(fields[1], record_line, "seq_len");
    r.dims = parse_number<std::size_t>(fields[2], record_line, "dims");
    r.batch = parse_number<std::size_t>(fields[3], record_line, "batch");
    r.seed = parse_number<std::uint64_t>(fields[4], record_line, "seed");
    if (fields[5] != "-") r.wall_time_s = parse_number<double>(fields[5], record_line, "wall_time_s");
    if (fields[6] != "-") r.iterations = parse_number<std::size_t>(fields[6], record_line, "iterations");
    if (fields[7] != "-") r.max_abs_diff = parse_number<double>(fields[7], record_line, "max_abs_diff");
    records.push_back(r);
  }
  return records;
}

void write_bench_jsonl(std::ostream& out, const std::vector<BenchRecord>& records) {
  for (const auto& r : records) {
    nlohmann::json j;
    j["method"] = std::string(to_string(r.method));
    j["seq_len"] = r.seq_len;
    j["dims"] = r.dims;
    j["batch"] = r.batch;
    j["seed"] = r.seed;
    j["wall_time_s"] = r.wall_time_s ? nlohmann::json(*r.wall_time_s) : nlohmann::json(nullptr);
    j["iterations"] = r.iterations ? nlohmann::json(*r.iterations) : nlohmann::json(nullptr);
    j["max_abs_diff"] = r.max_abs_diff ? nlohmann::json(*r.max_abs_diff) : nlohmann::json(nullptr);
    out << j.dump() << '\n';
  }
}

template OutputComparison compare_outputs(const Sequence<float>&, const Sequence<float>&);
template OutputComparison compare_outputs(const Sequence<double>&, const Sequence<double>&);

}  // namespace deer

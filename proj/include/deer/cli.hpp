// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end: solve, check, convergence and bench subcommands,
// the run-config format and the built-in problems.
//
// Config grammar, one setting per line:
//
//     # comment
//     key = value
//
// Keys: problem, version, steps, t0, t1, y0 (comma list), rate, capacity, mu,
// decay, frequency, dims, seed, tolerance, max_iters, chunk_size, threads,
// precision (f32|f64), interpolation (midpoint|left), relative_tolerance
// (true|false), out. A file whose first non-blank character is '{' is read as
// a JSON object with the same keys.
#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "deer/core.hpp"
#include "deer/ode.hpp"

namespace deer::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitNumeric = 2;

/// Built-in problems, each pinned to a version:
///   logistic@1     dy/dt = rate * y * (1 - y / capacity)
///   van-der-pol@1  y0' = y1, y1' = mu * (1 - y0^2) * y1 - y0
///   linear@1       dy/dt = [[-decay, frequency], [-frequency, -decay]] y + (sin t, 0)
///   gru@1          untrained GRU, dims x dims, Gaussian inputs, y0 = 0
struct RunConfig {
  std::string problem = "logistic";
  int version = 1;
  std::size_t steps = 1000;
  double t0 = 0.0;
  double t1 = 10.0;
  /// Empty selects the problem default.
  std::vector<double> y0;
  double rate = 1.0;
  double capacity = 1.0;
  double mu = 1.0;
  double decay = 0.5;
  double frequency = 2.0;
  std::size_t dims = 2;
  std::uint64_t seed = 0;
  /// Unset selects the precision default.
  std::optional<double> tolerance;
  std::size_t max_iters = 100;
  std::size_t chunk_size = 256;
  /// 0 selects DEER_THREADS or the hardware thread count.
  std::size_t threads = 0;
  Precision precision = Precision::f64;
  Interpolation interpolation = Interpolation::midpoint;
  bool relative_tolerance = false;
  std::string out;

  /// Line of each key read from a file, for error messages.
  std::map<std::string, std::size_t> source_lines;
  std::string source_name;

  bool is_ode() const { return problem != "gru"; }
  std::size_t state_dim() const;
  /// Cross-field checks; throws ContractError naming the offending line when known.
  void validate() const;
};

/// Sets one key from its textual value. Throws ContractError.
void apply_setting(RunConfig& config, const std::string& key, const std::string& value);

/// Throws ContractError with "source:line: message".
RunConfig parse_config_text(const std::string& text, const std::string& source_name = "<config>");
RunConfig load_config(const std::string& path);

template <class T>
OdeProblem<T> make_ode_problem(const RunConfig& config);

/// logistic@1 closed form.
double logistic_exact(double t, double y0, double rate, double capacity);

/// Entry point; returns the process exit code.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace deer::cli

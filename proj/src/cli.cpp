// SPDX-License-Identifier: Apache-2.0
#include "deer/cli.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <memory>
#include <ostream>
#include <random>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "deer/bench.hpp"
#include "deer/errors.hpp"
#include "deer/gru.hpp"
#include "deer/pscan.hpp"
#include "deer/rnn.hpp"
#include "deer/thread_pool.hpp"

namespace deer::cli {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

double parse_real(const std::string& key, const std::string& text) {
  const std::string s = trim(text);
  double v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(v))
    throw ContractError(key + ": expected a finite number, got '" + text + "'");
  return v;
}

std::uint64_t parse_unsigned(const std::string& key, const std::string& text) {
  const std::string s = trim(text);
  std::uint64_t v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc() || ptr != s.data() + s.size())
    throw ContractError(key + ": expected a non-negative integer, got '" + text + "'");
  return v;
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> parts;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) parts.push_back(trim(item));
  return parts;
}

std::vector<double> parse_real_list(const std::string& key, const std::string& text) {
  std::vector<double> v;
  for (const auto& p : split_list(text)) v.push_back(parse_real(key, p));
  if (v.empty()) throw ContractError(key + ": empty list");
  return v;
}

std::vector<std::uint64_t> parse_unsigned_list(const std::string& key, const std::string& text) {
  std::vector<std::uint64_t> v;
  for (const auto& p : split_list(text)) v.push_back(parse_unsigned(key, p));
  if (v.empty()) throw ContractError(key + ": empty list");
  return v;
}

std::string with_line(const RunConfig& config, const std::string& key, const std::string& message) {
  const auto it = config.source_lines.find(key);
  if (it == config.source_lines.end()) return message;
  return config.source_name + ":" + std::to_string(it->second) + ": " + message;
}

std::uint64_t param_seed(std::uint64_t seed) { return 2 * seed; }
std::uint64_t input_seed(std::uint64_t seed) { return 2 * seed + 1; }

std::string format_real(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

std::size_t RunConfig::state_dim() const {
  if (problem == "logistic") return 1;
  if (problem == "gru") return dims;
  return 2;
}

void RunConfig::validate() const {
  auto fail = [&](const std::string& key, const std::string& message) {
    throw ContractError(with_line(*this, key, message));
  };
  if (problem != "logistic" && problem != "van-der-pol" && problem != "linear" && problem != "gru")
    fail("problem", "unknown problem '" + problem + "' (known: logistic, van-der-pol, linear, gru)");
  if (version != 1) fail("version", "problem " + problem + " has no version " + std::to_string(version));
  if (steps == 0 || steps > 100'000'000) fail("steps", "steps must be in [1, 1e8]");
  if (!(t1 > t0)) fail("t1", "t1 must exceed t0");
  if (!y0.empty() && y0.size() != state_dim())
    fail("y0", "y0 needs " + std::to_string(state_dim()) + " values for " + problem);
  if (problem == "logistic" && !(capacity > 0)) fail("capacity", "capacity must be positive");
  if (dims == 0 || dims > 64) fail("dims", "dims must be in [1, 64]");
  if (tolerance && !(*tolerance >= 0)) fail("tolerance", "tolerance must be nonnegative");
  if (max_iters == 0 || max_iters > 1'000'000) fail("max_iters", "max_iters must be in [1, 1e6]");
  if (chunk_size == 0) fail("chunk_size", "chunk_size must be positive");
  if (threads > 1024) fail("threads", "threads must be at most 1024");
}

void apply_setting(RunConfig& c, const std::string& key, const std::string& raw) {
  const std::string value = trim(raw);
  if (key == "problem") {
    c.problem = value;
  } else if (key == "version") {
    c.version = int(parse_unsigned(key, value));
  } else if (key == "steps") {
    c.steps = parse_unsigned(key, value);
  } else if (key == "t0") {
    c.t0 = parse_real(key, value);
  } else if (key == "t1") {
    c.t1 = parse_real(key, value);
  } else if (key == "y0") {
    c.y0 = parse_real_list(key, value);
  } else if (key == "rate") {
    c.rate = parse_real(key, value);
  } else if (key == "capacity") {
    c.capacity = parse_real(key, value);
  } else if (key == "mu") {
    c.mu = parse_real(key, value);
  } else if (key == "decay") {
    c.decay = parse_real(key, value);
  } else if (key == "frequency") {
    c.frequency = parse_real(key, value);
  } else if (key == "dims") {
    c.dims = parse_unsigned(key, value);
  } else if (key == "seed") {
    c.seed = parse_unsigned(key, value);
  } else if (key == "tolerance") {
    const double t = parse_real(key, value);
    if (!(t >= 0)) throw ContractError("tolerance must be nonnegative, got " + value);
    c.tolerance = t;
  } else if (key == "max_iters") {
    c.max_iters = parse_unsigned(key, value);
  } else if (key == "chunk_size") {
    c.chunk_size = parse_unsigned(key, value);
  } else if (key == "threads") {
    c.threads = parse_unsigned(key, value);
  } else if (key == "precision") {
    if (value == "f32")
      c.precision = Precision::f32;
    else if (value == "f64")
      c.precision = Precision::f64;
    else
      throw ContractError("precision must be f32 or f64, got '" + value + "'");
  } else if (key == "interpolation") {
    if (value == "midpoint")
      c.interpolation = Interpolation::midpoint;
    else if (value == "left")
      c.interpolation = Interpolation::left_value;
    else
      throw ContractError("interpolation must be midpoint or left, got '" + value + "'");
  } else if (key == "relative_tolerance") {
    if (value == "true")
      c.relative_tolerance = true;
    else if (value == "false")
      c.relative_tolerance = false;
    else
      throw ContractError("relative_tolerance must be true or false, got '" + value + "'");
  } else if (key == "out") {
    c.out = value;
  } else {
    throw ContractError("unknown key '" + key + "'");
  }
}

namespace {

RunConfig parse_json_config(const std::string& text, const std::string& source_name) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ContractError(source_name + ": " + e.what());
  }
  if (!j.is_object()) throw ContractError(source_name + ": expected a JSON object");
  RunConfig c;
  c.source_name = source_name;
  for (const auto& [key, value] : j.items()) {
    std::string textual;
    if (value.is_string()) {
      textual = value.get<std::string>();
    } else if (value.is_array()) {
      for (std::size_t k = 0; k < value.size(); ++k) textual += (k ? "," : "") + value[k].dump();
    } else {
      textual = value.dump();
    }
    try {
      apply_setting(c, key, textual);
    } catch (const ContractError& e) {
      throw ContractError(source_name + ": key '" + key + "': " + e.what());
    }
  }
  return c;
}

}  // namespace

RunConfig parse_config_text(const std::string& text, const std::string& source_name) {
  const auto first = text.find_first_not_of(" \t\r\n");
  if (first != std::string::npos && text[first] == '{') return parse_json_config(text, source_name);
  RunConfig c;
  c.source_name = source_name;
  std::stringstream ss(text);
  std::string line;
  std::size_t number = 0;
  while (std::getline(ss, line)) {
    ++number;
    const auto hash = line.find('#');
    const std::string body = trim(hash == std::string::npos ? line : line.substr(0, hash));
    if (body.empty()) continue;
    const auto eq = body.find('=');
    auto fail = [&](const std::string& message) {
      throw ContractError(source_name + ":" + std::to_string(number) + ": " + message);
    };
    if (eq == std::string::npos) fail("expected 'key = value'");
    const std::string key = trim(body.substr(0, eq));
    if (key.empty()) fail("missing key before '='");
    if (c.source_lines.count(key)) fail("duplicate key '" + key + "'");
    try {
      apply_setting(c, key, body.substr(eq + 1));
    } catch (const ContractError& e) {
      fail(e.what());
    }
    c.source_lines[key] = number;
  }
  return c;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ContractError("cannot read config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str(), path);
}

double logistic_exact(double t, double y0, double rate, double capacity) {
  return capacity / (1.0 + (capacity / y0 - 1.0) * std::exp(-rate * t));
}

template <class T>
OdeProblem<T> make_ode_problem(const RunConfig& c) {
  c.validate();
  if (!c.is_ode()) throw ContractError("make_ode_problem: '" + c.problem + "' is not an ODE problem");
  OdeProblem<T> p;
  p.grid = TimeGrid::uniform(c.t0, c.t1, c.steps);
  const std::size_t L = c.steps;
  auto& dyn = p.dynamics;
  dyn.num_shifts = 1;
  if (c.problem == "logistic") {
    const T r = T(c.rate), K = T(c.capacity);
    dyn.state_dim = 1;
    dyn.input_dim = 0;
    dyn.eval = [r, K](ShiftedStates<T> s, std::span<const T>, std::span<T> out) {
      const T y = s[0][0];
      out[0] = r * y * (T(1) - y / K);
    };
    dyn.jacobian = [r, K](ShiftedStates<T> s, std::span<const T>, std::size_t, std::span<T> out) {
      out[0] = r * (T(1) - T(2) * s[0][0] / K);
    };
    p.y0 = {T(0.1)};
  } else if (c.problem == "van-der-pol") {
    const T mu = T(c.mu);
    dyn.state_dim = 2;
    dyn.input_dim = 0;
    dyn.eval = [mu](ShiftedStates<T> s, std::span<const T>, std::span<T> out) {
      const T a = s[0][0], b = s[0][1];
      out[0] = b;
      out[1] = mu * (T(1) - a * a) * b - a;
    };
    dyn.jacobian = [mu](ShiftedStates<T> s, std::span<const T>, std::size_t, std::span<T> out) {
      const T a = s[0][0], b = s[0][1];
      out[0] = 0;
      out[1] = 1;
      out[2] = -T(2) * mu * a * b - T(1);
      out[3] = mu * (T(1) - a * a);
    };
    p.y0 = {T(2), T(0)};
  } else {
    const T d = T(c.decay), w = T(c.frequency);
    dyn.state_dim = 2;
    dyn.input_dim = 1;
    dyn.eval = [d, w](ShiftedStates<T> s, std::span<const T> x, std::span<T> out) {
      out[0] = -d * s[0][0] + w * s[0][1] + x[0];
      out[1] = -w * s[0][0] - d * s[0][1];
    };
    dyn.jacobian = [d, w](ShiftedStates<T> s, std::span<const T>, std::size_t, std::span<T> out) {
      (void)s;
      out[0] = -d;
      out[1] = w;
      out[2] = -w;
      out[3] = -d;
    };
    p.y0 = {T(1), T(0)};
  }
  p.inputs = Sequence<T>(L + 1, dyn.input_dim);
  if (c.problem == "linear")
    for (std::size_t i = 0; i <= L; ++i) p.inputs(i, 0) = T(std::sin(p.grid.time(i)));
  if (!c.y0.empty()) {
    p.y0.clear();
    for (double v : c.y0) p.y0.push_back(T(v));
  }
  p.validate();
  return p;
}

namespace {

template <class T>
DeerConfig<T> make_deer_config(const RunConfig& c, ThreadPool* pool) {
  DeerConfig<T> d;
  if (c.tolerance) d.tolerance = T(*c.tolerance);
  d.max_iters = c.max_iters;
  d.relative_tolerance = c.relative_tolerance;
  d.scan.chunk_size = c.chunk_size;
  d.scan.pool = pool;
  d.validate();
  return d;
}

template <class T>
struct Solved {
  std::vector<double> times;
  Sequence<T> states;  // L + 1 rows, row 0 is y0
  DeerReport report;
};

template <class T>
Solved<T> solve_problem(const RunConfig& c, const DeerConfig<T>& dc) {
  if (c.is_ode()) {
    const OdeProblem<T> p = make_ode_problem<T>(c);
    DeerResult<T> r = deer_solve_ode(p, dc, c.interpolation);
    return {std::vector<double>(p.grid.times().begin(), p.grid.times().end()), std::move(r.states),
            std::move(r.report)};
  }
  const std::size_t n = c.dims;
  const DynamicsSpec<T> cell = gru_dynamics(GruParams<T>::random(n, n, param_seed(c.seed)));
  const Sequence<T> inputs = gaussian_inputs<T>(c.steps, n, input_seed(c.seed));
  std::vector<T> y0(n, T(0));
  if (!c.y0.empty()) std::transform(c.y0.begin(), c.y0.end(), y0.begin(), [](double v) { return T(v); });
  DeerResult<T> r = deer_eval_rnn(cell, inputs, std::span<const T>(y0), dc);
  Sequence<T> states(c.steps + 1, n);
  std::copy(y0.begin(), y0.end(), states.row(0).begin());
  std::copy(r.states.values().begin(), r.states.values().end(), states.values().begin() + n);
  std::vector<double> times(c.steps + 1);
  for (std::size_t i = 0; i <= c.steps; ++i) times[i] = double(i);
  return {std::move(times), std::move(states), std::move(r.report)};
}

template <class T>
void write_solution_csv(std::ostream& out, const Solved<T>& s) {
  out << "t";
  for (std::size_t k = 0; k < s.states.dim(); ++k) out << ",y_" << k;
  out << '\n';
  for (std::size_t i = 0; i < s.states.length(); ++i) {
    out << format_real(s.times[i]);
    for (std::size_t k = 0; k < s.states.dim(); ++k) out << ',' << format_real(double(s.states(i, k)));
    out << '\n';
  }
}

template <class T>
int cmd_solve(const RunConfig& c, std::ostream& out, std::ostream& err) {
  ThreadPool pool(c.threads);
  const DeerConfig<T> dc = make_deer_config<T>(c, &pool);
  Solved<T> s = solve_problem<T>(c, dc);
  if (c.out.empty()) {
    write_solution_csv(out, s);
  } else {
    std::ofstream file(c.out);
    if (!file) {
      err << "error: cannot write '" << c.out << "'\n";
      return kExitUsage;
    }
    write_solution_csv(file, s);
  }
  const double res = s.report.residual_history.empty() ? 0.0 : s.report.residual_history.back();
  out << "# problem=" << c.problem << '@' << c.version << " precision=" << to_string(precision_of<T>())
      << " iterations=" << s.report.iterations << " residual=" << format_real(res)
      << " wall_time_s=" << format_real(s.report.wall_time) << " converged=" << (s.report.converged ? "true" : "false")
      << '\n';
  if (!s.report.converged) {
    err << "error: DEER did not converge within " << c.max_iters << " iterations\n";
    return kExitNumeric;
  }
  return kExitOk;
}

struct CheckCase {
  std::string name;
  double max_abs_diff;
  double threshold;
  std::string note;
};

// f32 round-off grows along the Van der Pol limit cycle to about 1e-5 by t = 10.
template <class T>
double check_threshold(const std::string& name) {
  if (precision_of<T>() == Precision::f64) return 1e-9;
  return name.rfind("van-der-pol", 0) == 0 ? 5e-5 : 2e-6;
}

template <class T>
std::vector<CheckCase> run_check_suite(const RunConfig& base, ThreadPool& pool) {
  std::vector<CheckCase> cases;
  auto record = [&](const std::string& name, auto&& body) {
    try {
      cases.push_back({name, body(), check_threshold<T>(name), ""});
    } catch (const std::exception& e) {
      cases.push_back({name, std::numeric_limits<double>::infinity(), check_threshold<T>(name), e.what()});
    }
  };
  for (auto [n, L, seed] : {std::tuple<std::size_t, std::size_t, std::uint64_t>{2, 10000, 0}, {8, 2000, 1},
                            {32, 1000, 2}}) {
    record("gru n=" + std::to_string(n) + " L=" + std::to_string(L), [&] {
      RunConfig c = base;
      c.problem = "gru";
      c.dims = n;
      c.steps = L;
      c.seed = seed;
      const DynamicsSpec<T> cell = gru_dynamics(GruParams<T>::random(n, n, param_seed(seed)));
      const Sequence<T> inputs = gaussian_inputs<T>(L, n, input_seed(seed));
      const std::vector<T> y0(n, T(0));
      const DeerResult<T> r = deer_eval_rnn(cell, inputs, std::span<const T>(y0), make_deer_config<T>(c, &pool));
      if (!r.report.converged) throw NumericDomainError("not converged");
      return compare_outputs(r.states, sequential_eval_rnn(cell, inputs, std::span<const T>(y0))).max_abs;
    });
  }
  for (const char* name : {"logistic", "van-der-pol", "linear"}) {
    record(std::string(name) + " L=2000", [&] {
      RunConfig c = base;
      c.problem = name;
      c.steps = 2000;
      c.y0.clear();
      const OdeProblem<T> p = make_ode_problem<T>(c);
      const DeerConfig<T> dc = make_deer_config<T>(c, &pool);
      const DeerResult<T> r = deer_solve_ode(p, dc, c.interpolation);
      if (!r.report.converged) throw NumericDomainError("not converged");
      return compare_outputs(r.states, sequential_deer_fixed_point(p, dc, c.interpolation)).max_abs;
    });
  }
  return cases;
}

template <class T>
int cmd_check(const RunConfig& c, std::ostream& out) {
  ThreadPool pool(c.threads);
  const auto cases = run_check_suite<T>(c, pool);
  out << "case,precision,max_abs_diff,threshold,status\n";
  std::size_t failed = 0;
  for (const auto& k : cases) {
    const bool ok = k.max_abs_diff <= k.threshold;
    failed += ok ? 0 : 1;
    out << k.name << ',' << to_string(precision_of<T>()) << ',' << format_real(k.max_abs_diff) << ','
        << format_real(k.threshold) << ',' << (ok ? "PASS" : "FAIL");
    if (!k.note.empty()) out << " (" << k.note << ')';
    out << '\n';
  }
  out << "# check: " << cases.size() - failed << " of " << cases.size() << " cases passed\n";
  return failed == 0 ? kExitOk : kExitNumeric;
}

template <class T>
int cmd_convergence(const RunConfig& base, const std::vector<double>& tolerances, std::size_t seeds,
                    std::ostream& out, std::ostream& err) {
  ThreadPool pool(base.threads);
  std::ostringstream csv;
  csv << "tolerance,iterations_mean,iterations_std\n";
  const double eps = std::numeric_limits<T>::epsilon();
  for (double tol : tolerances) {
    if (!(tol >= 0)) {
      err << "error: tolerances must be nonnegative\n";
      return kExitUsage;
    }
    if (tol < eps)
      err << "warning: tolerance " << format_real(tol) << " is below " << to_string(precision_of<T>())
          << " machine epsilon " << format_real(eps) << "; convergence may stall\n";
    std::vector<double> counts;
    for (std::size_t k = 0; k < seeds; ++k) {
      RunConfig c = base;
      c.tolerance = tol;
      c.seed = base.seed + k;
      if (c.is_ode()) {
        const OdeProblem<T> defaults = make_ode_problem<T>(c);
        std::mt19937_64 rng(c.seed);
        std::uniform_real_distribution<double> scale(0.5, 1.5);
        c.y0.clear();
        for (T v : defaults.y0) c.y0.push_back(double(v) * scale(rng));
      }
      const Solved<T> s = solve_problem<T>(c, make_deer_config<T>(c, &pool));
      counts.push_back(double(s.report.iterations));
    }
    double mean = 0, var = 0;
    for (double v : counts) mean += v;
    mean /= double(counts.size());
    for (double v : counts) var += (v - mean) * (v - mean);
    csv << format_real(tol) << ',' << format_real(mean) << ',' << format_real(std::sqrt(var / double(counts.size())))
        << '\n';
  }
  if (base.out.empty()) {
    out << csv.str();
  } else {
    std::ofstream file(base.out);
    if (!file) {
      err << "error: cannot write '" << base.out << "'\n";
      return kExitUsage;
    }
    file << csv.str();
  }
  return kExitOk;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"DEER parallel-in-time solver for ODEs and recurrences"};
  app.require_subcommand(1);

  // Settings shared by solve, check and convergence, keyed by config name.
  std::map<std::string, std::string> flags;
  std::string config_path;
  auto add_settings = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "Run config file (key = value or JSON)");
    for (const auto& [flag, key, help] : std::vector<std::tuple<std::string, std::string, std::string>>{
             {"--problem", "problem", "logistic | van-der-pol | linear | gru"},
             {"--steps", "steps", "Number of steps L"},
             {"--dims", "dims", "GRU state size"},
             {"--tolerance", "tolerance", "Convergence tolerance"},
             {"--max-iters", "max_iters", "Iteration cap"},
             {"--threads", "threads", "Worker threads (default DEER_THREADS or hardware)"},
             {"--chunk-size", "chunk_size", "Scan chunk size"},
             {"--precision", "precision", "f32 | f64"},
             {"--interpolation", "interpolation", "midpoint | left"},
             {"--out", "out", "Output path (default stdout)"},
             {"--seed", "seed", "Random seed"}}) {
      flags[key];
      sub->add_option(flag, flags[key], help);
    }
  };

  CLI::App* solve = app.add_subcommand("solve", "Solve one problem and print the trajectory as CSV");
  add_settings(solve);
  CLI::App* check = app.add_subcommand("check", "DEER vs sequential equivalence suite");
  add_settings(check);
  std::string fault;
  check->add_option("--inject-fault", fault, "Test hook: sign-flip")->check(CLI::IsMember({"sign-flip"}));
  CLI::App* convergence = app.add_subcommand("convergence", "Mean iteration count per tolerance over seeds");
  add_settings(convergence);
  std::string tolerance_list = "1e-2,1e-4,1e-7";
  std::size_t seed_count = 16;
  convergence->add_option("--tolerances", tolerance_list, "Comma-separated tolerances");
  convergence->add_option("--seeds", seed_count, "Number of seeds")->check(CLI::PositiveNumber);

  CLI::App* bench = app.add_subcommand("bench", "Timing grid of DEER vs sequential GRU evaluation");
  std::string lengths = "1000,10000", dims = "1,2,4,8", batches = "2", seeds = "0";
  std::string bench_out, jsonl, bench_threads, bench_precision = "f64", bench_chunk, bench_tol, bench_iters;
  std::size_t warmup = 2, repeats = 5;
  double budget_mb = 4096;
  bench->add_option("--lengths", lengths, "Sequence lengths");
  bench->add_option("--dims", dims, "State sizes");
  bench->add_option("--batches", batches, "Batch sizes");
  bench->add_option("--seeds", seeds, "Seeds");
  bench->add_option("--warmup", warmup, "Warmup runs per cell");
  bench->add_option("--repeats", repeats, "Timed runs per cell")->check(CLI::PositiveNumber);
  bench->add_option("--memory-budget-mb", budget_mb, "Skip cells estimated above this")->check(CLI::PositiveNumber);
  bench->add_option("--out", bench_out, "CSV output path (default stdout)");
  bench->add_option("--jsonl", jsonl, "JSON-lines mirror path");
  bench->add_option("--threads", bench_threads, "Worker threads");
  bench->add_option("--precision", bench_precision, "f32 | f64")->check(CLI::IsMember({"f32", "f64"}));
  bench->add_option("--chunk-size", bench_chunk, "Scan chunk size");
  bench->add_option("--tolerance", bench_tol, "Convergence tolerance");
  bench->add_option("--max-iters", bench_iters, "Iteration cap");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    app.exit(e, out, err);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kExitUsage;
  }

  try {
    if (*bench) {
      BenchOptions options;
      options.precision = bench_precision == "f32" ? Precision::f32 : Precision::f64;
      options.warmup_runs = warmup;
      options.timed_runs = repeats;
      options.memory_budget_bytes = std::size_t(budget_mb * 1024.0 * 1024.0);
      if (!bench_tol.empty()) {
        options.tolerance = parse_real("--tolerance", bench_tol);
        if (!(options.tolerance > 0)) throw ContractError("--tolerance must be positive");
      }
      if (!bench_iters.empty()) options.max_iters = parse_unsigned("--max-iters", bench_iters);
      if (!bench_chunk.empty()) options.scan.chunk_size = parse_unsigned("--chunk-size", bench_chunk);
      if (options.scan.chunk_size == 0 || options.max_iters == 0)
        throw ContractError("--chunk-size and --max-iters must be positive");
      std::vector<std::size_t> L, n, B;
      for (auto v : parse_unsigned_list("--lengths", lengths)) L.push_back(v);
      for (auto v : parse_unsigned_list("--dims", dims)) n.push_back(v);
      for (auto v : parse_unsigned_list("--batches", batches)) B.push_back(v);
      const auto S = parse_unsigned_list("--seeds", seeds);
      ThreadPool pool(bench_threads.empty() ? 0 : parse_unsigned("--threads", bench_threads));
      options.scan.pool = &pool;
      std::vector<BenchRecord> records;
      try {
        records = run_grid(L, n, B, S, options);
      } catch (const NumericDomainError& e) {
        err << "error: " << e.what() << '\n';
        return kExitNumeric;
      } catch (const DivergenceError& e) {
        err << "error: " << e.what() << '\n';
        return kExitNumeric;
      }
      if (bench_out.empty()) {
        write_bench_csv(out, records);
      } else {
        std::ofstream file(bench_out);
        if (!file) throw ContractError("cannot write '" + bench_out + "'");
        write_bench_csv(file, records);
      }
      if (!jsonl.empty()) {
        std::ofstream file(jsonl);
        if (!file) throw ContractError("cannot write '" + jsonl + "'");
        write_bench_jsonl(file, records);
      }
      return kExitOk;
    }

    RunConfig config = config_path.empty() ? RunConfig{} : load_config(config_path);
    for (const auto& [key, value] : flags)
      if (!value.empty()) {
        try {
          apply_setting(config, key, value);
        } catch (const ContractError& e) {
          throw ContractError(std::string("command line: ") + e.what());
        }
        config.source_lines.erase(key);
      }
    config.validate();

    auto by_precision = [&](auto&& body) {
      return config.precision == Precision::f32 ? body(float{}) : body(double{});
    };
    try {
      if (*solve)
        return by_precision([&](auto tag) { return cmd_solve<decltype(tag)>(config, out, err); });
      if (*check) {
        testing::set_combine_sign_flip(fault == "sign-flip");
        const int code = by_precision([&](auto tag) { return cmd_check<decltype(tag)>(config, out); });
        testing::set_combine_sign_flip(false);
        return code;
      }
      const auto tolerances = parse_real_list("--tolerances", tolerance_list);
      return by_precision([&](auto tag) {
        return cmd_convergence<decltype(tag)>(config, tolerances, seed_count, out, err);
      });
    } catch (const DivergenceError& e) {
      testing::set_combine_sign_flip(false);
      err << "error: " << e.what() << '\n';
      return kExitNumeric;
    } catch (const NumericDomainError& e) {
      testing::set_combine_sign_flip(false);
      err << "error: " << e.what() << '\n';
      return kExitNumeric;
    } catch (const SingularMatrixError& e) {
      testing::set_combine_sign_flip(false);
      err << "error: " << e.what() << '\n';
      return kExitNumeric;
    }
  } catch (const ContractError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  }
}

template OdeProblem<float> make_ode_problem(const RunConfig&);
template OdeProblem<double> make_ode_problem(const RunConfig&);

}  // namespace deer::cli

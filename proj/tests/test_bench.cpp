// SPDX-License-Identifier: Apache-2.0
#include <sstream>
#include <string>
#include <vector>

#include "deer/bench.hpp"
#include "deer/errors.hpp"
#include "doctest.h"
#include "json.hpp"

using namespace deer;

TEST_CASE("degenerate grid yields one record per method") {
  BenchOptions o;
  o.warmup_runs = 0;
  o.timed_runs = 1;
  const auto records = run_grid({64}, {2}, {1}, {0}, o);
  REQUIRE(records.size() == 2);
  CHECK(records[0].method == BenchMethod::sequential);
  CHECK(records[1].method == BenchMethod::deer);
  for (const auto& r : records) {
    CHECK(r.seq_len == 64);
    CHECK(r.dims == 2);
    CHECK_FALSE(r.skipped());
    CHECK(*r.wall_time_s >= 0.0);
  }
  CHECK(*records[0].iterations == 0);
  CHECK(*records[1].iterations >= 2);
  CHECK(*records[1].max_abs_diff <= 1e-9);
}

TEST_CASE("grid order and batches") {
  BenchOptions o;
  o.warmup_runs = 0;
  o.timed_runs = 1;
  o.precision = Precision::f32;
  const auto records = run_grid({16, 32}, {1}, {3}, {4, 5}, o);
  REQUIRE(records.size() == 8);
  CHECK(records[0].seq_len == 16);
  CHECK(records[0].seed == 4);
  CHECK(records[2].seed == 5);
  CHECK(records[4].seq_len == 32);
  for (const auto& r : records) CHECK(r.batch == 3);
  CHECK(*records[1].max_abs_diff <= 5e-6);
}

TEST_CASE("over-budget cells are skipped") {
  BenchOptions o;
  o.memory_budget_bytes = 1;
  const auto records = run_grid({1000}, {4}, {2}, {0}, o);
  REQUIRE(records.size() == 2);
  CHECK(records[0].skipped());
  CHECK(records[1].skipped());
  std::ostringstream csv;
  write_bench_csv(csv, records);
  CHECK(csv.str().find(",-") != std::string::npos);
  CHECK(estimate_memory_bytes(1000, 4, 2, Precision::f64) == (3 * 16 + 8 * 4) * 1000 * 2 * 8);
  CHECK(estimate_memory_bytes(1000, 4, 2, Precision::f32) == (3 * 16 + 8 * 4) * 1000 * 2 * 4);
}

TEST_CASE("argument validation") {
  CHECK_THROWS_AS(run_grid({}, {2}, {1}, {0}), ContractError);
  CHECK_THROWS_AS(run_grid({10}, {0}, {1}, {0}), ContractError);
  BenchOptions o;
  o.timed_runs = 0;
  CHECK_THROWS_AS(run_grid({10}, {2}, {1}, {0}, o), ContractError);
}

TEST_CASE("compare_outputs") {
  Sequence<double> a(4, 3), b(4, 3);
  auto c = compare_outputs(a, b);
  CHECK(c.max_abs == 0.0);
  CHECK(c.mean_abs == 0.0);
  b(2, 1) = -0.6;
  c = compare_outputs(a, b);
  CHECK(c.max_abs == 0.6);
  CHECK(c.mean_abs == doctest::Approx(0.05));
  CHECK(c.argmax_row == 2);
  CHECK(c.argmax_col == 1);
  CHECK_THROWS_AS(compare_outputs(a, Sequence<double>(4, 2)), ContractError);
}

TEST_CASE("csv round trip is exact") {
  std::vector<BenchRecord> records(3);
  records[0] = {BenchMethod::sequential, 100, 4, 2, 7, 0.1 + 0.2, 0, 0.0};
  records[1] = {BenchMethod::deer, 100, 4, 2, 7, 1.0 / 3.0, 5, 1.2345678901234567e-13};
  records[2] = {BenchMethod::deer, 1000000, 64, 16, 18446744073709551615ull, std::nullopt, std::nullopt,
                std::nullopt};
  std::stringstream s;
  write_bench_csv(s, records);
  CHECK(s.str().rfind(kBenchCsvHeader, 0) == 0);
  CHECK(read_bench_csv(s) == records);
}

TEST_CASE("csv reader accepts quoted fields and rejects malformed lines") {
  const std::string header = std::string(kBenchCsvHeader) + "\n";
  {
    std::stringstream s(header + "\"deer\",10,2,1,0,\"0.5\",3,1e-12\n");
    const auto r = read_bench_csv(s);
    REQUIRE(r.size() == 1);
    CHECK(*r[0].wall_time_s == 0.5);
  }
  {
    std::stringstream s(header + "deer,10,2,1,0,0.5,3\n");
    try {
      (void)read_bench_csv(s);
      FAIL("expected an error");
    } catch (const ContractError& e) {
      CHECK(std::string(e.what()).find("line 2") != std::string::npos);
    }
  }
  std::stringstream bad_method(header + "scan,10,2,1,0,0.5,3,0\n");
  CHECK_THROWS_AS(read_bench_csv(bad_method), ContractError);
  std::stringstream bad_number(header + "deer,ten,2,1,0,0.5,3,0\n");
  CHECK_THROWS_AS(read_bench_csv(bad_number), ContractError);
  std::stringstream open_quote(header + "\"deer,10,2,1,0,0.5,3,0\n");
  CHECK_THROWS_AS(read_bench_csv(open_quote), ContractError);
  std::stringstream bad_header("method,L\n");
  CHECK_THROWS_AS(read_bench_csv(bad_header), ContractError);
}

TEST_CASE("jsonl output") {
  std::vector<BenchRecord> records(2);
  records[0] = {BenchMethod::deer, 10, 2, 1, 3, 0.25, 4, 1e-15};
  records[1] = {BenchMethod::sequential, 10, 2, 1, 3, std::nullopt, std::nullopt, std::nullopt};
  std::ostringstream out;
  write_bench_jsonl(out, records);
  std::istringstream in(out.str());
  std::string line;
  std::vector<nlohmann::json> parsed;
  while (std::getline(in, line)) parsed.push_back(nlohmann::json::parse(line));
  REQUIRE(parsed.size() == 2);
  CHECK(parsed[0]["method"] == "deer");
  CHECK(parsed[0]["wall_time_s"].get<double>() == 0.25);
  CHECK(parsed[0]["iterations"].get<int>() == 4);
  CHECK(parsed[1]["wall_time_s"].is_null());
  CHECK(parsed[1]["max_abs_diff"].is_null());
}

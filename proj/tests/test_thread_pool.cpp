// SPDX-License-Identifier: Apache-2.0
#include <atomic>
#include <cstdlib>
#include <stdexcept>
#include <vector>

#include "deer/thread_pool.hpp"
#include "doctest.h"

using namespace deer;

TEST_CASE("parallel_for visits every index once") {
  for (std::size_t threads : {1u, 2u, 4u}) {
    ThreadPool pool(threads);
    CHECK(pool.size() == threads);
    std::vector<std::atomic<int>> hits(1000);
    pool.parallel_for(hits.size(), [&](std::size_t i) { hits[i]++; });
    for (auto& h : hits) CHECK(h.load() == 1);
  }
}

TEST_CASE("exceptions propagate to the caller") {
  ThreadPool pool(3);
  CHECK_THROWS_AS(pool.parallel_for(50,
                                    [](std::size_t i) {
                                      if (i == 17) throw std::runtime_error("boom");
                                    }),
                  std::runtime_error);
  std::atomic<int> count{0};
  pool.parallel_for(10, [&](std::size_t) { count++; });
  CHECK(count == 10);
}

TEST_CASE("nested parallel_for runs inline") {
  ThreadPool pool(2);
  std::atomic<int> total{0};
  pool.parallel_for(4, [&](std::size_t) { pool.parallel_for(5, [&](std::size_t) { total++; }); });
  CHECK(total == 20);
}

TEST_CASE("thread count comes from the environment") {
  setenv("DEER_THREADS", "3", 1);
  CHECK(default_thread_count() == 3);
  unsetenv("DEER_THREADS");
  CHECK(default_thread_count() >= 1);
}

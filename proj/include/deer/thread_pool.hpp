// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <atomic>
#include <condition_variable>
#include <cstddef>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace deer {

/// Fixed-size worker pool with a blocking parallel_for.
///
/// The calling thread participates in every job, so a pool of size N owns
/// N - 1 background threads. Calls made from inside a running job, or while
/// another thread holds the pool, execute inline on the caller; results never
/// depend on how indices are distributed, only on what each index computes.
class ThreadPool {
 public:
  /// `num_threads == 0` selects default_thread_count().
  explicit ThreadPool(std::size_t num_threads = 0);
  ~ThreadPool();

  ThreadPool(const ThreadPool&) = delete;
  ThreadPool& operator=(const ThreadPool&) = delete;

  std::size_t size() const noexcept { return workers_.size() + 1; }

  /// Runs fn(i) for every i in [0, count) and blocks until all finish.
  /// The first exception thrown by any fn(i) is rethrown here.
  void parallel_for(std::size_t count, const std::function<void(std::size_t)>& fn);

 private:
  struct Job;

  void worker_loop();

  std::vector<std::thread> workers_;
  std::mutex dispatch_;
  std::mutex state_;
  std::condition_variable start_cv_;
  std::condition_variable done_cv_;
  Job* job_ = nullptr;
  std::size_t generation_ = 0;
  std::size_t pending_ = 0;
  bool stop_ = false;
};

/// `DEER_THREADS` if set to a positive integer, else hardware concurrency.
std::size_t default_thread_count();

/// Process-wide pool sized by default_thread_count(), created on first use.
ThreadPool& default_pool();

}  // namespace deer

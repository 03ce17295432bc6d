// SPDX-License-Identifier: Apache-2.0
#include "deer/thread_pool.hpp"

#include <charconv>
#include <cstdlib>
#include <cstring>
#include <exception>

namespace deer {

namespace {
thread_local bool tls_inside_job = false;
}

struct ThreadPool::Job {
  const std::function<void(std::size_t)>* fn;
  std::size_t count;
  std::atomic<std::size_t> next{0};
  std::mutex error_mutex;
  std::exception_ptr error;

  void run() {
    const bool was_inside = tls_inside_job;
    tls_inside_job = true;
    for (std::size_t i = next.fetch_add(1); i < count; i = next.fetch_add(1)) {
      try {
        (*fn)(i);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
      }
    }
    tls_inside_job = was_inside;
  }
};

ThreadPool::ThreadPool(std::size_t num_threads) {
  if (num_threads == 0) num_threads = default_thread_count();
  workers_.reserve(num_threads - 1);
  for (std::size_t i = 1; i < num_threads; ++i) workers_.emplace_back([this] { worker_loop(); });
}

ThreadPool::~ThreadPool() {
  {
    std::lock_guard lock(state_);
    stop_ = true;
  }
  start_cv_.notify_all();
  for (auto& w : workers_) w.join();
}

void ThreadPool::parallel_for(std::size_t count, const std::function<void(std::size_t)>& fn) {
  if (count == 0) return;
  if (workers_.empty() || count == 1 || tls_inside_job || !dispatch_.try_lock()) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::unique_lock dispatch(dispatch_, std::adopt_lock);

  Job job;
  job.fn = &fn;
  job.count = count;
  {
    std::lock_guard lock(state_);
    job_ = &job;
    pending_ = workers_.size();
    ++generation_;
  }
  start_cv_.notify_all();
  job.run();
  {
    std::unique_lock lock(state_);
    done_cv_.wait(lock, [this] { return pending_ == 0; });
    job_ = nullptr;
  }
  if (job.error) std::rethrow_exception(job.error);
}

void ThreadPool::worker_loop() {
  std::size_t seen = 0;
  for (;;) {
    Job* job = nullptr;
    {
      std::unique_lock lock(state_);
      start_cv_.wait(lock, [&] { return stop_ || generation_ != seen; });
      if (stop_) return;
      seen = generation_;
      job = job_;
    }
    job->run();
    {
      std::lock_guard lock(state_);
      if (--pending_ == 0) done_cv_.notify_one();
    }
  }
}

std::size_t default_thread_count() {
  if (const char* env = std::getenv("DEER_THREADS")) {
    std::size_t value = 0;
    const char* end = env + std::strlen(env);
    auto [ptr, ec] = std::from_chars(env, end, value);
    if (ec == std::errc() && ptr == end && value > 0) return value;
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : hw;
}

ThreadPool& default_pool() {
  static ThreadPool pool(default_thread_count());
  return pool;
}

}  // namespace deer

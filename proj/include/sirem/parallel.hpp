#pragma once

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace sirem {

// Worker count: explicit override, else SIREM_THREADS, else hardware concurrency.
inline constexpr const char *kThreadsEnv = "SIREM_THREADS";

inline std::size_t worker_count(std::size_t override_count = 0) {
  if (override_count > 0) return override_count;
  if (const char *env = std::getenv(kThreadsEnv)) {
    try {
      long v = std::stol(env);
      if (v > 0) return static_cast<std::size_t>(v);
    } catch (...) {
    }
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

// Runs fn(i) for i in [0, n). Each index writes only its own output slot, so
// results do not depend on scheduling. The first exception is rethrown.
template <typename Fn>
void parallel_for(std::size_t n, Fn &&fn, std::size_t workers = 0) {
  workers = std::min(worker_count(workers), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (auto &t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace sirem

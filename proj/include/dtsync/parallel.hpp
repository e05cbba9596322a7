#pragma once

// Bounded worker pool for independent tasks. Results land in index order, so
// output never depends on scheduling.

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace dtsync {

/// Worker count: DTSYNC_WORKERS if set and positive, else hardware concurrency.
inline unsigned worker_count() {
  if (const char* env = std::getenv("DTSYNC_WORKERS")) {
    try {
      const int n = std::stoi(env);
      if (n > 0) return static_cast<unsigned>(n);
    } catch (...) {
    }
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

/// Runs fn(i) for i in [0, n). The first exception thrown by any task is
/// rethrown after all workers stop.
template <class Fn>
void parallel_for(size_t n, Fn&& fn, unsigned workers = worker_count()) {
  workers = static_cast<unsigned>(std::min<size_t>(std::max(1u, workers), n));
  if (workers <= 1) {
    for (size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto work = [&] {
    for (size_t i = next++; i < n; i = next++) {
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
        next = n;
      }
    }
  };
  std::vector<std::jthread> pool;
  pool.reserve(workers - 1);
  for (unsigned w = 1; w < workers; ++w) pool.emplace_back(work);
  work();
  pool.clear();
  if (error) std::rethrow_exception(error);
}

template <class T, class Fn>
std::vector<T> parallel_map(size_t n, Fn&& fn, unsigned workers = worker_count()) {
  std::vector<T> out(n);
  parallel_for(n, [&](size_t i) { out[i] = fn(i); }, workers);
  return out;
}

}  // namespace dtsync

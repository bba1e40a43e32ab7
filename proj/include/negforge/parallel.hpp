#pragma once

#include <atomic>
#include <exception>
#include <functional>
#include <thread>
#include <vector>

namespace negforge {

// Applies fn to indices [0, n) with at most max_in_flight workers.
// Results land at their input index, so assembly order is deterministic.
// The first exception wins and is rethrown after all workers stop.
template <typename Result>
std::vector<Result> parallel_map(std::size_t n, int max_in_flight,
                                 const std::function<Result(std::size_t)>& fn) {
  std::vector<Result> results(n);
  if (n == 0) return results;
  int workers = static_cast<int>(std::min<std::size_t>(n, std::max(1, max_in_flight)));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) results[i] = fn(i);
    return results;
  }

  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::exception_ptr first_error;
  std::mutex error_mutex;

  auto body = [&] {
    while (!failed.load(std::memory_order_relaxed)) {
      std::size_t i = next.fetch_add(1);
      if (i >= n) return;
      try {
        results[i] = fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
        failed = true;
        return;
      }
    }
  };

  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (int w = 0; w < workers; ++w) pool.emplace_back(body);
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
  return results;
}

}  // namespace negforge

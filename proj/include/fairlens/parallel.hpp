#pragma once

#include <atomic>
#include <cstddef>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace fairlens {

// Splits [0, total) into one contiguous chunk per worker and runs
// fn(begin, end) on each. Used for count reductions, where large chunks
// keep the merge cost negligible.
inline void parallel_chunks(std::size_t total, int workers,
                            const std::function<void(std::size_t, std::size_t)>& fn) {
  if (total == 0) return;
  const std::size_t n_workers =
      std::min<std::size_t>(std::max(workers, 1), total);
  if (n_workers <= 1) {
    fn(0, total);
    return;
  }
  std::vector<std::thread> threads;
  threads.reserve(n_workers);
  std::exception_ptr first_error;
  std::mutex error_mutex;
  const std::size_t chunk = (total + n_workers - 1) / n_workers;
  for (std::size_t w = 0; w < n_workers; ++w) {
    const std::size_t begin = w * chunk;
    const std::size_t end = std::min(begin + chunk, total);
    if (begin >= end) break;
    threads.emplace_back([&, begin, end] {
      try {
        fn(begin, end);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
      }
    });
  }
  for (auto& t : threads) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

// Runs fn(i) for every i in [0, total) with per-item scheduling from a shared
// counter. Suited to uneven tasks (per-example SHAP); results must be written
// to preallocated slots so scheduling order never matters.
inline void parallel_items(std::size_t total, int workers,
                           const std::function<void(std::size_t)>& fn) {
  if (total == 0) return;
  const std::size_t n_workers =
      std::min<std::size_t>(std::max(workers, 1), total);
  if (n_workers <= 1) {
    for (std::size_t i = 0; i < total; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::atomic<bool> abort{false};
  std::exception_ptr first_error;
  std::mutex error_mutex;
  std::vector<std::thread> threads;
  threads.reserve(n_workers);
  for (std::size_t w = 0; w < n_workers; ++w) {
    threads.emplace_back([&] {
      while (!abort.load(std::memory_order_relaxed)) {
        const std::size_t i = next.fetch_add(1, std::memory_order_relaxed);
        if (i >= total) break;
        try {
          fn(i);
        } catch (...) {
          {
            std::lock_guard<std::mutex> lock(error_mutex);
            if (!first_error) first_error = std::current_exception();
          }
          abort.store(true, std::memory_order_relaxed);
          break;
        }
      }
    });
  }
  for (auto& t : threads) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

}  // namespace fairlens

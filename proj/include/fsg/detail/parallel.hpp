#pragma once

#include <algorithm>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace fsg {

/// Splits [0, count) into at most `workers` contiguous blocks and runs
/// fn(begin, end) for each on its own thread.
template <typename Fn>
void parallel_blocks(std::size_t count, unsigned workers, Fn&& fn) {
  workers = std::max(1u, workers);
  if (count == 0) return;
  if (workers == 1 || count < 2) {
    fn(std::size_t{0}, count);
    return;
  }
  const std::size_t threads = std::min<std::size_t>(workers, count);
  const std::size_t block = (count + threads - 1) / threads;
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  pool.reserve(threads);
  for (std::size_t t = 0; t < threads; ++t) {
    pool.emplace_back([&, t] {
      const std::size_t begin = std::min(count, t * block);
      const std::size_t end = std::min(count, begin + block);
      try {
        if (begin < end) fn(begin, end);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

template <typename Fn>
void parallel_for(std::size_t count, unsigned workers, Fn&& fn) {
  parallel_blocks(count, workers, [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) fn(i);
  });
}

}  // namespace fsg

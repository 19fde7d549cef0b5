#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace statexp {

/// How sample work is split. `workers` fixes the block partition (and so the
/// floating-point merge order); `threads` only decides how many OS threads
/// pick up blocks and never changes results. threads = 0 means hardware
/// concurrency.
struct Parallelism {
  int workers = 1;
  int threads = 0;
};

inline int resolve_threads(int threads) {
  if (threads > 0) return threads;
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

/// Splits [0, count) into `workers` contiguous blocks and returns
/// task(block, begin, end) for each block, in block order.
template <class Task>
auto run_blocks(std::uint64_t count, const Parallelism& par, Task task) {
  using Result = decltype(task(0, std::uint64_t{0}, std::uint64_t{0}));
  const int workers = std::max(1, par.workers);
  std::vector<Result> results(workers);
  std::atomic<int> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;

  auto loop = [&] {
    for (int b; (b = next.fetch_add(1)) < workers;) {
      const std::uint64_t begin = count * static_cast<std::uint64_t>(b) / workers;
      const std::uint64_t end = count * static_cast<std::uint64_t>(b + 1) / workers;
      try {
        results[b] = task(b, begin, end);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };

  const int threads = std::min(resolve_threads(par.threads), workers);
  if (threads <= 1) {
    loop();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(loop);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);
  return results;
}

}  // namespace statexp

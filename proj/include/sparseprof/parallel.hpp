#pragma once

#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace sparseprof {

/// Runs fn(worker) on `workers` threads (inline when workers == 1) and
/// rethrows the first exception raised by any of them after all have joined.
template <class Fn>
void run_workers(unsigned workers, Fn&& fn) {
  if (workers <= 1) {
    fn(0u);
    return;
  }
  std::exception_ptr first;
  std::mutex mu;
  {
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (unsigned w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        try {
          fn(w);
        } catch (...) {
          std::lock_guard lk(mu);
          if (!first) first = std::current_exception();
        }
      });
    }
  }
  if (first) std::rethrow_exception(first);
}

}  // namespace sparseprof

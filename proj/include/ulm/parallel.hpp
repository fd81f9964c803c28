#pragma once

#include <cstdlib>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace ulm {

// Worker cap: hardware concurrency, bounded by the ULM_THREADS env var.
inline int thread_budget() {
  int n = static_cast<int>(std::thread::hardware_concurrency());
  if (n < 1) n = 1;
  if (const char* e = std::getenv("ULM_THREADS")) {
    const int v = std::atoi(e);
    if (v >= 1 && v < n) n = v;
  }
  return n;
}

// Static contiguous partition of [0, n). Callers write to independent
// per-index slots, so results do not depend on the thread count.
inline void parallel_for(int n, const std::function<void(int)>& fn) {
  const int nt = std::min(thread_budget(), n);
  if (nt <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> workers;
  std::exception_ptr first_error;
  std::mutex err_mutex;
  for (int c = 0; c < nt; ++c) {
    const int lo = static_cast<int>(static_cast<long long>(n) * c / nt);
    const int hi = static_cast<int>(static_cast<long long>(n) * (c + 1) / nt);
    workers.emplace_back([&, lo, hi] {
      try {
        for (int i = lo; i < hi; ++i) fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(err_mutex);
        if (!first_error) first_error = std::current_exception();
      }
    });
  }
  for (auto& w : workers) w.join();
  if (first_error) std::rethrow_exception(first_error);
}

}  // namespace ulm

#pragma once

// Optional per-sample parallelism. BITSEG_THREADS caps the worker count;
// unset or 0 runs everything on the calling thread (the determinism reference
// mode). Callers only parallelize work whose results are combined in a fixed
// order afterwards, so outputs do not depend on the thread count.

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace bitseg {

inline std::size_t configured_threads() {
  static const std::size_t n = [] {
    const char* env = std::getenv("BITSEG_THREADS");
    if (env == nullptr || *env == '\0') return std::size_t{0};
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    return v > 0 ? static_cast<std::size_t>(v) : std::size_t{0};
  }();
  return n;
}

template <typename Fn>
void parallel_for(std::size_t count, Fn&& fn, std::size_t threads = configured_threads()) {
  if (threads <= 1 || count <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  const std::size_t workers = std::min(threads, count);
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mu;
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t t = 0; t < workers; ++t) {
    pool.emplace_back([&] {
      for (;;) {
        const std::size_t i = next.fetch_add(1);
        if (i >= count) return;
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(failure_mu);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (failure) std::rethrow_exception(failure);
}

}  // namespace bitseg

#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdlib>
#include <string>
#include <thread>
#include <vector>

namespace halo {

/// Worker cap from HALO_THREADS, falling back to `fallback` when unset or invalid.
inline int thread_count(int fallback = 1) {
  if (const char* env = std::getenv("HALO_THREADS")) {
    try {
      const int n = std::stoi(env);
      if (n >= 1) return n;
    } catch (...) {
    }
  }
  return std::max(1, fallback);
}

/// Runs fn(i) for i in [0, n). Work is split into contiguous ranges of outer
/// indices; each fn(i) must write only its own outputs.
template <typename Fn>
void parallel_for(std::int64_t n, Fn&& fn) {
  const auto workers = static_cast<std::int64_t>(std::min<std::int64_t>(thread_count(), n));
  if (workers <= 1) {
    for (std::int64_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(workers));
  for (std::int64_t w = 0; w < workers; ++w) {
    const std::int64_t lo = n * w / workers;
    const std::int64_t hi = n * (w + 1) / workers;
    pool.emplace_back([lo, hi, &fn] {
      for (std::int64_t i = lo; i < hi; ++i) fn(i);
    });
  }
  for (auto& t : pool) t.join();
}

}  // namespace halo

#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <thread>
#include <vector>

namespace cglue {

namespace detail {
inline std::atomic<unsigned>& thread_count_storage() {
  static std::atomic<unsigned> count{1};
  return count;
}
}  // namespace detail

/// Number of worker threads used by per-cell loops. Results never depend on it:
/// loops only write disjoint outputs and all reductions stay serial.
inline unsigned thread_count() { return detail::thread_count_storage().load(); }
inline void set_thread_count(unsigned n) { detail::thread_count_storage().store(std::max(1u, n)); }

/// Runs body(begin, end) over [0, count) split into contiguous chunks.
template <typename Body>
void parallel_for(std::size_t count, Body&& body) {
  const unsigned workers = static_cast<unsigned>(std::min<std::size_t>(thread_count(), count));
  if (workers <= 1) {
    body(std::size_t{0}, count);
    return;
  }
  std::vector<std::jthread> pool;
  pool.reserve(workers);
  const std::size_t chunk = (count + workers - 1) / workers;
  for (unsigned w = 0; w < workers; ++w) {
    const std::size_t begin = w * chunk;
    const std::size_t end = std::min(count, begin + chunk);
    if (begin >= end) break;
    pool.emplace_back([&body, begin, end] { body(begin, end); });
  }
}

}  // namespace cglue

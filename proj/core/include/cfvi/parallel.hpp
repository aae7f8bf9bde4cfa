#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <thread>
#include <vector>

namespace cfvi {

namespace detail {
inline std::atomic<int>& worker_setting() {
  static std::atomic<int> workers{1};
  return workers;
}
}  // namespace detail

/// Process-wide worker count for read-only fan-out phases. 1 = deterministic single worker.
inline void set_workers(int n) { detail::worker_setting().store(std::max(1, n)); }
inline int workers() { return detail::worker_setting().load(); }

/// Splits [0, n) into contiguous chunks, runs fn(begin, end) on each chunk and joins.
/// Chunk boundaries only depend on n and the worker count; every element is
/// processed exactly once, so per-element results do not depend on scheduling.
template <typename Fn>
void parallel_for(std::size_t n, Fn&& fn) {
  const auto w = static_cast<std::size_t>(workers());
  if (w <= 1 || n < 2) {
    if (n > 0) fn(std::size_t{0}, n);
    return;
  }
  const std::size_t chunks = std::min(w, n);
  const std::size_t per = (n + chunks - 1) / chunks;
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(chunks);
  for (std::size_t c = 0; c < chunks; ++c) {
    const std::size_t b = c * per;
    const std::size_t e = std::min(n, b + per);
    if (b >= e) break;
    pool.emplace_back([&, c, b, e] {
      try {
        fn(b, e);
      } catch (...) {
        errors[c] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& err : errors)
    if (err) std::rethrow_exception(err);
}

}  // namespace cfvi

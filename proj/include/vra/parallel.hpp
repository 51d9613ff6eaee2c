#pragma once

#include <cstddef>
#include <thread>
#include <vector>

namespace vra {

// Runs fn(i) for i in [0, n). Work is assigned by static stride so each index
// always lands on the same worker; callers write results into per-index slots,
// which keeps outputs identical for any worker count.
template <typename Fn>
void parallel_for(size_t n, int workers, Fn&& fn) {
  if (workers <= 1 || n <= 1) {
    for (size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  size_t w = std::min<size_t>(size_t(workers), n);
  std::vector<std::thread> pool;
  pool.reserve(w);
  for (size_t t = 0; t < w; ++t) {
    pool.emplace_back([t, w, n, &fn] {
      for (size_t i = t; i < n; i += w) fn(i);
    });
  }
  for (auto& th : pool) th.join();
}

inline int default_workers() {
  unsigned hc = std::thread::hardware_concurrency();
  return hc == 0 ? 1 : int(hc);
}

}  // namespace vra

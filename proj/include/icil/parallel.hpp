#pragma once

#include <cstdint>
#include <thread>
#include <vector>

namespace icil::num {

// Runs fn(begin, end) over a fixed contiguous partition of [0, n). The split
// depends only on (n, workers), never on scheduling, so results that are
// written to disjoint ranges are identical for any worker count.
template <typename Fn>
void parallel_ranges(int64_t n, int workers, Fn&& fn) {
  if (workers <= 1 || n <= 1) {
    fn(int64_t(0), n);
    return;
  }
  if (int64_t(workers) > n) workers = int(n);
  std::vector<std::thread> pool;
  pool.reserve(size_t(workers));
  int64_t chunk = (n + workers - 1) / workers;
  for (int w = 0; w < workers; ++w) {
    int64_t b = int64_t(w) * chunk;
    int64_t e = std::min(n, b + chunk);
    if (b >= e) break;
    pool.emplace_back([&fn, b, e] { fn(b, e); });
  }
  for (auto& th : pool) th.join();
}

}  // namespace icil::num

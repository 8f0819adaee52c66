#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <functional>
#include <thread>
#include <vector>

namespace h2scope {

// Runs fn(0..n-1) on at most |parallel| threads. Returns the peak number of
// calls that were in flight at once.
inline std::size_t bounded_for_each(std::size_t n, std::size_t parallel, const std::function<void(std::size_t)>& fn) {
  if (n == 0) return 0;
  parallel = std::clamp<std::size_t>(parallel, 1, n);
  std::atomic<std::size_t> next{0};
  std::atomic<std::size_t> in_flight{0};
  std::atomic<std::size_t> peak{0};
  auto body = [&] {
    for (;;) {
      std::size_t i = next.fetch_add(1);
      if (i >= n) return;
      std::size_t now = in_flight.fetch_add(1) + 1;
      std::size_t seen = peak.load();
      while (now > seen && !peak.compare_exchange_weak(seen, now)) {
      }
      fn(i);
      in_flight.fetch_sub(1);
    }
  };
  std::vector<std::thread> threads;
  threads.reserve(parallel - 1);
  for (std::size_t t = 1; t < parallel; ++t) threads.emplace_back(body);
  body();
  for (auto& t : threads) t.join();
  return peak.load();
}

}  // namespace h2scope

#pragma once

#include <algorithm>
#include <cstddef>
#include <exception>
#include <thread>
#include <vector>

namespace reachcal {

// Process-wide worker cap; 0 means hardware concurrency.
void set_max_threads(unsigned threads);
unsigned max_threads();

// Runs fn(begin, end) over a static partition of [0, n). Each index is owned
// by exactly one worker, so results written per index do not depend on the
// number of threads.
template <class Fn>
void parallel_for(std::size_t n, Fn&& fn, std::size_t min_chunk = 256) {
  unsigned workers = max_threads();
  std::size_t max_workers = std::max<std::size_t>(1, n / std::max<std::size_t>(1, min_chunk));
  workers = static_cast<unsigned>(std::min<std::size_t>(workers, max_workers));
  if (workers <= 1) {
    if (n > 0) fn(std::size_t{0}, n);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(workers);
  std::size_t chunk = (n + workers - 1) / workers;
  for (unsigned w = 0; w < workers; ++w) {
    std::size_t begin = w * chunk;
    std::size_t end = std::min(n, begin + chunk);
    if (begin >= end) break;
    pool.emplace_back([&, w, begin, end] {
      try {
        fn(begin, end);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace reachcal

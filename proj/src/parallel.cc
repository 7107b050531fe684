#include "reachcal/parallel.h"

#include <atomic>

namespace reachcal {
namespace {
std::atomic<unsigned> g_max_threads{0};
}

void set_max_threads(unsigned threads) { g_max_threads.store(threads); }

unsigned max_threads() {
  unsigned t = g_max_threads.load();
  if (t == 0) t = std::max(1u, std::thread::hardware_concurrency());
  return t;
}

}  // namespace reachcal

#pragma once

#include <cstdint>
#include <initializer_list>
#include <limits>
#include <random>

namespace reachcal {

inline std::uint64_t splitmix64_mix(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

// Order-sensitive hash of a tuple of integers; used to derive independent
// stream keys from (seed, domain, step, index, ...).
inline std::uint64_t derive_key(std::initializer_list<std::uint64_t> parts) {
  std::uint64_t h = 0x9E3779B97F4A7C15ULL;
  for (std::uint64_t p : parts) {
    h = splitmix64_mix(h ^ splitmix64_mix(p + 0x9E3779B97F4A7C15ULL));
  }
  return h;
}

// Counter-based SplitMix64 generator. Cheap to construct, so one stream can
// be created per (query, diffusion step, repeat) without shared state.
class Stream {
 public:
  using result_type = std::uint64_t;

  explicit Stream(std::uint64_t key) : state_(key) {}

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() {
    return std::numeric_limits<result_type>::max();
  }

  result_type operator()() {
    state_ += 0x9E3779B97F4A7C15ULL;
    return splitmix64_mix(state_);
  }

  double uniform() {  // [0, 1)
    return static_cast<double>((*this)() >> 11) * 0x1.0p-53;
  }

  double normal() { return normal_(*this); }

 private:
  std::uint64_t state_;
  std::normal_distribution<double> normal_;
};

// Stream domains keep calibration, test, grid and training noise disjoint.
enum class Domain : std::uint64_t {
  kTraining = 1,
  kCalibration = 2,
  kTest = 3,
  kGrid = 4,
  kProbe = 5,
  kSensitivity = 6,
  kPool = 7,
  kAdhoc = 8,
};

}  // namespace reachcal

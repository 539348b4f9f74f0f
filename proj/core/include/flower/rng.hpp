#pragma once

#include <cstdint>
#include <limits>
#include <random>
#include <vector>

namespace flower {

// Deterministic random stream. mt19937_64 output is fully specified by the
// standard and the mapping to doubles below avoids std::uniform_real_distribution,
// whose output is implementation-defined. Identical seed + identical call
// sequence gives a bitwise-identical stream on every platform.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1) with 53 bits of randomness.
  double next_double() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

  // Unbiased uniform integer in [0, n). n must be > 0.
  std::uint64_t next_below(std::uint64_t n) {
    const std::uint64_t max = std::numeric_limits<std::uint64_t>::max();
    const std::uint64_t limit = max - max % n;
    std::uint64_t x;
    do {
      x = engine_();
    } while (x >= limit);
    return x % n;
  }

  // Fisher-Yates with the deterministic integer draw above.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(next_below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace flower

#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <vector>

namespace imbllm {

/// Mixes a master seed with a stream index into an independent seed (splitmix64 finalizer).
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index);

/// Seeded random stream. All draws are computed from raw 64-bit engine output
/// so results do not depend on the standard library's distribution classes.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  /// Uniform integer in [0, n). n must be positive.
  std::size_t below(std::size_t n);

  /// Standard normal via Box-Muller (no cached second variate).
  double normal();

  template <class T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::size_t j = below(i);
      std::swap(items[i - 1], items[j]);
    }
  }

  /// Uniformly random permutation of 0..n-1.
  std::vector<std::size_t> permutation(std::size_t n);

 private:
  std::mt19937_64 engine_;
};

}  // namespace imbllm

#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace featreplay {

/// Seeded random source with platform-independent uniform/normal transforms.
///
/// std::uniform_real_distribution and std::normal_distribution are
/// implementation-defined, so golden files would depend on the standard
/// library. The transforms here only depend on mt19937_64's output.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n).
  std::uint64_t index(std::uint64_t n);

  /// Standard normal via Box-Muller.
  double normal();

  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::swap(items[i - 1], items[index(i)]);
    }
  }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

/// Derive an independent child seed (splitmix64 finalizer over seed and stream id).
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace featreplay

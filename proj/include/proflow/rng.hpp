#pragma once

// Counter-based pseudo random numbers.
//
// Every draw is a pure function of (key, counter): the i-th 64-bit word of a
// stream keyed by `k` is splitmix64(k + (i + 1) * 0x9E3779B97F4A7C15), i.e. the
// SplitMix64 finalizer applied to a Weyl sequence. Uniforms take the top 53
// bits; normals use the Box-Muller transform and consume two words each (the
// sine branch is cached). Nothing depends on <random>'s distribution classes,
// whose output is implementation defined.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string_view>

namespace proflow {

constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

constexpr std::uint64_t splitmix64(std::uint64_t z) noexcept {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

/// FNV-1a, used to fold stage names into seeds.
constexpr std::uint64_t fnv1a(std::string_view s) noexcept {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001B3ULL;
  }
  return h;
}

/// sub-seed = splitmix64(splitmix64(master ^ fnv1a(stage)) + index * golden)
constexpr std::uint64_t derive_seed(std::uint64_t master, std::string_view stage,
                                    std::uint64_t index = 0) noexcept {
  return splitmix64(splitmix64(master ^ fnv1a(stage)) + index * kGolden);
}

constexpr std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index) noexcept {
  return splitmix64(splitmix64(master) + (index + 1) * kGolden);
}

class CounterRng {
 public:
  explicit CounterRng(std::uint64_t key) noexcept : key_(key) {}

  std::uint64_t next_u64() noexcept { return splitmix64(key_ + (++counter_) * kGolden); }

  /// Uniform on [0, 1).
  double uniform() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Uniform integer on [0, n).
  std::uint64_t below(std::uint64_t n) noexcept {
    return static_cast<std::uint64_t>(uniform() * static_cast<double>(n));
  }

  double normal() noexcept {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    // 1 - uniform() lies in (0, 1], keeping the log finite.
    const double r = std::sqrt(-2.0 * std::log(1.0 - uniform()));
    const double theta = 2.0 * std::numbers::pi * uniform();
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  std::uint64_t key() const noexcept { return key_; }
  std::uint64_t counter() const noexcept { return counter_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace proflow

#pragma once
// Counter-based random streams. A stream is fully determined by its key, so
// per-pixel / per-walk streams need no shared state and parallelize freely.

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>

namespace usconf {

inline constexpr std::uint64_t splitmix64(std::uint64_t z) noexcept {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Hash of a tuple of 64-bit words.
inline constexpr std::uint64_t stream_key(std::uint64_t a, std::uint64_t b = 0, std::uint64_t c = 0) noexcept {
  return splitmix64(splitmix64(splitmix64(a) ^ b) ^ c);
}

/// Output k of the stream is splitmix64(key + k * golden). Satisfies
/// UniformRandomBitGenerator.
class CounterRng {
public:
  using result_type = std::uint64_t;

  explicit constexpr CounterRng(std::uint64_t key) noexcept : key_(key) {}

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept { return std::numeric_limits<result_type>::max(); }

  constexpr result_type operator()() noexcept { return splitmix64(key_ + 0x9e3779b97f4a7c15ULL * counter_++); }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() noexcept { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

  /// Standard normal via Box-Muller (one value per call; the twin is dropped).
  double normal() noexcept {
    const double u1 = 1.0 - uniform(); // (0, 1]
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

} // namespace usconf

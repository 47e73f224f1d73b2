#pragma once

// Counter-based random numbers. Every draw is a pure function of a key tuple,
// so generation order and thread scheduling never change the values.

#include <cmath>
#include <cstdint>
#include <numbers>

namespace hyperkkl {

inline constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Named streams so different consumers of one trajectory seed never collide.
enum class Channel : std::uint64_t {
  process_noise = 1,
  measurement_noise = 2,
  signal = 3,
  initial_condition = 4,
  init_weights = 5,
  batch = 6,
  collocation = 7,
};

class CounterRng {
 public:
  constexpr CounterRng(std::uint64_t seed, std::uint64_t stream,
                       std::uint64_t sub = 0) noexcept
      : key_(splitmix64(splitmix64(splitmix64(seed) ^ stream) ^ sub)) {}

  constexpr CounterRng(std::uint64_t seed, Channel channel,
                       std::uint64_t sub = 0) noexcept
      : CounterRng(seed, static_cast<std::uint64_t>(channel), sub) {}

  /// Raw 64 bits at counter position `i`.
  constexpr std::uint64_t at(std::uint64_t i) const noexcept {
    return splitmix64(key_ ^ splitmix64(i + 0x632be59bd9b4e019ULL));
  }

  std::uint64_t next_u64() noexcept { return at(counter_++); }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() noexcept {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) noexcept {
    return lo + (hi - lo) * uniform();
  }

  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) noexcept {
    return static_cast<std::uint64_t>(uniform() * static_cast<double>(n)) % n;
  }

  /// Standard normal via Box-Muller (one value per call, two uniforms).
  double normal() noexcept {
    double u1 = uniform();
    double u2 = uniform();
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  /// Standard normal at a fixed counter position (consumes slots 2i, 2i+1).
  double normal_at(std::uint64_t i) const noexcept {
    double u1 = static_cast<double>(at(2 * i) >> 11) * 0x1.0p-53;
    const double u2 = static_cast<double>(at(2 * i + 1) >> 11) * 0x1.0p-53;
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  std::uint64_t counter() const noexcept { return counter_; }
  void seek(std::uint64_t c) noexcept { counter_ = c; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace hyperkkl

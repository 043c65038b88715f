// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <string_view>
#include <utility>

namespace kdsr {

/// Counter-based SplitMix64 generator.
///
/// Output n of a stream is mix64(key + n * 0x9E3779B97F4A7C15), so a stream is
/// fully described by (key, counter) and can be forked into independent child
/// streams without touching the parent. Only integer arithmetic feeds the
/// uniform draws, so sequences are identical on every platform. Gaussian draws
/// go through std::log/std::cos and are reproducible wherever libm is.
class Rng {
 public:
  struct State {
    std::uint64_t key = 0;
    std::uint64_t counter = 0;
    bool operator==(const State&) const = default;
  };

  static constexpr std::uint64_t kGamma = 0x9E3779B97F4A7C15ULL;

  static constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  static constexpr std::uint64_t hash_name(std::string_view name) noexcept {
    std::uint64_t h = 0xCBF29CE484222325ULL;  // FNV-1a
    for (char c : name) {
      h ^= static_cast<unsigned char>(c);
      h *= 0x100000001B3ULL;
    }
    return h;
  }

  explicit Rng(std::uint64_t key = 0, std::uint64_t counter = 0) noexcept
      : state_{key, counter} {}
  explicit Rng(State s) noexcept : state_(s) {}

  /// Independent stream for one purpose ("data", "init", "pairs", ...).
  static Rng stream(std::uint64_t seed, std::string_view purpose) noexcept {
    return Rng(mix64(seed ^ mix64(hash_name(purpose))));
  }

  /// Child stream keyed by index; the parent is not advanced.
  Rng fork(std::uint64_t index) const noexcept {
    return Rng(mix64(state_.key ^ mix64(index + kGamma)));
  }

  std::uint64_t next_u64() noexcept {
    ++state_.counter;
    return mix64(state_.key + state_.counter * kGamma);
  }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() noexcept {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  /// Uniform integer in [0, n). Rejection sampling, no modulo bias.
  std::uint64_t below(std::uint64_t n) noexcept {
    if (n <= 1) return 0;
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
    std::uint64_t r = next_u64();
    while (r >= limit) r = next_u64();
    return r % n;
  }

  /// Standard normal via Box-Muller. Consumes two draws per call.
  double normal() noexcept {
    double u1 = uniform();
    const double u2 = uniform();
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  double normal(double mean, double stddev) noexcept { return mean + stddev * normal(); }

  template <class T>
  void shuffle(std::span<T> values) noexcept {
    for (std::size_t i = values.size(); i > 1; --i) {
      const std::size_t j = below(i);
      std::swap(values[i - 1], values[j]);
    }
  }

  State state() const noexcept { return state_; }
  void restore(State s) noexcept { state_ = s; }

 private:
  State state_;
};

}  // namespace kdsr

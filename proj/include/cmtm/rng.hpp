#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>

#include "cmtm/errors.hpp"

namespace cmtm {

// Deterministic random source. Wraps std::mt19937_64 (bit-exact across
// platforms) and derives every distribution from raw 64-bit draws with
// explicit arithmetic, so sequences never depend on standard-library
// distribution internals. Counts draws so tests can assert that a code
// path consumed no randomness.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : gen_(seed) {}

  std::uint64_t next_u64() {
    ++draws_;
    return gen_();
  }

  // Uniform in [0, 1) with 53 bits of precision.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform integer in [0, n). Rejection sampling keeps it unbiased.
  std::uint64_t index(std::uint64_t n) {
    if (n == 0) throw UsageError("Rng::index: n must be positive");
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x = next_u64();
    while (x >= limit) x = next_u64();
    return x % n;
  }

  // Standard normal via Box-Muller. No caching: each call consumes exactly
  // two raw draws, keeping the draw count predictable.
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  std::uint64_t draw_count() const { return draws_; }

 private:
  std::mt19937_64 gen_;
  std::uint64_t draws_ = 0;
};

// Stable seed derivation: FNV-1a over the tag mixed with the base seed,
// finished with a splitmix64 scramble. Used to give each consumer (param
// init, data, training) its own independent stream.
inline std::uint64_t derive_seed(std::uint64_t base, std::string_view tag) {
  std::uint64_t h = 1469598103934665603ULL ^ base;
  for (const char c : tag) {
    h ^= static_cast<std::uint64_t>(static_cast<unsigned char>(c));
    h *= 1099511628211ULL;
  }
  h += 0x9e3779b97f4a7c15ULL;
  h = (h ^ (h >> 30)) * 0xbf58476d1ce4e5b9ULL;
  h = (h ^ (h >> 27)) * 0x94d049bb133111ebULL;
  return h ^ (h >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t base, std::string_view tag, std::uint64_t n) {
  return derive_seed(base + 0x632be59bd9b4e019ULL * (n + 1), tag);
}

}  // namespace cmtm

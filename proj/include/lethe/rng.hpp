#pragma once

// Deterministic randomness. Every stage derives its own stream from the
// master seed plus a purpose tag, so stages can be re-run in isolation and
// observers (monitoring, eval) never consume draws from a training stream.
// Distributions are implemented here rather than taken from <random> because
// std:: distribution output is not pinned by the standard and artifact
// digests must be bitwise reproducible.

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>

namespace lethe {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t hash_tag(std::string_view tag) {
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
  for (unsigned char c : tag) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Stream id for (master seed, purpose, index). Chaining through splitmix64
// keeps unrelated streams decorrelated even for adjacent indices.
inline std::uint64_t derive_seed(std::uint64_t master, std::string_view tag,
                                 std::uint64_t index = 0) {
  std::uint64_t s = splitmix64(master ^ hash_tag(tag));
  return splitmix64(s ^ splitmix64(index));
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // Uniform integer in [0, n). Rejection-free multiply-shift keeps the bias
  // below 2^-64, which is irrelevant at the range sizes used here.
  std::uint64_t uniform_index(std::uint64_t n) {
    __uint128_t wide = static_cast<__uint128_t>(next_u64()) * n;
    return static_cast<std::uint64_t>(wide >> 64);
  }

  // Box-Muller; the sine branch is discarded so each call consumes exactly
  // two engine draws.
  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

 private:
  std::mt19937_64 engine_;
};

}  // namespace lethe

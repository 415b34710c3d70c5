#pragma once

#include <cstdint>
#include <cmath>
#include <random>

namespace cut {

/// SplitMix64 finalizer; used to derive independent stream seeds.
constexpr std::uint64_t mix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

/// Seed for a named stream: one master seed fans out deterministically.
constexpr std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream,
                                    std::uint64_t a = 0, std::uint64_t b = 0) {
  return mix64(mix64(mix64(master ^ mix64(stream)) + a) + b);
}

namespace streams {
inline constexpr std::uint64_t init = 1;
inline constexpr std::uint64_t data = 2;
inline constexpr std::uint64_t indices = 3;
inline constexpr std::uint64_t flip = 4;
inline constexpr std::uint64_t single_image = 5;
inline constexpr std::uint64_t embedder = 6;
}  // namespace streams

using Rng = std::mt19937_64;

/// Uniform integer in [0, n) by rejection; portable across standard libraries.
inline std::uint64_t uniform_index(Rng& rng, std::uint64_t n) {
  const std::uint64_t limit = Rng::max() - (Rng::max() % n) - 1;
  std::uint64_t r;
  do {
    r = rng();
  } while (r > limit);
  return r % n;
}

/// Uniform double in [0, 1) from the top 53 bits.
inline double uniform01(Rng& rng) {
  return static_cast<double>(rng() >> 11) * (1.0 / 9007199254740992.0);
}

/// Standard normal via Box-Muller; portable across standard libraries.
inline double standard_normal(Rng& rng) {
  double u1 = uniform01(rng);
  while (u1 <= 0.0) u1 = uniform01(rng);
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925 * u2);
}

}  // namespace cut

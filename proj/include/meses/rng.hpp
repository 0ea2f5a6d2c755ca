#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace meses {

using Rng = std::mt19937_64;

/// Derives an independent generator from a root seed and a list of stream
/// coordinates (epoch, window index, ...). The same coordinates always give
/// the same stream, independent of the order streams are created in.
template <class Coords>
inline Rng derive_rng(std::uint64_t seed, const Coords& coords) {
  auto mix = [](std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
  };
  std::uint64_t h = mix(seed);
  for (auto c : coords) h = mix(h ^ mix(c));
  return Rng(h);
}

inline Rng derive_rng(std::uint64_t seed, std::initializer_list<std::uint64_t> coords) {
  return derive_rng<std::initializer_list<std::uint64_t>>(seed, coords);
}

/// Uniform double in [0, 1) from the top 53 bits.
inline double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

inline double uniform(Rng& rng, double lo, double hi) { return lo + (hi - lo) * uniform01(rng); }

inline bool bernoulli(Rng& rng, double p) { return uniform01(rng) < p; }

/// Uniform integer in [0, n). n must be positive.
inline std::size_t uniform_index(Rng& rng, std::size_t n) {
  return static_cast<std::size_t>(std::uniform_int_distribution<std::uint64_t>(0, n - 1)(rng));
}

}  // namespace meses

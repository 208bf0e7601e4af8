#pragma once

#include <cstdint>
#include <random>

namespace secnn {

// The single generator type threaded through every stochastic operation.
using Rng = std::mt19937_64;

// Uniform in [0, 1) with 24 bits of resolution.
inline float uniform01(Rng& rng) { return static_cast<float>(rng() >> 40) * (1.0f / 16777216.0f); }

inline float gaussian(Rng& rng, float stddev = 1.0f) {
  std::normal_distribution<float> dist(0.0f, stddev);
  return dist(rng);
}

// splitmix64 finalizer; used to derive independent child seeds.
inline std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0) {
  return mix_seed(mix_seed(mix_seed(base) ^ a) ^ b);
}

}  // namespace secnn

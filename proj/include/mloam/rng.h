#pragma once

#include <cstdint>
#include <random>

namespace mloam {

// splitmix64 step, used to mix (seed, frame, lidar) into one RNG seed.
inline uint64_t mix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::mt19937_64 make_rng(uint64_t seed, uint64_t a = 0, uint64_t b = 0) {
  return std::mt19937_64(mix64(mix64(mix64(seed) ^ a) ^ b));
}

}  // namespace mloam

#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <vector>

#include "pipefold/errors.hpp"

namespace pipefold {

// Deterministic randomness helpers on top of std::mt19937_64. The engine is
// fully specified by the standard; the distribution classes in <random> are
// not, so the value mappings live here to keep runs reproducible across
// standard library versions.

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Independent stream derived from a base seed. Stream indices keep the
// training phases decorrelated without threading one generator everywhere.
inline std::mt19937_64 seeded_stream(std::uint64_t seed, std::uint64_t stream) {
  return std::mt19937_64(splitmix64(seed + splitmix64(stream)));
}

// Unbiased integer in [0, n).
inline std::uint64_t uniform_u64(std::mt19937_64& gen, std::uint64_t n) {
  if (n == 0) throw ValueError("uniform_u64: n must be positive");
  const std::uint64_t max = std::numeric_limits<std::uint64_t>::max();
  const std::uint64_t rem = (max % n + 1) % n;
  const std::uint64_t bound = max - rem;
  std::uint64_t x = gen();
  while (x > bound) x = gen();
  return x % n;
}

// Integer in the closed range [lo, hi].
inline int uniform_int(std::mt19937_64& gen, int lo, int hi) {
  if (lo > hi) throw ValueError("uniform_int: empty range");
  return lo + static_cast<int>(uniform_u64(gen, static_cast<std::uint64_t>(hi - lo) + 1));
}

// Uniform double in [0, 1).
inline double uniform_real(std::mt19937_64& gen) {
  return static_cast<double>(gen() >> 11) * 0x1.0p-53;
}

// Standard normal via Box-Muller. No caching of the second value so draw
// sequences stay easy to reason about.
inline float normal_float(std::mt19937_64& gen) {
  double u1 = uniform_real(gen);
  while (u1 <= 0.0) u1 = uniform_real(gen);
  const double u2 = uniform_real(gen);
  const double r = std::sqrt(-2.0 * std::log(u1));
  return static_cast<float>(r * std::cos(2.0 * 3.14159265358979323846 * u2));
}

template <typename T>
void shuffle_inplace(std::vector<T>& values, std::mt19937_64& gen) {
  for (std::size_t i = values.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(uniform_u64(gen, i));
    std::swap(values[i - 1], values[j]);
  }
}

template <typename T>
const T& pick(const std::vector<T>& values, std::mt19937_64& gen) {
  if (values.empty()) throw ValueError("pick: empty collection");
  return values[uniform_u64(gen, values.size())];
}

}  // namespace pipefold

#pragma once

#include <cstdint>
#include <limits>
#include <random>
#include <vector>

#include "robust3s/core.hpp"
#include "robust3s/distributions.hpp"

// Deterministic randomness. One user-facing 64-bit seed is expanded into
// independent streams with a splitmix64-based mixer, so adding a consumer
// (e.g. one more estimator in a scenario) never perturbs the draws seen by
// the others. Variate generation goes through explicit uniform bits rather
// than std::*_distribution, which keeps output identical across standard
// library implementations.

namespace robust3s {

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ull);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

inline std::uint64_t seed_mix(std::uint64_t a, std::uint64_t b) {
  std::uint64_t s = a ^ (b + 0x9e3779b97f4a7c15ull + (a << 6) + (a >> 2));
  return splitmix64(s);
}

enum class SeedStream : std::uint64_t {
  data = 1,
  cellwise = 2,
  casewise = 3,
  fit = 4,
  scatter = 5,
  correlation = 6,
  beta = 7,
};

inline std::uint64_t derive_seed(std::uint64_t root, SeedStream stream, std::uint64_t index = 0) {
  return seed_mix(seed_mix(root, static_cast<std::uint64_t>(stream)), index);
}

/// Uniform on [0, 1) with 53 random bits.
inline double uniform01(Rng& g) { return double(g() >> 11) * 0x1.0p-53; }

/// Uniform on the open interval (0, 1); safe input for quantile transforms.
inline double uniform_open(Rng& g) { return (double(g() >> 11) + 0.5) * 0x1.0p-53; }

inline double normal_draw(Rng& g) { return norm_quantile(uniform_open(g)); }

/// Unbiased integer in [0, n).
inline std::uint64_t uniform_below(Rng& g, std::uint64_t n) {
  const std::uint64_t rem = std::numeric_limits<std::uint64_t>::max() % n;
  const std::uint64_t lim = std::numeric_limits<std::uint64_t>::max() - rem;
  std::uint64_t x;
  do {
    x = g();
  } while (x > lim);
  return x % n;
}

/// k distinct indices from {0, ..., n-1} by partial Fisher-Yates.
inline std::vector<Index> sample_without_replacement(Rng& g, Index n, Index k) {
  std::vector<Index> pool(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) pool[static_cast<std::size_t>(i)] = i;
  std::vector<Index> out(static_cast<std::size_t>(k));
  for (Index i = 0; i < k; ++i) {
    Index j = i + static_cast<Index>(uniform_below(g, static_cast<std::uint64_t>(n - i)));
    std::swap(pool[static_cast<std::size_t>(i)], pool[static_cast<std::size_t>(j)]);
    out[static_cast<std::size_t>(i)] = pool[static_cast<std::size_t>(i)];
  }
  return out;
}

}  // namespace robust3s

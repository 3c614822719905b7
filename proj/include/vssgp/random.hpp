#pragma once

// Seeded random streams. Every consumer derives its own named substream from
// the user's seed so that adding a draw in one place never shifts another.

#include "vssgp/core.hpp"

#include <cstdint>
#include <numeric>
#include <random>
#include <string_view>
#include <vector>

namespace vssgp {

using Rng = std::mt19937_64;

namespace detail {

inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace detail

inline Rng substream(std::uint64_t seed, std::string_view name) {
  const std::uint64_t h = detail::fnv1a(name);
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(h), static_cast<std::uint32_t>(h >> 32)};
  return Rng(seq);
}

/// `count` distinct indices from [0, n), uniformly, via a partial shuffle.
inline std::vector<Index> sample_without_replacement(Rng& rng, Index n, Index count) {
  if (count > n) throw ValidationError("cannot draw more distinct indices than available");
  std::vector<Index> pool(static_cast<std::size_t>(n));
  std::iota(pool.begin(), pool.end(), Index{0});
  for (Index i = 0; i < count; ++i) {
    std::uniform_int_distribution<Index> pick(i, n - 1);
    std::swap(pool[static_cast<std::size_t>(i)], pool[static_cast<std::size_t>(pick(rng))]);
  }
  pool.resize(static_cast<std::size_t>(count));
  return pool;
}

inline Matrix standard_normal(Rng& rng, Index rows, Index cols) {
  std::normal_distribution<double> nd(0.0, 1.0);
  Matrix m(rows, cols);
  for (Index j = 0; j < cols; ++j)
    for (Index i = 0; i < rows; ++i) m(i, j) = nd(rng);
  return m;
}

inline Vector uniform_phases(Rng& rng, Index count) {
  std::uniform_real_distribution<double> u(0.0, kTwoPi);
  Vector b(count);
  for (Index k = 0; k < count; ++k) b(k) = u(rng);
  return b;
}

}  // namespace vssgp

#pragma once

#include <cstdint>
#include <string_view>

namespace fastadd {

/// Deterministic SplitMix64 stream. Counter-based, so independent streams can
/// be split off by name: each named parameter gets its own stream seeded from
/// hash(name) ^ global_seed, making initialization order-independent.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64();

  /// Uniform in [0, 1), 53-bit resolution.
  double next_uniform();

  /// Standard normal via Box-Muller; consumes exactly two u64 draws.
  double next_normal();

  /// Uniform integer in [0, n), n >= 1.
  std::uint64_t next_below(std::uint64_t n);

 private:
  std::uint64_t state_;
};

/// FNV-1a over the bytes of `s`.
std::uint64_t fnv1a64(std::string_view s);

/// Per-name stream seed: hash(name) ^ global_seed.
inline std::uint64_t derive_seed(std::string_view name, std::uint64_t global_seed) {
  return fnv1a64(name) ^ global_seed;
}

}  // namespace fastadd

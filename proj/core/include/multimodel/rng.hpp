#pragma once

#include <cstdint>
#include <string_view>

namespace mm {

/// Counter-based random stream. Draw `i` of a stream is
/// mix64(seed + golden * (counter + i + 1)) where mix64 is the splitmix64
/// finalizer, so any draw can be reproduced from (seed, counter) alone on any
/// platform. `fork` derives an independent child stream keyed by an integer.
class RngStream {
 public:
  static constexpr std::uint32_t kAlgorithm = 1;  // splitmix64 over counters

  RngStream() = default;
  explicit RngStream(std::uint64_t seed, std::uint64_t counter = 0) : seed_(seed), counter_(counter) {}

  std::uint64_t seed() const { return seed_; }
  std::uint64_t counter() const { return counter_; }

  std::uint64_t bits_at(std::uint64_t offset) const;
  /// Uniform in [0, 1) with 53 random bits.
  double uniform_at(std::uint64_t offset) const;
  /// Standard normal via Box-Muller on draws 2*offset and 2*offset+1.
  double normal_at(std::uint64_t offset) const;

  std::uint64_t next_bits();
  double next_uniform();
  double next_normal();
  /// Uniform integer in [0, n).
  std::uint64_t next_below(std::uint64_t n);

  RngStream fork(std::uint64_t key) const;
  RngStream fork(std::string_view key) const;

 private:
  std::uint64_t seed_ = 0;
  std::uint64_t counter_ = 0;
};

std::uint64_t mix64(std::uint64_t x);
/// FNV-1a, used to key streams by name.
std::uint64_t hash_string(std::string_view s);

}  // namespace mm

#include "multimodel/rng.hpp"

#include <cmath>
#include <numbers>

namespace mm {

namespace {
constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;
}

std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

std::uint64_t hash_string(std::string_view s) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return h;
}

std::uint64_t RngStream::bits_at(std::uint64_t offset) const {
  return mix64(seed_ + kGolden * (counter_ + offset + 1));
}

double RngStream::uniform_at(std::uint64_t offset) const {
  return static_cast<double>(bits_at(offset) >> 11) * 0x1.0p-53;
}

double RngStream::normal_at(std::uint64_t offset) const {
  // 1 - u keeps the log argument in (0, 1].
  double u1 = 1.0 - uniform_at(2 * offset);
  double u2 = uniform_at(2 * offset + 1);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::uint64_t RngStream::next_bits() {
  std::uint64_t v = bits_at(0);
  ++counter_;
  return v;
}

double RngStream::next_uniform() { return static_cast<double>(next_bits() >> 11) * 0x1.0p-53; }

double RngStream::next_normal() {
  double v = normal_at(0);
  counter_ += 2;
  return v;
}

std::uint64_t RngStream::next_below(std::uint64_t n) {
  // Multiply-shift; the bias is below 2^-40 for the n used here.
  unsigned __int128 wide = static_cast<unsigned __int128>(next_bits()) * n;
  return static_cast<std::uint64_t>(wide >> 64);
}

RngStream RngStream::fork(std::uint64_t key) const {
  return RngStream(mix64(mix64(seed_ ^ (counter_ * kGolden)) + mix64(key + kGolden)), 0);
}

RngStream RngStream::fork(std::string_view key) const { return fork(hash_string(key)); }

}  // namespace mm

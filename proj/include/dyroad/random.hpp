#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace dyroad {

using Rng = std::mt19937_64;

// FNV-1a, 64-bit. Stable across platforms and runs.
constexpr std::uint64_t stable_hash(std::string_view tag) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : tag) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Component seeds are the master seed XOR a hash of the component tag.
constexpr std::uint64_t derive_seed(std::uint64_t master, std::string_view tag) {
  return master ^ stable_hash(tag);
}

inline std::uint64_t derive_seed(std::uint64_t master, std::string_view tag, std::uint64_t index) {
  return derive_seed(master, tag) ^ (index * 0x9e3779b97f4a7c15ULL);
}

}  // namespace dyroad

#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <string_view>

namespace multipod {

/// splitmix64 finalizer.
constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

constexpr std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  return splitmix64(a ^ splitmix64(b + 0x632be59bd9b4e019ull));
}

/// FNV-1a; stable across platforms, unlike std::hash.
constexpr std::uint64_t name_hash(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ull;
  }
  return h;
}

/// Independent stream for a tuple of keys, e.g. (seed, epoch, sample, pod).
inline std::mt19937_64 derive_rng(std::initializer_list<std::uint64_t> keys) {
  std::uint64_t h = 0x6d756c7469706f64ull;
  for (auto k : keys) h = mix_seed(h, k);
  return std::mt19937_64(h);
}

/// Uniform double in [0, 1) from the top 53 bits; portable across standard
/// libraries.
inline double uniform01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

}  // namespace multipod

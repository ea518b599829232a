#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace vdg {

/// splitmix64 step; used to derive independent component seeds from one root.
inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Deterministic sub-seed for a named component ("phantom", "synth1", ...).
inline std::uint64_t derive_seed(std::uint64_t root, std::string_view component) {
  std::uint64_t s = root;
  for (char ch : component) {
    s ^= static_cast<std::uint64_t>(static_cast<unsigned char>(ch));
    splitmix64(s);
  }
  return splitmix64(s);
}

using Rng = std::mt19937_64;

inline Rng make_rng(std::uint64_t seed) { return Rng(seed); }

}  // namespace vdg

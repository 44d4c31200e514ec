#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace depanx {

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Named stream derivation: every random draw in the project comes from
/// derive_seed(master, stage, unit) so results do not depend on scheduling.
inline std::uint64_t derive_seed(std::uint64_t master, std::string_view stream,
                                 std::uint64_t unit = 0) {
  std::uint64_t h = splitmix64(master);
  h = splitmix64(h ^ fnv1a64(stream));
  return splitmix64(h ^ splitmix64(unit + 0x632be59bd9b4e019ULL));
}

inline Rng make_rng(std::uint64_t master, std::string_view stream,
                    std::uint64_t unit = 0) {
  return Rng(derive_seed(master, stream, unit));
}

}  // namespace depanx

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>

namespace signglyph {

// 64-bit FNV-1a, streamable: feed chunks by passing the previous result back
// in as `state`.
inline constexpr std::uint64_t kFnvOffsetBasis = 0xcbf29ce484222325ULL;
inline constexpr std::uint64_t kFnvPrime = 0x100000001b3ULL;

inline std::uint64_t fnv1a(std::span<const std::byte> bytes, std::uint64_t state = kFnvOffsetBasis) {
  for (std::byte b : bytes) {
    state ^= static_cast<std::uint64_t>(b);
    state *= kFnvPrime;
  }
  return state;
}

}  // namespace signglyph

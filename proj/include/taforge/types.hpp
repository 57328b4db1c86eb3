#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace taforge {

using Address = std::uint64_t;

inline constexpr std::uint64_t kPageSize = 4096;

// Link-register value planted by the host when calling into TA code; never
// mapped, reaching it ends the call.
inline constexpr std::uint64_t kReturnSentinel = 0xFFFF'FFF0;

enum class WordWidth : std::uint8_t { kW32 = 32, kW64 = 64 };

inline constexpr std::uint64_t address_mask(WordWidth w) {
  return w == WordWidth::kW32 ? 0xFFFF'FFFFull : ~0ull;
}
inline constexpr unsigned word_bytes(WordWidth w) { return w == WordWidth::kW32 ? 4 : 8; }

// Region permission bits.
enum Perm : std::uint8_t { kPermNone = 0, kPermR = 1, kPermW = 2, kPermX = 4 };
using Perms = std::uint8_t;

std::string perms_to_string(Perms p);

inline constexpr std::uint64_t page_floor(std::uint64_t v) { return v & ~(kPageSize - 1); }
inline constexpr std::uint64_t page_ceil(std::uint64_t v) {
  return (v + kPageSize - 1) & ~(kPageSize - 1);
}

std::string hex(std::uint64_t v);
// Accepts decimal or 0x-prefixed hex. Throws Error(kConfig) on garbage.
std::uint64_t parse_u64(std::string_view text);

}  // namespace taforge

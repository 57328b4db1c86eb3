#pragma once

// Edge-coverage bitmap: a fixed array of saturating 8-bit counters indexed by
// a hash of (source, target), compared through logarithmic hit classes.

#include <array>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "taforge/engine.hpp"

namespace taforge {

inline constexpr std::size_t kBitmapSize = 65536;
inline constexpr unsigned kMaxHitClass = 8;

using Edge = std::pair<std::uint64_t, std::uint64_t>;

// ((s >> 2) * 0x9E3779B1 ^ (t >> 2) * 0x85EBCA77) mod 65536.
inline std::uint32_t edge_hash(std::uint64_t source, std::uint64_t target) {
  return static_cast<std::uint32_t>((((source >> 2) * 0x9E3779B1ull) ^ ((target >> 2) * 0x85EBCA77ull)) &
                                    (kBitmapSize - 1));
}

// 0 for an empty bucket, then 1, 2, 3, 4-7, 8-15, 16-31, 32-127, 128-255.
inline unsigned hit_class(std::uint8_t count) {
  if (count <= 3) return count;
  if (count < 8) return 4;
  if (count < 16) return 5;
  if (count < 32) return 6;
  if (count < 128) return 7;
  return 8;
}

struct CoverageBitmap {
  std::array<std::uint8_t, kBitmapSize> buckets{};

  void clear() { buckets.fill(0); }
  void hit(std::uint32_t bucket) {
    if (buckets[bucket] != 0xFF) ++buckets[bucket];
  }
  std::size_t occupied() const;
  double occupancy() const { return static_cast<double>(occupied()) / kBitmapSize; }
  unsigned max_hit_class() const;
  // Indices of nonzero buckets, ascending.
  std::vector<std::uint32_t> occupied_buckets() const;

  bool operator==(const CoverageBitmap&) const = default;
};

// Counts `edges` into `local` (expected zeroed). Returns true iff some bucket's
// hit class exceeds the one in `global`; in that case `global` absorbs the
// per-bucket maxima. `new_buckets`, when given, receives the buckets whose
// class rose.
bool update_coverage(std::span<const Edge> edges, CoverageBitmap& local, CoverageBitmap& global,
                     std::vector<std::uint32_t>* new_buckets = nullptr);
// Same over raw trace events (absolute addresses).
bool update_coverage(const BranchTrace& trace, CoverageBitmap& local, CoverageBitmap& global);

// Merge by maximum; returns true when anything changed.
bool merge_max(CoverageBitmap& into, const CoverageBitmap& from);

}  // namespace taforge

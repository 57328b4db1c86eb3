#pragma once

// Branch-trace normalization and comparison: image-relative edge sets with
// the trampoline round trip collapsed, Jaccard comparison of edge sets or
// bitmaps, and PGM heatmaps of a bitmap.

#include <cstdint>
#include <iosfwd>
#include <set>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "taforge/coverage.hpp"
#include "taforge/engine.hpp"
#include "taforge/loader.hpp"
#include "taforge/rewriter.hpp"

namespace taforge::trace {

enum class Origin : std::uint8_t { kRewritten, kDirectTrap, kExternal };
std::string_view to_string(Origin o);

struct NormalizedTrace {
  std::set<Edge> edges;        // (source_offset, target_offset)
  std::vector<Edge> sequence;  // same edges in execution order, with repeats
  Origin origin = Origin::kExternal;

  bool operator==(const NormalizedTrace&) const = default;
};

// Subtracts image_base and drops events outside the main image. With a
// table, site -> trampoline and trampoline -> site+4 collapse to
// (site, site+4) and other trampoline-internal events are dropped.
// Throws FOREIGN_TRACE when most events lie outside the image.
NormalizedTrace normalize(const BranchTrace& trace, const LoadedImage& image,
                          const TrampolineTable* table = nullptr);

// Re-bases a normalized trace so it can be normalized again.
BranchTrace denormalize(const NormalizedTrace& t, Address image_base);

struct Comparison {
  double jaccard = 1.0;
  // Edges (trace comparison) or occupied buckets as (bucket, 0) (bitmap).
  std::vector<Edge> only_a;
  std::vector<Edge> only_b;
};

Comparison compare(const NormalizedTrace& a, const NormalizedTrace& b);
Comparison compare(const CoverageBitmap& a, const CoverageBitmap& b);

using Comparable = std::variant<NormalizedTrace, CoverageBitmap>;
// Throws KIND_MISMATCH unless both hold the same alternative.
Comparison compare(const Comparable& a, const Comparable& b);

// `# normalized-trace <origin>` header, then `<src> <dst>` hex offsets per
// line in execution order.
void write_normalized(std::ostream& out, const NormalizedTrace& t);
NormalizedTrace read_normalized(std::string_view text);

// A raw 65536-byte bitmap, or a normalized trace file.
Comparable read_comparable(const std::vector<std::uint8_t>& bytes);

// 256 x 256 P2 graymap, pixel (k mod 256, k div 256) = hit class of bucket k.
void heatmap(const CoverageBitmap& bitmap, std::ostream& pgm);
// `occupancy <fraction>` and `max_hit_class <n>` lines.
std::string heatmap_summary(const CoverageBitmap& bitmap);

}  // namespace taforge::trace

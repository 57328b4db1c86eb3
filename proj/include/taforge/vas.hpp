#pragma once

// Modeled address space of a rehosted TA: a set of page-aligned regions with
// permissions, backed by host buffers, with dirty-page tracking so that a
// snapshot can be restored by copying back only what changed.

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "taforge/isa.hpp"
#include "taforge/types.hpp"

namespace taforge {

enum class RegionKind : std::uint8_t { kSegment, kStack, kHeap, kTrampoline, kDeviceShm };

std::string_view to_string(RegionKind kind);

struct Region {
  Address base = 0;
  std::uint64_t length = 0;
  Perms perms = kPermNone;
  RegionKind kind = RegionKind::kSegment;
  std::string name;
  std::uint64_t id = 0;  // unique for the lifetime of the process
  std::shared_ptr<std::vector<std::uint8_t>> bytes;

  // Pages written since the last snapshot/restore sync point.
  std::vector<std::uint8_t> page_dirty;
  std::vector<std::uint32_t> dirty_pages;

  // Pre-decoded instruction words for X regions; dropped whenever the bytes
  // change.
  std::shared_ptr<const std::vector<isa::Insn>> decoded;

  Address end() const { return base + length; }
  bool contains(Address a) const { return a >= base && a - base < length; }
  std::uint8_t* data() { return bytes->data(); }
  const std::uint8_t* data() const { return bytes->data(); }
  bool writable() const { return (perms & kPermW) != 0; }

  void mark_dirty(Address offset, std::uint64_t len) {
    const std::uint64_t first = offset / kPageSize, last = (offset + len - 1) / kPageSize;
    for (std::uint64_t p = first; p <= last; ++p) {
      if (!page_dirty[p]) {
        page_dirty[p] = 1;
        dirty_pages.push_back(static_cast<std::uint32_t>(p));
      }
    }
  }
};

struct VasSnapshot {
  struct Entry {
    Address base;
    std::uint64_t length;
    Perms perms;
    RegionKind kind;
    std::string name;
    std::uint64_t id;
    std::shared_ptr<const std::vector<std::uint8_t>> bytes;  // shared for read-only regions
  };
  std::vector<Entry> regions;
  std::uint64_t image_token = 0;
  std::uint64_t sync_token = 0;

  bool operator==(const VasSnapshot& other) const;
};

class AddressSpace {
 public:
  AddressSpace(Address window_lo, Address window_hi, WordWidth width);

  Address window_lo() const { return window_lo_; }
  Address window_hi() const { return window_hi_; }
  WordWidth width() const { return width_; }
  std::uint64_t image_token() const { return image_token_; }

  // Maps a zero-filled region. Throws MALFORMED_IMAGE on overlap or
  // misalignment and WINDOW_EXHAUSTED when outside the window.
  Region& map(Address base, std::uint64_t length, Perms perms, RegionKind kind, std::string name);
  // Lowest page-aligned base >= from where `length` bytes fit, leaving at
  // least `gap` free bytes before and after neighbours.
  std::optional<Address> find_free(std::uint64_t length, std::uint64_t gap = 0,
                                   std::optional<Address> from = std::nullopt) const;
  bool unmap(Address base);

  Region* find(Address a);
  const Region* find(Address a) const;
  // Region containing [a, a+len) entirely, or null.
  Region* find_range(Address a, std::uint64_t len);
  const std::vector<std::unique_ptr<Region>>& regions() const { return regions_; }

  // Loader-level access that ignores permissions. Throws MALFORMED_IMAGE when
  // the range is unmapped.
  void poke(Address a, const void* src, std::uint64_t len);
  void peek(Address a, void* dst, std::uint64_t len) const;
  std::uint64_t peek_word(Address a, unsigned width) const;
  void poke_word(Address a, std::uint64_t value, unsigned width);
  // Reads a NUL-terminated string (bounded), empty optional on unmapped bytes.
  std::optional<std::string> read_cstring(Address a, std::size_t max_len = 256) const;

  VasSnapshot snapshot();
  void restore(const VasSnapshot& snap);
  // Hash over layout and the contents of writable regions.
  std::uint64_t content_hash() const;
  // Hash over layout and every region's bytes.
  std::uint64_t full_hash() const;

 private:
  void sort_regions();

  Address window_lo_;
  Address window_hi_;
  WordWidth width_;
  std::uint64_t image_token_;
  std::uint64_t sync_token_ = 0;
  std::vector<std::unique_ptr<Region>> regions_;  // sorted by base
};

}  // namespace taforge

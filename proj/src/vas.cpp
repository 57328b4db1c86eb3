#include "taforge/vas.hpp"

#include <algorithm>
#include <atomic>
#include <cstring>
#include <functional>
#include <string_view>

#include "taforge/error.hpp"

namespace taforge {

namespace {

std::atomic<std::uint64_t> g_next_id{1};

std::uint64_t next_id() { return g_next_id.fetch_add(1, std::memory_order_relaxed); }

std::uint64_t mix(std::uint64_t h, std::uint64_t v) {
  h ^= v + 0x9E3779B97F4A7C15ull + (h << 6) + (h >> 2);
  return h;
}

std::uint64_t hash_bytes(const std::vector<std::uint8_t>& b) {
  return std::hash<std::string_view>{}(
      std::string_view(reinterpret_cast<const char*>(b.data()), b.size()));
}

}  // namespace

std::string_view to_string(RegionKind kind) {
  switch (kind) {
    case RegionKind::kSegment: return "SEGMENT";
    case RegionKind::kStack: return "STACK";
    case RegionKind::kHeap: return "HEAP";
    case RegionKind::kTrampoline: return "TRAMPOLINE";
    case RegionKind::kDeviceShm: return "DEVICE_SHM";
  }
  return "?";
}

bool VasSnapshot::operator==(const VasSnapshot& other) const {
  if (image_token != other.image_token || regions.size() != other.regions.size()) return false;
  for (std::size_t i = 0; i < regions.size(); ++i) {
    const Entry& a = regions[i];
    const Entry& b = other.regions[i];
    if (a.base != b.base || a.length != b.length || a.perms != b.perms || a.kind != b.kind ||
        a.id != b.id || a.name != b.name)
      return false;
    if (a.bytes != b.bytes && *a.bytes != *b.bytes) return false;
  }
  return true;
}

AddressSpace::AddressSpace(Address window_lo, Address window_hi, WordWidth width)
    : window_lo_(window_lo), window_hi_(window_hi), width_(width), image_token_(next_id()) {
  if (window_lo % kPageSize || window_hi % kPageSize || window_hi <= window_lo)
    throw Error(ErrorCode::kConfig, "address window must be page aligned and non-empty");
  if (width == WordWidth::kW32 && window_hi >= (1ull << 32))
    throw Error(ErrorCode::kConfig, "32-bit address window must end below 2^32");
  if (window_lo <= kReturnSentinel && kReturnSentinel < window_hi)
    throw Error(ErrorCode::kConfig, "address window must not contain the return sentinel");
}

Region& AddressSpace::map(Address base, std::uint64_t length, Perms perms, RegionKind kind,
                          std::string name) {
  if (base % kPageSize || length % kPageSize || length == 0)
    throw Error(ErrorCode::kMalformedImage, "unaligned region " + name + " at " + hex(base));
  if (base < window_lo_ || base + length > window_hi_ || base + length < base)
    throw Error(ErrorCode::kWindowExhausted,
                "region " + name + " [" + hex(base) + ", " + hex(base + length) +
                    ") outside window [" + hex(window_lo_) + ", " + hex(window_hi_) + ")");
  for (const auto& r : regions_) {
    if (base < r->end() && r->base < base + length)
      throw Error(ErrorCode::kMalformedImage,
                  "region " + name + " at " + hex(base) + " overlaps " + r->name);
  }
  auto region = std::make_unique<Region>();
  region->base = base;
  region->length = length;
  region->perms = perms;
  region->kind = kind;
  region->name = std::move(name);
  region->id = next_id();
  region->bytes = std::make_shared<std::vector<std::uint8_t>>(length, 0);
  region->page_dirty.assign(length / kPageSize, 0);
  Region& ref = *region;
  regions_.push_back(std::move(region));
  sort_regions();
  return ref;
}

std::optional<Address> AddressSpace::find_free(std::uint64_t length, std::uint64_t gap,
                                               std::optional<Address> from) const {
  length = page_ceil(length);
  gap = page_ceil(gap);
  Address candidate = std::max(from.value_or(window_lo_), window_lo_);
  candidate = page_ceil(candidate);
  for (const auto& r : regions_) {
    if (r->end() + gap <= candidate) continue;
    if (candidate + length + gap <= r->base) break;
    candidate = std::max(candidate, r->end() + gap);
  }
  if (candidate + length > window_hi_ || candidate + length < candidate) return std::nullopt;
  return candidate;
}

bool AddressSpace::unmap(Address base) {
  auto it = std::find_if(regions_.begin(), regions_.end(),
                         [&](const auto& r) { return r->base == base; });
  if (it == regions_.end()) return false;
  regions_.erase(it);
  return true;
}

Region* AddressSpace::find(Address a) {
  // Few regions: a linear scan beats anything clever.
  for (auto& r : regions_)
    if (r->contains(a)) return r.get();
  return nullptr;
}

const Region* AddressSpace::find(Address a) const {
  for (const auto& r : regions_)
    if (r->contains(a)) return r.get();
  return nullptr;
}

Region* AddressSpace::find_range(Address a, std::uint64_t len) {
  Region* r = find(a);
  if (!r || len > r->end() - a) return nullptr;
  return r;
}

void AddressSpace::poke(Address a, const void* src, std::uint64_t len) {
  const auto* s = static_cast<const std::uint8_t*>(src);
  while (len > 0) {
    Region* r = find(a);
    if (!r) throw Error(ErrorCode::kMalformedImage, "write to unmapped address " + hex(a));
    const std::uint64_t n = std::min<std::uint64_t>(len, r->end() - a);
    // Read-only buffers may be shared with snapshots: copy before writing.
    if (!r->writable() && r->bytes.use_count() > 1)
      r->bytes = std::make_shared<std::vector<std::uint8_t>>(*r->bytes);
    std::memcpy(r->data() + (a - r->base), s, n);
    r->mark_dirty(a - r->base, n);
    r->decoded.reset();
    a += n;
    s += n;
    len -= n;
  }
}

void AddressSpace::peek(Address a, void* dst, std::uint64_t len) const {
  auto* d = static_cast<std::uint8_t*>(dst);
  while (len > 0) {
    const Region* r = find(a);
    if (!r) throw Error(ErrorCode::kMalformedImage, "read from unmapped address " + hex(a));
    const std::uint64_t n = std::min<std::uint64_t>(len, r->end() - a);
    std::memcpy(d, r->data() + (a - r->base), n);
    a += n;
    d += n;
    len -= n;
  }
}

std::uint64_t AddressSpace::peek_word(Address a, unsigned width) const {
  std::uint64_t v = 0;
  peek(a, &v, width);
  return v;
}

void AddressSpace::poke_word(Address a, std::uint64_t value, unsigned width) {
  poke(a, &value, width);
}

std::optional<std::string> AddressSpace::read_cstring(Address a, std::size_t max_len) const {
  std::string out;
  for (std::size_t i = 0; i < max_len; ++i) {
    const Region* r = find(a + i);
    if (!r) return std::nullopt;
    const char c = static_cast<char>(r->data()[a + i - r->base]);
    if (c == '\0') return out;
    out.push_back(c);
  }
  return out;
}

void AddressSpace::sort_regions() {
  std::sort(regions_.begin(), regions_.end(),
            [](const auto& a, const auto& b) { return a->base < b->base; });
}

VasSnapshot AddressSpace::snapshot() {
  VasSnapshot snap;
  snap.image_token = image_token_;
  snap.sync_token = next_id();
  snap.regions.reserve(regions_.size());
  for (auto& r : regions_) {
    VasSnapshot::Entry e{r->base, r->length, r->perms, r->kind, r->name, r->id, nullptr};
    if (r->writable())
      e.bytes = std::make_shared<const std::vector<std::uint8_t>>(*r->bytes);
    else
      e.bytes = r->bytes;
    for (auto p : r->dirty_pages) r->page_dirty[p] = 0;
    r->dirty_pages.clear();
    snap.regions.push_back(std::move(e));
  }
  sync_token_ = snap.sync_token;
  return snap;
}

void AddressSpace::restore(const VasSnapshot& snap) {
  if (snap.image_token != image_token_)
    throw Error(ErrorCode::kSnapshotMismatch, "snapshot belongs to a different image");
  const bool incremental = snap.sync_token == sync_token_;

  // Drop regions the snapshot does not know about (e.g. heap allocations).
  std::erase_if(regions_, [&](const auto& r) {
    return std::none_of(snap.regions.begin(), snap.regions.end(),
                        [&](const auto& e) { return e.id == r->id; });
  });

  for (const auto& e : snap.regions) {
    Region* live = nullptr;
    for (auto& r : regions_)
      if (r->id == e.id) live = r.get();
    if (!live) {
      auto region = std::make_unique<Region>();
      region->base = e.base;
      region->length = e.length;
      region->perms = e.perms;
      region->kind = e.kind;
      region->name = e.name;
      region->id = e.id;
      region->page_dirty.assign(e.length / kPageSize, 0);
      if (e.perms & kPermW)
        region->bytes = std::make_shared<std::vector<std::uint8_t>>(*e.bytes);
      else
        region->bytes = std::const_pointer_cast<std::vector<std::uint8_t>>(e.bytes);
      regions_.push_back(std::move(region));
      continue;
    }
    if (!(e.perms & kPermW)) {
      if (!live->dirty_pages.empty() || live->bytes != e.bytes) {
        live->bytes = std::const_pointer_cast<std::vector<std::uint8_t>>(e.bytes);
        live->decoded.reset();
      }
    } else if (incremental) {
      for (auto p : live->dirty_pages) {
        std::memcpy(live->data() + p * kPageSize, e.bytes->data() + p * kPageSize, kPageSize);
      }
      if (!live->dirty_pages.empty()) live->decoded.reset();
    } else {
      *live->bytes = *e.bytes;
      live->decoded.reset();
    }
    live->perms = e.perms;
    for (auto p : live->dirty_pages) live->page_dirty[p] = 0;
    live->dirty_pages.clear();
  }
  sort_regions();
  sync_token_ = snap.sync_token;
}

std::uint64_t AddressSpace::content_hash() const {
  std::uint64_t h = 0xCBF29CE484222325ull;
  for (const auto& r : regions_) {
    h = mix(h, r->base);
    h = mix(h, r->length);
    h = mix(h, r->perms);
    if (r->writable()) h = mix(h, hash_bytes(*r->bytes));
  }
  return h;
}

std::uint64_t AddressSpace::full_hash() const {
  std::uint64_t h = 0xCBF29CE484222325ull;
  for (const auto& r : regions_) {
    h = mix(h, r->base);
    h = mix(h, r->length);
    h = mix(h, r->perms);
    h = mix(h, hash_bytes(*r->bytes));
  }
  return h;
}

}  // namespace taforge

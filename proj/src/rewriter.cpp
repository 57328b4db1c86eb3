#include "taforge/rewriter.hpp"

#include <algorithm>
#include <cstdlib>
#include <cstring>

#include <fmt/format.h>

#include "taforge/error.hpp"
#include "taforge/isa.hpp"

namespace taforge {

const TrampolineEntry* TrampolineTable::at_trampoline(Address addr) const {
  auto it = by_trampoline_.find(addr);
  if (it == by_trampoline_.end()) return nullptr;
  return &by_site_.at(it->second);
}

bool TrampolineTable::in_trampoline_region(Address addr) const {
  for (const auto& [lo, hi] : regions_)
    if (addr >= lo && addr < hi) return true;
  return false;
}

void TrampolineTable::add(const TrampolineEntry& e) {
  by_site_[e.site.address] = e;
  by_trampoline_[e.trampoline_addr] = e.site.address;
}

void TrampolineTable::add_region(Address base, Address end) { regions_.emplace_back(base, end); }

std::vector<SvcSite> scan_svc_sites(const LoadedImage& image) {
  std::vector<SvcSite> out;
  for (const auto& r : image.vas.regions()) {
    if (!(r->perms & kPermX) || r->kind == RegionKind::kTrampoline) continue;
    for (std::uint64_t off = 0; off + 4 <= r->length; off += 4) {
      std::uint32_t w;
      std::memcpy(&w, r->data() + off, 4);
      if (isa::is_svc(w)) out.push_back({r->base + off, isa::svc_immediate(w), w});
    }
  }
  return out;  // regions are sorted by base, so this is ascending
}

TrampolineTable install_trampolines(LoadedImage& image, const std::vector<SvcSite>& sites) {
  TrampolineTable table;
  struct Slab {
    Region* region;
    std::uint64_t used = 0;
  };
  std::vector<Slab> slabs;
  for (const auto& r : image.vas.regions()) {
    if (r->kind != RegionKind::kTrampoline) continue;
    slabs.push_back({r.get(), 0});
    table.add_region(r->base, r->end());
  }

  std::uint16_t marker = 0;
  for (const auto& site : sites) {
    auto in_reach = [](std::int64_t d) { return d >= -kTrampolineReach && d < kTrampolineReach; };
    Slab* best = nullptr;
    std::int64_t best_dist = 0;
    bool any_in_range = false;
    for (auto& s : slabs) {
      const Address last = s.region->end() - kTrampolineSlotBytes;
      const Address nearest = std::clamp(site.address, s.region->base, last);
      if (!in_reach(static_cast<std::int64_t>(nearest - site.address))) continue;
      any_in_range = true;
      if ((s.used + 1) * kTrampolineSlotBytes > s.region->length) continue;
      const auto dist =
          static_cast<std::int64_t>(s.region->base + s.used * kTrampolineSlotBytes - site.address);
      if (!in_reach(dist)) continue;
      if (!best || std::llabs(dist) < std::llabs(best_dist)) {
        best = &s;
        best_dist = dist;
      }
    }
    if (!best) {
      if (any_in_range)
        throw Error(ErrorCode::kRegionFull,
                    "no free trampoline slot reachable from " + hex(site.address));
      throw Error(ErrorCode::kRangeExceeded,
                  "no trampoline region within 32 MiB of " + hex(site.address));
    }
    const Address tramp = best->region->base + best->used * kTrampolineSlotBytes;
    ++best->used;

    TrampolineEntry e;
    e.site = site;
    e.trampoline_addr = tramp;
    e.return_addr = site.address + 4;
    e.new_word = isa::enc::b(static_cast<std::int64_t>(tramp - site.address));
    const std::uint32_t hvc = isa::enc::hvc(marker++);
    const std::uint32_t back = isa::enc::b(static_cast<std::int64_t>(e.return_addr - (tramp + 4)));
    image.vas.poke_word(tramp, hvc, 4);
    image.vas.poke_word(tramp + 4, back, 4);
    image.vas.poke_word(site.address, e.new_word, 4);
    table.add(e);
  }
  return table;
}

SvcSite site_for_trampoline(const TrampolineTable& table, Address trampoline_addr) {
  const TrampolineEntry* e = table.at_trampoline(trampoline_addr);
  if (!e) throw Error(ErrorCode::kUnknownTrampoline, "no trampoline starts at " + hex(trampoline_addr));
  return e->site;
}

std::string patch_report(const TrampolineTable& table) {
  std::string out;
  for (const auto& [addr, e] : table.entries())
    out += fmt::format("{} {:08x} {:08x} {}\n", hex(addr), e.site.original_word, e.new_word,
                       hex(e.trampoline_addr));
  return out;
}

}  // namespace taforge

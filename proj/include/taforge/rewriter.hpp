#pragma once

// Replaces every svc word in executable code with a branch to a dedicated
// trampoline. A trampoline is `hvc #marker; b site+4; brk...`: the hvc hands
// control to the host-side dispatch hook, which saves the register context,
// runs the emulated syscall for the originating site and restores the
// context (with the result in x0) before the branch back.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "taforge/loader.hpp"

namespace taforge {

struct SvcSite {
  Address address = 0;
  std::uint16_t immediate = 0;
  std::uint32_t original_word = 0;

  bool operator==(const SvcSite&) const = default;
};

struct TrampolineEntry {
  Address trampoline_addr = 0;
  Address return_addr = 0;
  SvcSite site;
  std::uint32_t new_word = 0;
};

inline constexpr std::int64_t kTrampolineReach = 32ll << 20;

class TrampolineTable {
 public:
  const std::map<Address, TrampolineEntry>& entries() const { return by_site_; }
  std::size_t size() const { return by_site_.size(); }
  // Entry whose trampoline starts exactly at `addr`, or null.
  const TrampolineEntry* at_trampoline(Address addr) const;
  bool in_trampoline_region(Address addr) const;
  const std::vector<std::pair<Address, Address>>& regions() const { return regions_; }

  void add(const TrampolineEntry& e);
  void add_region(Address base, Address end);

 private:
  std::map<Address, TrampolineEntry> by_site_;
  std::map<Address, Address> by_trampoline_;  // trampoline -> site
  std::vector<std::pair<Address, Address>> regions_;
};

// Every 4-aligned svc word in X regions (trampoline regions excluded), in
// ascending address order.
std::vector<SvcSite> scan_svc_sites(const LoadedImage& image);

// Throws RANGE_EXCEEDED when no trampoline region with a free slot lies
// within +/-32 MiB of a site, REGION_FULL when the reachable ones are full.
TrampolineTable install_trampolines(LoadedImage& image, const std::vector<SvcSite>& sites);

// Throws UNKNOWN_TRAMPOLINE unless `trampoline_addr` starts an entry.
SvcSite site_for_trampoline(const TrampolineTable& table, Address trampoline_addr);

// `site_addr old_word new_word trampoline_addr` per line.
std::string patch_report(const TrampolineTable& table);

}  // namespace taforge

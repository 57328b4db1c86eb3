#pragma once

// Maps a TA image and its libraries into a fresh address space, binds
// relocations and resolves the TZOS entrypoints.

#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "taforge/elf.hpp"
#include "taforge/profile.hpp"
#include "taforge/vas.hpp"

namespace taforge {

struct LayoutConfig {
  Address window_lo = 0x0040'0000;
  Address window_hi = 0x1000'0000;
  // Overrides both the image's PT_GNU_STACK size and the profile default.
  std::optional<std::uint64_t> stack_size;

  static LayoutConfig from_profile(const TzosProfile& p);
};

// Bytes reserved per svc word for its trampoline.
inline constexpr std::uint64_t kTrampolineSlotBytes = 64;

struct LoadedObject {
  std::string name;
  Address base = 0;        // load bias: symbol value + base = runtime address
  Address start = 0;       // first mapped byte
  Address end = 0;         // one past the last segment byte (page aligned)
  Address trampoline_base = 0;
  std::uint64_t trampoline_slots = 0;
  std::vector<std::string> needed;
  std::map<std::string, Address> exports;
};

struct PendingBinding {
  std::string object;
  Address where = 0;
  std::string symbol;
  std::int64_t addend = 0;
  unsigned width = 8;
};

struct LoadedImage {
  LoadedImage(Address lo, Address hi, WordWidth w) : vas(lo, hi, w), word_width(w) {}

  AddressSpace vas;
  std::map<std::string, Address> entrypoints;  // role -> address
  std::deque<std::string> dependency_queue;
  std::map<std::string, Address> symbols;
  Address stack_top = 0;
  Address image_base = 0;
  Address image_start = 0;
  Address image_end = 0;
  WordWidth word_width;
  std::map<std::string, std::string> meta;
  std::vector<LoadedObject> objects;  // objects[0] is the TA itself
  std::vector<PendingBinding> pending;
  std::uint64_t stack_size = 0;

  const LoadedObject& main() const { return objects.front(); }
  // Main TA extent [image_start, image_end) excluding its trampoline region.
  bool in_image(Address a) const { return a >= image_start && a < image_end; }
};

using LibraryResolver = std::function<std::optional<std::vector<std::uint8_t>>(const std::string&)>;

LibraryResolver directory_resolver(const std::filesystem::path& dir);
LibraryResolver map_resolver(std::map<std::string, std::vector<std::uint8_t>> libs);

LoadedImage load_image(std::span<const std::uint8_t> ta_bytes, const TzosProfile& profile,
                       const LayoutConfig& layout);
void link_dependencies(LoadedImage& image, const TzosProfile& profile,
                       const LibraryResolver& resolver);
std::map<std::string, Address> resolve_entrypoints(LoadedImage& image, const TzosProfile& profile);

// load + link + resolve in one go.
LoadedImage load_and_link(std::span<const std::uint8_t> ta_bytes, const TzosProfile& profile,
                          const LayoutConfig& layout, const LibraryResolver& resolver);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
std::string layout_table(const LoadedImage& image);

}  // namespace taforge

#pragma once

// Minimal little-endian ELF reader and writer covering what TA images and
// their support libraries use: program headers, the dynamic section,
// .dynsym/.dynstr, REL/RELA relocations and a `.ta_meta` note section.

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "taforge/types.hpp"

namespace taforge::elf {

inline constexpr std::uint16_t kEmAarch64 = 183;
inline constexpr std::uint16_t kEtDyn = 3;
inline constexpr std::uint32_t kPtLoad = 1;
inline constexpr std::uint32_t kPtDynamic = 2;
inline constexpr std::uint32_t kPtGnuStack = 0x6474E551;
inline constexpr std::uint32_t kPfX = 1;
inline constexpr std::uint32_t kPfW = 2;
inline constexpr std::uint32_t kPfR = 4;
inline constexpr std::int64_t kDtNull = 0;
inline constexpr std::int64_t kDtNeeded = 1;

// Relocation kinds, per word width.
inline constexpr std::uint32_t kRAbs64 = 257;
inline constexpr std::uint32_t kRGlobDat = 1025;
inline constexpr std::uint32_t kRJumpSlot = 1026;
inline constexpr std::uint32_t kRRelative = 1027;
inline constexpr std::uint32_t kRP32Abs32 = 1;
inline constexpr std::uint32_t kRP32GlobDat = 181;
inline constexpr std::uint32_t kRP32JumpSlot = 182;
inline constexpr std::uint32_t kRP32Relative = 183;

struct Segment {
  std::uint32_t type = 0;
  std::uint32_t flags = 0;
  std::uint64_t offset = 0;
  std::uint64_t vaddr = 0;
  std::uint64_t filesz = 0;
  std::uint64_t memsz = 0;
  std::uint64_t align = 0;
};

struct Section {
  std::string name;
  std::uint32_t type = 0;
  std::uint64_t flags = 0;
  std::uint64_t addr = 0;
  std::uint64_t offset = 0;
  std::uint64_t size = 0;
  std::uint32_t link = 0;
  std::uint32_t info = 0;
  std::uint64_t entsize = 0;
};

struct Symbol {
  std::string name;
  std::uint64_t value = 0;
  std::uint64_t size = 0;
  std::uint16_t shndx = 0;  // 0 = undefined (imported)
  std::uint8_t bind = 1;    // STB_GLOBAL
  std::uint8_t type = 2;    // STT_FUNC
};

struct Relocation {
  std::uint64_t offset = 0;  // vaddr of the patched word
  std::uint32_t type = 0;
  std::uint32_t symbol = 0;  // index into dynsym
  std::int64_t addend = 0;
};

struct File {
  WordWidth width = WordWidth::kW64;
  std::uint16_t type = 0;
  std::uint16_t machine = 0;
  std::uint64_t entry = 0;
  std::vector<Segment> segments;
  std::vector<Section> sections;
  std::vector<Symbol> dynsym;  // index 0 is the null symbol
  std::vector<Relocation> relocations;
  std::vector<std::string> needed;
  std::map<std::string, std::string> meta;  // `.ta_meta` key=value lines
};

// Throws Error(MALFORMED_IMAGE) on anything structurally wrong.
File parse(std::span<const std::uint8_t> bytes);

// Description of an image to serialize. Segment contents are given by vaddr;
// file offsets equal vaddrs so the result maps trivially.
struct WriterInput {
  WordWidth width = WordWidth::kW64;
  struct LoadSegment {
    std::uint64_t vaddr;
    std::vector<std::uint8_t> bytes;
    std::uint64_t memsz;  // >= bytes.size(); excess is zero-filled (bss)
    std::uint32_t flags;
    std::string section_name;  // section covering the file bytes
  };
  std::vector<LoadSegment> segments;
  std::vector<Symbol> symbols;  // without the null entry
  std::vector<Relocation> relocations;  // symbol indices are 1-based into `symbols`
  std::vector<std::string> needed;
  std::vector<std::pair<std::string, std::string>> meta;
  std::uint64_t dynamic_vaddr = 0;  // inside an RW segment, space reserved by caller
  std::uint64_t stack_size = 0;     // PT_GNU_STACK memsz; 0 leaves it out
};

// Bytes needed for the .dynamic table of an image with `needed_count` DT_NEEDED entries.
std::uint64_t dynamic_size(WordWidth width, std::size_t needed_count);

std::vector<std::uint8_t> write(const WriterInput& input);

std::uint32_t relocation_type_abs(WordWidth w);
std::uint32_t relocation_type_glob_dat(WordWidth w);
std::uint32_t relocation_type_jump_slot(WordWidth w);
std::uint32_t relocation_type_relative(WordWidth w);

}  // namespace taforge::elf

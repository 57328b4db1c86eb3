#include "taforge/loader.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <sstream>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "taforge/error.hpp"
#include "taforge/isa.hpp"

namespace taforge {

namespace {

Perms perms_from_flags(std::uint32_t flags) {
  Perms p = kPermNone;
  if (flags & elf::kPfR) p |= kPermR;
  if (flags & elf::kPfW) p |= kPermW;
  if (flags & elf::kPfX) p |= kPermX;
  return p;
}

std::uint64_t count_svc_words(const elf::File& f, std::span<const std::uint8_t> bytes) {
  std::uint64_t n = 0;
  for (const auto& s : f.segments) {
    if (s.type != elf::kPtLoad || !(s.flags & elf::kPfX)) continue;
    // Words are counted at their runtime alignment, which equals file alignment
    // modulo 4 because vaddr and offset agree modulo the page size.
    for (std::uint64_t off = (4 - s.vaddr % 4) % 4; off + 4 <= s.filesz; off += 4) {
      std::uint32_t w;
      std::memcpy(&w, bytes.data() + s.offset + off, 4);
      if (isa::is_svc(w)) ++n;
    }
  }
  return n;
}

void check_image(const elf::File& f, WordWidth expected, const std::string& name) {
  if (f.machine != elf::kEmAarch64)
    throw Error(ErrorCode::kMalformedImage, name + ": unexpected machine " + std::to_string(f.machine));
  if (f.width != expected)
    throw Error(ErrorCode::kUnsupportedClass,
                name + ": " + std::to_string(static_cast<int>(f.width)) +
                    "-bit object in a " + std::to_string(static_cast<int>(expected)) + "-bit image");
}

LoadedObject& load_object(LoadedImage& img, const elf::File& f, std::span<const std::uint8_t> bytes,
                          const std::string& name, std::optional<Address> fixed_start) {
  std::vector<const elf::Segment*> loads;
  for (const auto& s : f.segments)
    if (s.type == elf::kPtLoad && s.memsz > 0) loads.push_back(&s);
  if (loads.empty()) throw Error(ErrorCode::kMalformedImage, name + ": no loadable segments");
  std::sort(loads.begin(), loads.end(),
            [](const auto* a, const auto* b) { return a->vaddr < b->vaddr; });
  for (std::size_t i = 1; i < loads.size(); ++i) {
    if (page_floor(loads[i]->vaddr) < page_ceil(loads[i - 1]->vaddr + loads[i - 1]->memsz))
      throw Error(ErrorCode::kMalformedImage, name + ": overlapping loadable segments");
  }
  const std::uint64_t lo = page_floor(loads.front()->vaddr);
  const std::uint64_t hi = page_ceil(loads.back()->vaddr + loads.back()->memsz);
  const std::uint64_t svc_words = count_svc_words(f, bytes);
  const std::uint64_t tramp_bytes = page_ceil(svc_words * kTrampolineSlotBytes);
  const std::uint64_t span = hi - lo + tramp_bytes;

  Address start;
  if (fixed_start) {
    start = *fixed_start;
  } else {
    auto at = img.vas.find_free(span);
    if (!at) throw Error(ErrorCode::kWindowExhausted, name + ": no room for " + hex(span) + " bytes");
    start = *at;
  }
  if (start % kPageSize) throw Error(ErrorCode::kConfig, name + ": unaligned fixed base");
  if (start < img.vas.window_lo() || start + span > img.vas.window_hi() || start + span < start)
    throw Error(ErrorCode::kWindowExhausted, name + ": does not fit the address window");
  const Address bias = start - lo;

  LoadedObject obj;
  obj.name = name;
  obj.base = bias;
  obj.start = start;
  obj.end = bias + hi;
  obj.needed = f.needed;
  for (std::size_t i = 0; i < loads.size(); ++i) {
    const auto& s = *loads[i];
    const Address rbase = bias + page_floor(s.vaddr);
    const std::uint64_t rlen = page_ceil(s.vaddr + s.memsz) - page_floor(s.vaddr);
    img.vas.map(rbase, rlen, perms_from_flags(s.flags), RegionKind::kSegment,
                fmt::format("{}:seg{}", name, i));
    if (s.filesz) img.vas.poke(bias + s.vaddr, bytes.data() + s.offset, s.filesz);
  }
  if (tramp_bytes) {
    obj.trampoline_base = bias + hi;
    obj.trampoline_slots = tramp_bytes / kTrampolineSlotBytes;
    Region& t = img.vas.map(obj.trampoline_base, tramp_bytes, kPermR | kPermX,
                            RegionKind::kTrampoline, name + ":trampolines");
    for (std::uint64_t off = 0; off < tramp_bytes; off += 4) {
      const std::uint32_t brk = isa::enc::brk(0);
      std::memcpy(t.data() + off, &brk, 4);
    }
  }

  for (const auto& sym : f.dynsym) {
    if (sym.name.empty() || sym.shndx == 0) continue;
    obj.exports[sym.name] = bias + sym.value;
    img.symbols.emplace(sym.name, bias + sym.value);
  }

  const WordWidth w = f.width;
  const unsigned wb = word_bytes(w);
  for (const auto& rel : f.relocations) {
    const Address where = bias + rel.offset;
    if (rel.type == elf::relocation_type_relative(w)) {
      img.vas.poke_word(where, bias + static_cast<std::uint64_t>(rel.addend), wb);
      continue;
    }
    if (rel.type != elf::relocation_type_abs(w) && rel.type != elf::relocation_type_glob_dat(w) &&
        rel.type != elf::relocation_type_jump_slot(w))
      throw Error(ErrorCode::kUnresolvedSymbol,
                  fmt::format("{}: unsupported relocation type {} at {}", name, rel.type, hex(where)));
    const elf::Symbol& sym = f.dynsym.at(rel.symbol);
    if (sym.shndx != 0) {
      img.vas.poke_word(where, bias + sym.value + static_cast<std::uint64_t>(rel.addend), wb);
    } else {
      img.pending.push_back({name, where, sym.name, rel.addend, wb});
    }
  }

  for (const auto& n : f.needed) {
    const bool known =
        std::any_of(img.objects.begin(), img.objects.end(), [&](const auto& o) { return o.name == n; }) ||
        std::find(img.dependency_queue.begin(), img.dependency_queue.end(), n) !=
            img.dependency_queue.end() ||
        n == name;
    if (!known) img.dependency_queue.push_back(n);
  }
  img.objects.push_back(std::move(obj));
  spdlog::debug("loaded {} at {} (bias {}, {} svc words)", name, hex(start), hex(bias), svc_words);
  return img.objects.back();
}

}  // namespace

LayoutConfig LayoutConfig::from_profile(const TzosProfile& p) {
  LayoutConfig c;
  c.window_lo = p.window_lo;
  c.window_hi = p.window_hi;
  return c;
}

LibraryResolver directory_resolver(const std::filesystem::path& dir) {
  return [dir](const std::string& name) -> std::optional<std::vector<std::uint8_t>> {
    const auto path = dir / name;
    std::error_code ec;
    if (!std::filesystem::is_regular_file(path, ec)) return std::nullopt;
    return read_file(path);
  };
}

LibraryResolver map_resolver(std::map<std::string, std::vector<std::uint8_t>> libs) {
  return [libs = std::move(libs)](const std::string& name) -> std::optional<std::vector<std::uint8_t>> {
    auto it = libs.find(name);
    if (it == libs.end()) return std::nullopt;
    return it->second;
  };
}

LoadedImage load_image(std::span<const std::uint8_t> ta_bytes, const TzosProfile& profile,
                       const LayoutConfig& layout) {
  const elf::File f = elf::parse(ta_bytes);
  if (f.machine != elf::kEmAarch64)
    throw Error(ErrorCode::kMalformedImage, "unexpected machine " + std::to_string(f.machine));
  if (!profile.supports(f.width))
    throw Error(ErrorCode::kUnsupportedClass,
                fmt::format("{}-bit image not supported by profile {}", static_cast<int>(f.width),
                            to_string(profile.name)));
  if (f.width == WordWidth::kW32 && layout.window_hi > 0xFFFF'F000ull)
    throw Error(ErrorCode::kConfig, "32-bit image needs an address window below 2^32");

  LoadedImage img(layout.window_lo, layout.window_hi, f.width);
  std::uint64_t stack = profile.stack_size;
  for (const auto& s : f.segments)
    if (s.type == elf::kPtGnuStack && s.memsz) stack = page_ceil(s.memsz);
  if (layout.stack_size) stack = page_ceil(*layout.stack_size);
  if (stack == 0 || stack >= layout.window_hi - layout.window_lo)
    throw Error(ErrorCode::kWindowExhausted, "stack does not fit the address window");
  img.stack_size = stack;
  img.vas.map(layout.window_hi - stack, stack, kPermR | kPermW, RegionKind::kStack, "stack");
  img.stack_top = layout.window_hi;

  const LoadedObject& obj = load_object(img, f, ta_bytes, "ta", std::nullopt);
  img.image_base = obj.base;
  img.image_start = obj.start;
  img.image_end = obj.end;
  img.meta = f.meta;
  return img;
}

void link_dependencies(LoadedImage& image, const TzosProfile& profile,
                       const LibraryResolver& resolver) {
  bool common_placed = false;
  while (!image.dependency_queue.empty()) {
    const std::string name = image.dependency_queue.front();
    image.dependency_queue.pop_front();
    if (std::any_of(image.objects.begin(), image.objects.end(),
                    [&](const auto& o) { return o.name == name; }))
      continue;
    auto bytes = resolver(name);
    if (!bytes) throw Error(ErrorCode::kResolverMiss, "library not found: " + name);
    const elf::File f = elf::parse(*bytes);
    check_image(f, image.word_width, name);
    std::optional<Address> fixed;
    if (profile.dependency_policy == DependencyPolicy::kCommonLibrary && !common_placed) {
      fixed = profile.common_library_base;
      common_placed = true;
    }
    load_object(image, f, *bytes, name, fixed);
  }
  for (const auto& p : image.pending) {
    auto it = image.symbols.find(p.symbol);
    if (it == image.symbols.end())
      throw Error(ErrorCode::kUnresolvedSymbol,
                  fmt::format("{}: no provider for '{}' (relocation at {})", p.object, p.symbol,
                              hex(p.where)));
    image.vas.poke_word(p.where, it->second + static_cast<std::uint64_t>(p.addend), p.width);
  }
  image.pending.clear();
}

std::map<std::string, Address> resolve_entrypoints(LoadedImage& image, const TzosProfile& profile) {
  std::map<std::string, Address> out;
  for (const auto& [role, symbol] : profile.entry_symbols) {
    std::string sym = symbol;
    if (sym.rfind(kMetaSymbolPrefix, 0) == 0) {
      const std::string key = sym.substr(std::string(kMetaSymbolPrefix).size());
      auto it = image.meta.find(key);
      if (it == image.meta.end())
        throw Error(ErrorCode::kEntryNotFound, "metadata key '" + key + "' missing for role " + role);
      sym = it->second;
    }
    Address addr;
    auto it = image.main().exports.find(sym);
    if (it != image.main().exports.end()) {
      addr = it->second;
    } else if (sym.rfind("0x", 0) == 0) {
      addr = image.image_base + parse_u64(sym);
    } else {
      throw Error(ErrorCode::kEntryNotFound, "symbol '" + sym + "' for role " + role + " not found");
    }
    const Region* r = image.vas.find(addr);
    if (!r || !(r->perms & kPermX))
      throw Error(ErrorCode::kEntryNotFound,
                  "entry " + sym + " at " + hex(addr) + " is not in an executable region");
    out[role] = addr;
  }
  image.entrypoints = out;
  return out;
}

LoadedImage load_and_link(std::span<const std::uint8_t> ta_bytes, const TzosProfile& profile,
                          const LayoutConfig& layout, const LibraryResolver& resolver) {
  LoadedImage img = load_image(ta_bytes, profile, layout);
  link_dependencies(img, profile, resolver);
  resolve_entrypoints(img, profile);
  return img;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
}

std::string layout_table(const LoadedImage& image) {
  std::ostringstream out;
  out << fmt::format("{:<18} {:<18} {:<5} {:<11} {}\n", "base", "end", "perms", "kind", "name");
  for (const auto& r : image.vas.regions())
    out << fmt::format("{:<18} {:<18} {:<5} {:<11} {}\n", hex(r->base), hex(r->end()),
                       perms_to_string(r->perms), to_string(r->kind), r->name);
  out << "image_base " << hex(image.image_base) << "\n";
  out << "stack_top " << hex(image.stack_top) << "\n";
  out << "word_width " << static_cast<int>(image.word_width) << "\n";
  for (const auto& [role, addr] : image.entrypoints) out << "entry " << role << " " << hex(addr) << "\n";
  for (const auto& o : image.objects) out << "object " << o.name << " " << hex(o.start) << "\n";
  return out.str();
}

}  // namespace taforge

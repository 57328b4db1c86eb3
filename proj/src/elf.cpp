#include "taforge/elf.hpp"

#include <cstring>
#include <sstream>

#include "taforge/error.hpp"

namespace taforge::elf {

namespace {

constexpr std::uint32_t kShtProgbits = 1;
constexpr std::uint32_t kShtStrtab = 3;
constexpr std::uint32_t kShtRela = 4;
constexpr std::uint32_t kShtDynamic = 6;
constexpr std::uint32_t kShtNobits = 8;
constexpr std::uint32_t kShtRel = 9;
constexpr std::uint32_t kShtDynsym = 11;
constexpr std::uint64_t kShfWrite = 1;
constexpr std::uint64_t kShfAlloc = 2;
constexpr std::uint64_t kShfExec = 4;

[[noreturn]] void malformed(const std::string& why) {
  throw Error(ErrorCode::kMalformedImage, why);
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> b) : b_(b) {}

  std::uint64_t u(std::uint64_t off, unsigned n) const {
    if (off > b_.size() || n > b_.size() - off) malformed("truncated at offset " + hex(off));
    std::uint64_t v = 0;
    std::memcpy(&v, b_.data() + off, n);
    return v;
  }
  std::string str(std::uint64_t table_off, std::uint64_t table_size, std::uint64_t idx) const {
    if (idx >= table_size) malformed("string index out of range");
    std::string out;
    for (std::uint64_t i = table_off + idx; i < table_off + table_size; ++i) {
      const auto c = static_cast<char>(u(i, 1));
      if (c == '\0') return out;
      out.push_back(c);
    }
    malformed("unterminated string");
  }
  std::size_t size() const { return b_.size(); }
  std::span<const std::uint8_t> slice(std::uint64_t off, std::uint64_t len) const {
    if (off > b_.size() || len > b_.size() - off) malformed("range beyond end of file");
    return b_.subspan(off, len);
  }

 private:
  std::span<const std::uint8_t> b_;
};

class Writer {
 public:
  void u(std::uint64_t v, unsigned n) {
    for (unsigned i = 0; i < n; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void put(std::uint64_t off, std::uint64_t v, unsigned n) {
    for (unsigned i = 0; i < n; ++i) out[off + i] = static_cast<std::uint8_t>(v >> (8 * i));
  }
  void align(std::uint64_t a) {
    while (out.size() % a) out.push_back(0);
  }
  void bytes(const std::vector<std::uint8_t>& b) { out.insert(out.end(), b.begin(), b.end()); }
  std::vector<std::uint8_t> out;
};

class StringTable {
 public:
  StringTable() { data.push_back(0); }
  std::uint32_t add(const std::string& s) {
    if (s.empty()) return 0;
    const auto off = static_cast<std::uint32_t>(data.size());
    data.insert(data.end(), s.begin(), s.end());
    data.push_back(0);
    return off;
  }
  std::vector<std::uint8_t> data;
};

}  // namespace

std::uint32_t relocation_type_abs(WordWidth w) {
  return w == WordWidth::kW64 ? kRAbs64 : kRP32Abs32;
}
std::uint32_t relocation_type_glob_dat(WordWidth w) {
  return w == WordWidth::kW64 ? kRGlobDat : kRP32GlobDat;
}
std::uint32_t relocation_type_jump_slot(WordWidth w) {
  return w == WordWidth::kW64 ? kRJumpSlot : kRP32JumpSlot;
}
std::uint32_t relocation_type_relative(WordWidth w) {
  return w == WordWidth::kW64 ? kRRelative : kRP32Relative;
}

File parse(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  if (bytes.size() < 16 || bytes[0] != 0x7F || bytes[1] != 'E' || bytes[2] != 'L' ||
      bytes[3] != 'F')
    malformed("missing ELF magic (encrypted or not an ELF image)");
  File f;
  const bool is64 = bytes[4] == 2;
  if (bytes[4] != 1 && bytes[4] != 2) malformed("bad ELF class");
  if (bytes[5] != 1) malformed("only little-endian images are supported");
  f.width = is64 ? WordWidth::kW64 : WordWidth::kW32;
  const unsigned w = is64 ? 8 : 4;

  f.type = static_cast<std::uint16_t>(r.u(16, 2));
  f.machine = static_cast<std::uint16_t>(r.u(18, 2));
  f.entry = r.u(24, w);
  const std::uint64_t phoff = r.u(24 + w, w);
  const std::uint64_t shoff = r.u(24 + 2 * w, w);
  const std::uint64_t base = 24 + 3 * w + 4;  // after e_flags
  const auto phentsize = r.u(base + 2, 2);
  const auto phnum = r.u(base + 4, 2);
  const auto shentsize = r.u(base + 6, 2);
  const auto shnum = r.u(base + 8, 2);
  const auto shstrndx = r.u(base + 10, 2);

  if (phnum && phentsize != (is64 ? 56u : 32u)) malformed("unexpected program header size");
  for (std::uint64_t i = 0; i < phnum; ++i) {
    const std::uint64_t p = phoff + i * phentsize;
    Segment s;
    s.type = static_cast<std::uint32_t>(r.u(p, 4));
    if (is64) {
      s.flags = static_cast<std::uint32_t>(r.u(p + 4, 4));
      s.offset = r.u(p + 8, 8);
      s.vaddr = r.u(p + 16, 8);
      s.filesz = r.u(p + 32, 8);
      s.memsz = r.u(p + 40, 8);
      s.align = r.u(p + 48, 8);
    } else {
      s.offset = r.u(p + 4, 4);
      s.vaddr = r.u(p + 8, 4);
      s.filesz = r.u(p + 16, 4);
      s.memsz = r.u(p + 20, 4);
      s.flags = static_cast<std::uint32_t>(r.u(p + 24, 4));
      s.align = r.u(p + 28, 4);
    }
    if (s.type == kPtLoad || s.type == kPtDynamic) {
      if (s.filesz > s.memsz) malformed("segment filesz exceeds memsz");
      r.slice(s.offset, s.filesz);
    }
    f.segments.push_back(s);
  }

  if (shnum && shentsize != (is64 ? 64u : 40u)) malformed("unexpected section header size");
  std::vector<std::uint32_t> name_idx;
  for (std::uint64_t i = 0; i < shnum; ++i) {
    const std::uint64_t p = shoff + i * shentsize;
    Section s;
    name_idx.push_back(static_cast<std::uint32_t>(r.u(p, 4)));
    s.type = static_cast<std::uint32_t>(r.u(p + 4, 4));
    s.flags = r.u(p + 8, w);
    s.addr = r.u(p + 8 + w, w);
    s.offset = r.u(p + 8 + 2 * w, w);
    s.size = r.u(p + 8 + 3 * w, w);
    s.link = static_cast<std::uint32_t>(r.u(p + 8 + 4 * w, 4));
    s.info = static_cast<std::uint32_t>(r.u(p + 12 + 4 * w, 4));
    s.entsize = r.u(p + 16 + 5 * w, w);
    if (s.type != kShtNobits && s.type != 0) r.slice(s.offset, s.size);
    f.sections.push_back(s);
  }
  if (shnum) {
    if (shstrndx >= shnum) malformed("bad section name table index");
    const Section& names = f.sections[shstrndx];
    for (std::size_t i = 0; i < f.sections.size(); ++i)
      f.sections[i].name = r.str(names.offset, names.size, name_idx[i]);
  }

  auto section_of_type = [&](std::uint32_t type) -> const Section* {
    for (const auto& s : f.sections)
      if (s.type == type) return &s;
    return nullptr;
  };
  auto strtab = [&](std::uint32_t idx) -> const Section& {
    if (idx >= f.sections.size() || f.sections[idx].type != kShtStrtab)
      malformed("section link does not name a string table");
    return f.sections[idx];
  };

  std::uint32_t dynsym_index = 0;
  if (const Section* ds = section_of_type(kShtDynsym)) {
    dynsym_index = static_cast<std::uint32_t>(ds - f.sections.data());
    const Section& st = strtab(ds->link);
    const std::uint64_t ent = is64 ? 24 : 16;
    for (std::uint64_t off = 0; off + ent <= ds->size; off += ent) {
      const std::uint64_t p = ds->offset + off;
      Symbol sym;
      const auto name = r.u(p, 4);
      std::uint8_t info;
      if (is64) {
        info = static_cast<std::uint8_t>(r.u(p + 4, 1));
        sym.shndx = static_cast<std::uint16_t>(r.u(p + 6, 2));
        sym.value = r.u(p + 8, 8);
        sym.size = r.u(p + 16, 8);
      } else {
        sym.value = r.u(p + 4, 4);
        sym.size = r.u(p + 8, 4);
        info = static_cast<std::uint8_t>(r.u(p + 12, 1));
        sym.shndx = static_cast<std::uint16_t>(r.u(p + 14, 2));
      }
      sym.bind = info >> 4;
      sym.type = info & 0xF;
      sym.name = r.str(st.offset, st.size, name);
      f.dynsym.push_back(std::move(sym));
    }
  }

  for (const auto& s : f.sections) {
    if (s.type != kShtRela && s.type != kShtRel) continue;
    const bool rela = s.type == kShtRela;
    const std::uint64_t ent = (rela ? 3 : 2) * w;
    for (std::uint64_t off = 0; off + ent <= s.size; off += ent) {
      const std::uint64_t p = s.offset + off;
      Relocation rel;
      rel.offset = r.u(p, w);
      const std::uint64_t info = r.u(p + w, w);
      if (is64) {
        rel.type = static_cast<std::uint32_t>(info & 0xFFFFFFFF);
        rel.symbol = static_cast<std::uint32_t>(info >> 32);
      } else {
        rel.type = static_cast<std::uint32_t>(info & 0xFF);
        rel.symbol = static_cast<std::uint32_t>(info >> 8);
      }
      if (rela) {
        const std::uint64_t a = r.u(p + 2 * w, w);
        rel.addend = is64 ? static_cast<std::int64_t>(a)
                          : static_cast<std::int64_t>(static_cast<std::int32_t>(a));
      }
      if (rel.symbol != 0 && (dynsym_index == 0 || rel.symbol >= f.dynsym.size()))
        malformed("relocation references a missing symbol");
      f.relocations.push_back(rel);
    }
  }

  // DT_NEEDED names come from the PT_DYNAMIC segment; strings from the
  // dynamic section's linked string table.
  for (const auto& seg : f.segments) {
    if (seg.type != kPtDynamic) continue;
    const Section* dyn_sec = section_of_type(kShtDynamic);
    if (!dyn_sec) malformed("PT_DYNAMIC without a .dynamic section");
    const Section& st = strtab(dyn_sec->link);
    for (std::uint64_t off = 0; off + 2 * w <= seg.filesz; off += 2 * w) {
      const std::uint64_t tag = r.u(seg.offset + off, w);
      const std::uint64_t val = r.u(seg.offset + off + w, w);
      if (tag == static_cast<std::uint64_t>(kDtNull)) break;
      if (tag == static_cast<std::uint64_t>(kDtNeeded)) f.needed.push_back(r.str(st.offset, st.size, val));
    }
  }

  for (const auto& s : f.sections) {
    if (s.name != ".ta_meta") continue;
    const auto data = r.slice(s.offset, s.size);
    std::istringstream in(std::string(data.begin(), data.end()));
    std::string line;
    while (std::getline(in, line)) {
      const auto eq = line.find('=');
      if (eq == std::string::npos) continue;
      f.meta[line.substr(0, eq)] = line.substr(eq + 1);
    }
  }
  return f;
}

std::uint64_t dynamic_size(WordWidth width, std::size_t needed_count) {
  return (needed_count + 1) * 2 * word_bytes(width);
}

std::vector<std::uint8_t> write(const WriterInput& in) {
  const bool is64 = in.width == WordWidth::kW64;
  const unsigned w = is64 ? 8 : 4;
  const unsigned ehsize = is64 ? 64 : 52;
  const unsigned phentsize = is64 ? 56 : 32;
  const unsigned shentsize = is64 ? 64 : 40;

  StringTable dynstr, shstr;
  std::vector<std::uint32_t> needed_idx;
  for (const auto& n : in.needed) needed_idx.push_back(dynstr.add(n));
  std::vector<std::uint32_t> sym_idx;
  for (const auto& s : in.symbols) sym_idx.push_back(dynstr.add(s.name));

  struct Phdr {
    std::uint32_t type, flags;
    std::uint64_t offset, vaddr, filesz, memsz, align;
  };
  std::vector<Phdr> phdrs;
  for (const auto& s : in.segments)
    phdrs.push_back({kPtLoad, s.flags, s.vaddr, s.vaddr, s.bytes.size(), s.memsz, kPageSize});
  const std::uint64_t dyn_size = dynamic_size(in.width, in.needed.size());
  phdrs.push_back({kPtDynamic, kPfR | kPfW, in.dynamic_vaddr, in.dynamic_vaddr, dyn_size,
                   dyn_size, w});
  if (in.stack_size) phdrs.push_back({kPtGnuStack, kPfR | kPfW, 0, 0, 0, in.stack_size, 16});

  Writer out;
  out.out.assign(ehsize + phentsize * phdrs.size(), 0);
  for (const auto& s : in.segments) {
    if (s.vaddr < out.out.size() || s.vaddr % kPageSize)
      throw Error(ErrorCode::kSpecInvalid, "segment vaddr collides with headers");
    if (out.out.size() < s.vaddr) out.out.resize(s.vaddr, 0);
    if (out.out.size() != s.vaddr) throw Error(ErrorCode::kSpecInvalid, "segments out of order");
    out.bytes(s.bytes);
  }
  // Dynamic table lives inside an RW segment's file bytes.
  {
    std::uint64_t p = in.dynamic_vaddr;
    if (p + dyn_size > out.out.size())
      throw Error(ErrorCode::kSpecInvalid, "dynamic table outside file bytes");
    for (auto idx : needed_idx) {
      out.put(p, kDtNeeded, w);
      out.put(p + w, idx, w);
      p += 2 * w;
    }
    out.put(p, kDtNull, w);
    out.put(p + w, 0, w);
  }

  struct Shdr {
    std::string name;
    std::uint32_t type;
    std::uint64_t flags, addr, offset, size;
    std::uint32_t link, info;
    std::uint64_t align, entsize;
  };
  std::vector<Shdr> shdrs;
  shdrs.push_back({"", 0, 0, 0, 0, 0, 0, 0, 0, 0});
  for (const auto& s : in.segments) {
    std::uint64_t flags = kShfAlloc;
    if (s.flags & kPfX) flags |= kShfExec;
    if (s.flags & kPfW) flags |= kShfWrite;
    shdrs.push_back({s.section_name, kShtProgbits, flags, s.vaddr, s.vaddr, s.bytes.size(), 0,
                     0, 16, 0});
    if (s.memsz > s.bytes.size())
      shdrs.push_back({".bss", kShtNobits, kShfAlloc | kShfWrite, s.vaddr + s.bytes.size(),
                       s.vaddr + s.bytes.size(), s.memsz - s.bytes.size(), 0, 0, 16, 0});
  }
  out.align(8);
  const std::uint64_t dynstr_off = out.out.size();
  out.bytes(dynstr.data);
  out.align(8);
  const std::uint64_t dynsym_off = out.out.size();
  const std::uint64_t sym_ent = is64 ? 24 : 16;
  out.out.resize(out.out.size() + sym_ent, 0);  // null symbol
  for (std::size_t i = 0; i < in.symbols.size(); ++i) {
    const Symbol& s = in.symbols[i];
    const auto info = static_cast<std::uint8_t>((s.bind << 4) | (s.type & 0xF));
    out.u(sym_idx[i], 4);
    if (is64) {
      out.u(info, 1);
      out.u(0, 1);
      out.u(s.shndx, 2);
      out.u(s.value, 8);
      out.u(s.size, 8);
    } else {
      out.u(s.value, 4);
      out.u(s.size, 4);
      out.u(info, 1);
      out.u(0, 1);
      out.u(s.shndx, 2);
    }
  }
  const std::uint64_t dynsym_size = out.out.size() - dynsym_off;
  out.align(8);
  const std::uint64_t rela_off = out.out.size();
  for (const auto& rel : in.relocations) {
    out.u(rel.offset, w);
    if (is64)
      out.u((static_cast<std::uint64_t>(rel.symbol) << 32) | rel.type, 8);
    else
      out.u((static_cast<std::uint64_t>(rel.symbol) << 8) | (rel.type & 0xFF), 4);
    out.u(static_cast<std::uint64_t>(rel.addend), w);
  }
  const std::uint64_t rela_size = out.out.size() - rela_off;
  const std::uint64_t meta_off = out.out.size();
  for (const auto& [k, v] : in.meta) {
    const std::string line = k + "=" + v + "\n";
    out.out.insert(out.out.end(), line.begin(), line.end());
  }
  const std::uint64_t meta_size = out.out.size() - meta_off;

  const auto dynstr_index = static_cast<std::uint32_t>(shdrs.size() + 2);
  const auto dynsym_index = static_cast<std::uint32_t>(shdrs.size() + 1);
  shdrs.push_back({".dynamic", kShtDynamic, kShfAlloc | kShfWrite, in.dynamic_vaddr,
                   in.dynamic_vaddr, dyn_size, dynstr_index, 0, w, 2ull * w});
  shdrs.push_back({".dynsym", kShtDynsym, kShfAlloc, 0, dynsym_off, dynsym_size, dynstr_index, 1,
                   w, sym_ent});
  shdrs.push_back({".dynstr", kShtStrtab, kShfAlloc, 0, dynstr_off, dynstr.data.size(), 0, 0, 1,
                   0});
  shdrs.push_back({".rela.dyn", kShtRela, kShfAlloc, 0, rela_off, rela_size, dynsym_index, 0, w,
                   3ull * w});
  if (!in.meta.empty())
    shdrs.push_back({".ta_meta", kShtProgbits, 0, 0, meta_off, meta_size, 0, 0, 1, 0});
  shdrs.push_back({".shstrtab", kShtStrtab, 0, 0, 0, 0, 0, 0, 1, 0});
  std::vector<std::uint32_t> shname;
  for (const auto& s : shdrs) shname.push_back(shstr.add(s.name));
  shdrs.back().offset = out.out.size();
  shdrs.back().size = shstr.data.size();
  out.bytes(shstr.data);
  out.align(8);
  const std::uint64_t shoff = out.out.size();
  for (std::size_t i = 0; i < shdrs.size(); ++i) {
    const Shdr& s = shdrs[i];
    out.u(shname[i], 4);
    out.u(s.type, 4);
    out.u(s.flags, w);
    out.u(s.addr, w);
    out.u(s.offset, w);
    out.u(s.size, w);
    out.u(s.link, 4);
    out.u(s.info, 4);
    out.u(s.align, w);
    out.u(s.entsize, w);
  }

  // ELF header.
  std::vector<std::uint8_t>& b = out.out;
  b[0] = 0x7F;
  b[1] = 'E';
  b[2] = 'L';
  b[3] = 'F';
  b[4] = is64 ? 2 : 1;
  b[5] = 1;
  b[6] = 1;
  out.put(16, kEtDyn, 2);
  out.put(18, kEmAarch64, 2);
  out.put(20, 1, 4);
  out.put(24, 0, w);
  out.put(24 + w, ehsize, w);
  out.put(24 + 2 * w, shoff, w);
  const std::uint64_t base = 24 + 3 * w;
  out.put(base, 0, 4);
  out.put(base + 4, ehsize, 2);
  out.put(base + 6, phentsize, 2);
  out.put(base + 8, phdrs.size(), 2);
  out.put(base + 10, shentsize, 2);
  out.put(base + 12, shdrs.size(), 2);
  out.put(base + 14, shdrs.size() - 1, 2);

  for (std::size_t i = 0; i < phdrs.size(); ++i) {
    const Phdr& p = phdrs[i];
    const std::uint64_t o = ehsize + i * phentsize;
    out.put(o, p.type, 4);
    if (is64) {
      out.put(o + 4, p.flags, 4);
      out.put(o + 8, p.offset, 8);
      out.put(o + 16, p.vaddr, 8);
      out.put(o + 24, p.vaddr, 8);
      out.put(o + 32, p.filesz, 8);
      out.put(o + 40, p.memsz, 8);
      out.put(o + 48, p.align, 8);
    } else {
      out.put(o + 4, p.offset, 4);
      out.put(o + 8, p.vaddr, 4);
      out.put(o + 12, p.vaddr, 4);
      out.put(o + 16, p.filesz, 4);
      out.put(o + 20, p.memsz, 4);
      out.put(o + 24, p.flags, 4);
      out.put(o + 28, p.align, 4);
    }
  }
  return b;
}

}  // namespace taforge::elf

#include "taforge/isa.hpp"

#include <array>
#include <cstdio>
#include <map>
#include <mutex>

namespace taforge::isa {

namespace {

constexpr std::uint32_t bits(std::uint32_t w, unsigned hi, unsigned lo) {
  return (w >> lo) & ((1u << (hi - lo + 1)) - 1u);
}

constexpr std::int64_t sign_extend(std::uint64_t v, unsigned width) {
  const std::uint64_t m = 1ull << (width - 1);
  v &= (width == 64) ? ~0ull : ((1ull << width) - 1);
  return static_cast<std::int64_t>((v ^ m) - m);
}

constexpr std::uint64_t ones(unsigned n) { return n >= 64 ? ~0ull : ((1ull << n) - 1); }

std::uint64_t ror(std::uint64_t v, unsigned r, unsigned esize) {
  r %= esize;
  if (r == 0) return v & ones(esize);
  return ((v >> r) | (v << (esize - r))) & ones(esize);
}

int highest_set_bit(std::uint32_t v) {
  for (int i = 31; i >= 0; --i)
    if (v & (1u << i)) return i;
  return -1;
}

Insn decode_data_imm(std::uint32_t w) {
  Insn i;
  const bool sf = bits(w, 31, 31);
  i.sf = sf;
  i.rd = bits(w, 4, 0);
  i.rn = bits(w, 9, 5);
  switch (bits(w, 25, 23)) {
    case 0b000:
    case 0b001:
      if (bits(w, 31, 31) == 0 && bits(w, 28, 24) == 0b10000) {
        i.op = Op::kAdr;
        i.sf = true;
        const std::uint64_t raw = (static_cast<std::uint64_t>(bits(w, 23, 5)) << 2) | bits(w, 30, 29);
        i.imm = sign_extend(raw, 21);
      }
      break;
    case 0b010: {  // add/sub immediate
      i.op = Op::kAddImm;
      i.sub = bits(w, 30, 30);
      i.set_flags = bits(w, 29, 29);
      const std::uint32_t imm12 = bits(w, 21, 10);
      i.amount = bits(w, 22, 22) ? 12 : 0;
      i.imm = static_cast<std::int64_t>(imm12) << i.amount;
      break;
    }
    case 0b100: {  // logical immediate
      const bool n = bits(w, 22, 22);
      if (!sf && n) break;
      i.immr = bits(w, 21, 16);
      i.imms = bits(w, 15, 10);
      auto mask = decode_bit_masks(n, i.imms, i.immr, sf ? 64 : 32);
      if (!mask) break;
      i.op = Op::kLogicImm;
      i.shift = bits(w, 30, 29);
      i.set_flags = i.shift == static_cast<std::uint8_t>(LogicOp::kAnds);
      i.imm = static_cast<std::int64_t>(*mask);
      break;
    }
    case 0b101: {  // move wide
      const std::uint32_t opc = bits(w, 30, 29);
      const std::uint32_t hw = bits(w, 22, 21);
      if (opc == 1 || (!sf && hw > 1)) break;
      i.op = Op::kMovWide;
      i.shift = static_cast<std::uint8_t>(opc);
      i.amount = static_cast<std::uint8_t>(hw * 16);
      i.imm = bits(w, 20, 5);
      break;
    }
    case 0b110: {  // bitfield
      const std::uint32_t opc = bits(w, 30, 29);
      const bool n = bits(w, 22, 22);
      if (opc == 1 || opc == 3 || n != sf) break;
      i.immr = bits(w, 21, 16);
      i.imms = bits(w, 15, 10);
      if (!sf && (i.immr > 31 || i.imms > 31)) break;
      i.op = Op::kBitfield;
      i.is_signed = opc == 0;
      break;
    }
    default:
      break;
  }
  return i;
}

Insn decode_branch(std::uint32_t w) {
  Insn i;
  if ((w & 0x7C00'0000u) == 0x1400'0000u) {
    i.op = bits(w, 31, 31) ? Op::kBl : Op::kB;
    i.imm = sign_extend(bits(w, 25, 0), 26) * 4;
    return i;
  }
  if ((w & 0xFF00'0010u) == 0x5400'0000u) {
    i.op = Op::kBCond;
    i.cond = bits(w, 3, 0);
    i.imm = sign_extend(bits(w, 23, 5), 19) * 4;
    return i;
  }
  if ((w & 0x7E00'0000u) == 0x3400'0000u) {
    i.op = Op::kCbz;
    i.sf = bits(w, 31, 31);
    i.nonzero = bits(w, 24, 24);
    i.rd = bits(w, 4, 0);
    i.imm = sign_extend(bits(w, 23, 5), 19) * 4;
    return i;
  }
  if ((w & 0xFFFF'FC1Fu) == 0xD61F'0000u) {
    i.op = Op::kBr;
    i.rn = bits(w, 9, 5);
    return i;
  }
  if ((w & 0xFFFF'FC1Fu) == 0xD63F'0000u) {
    i.op = Op::kBlr;
    i.rn = bits(w, 9, 5);
    return i;
  }
  if ((w & 0xFFFF'FC1Fu) == 0xD65F'0000u) {
    i.op = Op::kRet;
    i.rn = bits(w, 9, 5);
    return i;
  }
  if ((w & 0xFFE0'001Fu) == 0xD400'0001u) {
    i.op = Op::kSvc;
    i.imm = bits(w, 20, 5);
    return i;
  }
  if ((w & 0xFFE0'001Fu) == 0xD400'0002u) {
    i.op = Op::kHvc;
    i.imm = bits(w, 20, 5);
    return i;
  }
  if ((w & 0xFFE0'001Fu) == 0xD420'0000u) {
    i.op = Op::kBrk;
    i.imm = bits(w, 20, 5);
    return i;
  }
  if (w == 0xD503'201Fu) {
    i.op = Op::kNop;
    return i;
  }
  return i;
}

Insn decode_load_store(std::uint32_t w) {
  Insn i;
  // Only the integer (V=0) LDR/STR forms with opc in {00, 01}.
  if (bits(w, 29, 27) != 0b111 || bits(w, 26, 26) != 0) return i;
  const std::uint32_t opc = bits(w, 23, 22);
  if (opc > 1) return i;
  i.size_log2 = static_cast<std::uint8_t>(bits(w, 31, 30));
  i.is_load = opc == 1;
  i.rd = bits(w, 4, 0);
  i.rn = bits(w, 9, 5);
  if (bits(w, 25, 24) == 0b01) {
    i.op = Op::kLoadStore;
    i.imm = static_cast<std::int64_t>(bits(w, 21, 10)) << i.size_log2;
    return i;
  }
  if (bits(w, 25, 24) == 0b00 && bits(w, 21, 21) == 1 && bits(w, 11, 10) == 0b10) {
    const std::uint32_t option = bits(w, 15, 13);
    if (option != 2 && option != 3 && option != 6 && option != 7) return i;
    i.op = Op::kLoadStoreReg;
    i.rm = bits(w, 20, 16);
    i.shift = static_cast<std::uint8_t>(option);
    i.amount = bits(w, 12, 12) ? i.size_log2 : 0;
    // S=1 with a byte access is a distinct (explicit #0) form we do not emit.
    if (bits(w, 12, 12) && i.size_log2 == 0) i.op = Op::kInvalid;
    return i;
  }
  return i;
}

Insn decode_data_reg(std::uint32_t w) {
  Insn i;
  i.sf = bits(w, 31, 31);
  i.rd = bits(w, 4, 0);
  i.rn = bits(w, 9, 5);
  i.rm = bits(w, 20, 16);
  if (bits(w, 28, 24) == 0b01010) {  // logical shifted register
    if (bits(w, 21, 21)) return i;    // N=1 (BIC/ORN/EON/BICS) not in subset
    const std::uint8_t amount = bits(w, 15, 10);
    if (!i.sf && amount > 31) return i;
    i.op = Op::kLogicReg;
    i.shift = static_cast<std::uint8_t>(bits(w, 30, 29));
    i.set_flags = i.shift == static_cast<std::uint8_t>(LogicOp::kAnds);
    i.cond = static_cast<std::uint8_t>(bits(w, 23, 22));  // shift type
    i.amount = amount;
    return i;
  }
  if (bits(w, 28, 24) == 0b01011 && bits(w, 21, 21) == 0) {  // add/sub shifted register
    const std::uint8_t type = bits(w, 23, 22);
    const std::uint8_t amount = bits(w, 15, 10);
    if (type == 3 || (!i.sf && amount > 31)) return i;
    i.op = Op::kAddReg;
    i.sub = bits(w, 30, 30);
    i.set_flags = bits(w, 29, 29);
    i.cond = type;
    i.amount = amount;
    return i;
  }
  if ((w & 0x7FE0'0000u) == 0x1AC0'0000u) {  // data-processing (2 source)
    const std::uint32_t opcode = bits(w, 15, 10);
    switch (opcode) {
      case 0b000010:
      case 0b000011:
        i.op = Op::kDiv;
        i.is_signed = opcode == 0b000011;
        return i;
      case 0b001000:
      case 0b001001:
      case 0b001010:
        i.op = Op::kShiftReg;
        i.shift = static_cast<std::uint8_t>(opcode & 3);
        return i;
      default:
        return i;
    }
  }
  if ((w & 0x7FE0'0000u) == 0x1B00'0000u) {  // MADD/MSUB
    i.op = Op::kMulAdd;
    i.is_signed = bits(w, 15, 15);
    i.ra = bits(w, 14, 10);
    return i;
  }
  return i;
}

}  // namespace

std::optional<std::uint64_t> decode_bit_masks(bool n, std::uint8_t imms, std::uint8_t immr,
                                              unsigned datasize) {
  const int len = highest_set_bit((static_cast<std::uint32_t>(n) << 6) | (~imms & 0x3Fu));
  if (len < 1) return std::nullopt;
  const unsigned esize = 1u << len;
  if (esize > datasize) return std::nullopt;
  const unsigned levels = esize - 1;
  const unsigned s = imms & levels;
  const unsigned r = immr & levels;
  if (s == levels) return std::nullopt;
  const std::uint64_t welem = ones(s + 1);
  const std::uint64_t elem = ror(welem, r, esize);
  std::uint64_t out = 0;
  for (unsigned pos = 0; pos < datasize; pos += esize) out |= elem << pos;
  return out & ones(datasize);
}

Insn decode(std::uint32_t w) {
  const std::uint32_t op0 = bits(w, 28, 25);
  switch (op0) {
    case 0b1000:
    case 0b1001:
      return decode_data_imm(w);
    case 0b1010:
    case 0b1011:
      return decode_branch(w);
    case 0b0100:
    case 0b0110:
    case 0b1100:
    case 0b1110:
      return decode_load_store(w);
    case 0b0101:
    case 0b1101:
      return decode_data_reg(w);
    default:
      return Insn{};
  }
}

bool is_block_terminator(const Insn& insn) {
  switch (insn.op) {
    case Op::kB:
    case Op::kBl:
    case Op::kBCond:
    case Op::kCbz:
    case Op::kBr:
    case Op::kBlr:
    case Op::kRet:
      return true;
    default:
      return false;
  }
}

std::optional<std::uint64_t> direct_target(const Insn& insn, std::uint64_t pc) {
  switch (insn.op) {
    case Op::kB:
    case Op::kBl:
    case Op::kBCond:
    case Op::kCbz:
      return pc + static_cast<std::uint64_t>(insn.imm);
    default:
      return std::nullopt;
  }
}

std::string cond_name(std::uint8_t cond) {
  static constexpr std::array<const char*, 16> kNames = {
      "eq", "ne", "hs", "lo", "mi", "pl", "vs", "vc",
      "hi", "ls", "ge", "lt", "gt", "le", "al", "nv"};
  return kNames[cond & 15];
}

// ---------------------------------------------------------------------------
// Disassembly

namespace {

std::string reg(bool sf, std::uint8_t r, bool sp_form) {
  if (r == 31) {
    if (sp_form) return sf ? "sp" : "wsp";
    return sf ? "xzr" : "wzr";
  }
  return (sf ? "x" : "w") + std::to_string(r);
}

std::string imm_text(std::int64_t v) {
  char buf[32];
  if (v < 0) {
    const std::uint64_t m = static_cast<std::uint64_t>(-v);
    if (m > 9)
      std::snprintf(buf, sizeof buf, "#-0x%llx", static_cast<unsigned long long>(m));
    else
      std::snprintf(buf, sizeof buf, "#-%llu", static_cast<unsigned long long>(m));
  } else if (v > 9) {
    std::snprintf(buf, sizeof buf, "#0x%llx", static_cast<unsigned long long>(v));
  } else {
    std::snprintf(buf, sizeof buf, "#%lld", static_cast<long long>(v));
  }
  return buf;
}

std::string addr_text(std::uint64_t a) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "#0x%llx", static_cast<unsigned long long>(a));
  return buf;
}

const char* shift_name(std::uint8_t t) {
  static constexpr std::array<const char*, 4> kNames = {"lsl", "lsr", "asr", "ror"};
  return kNames[t & 3];
}

std::string dec_text(unsigned v) { return "#" + std::to_string(v); }

std::string shift_suffix(std::uint8_t type, std::uint8_t amount) {
  if (amount == 0 && type == 0) return "";
  return std::string(", ") + shift_name(type) + " " + dec_text(amount);
}

}  // namespace

std::string disassemble(std::uint32_t word, std::uint64_t pc) {
  const Insn i = decode(word);
  const bool sf = i.sf;
  switch (i.op) {
    case Op::kInvalid:
      return ".word " + addr_text(word).substr(1);
    case Op::kAddImm: {
      const bool rd_sp = !i.set_flags;
      if (i.set_flags && i.rd == 31)
        return std::string(i.sub ? "cmp " : "cmn ") + reg(sf, i.rn, true) + ", " +
               imm_text(i.imm >> i.amount) + (i.amount ? ", lsl #12" : "");
      if (!i.sub && !i.set_flags && i.imm == 0 && (i.rd == 31 || i.rn == 31))
        return "mov " + reg(sf, i.rd, true) + ", " + reg(sf, i.rn, true);
      std::string m = i.sub ? "sub" : "add";
      if (i.set_flags) m += "s";
      return m + " " + reg(sf, i.rd, rd_sp) + ", " + reg(sf, i.rn, true) + ", " +
             imm_text(i.imm >> i.amount) + (i.amount ? ", lsl #12" : "");
    }
    case Op::kAddReg: {
      const std::string tail = reg(sf, i.rm, false) + shift_suffix(i.cond, i.amount);
      if (i.set_flags && i.rd == 31)
        return std::string(i.sub ? "cmp " : "cmn ") + reg(sf, i.rn, false) + ", " + tail;
      if (i.sub && i.rn == 31)
        return std::string(i.set_flags ? "negs " : "neg ") + reg(sf, i.rd, false) + ", " + tail;
      std::string m = i.sub ? "sub" : "add";
      if (i.set_flags) m += "s";
      return m + " " + reg(sf, i.rd, false) + ", " + reg(sf, i.rn, false) + ", " + tail;
    }
    case Op::kLogicReg: {
      const auto op = static_cast<LogicOp>(i.shift);
      const std::string tail = reg(sf, i.rm, false) + shift_suffix(i.cond, i.amount);
      if (op == LogicOp::kOrr && i.rn == 31 && i.amount == 0)
        return "mov " + reg(sf, i.rd, false) + ", " + reg(sf, i.rm, false);
      if (op == LogicOp::kAnds && i.rd == 31) return "tst " + reg(sf, i.rn, false) + ", " + tail;
      static constexpr std::array<const char*, 4> kNames = {"and", "orr", "eor", "ands"};
      return std::string(kNames[i.shift]) + " " + reg(sf, i.rd, false) + ", " +
             reg(sf, i.rn, false) + ", " + tail;
    }
    case Op::kLogicImm: {
      const auto op = static_cast<LogicOp>(i.shift);
      const std::uint64_t v = static_cast<std::uint64_t>(i.imm);
      const std::string text = sf && op == LogicOp::kAnds ? imm_text(i.imm) : addr_text(v);
      if (op == LogicOp::kAnds && i.rd == 31)
        return "tst " + reg(sf, i.rn, false) + ", " + text;
      if (op == LogicOp::kOrr && i.rn == 31)
        return "mov " + reg(sf, i.rd, true) + ", " + text;
      static constexpr std::array<const char*, 4> kNames = {"and", "orr", "eor", "ands"};
      return std::string(kNames[i.shift]) + " " +
             reg(sf, i.rd, op != LogicOp::kAnds) + ", " + reg(sf, i.rn, false) + ", " + text;
    }
    case Op::kMovWide: {
      const auto op = static_cast<MoveOp>(i.shift);
      const std::uint64_t imm = static_cast<std::uint64_t>(i.imm);
      if (op == MoveOp::kMovk)
        return "movk " + reg(sf, i.rd, false) + ", " + imm_text(i.imm) +
               (i.amount ? ", lsl " + dec_text(i.amount) : "");
      if (op == MoveOp::kMovz) {
        if (imm == 0 && i.amount != 0)
          return "movz " + reg(sf, i.rd, false) + ", #0, lsl " + dec_text(i.amount);
        return "mov " + reg(sf, i.rd, false) + ", " +
               imm_text(static_cast<std::int64_t>(imm << i.amount));
      }
      std::uint64_t v = ~(imm << i.amount);
      if (!sf) v &= 0xFFFF'FFFFull;
      std::int64_t sv = sf ? static_cast<std::int64_t>(v) : static_cast<std::int32_t>(v);
      if (imm == 0 && i.amount != 0)
        return "movn " + reg(sf, i.rd, false) + ", #0, lsl " + dec_text(i.amount);
      if (!sf && (v & 0xFFFF'0000ull) == 0xFFFF'0000ull && imm == 0xFFFF && i.amount == 0)
        return "movn " + reg(sf, i.rd, false) + ", " + imm_text(i.imm);
      return "mov " + reg(sf, i.rd, false) + ", " + imm_text(sv);
    }
    case Op::kBitfield: {
      const unsigned d = sf ? 64 : 32;
      const std::string rd = reg(sf, i.rd, false), rn = reg(sf, i.rn, false);
      if (i.imms == d - 1)
        return std::string(i.is_signed ? "asr " : "lsr ") + rd + ", " + rn + ", " +
               imm_text(i.immr);
      if (!i.is_signed && i.imms + 1u == i.immr)
        return "lsl " + rd + ", " + rn + ", " + imm_text(d - 1 - i.imms);
      if (i.imms < i.immr)
        return std::string(i.is_signed ? "sbfiz " : "ubfiz ") + rd + ", " + rn + ", " +
               imm_text(d - i.immr) + ", " + imm_text(i.imms + 1);
      return std::string(i.is_signed ? "sbfx " : "ubfx ") + rd + ", " + rn + ", " +
             imm_text(i.immr) + ", " + imm_text(i.imms - i.immr + 1);
    }
    case Op::kShiftReg:
      return std::string(shift_name(i.shift)) + " " + reg(sf, i.rd, false) + ", " +
             reg(sf, i.rn, false) + ", " + reg(sf, i.rm, false);
    case Op::kDiv:
      return std::string(i.is_signed ? "sdiv " : "udiv ") + reg(sf, i.rd, false) + ", " +
             reg(sf, i.rn, false) + ", " + reg(sf, i.rm, false);
    case Op::kMulAdd: {
      const std::string base = reg(sf, i.rd, false) + ", " + reg(sf, i.rn, false) + ", " +
                               reg(sf, i.rm, false);
      if (i.ra == 31) return std::string(i.is_signed ? "mneg " : "mul ") + base;
      return std::string(i.is_signed ? "msub " : "madd ") + base + ", " + reg(sf, i.ra, false);
    }
    case Op::kLoadStore:
    case Op::kLoadStoreReg: {
      static constexpr std::array<const char*, 4> kSuffix = {"b", "h", "", ""};
      const bool wide = i.size_log2 == 3;
      std::string m = std::string(i.is_load ? "ldr" : "str") + kSuffix[i.size_log2];
      std::string out = m + " " + reg(wide, i.rd, false) + ", [" + reg(true, i.rn, true);
      if (i.op == Op::kLoadStore) {
        if (i.imm != 0) out += ", " + imm_text(i.imm);
        return out + "]";
      }
      const auto ext = static_cast<Extend>(i.shift);
      const bool wreg = ext == Extend::kUxtw || ext == Extend::kSxtw;
      out += ", " + reg(!wreg, i.rm, false);
      const char* ext_name = ext == Extend::kUxtw   ? "uxtw"
                             : ext == Extend::kSxtw ? "sxtw"
                             : ext == Extend::kSxtx ? "sxtx"
                                                    : "lsl";
      if (ext == Extend::kLsl) {
        if (i.amount) out += std::string(", lsl ") + imm_text(i.amount);
      } else {
        out += std::string(", ") + ext_name;
        if (i.amount) out += " " + imm_text(i.amount);
      }
      return out + "]";
    }
    case Op::kAdr:
      return "adr " + reg(true, i.rd, false) + ", " + addr_text(pc + i.imm);
    case Op::kB:
      return "b " + addr_text(pc + i.imm);
    case Op::kBl:
      return "bl " + addr_text(pc + i.imm);
    case Op::kBCond:
      return "b." + cond_name(i.cond) + " " + addr_text(pc + i.imm);
    case Op::kCbz:
      return std::string(i.nonzero ? "cbnz " : "cbz ") + reg(sf, i.rd, false) + ", " +
             addr_text(pc + i.imm);
    case Op::kBr:
      return "br " + reg(true, i.rn, false);
    case Op::kBlr:
      return "blr " + reg(true, i.rn, false);
    case Op::kRet:
      return i.rn == kLr ? "ret" : "ret " + reg(true, i.rn, false);
    case Op::kSvc:
      return "svc " + imm_text(i.imm);
    case Op::kHvc:
      return "hvc " + imm_text(i.imm);
    case Op::kBrk:
      return "brk " + imm_text(i.imm);
    case Op::kNop:
      return "nop";
  }
  return "?";
}

// ---------------------------------------------------------------------------
// Encoders

namespace enc {

namespace {
constexpr std::uint32_t r5(std::uint8_t r) { return r & 31u; }
constexpr std::uint32_t sfb(bool sf) { return sf ? 1u << 31 : 0u; }

std::uint32_t add_sub_imm(bool sf, bool sub, bool s, std::uint8_t rd, std::uint8_t rn,
                          std::uint32_t imm12, bool shift12) {
  return sfb(sf) | (sub ? 1u << 30 : 0u) | (s ? 1u << 29 : 0u) | (0b100010u << 23) |
         (shift12 ? 1u << 22 : 0u) | ((imm12 & 0xFFFu) << 10) | (r5(rn) << 5) | r5(rd);
}

std::uint32_t add_sub_reg(bool sf, bool sub, bool s, std::uint8_t rd, std::uint8_t rn,
                          std::uint8_t rm, ShiftType shift, std::uint8_t amount) {
  return sfb(sf) | (sub ? 1u << 30 : 0u) | (s ? 1u << 29 : 0u) | (0b01011u << 24) |
         (static_cast<std::uint32_t>(shift) << 22) | (r5(rm) << 16) | ((amount & 63u) << 10) |
         (r5(rn) << 5) | r5(rd);
}

std::uint32_t move_wide(std::uint32_t opc, bool sf, std::uint8_t rd, std::uint16_t imm,
                        std::uint8_t hw) {
  return sfb(sf) | (opc << 29) | (0b100101u << 23) | ((hw & 3u) << 21) |
         (static_cast<std::uint32_t>(imm) << 5) | r5(rd);
}

std::uint32_t bitfield(std::uint32_t opc, bool sf, std::uint8_t rd, std::uint8_t rn,
                       std::uint8_t immr, std::uint8_t imms) {
  return sfb(sf) | (opc << 29) | (0b100110u << 23) | (sf ? 1u << 22 : 0u) |
         ((immr & 63u) << 16) | ((imms & 63u) << 10) | (r5(rn) << 5) | r5(rd);
}

std::uint32_t dp2(bool sf, std::uint32_t opcode, std::uint8_t rd, std::uint8_t rn,
                  std::uint8_t rm) {
  return sfb(sf) | 0x1AC0'0000u | (r5(rm) << 16) | (opcode << 10) | (r5(rn) << 5) | r5(rd);
}

std::uint32_t ls_imm(unsigned size, bool load, std::uint8_t rt, std::uint8_t rn,
                     std::uint32_t offset) {
  const std::uint32_t imm12 = (offset >> size) & 0xFFFu;
  return (size << 30) | (0b111u << 27) | (0b01u << 24) | ((load ? 1u : 0u) << 22) |
         (imm12 << 10) | (r5(rn) << 5) | r5(rt);
}

std::uint32_t ls_reg(unsigned size, bool load, std::uint8_t rt, std::uint8_t rn,
                     std::uint8_t rm, bool scaled) {
  return (size << 30) | (0b111u << 27) | ((load ? 1u : 0u) << 22) | (1u << 21) |
         (r5(rm) << 16) | (3u << 13) | (scaled ? 1u << 12 : 0u) | (0b10u << 10) |
         (r5(rn) << 5) | r5(rt);
}

std::uint32_t imm19(std::int64_t offset) {
  return static_cast<std::uint32_t>((offset >> 2) & 0x7FFFF);
}

struct MaskKey {
  bool sf;
  std::uint64_t value;
  bool operator<(const MaskKey& o) const {
    return sf != o.sf ? sf < o.sf : value < o.value;
  }
};

// value -> (N, immr, imms), built once by enumerating the encoding space.
const std::map<MaskKey, std::uint32_t>& mask_table() {
  static const std::map<MaskKey, std::uint32_t> table = [] {
    std::map<MaskKey, std::uint32_t> t;
    for (int sf = 0; sf < 2; ++sf)
      for (std::uint32_t n = 0; n <= static_cast<std::uint32_t>(sf); ++n)
        for (std::uint32_t immr = 0; immr < 64; ++immr)
          for (std::uint32_t imms = 0; imms < 64; ++imms) {
            if (!sf && (immr > 31)) continue;
            auto v = decode_bit_masks(n, static_cast<std::uint8_t>(imms),
                                      static_cast<std::uint8_t>(immr), sf ? 64 : 32);
            if (!v) continue;
            t.emplace(MaskKey{sf != 0, *v}, (n << 12) | (immr << 6) | imms);
          }
    return t;
  }();
  return table;
}

}  // namespace

std::uint32_t add_imm(bool sf, std::uint8_t rd, std::uint8_t rn, std::uint32_t imm12,
                      bool shift12) {
  return add_sub_imm(sf, false, false, rd, rn, imm12, shift12);
}
std::uint32_t adds_imm(bool sf, std::uint8_t rd, std::uint8_t rn, std::uint32_t imm12) {
  return add_sub_imm(sf, false, true, rd, rn, imm12, false);
}
std::uint32_t sub_imm(bool sf, std::uint8_t rd, std::uint8_t rn, std::uint32_t imm12,
                      bool shift12) {
  return add_sub_imm(sf, true, false, rd, rn, imm12, shift12);
}
std::uint32_t subs_imm(bool sf, std::uint8_t rd, std::uint8_t rn, std::uint32_t imm12) {
  return add_sub_imm(sf, true, true, rd, rn, imm12, false);
}
std::uint32_t cmp_imm(bool sf, std::uint8_t rn, std::uint32_t imm12) {
  return subs_imm(sf, kZr, rn, imm12);
}

std::uint32_t add_reg(bool sf, std::uint8_t rd, std::uint8_t rn, std::uint8_t rm,
                      ShiftType shift, std::uint8_t amount) {
  return add_sub_reg(sf, false, false, rd, rn, rm, shift, amount);
}
std::uint32_t sub_reg(bool sf, std::uint8_t rd, std::uint8_t rn, std::uint8_t rm,
                      ShiftType shift, std::uint8_t amount) {
  return add_sub_reg(sf, true, false, rd, rn, rm, shift, amount);
}
std::uint32_t subs_reg(bool sf, std::uint8_t rd, std::uint8_t rn, std::uint8_t rm) {
  return add_sub_reg(sf, true, true, rd, rn, rm, ShiftType::kLsl, 0);
}
std::uint32_t cmp_reg(bool sf, std::uint8_t rn, std::uint8_t rm) {
  return subs_reg(sf, kZr, rn, rm);
}

std::uint32_t logic_reg(LogicOp op, bool sf, std::uint8_t rd, std::uint8_t rn, std::uint8_t rm,
                        ShiftType shift, std::uint8_t amount) {
  return sfb(sf) | (static_cast<std::uint32_t>(op) << 29) | (0b01010u << 24) |
         (static_cast<std::uint32_t>(shift) << 22) | (r5(rm) << 16) | ((amount & 63u) << 10) |
         (r5(rn) << 5) | r5(rd);
}

std::optional<std::uint32_t> logic_imm(LogicOp op, bool sf, std::uint8_t rd, std::uint8_t rn,
                                       std::uint64_t value) {
  if (!sf) value &= 0xFFFF'FFFFull;
  const auto& t = mask_table();
  auto it = t.find(MaskKey{sf, value});
  if (it == t.end()) return std::nullopt;
  const std::uint32_t f = it->second;
  return sfb(sf) | (static_cast<std::uint32_t>(op) << 29) | (0b100100u << 23) |
         (((f >> 12) & 1u) << 22) | (((f >> 6) & 63u) << 16) | ((f & 63u) << 10) |
         (r5(rn) << 5) | r5(rd);
}

std::uint32_t mov_reg(bool sf, std::uint8_t rd, std::uint8_t rm) {
  return logic_reg(LogicOp::kOrr, sf, rd, kZr, rm);
}
std::uint32_t mov_sp(std::uint8_t rd, std::uint8_t rn) { return add_imm(true, rd, rn, 0); }

std::uint32_t movz(bool sf, std::uint8_t rd, std::uint16_t imm16, std::uint8_t hw) {
  return move_wide(2, sf, rd, imm16, hw);
}
std::uint32_t movk(bool sf, std::uint8_t rd, std::uint16_t imm16, std::uint8_t hw) {
  return move_wide(3, sf, rd, imm16, hw);
}
std::uint32_t movn(bool sf, std::uint8_t rd, std::uint16_t imm16, std::uint8_t hw) {
  return move_wide(0, sf, rd, imm16, hw);
}

std::uint32_t ubfm(bool sf, std::uint8_t rd, std::uint8_t rn, std::uint8_t immr,
                   std::uint8_t imms) {
  return bitfield(2, sf, rd, rn, immr, imms);
}
std::uint32_t sbfm(bool sf, std::uint8_t rd, std::uint8_t rn, std::uint8_t immr,
                   std::uint8_t imms) {
  return bitfield(0, sf, rd, rn, immr, imms);
}
std::uint32_t lsl_imm(bool sf, std::uint8_t rd, std::uint8_t rn, unsigned shift) {
  const unsigned d = sf ? 64 : 32;
  shift %= d;
  return ubfm(sf, rd, rn, static_cast<std::uint8_t>((d - shift) % d),
              static_cast<std::uint8_t>(d - 1 - shift));
}
std::uint32_t lsr_imm(bool sf, std::uint8_t rd, std::uint8_t rn, unsigned shift) {
  return ubfm(sf, rd, rn, static_cast<std::uint8_t>(shift), sf ? 63 : 31);
}
std::uint32_t asr_imm(bool sf, std::uint8_t rd, std::uint8_t rn, unsigned shift) {
  return sbfm(sf, rd, rn, static_cast<std::uint8_t>(shift), sf ? 63 : 31);
}
std::uint32_t shift_reg(ShiftType type, bool sf, std::uint8_t rd, std::uint8_t rn,
                        std::uint8_t rm) {
  return dp2(sf, 0b001000u | static_cast<std::uint32_t>(type), rd, rn, rm);
}

std::uint32_t madd(bool sf, std::uint8_t rd, std::uint8_t rn, std::uint8_t rm,
                   std::uint8_t ra) {
  return sfb(sf) | 0x1B00'0000u | (r5(rm) << 16) | (r5(ra) << 10) | (r5(rn) << 5) | r5(rd);
}
std::uint32_t msub(bool sf, std::uint8_t rd, std::uint8_t rn, std::uint8_t rm,
                   std::uint8_t ra) {
  return madd(sf, rd, rn, rm, ra) | (1u << 15);
}
std::uint32_t mul(bool sf, std::uint8_t rd, std::uint8_t rn, std::uint8_t rm) {
  return madd(sf, rd, rn, rm, kZr);
}
std::uint32_t udiv(bool sf, std::uint8_t rd, std::uint8_t rn, std::uint8_t rm) {
  return dp2(sf, 0b000010u, rd, rn, rm);
}
std::uint32_t sdiv(bool sf, std::uint8_t rd, std::uint8_t rn, std::uint8_t rm) {
  return dp2(sf, 0b000011u, rd, rn, rm);
}

std::uint32_t ldr_imm(unsigned size_log2, std::uint8_t rt, std::uint8_t rn,
                      std::uint32_t offset) {
  return ls_imm(size_log2, true, rt, rn, offset);
}
std::uint32_t str_imm(unsigned size_log2, std::uint8_t rt, std::uint8_t rn,
                      std::uint32_t offset) {
  return ls_imm(size_log2, false, rt, rn, offset);
}
std::uint32_t ldr_reg(unsigned size_log2, std::uint8_t rt, std::uint8_t rn, std::uint8_t rm,
                      bool scaled) {
  return ls_reg(size_log2, true, rt, rn, rm, scaled);
}
std::uint32_t str_reg(unsigned size_log2, std::uint8_t rt, std::uint8_t rn, std::uint8_t rm,
                      bool scaled) {
  return ls_reg(size_log2, false, rt, rn, rm, scaled);
}

std::uint32_t adr(std::uint8_t rd, std::int64_t offset) {
  const auto v = static_cast<std::uint32_t>(offset & 0x1FFFFF);
  return ((v & 3u) << 29) | (0b10000u << 24) | (((v >> 2) & 0x7FFFFu) << 5) | r5(rd);
}
std::uint32_t b(std::int64_t offset) {
  return 0x1400'0000u | static_cast<std::uint32_t>((offset >> 2) & 0x3FF'FFFF);
}
std::uint32_t bl(std::int64_t offset) {
  return 0x9400'0000u | static_cast<std::uint32_t>((offset >> 2) & 0x3FF'FFFF);
}
std::uint32_t b_cond(std::uint8_t cond, std::int64_t offset) {
  return 0x5400'0000u | (imm19(offset) << 5) | (cond & 15u);
}
std::uint32_t cbz(bool sf, std::uint8_t rt, std::int64_t offset) {
  return sfb(sf) | 0x3400'0000u | (imm19(offset) << 5) | r5(rt);
}
std::uint32_t cbnz(bool sf, std::uint8_t rt, std::int64_t offset) {
  return sfb(sf) | 0x3500'0000u | (imm19(offset) << 5) | r5(rt);
}
std::uint32_t br(std::uint8_t rn) { return 0xD61F'0000u | (r5(rn) << 5); }
std::uint32_t blr(std::uint8_t rn) { return 0xD63F'0000u | (r5(rn) << 5); }
std::uint32_t ret(std::uint8_t rn) { return 0xD65F'0000u | (r5(rn) << 5); }
std::uint32_t svc(std::uint16_t imm16) {
  return 0xD400'0001u | (static_cast<std::uint32_t>(imm16) << 5);
}
std::uint32_t hvc(std::uint16_t imm16) {
  return 0xD400'0002u | (static_cast<std::uint32_t>(imm16) << 5);
}
std::uint32_t brk(std::uint16_t imm16) {
  return 0xD420'0000u | (static_cast<std::uint32_t>(imm16) << 5);
}
std::uint32_t nop() { return 0xD503'201Fu; }

}  // namespace enc

}  // namespace taforge::isa

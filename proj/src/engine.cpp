#include "taforge/engine.hpp"

#include <algorithm>
#include <cctype>
#include <cstring>
#include <istream>
#include <ostream>
#include <sstream>

#include <fmt/format.h>

#include "taforge/error.hpp"

namespace taforge {

namespace {

using isa::Insn;
using isa::Op;

constexpr std::string_view kFaultNames[] = {"OOB_READ",     "OOB_WRITE", "EXEC_NX",
                                            "UNALIGNED",    "ILLEGAL_INSN", "DIV_ZERO"};
constexpr std::string_view kEdgeNames[] = {"COND_TAKEN", "UNCOND", "CALL", "RET", "TRAP"};

constexpr std::uint8_t kN = 8, kZ = 4, kC = 2, kV = 1;

inline std::uint64_t width_mask(bool sf) { return sf ? ~0ull : 0xFFFF'FFFFull; }

inline std::int64_t sext(std::uint64_t v, unsigned bits) {
  if (bits >= 64) return static_cast<std::int64_t>(v);
  const std::uint64_t m = 1ull << (bits - 1);
  v &= (1ull << bits) - 1;
  return static_cast<std::int64_t>((v ^ m) - m);
}

// AddWithCarry from the architecture reference, for 32 or 64 bits.
inline std::uint64_t add_with_carry(std::uint64_t a, std::uint64_t b, bool carry, bool sf,
                                    std::uint8_t& flags) {
  const std::uint64_t m = width_mask(sf);
  a &= m;
  b &= m;
  std::uint64_t result;
  bool c, v;
  if (sf) {
    const unsigned __int128 u = static_cast<unsigned __int128>(a) + b + carry;
    result = static_cast<std::uint64_t>(u);
    c = (u >> 64) != 0;
    const __int128 s = static_cast<__int128>(static_cast<std::int64_t>(a)) +
                       static_cast<std::int64_t>(b) + carry;
    v = s != static_cast<std::int64_t>(result);
  } else {
    const std::uint64_t u = a + b + carry;
    result = u & m;
    c = (u >> 32) != 0;
    const std::int64_t s = sext(a, 32) + sext(b, 32) + carry;
    v = s != sext(result, 32);
  }
  const bool n = sf ? (result >> 63) : (result >> 31) & 1;
  flags = static_cast<std::uint8_t>((n ? kN : 0) | (result == 0 ? kZ : 0) | (c ? kC : 0) |
                                    (v ? kV : 0));
  return result;
}

inline std::uint64_t shift_value(std::uint64_t v, std::uint8_t type, unsigned amount, bool sf) {
  const unsigned size = sf ? 64 : 32;
  const std::uint64_t m = width_mask(sf);
  v &= m;
  amount %= size;
  if (amount == 0) return v;
  switch (static_cast<isa::ShiftType>(type)) {
    case isa::ShiftType::kLsl: return (v << amount) & m;
    case isa::ShiftType::kLsr: return v >> amount;
    case isa::ShiftType::kAsr: return static_cast<std::uint64_t>(sext(v, size) >> amount) & m;
    case isa::ShiftType::kRor: return ((v >> amount) | (v << (size - amount))) & m;
  }
  return v;
}

inline bool cond_holds(std::uint8_t cond, std::uint8_t f) {
  const bool n = f & kN, z = f & kZ, c = f & kC, v = f & kV;
  bool r;
  switch (cond >> 1) {
    case 0: r = z; break;
    case 1: r = c; break;
    case 2: r = n; break;
    case 3: r = v; break;
    case 4: r = c && !z; break;
    case 5: r = n == v; break;
    case 6: r = n == v && !z; break;
    default: return true;  // AL / NV
  }
  return (cond & 1) ? !r : r;
}

inline std::uint64_t mix(std::uint64_t h, std::uint64_t v) {
  h ^= v + 0x9E3779B97F4A7C15ull + (h << 6) + (h >> 2);
  return h;
}

void ensure_decoded(Region& r) {
  if (r.decoded) return;
  auto insns = std::make_shared<std::vector<Insn>>(r.length / 4);
  for (std::uint64_t i = 0; i < insns->size(); ++i) {
    std::uint32_t w;
    std::memcpy(&w, r.data() + i * 4, 4);
    (*insns)[i] = isa::decode(w);
  }
  r.decoded = std::move(insns);
}

}  // namespace

std::string_view to_string(FaultKind k) { return kFaultNames[static_cast<int>(k)]; }

std::optional<FaultKind> parse_fault_kind(std::string_view s) {
  for (int i = 0; i < 6; ++i)
    if (kFaultNames[i] == s) return static_cast<FaultKind>(i);
  return std::nullopt;
}

std::string_view to_string(ExitKind k) {
  switch (k) {
    case ExitKind::kReturned: return "RETURNED";
    case ExitKind::kFault: return "FAULT";
    case ExitKind::kBudgetExhausted: return "BUDGET_EXHAUSTED";
  }
  return "?";
}

std::string_view to_string(EdgeKind k) { return kEdgeNames[static_cast<int>(k)]; }

std::optional<EdgeKind> parse_edge_kind(std::string_view s) {
  for (int i = 0; i < 5; ++i)
    if (kEdgeNames[i] == s) return static_cast<EdgeKind>(i);
  return std::nullopt;
}

AddressFilter AddressFilter::code_of(const AddressSpace& vas) {
  AddressFilter f;
  for (const auto& r : vas.regions())
    if (r->perms & kPermX) f.add_range(r->base, r->end());
  return f;
}

void write_trace_text(std::ostream& out, const BranchTrace& t) {
  for (const auto& e : t.events)
    out << fmt::format("{} {} {}\n", hex(e.source), hex(e.target), to_string(e.kind));
}

void write_trace_binary(std::ostream& out, const BranchTrace& t) {
  std::uint8_t rec[17];
  for (const auto& e : t.events) {
    for (int i = 0; i < 8; ++i) {
      rec[i] = static_cast<std::uint8_t>(e.source >> (8 * i));
      rec[8 + i] = static_cast<std::uint8_t>(e.target >> (8 * i));
    }
    rec[16] = static_cast<std::uint8_t>(e.kind);
    out.write(reinterpret_cast<const char*>(rec), sizeof rec);
  }
}

BranchTrace read_trace(std::span<const std::uint8_t> bytes) {
  BranchTrace t;
  const bool text = std::all_of(bytes.begin(), bytes.end(), [](std::uint8_t c) {
    return c == '\n' || c == '\r' || c == '\t' || (c >= 0x20 && c < 0x7F);
  });
  if (text) {
    std::istringstream in(std::string(bytes.begin(), bytes.end()));
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      std::istringstream ls(line);
      std::string s, d, k;
      if (!(ls >> s)) continue;
      if (!(ls >> d >> k)) throw Error(ErrorCode::kIo, fmt::format("trace line {}: expected 3 fields", lineno));
      auto kind = parse_edge_kind(k);
      if (!kind) throw Error(ErrorCode::kIo, fmt::format("trace line {}: unknown kind {}", lineno, k));
      try {
        t.events.push_back({parse_u64(s), parse_u64(d), *kind});
      } catch (const Error&) {
        throw Error(ErrorCode::kIo, fmt::format("trace line {}: bad address", lineno));
      }
    }
    return t;
  }
  if (bytes.size() % 17 != 0) throw Error(ErrorCode::kIo, "binary trace size is not a multiple of 17");
  for (std::size_t off = 0; off < bytes.size(); off += 17) {
    BranchEvent e;
    for (int i = 0; i < 8; ++i) {
      e.source |= static_cast<std::uint64_t>(bytes[off + i]) << (8 * i);
      e.target |= static_cast<std::uint64_t>(bytes[off + 8 + i]) << (8 * i);
    }
    if (bytes[off + 16] > 4) throw Error(ErrorCode::kIo, "binary trace has an unknown edge kind");
    e.kind = static_cast<EdgeKind>(bytes[off + 16]);
    t.events.push_back(e);
  }
  return t;
}

Machine::Machine(AddressSpace& vas, Address stack_top)
    : vas_(vas), stack_top_(stack_top), mask_(address_mask(vas.width())) {
  sp = stack_top;
}

Region* Machine::data_region(Address a, unsigned width) {
  Region* r = dcache_;
  if (r && a >= r->base && a - r->base <= r->length - width) return r;
  r = vas_.find_range(a, width);
  if (r) dcache_ = r;
  return r;
}

bool Machine::load(Address a, unsigned width, std::uint64_t& out) {
  Region* r = data_region(a, width);
  if (!r || !(r->perms & kPermR)) return false;
  out = 0;
  std::memcpy(&out, r->data() + (a - r->base), width);
  return true;
}

bool Machine::store(Address a, unsigned width, std::uint64_t value) {
  Region* r = data_region(a, width);
  if (!r || !(r->perms & kPermW)) return false;
  const std::uint64_t off = a - r->base;
  std::memcpy(r->data() + off, &value, width);
  const std::uint64_t p0 = off / kPageSize, p1 = (off + width - 1) / kPageSize;
  if (!r->page_dirty[p0] || !r->page_dirty[p1]) r->mark_dirty(off, width);
  if (r->perms & kPermX) {
    r->decoded.reset();
    code_ = nullptr;
  }
  return true;
}

bool Machine::fetch(Address a, std::uint32_t& out) {
  if (a & 3) return false;
  const Region* r = vas_.find_range(a, 4);
  if (!r || !(r->perms & kPermX)) return false;
  std::memcpy(&out, r->data() + (a - r->base), 4);
  return true;
}

std::optional<Address> Machine::read_bytes(Address a, void* dst, std::uint64_t len) {
  auto* d = static_cast<std::uint8_t*>(dst);
  while (len > 0) {
    Region* r = vas_.find(a);
    if (!r || !(r->perms & kPermR)) return a;
    const std::uint64_t n = std::min<std::uint64_t>(len, r->end() - a);
    std::memcpy(d, r->data() + (a - r->base), n);
    a += n;
    d += n;
    len -= n;
  }
  return std::nullopt;
}

std::optional<Address> Machine::write_bytes(Address a, const void* src, std::uint64_t len) {
  // Check the whole range first so a failing write leaves memory untouched.
  for (Address p = a, left = len; left > 0;) {
    const Region* r = vas_.find(p);
    if (!r || !(r->perms & kPermW)) return p;
    const std::uint64_t n = std::min<std::uint64_t>(left, r->end() - p);
    p += n;
    left -= n;
  }
  const auto* s = static_cast<const std::uint8_t*>(src);
  while (len > 0) {
    Region* r = vas_.find(a);
    const std::uint64_t n = std::min<std::uint64_t>(len, r->end() - a);
    std::memcpy(r->data() + (a - r->base), s, n);
    r->mark_dirty(a - r->base, n);
    if (r->perms & kPermX) r->decoded.reset();
    a += n;
    s += n;
    len -= n;
  }
  code_ = nullptr;
  return std::nullopt;
}

MachineSnapshot Machine::snapshot() {
  MachineSnapshot s;
  s.x = x;
  s.sp = sp;
  s.pc = pc;
  s.nzcv = nzcv;
  s.instret = instret;
  s.vas = vas_.snapshot();
  return s;
}

void Machine::restore(const MachineSnapshot& s) {
  vas_.restore(s.vas);
  invalidate_caches();
  x = s.x;
  sp = s.sp;
  pc = s.pc;
  nzcv = s.nzcv;
  instret = s.instret;
}

std::uint64_t Machine::state_hash() const {
  std::uint64_t h = 0x84222325CBF29CE4ull;
  for (auto v : x) h = mix(h, v);
  h = mix(h, sp);
  h = mix(h, nzcv);
  return mix(h, vas_.content_hash());
}

ExitStatus Machine::call(Address fn, std::span<const std::uint64_t> args, std::uint64_t budget,
                         BranchTrace* trace, const AddressFilter* filter, TrapHandler* traps) {
  const std::uint64_t m = mask_;
  for (std::size_t i = 0; i < 8; ++i) x[i] = i < args.size() ? args[i] & m : 0;
  x[isa::kLr] = kReturnSentinel;
  sp = stack_top_ & m;
  pc = fn & m;
  invalidate_caches();

  auto record = [&](Address s, Address t, EdgeKind k) {
    if (trace && (!filter || (filter->admit(s) && filter->admit(t)))) trace->events.push_back({s, t, k});
  };
  auto fault = [&](FaultKind k, std::optional<Address> addr = std::nullopt) {
    return ExitStatus{ExitKind::kFault, 0, Fault{k, pc, addr}};
  };
  auto rd_reg = [&](std::uint8_t r) -> std::uint64_t { return r == 31 ? 0 : x[r]; };
  auto rd_sp = [&](std::uint8_t r) -> std::uint64_t { return r == 31 ? sp : x[r]; };
  auto wr_reg = [&](std::uint8_t r, std::uint64_t v, bool sf) {
    if (r != 31) x[r] = v & width_mask(sf) & m;
  };
  auto wr_sp = [&](std::uint8_t r, std::uint64_t v, bool sf) {
    if (r == 31)
      sp = v & width_mask(sf) & m;
    else
      x[r] = v & width_mask(sf) & m;
  };

  record(kReturnSentinel, pc, EdgeKind::kCall);

  Address code_base = 0, code_end = 0;
  const Insn* insns = nullptr;
  std::uint64_t executed = 0;

  while (true) {
    if (pc == kReturnSentinel) return ExitStatus{ExitKind::kReturned, x[0], std::nullopt};
    if (executed >= budget) return ExitStatus{ExitKind::kBudgetExhausted, 0, std::nullopt};
    if (pc & 3) return fault(FaultKind::kUnaligned, pc);
    if (!code_ || pc < code_base || pc >= code_end) {
      Region* r = vas_.find(pc);
      if (!r || !(r->perms & kPermX)) return fault(FaultKind::kExecNx, pc);
      ensure_decoded(*r);
      code_ = r;
      code_insns_ = r->decoded;
      code_base = r->base;
      code_end = r->base + (r->length & ~3ull);
    }
    insns = code_insns_->data();
    const Insn& in = insns[(pc - code_base) >> 2];
    ++executed;
    ++instret;
    Address next = pc + 4;

    switch (in.op) {
      case Op::kAddImm: {
        const std::uint64_t a = rd_sp(in.rn);
        std::uint64_t b = static_cast<std::uint64_t>(in.imm);
        std::uint8_t f;
        const std::uint64_t r = in.sub ? add_with_carry(a, ~b, true, in.sf, f)
                                       : add_with_carry(a, b, false, in.sf, f);
        if (in.set_flags) {
          nzcv = f;
          wr_reg(in.rd, r, in.sf);
        } else {
          wr_sp(in.rd, r, in.sf);
        }
        break;
      }
      case Op::kAddReg: {
        const std::uint64_t a = rd_reg(in.rn);
        const std::uint64_t b = shift_value(rd_reg(in.rm), in.cond, in.amount, in.sf);
        std::uint8_t f;
        const std::uint64_t r = in.sub ? add_with_carry(a, ~b, true, in.sf, f)
                                       : add_with_carry(a, b, false, in.sf, f);
        if (in.set_flags) nzcv = f;
        wr_reg(in.rd, r, in.sf);
        break;
      }
      case Op::kLogicReg:
      case Op::kLogicImm: {
        const std::uint64_t a = rd_reg(in.rn) & width_mask(in.sf);
        const std::uint64_t b = in.op == Op::kLogicReg
                                    ? shift_value(rd_reg(in.rm), in.cond, in.amount, in.sf)
                                    : static_cast<std::uint64_t>(in.imm) & width_mask(in.sf);
        std::uint64_t r = 0;
        switch (static_cast<isa::LogicOp>(in.shift)) {
          case isa::LogicOp::kAnd:
          case isa::LogicOp::kAnds: r = a & b; break;
          case isa::LogicOp::kOrr: r = a | b; break;
          case isa::LogicOp::kEor: r = a ^ b; break;
        }
        if (in.set_flags) {
          const bool n = in.sf ? (r >> 63) : (r >> 31) & 1;
          nzcv = static_cast<std::uint8_t>((n ? kN : 0) | (r == 0 ? kZ : 0));
          wr_reg(in.rd, r, in.sf);
        } else if (in.op == Op::kLogicImm) {
          wr_sp(in.rd, r, in.sf);
        } else {
          wr_reg(in.rd, r, in.sf);
        }
        break;
      }
      case Op::kMovWide: {
        const std::uint64_t imm = static_cast<std::uint64_t>(in.imm) << in.amount;
        std::uint64_t r;
        switch (static_cast<isa::MoveOp>(in.shift)) {
          case isa::MoveOp::kMovn: r = ~imm; break;
          case isa::MoveOp::kMovz: r = imm; break;
          default: r = (rd_reg(in.rd) & ~(0xFFFFull << in.amount)) | imm; break;
        }
        wr_reg(in.rd, r, in.sf);
        break;
      }
      case Op::kBitfield: {
        const unsigned size = in.sf ? 64 : 32;
        const std::uint64_t src = rd_reg(in.rn) & width_mask(in.sf);
        const unsigned r = in.immr, s = in.imms;
        std::uint64_t out;
        unsigned top;  // highest bit of the placed field
        if (s >= r) {
          const unsigned len = s - r + 1;
          out = (src >> r) & (len >= 64 ? ~0ull : (1ull << len) - 1);
          top = len - 1;
        } else {
          const unsigned len = s + 1;
          out = (src & ((1ull << len) - 1)) << (size - r);
          top = size - r + s;
        }
        if (in.is_signed) out = static_cast<std::uint64_t>(sext(out, top + 1));
        wr_reg(in.rd, out, in.sf);
        break;
      }
      case Op::kShiftReg: {
        const unsigned size = in.sf ? 64 : 32;
        const auto amt = static_cast<unsigned>(rd_reg(in.rm) % size);
        wr_reg(in.rd, shift_value(rd_reg(in.rn), in.shift, amt, in.sf), in.sf);
        break;
      }
      case Op::kDiv: {
        const std::uint64_t wm = width_mask(in.sf);
        const std::uint64_t a = rd_reg(in.rn) & wm, b = rd_reg(in.rm) & wm;
        if (b == 0) return fault(FaultKind::kDivZero);
        std::uint64_t r;
        if (in.is_signed) {
          const unsigned size = in.sf ? 64 : 32;
          const std::int64_t sa = sext(a, size), sb = sext(b, size);
          r = (sb == -1) ? static_cast<std::uint64_t>(0) - static_cast<std::uint64_t>(sa)
                         : static_cast<std::uint64_t>(sa / sb);
        } else {
          r = a / b;
        }
        wr_reg(in.rd, r, in.sf);
        break;
      }
      case Op::kMulAdd: {
        const std::uint64_t p = rd_reg(in.rn) * rd_reg(in.rm);
        const std::uint64_t acc = rd_reg(in.ra);
        wr_reg(in.rd, in.is_signed ? acc - p : acc + p, in.sf);
        break;
      }
      case Op::kLoadStore:
      case Op::kLoadStoreReg: {
        Address addr = rd_sp(in.rn);
        if (in.op == Op::kLoadStore) {
          addr += static_cast<std::uint64_t>(in.imm);
        } else {
          std::uint64_t off = rd_reg(in.rm);
          switch (static_cast<isa::Extend>(in.shift)) {
            case isa::Extend::kUxtw: off &= 0xFFFF'FFFFull; break;
            case isa::Extend::kSxtw: off = static_cast<std::uint64_t>(sext(off, 32)); break;
            default: break;
          }
          addr += off << in.amount;
        }
        addr &= m;
        const unsigned width = 1u << in.size_log2;
        if (in.is_load) {
          std::uint64_t v;
          if (!load(addr, width, v)) return fault(FaultKind::kOobRead, addr);
          wr_reg(in.rd, v, true);
        } else {
          if (!store(addr, width, rd_reg(in.rd))) return fault(FaultKind::kOobWrite, addr);
        }
        break;
      }
      case Op::kAdr:
        wr_reg(in.rd, pc + static_cast<std::uint64_t>(in.imm), true);
        break;
      case Op::kB:
        next = (pc + static_cast<std::uint64_t>(in.imm)) & m;
        record(pc, next, EdgeKind::kUncond);
        break;
      case Op::kBl:
        next = (pc + static_cast<std::uint64_t>(in.imm)) & m;
        x[isa::kLr] = (pc + 4) & m;
        record(pc, next, EdgeKind::kCall);
        break;
      case Op::kBCond:
        if (cond_holds(in.cond, nzcv)) {
          next = (pc + static_cast<std::uint64_t>(in.imm)) & m;
          record(pc, next, EdgeKind::kCondTaken);
        }
        break;
      case Op::kCbz: {
        const bool zero = (rd_reg(in.rd) & width_mask(in.sf)) == 0;
        if (zero != in.nonzero) {
          next = (pc + static_cast<std::uint64_t>(in.imm)) & m;
          record(pc, next, EdgeKind::kCondTaken);
        }
        break;
      }
      case Op::kBr:
        next = rd_reg(in.rn) & m;
        record(pc, next, EdgeKind::kUncond);
        break;
      case Op::kBlr:
        next = rd_reg(in.rn) & m;
        x[isa::kLr] = (pc + 4) & m;
        record(pc, next, EdgeKind::kCall);
        break;
      case Op::kRet:
        next = rd_reg(in.rn) & m;
        record(pc, next, EdgeKind::kRet);
        break;
      case Op::kSvc: {
        if (!traps) return fault(FaultKind::kIllegalInsn);
        record(pc, pc + 4, EdgeKind::kTrap);
        auto f = traps->on_svc(*this, pc, static_cast<std::uint16_t>(in.imm));
        invalidate_caches();
        if (f) return ExitStatus{ExitKind::kFault, 0, f};
        break;
      }
      case Op::kHvc: {
        if (!traps) return fault(FaultKind::kIllegalInsn);
        auto f = traps->on_hostcall(*this, pc, static_cast<std::uint16_t>(in.imm));
        invalidate_caches();
        if (f) return ExitStatus{ExitKind::kFault, 0, f};
        break;
      }
      case Op::kNop:
        break;
      case Op::kBrk:
      case Op::kInvalid:
        return fault(FaultKind::kIllegalInsn);
    }
    pc = next;
  }
}

AccessOutcome mem_access(Machine& m, Address addr, unsigned width, AccessKind kind,
                         std::uint64_t value) {
  AccessOutcome out;
  switch (kind) {
    case AccessKind::kRead: {
      std::uint64_t v;
      if (m.load(addr, width, v))
        out.value = v;
      else
        out.fault = FaultKind::kOobRead;
      break;
    }
    case AccessKind::kWrite:
      if (m.store(addr, width, value))
        out.value = 0;
      else
        out.fault = FaultKind::kOobWrite;
      break;
    case AccessKind::kFetch: {
      std::uint32_t w;
      if (width != 4 || (addr & 3)) {
        out.fault = FaultKind::kUnaligned;
      } else if (m.fetch(addr, w)) {
        out.value = w;
      } else {
        out.fault = FaultKind::kExecNx;
      }
      break;
    }
  }
  return out;
}

}  // namespace taforge

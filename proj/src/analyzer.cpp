#include "taforge/analyzer.hpp"

#include <algorithm>
#include <cstring>
#include <deque>
#include <functional>
#include <sstream>
#include <unordered_map>

#include <fmt/format.h>

#include "taforge/error.hpp"

namespace taforge::analysis {

using isa::Op;

std::string_view to_string(CfgEdgeKind k) {
  switch (k) {
    case CfgEdgeKind::kFallthrough: return "FALLTHROUGH";
    case CfgEdgeKind::kCond: return "COND";
    case CfgEdgeKind::kUncond: return "UNCOND";
    case CfgEdgeKind::kCall: return "CALL";
    case CfgEdgeKind::kRet: return "RET";
    case CfgEdgeKind::kIndirect: return "INDIRECT";
  }
  return "?";
}

std::string_view to_string(Terminator t) {
  switch (t) {
    case Terminator::kNone: return "none";
    case Terminator::kBranch: return "b";
    case Terminator::kCall: return "bl";
    case Terminator::kCond: return "cond";
    case Terminator::kTable: return "table";
    case Terminator::kPlt: return "plt";
    case Terminator::kIndirect: return "indirect";
    case Terminator::kCallIndirect: return "blr";
    case Terminator::kRet: return "ret";
    case Terminator::kStop: return "stop";
  }
  return "?";
}

std::string_view to_string(DepKind k) { return k == DepKind::kDeviceFd ? "DEVICE_FD" : "CONTEXT_MEMORY"; }
std::string_view to_string(BranchLabel l) { return l == BranchLabel::kSimple ? "SIMPLE" : "COMPLEX"; }

const Block* Cfg::block_at(Address start) const {
  auto it = blocks.find(start);
  return it == blocks.end() ? nullptr : &it->second;
}

const Block* Cfg::block_containing(Address pc) const {
  auto it = blocks.upper_bound(pc);
  if (it == blocks.begin()) return nullptr;
  --it;
  return pc < it->second.end ? &it->second : nullptr;
}

std::vector<CfgEdge> Cfg::successors(Address block) const {
  std::vector<CfgEdge> out;
  for (auto it = edges.lower_bound({block, 0, CfgEdgeKind::kFallthrough}); it != edges.end() && it->src == block; ++it)
    out.push_back(*it);
  return out;
}

std::size_t Cfg::incomplete_blocks() const {
  return static_cast<std::size_t>(
      std::count_if(blocks.begin(), blocks.end(), [](const auto& kv) { return kv.second.incomplete; }));
}

std::vector<std::uint64_t> CommandIdSet::values() const {
  std::vector<std::uint64_t> out;
  for (const auto& c : ids) out.push_back(c.value);
  return out;
}

const CommandId* CommandIdSet::find(std::uint64_t value) const {
  for (const auto& c : ids)
    if (c.value == value) return &c;
  return nullptr;
}

const std::vector<std::uint64_t>& StateModel::canonical(std::uint64_t cmd) const {
  static const std::vector<std::uint64_t> kEmpty;
  auto it = prefixes.find(cmd);
  return it == prefixes.end() || it->second.empty() ? kEmpty : it->second.front();
}

// ---------------------------------------------------------------------------
// CFG recovery

namespace {

struct Site {
  Address pc = 0;
  std::uint32_t word = 0;
  isa::Insn insn;
  Terminator term = Terminator::kNone;
  std::optional<Address> target;  // direct target
  std::vector<Address> table;
  std::optional<Address> table_default;
  std::optional<Address> external;
  bool incomplete = false;
};

Terminator terminator_of(const isa::Insn& in) {
  switch (in.op) {
    case Op::kB: return Terminator::kBranch;
    case Op::kBl: return Terminator::kCall;
    case Op::kBCond:
    case Op::kCbz: return Terminator::kCond;
    case Op::kBr: return Terminator::kIndirect;
    case Op::kBlr: return Terminator::kCallIndirect;
    case Op::kRet: return Terminator::kRet;
    case Op::kBrk:
    case Op::kInvalid: return Terminator::kStop;
    default: return Terminator::kNone;
  }
}

bool is_cmp_imm_on(const isa::Insn& in, std::uint8_t reg) {
  return in.op == Op::kAddImm && in.sub && in.set_flags && in.rd == isa::kZr && in.rn == reg;
}

// Jump table idiom: [sub] / cmp idx,#n / b.hi default / adr t,table /
// ldr r,[t,idx,lsl #s] / br r. PLT idiom: adr r,slot / ldr r,[r,#o] / br r.
void resolve_indirect(std::vector<Site>& sites, std::size_t i, const AddressSpace& vas) {
  Site& br = sites[i];
  const std::uint8_t r = br.insn.rn;
  auto contiguous = [&](std::size_t k) { return k < i && sites[i].pc - sites[k].pc == 4 * (i - k); };
  if (i >= 2 && contiguous(i - 2)) {
    const auto& ld = sites[i - 1].insn;
    const auto& ad = sites[i - 2].insn;
    if (ld.op == Op::kLoadStoreReg && ld.is_load && ld.rd == r && ad.op == Op::kAdr && ad.rd == ld.rn &&
        ld.amount == ld.size_log2) {
      const Address table = sites[i - 2].pc + static_cast<Address>(ad.imm);
      for (std::size_t back = 3; back <= 8 && back <= i && contiguous(i - back); ++back) {
        const auto& bc = sites[i - back];
        if (bc.insn.op != Op::kBCond || back + 1 > i) continue;
        const auto& cmp = sites[i - back - 1].insn;
        if (!is_cmp_imm_on(cmp, ld.rm)) break;
        std::uint64_t count = 0;
        if (bc.insn.cond == isa::kHi) count = static_cast<std::uint64_t>(cmp.imm) + 1;
        else if (bc.insn.cond == isa::kCs) count = static_cast<std::uint64_t>(cmp.imm);
        else break;
        if (count == 0 || count > 4096) break;
        const unsigned w = 1u << ld.size_log2;
        std::vector<Address> targets;
        try {
          for (std::uint64_t k = 0; k < count; ++k)
            targets.push_back(vas.peek_word(table + k * w, w) & address_mask(vas.width()));
        } catch (const Error&) {
          break;
        }
        br.term = Terminator::kTable;
        br.table = std::move(targets);
        br.table_default = bc.target;
        return;
      }
    }
    if (ld.op == Op::kLoadStore && ld.is_load && ld.rd == r && ld.rn == r && ad.op == Op::kAdr && ad.rd == r) {
      const Address slot = sites[i - 2].pc + static_cast<Address>(ad.imm) + static_cast<Address>(ld.imm);
      try {
        br.external = vas.peek_word(slot, 1u << ld.size_log2) & address_mask(vas.width());
        br.term = Terminator::kPlt;
        return;
      } catch (const Error&) {
      }
    }
  }
  br.incomplete = true;
}

}  // namespace

Cfg recover_cfg(const LoadedImage& image) {
  Cfg cfg;
  cfg.width = image.word_width;
  const AddressSpace& vas = image.vas;
  std::vector<Site> sites;
  std::vector<std::size_t> region_starts;
  for (const auto& r : vas.regions()) {
    if (!(r->perms & kPermX) || r->kind == RegionKind::kTrampoline || !image.in_image(r->base)) continue;
    std::size_t n = r->length / 4;
    const std::uint8_t* d = r->data();
    auto word_at = [&](std::size_t k) {
      std::uint32_t w;
      std::memcpy(&w, d + 4 * k, 4);
      return w;
    };
    while (n > 0 && word_at(n - 1) == 0) --n;  // zero fill after the segment
    region_starts.push_back(sites.size());
    for (std::size_t k = 0; k < n; ++k) {
      Site s;
      s.pc = r->base + 4 * k;
      s.word = word_at(k);
      s.insn = isa::decode(s.word);
      s.term = terminator_of(s.insn);
      if (auto t = isa::direct_target(s.insn, s.pc)) s.target = *t & address_mask(vas.width());
      sites.push_back(std::move(s));
    }
  }
  for (std::size_t i = 0; i < sites.size(); ++i)
    if (sites[i].insn.op == Op::kBr) resolve_indirect(sites, i, vas);

  std::unordered_map<Address, std::size_t> index;
  for (std::size_t i = 0; i < sites.size(); ++i) index[sites[i].pc] = i;
  auto index_of = [&](std::optional<Address> a) -> std::optional<std::size_t> {
    if (!a) return std::nullopt;
    auto it = index.find(*a);
    return it == index.end() ? std::nullopt : std::optional(it->second);
  };

  const std::size_t n = sites.size();
  std::set<std::size_t> leaders(region_starts.begin(), region_starts.end());
  for (std::size_t i = 0; i < n; ++i) {
    const Site& s = sites[i];
    if (s.term == Terminator::kNone) continue;
    if (i + 1 < n) leaders.insert(i + 1);
    if (auto t = index_of(s.target)) leaders.insert(*t);
    for (Address a : s.table)
      if (auto t = index_of(a)) leaders.insert(*t);
  }
  for (auto it = leaders.begin(); it != leaders.end(); ++it) {
    const std::size_t start = *it;
    const std::size_t end = std::next(it) == leaders.end() ? n : *std::next(it);
    Block b;
    b.start = sites[start].pc;
    for (std::size_t k = start; k < end; ++k) {
      // A region boundary inside the range still ends the block.
      if (k > start && sites[k].pc != sites[k - 1].pc + 4) break;
      b.words.push_back(sites[k].word);
      b.insns.push_back(sites[k].insn);
      b.end = sites[k].pc + 4;
    }
    const Site& last = sites[start + b.insns.size() - 1];
    b.term = last.term;
    b.incomplete = last.incomplete;
    b.table_targets = last.table;
    b.table_default = last.table_default;
    b.external_target = last.external;
    cfg.blocks.emplace(b.start, std::move(b));
  }

  std::map<Address, std::vector<std::pair<Address, CfgEdgeKind>>> succ;
  std::map<Address, std::vector<Address>> callers;  // callee block -> call pc
  auto add = [&](Address src, Address dst, CfgEdgeKind k) {
    if (!cfg.blocks.count(dst)) return;
    if (cfg.edges.insert({src, dst, k}).second && k != CfgEdgeKind::kCall) succ[src].push_back({dst, k});
  };
  for (const auto& [start, b] : cfg.blocks) {
    const Site& last = sites[index.at(b.last_pc())];
    switch (b.term) {
      case Terminator::kNone:
        add(start, b.end, CfgEdgeKind::kFallthrough);
        break;
      case Terminator::kBranch:
        if (last.target) add(start, *last.target, CfgEdgeKind::kUncond);
        break;
      case Terminator::kCall:
        if (last.target && cfg.blocks.count(*last.target)) {
          add(start, *last.target, CfgEdgeKind::kCall);
          callers[*last.target].push_back(last.pc);
        }
        add(start, b.end, CfgEdgeKind::kFallthrough);
        break;
      case Terminator::kCallIndirect:
        add(start, b.end, CfgEdgeKind::kFallthrough);
        break;
      case Terminator::kCond:
        if (last.target) add(start, *last.target, CfgEdgeKind::kCond);
        add(start, b.end, CfgEdgeKind::kFallthrough);
        break;
      case Terminator::kTable:
        for (Address t : b.table_targets) add(start, t, CfgEdgeKind::kIndirect);
        break;
      default:
        break;
    }
  }
  auto reach = [&](Address entry) {
    std::set<Address> seen{entry};
    std::vector<Address> work{entry};
    while (!work.empty()) {
      const Address a = work.back();
      work.pop_back();
      for (const auto& [dst, k] : succ[a])
        if (seen.insert(dst).second) work.push_back(dst);
    }
    return seen;
  };
  for (const auto& [callee, call_sites] : callers) {
    for (Address blk : reach(callee)) {
      if (cfg.blocks.at(blk).term != Terminator::kRet) continue;
      for (Address site : call_sites)
        if (cfg.blocks.count(site + 4)) cfg.edges.insert({blk, site + 4, CfgEdgeKind::kRet});
    }
  }

  std::set<Address> entries;
  for (const auto& [role, a] : image.entrypoints)
    if (cfg.blocks.count(a)) entries.insert(a);
  if (!image.objects.empty())
    for (const auto& [sym, a] : image.main().exports)
      if (cfg.blocks.count(a)) entries.insert(a);
  for (const auto& [callee, _] : callers) entries.insert(callee);
  for (Address e : entries) cfg.functions[e] = reach(e);
  return cfg;
}

// ---------------------------------------------------------------------------
// Abstract interpretation over one function.

namespace {

struct Val {
  enum Kind : std::uint8_t { kTop, kConst, kSp, kCmd, kArg, kFd, kMemAt };
  Kind k = kTop;
  std::uint64_t v = 0;  // constant, SP offset, command delta, argument offset
  std::uint32_t tag = 0;  // argument index, location id, open site
  bool mem = false;       // derived from a load through a non-stack pointer

  bool same(const Val& o) const { return k == o.k && v == o.v && tag == o.tag; }
  bool operator==(const Val&) const = default;

  static Val constant(std::uint64_t c) { return {kConst, c}; }
  static Val top(bool mem = false) {
    Val r;
    r.mem = mem;
    return r;
  }
};

Val join(const Val& a, const Val& b) {
  if (a.same(b)) {
    Val r = a;
    r.mem = a.mem || b.mem;
    return r;
  }
  return Val::top(a.mem || b.mem);
}

struct Slot {
  std::uint64_t size = 0;
  Val val;
  bool operator==(const Slot&) const = default;
};

struct State {
  std::array<Val, 32> r{};  // r[31] is SP
  std::map<std::int64_t, Slot> stack;
  Val fa, fb;  // operands of the last flag-setting instruction
  bool f64 = true;

  bool operator==(const State&) const = default;
};

State join(const State& a, const State& b) {
  State s;
  for (int i = 0; i < 32; ++i) s.r[i] = join(a.r[i], b.r[i]);
  for (const auto& [off, slot] : a.stack) {
    auto it = b.stack.find(off);
    if (it != b.stack.end() && it->second.size == slot.size) s.stack[off] = {slot.size, join(slot.val, it->second.val)};
    else s.stack[off] = {slot.size, Val::top(slot.val.mem)};
  }
  for (const auto& [off, slot] : b.stack)
    if (!a.stack.count(off)) s.stack[off] = {slot.size, Val::top(slot.val.mem)};
  s.fa = join(a.fa, b.fa);
  s.fb = join(a.fb, b.fb);
  s.f64 = a.f64 && b.f64;
  return s;
}

void clobber_call(State& s) {
  for (int i = 0; i <= 18; ++i) s.r[i] = Val::top();
  s.r[30] = Val::top();
  s.fa = s.fb = Val::top();
}

void drop_stack_range(State& s, std::int64_t off, std::uint64_t size) {
  for (auto it = s.stack.begin(); it != s.stack.end();) {
    const std::int64_t a = it->first, e = a + static_cast<std::int64_t>(it->second.size);
    if (a < off + static_cast<std::int64_t>(size) && off < e) it = s.stack.erase(it);
    else ++it;
  }
}

// Follows a call target through stubs to the svc it ends in.
class HelperResolver {
 public:
  HelperResolver(const LoadedImage& image, const SyscallTable& table) : image_(image), table_(table) {}

  std::optional<Handler> resolve(Address target) {
    if (auto it = cache_.find(target); it != cache_.end()) return it->second;
    return cache_[target] = walk(target);
  }

 private:
  std::optional<Handler> walk(Address pc) {
    const AddressSpace& vas = image_.vas;
    const std::uint64_t mask = address_mask(vas.width());
    std::map<std::uint8_t, std::uint64_t> c;
    try {
      for (int step = 0; step < 64; ++step) {
        const Region* r = vas.find(pc);
        if (!r || !(r->perms & kPermX)) return std::nullopt;
        const auto in = isa::decode(static_cast<std::uint32_t>(vas.peek_word(pc, 4)));
        switch (in.op) {
          case Op::kMovWide: {
            const std::uint64_t part = static_cast<std::uint64_t>(in.imm) << in.amount;
            const auto mop = static_cast<isa::MoveOp>(in.shift);
            if (mop == isa::MoveOp::kMovz) c[in.rd] = part;
            else if (mop == isa::MoveOp::kMovn) c[in.rd] = ~part;
            else if (c.count(in.rd)) c[in.rd] = (c[in.rd] & ~(0xFFFFull << in.amount)) | part;
            if (!in.sf && c.count(in.rd)) c[in.rd] &= 0xFFFF'FFFFull;
            break;
          }
          case Op::kAdr: c[in.rd] = (pc + static_cast<std::uint64_t>(in.imm)) & mask; break;
          case Op::kLoadStore:
            if (in.is_load) {
              if (!c.count(in.rn)) return std::nullopt;
              c[in.rd] = vas.peek_word((c[in.rn] + static_cast<std::uint64_t>(in.imm)) & mask, 1u << in.size_log2);
            }
            break;
          case Op::kB: pc = *isa::direct_target(in, pc) & mask; continue;
          case Op::kBr:
            if (!c.count(in.rn)) return std::nullopt;
            pc = c[in.rn] & mask;
            continue;
          case Op::kSvc: {
            std::uint64_t number = static_cast<std::uint64_t>(in.imm);
            if (table_.number_source == NumberSource::kRegister) {
              if (!c.count(table_.number_register)) return std::nullopt;
              number = c[table_.number_register];
            }
            return table_.lookup(number);
          }
          case Op::kNop: break;
          default:
            if (terminator_of(in) != Terminator::kNone) return std::nullopt;
            c.erase(in.rd);
            break;
        }
        pc += 4;
      }
    } catch (const Error&) {
    }
    return std::nullopt;
  }

  const LoadedImage& image_;
  const SyscallTable& table_;
  std::map<Address, std::optional<Handler>> cache_;
};

// Shared semantics for helper calls and memory; subclasses observe.
class Hooks {
 public:
  Hooks(const LoadedImage& image, const TzosProfile& profile)
      : image(image), resolver(image, syscall_table(profile.syscall_table_id)) {}
  virtual ~Hooks() = default;

  virtual void on_insn(const Block&, std::size_t, const State&) {}
  virtual void on_store(Address, const Val&, const Val&) {}
  virtual void on_helper(Address, Handler, const State&) {}

  // Returns false for calls that are not recognized helpers.
  bool on_call(Address pc, Address target, State& s) {
    const auto h = resolver.resolve(target);
    if (!h) return false;
    if (recording) on_helper(pc, *h, s);
    Val ret = Val::top();
    switch (*h) {
      case Handler::kMemMove: {
        const Val dst = s.r[0], len = s.r[2];
        if (dst.k == Val::kSp && len.k == Val::kConst && len.v <= 4096) {
          const auto off = static_cast<std::int64_t>(dst.v);
          drop_stack_range(s, off, len.v);
          s.stack[off] = {len.v, Val::top(true)};
        }
        ret = dst;
        break;
      }
      case Handler::kOpen:
        ret = {Val::kFd, pc};
        break;
      default:
        break;
    }
    clobber_call(s);
    s.r[0] = ret;
    return true;
  }

  std::uint32_t location(const Val& addr) {
    const auto key = std::make_tuple(static_cast<int>(addr.k), addr.v, addr.tag);
    auto it = loc_ids.find(key);
    if (it != loc_ids.end()) return it->second;
    locations.push_back(addr);
    return loc_ids[key] = static_cast<std::uint32_t>(locations.size() - 1);
  }

  const LoadedImage& image;
  HelperResolver resolver;
  bool recording = false;
  std::vector<Val> locations;
  std::map<std::tuple<int, std::uint64_t, std::uint32_t>, std::uint32_t> loc_ids;
};

class Interp {
 public:
  Interp(const Cfg& cfg, Hooks& hooks) : cfg_(cfg), hooks_(hooks), mask_(address_mask(cfg.width)) {}

  // Runs to a fixpoint from `entry`, then replays every reached block once
  // with recording enabled.
  void run(Address entry, const State& init) {
    std::map<Address, State> in;
    std::map<Address, int> visits;
    std::set<Address> work{entry};
    in[entry] = init;
    hooks_.recording = false;
    while (!work.empty()) {
      const Address a = *work.begin();
      work.erase(work.begin());
      const Block* b = cfg_.block_at(a);
      if (!b) continue;
      State s = in[a];
      transfer_block(*b, s);
      for (const auto& e : cfg_.successors(a)) {
        if (e.kind == CfgEdgeKind::kCall || e.kind == CfgEdgeKind::kRet) continue;
        auto it = in.find(e.dst);
        if (it == in.end()) {
          in[e.dst] = s;
          work.insert(e.dst);
        } else {
          State j = join(it->second, s);
          if (++visits[e.dst] > 64) j = widen(j);
          if (!(j == it->second)) {
            it->second = std::move(j);
            work.insert(e.dst);
          }
        }
      }
    }
    hooks_.recording = true;
    for (auto& [a, s] : in) {
      const Block* b = cfg_.block_at(a);
      if (!b) continue;
      State st = s;
      transfer_block(*b, st);
    }
    hooks_.recording = false;
  }

 private:
  static State widen(State s) {
    for (auto& v : s.r)
      if (v.k == Val::kConst || v.k == Val::kCmd || v.k == Val::kArg) v = Val::top(v.mem);
    return s;
  }

  Val reg(const State& s, std::uint8_t n, bool sp_form) const {
    if (n == 31) return sp_form ? s.r[31] : Val::constant(0);
    return s.r[n];
  }

  void write(State& s, std::uint8_t n, Val v, bool sp_form, bool sf) {
    if (n == 31 && !sp_form) return;
    if (v.k == Val::kConst) v.v &= sf ? ~0ull : 0xFFFF'FFFFull;
    s.r[n] = v;
  }

  static Val add_const(Val a, std::int64_t d, bool sf) {
    switch (a.k) {
      case Val::kConst:
        a.v = (a.v + static_cast<std::uint64_t>(d)) & (sf ? ~0ull : 0xFFFF'FFFFull);
        return a;
      case Val::kSp:
      case Val::kCmd:
      case Val::kArg:
        a.v += static_cast<std::uint64_t>(d);
        return a;
      default:
        return Val::top(a.mem);
    }
  }

  static std::uint64_t shifted(std::uint64_t v, std::uint8_t type, std::uint8_t amount, bool sf) {
    const std::uint64_t m = sf ? ~0ull : 0xFFFF'FFFFull;
    v &= m;
    switch (static_cast<isa::ShiftType>(type)) {
      case isa::ShiftType::kLsl: return (v << amount) & m;
      case isa::ShiftType::kLsr: return v >> amount;
      default: return v;
    }
  }

  void transfer_block(const Block& b, State& s) {
    for (std::size_t i = 0; i < b.insns.size(); ++i) {
      if (hooks_.recording) hooks_.on_insn(b, i, s);
      step(b.start + 4 * i, b.insns[i], s);
    }
  }

  void step(Address pc, const isa::Insn& in, State& s) {
    switch (in.op) {
      case Op::kAddImm: {
        const Val a = reg(s, in.rn, true);
        const Val r = add_const(a, in.sub ? -in.imm : in.imm, in.sf);
        if (in.set_flags) {
          s.fa = a;
          s.fb = Val::constant(static_cast<std::uint64_t>(in.imm));
          s.f64 = in.sf;
        }
        write(s, in.rd, r, !in.set_flags, in.sf);
        break;
      }
      case Op::kAddReg: {
        const Val a = reg(s, in.rn, false);
        Val b = reg(s, in.rm, false);
        if (in.amount) b = b.k == Val::kConst ? Val{Val::kConst, shifted(b.v, in.cond, in.amount, in.sf), 0, b.mem}
                                              : Val::top(b.mem);
        Val r = Val::top(a.mem || b.mem);
        if (b.k == Val::kConst) r = add_const(a, in.sub ? -static_cast<std::int64_t>(b.v) : static_cast<std::int64_t>(b.v), in.sf);
        else if (a.k == Val::kConst && !in.sub) r = add_const(b, static_cast<std::int64_t>(a.v), in.sf);
        r.mem = a.mem || b.mem;
        if (in.set_flags) {
          s.fa = a;
          s.fb = b;
          s.f64 = in.sf;
        }
        write(s, in.rd, r, false, in.sf);
        break;
      }
      case Op::kLogicReg: {
        const Val a = reg(s, in.rn, false), b = reg(s, in.rm, false);
        const auto lop = static_cast<isa::LogicOp>(in.shift);
        Val r = Val::top(a.mem || b.mem);
        if (lop == isa::LogicOp::kOrr && in.rn == isa::kZr && in.amount == 0) {
          r = b;
          if (!in.sf && r.k == Val::kSp) r = Val::top(r.mem);
        } else if (a.k == Val::kConst && b.k == Val::kConst) {
          const std::uint64_t bv = shifted(b.v, in.cond, in.amount, in.sf);
          std::uint64_t v = 0;
          switch (lop) {
            case isa::LogicOp::kAnd:
            case isa::LogicOp::kAnds: v = a.v & bv; break;
            case isa::LogicOp::kOrr: v = a.v | bv; break;
            case isa::LogicOp::kEor: v = a.v ^ bv; break;
          }
          r = Val::constant(v);
        }
        if (lop == isa::LogicOp::kAnds) {
          s.fa = a;
          s.fb = b;
          s.f64 = in.sf;
        }
        write(s, in.rd, r, false, in.sf);
        break;
      }
      case Op::kLogicImm: {
        const Val a = reg(s, in.rn, false);
        const auto lop = static_cast<isa::LogicOp>(in.shift);
        Val r = Val::top(a.mem);
        if (a.k == Val::kConst) {
          const auto imm = static_cast<std::uint64_t>(in.imm);
          r = Val::constant(lop == isa::LogicOp::kOrr ? a.v | imm : lop == isa::LogicOp::kEor ? a.v ^ imm : a.v & imm);
        }
        if (lop == isa::LogicOp::kAnds) {
          s.fa = a;
          s.fb = Val::constant(static_cast<std::uint64_t>(in.imm));
          s.f64 = in.sf;
        }
        write(s, in.rd, r, lop != isa::LogicOp::kAnds, in.sf);
        break;
      }
      case Op::kMovWide: {
        const std::uint64_t part = static_cast<std::uint64_t>(in.imm) << in.amount;
        const auto mop = static_cast<isa::MoveOp>(in.shift);
        Val r;
        if (mop == isa::MoveOp::kMovz) r = Val::constant(part);
        else if (mop == isa::MoveOp::kMovn) r = Val::constant(~part);
        else {
          const Val old = reg(s, in.rd, false);
          r = old.k == Val::kConst ? Val::constant((old.v & ~(0xFFFFull << in.amount)) | part) : Val::top(old.mem);
        }
        write(s, in.rd, r, false, in.sf);
        break;
      }
      case Op::kBitfield:
      case Op::kShiftReg:
      case Op::kDiv:
      case Op::kMulAdd: {
        bool mem = reg(s, in.rn, false).mem;
        if (in.op != Op::kBitfield) mem = mem || reg(s, in.rm, false).mem;
        if (in.op == Op::kMulAdd) mem = mem || reg(s, in.ra, false).mem;
        write(s, in.rd, Val::top(mem), false, in.sf);
        break;
      }
      case Op::kLoadStore:
      case Op::kLoadStoreReg: {
        const Val base = reg(s, in.rn, true);
        Val addr;
        if (in.op == Op::kLoadStore) {
          addr = add_const(base, in.imm, true);
        } else {
          const Val idx = reg(s, in.rm, false);
          addr = idx.k == Val::kConst ? add_const(base, static_cast<std::int64_t>(idx.v << in.amount), true)
                                      : Val::top();
        }
        const std::uint64_t size = 1ull << in.size_log2;
        if (in.is_load) {
          Val r = Val::top(true);
          if (addr.k == Val::kSp) {
            r = Val::top(false);
            const auto off = static_cast<std::int64_t>(addr.v);
            for (const auto& [so, slot] : s.stack) {
              if (so == off && slot.size == size) {
                r = slot.val;
                break;
              }
              if (so < off + static_cast<std::int64_t>(size) && off < so + static_cast<std::int64_t>(slot.size) &&
                  slot.val.mem)
                r = Val::top(true);
            }
          } else if (addr.k == Val::kConst || addr.k == Val::kArg) {
            r = {Val::kMemAt, 0, hooks_.location(addr), true};
          }
          write(s, in.rd, r, false, true);
        } else {
          const Val v = reg(s, in.rd, false);
          if (addr.k == Val::kSp) {
            const auto off = static_cast<std::int64_t>(addr.v);
            drop_stack_range(s, off, size);
            s.stack[off] = {size, v};
          } else if (hooks_.recording) {
            hooks_.on_store(pc, addr, v);
          }
        }
        break;
      }
      case Op::kAdr:
        write(s, in.rd, Val::constant((pc + static_cast<std::uint64_t>(in.imm)) & mask_), false, true);
        break;
      case Op::kBl:
        if (!hooks_.on_call(pc, *isa::direct_target(in, pc) & mask_, s)) clobber_call(s);
        break;
      case Op::kBlr:
        clobber_call(s);
        break;
      case Op::kSvc:
      case Op::kHvc:
        s.r[0] = Val::top();
        break;
      default:
        break;
    }
  }

  const Cfg& cfg_;
  Hooks& hooks_;
  std::uint64_t mask_;
};

State function_entry_state() {
  State s;
  for (std::uint32_t k = 0; k < 8; ++k) s.r[k] = {Val::kArg, 0, k};
  s.r[31] = {Val::kSp, 0};
  return s;
}

std::uint8_t command_register(const TzosProfile& p) {
  switch (p.param_convention) {
    case ParamConvention::kGpTaEntry: return 2;
    case ParamConvention::kGp: return 1;
    case ParamConvention::kBuffers: return 0;
  }
  return 0;
}

std::optional<std::uint64_t> cmd_value(const Val& scrutinee, const Val& other, bool f64) {
  if (scrutinee.k != Val::kCmd || other.k != Val::kConst) return std::nullopt;
  const std::uint64_t v = other.v - scrutinee.v;
  return f64 ? v : v & 0xFFFF'FFFFull;
}

class DispatchHooks : public Hooks {
 public:
  using Hooks::Hooks;

  struct Compare {
    Address block = 0, site = 0, arm = 0, other = 0;
    std::uint64_t value = 0;
  };
  std::vector<Compare> compares;
  std::vector<Compare> table_arms;
  std::set<Address> table_defaults;
  std::vector<std::uint64_t> excluded;
  std::map<Address, std::vector<State>> call_sites;  // bl pc -> pre-states
  std::map<Address, Address> call_targets;

  void on_insn(const Block& b, std::size_t i, const State& s) override {
    const isa::Insn& in = b.insns[i];
    const Address pc = b.start + 4 * i;
    if (in.op == Op::kBl) {
      call_sites[pc].push_back(s);
      call_targets[pc] = *isa::direct_target(in, pc) & address_mask(image.vas.width());
    }
    if (in.op == Op::kBCond && (in.cond == isa::kEq || in.cond == isa::kNe)) {
      const Address target = *isa::direct_target(in, pc) & address_mask(image.vas.width());
      const bool eq = in.cond == isa::kEq;
      auto v = cmd_value(s.fa, s.fb, s.f64);
      if (!v) v = cmd_value(s.fb, s.fa, s.f64);
      if (v) {
        compares.push_back({b.start, pc, eq ? target : b.end, eq ? b.end : target, *v});
      } else if (s.fb.k == Val::kConst && s.fa.k != Val::kCmd) {
        excluded.push_back(s.fb.v);
      }
    }
    if (in.op == Op::kCbz) {
      const Val x = reg_value(s, in.rd);
      if (x.k == Val::kCmd) {
        const Address target = *isa::direct_target(in, pc) & address_mask(image.vas.width());
        const std::uint64_t v = (0 - x.v) & (in.sf ? ~0ull : 0xFFFF'FFFFull);
        const bool eq = !in.nonzero;
        compares.push_back({b.start, pc, eq ? target : b.end, eq ? b.end : target, v});
      }
    }
    if (b.term == Terminator::kTable && i + 2 == b.insns.size() && in.op == Op::kLoadStoreReg) {
      const Val idx = reg_value(s, in.rm);
      if (idx.k == Val::kCmd) {
        for (std::size_t j = 0; j < b.table_targets.size(); ++j) {
          if (b.table_default && b.table_targets[j] == *b.table_default) continue;
          const std::uint64_t v = (j - idx.v) & 0xFFFF'FFFFull;
          table_arms.push_back({b.start, b.last_pc(), b.table_targets[j], 0, v});
        }
        if (b.table_default) table_defaults.insert(*b.table_default);
      }
    }
  }

 private:
  static Val reg_value(const State& s, std::uint8_t n) { return n == 31 ? Val::constant(0) : s.r[n]; }
};

}  // namespace

CommandIdSet enumerate_command_ids(const Cfg& cfg, const LoadedImage& image, const TzosProfile& profile,
                                   Address invoke_entry) {
  CommandIdSet out;
  if (!cfg.block_at(invoke_entry)) return out;
  DispatchHooks hooks(image, profile);
  Interp interp(cfg, hooks);
  State init = function_entry_state();
  init.r[command_register(profile)] = {Val::kCmd, 0};
  interp.run(invoke_entry, init);

  // One level of calls from the entrypoint, seeded with the caller's values.
  const auto entry_sites = hooks.call_sites;
  std::map<Address, State> callee_init;
  const auto& entry_blocks = cfg.functions.count(invoke_entry) ? cfg.functions.at(invoke_entry) : std::set<Address>{};
  for (const auto& [pc, states] : entry_sites) {
    const Block* b = cfg.block_containing(pc);
    if (!b || !entry_blocks.count(b->start)) continue;
    const Address target = hooks.call_targets.at(pc);
    if (!cfg.functions.count(target) || hooks.resolver.resolve(target)) continue;
    for (State s : states) {
      s.r[31] = {Val::kSp, 0};
      s.stack.clear();
      s.r[30] = Val::top();
      s.fa = s.fb = Val::top();
      auto it = callee_init.find(target);
      if (it == callee_init.end()) callee_init[target] = s;
      else it->second = join(it->second, s);
    }
  }
  for (const auto& [callee, s] : callee_init) interp.run(callee, s);

  std::set<Address> compare_blocks;
  for (const auto& c : hooks.compares) compare_blocks.insert(c.block);
  std::map<std::uint64_t, CommandId> by_value;
  auto add = [&](const DispatchHooks::Compare& c) {
    if (by_value.count(c.value)) return;
    CommandId id;
    id.value = c.value;
    id.handler_addr = c.arm;
    id.dispatch_site = c.site;
    by_value[c.value] = id;
  };
  for (const auto& c : hooks.compares) add(c);
  for (const auto& c : hooks.table_arms) add(c);

  if (!hooks.table_defaults.empty()) {
    out.default_handler = *hooks.table_defaults.begin();
  } else {
    std::set<Address> candidates;
    for (const auto& c : hooks.compares)
      if (!compare_blocks.count(c.other)) candidates.insert(c.other);
    if (!candidates.empty()) out.default_handler = *candidates.begin();
  }

  for (auto& [v, id] : by_value) {
    const Block* arm = cfg.block_at(id.handler_addr);
    if (arm) {
      for (std::size_t i = 0; i < arm->insns.size(); ++i) {
        if (arm->insns[i].op != Op::kBl) continue;
        const Address pc = arm->start + 4 * i;
        id.handler_function = *isa::direct_target(arm->insns[i], pc) & address_mask(image.vas.width());
        if (auto it = hooks.call_sites.find(pc); it != hooks.call_sites.end()) {
          State s = it->second.front();
          for (std::size_t k = 1; k < it->second.size(); ++k) s = join(s, it->second[k]);
          for (int k = 0; k < 8; ++k)
            if (s.r[k].k == Val::kConst) id.call_args[k] = s.r[k].v;
        }
        break;
      }
    }
    out.ids.push_back(id);
  }
  std::sort(hooks.excluded.begin(), hooks.excluded.end());
  hooks.excluded.erase(std::unique(hooks.excluded.begin(), hooks.excluded.end()), hooks.excluded.end());
  for (auto v : hooks.excluded)
    if (!by_value.count(v)) out.excluded.push_back(v);
  return out;
}

// ---------------------------------------------------------------------------
// Handler facts: helper-mediated memory accesses and device handle flows.

namespace {

struct Access {
  std::uint64_t cmd = 0;
  bool write = false;
  Address identity = 0;
  std::uint64_t offset = 0;
  std::optional<std::uint64_t> len;
};

struct FdStore {
  std::uint64_t cmd = 0;
  Address loc = 0;
  std::string path;
};

struct FdUse {
  std::uint64_t cmd = 0;
  Address loc = 0;
};

struct HandlerFacts {
  std::vector<Access> accesses;
  std::vector<FdStore> stores;
  std::vector<FdUse> uses;
};

class HandlerHooks : public Hooks {
 public:
  HandlerHooks(const LoadedImage& image, const TzosProfile& profile, HandlerFacts& facts)
      : Hooks(image, profile), facts_(facts) {}

  void begin(const CommandId& id) { id_ = &id; }

  void on_helper(Address pc, Handler h, const State& s) override {
    switch (h) {
      case Handler::kMemMove: {
        std::optional<std::uint64_t> len;
        if (s.r[2].k == Val::kConst) len = s.r[2].v;
        if (auto d = resolve(s.r[0])) facts_.accesses.push_back({id_->value, true, d->first, d->second, len});
        if (auto r = resolve(s.r[1])) facts_.accesses.push_back({id_->value, false, r->first, r->second, len});
        break;
      }
      case Handler::kOpen:
        if (s.r[0].k == Val::kConst)
          if (auto p = image.vas.read_cstring(s.r[0].v)) paths_[pc] = *p;
        break;
      case Handler::kRead:
      case Handler::kWrite:
      case Handler::kIoctl:
        if (s.r[0].k == Val::kMemAt)
          if (auto loc = absolute(locations.at(s.r[0].tag))) facts_.uses.push_back({id_->value, *loc});
        break;
      default:
        break;
    }
  }

  void on_store(Address, const Val& addr, const Val& value) override {
    if (value.k != Val::kFd) return;
    auto path = paths_.find(value.v);
    if (path == paths_.end()) return;
    if (auto loc = absolute(addr)) facts_.stores.push_back({id_->value, *loc, path->second});
  }

 private:
  // (base identity, offset) for pointers rooted in a constant.
  std::optional<std::pair<Address, std::uint64_t>> resolve(const Val& v) const {
    if (v.k == Val::kConst) return std::pair{v.v, std::uint64_t{0}};
    if (v.k == Val::kArg && v.tag < 8 && id_->call_args[v.tag]) return std::pair{*id_->call_args[v.tag], v.v};
    return std::nullopt;
  }
  std::optional<Address> absolute(const Val& v) const {
    auto r = resolve(v);
    if (!r) return std::nullopt;
    return (r->first + r->second) & address_mask(image.vas.width());
  }

  HandlerFacts& facts_;
  const CommandId* id_ = nullptr;
  std::map<Address, std::string> paths_;
};

HandlerFacts collect_facts(const Cfg& cfg, const LoadedImage& image, const TzosProfile& profile,
                           const CommandIdSet& ids) {
  HandlerFacts facts;
  HandlerHooks hooks(image, profile, facts);
  Interp interp(cfg, hooks);
  for (const auto& id : ids.ids) {
    hooks.begin(id);
    const Address fn = id.handler_function.value_or(id.handler_addr);
    if (!cfg.block_at(fn)) continue;
    interp.run(fn, function_entry_state());
  }
  return facts;
}

std::vector<DepEdge> fd_edges(const HandlerFacts& f) {
  std::set<DepEdge> out;
  for (const auto& u : f.uses)
    for (const auto& s : f.stores)
      if (s.loc == u.loc && s.cmd != u.cmd) out.insert({s.cmd, u.cmd, DepKind::kDeviceFd});
  return {out.begin(), out.end()};
}

MemoryDependencies memory_deps(const HandlerFacts& f) {
  MemoryDependencies out;
  std::map<Address, std::size_t> freq;
  for (const auto& a : f.accesses) ++freq[a.identity];
  std::size_t best = 0;
  for (const auto& [identity, n] : freq)
    if (n > best) {
      best = n;
      out.context_base = identity;
    }
  if (!out.context_base) return out;

  std::map<std::pair<std::uint64_t, std::uint64_t>, ContextField> fields;
  std::vector<Access> ctx;
  for (const auto& a : f.accesses) {
    if (a.identity != *out.context_base || !a.len || *a.len == 0) continue;
    ctx.push_back(a);
    auto& fld = fields[{a.offset, *a.len}];
    fld.offset = a.offset;
    fld.width = *a.len;
    auto& list = a.write ? fld.writers : fld.readers;
    if (std::find(list.begin(), list.end(), a.cmd) == list.end()) list.push_back(a.cmd);
  }
  for (auto& [k, fld] : fields) {
    std::sort(fld.writers.begin(), fld.writers.end());
    std::sort(fld.readers.begin(), fld.readers.end());
    out.fields.push_back(fld);
  }
  std::set<DepEdge> edges;
  for (const auto& r : ctx) {
    if (r.write) continue;
    for (const auto& w : ctx)
      if (w.write && w.cmd != r.cmd && w.offset < r.offset + *r.len && r.offset < w.offset + *w.len)
        edges.insert({w.cmd, r.cmd, DepKind::kContextMemory});
  }
  out.edges.assign(edges.begin(), edges.end());
  return out;
}

}  // namespace

std::vector<DepEdge> analyze_device_dependencies(const Cfg& cfg, const LoadedImage& image, const TzosProfile& profile,
                                                 const CommandIdSet& ids) {
  return fd_edges(collect_facts(cfg, image, profile, ids));
}

MemoryDependencies analyze_memory_dependencies(const Cfg& cfg, const LoadedImage& image, const TzosProfile& profile,
                                               const CommandIdSet& ids) {
  return memory_deps(collect_facts(cfg, image, profile, ids));
}

DependencyGraph build_dependency_graph(const Cfg& cfg, const LoadedImage& image, const TzosProfile& profile,
                                       const CommandIdSet& ids) {
  const HandlerFacts facts = collect_facts(cfg, image, profile, ids);
  DependencyGraph g;
  g.nodes = ids.values();
  auto mem = memory_deps(facts);
  auto fd = fd_edges(facts);
  g.edges = fd;
  g.edges.insert(g.edges.end(), mem.edges.begin(), mem.edges.end());
  std::sort(g.edges.begin(), g.edges.end());
  g.context_fields = std::move(mem.fields);
  g.context_base = mem.context_base;
  return g;
}

// ---------------------------------------------------------------------------
// Branch complexity

namespace {

class BranchHooks : public Hooks {
 public:
  using Hooks::Hooks;
  std::map<Address, BranchLabel> labels;

  void on_insn(const Block& b, std::size_t i, const State& s) override {
    if (i + 1 != b.insns.size() || b.term != Terminator::kCond || labels.count(b.start)) return;
    const isa::Insn& in = b.insns[i];
    bool complex = false;
    if (in.op == Op::kCbz) complex = in.rd != 31 && s.r[in.rd].mem;
    else complex = s.fa.mem || s.fb.mem;
    labels[b.start] = complex ? BranchLabel::kComplex : BranchLabel::kSimple;
  }
};

}  // namespace

BranchComplexity classify_branches(const Cfg& cfg, const LoadedImage& image, const TzosProfile& profile) {
  BranchHooks hooks(image, profile);
  Interp interp(cfg, hooks);
  for (const auto& [entry, _] : cfg.functions) interp.run(entry, function_entry_state());
  for (const auto& [start, b] : cfg.blocks)
    if (b.term == Terminator::kCond && !hooks.labels.count(start)) interp.run(start, function_entry_state());
  BranchComplexity out;
  out.labels = std::move(hooks.labels);
  for (const auto& [a, l] : out.labels) (l == BranchLabel::kSimple ? out.simple : out.complex)++;
  const double total = static_cast<double>(out.simple + out.complex);
  if (total > 0) {
    out.simple_fraction = static_cast<double>(out.simple) / total;
    out.complex_fraction = static_cast<double>(out.complex) / total;
  }
  return out;
}

// ---------------------------------------------------------------------------
// State model

StateModel build_state_model(const DependencyGraph& graph) {
  std::set<std::uint64_t> nodes(graph.nodes.begin(), graph.nodes.end());
  std::map<std::uint64_t, std::set<std::uint64_t>> preds, succs;
  for (const auto& e : graph.edges) {
    nodes.insert(e.from);
    nodes.insert(e.to);
    preds[e.to].insert(e.from);
    succs[e.from].insert(e.to);
  }
  {
    std::map<std::uint64_t, std::size_t> indeg;
    for (auto n : nodes) indeg[n] = preds[n].size();
    std::set<std::uint64_t> ready;
    for (auto n : nodes)
      if (!indeg[n]) ready.insert(n);
    std::size_t done = 0;
    while (!ready.empty()) {
      const auto n = *ready.begin();
      ready.erase(ready.begin());
      ++done;
      for (auto m : succs[n])
        if (--indeg[m] == 0) ready.insert(m);
    }
    if (done != nodes.size()) throw Error(ErrorCode::kCycleDetected, "dependency graph has a cycle");
  }

  StateModel model;
  for (auto c : nodes) {
    std::set<std::uint64_t> anc;
    std::vector<std::uint64_t> work(preds[c].begin(), preds[c].end());
    while (!work.empty()) {
      const auto n = work.back();
      work.pop_back();
      if (anc.insert(n).second) work.insert(work.end(), preds[n].begin(), preds[n].end());
    }
    // Linear extensions of the ancestor set, smallest available id first.
    auto& orders = model.prefixes[c];
    std::vector<std::uint64_t> cur;
    std::set<std::uint64_t> placed;
    std::function<void()> extend = [&] {
      if (orders.size() >= kMaxPrefixOrders) return;
      if (cur.size() == anc.size()) {
        orders.push_back(cur);
        return;
      }
      for (auto n : anc) {
        if (placed.count(n)) continue;
        bool ok = true;
        for (auto p : preds[n])
          if (anc.count(p) && !placed.count(p)) ok = false;
        if (!ok) continue;
        placed.insert(n);
        cur.push_back(n);
        extend();
        cur.pop_back();
        placed.erase(n);
      }
    };
    extend();
  }
  return model;
}

std::string format_state_model(const StateModel& m) {
  std::string out;
  for (const auto& [cmd, orders] : m.prefixes) {
    out += fmt::format("cmd {}: prereqs", cmd);
    const auto& p = m.canonical(cmd);
    for (std::size_t i = 0; i < p.size(); ++i) out += (i ? "," : " ") + std::to_string(p[i]);
    out += "\n";
  }
  return out;
}

StateModel parse_state_model(std::string_view text) {
  StateModel m;
  std::istringstream in{std::string(text)};
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos || line[0] == '#') continue;
    auto bad = [&] { throw Error(ErrorCode::kIo, fmt::format("state model line {}: expected `cmd <id>: prereqs <ids>`", lineno)); };
    if (line.rfind("cmd ", 0) != 0) bad();
    const auto colon = line.find(':');
    if (colon == std::string::npos) bad();
    std::uint64_t cmd = 0;
    try {
      cmd = parse_u64(line.substr(4, colon - 4));
    } catch (const Error&) {
      bad();
    }
    std::istringstream rest(line.substr(colon + 1));
    std::string kw, list;
    rest >> kw >> list;
    if (kw != "prereqs") bad();
    std::vector<std::uint64_t> prefix;
    std::stringstream ls(list);
    for (std::string item; std::getline(ls, item, ',');) {
      if (item.empty()) continue;
      try {
        prefix.push_back(parse_u64(item));
      } catch (const Error&) {
        bad();
      }
    }
    m.prefixes[cmd] = {prefix};
  }
  return m;
}

AnalysisReport analyze(const LoadedImage& image, const TzosProfile& profile) {
  AnalysisReport r;
  r.cfg = recover_cfg(image);
  auto it = image.entrypoints.find(kRoleInvoke);
  if (it == image.entrypoints.end()) throw Error(ErrorCode::kEntryNotFound, "image has no invoke entrypoint");
  r.ids = enumerate_command_ids(r.cfg, image, profile, it->second);
  r.graph = build_dependency_graph(r.cfg, image, profile, r.ids);
  r.branches = classify_branches(r.cfg, image, profile);
  r.model = build_state_model(r.graph);
  return r;
}

std::string format_report(const AnalysisReport& r, Address image_base) {
  std::string o;
  auto off = [&](Address a) { return hex(a - image_base); };
  o += fmt::format("[cfg]\nblocks {}\nedges {}\nfunctions {}\nincomplete {}\n", r.cfg.blocks.size(), r.cfg.edges.size(),
                   r.cfg.functions.size(), r.cfg.incomplete_blocks());
  for (const auto& [a, b] : r.cfg.blocks)
    if (b.incomplete) o += fmt::format("ANALYSIS_INCOMPLETE {}\n", off(a));
  o += "[commands]\n";
  for (const auto& c : r.ids.ids)
    o += fmt::format("{} arm {} handler {} site {}\n", c.value, off(c.handler_addr),
                     c.handler_function ? off(*c.handler_function) : std::string("-"), off(c.dispatch_site));
  o += fmt::format("default {}\n", r.ids.default_handler ? off(*r.ids.default_handler) : std::string("-"));
  o += "excluded";
  for (auto v : r.ids.excluded) o += fmt::format(" {}", v);
  o += "\n[dependencies]\n";
  for (const auto& e : r.graph.edges) o += fmt::format("{} {} {}\n", e.from, e.to, to_string(e.kind));
  o += fmt::format("[context]\nbase {}\n", r.graph.context_base ? off(*r.graph.context_base) : std::string("-"));
  auto ids = [](const std::vector<std::uint64_t>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
    return s.empty() ? std::string("-") : s;
  };
  for (const auto& f : r.graph.context_fields)
    o += fmt::format("field {} {} writers {} readers {}\n", f.offset, f.width, ids(f.writers), ids(f.readers));
  o += fmt::format("[branches]\nsimple {}\ncomplex {}\nsimple_fraction {:.4f}\ncomplex_fraction {:.4f}\n",
                   r.branches.simple, r.branches.complex, r.branches.simple_fraction, r.branches.complex_fraction);
  o += "[state-model]\n" + format_state_model(r.model);
  return o;
}

}  // namespace taforge::analysis

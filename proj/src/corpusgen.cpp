#include "taforge/corpusgen.hpp"

#include <algorithm>
#include <cstring>
#include <functional>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include <fmt/format.h>

#include "taforge/assembler.hpp"
#include "taforge/elf.hpp"
#include "taforge/error.hpp"
#include "taforge/syscall.hpp"

namespace taforge::gen {

namespace e = isa::enc;

namespace {

[[noreturn]] void invalid(const std::string& msg) { throw Error(ErrorCode::kSpecInvalid, msg); }

std::uint64_t uniform(std::mt19937_64& rng, std::uint64_t lo, std::uint64_t hi) {
  return lo + rng() % (hi - lo + 1);
}

const std::vector<Handler> kHelperOrder = {Handler::kOpen,    Handler::kRead,  Handler::kWrite,
                                           Handler::kClose,   Handler::kIoctl, Handler::kMmap,
                                           Handler::kMemMove, Handler::kAlloc, Handler::kFree,
                                           Handler::kGetRandom};

std::string import_name(TzosKind p, Handler h) {
  if (p == TzosKind::kTeegris) {
    switch (h) {
      case Handler::kOpen: return "tz_open";
      case Handler::kRead: return "tz_read";
      case Handler::kWrite: return "tz_write";
      case Handler::kClose: return "tz_close";
      case Handler::kIoctl: return "tz_ioctl";
      case Handler::kMmap: return "tz_mmap";
      case Handler::kMemMove: return "TEE_MemMove";
      case Handler::kAlloc: return "TEE_Malloc";
      case Handler::kFree: return "TEE_Free";
      case Handler::kGetRandom: return "TEE_GenerateRandom";
      default: break;
    }
  }
  if (p == TzosKind::kQsee) {
    switch (h) {
      case Handler::kAlloc: return "qsee_malloc";
      default: return "qsee_" + std::string(to_string(h));
    }
  }
  return "__sys_" + std::string(to_string(h));
}

constexpr const char* kLibTzsl = "libtzsl.so";
constexpr const char* kLibScrypto = "libscrypto.so";
constexpr const char* kCmbLib = "cmblib.so";

Plan plan_of(PlanKind k) {
  Plan p;
  p.kind = k;
  return p;
}

bool is_read_plan(const Plan& p) { return p.kind == PlanKind::kContextRead || p.kind == PlanKind::kRequireFlag; }
bool is_write_plan(const Plan& p) { return p.kind == PlanKind::kContextWrite || p.kind == PlanKind::kSetFlag; }
std::uint32_t plan_width(const Plan& p) {
  return (p.kind == PlanKind::kSetFlag || p.kind == PlanKind::kRequireFlag) ? 4 : p.width;
}
bool overlaps(const Plan& a, const Plan& b) {
  return a.offset < b.offset + plan_width(b) && b.offset < a.offset + plan_width(a);
}

// Commands after vulnerability expansion: guard commands gain a set_flag and
// each vulnerability becomes a command checking every guard flag.
struct Expanded {
  std::vector<CommandSpec> commands;
  std::vector<VulnInfo> vulns;  // fault offsets filled during emission
};

Expanded expand(const TaSpec& spec) {
  Expanded x;
  x.commands = spec.commands;
  std::uint32_t next_flag = kFieldAreaEnd;
  for (const auto& c : spec.commands)
    for (const auto& p : c.plans)
      if (p.kind == PlanKind::kSetFlag || p.kind == PlanKind::kRequireFlag)
        next_flag = std::max(next_flag, p.offset + 4);
  for (const auto& v : spec.vulns) {
    CommandSpec vc;
    vc.id = v.id;
    for (auto g : v.guard) {
      if (next_flag + 4 > kFlagAreaEnd) invalid("too many guard flags");
      auto it = std::find_if(x.commands.begin(), x.commands.end(), [&](const auto& c) { return c.id == g; });
      Plan set;
      set.kind = PlanKind::kSetFlag;
      set.offset = next_flag;
      it->plans.push_back(set);
      Plan req;
      req.kind = PlanKind::kRequireFlag;
      req.offset = next_flag;
      vc.plans.push_back(req);
      next_flag += 4;
    }
    Plan body;
    body.kind = PlanKind::kVuln;
    body.vuln = v.kind;
    vc.plans.push_back(body);
    x.commands.push_back(vc);
    VulnInfo info;
    info.kind = v.kind;
    info.id = v.id;
    info.trigger = v.guard;
    info.trigger.push_back(v.id);
    x.vulns.push_back(info);
  }
  return x;
}

std::vector<DependencyEdge> truth_edges(const std::vector<CommandSpec>& cmds) {
  std::set<DependencyEdge> edges;
  for (const auto& b : cmds) {
    for (const auto& rp : b.plans) {
      for (const auto& a : cmds) {
        if (a.id == b.id) continue;
        for (const auto& wp : a.plans) {
          if (is_read_plan(rp) && is_write_plan(wp) && overlaps(rp, wp))
            edges.insert({a.id, b.id, "CONTEXT_MEMORY"});
          if (rp.kind == PlanKind::kDeviceRead && wp.kind == PlanKind::kDeviceOpen && wp.offset == rp.offset)
            edges.insert({a.id, b.id, "DEVICE_FD"});
        }
      }
    }
  }
  return {edges.begin(), edges.end()};
}

std::vector<FieldInfo> truth_fields(const std::vector<CommandSpec>& cmds) {
  std::map<std::pair<std::uint32_t, std::uint32_t>, FieldInfo> fields;
  for (const auto& c : cmds) {
    for (const auto& p : c.plans) {
      if (!is_read_plan(p) && !is_write_plan(p)) continue;
      auto& f = fields[{p.offset, plan_width(p)}];
      f.offset = p.offset;
      f.width = plan_width(p);
      auto& list = is_write_plan(p) ? f.writers : f.readers;
      if (std::find(list.begin(), list.end(), c.id) == list.end()) list.push_back(c.id);
    }
  }
  std::vector<FieldInfo> out;
  for (auto& [k, f] : fields) {
    std::sort(f.writers.begin(), f.writers.end());
    std::sort(f.readers.begin(), f.readers.end());
    out.push_back(f);
  }
  return out;
}

bool has_cycle(const std::vector<DependencyEdge>& edges) {
  std::map<std::uint64_t, std::vector<std::uint64_t>> adj;
  for (const auto& ed : edges) adj[ed.from].push_back(ed.to);
  std::map<std::uint64_t, int> color;
  std::function<bool(std::uint64_t)> dfs = [&](std::uint64_t n) {
    color[n] = 1;
    for (auto m : adj[n]) {
      if (color[m] == 1) return true;
      if (color[m] == 0 && dfs(m)) return true;
    }
    color[n] = 2;
    return false;
  };
  for (const auto& [n, _] : adj)
    if (color[n] == 0 && dfs(n)) return true;
  return false;
}

// ---------------------------------------------------------------------------
// Object layout: text at 0x1000, one RW data page run after it holding the
// dynamic table, the GOT and named data blobs.

struct Blob {
  Label label;
  std::vector<std::uint8_t> bytes;
  std::uint64_t align = 8;
  std::vector<std::pair<std::uint64_t, Label>> relative;  // (offset, target) pointer slots
};

struct ObjectBuilder {
  explicit ObjectBuilder(WordWidth w) : width(w), wb(word_bytes(w)), text(0x1000) {}

  WordWidth width;
  unsigned wb;
  Assembler text;
  std::vector<std::string> imports;
  std::map<std::string, Label> got;
  std::vector<std::pair<std::string, Label>> exports;
  std::vector<std::string> needed;
  std::vector<std::pair<std::string, std::string>> meta;
  std::vector<Blob> blobs;
  std::vector<std::pair<Label, std::optional<std::uint64_t>>> svc_sites;

  Label blob(std::vector<std::uint8_t> bytes, std::uint64_t align = 8) {
    Label l = text.new_label();
    blobs.push_back({l, std::move(bytes), align, {}});
    return l;
  }

  Label string(const std::string& s) {
    std::vector<std::uint8_t> b(s.begin(), s.end());
    b.push_back(0);
    return blob(std::move(b), 8);
  }

  // PLT stub for an imported symbol: load the GOT slot and branch.
  Label plt(const std::string& sym) {
    if (!got.count(sym)) {
      imports.push_back(sym);
      got[sym] = text.new_label();
    }
    Label stub = text.new_label();
    text.bind(stub);
    text.adr(16, got[sym]);
    text.emit(e::ldr_imm(wb == 8 ? 3 : 2, 16, 16, 0));
    text.br(16);
    return stub;
  }

  void svc(std::uint16_t imm, std::optional<std::uint64_t> number) {
    Label l = text.new_label();
    text.bind(l);
    text.emit(e::svc(imm));
    svc_sites.emplace_back(l, number);
  }

  Address data_base = 0;

  std::vector<std::uint8_t> finish() {
    data_base = page_ceil(text.here());
    const std::uint64_t dyn = elf::dynamic_size(width, needed.size());
    std::uint64_t cursor = data_base + dyn;
    auto align_to = [&](std::uint64_t a) { cursor = (cursor + a - 1) / a * a; };
    align_to(8);
    std::vector<std::pair<Address, std::string>> got_slots;
    for (const auto& sym : imports) {
      text.bind_at(got[sym], cursor);
      got_slots.emplace_back(cursor, sym);
      cursor += wb;
    }
    std::vector<Address> blob_addr;
    for (auto& b : blobs) {
      align_to(b.align);
      text.bind_at(b.label, cursor);
      blob_addr.push_back(cursor);
      cursor += b.bytes.size();
    }
    const std::uint64_t data_size = page_ceil(std::max<std::uint64_t>(cursor - data_base, 1));
    std::vector<std::uint8_t> data(data_size, 0);

    elf::WriterInput in;
    in.width = width;
    for (const auto& [name, label] : exports) {
      elf::Symbol s;
      s.name = name;
      s.value = text.address(label);
      s.shndx = 1;
      in.symbols.push_back(s);
    }
    for (const auto& sym : imports) {
      elf::Symbol s;
      s.name = sym;
      in.symbols.push_back(s);
    }
    for (std::size_t i = 0; i < got_slots.size(); ++i)
      in.relocations.push_back({got_slots[i].first, elf::relocation_type_jump_slot(width),
                                static_cast<std::uint32_t>(exports.size() + i + 1), 0});
    for (std::size_t i = 0; i < blobs.size(); ++i) {
      std::memcpy(data.data() + (blob_addr[i] - data_base), blobs[i].bytes.data(), blobs[i].bytes.size());
      for (const auto& [off, target] : blobs[i].relative)
        in.relocations.push_back({blob_addr[i] + off, elf::relocation_type_relative(width), 0,
                                  static_cast<std::int64_t>(text.address(target))});
    }
    auto code = text.assemble();
    in.segments.push_back({0x1000, std::move(code), 0, elf::kPfR | elf::kPfX, ".text"});
    in.segments.back().memsz = in.segments.back().bytes.size();
    in.segments.push_back({data_base, std::move(data), data_size, elf::kPfR | elf::kPfW, ".data"});
    in.needed = needed;
    in.meta = meta;
    in.dynamic_vaddr = data_base;
    return elf::write(in);
  }

  std::vector<SvcInfo> svc_info() const {
    std::vector<SvcInfo> out;
    for (const auto& [l, n] : svc_sites) out.push_back({text.address(l), n});
    return out;
  }

  std::map<std::string, Address> export_table() const {
    std::map<std::string, Address> out;
    for (const auto& [name, l] : exports) out[name] = text.address(l);
    return out;
  }
};

// Frame of every generated handler: saved x30 and x19..x24, a flag
// scratch word and a 64-byte local buffer.
constexpr std::uint32_t kHandlerFrame = 128;
constexpr std::uint32_t kFlagScratch = 56;
constexpr std::uint32_t kLocalBuf = 64;
constexpr std::uint32_t kEntryFrame = 64;

void save_regs(Assembler& a, std::uint32_t frame, std::initializer_list<std::uint8_t> regs) {
  a.emit(e::sub_imm(true, isa::kSp, isa::kSp, frame));
  std::uint32_t off = 0;
  for (auto r : regs) {
    a.emit(e::str_imm(3, r, isa::kSp, off));
    off += 8;
  }
}

void restore_regs(Assembler& a, std::uint32_t frame, std::initializer_list<std::uint8_t> regs) {
  std::uint32_t off = 0;
  for (auto r : regs) {
    a.emit(e::ldr_imm(3, r, isa::kSp, off));
    off += 8;
  }
  a.emit(e::add_imm(true, isa::kSp, isa::kSp, frame));
  a.ret();
}

void load_status(Assembler& a, std::uint32_t status) {
  a.emit(e::movz(false, 0, status & 0xFFFF));
  if (status >> 16) a.emit(e::movk(false, 0, static_cast<std::uint16_t>(status >> 16), 1));
}

struct Decoy {
  std::vector<std::uint64_t> values;
  std::uint64_t scrutinee = 0;
};

// Heap buffer size used by the planted vulnerabilities.
constexpr std::uint32_t kVulnBuffer = 4096;

struct FillerPlan {
  std::size_t simple = 0;
  std::size_t complex = 0;
};

struct TaBuild {
  std::vector<std::uint8_t> elf;
  Manifest manifest;
  CfgSummary cfg;
};

class TaGenerator {
 public:
  TaGenerator(const TaSpec& spec, const Expanded& x, FillerPlan fillers)
      : spec_(spec), x_(x), fillers_(fillers), obj_(spec.width), rng_(spec.seed),
        profile_(builtin_profile(spec.profile)) {}

  TaBuild build() {
    Assembler& a = obj_.text;
    ctx_ = obj_.blob(std::vector<std::uint8_t>(kContextSize, 0), 16);
    pick_decoys();
    emit_helpers();
    emit_entries();
    emit_dispatch();
    for (std::size_t i = 0; i < x_.commands.size(); ++i) emit_handler(i);

    if (spec_.profile == TzosKind::kTeegris) obj_.needed = {kLibTzsl, kLibScrypto};
    if (spec_.profile == TzosKind::kQsee) obj_.needed = {kCmbLib};
    std::string uuid;
    for (int i = 0; i < 16; ++i) {
      if (i == 4 || i == 6 || i == 8 || i == 10) uuid += '-';
      uuid += fmt::format("{:02x}", static_cast<unsigned>(rng_() & 0xFF));
    }
    obj_.meta.emplace_back("uuid", uuid);
    if (spec_.profile == TzosKind::kTrusty) {
      obj_.meta.emplace_back("message_handler", hex(a.address(invoke_)));
    }

    TaBuild out;
    out.elf = obj_.finish();
    out.cfg = a.cfg_summary();

    Manifest& m = out.manifest;
    m.name = spec_.name;
    m.profile = spec_.profile;
    m.width = spec_.width;
    m.dispatch = spec_.dispatch;
    m.seed = spec_.seed;
    m.uuid = uuid;
    for (const auto& [role, l] : entries_) m.entries[role] = a.address(l);
    for (std::size_t i = 0; i < x_.commands.size(); ++i)
      m.commands.push_back({x_.commands[i].id, a.address(cases_[i]), a.address(handlers_[i])});
    std::sort(m.commands.begin(), m.commands.end(), [](const auto& l, const auto& r) { return l.id < r.id; });
    m.default_offset = a.address(default_);
    m.decoy_values = decoy_values_;
    m.svc["ta"] = obj_.svc_info();
    m.dependencies = truth_edges(x_.commands);
    m.fields = truth_fields(x_.commands);
    m.vulns = x_.vulns;
    for (std::size_t i = 0; i < m.vulns.size(); ++i) m.vulns[i].fault_offset = a.address(fault_sites_.at(m.vulns[i].id));
    std::set<std::string> devs;
    for (const auto& c : x_.commands)
      for (const auto& p : c.plans)
        if (p.kind == PlanKind::kDeviceOpen || p.kind == PlanKind::kDeviceIo) devs.insert(p.path);
    m.devices.assign(devs.begin(), devs.end());
    m.cfg_blocks = out.cfg.blocks;
    m.cfg_edges = out.cfg.edges;
    m.branches_simple = out.cfg.cond_simple;
    m.branches_complex = out.cfg.cond_complex;
    m.needed = obj_.needed;
    return out;
  }

 private:
  bool w64() const { return spec_.width == WordWidth::kW64; }
  unsigned ptr_log2() const { return w64() ? 3 : 2; }

  void pick_decoys() {
    std::set<std::uint64_t> ids;
    for (const auto& c : x_.commands) ids.insert(c.id);
    for (std::size_t d = 0; d < spec_.decoys; ++d) {
      Decoy dec;
      const std::size_t arms = 2 + rng_() % 2;
      while (dec.values.size() < arms) {
        const std::uint64_t v = uniform(rng_, 1, kMaxCommandId);
        if (ids.count(v) || std::count(dec.values.begin(), dec.values.end(), v)) continue;
        dec.values.push_back(v);
        decoy_values_.push_back(v);
      }
      dec.scrutinee = dec.values[rng_() % dec.values.size()];
      decoys_.push_back(dec);
    }
    std::sort(decoy_values_.begin(), decoy_values_.end());
  }

  void emit_decoy(const Decoy& d);

  void emit_helpers() {
    Assembler& a = obj_.text;
    const SyscallTable& table = syscall_table(profile_.syscall_table_id);
    for (Handler h : kHelperOrder) {
      const std::string name = import_name(spec_.profile, h);
      if (spec_.profile == TzosKind::kTeegris || spec_.profile == TzosKind::kQsee) {
        helpers_[h] = obj_.plt(name);
        continue;
      }
      Label l = a.new_label();
      a.bind(l);
      const std::uint64_t n = *table.number_of(h);
      if (spec_.profile == TzosKind::kTrusty) {
        a.emit(e::movz(true, table.number_register, static_cast<std::uint16_t>(n)));
        obj_.svc(0, n);
      } else {
        obj_.svc(static_cast<std::uint16_t>(n), n);
      }
      a.ret();
      helpers_[h] = l;
    }
  }

  void call_helper(Handler h) { obj_.text.bl(helpers_.at(h)); }

  void emit_entries() {
    Assembler& a = obj_.text;
    auto trivial = [&](const char* role, const std::string& sym) {
      Label l = a.new_label();
      a.bind(l);
      a.emit(e::movz(false, 0, 0));
      a.ret();
      entries_[role] = l;
      obj_.exports.emplace_back(sym, l);
    };
    for (const auto& [role, sym] : profile_.entry_symbols)
      if (role != kRoleInvoke) trivial(role.c_str(), sym);

    invoke_ = a.new_label();
    dispatch_ = a.new_label();
    a.bind(invoke_);
    entries_[kRoleInvoke] = invoke_;
    for (const auto& [role, sym] : profile_.entry_symbols)
      if (role == kRoleInvoke && !sym.starts_with(kMetaSymbolPrefix)) obj_.exports.emplace_back(sym, invoke_);

    save_regs(a, kEntryFrame, {30, 19, 20, 21});
    for (std::size_t d = 0; d < decoys_.size(); d += 2) emit_decoy(decoys_[d]);
    Label out = a.new_label(), bad_params = a.new_label(), open_ok = a.new_label();
    const auto conv = profile_.param_convention;
    std::uint8_t cmd_reg = 0, types_reg = 0, params_reg = 0;
    if (conv == ParamConvention::kGpTaEntry) {
      a.emit(e::cmp_imm(true, 0, 1));
      a.b_cond(isa::kNe, open_ok);
      cmd_reg = 2, types_reg = 3, params_reg = 4;
    } else if (conv == ParamConvention::kGp) {
      cmd_reg = 1, types_reg = 2, params_reg = 3;
    }
    if (conv == ParamConvention::kBuffers) {
      a.emit(e::mov_reg(false, 19, 0));
      a.emit(e::mov_reg(true, 20, 1));
      a.emit(e::mov_reg(true, 21, 2));
    } else {
      a.emit(e::cmp_imm(false, types_reg, kDefaultTypes));
      a.b_cond(isa::kNe, bad_params);
      a.emit(e::mov_reg(false, 19, cmd_reg));
      a.emit(e::ldr_imm(ptr_log2(), 20, params_reg, 0));
      a.emit(e::ldr_imm(ptr_log2(), 21, params_reg, w64() ? 8 : 4));
    }
    a.emit(e::mov_reg(false, 0, 19));
    a.emit(e::mov_reg(true, 1, 20));
    a.emit(e::mov_reg(true, 2, 21));
    a.bl(dispatch_);
    a.b(out);
    if (conv != ParamConvention::kBuffers) {
      a.bind(bad_params);
      load_status(a, kTeeErrorBadParameters);
      a.b(out);
    }
    if (conv == ParamConvention::kGpTaEntry) {
      a.bind(open_ok);
      a.emit(e::movz(false, 0, 0));
    }
    a.bind(out);
    restore_regs(a, kEntryFrame, {30, 19, 20, 21});
    // Unused labels still need an address for the assembler.
    if (conv == ParamConvention::kBuffers) a.bind_at(bad_params, 0);
    if (conv != ParamConvention::kGpTaEntry) a.bind_at(open_ok, 0);
  }

  void emit_dispatch() {
    Assembler& a = obj_.text;
    a.bind(dispatch_);
    save_regs(a, kEntryFrame, {30, 19, 20, 21});
    a.emit(e::mov_reg(false, 19, 0));
    a.emit(e::mov_reg(true, 20, 1));
    a.emit(e::mov_reg(true, 21, 2));
    for (std::size_t d = 1; d < decoys_.size(); d += 2) emit_decoy(decoys_[d]);

    default_ = a.new_label();
    Label done = a.new_label();
    for (std::size_t i = 0; i < x_.commands.size(); ++i) {
      cases_.push_back(a.new_label());
      handlers_.push_back(a.new_label());
    }
    if (spec_.dispatch == DispatchStyle::kIfElse) {
      for (std::size_t i = 0; i < x_.commands.size(); ++i) {
        a.emit(e::cmp_imm(false, 19, static_cast<std::uint32_t>(x_.commands[i].id)));
        a.b_cond(isa::kEq, cases_[i]);
      }
    } else {
      std::uint64_t lo = ~0ull, hi = 0;
      for (const auto& c : x_.commands) {
        lo = std::min(lo, c.id);
        hi = std::max(hi, c.id);
      }
      const std::uint64_t span = hi - lo + 1;
      a.emit(e::sub_imm(false, 9, 19, static_cast<std::uint32_t>(lo)));
      a.emit(e::cmp_imm(false, 9, static_cast<std::uint32_t>(span - 1)));
      a.b_cond(isa::kHi, default_);
      std::vector<Label> targets(span, default_);
      for (std::size_t i = 0; i < x_.commands.size(); ++i) targets[x_.commands[i].id - lo] = cases_[i];
      Blob table;
      table.label = a.new_label();
      table.bytes.assign(span * (w64() ? 8 : 4), 0);
      for (std::size_t i = 0; i < span; ++i) table.relative.emplace_back(i * (w64() ? 8 : 4), targets[i]);
      obj_.blobs.push_back(table);
      a.adr(10, table.label);
      a.emit(e::ldr_reg(ptr_log2(), 10, 10, 9, true));
      a.br_table(10, targets);
    }
    a.bind(default_);
    load_status(a, kTeeErrorInvalidCommand);
    a.b(done);
    for (std::size_t i = 0; i < x_.commands.size(); ++i) {
      a.bind(cases_[i]);
      a.adr(0, ctx_);
      a.emit(e::mov_reg(true, 1, 20));
      a.emit(e::mov_reg(true, 2, 21));
      a.bl(handlers_[i]);
      a.b(done);
    }
    a.bind(done);
    restore_regs(a, kEntryFrame, {30, 19, 20, 21});
  }

  void emit_fillers(std::size_t handler_index) {
    Assembler& a = obj_.text;
    const std::size_t n = x_.commands.size();
    auto share = [&](std::size_t total) { return total / n + (handler_index < total % n ? 1 : 0); };
    for (std::size_t k = 0; k < share(fillers_.simple); ++k) {
      Label skip = a.new_label();
      a.emit(e::cmp_imm(true, 21, static_cast<std::uint32_t>(uniform(rng_, 1, 4000))));
      a.b_cond(isa::kHi, skip);
      a.emit(e::nop());
      a.bind(skip);
    }
    for (std::size_t k = 0; k < share(fillers_.complex); ++k) {
      Label skip = a.new_label();
      a.emit(e::ldr_imm(2, 9, 19, kFillerField));
      a.emit(e::cmp_imm(false, 9, static_cast<std::uint32_t>(uniform(rng_, 1, 4000))));
      a.b_cond(isa::kEq, skip, true);
      a.emit(e::nop());
      a.bind(skip);
    }
  }

  void emit_vuln(VulnKind kind, std::uint64_t id) {
    Assembler& a = obj_.text;
    Label skip = a.new_label();
    Label fault = a.new_label();
    a.cbz(true, 21, skip);
    a.emit(e::ldr_imm(0, 9, 20, 0));
    a.emit(e::cmp_imm(false, 9, kVulnThreshold));
    a.b_cond(isa::kLs, skip, true);
    switch (kind) {
      case VulnKind::kOobWrite: {
        a.emit(e::movz(true, 0, kVulnBuffer));
        call_helper(Handler::kAlloc);
        a.emit(e::mov_reg(true, 22, 0));
        a.emit(e::add_imm(true, 23, 22, kVulnBuffer - 64));
        a.emit(e::ldr_imm(0, 24, 20, 0));
        a.emit(e::movz(true, 10, 0));
        Label loop = a.new_label(), after = a.new_label();
        a.bind(loop);
        a.emit(e::cmp_reg(true, 10, 24));
        a.b_cond(isa::kCs, after, true);
        a.emit(e::ldr_reg(0, 11, 20, 10, false));
        a.bind(fault);
        a.emit(e::str_reg(0, 11, 23, 10, false));
        a.emit(e::add_imm(true, 10, 10, 1));
        a.b(loop);
        a.bind(after);
        a.emit(e::mov_reg(true, 0, 22));
        call_helper(Handler::kFree);
        break;
      }
      case VulnKind::kOobRead:
        a.emit(e::movz(true, 0, kVulnBuffer));
        call_helper(Handler::kAlloc);
        a.emit(e::mov_reg(true, 22, 0));
        a.emit(e::ldr_imm(0, 9, 20, 0));
        a.emit(e::add_imm(true, 10, 22, kVulnBuffer - 64));
        a.bind(fault);
        a.emit(e::ldr_reg(0, 11, 10, 9, false));
        a.emit(e::mov_reg(true, 0, 22));
        call_helper(Handler::kFree);
        break;
      case VulnKind::kUafStub:
        a.emit(e::movz(true, 0, kVulnBuffer));
        call_helper(Handler::kAlloc);
        a.emit(e::mov_reg(true, 22, 0));
        a.emit(e::movz(false, 9, 1));
        a.emit(e::str_imm(0, 9, 22, 0));
        a.emit(e::mov_reg(true, 0, 22));
        call_helper(Handler::kFree);
        a.bind(fault);
        a.emit(e::ldr_imm(0, 11, 22, 0));
        break;
      case VulnKind::kStackOverflow:
        a.emit(e::ldr_imm(0, 9, 20, 0));
        a.emit(e::lsl_imm(true, 9, 9, 16));
        a.emit(e::mov_sp(10, isa::kSp));
        a.emit(e::sub_reg(true, 10, 10, 9));
        a.bind(fault);
        a.emit(e::str_imm(3, isa::kZr, 10, 0));
        break;
    }
    a.bind(skip);
    fault_sites_[id] = fault;
  }

  void emit_plan(const Plan& p, std::uint64_t id, Label bad_state, bool& used_bad_state) {
    Assembler& a = obj_.text;
    switch (p.kind) {
      case PlanKind::kEcho: {
        Label ok = a.new_label();
        a.emit(e::mov_reg(true, 2, 21));
        a.emit(e::cmp_imm(true, 21, kLocalBuf));
        a.b_cond(isa::kLs, ok);
        a.emit(e::movz(true, 2, kLocalBuf));
        a.bind(ok);
        a.emit(e::add_imm(true, 0, isa::kSp, kLocalBuf));
        a.emit(e::mov_reg(true, 1, 20));
        call_helper(Handler::kMemMove);
        break;
      }
      case PlanKind::kChecksum: {
        Label loop = a.new_label(), end = a.new_label();
        a.emit(e::movz(true, 9, 0));
        a.emit(e::movz(true, 10, 0));
        a.bind(loop);
        a.emit(e::cmp_reg(true, 10, 21));
        a.b_cond(isa::kCs, end);
        a.emit(e::cmp_imm(true, 10, 256));
        a.b_cond(isa::kCs, end);
        a.emit(e::ldr_reg(0, 11, 20, 10, false));
        a.emit(e::add_reg(true, 9, 9, 11));
        a.emit(e::add_imm(true, 10, 10, 1));
        a.b(loop);
        a.bind(end);
        a.emit(e::str_imm(2, 9, isa::kSp, kLocalBuf));
        break;
      }
      case PlanKind::kDeviceIo:
        a.adr(0, path_label(p.path));
        a.emit(e::movz(true, 1, 0));
        call_helper(Handler::kOpen);
        a.emit(e::mov_reg(true, 22, 0));
        a.emit(e::add_imm(true, 1, isa::kSp, kLocalBuf));
        a.emit(e::movz(true, 2, 16));
        call_helper(Handler::kRead);
        a.emit(e::mov_reg(true, 0, 22));
        call_helper(Handler::kClose);
        break;
      case PlanKind::kDeviceOpen:
        a.adr(0, path_label(p.path));
        a.emit(e::movz(true, 1, 0));
        call_helper(Handler::kOpen);
        a.emit(e::str_imm(2, 0, 19, p.offset));
        break;
      case PlanKind::kDeviceRead:
        a.emit(e::ldr_imm(2, 0, 19, p.offset));
        a.emit(e::add_imm(true, 1, isa::kSp, kLocalBuf));
        a.emit(e::movz(true, 2, 16));
        call_helper(Handler::kRead);
        break;
      case PlanKind::kDeviceClose:
        a.emit(e::ldr_imm(2, 0, 19, p.offset));
        call_helper(Handler::kClose);
        break;
      case PlanKind::kContextWrite:
        a.emit(e::add_imm(true, 0, 19, p.offset));
        a.emit(e::mov_reg(true, 1, 20));
        a.emit(e::movz(true, 2, static_cast<std::uint16_t>(p.width)));
        call_helper(Handler::kMemMove);
        break;
      case PlanKind::kContextRead:
        a.emit(e::add_imm(true, 0, isa::kSp, kLocalBuf));
        a.emit(e::add_imm(true, 1, 19, p.offset));
        a.emit(e::movz(true, 2, static_cast<std::uint16_t>(p.width)));
        call_helper(Handler::kMemMove);
        break;
      case PlanKind::kSetFlag:
        a.emit(e::movz(false, 9, 1));
        a.emit(e::str_imm(2, 9, isa::kSp, kFlagScratch));
        a.emit(e::add_imm(true, 0, 19, p.offset));
        a.emit(e::add_imm(true, 1, isa::kSp, kFlagScratch));
        a.emit(e::movz(true, 2, 4));
        call_helper(Handler::kMemMove);
        break;
      case PlanKind::kRequireFlag:
        a.emit(e::add_imm(true, 0, isa::kSp, kFlagScratch));
        a.emit(e::add_imm(true, 1, 19, p.offset));
        a.emit(e::movz(true, 2, 4));
        call_helper(Handler::kMemMove);
        a.emit(e::ldr_imm(2, 9, isa::kSp, kFlagScratch));
        a.cbz(false, 9, bad_state, true);
        used_bad_state = true;
        break;
      case PlanKind::kVuln:
        emit_vuln(p.vuln, id);
        break;
    }
  }

  void emit_handler(std::size_t i) {
    Assembler& a = obj_.text;
    const CommandSpec& c = x_.commands[i];
    a.bind(handlers_[i]);
    save_regs(a, kHandlerFrame, {30, 19, 20, 21, 22, 23, 24});
    a.emit(e::mov_reg(true, 19, 0));
    a.emit(e::mov_reg(true, 20, 1));
    a.emit(e::mov_reg(true, 21, 2));
    emit_fillers(i);
    Label bad_state = a.new_label(), epi = a.new_label();
    bool used = false;
    for (const auto& p : c.plans) emit_plan(p, c.id, bad_state, used);
    a.emit(e::movz(false, 0, 0));
    a.bind(epi);
    restore_regs(a, kHandlerFrame, {30, 19, 20, 21, 22, 23, 24});
    if (used) {
      a.bind(bad_state);
      load_status(a, kTeeErrorBadState);
      a.b(epi);
    } else {
      a.bind_at(bad_state, 0);
    }
  }

  Label path_label(const std::string& path) {
    auto it = paths_.find(path);
    if (it != paths_.end()) return it->second;
    return paths_[path] = obj_.string(path);
  }

  static constexpr std::uint32_t kDefaultTypes = 0x65;

  const TaSpec& spec_;
  const Expanded& x_;
  FillerPlan fillers_;
  ObjectBuilder obj_;
  std::mt19937_64 rng_;
  TzosProfile profile_;
  Label ctx_ = 0, invoke_ = 0, dispatch_ = 0, default_ = 0;
  std::map<std::string, Label> entries_;
  std::map<Handler, Label> helpers_;
  std::vector<Label> cases_, handlers_;
  std::vector<Decoy> decoys_;
  std::vector<std::uint64_t> decoy_values_;
  std::map<std::string, Label> paths_;
  std::map<std::uint64_t, Label> fault_sites_;
};

void TaGenerator::emit_decoy(const Decoy& d) {
  Assembler& a = obj_.text;
  Label join = a.new_label();
  std::vector<Label> arms;
  a.emit(e::movz(false, 9, static_cast<std::uint16_t>(d.scrutinee)));
  a.emit(e::str_imm(2, 9, isa::kSp, kFlagScratch));
  a.emit(e::ldr_imm(2, 10, isa::kSp, kFlagScratch));
  for (auto v : d.values) {
    arms.push_back(a.new_label());
    a.emit(e::cmp_imm(false, 10, static_cast<std::uint32_t>(v)));
    a.b_cond(isa::kEq, arms.back());
  }
  a.b(join);
  for (std::size_t i = 0; i < arms.size(); ++i) {
    a.bind(arms[i]);
    a.emit(e::movz(false, 11, static_cast<std::uint16_t>(i + 1)));
    if (i + 1 < arms.size()) a.b(join);
  }
  a.bind(join);
}

// ---------------------------------------------------------------------------
// Stub libraries.

std::pair<std::vector<std::uint8_t>, ObjectBuilder> build_libtzsl(WordWidth w) {
  ObjectBuilder o(w);
  const SyscallTable& t = syscall_table("teegris");
  for (Handler h : kHelperOrder) {
    Label l = o.text.new_label();
    o.text.bind(l);
    const auto n = *t.number_of(h);
    o.svc(static_cast<std::uint16_t>(n), n);
    o.text.ret();
    o.exports.emplace_back(import_name(TzosKind::kTeegris, h), l);
  }
  auto bytes = o.finish();
  return {std::move(bytes), std::move(o)};
}

std::pair<std::vector<std::uint8_t>, ObjectBuilder> build_libscrypto(WordWidth w) {
  ObjectBuilder o(w);
  o.needed = {kLibTzsl};
  Label write_stub = o.plt("tz_write");
  Label init = o.text.new_label();
  o.text.bind(init);
  o.text.emit(e::movz(false, 0, 0));
  o.text.ret();
  Label log = o.text.new_label();
  o.text.bind(log);
  o.text.b(write_stub);
  o.exports.emplace_back("SCrypto_Init", init);
  o.exports.emplace_back("SCrypto_Log", log);
  auto bytes = o.finish();
  return {std::move(bytes), std::move(o)};
}

std::pair<std::vector<std::uint8_t>, ObjectBuilder> build_cmblib(WordWidth w) {
  ObjectBuilder o(w);
  const SyscallTable& t = syscall_table("qsee");
  Label sys = o.text.new_label();
  for (Handler h : kHelperOrder) {
    Label l = o.text.new_label();
    o.text.bind(l);
    o.text.emit(e::movz(false, t.number_register, static_cast<std::uint16_t>(*t.number_of(h))));
    o.text.b(sys);
    o.exports.emplace_back(import_name(TzosKind::kQsee, h), l);
  }
  o.text.bind(sys);
  o.svc(0, std::nullopt);
  o.text.ret();
  o.exports.emplace_back("qsee_syscall", sys);
  auto bytes = o.finish();
  return {std::move(bytes), std::move(o)};
}

// ---------------------------------------------------------------------------
// Spec text.

std::vector<std::string> split_ws(const std::string& s) {
  std::istringstream in(s);
  std::vector<std::string> out;
  for (std::string w; in >> w;) out.push_back(w);
  return out;
}

std::uint64_t to_u64(const std::string& s, int lineno) {
  try {
    return parse_u64(s);
  } catch (const Error&) {
    invalid(fmt::format("line {}: bad number '{}'", lineno, s));
  }
}

Plan parse_plan(const std::vector<std::string>& w, int lineno) {
  if (w.empty()) invalid(fmt::format("line {}: empty plan", lineno));
  auto need = [&](std::size_t n) {
    if (w.size() != n) invalid(fmt::format("line {}: plan {} takes {} argument(s)", lineno, w[0], n - 1));
  };
  auto u32 = [&](std::size_t i) { return static_cast<std::uint32_t>(to_u64(w[i], lineno)); };
  Plan p;
  const std::string& k = w[0];
  if (k == "echo") {
    need(1);
    p.kind = PlanKind::kEcho;
  } else if (k == "checksum") {
    need(1);
    p.kind = PlanKind::kChecksum;
  } else if (k == "device_io") {
    need(2);
    p.kind = PlanKind::kDeviceIo;
    p.path = w[1];
  } else if (k == "device_open") {
    need(3);
    p.kind = PlanKind::kDeviceOpen;
    p.path = w[1];
    p.offset = u32(2);
  } else if (k == "device_read" || k == "device_close") {
    need(2);
    p.kind = k == "device_read" ? PlanKind::kDeviceRead : PlanKind::kDeviceClose;
    p.offset = u32(1);
  } else if (k == "context_write") {
    need(3);
    p.kind = PlanKind::kContextWrite;
    p.offset = u32(1);
    p.width = u32(2);
  } else if (k == "context_read") {
    if (w.size() != 3 && !(w.size() == 4 && w[3] == "dangling"))
      invalid(fmt::format("line {}: context_read <off> <width> [dangling]", lineno));
    p.kind = PlanKind::kContextRead;
    p.offset = u32(1);
    p.width = u32(2);
    p.dangling = w.size() == 4;
  } else if (k == "set_flag" || k == "require_flag") {
    need(2);
    p.kind = k == "set_flag" ? PlanKind::kSetFlag : PlanKind::kRequireFlag;
    p.offset = u32(1);
  } else {
    invalid(fmt::format("line {}: unknown plan '{}'", lineno, k));
  }
  return p;
}

std::string format_plan(const Plan& p) {
  switch (p.kind) {
    case PlanKind::kEcho: return "echo";
    case PlanKind::kChecksum: return "checksum";
    case PlanKind::kDeviceIo: return "device_io " + p.path;
    case PlanKind::kDeviceOpen: return fmt::format("device_open {} {}", p.path, p.offset);
    case PlanKind::kDeviceRead: return fmt::format("device_read {}", p.offset);
    case PlanKind::kDeviceClose: return fmt::format("device_close {}", p.offset);
    case PlanKind::kContextWrite: return fmt::format("context_write {} {}", p.offset, p.width);
    case PlanKind::kContextRead:
      return fmt::format("context_read {} {}{}", p.offset, p.width, p.dangling ? " dangling" : "");
    case PlanKind::kSetFlag: return fmt::format("set_flag {}", p.offset);
    case PlanKind::kRequireFlag: return fmt::format("require_flag {}", p.offset);
    case PlanKind::kVuln: return "vuln";
  }
  return "?";
}

std::vector<std::uint64_t> parse_id_list(const std::string& s, int lineno) {
  std::vector<std::uint64_t> out;
  if (s == "-") return out;
  std::stringstream in(s);
  for (std::string item; std::getline(in, item, ',');)
    if (!item.empty()) out.push_back(to_u64(item, lineno));
  return out;
}

std::string join_ids(const std::vector<std::uint64_t>& ids, const char* sep = ",") {
  std::string out;
  for (std::size_t i = 0; i < ids.size(); ++i) out += (i ? sep : "") + std::to_string(ids[i]);
  return out;
}

}  // namespace

std::string_view to_string(DispatchStyle d) { return d == DispatchStyle::kIfElse ? "if_else" : "jump_table"; }

std::string_view to_string(VulnKind v) {
  switch (v) {
    case VulnKind::kStackOverflow: return "STACK_OVERFLOW";
    case VulnKind::kOobWrite: return "OOB_WRITE";
    case VulnKind::kOobRead: return "OOB_READ";
    case VulnKind::kUafStub: return "UAF_STUB";
  }
  return "?";
}

std::optional<VulnKind> parse_vuln_kind(std::string_view s) {
  std::string up(s);
  for (auto& ch : up) ch = static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
  for (auto k : {VulnKind::kStackOverflow, VulnKind::kOobWrite, VulnKind::kOobRead, VulnKind::kUafStub})
    if (to_string(k) == up) return k;
  return std::nullopt;
}

std::string_view vuln_fault_kind(VulnKind v) {
  return (v == VulnKind::kOobRead || v == VulnKind::kUafStub) ? "OOB_READ" : "OOB_WRITE";
}

TaSpec parse_spec(std::string_view text) {
  TaSpec s;
  std::istringstream in{std::string(text)};
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto h = line.find('#'); h != std::string::npos) line.resize(h);
    auto w = split_ws(line);
    if (w.empty()) continue;
    const std::string& k = w[0];
    auto one = [&]() -> const std::string& {
      if (w.size() != 2) invalid(fmt::format("line {}: {} takes one value", lineno, k));
      return w[1];
    };
    if (k == "profile") {
      auto p = parse_tzos(one());
      if (!p) invalid(fmt::format("line {}: unknown profile {}", lineno, w[1]));
      s.profile = *p;
    } else if (k == "width") {
      const auto v = to_u64(one(), lineno);
      if (v != 32 && v != 64) invalid(fmt::format("line {}: width must be 32 or 64", lineno));
      s.width = v == 32 ? WordWidth::kW32 : WordWidth::kW64;
    } else if (k == "dispatch") {
      if (one() == "if_else") s.dispatch = DispatchStyle::kIfElse;
      else if (w[1] == "jump_table") s.dispatch = DispatchStyle::kJumpTable;
      else invalid(fmt::format("line {}: unknown dispatch style {}", lineno, w[1]));
    } else if (k == "decoys") {
      s.decoys = to_u64(one(), lineno);
    } else if (k == "branch_mix") {
      try {
        s.branch_mix = std::stod(one());
      } catch (const std::exception&) {
        invalid(fmt::format("line {}: bad branch_mix", lineno));
      }
    } else if (k == "seed") {
      s.seed = to_u64(one(), lineno);
    } else if (k == "name") {
      s.name = one();
    } else if (k == "command") {
      if (w.size() < 3) invalid(fmt::format("line {}: command <id> <plan>", lineno));
      CommandSpec c;
      c.id = to_u64(w[1], lineno);
      std::vector<std::string> cur;
      for (std::size_t i = 2; i <= w.size(); ++i) {
        if (i == w.size() || w[i] == "+") {
          c.plans.push_back(parse_plan(cur, lineno));
          cur.clear();
        } else {
          cur.push_back(w[i]);
        }
      }
      s.commands.push_back(c);
    } else if (k == "vuln") {
      if (w.size() != 5 || w[3] != "guard") invalid(fmt::format("line {}: vuln <kind> <id> guard <ids>", lineno));
      auto kind = parse_vuln_kind(w[1]);
      if (!kind) invalid(fmt::format("line {}: unknown vulnerability kind {}", lineno, w[1]));
      s.vulns.push_back({*kind, to_u64(w[2], lineno), parse_id_list(w[4], lineno)});
    } else {
      invalid(fmt::format("line {}: unknown directive {}", lineno, k));
    }
  }
  return s;
}

std::string format_spec(const TaSpec& s) {
  std::string out;
  out += fmt::format("name {}\nprofile {}\nwidth {}\ndispatch {}\ndecoys {}\nbranch_mix {}\nseed {}\n", s.name,
                     to_string(s.profile), static_cast<int>(s.width), to_string(s.dispatch), s.decoys,
                     s.branch_mix, s.seed);
  for (const auto& c : s.commands) {
    out += fmt::format("command {}", c.id);
    for (std::size_t i = 0; i < c.plans.size(); ++i) out += (i ? " + " : " ") + format_plan(c.plans[i]);
    out += "\n";
  }
  for (const auto& v : s.vulns) {
    std::string kind(to_string(v.kind));
    for (auto& ch : kind) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    out += fmt::format("vuln {} {} guard {}\n", kind, v.id, v.guard.empty() ? "-" : join_ids(v.guard));
  }
  return out;
}

void validate(const TaSpec& s) {
  if (s.commands.empty()) invalid("spec declares no commands");
  if (s.profile == TzosKind::kTrusty && s.width != WordWidth::kW64) invalid("trusty TAs are 64-bit only");
  if (s.branch_mix < 0 || s.branch_mix > 1) invalid("branch_mix must lie in [0, 1]");
  if (s.decoys > 16) invalid("at most 16 decoy switches");
  std::set<std::uint64_t> ids, all_ids;
  for (const auto& c : s.commands) {
    if (!ids.insert(c.id).second) invalid(fmt::format("duplicate command id {}", c.id));
    if (c.id > kMaxCommandId) invalid(fmt::format("command id {} exceeds {}", c.id, kMaxCommandId));
    if (c.plans.empty()) invalid(fmt::format("command {} has no plan", c.id));
    for (const auto& p : c.plans) {
      switch (p.kind) {
        case PlanKind::kDeviceIo:
        case PlanKind::kDeviceOpen:
          if (p.path.empty() || p.path.size() > 200) invalid(fmt::format("command {}: bad device path", c.id));
          if (p.kind == PlanKind::kDeviceIo) break;
          [[fallthrough]];
        case PlanKind::kDeviceRead:
        case PlanKind::kDeviceClose:
          if (p.offset < kFlagAreaEnd || p.offset + 4 > kSlotAreaEnd || p.offset % 4)
            invalid(fmt::format("command {}: fd slot {} outside [{}, {})", c.id, p.offset, kFlagAreaEnd, kSlotAreaEnd));
          break;
        case PlanKind::kContextWrite:
        case PlanKind::kContextRead:
          if (p.width == 0 || p.width > kMaxFieldWidth || p.offset + p.width > kFieldAreaEnd)
            invalid(fmt::format("command {}: field ({}, {}) out of range", c.id, p.offset, p.width));
          break;
        case PlanKind::kSetFlag:
        case PlanKind::kRequireFlag:
          if (p.offset < kFieldAreaEnd || p.offset + 4 > kFlagAreaEnd || p.offset % 4)
            invalid(fmt::format("command {}: flag {} outside [{}, {})", c.id, p.offset, kFieldAreaEnd, kFlagAreaEnd));
          break;
        case PlanKind::kVuln:
          invalid("vulnerabilities are declared with `vuln` lines");
        default:
          break;
      }
    }
  }
  all_ids = ids;
  for (const auto& v : s.vulns) {
    if (!all_ids.insert(v.id).second) invalid(fmt::format("vulnerability id {} already in use", v.id));
    if (v.id > kMaxCommandId) invalid(fmt::format("command id {} exceeds {}", v.id, kMaxCommandId));
    std::set<std::uint64_t> seen;
    for (auto g : v.guard) {
      if (!ids.count(g)) invalid(fmt::format("guard references undeclared command {}", g));
      if (!seen.insert(g).second) invalid(fmt::format("guard repeats command {}", g));
    }
  }
  if (s.dispatch == DispatchStyle::kJumpTable) {
    const auto [lo, hi] = std::minmax_element(all_ids.begin(), all_ids.end());
    if (*hi - *lo + 1 > kMaxJumpTableSpan) invalid("jump-table id span too large");
  }
  // Every read has a writer elsewhere unless marked dangling.
  for (const auto& c : s.commands) {
    for (const auto& p : c.plans) {
      if (!is_read_plan(p) || p.dangling) continue;
      bool found = false;
      for (const auto& o : s.commands)
        if (o.id != c.id)
          for (const auto& q : o.plans) found = found || (is_write_plan(q) && overlaps(p, q));
      if (!found) invalid(fmt::format("command {} reads context ({}, {}) nobody else writes", c.id, p.offset, plan_width(p)));
    }
    for (const auto& p : c.plans) {
      if (p.kind != PlanKind::kDeviceRead) continue;
      bool found = false;
      for (const auto& o : s.commands)
        for (const auto& q : o.plans) found = found || (q.kind == PlanKind::kDeviceOpen && q.offset == p.offset);
      if (!found) invalid(fmt::format("command {} reads fd slot {} nobody opens", c.id, p.offset));
    }
  }
  const Expanded x = expand(s);
  if (has_cycle(truth_edges(x.commands))) invalid("dependency graph has a cycle");
}

TaSpec plant_vulnerability(const TaSpec& spec, VulnKind kind, const std::vector<std::uint64_t>& guard,
                           std::optional<std::uint64_t> id) {
  TaSpec out = spec;
  if (!id) {
    std::uint64_t max_id = 0;
    for (const auto& c : spec.commands) max_id = std::max(max_id, c.id);
    for (const auto& v : spec.vulns) max_id = std::max(max_id, v.id);
    id = max_id + 1;
  }
  out.vulns.push_back({kind, *id, guard});
  validate(out);
  return out;
}

TaSpec hdcp_spec(TzosKind profile, WordWidth width) {
  TaSpec s = parse_spec(
      "name hdcp\n"
      "dispatch if_else\n"
      "decoys 1\n"
      "branch_mix 0.571\n"
      "seed 2202\n"
      "command 202 set_flag 512 + context_write 0 16\n"
      "command 222 require_flag 512 + context_read 0 16 + context_read 16 16 + device_read 768\n"
      "command 230 device_open dev://crypto 768\n"
      "command 231 device_close 768\n"
      "command 251 context_write 32 16\n"
      "command 252 context_write 16 16\n");
  s.profile = profile;
  s.width = profile == TzosKind::kTrusty ? WordWidth::kW64 : width;
  return s;
}

TaSpec random_spec(TzosKind profile, DispatchStyle dispatch, std::uint64_t seed, const RandomSpecOptions& opts) {
  std::mt19937_64 rng(seed * 0x9E3779B97F4A7C15ull + 17);
  TaSpec s;
  s.name = fmt::format("ta_{}_{}", to_string(profile), seed);
  s.profile = profile;
  s.width = (profile == TzosKind::kTrusty || rng() % 3) ? WordWidth::kW64 : WordWidth::kW32;
  s.dispatch = dispatch;
  s.decoys = 1 + rng() % 2;
  s.branch_mix = 0.45 + static_cast<double>(rng() % 31) / 100.0;
  s.seed = seed;

  const std::size_t n = uniform(rng, opts.min_commands, opts.max_commands);
  std::set<std::uint64_t> ids;
  const std::uint64_t base = uniform(rng, 1, 3000);
  while (ids.size() < n) {
    const std::uint64_t id = dispatch == DispatchStyle::kJumpTable ? base + rng() % (3 * n) : uniform(rng, 1, kMaxCommandId - 8);
    ids.insert(id);
  }
  std::vector<std::uint64_t> order(ids.begin(), ids.end());
  std::shuffle(order.begin(), order.end(), rng);  // dependency order: writers before readers
  std::map<std::uint64_t, CommandSpec> cmds;
  for (auto id : order) cmds[id].id = id;

  // Context fields: each written by one command and read by later ones.
  const std::size_t nfields = rng() % 4;
  for (std::size_t f = 0; f < nfields && n >= 2; ++f) {
    const std::uint32_t off = static_cast<std::uint32_t>(f * 64 + 16 * (rng() % 2));
    const std::uint32_t width = std::array<std::uint32_t, 3>{4, 8, 16}[rng() % 3];
    const std::size_t w = rng() % (n - 1);
    const std::size_t r = w + 1 + rng() % (n - 1 - w);
    cmds[order[w]].plans.push_back({PlanKind::kContextWrite, "", off, width});
    cmds[order[r]].plans.push_back({PlanKind::kContextRead, "", off, width});
  }
  if (rng() % 2) {  // a field nobody writes
    Plan p{PlanKind::kContextRead, "", 400, 8, true};
    cmds[order[rng() % n]].plans.push_back(p);
  }
  // Device handles kept in the context across commands.
  const std::size_t ndev = n >= 2 ? rng() % 3 : 0;
  for (std::size_t d = 0; d < ndev; ++d) {
    const std::uint32_t slot = kFlagAreaEnd + 4 * static_cast<std::uint32_t>(d);
    const std::string path = fmt::format("dev://dev{}", d);
    const std::size_t o = rng() % (n - 1);
    const std::size_t r = o + 1 + rng() % (n - 1 - o);
    cmds[order[o]].plans.push_back({PlanKind::kDeviceOpen, path, slot});
    cmds[order[r]].plans.push_back({PlanKind::kDeviceRead, "", slot});
    if (rng() % 2) cmds[order[r]].plans.push_back({PlanKind::kDeviceClose, "", slot});
  }
  if (rng() % 2) cmds[order[rng() % n]].plans.push_back({PlanKind::kDeviceIo, "dev://self"});
  for (auto& [id, c] : cmds) {
    if (c.plans.empty() || rng() % 3 == 0)
      c.plans.insert(c.plans.begin(), plan_of(rng() % 2 ? PlanKind::kEcho : PlanKind::kChecksum));
    s.commands.push_back(c);
  }
  std::shuffle(s.commands.begin(), s.commands.end(), rng);

  if (opts.with_vuln) {
    const auto kind = static_cast<VulnKind>(rng() % 4);
    std::vector<std::uint64_t> guard;
    const std::size_t g = rng() % std::min<std::size_t>(4, n + 1);
    for (std::size_t i = 0; i < g; ++i) guard.push_back(order[i]);
    std::uint64_t vid = dispatch == DispatchStyle::kJumpTable ? base + 3 * n : *ids.rbegin() + 1;
    while (ids.count(vid)) ++vid;
    s.vulns.push_back({kind, vid, guard});
  }
  validate(s);
  return s;
}

// ---------------------------------------------------------------------------
// Manifest text.

std::string format_manifest(const Manifest& m) {
  std::string o;
  o += fmt::format("[ta]\nname {}\nprofile {}\nwidth {}\ndispatch {}\nseed {}\nuuid {}\n", m.name,
                   to_string(m.profile), static_cast<int>(m.width), to_string(m.dispatch), m.seed, m.uuid);
  o += "[entry]\n";
  for (const auto& [role, off] : m.entries) o += fmt::format("{} {}\n", role, hex(off));
  o += "[commands]\n";
  for (const auto& c : m.commands)
    o += fmt::format("{} case {} handler {}\n", c.id, hex(c.case_offset), hex(c.handler_offset));
  o += fmt::format("default {}\n", hex(m.default_offset));
  o += "[decoys]\n";
  for (auto v : m.decoy_values) o += fmt::format("{}\n", v);
  for (const auto& [obj, sites] : m.svc) {
    o += obj == "ta" ? "[svc]\n" : fmt::format("[svc {}]\n", obj);
    for (const auto& s : sites) o += fmt::format("{} {}\n", hex(s.offset), s.number ? std::to_string(*s.number) : "reg");
  }
  o += "[dependencies]\n";
  for (const auto& d : m.dependencies) o += fmt::format("{} {} {}\n", d.from, d.to, d.kind);
  o += "[fields]\n";
  for (const auto& f : m.fields)
    o += fmt::format("{} {} writers {} readers {}\n", f.offset, f.width, f.writers.empty() ? "-" : join_ids(f.writers),
                     f.readers.empty() ? "-" : join_ids(f.readers));
  o += "[vulns]\n";
  for (const auto& v : m.vulns)
    o += fmt::format("{} {} trigger {} fault {}\n", to_string(v.kind), v.id, join_ids(v.trigger), hex(v.fault_offset));
  o += "[devices]\n";
  for (const auto& d : m.devices) o += d + "\n";
  o += fmt::format("[cfg]\nblocks {}\nedges {}\n", m.cfg_blocks, m.cfg_edges);
  o += fmt::format("[branches]\nsimple {}\ncomplex {}\n", m.branches_simple, m.branches_complex);
  o += "[needed]\n";
  for (const auto& n : m.needed) o += n + "\n";
  for (const auto& [lib, table] : m.exports) {
    o += fmt::format("[exports {}]\n", lib);
    for (const auto& [sym, off] : table) o += fmt::format("{} {}\n", sym, hex(off));
  }
  return o;
}

Manifest parse_manifest(std::string_view text) {
  Manifest m;
  std::istringstream in{std::string(text)};
  std::string line, section, arg;
  int lineno = 0;
  auto bad = [&](const std::string& why) { throw Error(ErrorCode::kIo, fmt::format("manifest line {}: {}", lineno, why)); };
  auto num = [&](const std::string& s) {
    try {
      return parse_u64(s);
    } catch (const Error&) {
      bad("bad number " + s);
    }
    return std::uint64_t{0};
  };
  auto ids = [&](const std::string& s) {
    std::vector<std::uint64_t> out;
    if (s == "-") return out;
    std::stringstream ss(s);
    for (std::string item; std::getline(ss, item, ',');) out.push_back(num(item));
    return out;
  };
  while (std::getline(in, line)) {
    ++lineno;
    auto w = split_ws(line);
    if (w.empty()) continue;
    if (w[0].front() == '[') {
      std::string h = line.substr(line.find('[') + 1, line.find(']') - line.find('[') - 1);
      auto parts = split_ws(h);
      section = parts.at(0);
      arg = parts.size() > 1 ? parts[1] : "";
      if (section == "svc") m.svc[arg.empty() ? "ta" : arg];
      if (section == "exports") m.exports[arg];
      continue;
    }
    if (section == "ta") {
      if (w.size() != 2) bad("expected key value");
      if (w[0] == "name") m.name = w[1];
      else if (w[0] == "profile") m.profile = parse_tzos(w[1]).value_or(TzosKind::kOptee);
      else if (w[0] == "width") m.width = num(w[1]) == 32 ? WordWidth::kW32 : WordWidth::kW64;
      else if (w[0] == "dispatch") m.dispatch = w[1] == "jump_table" ? DispatchStyle::kJumpTable : DispatchStyle::kIfElse;
      else if (w[0] == "seed") m.seed = num(w[1]);
      else if (w[0] == "uuid") m.uuid = w[1];
    } else if (section == "entry") {
      if (w.size() != 2) bad("expected role offset");
      m.entries[w[0]] = num(w[1]);
    } else if (section == "commands") {
      if (w[0] == "default" && w.size() == 2) {
        m.default_offset = num(w[1]);
      } else {
        if (w.size() != 5) bad("expected <id> case <off> handler <off>");
        m.commands.push_back({num(w[0]), num(w[2]), num(w[4])});
      }
    } else if (section == "decoys") {
      m.decoy_values.push_back(num(w[0]));
    } else if (section == "svc") {
      if (w.size() != 2) bad("expected offset number");
      m.svc[arg.empty() ? "ta" : arg].push_back(
          {num(w[0]), w[1] == "reg" ? std::nullopt : std::optional<std::uint64_t>(num(w[1]))});
    } else if (section == "dependencies") {
      if (w.size() != 3) bad("expected from to kind");
      m.dependencies.push_back({num(w[0]), num(w[1]), w[2]});
    } else if (section == "fields") {
      if (w.size() != 6) bad("expected off width writers ids readers ids");
      m.fields.push_back({static_cast<std::uint32_t>(num(w[0])), static_cast<std::uint32_t>(num(w[1])), ids(w[3]), ids(w[5])});
    } else if (section == "vulns") {
      if (w.size() != 6) bad("expected kind id trigger ids fault off");
      auto kind = parse_vuln_kind(w[0]);
      if (!kind) bad("unknown vulnerability kind");
      m.vulns.push_back({*kind, num(w[1]), ids(w[3]), num(w[5])});
    } else if (section == "devices") {
      m.devices.push_back(w[0]);
    } else if (section == "cfg") {
      if (w[0] == "blocks") m.cfg_blocks = num(w.at(1));
      if (w[0] == "edges") m.cfg_edges = num(w.at(1));
    } else if (section == "branches") {
      if (w[0] == "simple") m.branches_simple = num(w.at(1));
      if (w[0] == "complex") m.branches_complex = num(w.at(1));
    } else if (section == "needed") {
      m.needed.push_back(w[0]);
    } else if (section == "exports") {
      if (w.size() != 2) bad("expected symbol offset");
      m.exports[arg][w[0]] = num(w[1]);
    } else {
      bad("line outside a known section");
    }
  }
  return m;
}

Generated generate(const TaSpec& spec) {
  validate(spec);
  const Expanded x = expand(spec);

  // First pass measures the natural branch mix, second adds fillers to
  // bring the simple fraction within one point of the target.
  TaBuild probe = TaGenerator(spec, x, {}).build();
  FillerPlan fill;
  std::size_t s = probe.cfg.cond_simple, c = probe.cfg.cond_complex;
  for (int guard = 0; guard < 100000; ++guard) {
    const double frac = static_cast<double>(s) / static_cast<double>(std::max<std::size_t>(s + c, 1));
    if (s + c > 0 && std::abs(frac - spec.branch_mix) <= 0.01) break;
    if (frac < spec.branch_mix) {
      ++s;
      ++fill.simple;
    } else {
      ++c;
      ++fill.complex;
    }
  }
  TaBuild final_build = TaGenerator(spec, x, fill).build();

  Generated g;
  g.elf = std::move(final_build.elf);
  g.manifest = std::move(final_build.manifest);
  if (spec.profile == TzosKind::kTeegris) {
    auto [tz, tzo] = build_libtzsl(spec.width);
    auto [sc, sco] = build_libscrypto(spec.width);
    g.manifest.svc[kLibTzsl] = tzo.svc_info();
    g.manifest.exports[kLibTzsl] = tzo.export_table();
    g.manifest.exports[kLibScrypto] = sco.export_table();
    g.libraries.emplace_back(kLibTzsl, std::move(tz));
    g.libraries.emplace_back(kLibScrypto, std::move(sc));
  } else if (spec.profile == TzosKind::kQsee) {
    auto [cmb, cmbo] = build_cmblib(spec.width);
    g.manifest.svc[kCmbLib] = cmbo.svc_info();
    g.manifest.exports[kCmbLib] = cmbo.export_table();
    g.libraries.emplace_back(kCmbLib, std::move(cmb));
  }
  return g;
}

DeviceScript default_devices(const Manifest& m, std::size_t responses) {
  DeviceScript s;
  for (const auto& d : m.devices)
    s.devices.emplace_back(d, std::vector<ScriptEntry>(responses, ScriptEntry{{0x11, 0x22, 0x33, 0x44}, 0}));
  return s;
}

}  // namespace taforge::gen

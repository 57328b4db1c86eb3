#include "taforge/assembler.hpp"

#include <algorithm>
#include <cstring>
#include <map>
#include <set>
#include <tuple>

#include "taforge/error.hpp"

namespace taforge::gen {

Label Assembler::new_label() {
  addrs_.emplace_back();
  return static_cast<Label>(addrs_.size() - 1);
}

void Assembler::bind(Label l) { bind_at(l, here()); }

void Assembler::bind_at(Label l, Address a) {
  if (addrs_.at(l)) throw Error(ErrorCode::kSpecInvalid, "label bound twice");
  addrs_[l] = a;
}

Address Assembler::address(Label l) const {
  const auto& a = addrs_.at(l);
  if (!a) throw Error(ErrorCode::kSpecInvalid, "unbound label");
  return *a;
}

void Assembler::emit(std::uint32_t word) { insns_.push_back({word}); }

void Assembler::b(Label l) { insns_.push_back({0, Flow::kB, Fix::kB, l}); }
void Assembler::bl(Label l) { insns_.push_back({0, Flow::kBl, Fix::kBl, l}); }

void Assembler::b_cond(std::uint8_t cond, Label l, bool complex) {
  insns_.push_back({cond, Flow::kCond, Fix::kCond, l, complex});
}

void Assembler::cbz(bool sf, std::uint8_t rt, Label l, bool complex) {
  insns_.push_back({static_cast<std::uint32_t>(rt | (sf ? 0x100 : 0)), Flow::kCond, Fix::kCbz, l, complex});
}

void Assembler::cbnz(bool sf, std::uint8_t rt, Label l, bool complex) {
  insns_.push_back({static_cast<std::uint32_t>(rt | (sf ? 0x100 : 0)), Flow::kCond, Fix::kCbnz, l, complex});
}

void Assembler::adr(std::uint8_t rd, Label l) { insns_.push_back({rd, Flow::kPlain, Fix::kAdr, l}); }

void Assembler::br_table(std::uint8_t rn, std::vector<Label> targets) {
  Insn i{isa::enc::br(rn), Flow::kTable};
  i.table = std::move(targets);
  insns_.push_back(std::move(i));
}

void Assembler::br(std::uint8_t rn) { insns_.push_back({isa::enc::br(rn), Flow::kIndirect}); }
void Assembler::ret() { insns_.push_back({isa::enc::ret(), Flow::kRet}); }
void Assembler::brk(std::uint16_t imm) { insns_.push_back({isa::enc::brk(imm), Flow::kStop}); }

std::uint32_t Assembler::encode(std::size_t index) const {
  const Insn& i = insns_[index];
  if (i.fix == Fix::kNone) return i.word;
  const Address pc = origin_ + 4 * index;
  const auto off = static_cast<std::int64_t>(address(i.target) - pc);
  auto check = [&](std::int64_t limit) {
    if (off < -limit || off >= limit) throw Error(ErrorCode::kSpecInvalid, "branch offset out of range");
  };
  switch (i.fix) {
    case Fix::kB: check(1ll << 27); return isa::enc::b(off);
    case Fix::kBl: check(1ll << 27); return isa::enc::bl(off);
    case Fix::kCond: check(1ll << 20); return isa::enc::b_cond(static_cast<std::uint8_t>(i.word), off);
    case Fix::kCbz:
      check(1ll << 20);
      return isa::enc::cbz(i.word & 0x100, static_cast<std::uint8_t>(i.word & 0x1F), off);
    case Fix::kCbnz:
      check(1ll << 20);
      return isa::enc::cbnz(i.word & 0x100, static_cast<std::uint8_t>(i.word & 0x1F), off);
    case Fix::kAdr: check(1ll << 20); return isa::enc::adr(static_cast<std::uint8_t>(i.word), off);
    case Fix::kNone: break;
  }
  return i.word;
}

std::vector<std::uint8_t> Assembler::assemble() const {
  std::vector<std::uint8_t> out(4 * insns_.size());
  for (std::size_t i = 0; i < insns_.size(); ++i) {
    const std::uint32_t w = encode(i);
    std::memcpy(out.data() + 4 * i, &w, 4);
  }
  return out;
}

CfgSummary Assembler::cfg_summary() const {
  const std::size_t n = insns_.size();
  auto index_of = [&](Label l) -> std::optional<std::size_t> {
    const Address a = address(l);
    if (a < origin_ || a >= here() || (a - origin_) % 4) return std::nullopt;
    return (a - origin_) / 4;
  };

  std::set<std::size_t> leaders;
  if (n) leaders.insert(0);
  for (std::size_t i = 0; i < n; ++i) {
    const Insn& in = insns_[i];
    if (in.flow == Flow::kPlain) continue;
    if (i + 1 < n) leaders.insert(i + 1);
    if (in.flow == Flow::kB || in.flow == Flow::kBl || in.flow == Flow::kCond)
      if (auto t = index_of(in.target)) leaders.insert(*t);
    for (Label l : in.table)
      if (auto t = index_of(l)) leaders.insert(*t);
  }
  auto block_of = [&](std::size_t i) { return *std::prev(leaders.upper_bound(i)); };

  // Edge kinds mirror the analyzer: 0 fallthrough, 1 cond, 2 uncond, 3 call, 4 ret, 5 indirect.
  std::set<std::tuple<std::size_t, std::size_t, int>> edges;
  std::map<std::size_t, std::vector<std::pair<std::size_t, int>>> succ;  // intra-procedural
  std::map<std::size_t, std::vector<std::size_t>> callers;               // callee -> call insn
  std::size_t cond_simple = 0, cond_complex = 0;
  for (auto it = leaders.begin(); it != leaders.end(); ++it) {
    const std::size_t start = *it;
    const std::size_t end = std::next(it) == leaders.end() ? n : *std::next(it);
    const std::size_t last = end - 1;
    const Insn& in = insns_[last];
    auto add = [&](std::size_t dst, int kind) {
      edges.insert({start, dst, kind});
      if (kind != 3) succ[start].push_back({dst, kind});
    };
    switch (in.flow) {
      case Flow::kPlain:
        if (end < n) add(end, 0);
        break;
      case Flow::kB:
        if (auto t = index_of(in.target)) add(*t, 2);
        break;
      case Flow::kBl:
        if (auto t = index_of(in.target)) {
          add(*t, 3);
          callers[*t].push_back(last);
        }
        if (end < n) add(end, 0);
        break;
      case Flow::kCond:
        (in.complex ? cond_complex : cond_simple)++;
        if (auto t = index_of(in.target)) add(*t, 1);
        if (end < n) add(end, 0);
        break;
      case Flow::kTable:
        for (Label l : in.table)
          if (auto t = index_of(l)) add(*t, 5);
        break;
      case Flow::kIndirect:
      case Flow::kRet:
      case Flow::kStop:
        break;
    }
  }
  for (const auto& [callee, sites] : callers) {
    std::set<std::size_t> seen{callee};
    std::vector<std::size_t> work{callee};
    while (!work.empty()) {
      const std::size_t b = work.back();
      work.pop_back();
      for (const auto& [dst, kind] : succ[b])
        if (seen.insert(dst).second) work.push_back(dst);
    }
    for (std::size_t b : seen) {
      auto next = leaders.upper_bound(b);
      const std::size_t last = (next == leaders.end() ? n : *next) - 1;
      if (insns_[last].flow != Flow::kRet) continue;
      for (std::size_t site : sites)
        if (site + 1 < n) edges.insert({b, block_of(site + 1), 4});
    }
  }
  return {leaders.size(), edges.size(), cond_simple, cond_complex};
}

}  // namespace taforge::gen

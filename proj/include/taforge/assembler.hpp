#pragma once

// Label-based assembler for the ISA subset. Besides the encoded words it
// keeps the symbolic control flow of what it emitted, so generated images
// carry an independent CFG ground truth (block/edge counts and the
// simple/complex label of every conditional branch).

#include <cstdint>
#include <optional>
#include <vector>

#include "taforge/isa.hpp"
#include "taforge/types.hpp"

namespace taforge::gen {

using Label = std::uint32_t;

enum class Flow : std::uint8_t { kPlain, kB, kBl, kCond, kTable, kIndirect, kRet, kStop };

struct CfgSummary {
  std::size_t blocks = 0;
  std::size_t edges = 0;
  std::size_t cond_simple = 0;
  std::size_t cond_complex = 0;
};

class Assembler {
 public:
  explicit Assembler(Address origin) : origin_(origin) {}

  Label new_label();
  void bind(Label l);
  // Binds a label outside the emitted code (data, other objects).
  void bind_at(Label l, Address a);
  bool bound(Label l) const { return addrs_.at(l).has_value(); }
  Address address(Label l) const;
  Address here() const { return origin_ + 4 * insns_.size(); }
  Address origin() const { return origin_; }
  std::size_t size_bytes() const { return 4 * insns_.size(); }

  void emit(std::uint32_t word);
  void b(Label l);
  void bl(Label l);
  void b_cond(std::uint8_t cond, Label l, bool complex = false);
  void cbz(bool sf, std::uint8_t rt, Label l, bool complex = false);
  void cbnz(bool sf, std::uint8_t rt, Label l, bool complex = false);
  void adr(std::uint8_t rd, Label l);
  // Register-indirect branch through a jump table with the given targets.
  void br_table(std::uint8_t rn, std::vector<Label> targets);
  // Register-indirect branch with no statically known target.
  void br(std::uint8_t rn);
  void ret();
  void brk(std::uint16_t imm);

  // Resolves every fixup; throws Error(SPEC_INVALID) on unbound labels or
  // out-of-range offsets.
  std::vector<std::uint8_t> assemble() const;
  CfgSummary cfg_summary() const;

 private:
  enum class Fix : std::uint8_t { kNone, kB, kBl, kCond, kCbz, kCbnz, kAdr };
  struct Insn {
    std::uint32_t word = 0;
    Flow flow = Flow::kPlain;
    Fix fix = Fix::kNone;
    Label target = 0;
    bool complex = false;
    std::vector<Label> table;
  };
  std::uint32_t encode(std::size_t index) const;

  Address origin_;
  std::vector<Insn> insns_;
  std::vector<std::optional<Address>> addrs_;
};

}  // namespace taforge::gen

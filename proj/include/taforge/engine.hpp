#pragma once

// Deterministic interpreter for the A64 subset in isa.hpp, with a taken-branch
// trace, region-granular fault detection and snapshot/restore.

#include <array>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "taforge/vas.hpp"

namespace taforge {

enum class FaultKind : std::uint8_t { kOobRead, kOobWrite, kExecNx, kUnaligned, kIllegalInsn, kDivZero };
std::string_view to_string(FaultKind k);
std::optional<FaultKind> parse_fault_kind(std::string_view s);

struct Fault {
  FaultKind kind = FaultKind::kIllegalInsn;
  Address pc = 0;
  std::optional<Address> access_addr;

  bool operator==(const Fault&) const = default;
};

enum class ExitKind : std::uint8_t { kReturned, kFault, kBudgetExhausted };
std::string_view to_string(ExitKind k);

struct ExitStatus {
  ExitKind kind = ExitKind::kReturned;
  std::uint64_t return_value = 0;
  std::optional<Fault> fault;

  bool operator==(const ExitStatus&) const = default;
};

enum class EdgeKind : std::uint8_t { kCondTaken = 0, kUncond = 1, kCall = 2, kRet = 3, kTrap = 4 };
std::string_view to_string(EdgeKind k);
std::optional<EdgeKind> parse_edge_kind(std::string_view s);

struct BranchEvent {
  Address source = 0;
  Address target = 0;
  EdgeKind kind = EdgeKind::kUncond;

  bool operator==(const BranchEvent&) const = default;
};

// Address predicate restricting recorded events. The return sentinel is
// always admitted so host-boundary CALL/RET events survive filtering.
class AddressFilter {
 public:
  AddressFilter() = default;
  void add_range(Address lo, Address hi) { ranges_.emplace_back(lo, hi); }
  bool admit(Address a) const {
    if (a == kReturnSentinel) return true;
    for (const auto& [lo, hi] : ranges_)
      if (a >= lo && a < hi) return true;
    return false;
  }
  // Every X region of the address space.
  static AddressFilter code_of(const AddressSpace& vas);

 private:
  std::vector<std::pair<Address, Address>> ranges_;
};

struct BranchTrace {
  std::vector<BranchEvent> events;
};

// Text: `0xSRC 0xDST KIND` per line. Binary: 17-byte little-endian records.
void write_trace_text(std::ostream& out, const BranchTrace& t);
void write_trace_binary(std::ostream& out, const BranchTrace& t);
// Detects the format from the content. Throws Error(IO) on malformed input.
BranchTrace read_trace(std::span<const std::uint8_t> bytes);

enum class AccessKind : std::uint8_t { kRead, kWrite, kFetch };

class Machine;

// Host side of svc (direct trap) and hvc (trampoline hostcall).
class TrapHandler {
 public:
  virtual ~TrapHandler() = default;
  virtual std::optional<Fault> on_svc(Machine& m, Address pc, std::uint16_t imm) = 0;
  virtual std::optional<Fault> on_hostcall(Machine& m, Address pc, std::uint16_t imm) = 0;
};

struct MachineSnapshot {
  std::array<std::uint64_t, 31> x{};
  std::uint64_t sp = 0;
  std::uint64_t pc = 0;
  std::uint8_t nzcv = 0;
  std::uint64_t instret = 0;
  VasSnapshot vas;

  bool operator==(const MachineSnapshot&) const = default;
};

class Machine {
 public:
  Machine(AddressSpace& vas, Address stack_top);

  std::array<std::uint64_t, 31> x{};
  std::uint64_t sp = 0;
  std::uint64_t pc = 0;
  std::uint8_t nzcv = 0;
  std::uint64_t instret = 0;

  AddressSpace& vas() { return vas_; }
  const AddressSpace& vas() const { return vas_; }
  WordWidth width() const { return vas_.width(); }
  std::uint64_t mask() const { return mask_; }
  Address stack_top() const { return stack_top_; }

  // Runs `fn` with args in x0..x7, LR = return sentinel and SP = stack top,
  // until the sentinel is reached, a fault occurs or `budget` instructions ran.
  ExitStatus call(Address fn, std::span<const std::uint64_t> args, std::uint64_t budget,
                  BranchTrace* trace = nullptr, const AddressFilter* filter = nullptr,
                  TrapHandler* traps = nullptr);

  // Permission-checked accesses. Return false when the access would fault.
  bool load(Address a, unsigned width, std::uint64_t& out);
  bool store(Address a, unsigned width, std::uint64_t value);
  bool fetch(Address a, std::uint32_t& out);
  // Bulk copies for syscall handlers; on failure returns the first bad address.
  std::optional<Address> read_bytes(Address a, void* dst, std::uint64_t len);
  std::optional<Address> write_bytes(Address a, const void* src, std::uint64_t len);

  MachineSnapshot snapshot();
  void restore(const MachineSnapshot& s);
  // Registers (without pc/instret) plus all writable memory and the layout.
  std::uint64_t state_hash() const;

  // Drop cached region pointers (after the layout changed).
  void invalidate_caches() {
    dcache_ = nullptr;
    code_ = nullptr;
  }

 private:
  Region* data_region(Address a, unsigned width);

  AddressSpace& vas_;
  Address stack_top_;
  std::uint64_t mask_;
  Region* dcache_ = nullptr;
  Region* code_ = nullptr;
  std::shared_ptr<const std::vector<isa::Insn>> code_insns_;
};

struct AccessOutcome {
  std::optional<std::uint64_t> value;  // loaded value, or 0 for successful writes
  std::optional<FaultKind> fault;
};

AccessOutcome mem_access(Machine& m, Address addr, unsigned width, AccessKind kind,
                         std::uint64_t value = 0);

}  // namespace taforge

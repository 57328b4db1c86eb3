#pragma once

// Static analysis of a loaded TA: control-flow recovery, command-id
// enumeration from the invoke dispatcher, device and context-memory
// dependencies between commands, branch complexity and the state model the
// fuzzer schedules from.
//
// Analysis reads the image as loaded and linked. Run it before svc sites are
// rewritten (a Session rewrites its own copy).

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "taforge/isa.hpp"
#include "taforge/loader.hpp"
#include "taforge/profile.hpp"
#include "taforge/syscall.hpp"

namespace taforge::analysis {

enum class CfgEdgeKind : std::uint8_t { kFallthrough, kCond, kUncond, kCall, kRet, kIndirect };
std::string_view to_string(CfgEdgeKind k);

enum class Terminator : std::uint8_t {
  kNone,      // falls into the next block
  kBranch,    // B
  kCall,      // BL
  kCond,      // B.cond / CBZ / CBNZ
  kTable,     // BR through a recognized jump table
  kPlt,       // BR through a GOT slot (import stub)
  kIndirect,  // BR with no recovered target
  kCallIndirect,
  kRet,
  kStop,  // BRK or an undecodable word
};
std::string_view to_string(Terminator t);

struct Block {
  Address start = 0;
  Address end = 0;  // one past the last instruction
  std::vector<std::uint32_t> words;
  std::vector<isa::Insn> insns;
  Terminator term = Terminator::kNone;
  bool incomplete = false;  // ANALYSIS_INCOMPLETE: indirect branch left unresolved
  std::vector<Address> table_targets;
  std::optional<Address> table_default;  // bounds-check target of a jump table
  std::optional<Address> external_target;  // resolved import for kPlt

  Address last_pc() const { return end - 4; }
};

struct CfgEdge {
  Address src = 0;
  Address dst = 0;
  CfgEdgeKind kind = CfgEdgeKind::kFallthrough;

  auto operator<=>(const CfgEdge&) const = default;
};

struct Cfg {
  WordWidth width = WordWidth::kW64;
  std::map<Address, Block> blocks;
  std::set<CfgEdge> edges;
  std::map<Address, std::set<Address>> functions;  // entry -> blocks reachable without calls

  const Block* block_at(Address start) const;
  const Block* block_containing(Address pc) const;
  std::vector<CfgEdge> successors(Address block) const;
  std::size_t incomplete_blocks() const;
};

Cfg recover_cfg(const LoadedImage& image);

struct CommandId {
  std::uint64_t value = 0;
  Address handler_addr = 0;               // dispatcher arm
  Address dispatch_site = 0;              // compare or table branch selecting the arm
  std::optional<Address> handler_function;  // first call made by the arm
  // x0..x7 at that call when statically constant (e.g. the context pointer).
  std::array<std::optional<std::uint64_t>, 8> call_args{};

  auto operator<=>(const CommandId&) const = default;
};

struct CommandIdSet {
  std::vector<CommandId> ids;  // sorted by value
  std::optional<Address> default_handler;
  // Constants compared against values not derived from the command id.
  std::vector<std::uint64_t> excluded;

  std::vector<std::uint64_t> values() const;
  const CommandId* find(std::uint64_t value) const;
};

CommandIdSet enumerate_command_ids(const Cfg& cfg, const LoadedImage& image, const TzosProfile& profile,
                                   Address invoke_entry);

enum class DepKind : std::uint8_t { kDeviceFd, kContextMemory };
std::string_view to_string(DepKind k);

struct DepEdge {
  std::uint64_t from = 0;
  std::uint64_t to = 0;
  DepKind kind = DepKind::kContextMemory;

  auto operator<=>(const DepEdge&) const = default;
};

struct ContextField {
  std::uint64_t offset = 0;
  std::uint64_t width = 0;
  std::vector<std::uint64_t> writers;
  std::vector<std::uint64_t> readers;

  bool operator==(const ContextField&) const = default;
};

struct DependencyGraph {
  std::vector<std::uint64_t> nodes;
  std::vector<DepEdge> edges;  // sorted
  std::vector<ContextField> context_fields;
  std::optional<Address> context_base;
};

std::vector<DepEdge> analyze_device_dependencies(const Cfg& cfg, const LoadedImage& image,
                                                 const TzosProfile& profile, const CommandIdSet& ids);

struct MemoryDependencies {
  std::vector<DepEdge> edges;
  std::vector<ContextField> fields;
  std::optional<Address> context_base;
};
MemoryDependencies analyze_memory_dependencies(const Cfg& cfg, const LoadedImage& image,
                                               const TzosProfile& profile, const CommandIdSet& ids);

DependencyGraph build_dependency_graph(const Cfg& cfg, const LoadedImage& image, const TzosProfile& profile,
                                       const CommandIdSet& ids);

enum class BranchLabel : std::uint8_t { kSimple, kComplex };
std::string_view to_string(BranchLabel l);

struct BranchComplexity {
  std::map<Address, BranchLabel> labels;  // COND block -> label
  std::size_t simple = 0;
  std::size_t complex = 0;
  double simple_fraction = 0;
  double complex_fraction = 0;
};

BranchComplexity classify_branches(const Cfg& cfg, const LoadedImage& image, const TzosProfile& profile);

// Per command, its prerequisite commands in a dependency-respecting order.
// prefixes[c].front() is the canonical order (Kahn, smallest id first); the
// rest are other linear extensions, up to kMaxPrefixOrders in total.
struct StateModel {
  std::map<std::uint64_t, std::vector<std::vector<std::uint64_t>>> prefixes;

  const std::vector<std::uint64_t>& canonical(std::uint64_t cmd) const;
  bool operator==(const StateModel&) const = default;
};
inline constexpr std::size_t kMaxPrefixOrders = 64;

// Throws Error(CYCLE_DETECTED) when the dependency graph has a cycle.
StateModel build_state_model(const DependencyGraph& graph);

// `cmd <id>: prereqs <id>,<id>,...` one line per command, canonical order.
std::string format_state_model(const StateModel& m);
StateModel parse_state_model(std::string_view text);

struct AnalysisReport {
  Cfg cfg;
  CommandIdSet ids;
  DependencyGraph graph;
  BranchComplexity branches;
  StateModel model;
};

AnalysisReport analyze(const LoadedImage& image, const TzosProfile& profile);
std::string format_report(const AnalysisReport& r, Address image_base);

}  // namespace taforge::analysis

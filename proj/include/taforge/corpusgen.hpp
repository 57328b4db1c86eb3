#pragma once

// Synthetic TA generator. Emits ELF images in the ISA subset for every TZOS
// profile together with a manifest recording the ground truth (command ids,
// svc sites, dependencies, planted vulnerabilities, CFG size).
//
// TaSpec text grammar, one directive per line (`#` starts a comment):
//
//   profile optee|teegris|qsee|trusty
//   width 32|64
//   dispatch if_else|jump_table
//   decoys <n>
//   branch_mix <simple fraction>
//   seed <n>
//   name <identifier>
//   command <id> <plan> [+ <plan>]...
//   vuln <stack_overflow|oob_write|oob_read|uaf_stub> <id> guard <id>[,<id>]...
//
// Plans (offsets are into the TA's context object):
//
//   echo | checksum | device_io <path>
//   device_open <path> <slot> | device_read <slot> | device_close <slot>
//   context_write <off> <width> | context_read <off> <width> [dangling]
//   set_flag <off> | require_flag <off>

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "taforge/profile.hpp"
#include "taforge/syscall.hpp"
#include "taforge/types.hpp"

namespace taforge::gen {

// Context object layout.
inline constexpr std::uint32_t kContextSize = 1024;
inline constexpr std::uint32_t kFieldAreaEnd = 512;   // data fields: [0, 512)
inline constexpr std::uint32_t kFlagAreaEnd = 768;    // guard flags: [512, 768)
inline constexpr std::uint32_t kSlotAreaEnd = 960;    // fd slots: [768, 960)
inline constexpr std::uint32_t kFillerField = 960;    // read by complex filler branches
inline constexpr std::uint32_t kMaxFieldWidth = 64;
inline constexpr std::uint64_t kMaxCommandId = 4095;
inline constexpr std::uint64_t kMaxJumpTableSpan = 512;
// Payload byte 0 must exceed this for a planted vulnerability to fire.
inline constexpr std::uint8_t kVulnThreshold = 64;

enum class DispatchStyle : std::uint8_t { kIfElse, kJumpTable };
enum class VulnKind : std::uint8_t { kStackOverflow, kOobWrite, kOobRead, kUafStub };

std::string_view to_string(DispatchStyle d);
std::string_view to_string(VulnKind v);
std::optional<VulnKind> parse_vuln_kind(std::string_view s);
// Engine fault a triggered vulnerability of this kind produces.
std::string_view vuln_fault_kind(VulnKind v);

enum class PlanKind : std::uint8_t {
  kEcho, kChecksum, kDeviceIo, kDeviceOpen, kDeviceRead, kDeviceClose,
  kContextWrite, kContextRead, kSetFlag, kRequireFlag, kVuln
};

struct Plan {
  PlanKind kind = PlanKind::kEcho;
  std::string path;
  std::uint32_t offset = 0;  // field offset, flag offset or fd slot
  std::uint32_t width = 0;
  bool dangling = false;
  VulnKind vuln = VulnKind::kOobWrite;

  bool operator==(const Plan&) const = default;
};

struct CommandSpec {
  std::uint64_t id = 0;
  std::vector<Plan> plans;

  bool operator==(const CommandSpec&) const = default;
};

struct VulnSpec {
  VulnKind kind = VulnKind::kOobWrite;
  std::uint64_t id = 0;
  std::vector<std::uint64_t> guard;

  bool operator==(const VulnSpec&) const = default;
};

struct TaSpec {
  std::string name = "ta";
  TzosKind profile = TzosKind::kOptee;
  WordWidth width = WordWidth::kW64;
  DispatchStyle dispatch = DispatchStyle::kIfElse;
  std::size_t decoys = 1;
  double branch_mix = 0.6;  // target fraction of SIMPLE conditional branches
  std::uint64_t seed = 0;
  std::vector<CommandSpec> commands;
  std::vector<VulnSpec> vulns;

  bool operator==(const TaSpec&) const = default;
};

TaSpec parse_spec(std::string_view text);
std::string format_spec(const TaSpec& spec);
// Throws Error(SPEC_INVALID) describing the first problem found.
void validate(const TaSpec& spec);

// Adds a guarded vulnerable command (fresh id when `id` is empty).
TaSpec plant_vulnerability(const TaSpec& spec, VulnKind kind, const std::vector<std::uint64_t>& guard,
                           std::optional<std::uint64_t> id = std::nullopt);

// The six-command fixture modeled on the HDCP TA dispatcher.
TaSpec hdcp_spec(TzosKind profile = TzosKind::kTeegris, WordWidth width = WordWidth::kW64);

struct RandomSpecOptions {
  std::size_t min_commands = 5;
  std::size_t max_commands = 10;
  bool with_vuln = true;
};
TaSpec random_spec(TzosKind profile, DispatchStyle dispatch, std::uint64_t seed,
                   const RandomSpecOptions& opts = {});

struct DependencyEdge {
  std::uint64_t from = 0;
  std::uint64_t to = 0;
  std::string kind;  // DEVICE_FD or CONTEXT_MEMORY

  auto operator<=>(const DependencyEdge&) const = default;
};

struct FieldInfo {
  std::uint32_t offset = 0;
  std::uint32_t width = 0;
  std::vector<std::uint64_t> writers;
  std::vector<std::uint64_t> readers;

  bool operator==(const FieldInfo&) const = default;
};

struct SvcInfo {
  Address offset = 0;
  std::optional<std::uint64_t> number;  // empty when taken from a register at runtime

  bool operator==(const SvcInfo&) const = default;
};

struct VulnInfo {
  VulnKind kind = VulnKind::kOobWrite;
  std::uint64_t id = 0;
  std::vector<std::uint64_t> trigger;  // guard commands then the vulnerable one
  Address fault_offset = 0;

  bool operator==(const VulnInfo&) const = default;
};

struct CommandInfo {
  std::uint64_t id = 0;
  Address case_offset = 0;     // dispatcher arm
  Address handler_offset = 0;  // handler function

  bool operator==(const CommandInfo&) const = default;
};

struct Manifest {
  std::string name;
  TzosKind profile = TzosKind::kOptee;
  WordWidth width = WordWidth::kW64;
  DispatchStyle dispatch = DispatchStyle::kIfElse;
  std::uint64_t seed = 0;
  std::string uuid;
  std::map<std::string, Address> entries;  // role -> offset
  std::vector<CommandInfo> commands;
  Address default_offset = 0;
  std::vector<std::uint64_t> decoy_values;
  std::map<std::string, std::vector<SvcInfo>> svc;  // object ("ta" or library) -> sites
  std::vector<DependencyEdge> dependencies;
  std::vector<FieldInfo> fields;
  std::vector<VulnInfo> vulns;
  std::vector<std::string> devices;
  std::size_t cfg_blocks = 0;
  std::size_t cfg_edges = 0;
  std::size_t branches_simple = 0;
  std::size_t branches_complex = 0;
  std::map<std::string, std::map<std::string, Address>> exports;  // library -> symbol -> offset
  std::vector<std::string> needed;

  bool operator==(const Manifest&) const = default;
};

std::string format_manifest(const Manifest& m);
Manifest parse_manifest(std::string_view text);

struct Generated {
  std::vector<std::uint8_t> elf;
  std::vector<std::pair<std::string, std::vector<std::uint8_t>>> libraries;
  Manifest manifest;
};

Generated generate(const TaSpec& spec);

// A script answering every device the TA opens with `responses` 4-byte
// replies and status 0.
DeviceScript default_devices(const Manifest& m, std::size_t responses = 64);

}  // namespace taforge::gen

#pragma once

// Per-TZOS ABI contract: entry symbols, dependency policy, parameter
// convention, address window and error codes.

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "taforge/types.hpp"

namespace taforge {

enum class TzosKind : std::uint8_t { kOptee, kTeegris, kQsee, kTrusty };
enum class DependencyPolicy : std::uint8_t { kStaticOnly, kDynamicList, kCommonLibrary };

// How the invoke-command entrypoint receives its arguments.
enum class ParamConvention : std::uint8_t {
  kGpTaEntry,  // x0 = function (0 open, 1 invoke), x1 = session, x2 = cmd, x3 = types, x4 = params
  kGp,         // x0 = session, x1 = cmd, x2 = types, x3 = params
  kBuffers,    // x0 = cmd, x1 = req, x2 = req_len, x3 = rsp, x4 = rsp_len_ptr
};

std::string_view to_string(TzosKind kind);
std::optional<TzosKind> parse_tzos(std::string_view name);
std::string_view to_string(DependencyPolicy p);
std::string_view to_string(ParamConvention p);

// Entry roles.
inline constexpr const char* kRoleCreate = "create";
inline constexpr const char* kRoleInit = "init";
inline constexpr const char* kRoleOpen = "open";
inline constexpr const char* kRoleInvoke = "invoke";
// Symbol names starting with this prefix are looked up in `.ta_meta`.
inline constexpr const char* kMetaSymbolPrefix = "@meta:";

struct TzosProfile {
  TzosKind name = TzosKind::kOptee;
  std::vector<std::pair<std::string, std::string>> entry_symbols;  // (role, symbol)
  DependencyPolicy dependency_policy = DependencyPolicy::kStaticOnly;
  std::optional<Address> common_library_base;
  std::string syscall_table_id;
  ParamConvention param_convention = ParamConvention::kGp;
  std::vector<WordWidth> word_widths{WordWidth::kW64, WordWidth::kW32};
  Address window_lo = 0x0040'0000;
  Address window_hi = 0x1000'0000;
  std::uint64_t stack_size = 1 << 20;
  std::uint32_t error_code = 0xFFFF'0006;  // generic in-band error (BAD_PARAMETERS)

  bool supports(WordWidth w) const;
  // Register carrying the command id at the invoke entrypoint.
  unsigned command_register() const;
  // Throws Error(CONFIG) when the structural invariants do not hold.
  void validate() const;
};

TzosProfile builtin_profile(TzosKind kind);
// `key = value` lines; `base = <tzos>` seeds defaults from a built-in profile.
TzosProfile parse_profile_config(std::string_view text);
// A built-in name (optee, teegris, qsee, trusty) or a path to a config file.
TzosProfile load_profile(const std::string& name_or_path);
std::string format_profile(const TzosProfile& p);

// GP status codes used by generated TAs and the emulator.
inline constexpr std::uint32_t kTeeSuccess = 0;
inline constexpr std::uint32_t kTeeErrorBadParameters = 0xFFFF'0006;
inline constexpr std::uint32_t kTeeErrorBadState = 0xFFFF'0007;
inline constexpr std::uint32_t kTeeErrorInvalidCommand = 0xFFFF'000A;

}  // namespace taforge

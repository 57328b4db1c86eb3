#include "taforge/profile.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

#include "taforge/error.hpp"

namespace taforge {

namespace {

std::string trim(std::string_view s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return std::string(s.substr(a, b - a));
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

}  // namespace

std::string_view to_string(TzosKind kind) {
  switch (kind) {
    case TzosKind::kOptee: return "OPTEE";
    case TzosKind::kTeegris: return "TEEGRIS";
    case TzosKind::kQsee: return "QSEE";
    case TzosKind::kTrusty: return "TRUSTY";
  }
  return "?";
}

std::optional<TzosKind> parse_tzos(std::string_view name) {
  const std::string n = lower(trim(name));
  if (n == "optee" || n == "op-tee") return TzosKind::kOptee;
  if (n == "teegris") return TzosKind::kTeegris;
  if (n == "qsee") return TzosKind::kQsee;
  if (n == "trusty") return TzosKind::kTrusty;
  return std::nullopt;
}

std::string_view to_string(DependencyPolicy p) {
  switch (p) {
    case DependencyPolicy::kStaticOnly: return "STATIC_ONLY";
    case DependencyPolicy::kDynamicList: return "DYNAMIC_LIST";
    case DependencyPolicy::kCommonLibrary: return "COMMON_LIBRARY";
  }
  return "?";
}

std::string_view to_string(ParamConvention p) {
  switch (p) {
    case ParamConvention::kGpTaEntry: return "GP_TA_ENTRY";
    case ParamConvention::kGp: return "GP";
    case ParamConvention::kBuffers: return "BUFFERS";
  }
  return "?";
}

bool TzosProfile::supports(WordWidth w) const {
  return std::find(word_widths.begin(), word_widths.end(), w) != word_widths.end();
}

unsigned TzosProfile::command_register() const {
  switch (param_convention) {
    case ParamConvention::kGpTaEntry: return 2;
    case ParamConvention::kGp: return 1;
    case ParamConvention::kBuffers: return 0;
  }
  return 0;
}

void TzosProfile::validate() const {
  const auto invokes = std::count_if(entry_symbols.begin(), entry_symbols.end(),
                                     [](const auto& e) { return e.first == kRoleInvoke; });
  if (invokes != 1)
    throw Error(ErrorCode::kConfig, "profile must name exactly one invoke entry symbol");
  if (common_library_base.has_value() != (dependency_policy == DependencyPolicy::kCommonLibrary))
    throw Error(ErrorCode::kConfig,
                "common_library_base must be set exactly when the policy is COMMON_LIBRARY");
  if (word_widths.empty()) throw Error(ErrorCode::kConfig, "profile supports no word width");
  if (window_lo % kPageSize || window_hi % kPageSize || window_hi <= window_lo)
    throw Error(ErrorCode::kConfig, "bad address window");
  if (stack_size == 0 || stack_size % kPageSize)
    throw Error(ErrorCode::kConfig, "stack size must be a positive multiple of the page size");
}

TzosProfile builtin_profile(TzosKind kind) {
  TzosProfile p;
  p.name = kind;
  switch (kind) {
    case TzosKind::kOptee:
      p.entry_symbols = {{kRoleInvoke, "__ta_entry"}};
      p.dependency_policy = DependencyPolicy::kStaticOnly;
      p.syscall_table_id = "optee";
      p.param_convention = ParamConvention::kGpTaEntry;
      break;
    case TzosKind::kTeegris:
      p.entry_symbols = {{kRoleCreate, "TA_CreateEntryPoint"},
                         {kRoleOpen, "TA_OpenSessionEntryPoint"},
                         {kRoleInvoke, "TA_InvokeCommandEntryPoint"}};
      p.dependency_policy = DependencyPolicy::kDynamicList;
      p.syscall_table_id = "teegris";
      p.param_convention = ParamConvention::kGp;
      break;
    case TzosKind::kQsee:
      p.entry_symbols = {{kRoleInit, "tz_app_init"}, {kRoleInvoke, "CApp_invoke"}};
      p.dependency_policy = DependencyPolicy::kCommonLibrary;
      p.common_library_base = 0x0800'0000;
      p.syscall_table_id = "qsee";
      p.param_convention = ParamConvention::kBuffers;
      break;
    case TzosKind::kTrusty:
      p.entry_symbols = {{kRoleInvoke, std::string(kMetaSymbolPrefix) + "message_handler"}};
      p.dependency_policy = DependencyPolicy::kStaticOnly;
      p.syscall_table_id = "trusty";
      p.param_convention = ParamConvention::kBuffers;
      p.word_widths = {WordWidth::kW64};
      break;
  }
  return p;
}

TzosProfile parse_profile_config(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string line;
  std::vector<std::pair<std::string, std::string>> kv;
  while (std::getline(in, line)) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    if (trim(line).empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw Error(ErrorCode::kConfig, "expected `key = value`: '" + trim(line) + "'");
    kv.emplace_back(lower(trim(line.substr(0, eq))), trim(line.substr(eq + 1)));
  }

  TzosProfile p;
  bool have_base = false, entries_replaced = false;
  for (const auto& [k, v] : kv) {
    if (k == "base" || k == "name") {
      auto kind = parse_tzos(v);
      if (!kind) throw Error(ErrorCode::kConfig, "unknown TZOS '" + v + "'");
      if (k == "base" || !have_base) {
        p = builtin_profile(*kind);
        have_base = true;
      }
      p.name = *kind;
    }
  }
  if (!have_base) throw Error(ErrorCode::kConfig, "profile config needs `name` or `base`");

  for (const auto& [k, v] : kv) {
    if (k == "base" || k == "name") continue;
    if (k.rfind("entry.", 0) == 0) {
      if (!entries_replaced) p.entry_symbols.clear();
      entries_replaced = true;
      p.entry_symbols.emplace_back(k.substr(6), v);
    } else if (k == "dependency_policy") {
      const std::string u = lower(v);
      if (u == "static_only") p.dependency_policy = DependencyPolicy::kStaticOnly;
      else if (u == "dynamic_list") p.dependency_policy = DependencyPolicy::kDynamicList;
      else if (u == "common_library") p.dependency_policy = DependencyPolicy::kCommonLibrary;
      else throw Error(ErrorCode::kConfig, "unknown dependency policy '" + v + "'");
      if (p.dependency_policy != DependencyPolicy::kCommonLibrary) p.common_library_base.reset();
    } else if (k == "common_library_base") {
      p.common_library_base = parse_u64(v);
    } else if (k == "syscall_table") {
      p.syscall_table_id = lower(v);
    } else if (k == "param_convention") {
      const std::string u = lower(v);
      if (u == "gp_ta_entry") p.param_convention = ParamConvention::kGpTaEntry;
      else if (u == "gp") p.param_convention = ParamConvention::kGp;
      else if (u == "buffers") p.param_convention = ParamConvention::kBuffers;
      else throw Error(ErrorCode::kConfig, "unknown parameter convention '" + v + "'");
    } else if (k == "word_widths") {
      p.word_widths.clear();
      std::istringstream ws(v);
      std::string item;
      while (std::getline(ws, item, ',')) {
        const auto n = parse_u64(item);
        if (n == 32) p.word_widths.push_back(WordWidth::kW32);
        else if (n == 64) p.word_widths.push_back(WordWidth::kW64);
        else throw Error(ErrorCode::kConfig, "word width must be 32 or 64");
      }
    } else if (k == "window_lo") {
      p.window_lo = parse_u64(v);
    } else if (k == "window_hi") {
      p.window_hi = parse_u64(v);
    } else if (k == "stack_size") {
      p.stack_size = parse_u64(v);
    } else if (k == "error_code") {
      p.error_code = static_cast<std::uint32_t>(parse_u64(v));
    } else {
      throw Error(ErrorCode::kConfig, "unknown profile key '" + k + "'");
    }
  }
  p.validate();
  return p;
}

TzosProfile load_profile(const std::string& name_or_path) {
  if (auto kind = parse_tzos(name_or_path)) return builtin_profile(*kind);
  std::ifstream in(name_or_path);
  if (!in) throw Error(ErrorCode::kConfig, "unknown profile '" + name_or_path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_profile_config(ss.str());
}

std::string format_profile(const TzosProfile& p) {
  std::ostringstream out;
  out << "name = " << to_string(p.name) << "\n";
  for (const auto& [role, sym] : p.entry_symbols) out << "entry." << role << " = " << sym << "\n";
  out << "dependency_policy = " << to_string(p.dependency_policy) << "\n";
  if (p.common_library_base) out << "common_library_base = " << hex(*p.common_library_base) << "\n";
  out << "syscall_table = " << p.syscall_table_id << "\n";
  out << "param_convention = " << to_string(p.param_convention) << "\n";
  out << "word_widths = ";
  for (std::size_t i = 0; i < p.word_widths.size(); ++i)
    out << (i ? "," : "") << static_cast<int>(p.word_widths[i]);
  out << "\nwindow_lo = " << hex(p.window_lo) << "\nwindow_hi = " << hex(p.window_hi)
      << "\nstack_size = " << hex(p.stack_size) << "\nerror_code = " << hex(p.error_code) << "\n";
  return out.str();
}

}  // namespace taforge

#include <cerrno>
#include <cstdio>
#include <cstdlib>
#include <string>

#include "taforge/error.hpp"
#include "taforge/types.hpp"

namespace taforge {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kMalformedImage: return "MALFORMED_IMAGE";
    case ErrorCode::kWindowExhausted: return "WINDOW_EXHAUSTED";
    case ErrorCode::kUnsupportedClass: return "UNSUPPORTED_CLASS";
    case ErrorCode::kUnresolvedSymbol: return "UNRESOLVED_SYMBOL";
    case ErrorCode::kResolverMiss: return "RESOLVER_MISS";
    case ErrorCode::kEntryNotFound: return "ENTRY_NOT_FOUND";
    case ErrorCode::kRangeExceeded: return "RANGE_EXCEEDED";
    case ErrorCode::kRegionFull: return "REGION_FULL";
    case ErrorCode::kUnknownTrampoline: return "UNKNOWN_TRAMPOLINE";
    case ErrorCode::kSnapshotMismatch: return "SNAPSHOT_MISMATCH";
    case ErrorCode::kCycleDetected: return "CYCLE_DETECTED";
    case ErrorCode::kForeignTrace: return "FOREIGN_TRACE";
    case ErrorCode::kKindMismatch: return "KIND_MISMATCH";
    case ErrorCode::kSpecInvalid: return "SPEC_INVALID";
    case ErrorCode::kConfig: return "CONFIG_ERROR";
    case ErrorCode::kIo: return "IO_ERROR";
  }
  return "UNKNOWN";
}

std::string perms_to_string(Perms p) {
  std::string s = "---";
  if (p & kPermR) s[0] = 'r';
  if (p & kPermW) s[1] = 'w';
  if (p & kPermX) s[2] = 'x';
  return s;
}

std::string hex(std::uint64_t v) {
  char buf[24];
  std::snprintf(buf, sizeof buf, "0x%llx", static_cast<unsigned long long>(v));
  return buf;
}

std::uint64_t parse_u64(std::string_view text) {
  std::string s(text);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.pop_back();
  std::size_t start = 0;
  while (start < s.size() && (s[start] == ' ' || s[start] == '\t')) ++start;
  s = s.substr(start);
  if (s.empty()) throw Error(ErrorCode::kConfig, "empty number");
  int base = 10;
  if (s.size() > 2 && s[0] == '0' && (s[1] == 'x' || s[1] == 'X')) base = 16;
  char* end = nullptr;
  errno = 0;
  const unsigned long long v = std::strtoull(s.c_str(), &end, base);
  if (errno != 0 || end == s.c_str() || *end != '\0' || s[0] == '-')
    throw Error(ErrorCode::kConfig, "not a number: '" + s + "'");
  return v;
}

}  // namespace taforge

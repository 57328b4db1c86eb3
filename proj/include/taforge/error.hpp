#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace taforge {

enum class ErrorCode {
  kMalformedImage,
  kWindowExhausted,
  kUnsupportedClass,
  kUnresolvedSymbol,
  kResolverMiss,
  kEntryNotFound,
  kRangeExceeded,
  kRegionFull,
  kUnknownTrampoline,
  kSnapshotMismatch,
  kCycleDetected,
  kForeignTrace,
  kKindMismatch,
  kSpecInvalid,
  kConfig,
  kIo,
};

std::string_view to_string(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace taforge

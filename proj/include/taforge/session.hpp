#pragma once

// A loaded, linked and (optionally) rewritten TA ready to take commands:
// owns the image, the machine, the device model and the trap handler, and
// marshals GP-style or buffer-style command parameters.

#include <array>
#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "taforge/engine.hpp"
#include "taforge/loader.hpp"
#include "taforge/profile.hpp"
#include "taforge/rewriter.hpp"
#include "taforge/syscall.hpp"

namespace taforge {

enum class ExecMode : std::uint8_t { kRewritten, kDirectTrap };
std::string_view to_string(ExecMode m);

// GP TEE_Param type nibbles.
enum ParamType : std::uint8_t {
  kParamNone = 0,
  kParamValueInput = 1,
  kParamValueOutput = 2,
  kParamValueInout = 3,
  kParamMemrefInput = 5,
  kParamMemrefOutput = 6,
  kParamMemrefInout = 7,
};

inline constexpr std::size_t kParamSlots = 4;
inline constexpr std::size_t kMaxPayload = 4096;
// The conventional request shape: slot 0 memref input, slot 1 memref output.
inline constexpr std::uint32_t kDefaultParamTypes = 0x65;

struct Command {
  std::uint64_t id = 0;
  std::array<std::uint8_t, kParamSlots> types{kParamMemrefInput, kParamMemrefOutput, 0, 0};
  std::array<std::vector<std::uint8_t>, kParamSlots> payload;

  std::uint32_t param_types() const {
    return types[0] | types[1] << 4 | types[2] << 8 | types[3] << 12;
  }
  bool operator==(const Command&) const = default;
};

// Parameter area layout (offsets from its base).
inline constexpr std::uint64_t kParamArrayOffset = 0;
inline constexpr std::uint64_t kRspLenOffset = 0x80;
inline constexpr std::uint64_t kSessionCtxOffset = 0x90;
inline constexpr std::uint64_t kParamAreaSize = kPageSize * (1 + kParamSlots);
inline std::uint64_t slot_buffer_offset(std::size_t slot) { return kPageSize * (slot + 1); }

struct SessionSnapshot {
  MachineSnapshot machine;
  DeviceModel devices;

  bool operator==(const SessionSnapshot&) const = default;
};

struct SessionConfig {
  ExecMode mode = ExecMode::kRewritten;
  DeviceScript devices;
  std::uint64_t random_seed = 0;
};

class Session {
 public:
  Session(LoadedImage image, TzosProfile profile, const SessionConfig& config = {});
  Session(const Session&) = delete;
  Session& operator=(const Session&) = delete;

  LoadedImage& image() { return *image_; }
  const LoadedImage& image() const { return *image_; }
  Machine& machine() { return *machine_; }
  DeviceModel& devices() { return devices_; }
  const TzosProfile& profile() const { return profile_; }
  const SyscallTable& table() const { return *table_; }
  const TrampolineTable& trampolines() const { return trampolines_; }
  ExecMode mode() const { return mode_; }
  Address param_base() const { return param_base_; }
  std::vector<SyscallRecord>& syscall_log() { return log_; }

  // Raw call with the session's trap handler.
  ExitStatus call(Address fn, std::span<const std::uint64_t> args, std::uint64_t budget,
                  BranchTrace* trace = nullptr, const AddressFilter* filter = nullptr);

  // Runs the create/init/open entrypoints the profile declares, in that
  // order. Returns the exit status of each call made.
  std::vector<ExitStatus> initialize(std::uint64_t budget);

  // Marshals `cmd` into the parameter area and calls the invoke entrypoint.
  ExitStatus invoke(const Command& cmd, std::uint64_t budget, BranchTrace* trace = nullptr,
                    const AddressFilter* filter = nullptr);

  SessionSnapshot snapshot();
  void restore(const SessionSnapshot& s);
  std::uint64_t state_hash() const;

  // X regions of the main TA object (excluding trampolines).
  AddressFilter ta_code_filter() const;

 private:
  std::vector<std::uint64_t> marshal(const Command& cmd);

  std::unique_ptr<LoadedImage> image_;
  TzosProfile profile_;
  ExecMode mode_;
  const SyscallTable* table_;
  TrampolineTable trampolines_;
  DeviceModel devices_;
  std::unique_ptr<Machine> machine_;
  std::unique_ptr<SyscallEmulator> emulator_;
  std::vector<SyscallRecord> log_;
  Address param_base_ = 0;
};

}  // namespace taforge

#pragma once

// Emulated secure-kernel services. Each TZOS profile selects a syscall table;
// handlers run against the address space and a scripted device model.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "taforge/engine.hpp"
#include "taforge/profile.hpp"
#include "taforge/rewriter.hpp"

namespace taforge {

enum class Handler : std::uint8_t {
  kRead, kWrite, kClose, kIoctl, kMmap, kOpen, kMemMove, kAlloc, kFree, kGetRandom, kUnsupported
};
std::string_view to_string(Handler h);
std::optional<Handler> parse_handler(std::string_view s);

enum class NumberSource : std::uint8_t { kRegister, kImmediate };

struct SyscallTable {
  std::string profile;
  std::map<std::uint64_t, Handler> entries;
  std::uint8_t number_register = 8;  // used when number_source is kRegister
  std::vector<std::uint8_t> arg_registers{0, 1, 2, 3, 4, 5};
  NumberSource number_source = NumberSource::kImmediate;

  Handler lookup(std::uint64_t number) const;
  // Number for a handler; empty when the table has none.
  std::optional<std::uint64_t> number_of(Handler h) const;
};

// Built-in tables: optee, teegris, qsee, trusty. Throws Error(CONFIG) for
// anything else.
const SyscallTable& syscall_table(std::string_view id);

struct ScriptEntry {
  std::vector<std::uint8_t> response;
  std::int64_t status = 0;

  bool operator==(const ScriptEntry&) const = default;
};

// `device <path>` followed by `respond <hex> status <int>` lines.
struct DeviceScript {
  std::vector<std::pair<std::string, std::vector<ScriptEntry>>> devices;
};
DeviceScript parse_device_script(std::string_view text);
std::string format_device_script(const DeviceScript& script);

inline constexpr const char* kPhysDevice = "phys://";
inline constexpr std::uint64_t kPhysRegionSize = 4 * kPageSize;

class DeviceModel {
 public:
  struct Device {
    std::vector<ScriptEntry> script;
    std::size_t cursor = 0;
    std::uint64_t open_count = 0;
    std::vector<std::int64_t> fds;

    bool operator==(const Device&) const = default;
  };
  struct OpenFile {
    std::string path;
    std::uint64_t offset = 0;  // phys:// cursor

    bool operator==(const OpenFile&) const = default;
  };

  DeviceModel() = default;
  explicit DeviceModel(const DeviceScript& script, std::uint64_t random_seed = 0);

  // No-op when the path is already configured.
  void add_device(const std::string& path, std::vector<ScriptEntry> script = {});
  bool has_device(const std::string& path) const { return devices_.count(path) != 0; }

  std::optional<std::int64_t> open(const std::string& path);
  bool close(std::int64_t fd);
  const OpenFile* file(std::int64_t fd) const;
  OpenFile* file(std::int64_t fd);
  // Next scripted response for the device behind `fd`, consumed in order.
  // An empty script answers every request with an empty success; an
  // exhausted one yields nullopt.
  std::optional<ScriptEntry> next_response(std::int64_t fd);
  std::uint64_t next_random();

  const std::map<std::string, Device>& devices() const { return devices_; }
  std::int64_t next_fd() const { return next_fd_; }
  std::optional<Address> phys_base;

  bool operator==(const DeviceModel&) const = default;

 private:
  std::map<std::string, Device> devices_;
  std::map<std::int64_t, OpenFile> files_;
  std::int64_t next_fd_ = 3;
  std::uint64_t rng_ = 0;
};

// Allocates a fresh page-rounded HEAP region with `prot`; nullopt when
// length is 0 or the window is exhausted.
std::optional<Address> mmap_region(Machine& m, std::uint64_t length, Perms prot,
                                   const std::string& name = "mmap");

struct SyscallRecord {
  Address site = 0;
  std::uint64_t number = 0;
  Handler handler = Handler::kUnsupported;
  std::uint64_t result = 0;

  bool operator==(const SyscallRecord&) const = default;
};

struct DispatchResult {
  std::uint64_t value = 0;
  std::optional<Fault> fault;
};

// Runs one syscall for `site`. Does not touch registers other than reading
// the number and arguments; the caller places the result.
DispatchResult dispatch(const SyscallTable& table, Machine& m, const SvcSite& site,
                        DeviceModel& devices, std::uint32_t error_code);

// Trap handler for both execution modes. In direct-trap mode the svc traps
// straight here; in rewritten mode the trampoline's hvc does, and the full
// register context is saved around the dispatch and restored with the
// result in x0.
class SyscallEmulator : public TrapHandler {
 public:
  SyscallEmulator(const SyscallTable& table, DeviceModel& devices, std::uint32_t error_code,
                  const TrampolineTable* trampolines = nullptr)
      : table_(&table), devices_(&devices), error_code_(error_code), trampolines_(trampolines) {}

  std::optional<Fault> on_svc(Machine& m, Address pc, std::uint16_t imm) override;
  std::optional<Fault> on_hostcall(Machine& m, Address pc, std::uint16_t imm) override;

  void set_log(std::vector<SyscallRecord>* log) { log_ = log; }
  void set_trampolines(const TrampolineTable* t) { trampolines_ = t; }
  void set_devices(DeviceModel& d) { devices_ = &d; }

 private:
  std::optional<Fault> run(Machine& m, const SvcSite& site);

  const SyscallTable* table_;
  DeviceModel* devices_;
  std::uint32_t error_code_;
  const TrampolineTable* trampolines_;
  std::vector<SyscallRecord>* log_ = nullptr;
};

}  // namespace taforge

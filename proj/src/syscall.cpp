#include "taforge/syscall.hpp"

#include <algorithm>
#include <sstream>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "taforge/error.hpp"

namespace taforge {

namespace {

constexpr std::string_view kHandlerNames[] = {"read",     "write", "close", "ioctl",
                                              "mmap",     "open",  "mem_move", "alloc",
                                              "free",     "get_random", "unsupported"};

constexpr std::size_t kMaxPath = 256;
constexpr std::uint64_t kMaxTransfer = 1 << 20;

SyscallTable make_table(std::string profile, NumberSource src, std::uint8_t number_reg,
                        std::initializer_list<std::pair<std::uint64_t, Handler>> entries) {
  SyscallTable t;
  t.profile = std::move(profile);
  t.number_source = src;
  t.number_register = number_reg;
  for (const auto& [n, h] : entries) t.entries[n] = h;
  return t;
}

std::vector<std::uint8_t> parse_hex_bytes(std::string_view s, int lineno) {
  if (s.starts_with("0x") || s.starts_with("0X")) s.remove_prefix(2);
  if (s == "-") return {};
  if (s.size() % 2)
    throw Error(ErrorCode::kConfig, fmt::format("device script line {}: odd hex length", lineno));
  std::vector<std::uint8_t> out;
  for (std::size_t i = 0; i < s.size(); i += 2) {
    auto nib = [&](char c) -> int {
      if (c >= '0' && c <= '9') return c - '0';
      if (c >= 'a' && c <= 'f') return c - 'a' + 10;
      if (c >= 'A' && c <= 'F') return c - 'A' + 10;
      throw Error(ErrorCode::kConfig, fmt::format("device script line {}: bad hex digit", lineno));
    };
    out.push_back(static_cast<std::uint8_t>(nib(s[i]) * 16 + nib(s[i + 1])));
  }
  return out;
}

std::uint64_t splitmix(std::uint64_t& s) {
  std::uint64_t z = (s += 0x9E3779B97F4A7C15ull);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

}  // namespace

std::string_view to_string(Handler h) { return kHandlerNames[static_cast<int>(h)]; }

std::optional<Handler> parse_handler(std::string_view s) {
  for (int i = 0; i < 11; ++i)
    if (kHandlerNames[i] == s) return static_cast<Handler>(i);
  return std::nullopt;
}

Handler SyscallTable::lookup(std::uint64_t number) const {
  auto it = entries.find(number);
  return it == entries.end() ? Handler::kUnsupported : it->second;
}

std::optional<std::uint64_t> SyscallTable::number_of(Handler h) const {
  for (const auto& [n, handler] : entries)
    if (handler == h) return n;
  return std::nullopt;
}

const SyscallTable& syscall_table(std::string_view id) {
  using H = Handler;
  static const SyscallTable optee = make_table(
      "optee", NumberSource::kImmediate, 8,
      {{2, H::kOpen}, {3, H::kRead}, {4, H::kWrite}, {5, H::kClose}, {6, H::kIoctl},
       {7, H::kMmap}, {8, H::kMemMove}, {9, H::kAlloc}, {10, H::kFree}, {11, H::kGetRandom}});
  static const SyscallTable teegris = make_table(
      "teegris", NumberSource::kImmediate, 8,
      {{1, H::kOpen}, {2, H::kWrite}, {3, H::kClose}, {4, H::kRead}, {5, H::kIoctl},
       {6, H::kMmap}, {7, H::kAlloc}, {8, H::kFree}, {9, H::kMemMove}, {10, H::kGetRandom}});
  static const SyscallTable qsee = make_table(
      "qsee", NumberSource::kRegister, 8,
      {{0x101, H::kOpen}, {0x102, H::kRead}, {0x103, H::kWrite}, {0x104, H::kClose},
       {0x105, H::kIoctl}, {0x106, H::kMmap}, {0x107, H::kMemMove}, {0x108, H::kAlloc},
       {0x109, H::kFree}, {0x10A, H::kGetRandom}});
  static const SyscallTable trusty = make_table(
      "trusty", NumberSource::kRegister, 12,
      {{1, H::kWrite}, {2, H::kRead}, {3, H::kOpen}, {4, H::kClose}, {5, H::kIoctl},
       {6, H::kMmap}, {7, H::kMemMove}, {8, H::kAlloc}, {9, H::kFree}, {10, H::kGetRandom}});
  if (id == "optee") return optee;
  if (id == "teegris") return teegris;
  if (id == "qsee") return qsee;
  if (id == "trusty") return trusty;
  throw Error(ErrorCode::kConfig, "unknown syscall table " + std::string(id));
}

DeviceScript parse_device_script(std::string_view text) {
  DeviceScript out;
  std::istringstream in{std::string(text)};
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    std::istringstream ls(line);
    std::string word;
    if (!(ls >> word)) continue;
    if (word == "device") {
      std::string path;
      if (!(ls >> path))
        throw Error(ErrorCode::kConfig, fmt::format("device script line {}: missing path", lineno));
      out.devices.emplace_back(path, std::vector<ScriptEntry>{});
    } else if (word == "respond") {
      if (out.devices.empty())
        throw Error(ErrorCode::kConfig,
                    fmt::format("device script line {}: respond before device", lineno));
      std::string bytes, kw;
      std::int64_t status = 0;
      if (!(ls >> bytes >> kw >> status) || kw != "status")
        throw Error(ErrorCode::kConfig,
                    fmt::format("device script line {}: expected respond <hex> status <int>", lineno));
      out.devices.back().second.push_back({parse_hex_bytes(bytes, lineno), status});
    } else {
      throw Error(ErrorCode::kConfig,
                  fmt::format("device script line {}: unknown directive {}", lineno, word));
    }
  }
  return out;
}

std::string format_device_script(const DeviceScript& script) {
  std::string out;
  for (const auto& [path, entries] : script.devices) {
    out += "device " + path + "\n";
    for (const auto& e : entries) {
      out += "respond ";
      for (auto b : e.response) out += fmt::format("{:02x}", b);
      if (e.response.empty()) out += "-";
      out += fmt::format(" status {}\n", e.status);
    }
  }
  return out;
}

DeviceModel::DeviceModel(const DeviceScript& script, std::uint64_t random_seed) : rng_(random_seed) {
  for (const auto& [path, entries] : script.devices) {
    auto& dev = devices_[path];
    dev.script.insert(dev.script.end(), entries.begin(), entries.end());
  }
}

void DeviceModel::add_device(const std::string& path, std::vector<ScriptEntry> script) {
  if (devices_.count(path)) return;
  devices_[path].script = std::move(script);
}

std::optional<std::int64_t> DeviceModel::open(const std::string& path) {
  auto it = devices_.find(path);
  if (it == devices_.end() && path != kPhysDevice) return std::nullopt;
  if (it == devices_.end()) it = devices_.emplace(path, Device{}).first;
  const std::int64_t fd = next_fd_++;
  ++it->second.open_count;
  it->second.fds.push_back(fd);
  files_[fd] = OpenFile{path, 0};
  return fd;
}

bool DeviceModel::close(std::int64_t fd) {
  auto it = files_.find(fd);
  if (it == files_.end()) return false;
  auto& fds = devices_[it->second.path].fds;
  std::erase(fds, fd);
  files_.erase(it);
  return true;
}

const DeviceModel::OpenFile* DeviceModel::file(std::int64_t fd) const {
  auto it = files_.find(fd);
  return it == files_.end() ? nullptr : &it->second;
}

DeviceModel::OpenFile* DeviceModel::file(std::int64_t fd) {
  auto it = files_.find(fd);
  return it == files_.end() ? nullptr : &it->second;
}

std::optional<ScriptEntry> DeviceModel::next_response(std::int64_t fd) {
  const OpenFile* f = file(fd);
  if (!f) return std::nullopt;
  Device& dev = devices_.at(f->path);
  if (dev.script.empty()) return ScriptEntry{};
  if (dev.cursor >= dev.script.size()) return std::nullopt;
  return dev.script[dev.cursor++];
}

std::uint64_t DeviceModel::next_random() { return splitmix(rng_); }

std::optional<Address> mmap_region(Machine& m, std::uint64_t length, Perms prot,
                                   const std::string& name) {
  if (length == 0 || length > m.vas().window_hi()) return std::nullopt;
  const std::uint64_t size = page_ceil(length);
  // One free page on each side so linear overflows fault instead of landing
  // in a neighbour.
  auto base = m.vas().find_free(size, kPageSize);
  if (!base) return std::nullopt;
  m.vas().map(*base, size, prot, RegionKind::kHeap, name);
  m.invalidate_caches();
  return base;
}

DispatchResult dispatch(const SyscallTable& table, Machine& m, const SvcSite& site,
                        DeviceModel& devices, std::uint32_t error_code) {
  const std::uint64_t number =
      table.number_source == NumberSource::kImmediate ? site.immediate : m.x[table.number_register];
  const Handler h = table.lookup(number);
  auto arg = [&](std::size_t i) { return m.x[table.arg_registers.at(i)]; };
  const std::uint64_t err = error_code;
  auto fault = [&](FaultKind k, Address a) {
    return DispatchResult{0, Fault{k, site.address, a}};
  };
  auto ok = [](std::uint64_t v) { return DispatchResult{v, std::nullopt}; };
  const auto fd = static_cast<std::int64_t>(arg(0));

  switch (h) {
    case Handler::kOpen: {
      std::string path;
      for (Address a = arg(0);; ++a) {
        std::uint8_t c;
        if (auto bad = m.read_bytes(a, &c, 1)) return fault(FaultKind::kOobRead, *bad);
        if (c == 0) break;
        if (path.size() >= kMaxPath) return ok(err);
        path.push_back(static_cast<char>(c));
      }
      auto opened = devices.open(path);
      if (!opened) return ok(err);
      if (path == kPhysDevice && !devices.phys_base) {
        auto base = m.vas().find_free(kPhysRegionSize, kPageSize);
        if (!base) return ok(err);
        m.vas().map(*base, kPhysRegionSize, kPermR | kPermW, RegionKind::kDeviceShm, "phys");
        m.invalidate_caches();
        devices.phys_base = *base;
      }
      return ok(static_cast<std::uint64_t>(*opened));
    }
    case Handler::kClose:
      return ok(devices.close(fd) ? 0 : err);
    case Handler::kRead: {
      const Address buf = arg(1);
      const std::uint64_t len = std::min(arg(2), kMaxTransfer);
      DeviceModel::OpenFile* f = devices.file(fd);
      if (!f) return ok(err);
      if (f->path == kPhysDevice) {
        const std::uint64_t n = std::min(len, kPhysRegionSize - std::min(f->offset, kPhysRegionSize));
        std::vector<std::uint8_t> tmp(n);
        m.vas().peek(*devices.phys_base + f->offset, tmp.data(), n);
        if (auto bad = m.write_bytes(buf, tmp.data(), n)) return fault(FaultKind::kOobWrite, *bad);
        f->offset += n;
        return ok(n);
      }
      auto resp = devices.next_response(fd);
      if (!resp) return ok(err);
      if (resp->status != 0) return ok(static_cast<std::uint64_t>(resp->status) & m.mask());
      const std::uint64_t n = std::min<std::uint64_t>(len, resp->response.size());
      if (auto bad = m.write_bytes(buf, resp->response.data(), n))
        return fault(FaultKind::kOobWrite, *bad);
      return ok(n);
    }
    case Handler::kWrite: {
      const Address buf = arg(1);
      const std::uint64_t len = std::min(arg(2), kMaxTransfer);
      std::vector<std::uint8_t> tmp(len);
      if (auto bad = m.read_bytes(buf, tmp.data(), len)) return fault(FaultKind::kOobRead, *bad);
      DeviceModel::OpenFile* f = devices.file(fd);
      if (!f) return ok(fd >= 0 && fd <= 2 ? len : err);  // 0-2: console, discarded
      if (f->path == kPhysDevice) {
        const std::uint64_t n = std::min(len, kPhysRegionSize - std::min(f->offset, kPhysRegionSize));
        m.vas().poke(*devices.phys_base + f->offset, tmp.data(), n);
        f->offset += n;
        return ok(n);
      }
      return ok(len);
    }
    case Handler::kIoctl: {
      // ioctl(fd, request, in, in_len, out, out_len)
      const std::uint64_t in_len = std::min(arg(3), kMaxTransfer);
      std::vector<std::uint8_t> in(in_len);
      if (auto bad = m.read_bytes(arg(2), in.data(), in_len)) return fault(FaultKind::kOobRead, *bad);
      if (!devices.file(fd)) return ok(err);
      auto resp = devices.next_response(fd);
      if (!resp) return ok(err);
      const std::uint64_t n = std::min<std::uint64_t>(arg(5), resp->response.size());
      if (auto bad = m.write_bytes(arg(4), resp->response.data(), n))
        return fault(FaultKind::kOobWrite, *bad);
      return ok(static_cast<std::uint64_t>(resp->status) & m.mask());
    }
    case Handler::kMmap: {
      Perms prot = static_cast<Perms>(arg(1) & 7);
      if (prot == 0) prot = kPermR | kPermW;
      auto base = mmap_region(m, arg(0), prot);
      return ok(base ? *base : err);
    }
    case Handler::kAlloc: {
      auto base = mmap_region(m, arg(0), kPermR | kPermW, "heap");
      return ok(base ? *base : 0);
    }
    case Handler::kFree: {
      const Address p = arg(0);
      if (p == 0) return ok(0);
      const Region* r = m.vas().find(p);
      if (!r || r->kind != RegionKind::kHeap || r->base != p) return ok(err);
      m.vas().unmap(p);
      m.invalidate_caches();
      return ok(0);
    }
    case Handler::kMemMove: {
      const Address dst = arg(0), src = arg(1);
      const std::uint64_t len = std::min(arg(2), kMaxTransfer);
      std::vector<std::uint8_t> tmp(len);
      if (auto bad = m.read_bytes(src, tmp.data(), len)) return fault(FaultKind::kOobRead, *bad);
      if (auto bad = m.write_bytes(dst, tmp.data(), len)) return fault(FaultKind::kOobWrite, *bad);
      return ok(dst);
    }
    case Handler::kGetRandom: {
      const std::uint64_t len = std::min(arg(1), kMaxTransfer);
      std::vector<std::uint8_t> tmp(len);
      for (std::uint64_t i = 0; i < len; i += 8) {
        const std::uint64_t r = devices.next_random();
        for (std::uint64_t j = 0; j < 8 && i + j < len; ++j)
          tmp[i + j] = static_cast<std::uint8_t>(r >> (8 * j));
      }
      if (auto bad = m.write_bytes(arg(0), tmp.data(), len)) return fault(FaultKind::kOobWrite, *bad);
      return ok(0);
    }
    case Handler::kUnsupported:
      spdlog::debug("unsupported syscall {} at {} ({} table)", number, hex(site.address), table.profile);
      return ok(err);
  }
  return ok(err);
}

std::optional<Fault> SyscallEmulator::run(Machine& m, const SvcSite& site) {
  DispatchResult r = dispatch(*table_, m, site, *devices_, error_code_);
  if (log_) {
    const std::uint64_t number =
        table_->number_source == NumberSource::kImmediate ? site.immediate : m.x[table_->number_register];
    log_->push_back({site.address, number, table_->lookup(number), r.fault ? 0 : r.value & m.mask()});
  }
  if (r.fault) return r.fault;
  m.x[0] = r.value & m.mask();
  return std::nullopt;
}

std::optional<Fault> SyscallEmulator::on_svc(Machine& m, Address pc, std::uint16_t imm) {
  SvcSite site{pc, imm, isa::enc::svc(imm)};
  return run(m, site);
}

std::optional<Fault> SyscallEmulator::on_hostcall(Machine& m, Address pc, std::uint16_t) {
  const TrampolineEntry* e = trampolines_ ? trampolines_->at_trampoline(pc) : nullptr;
  if (!e) return Fault{FaultKind::kIllegalInsn, pc, std::nullopt};
  // Save the full register context; only x0 carries the result back.
  const auto saved_x = m.x;
  const auto saved_sp = m.sp;
  const auto saved_flags = m.nzcv;
  auto f = run(m, e->site);
  const std::uint64_t result = m.x[0];
  m.x = saved_x;
  m.sp = saved_sp;
  m.nzcv = saved_flags;
  if (f) return f;
  m.x[0] = result;
  return std::nullopt;
}

}  // namespace taforge

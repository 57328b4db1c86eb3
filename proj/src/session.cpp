#include "taforge/session.hpp"

#include <algorithm>

#include "taforge/error.hpp"

namespace taforge {

std::string_view to_string(ExecMode m) {
  return m == ExecMode::kRewritten ? "rewritten" : "direct-trap";
}

Session::Session(LoadedImage image, TzosProfile profile, const SessionConfig& config)
    : image_(std::make_unique<LoadedImage>(std::move(image))),
      profile_(std::move(profile)),
      mode_(config.mode),
      table_(&syscall_table(profile_.syscall_table_id)),
      devices_(config.devices, config.random_seed) {
  if (mode_ == ExecMode::kRewritten)
    trampolines_ = install_trampolines(*image_, scan_svc_sites(*image_));

  auto base = image_->vas.find_free(kParamAreaSize, kPageSize);
  if (!base) throw Error(ErrorCode::kWindowExhausted, "no room for the parameter area");
  image_->vas.map(*base, kParamAreaSize, kPermR | kPermW, RegionKind::kSegment, "params");
  param_base_ = *base;

  machine_ = std::make_unique<Machine>(image_->vas, image_->stack_top);
  emulator_ = std::make_unique<SyscallEmulator>(*table_, devices_, profile_.error_code, &trampolines_);
  emulator_->set_log(&log_);
}

ExitStatus Session::call(Address fn, std::span<const std::uint64_t> args, std::uint64_t budget,
                         BranchTrace* trace, const AddressFilter* filter) {
  return machine_->call(fn, args, budget, trace, filter, emulator_.get());
}

std::vector<ExitStatus> Session::initialize(std::uint64_t budget) {
  std::vector<ExitStatus> out;
  const auto& eps = image_->entrypoints;
  const Address ctx = param_base_ + kSessionCtxOffset;
  const Address params = param_base_ + kParamArrayOffset;
  if (auto it = eps.find(kRoleCreate); it != eps.end()) out.push_back(call(it->second, {}, budget));
  if (auto it = eps.find(kRoleInit); it != eps.end()) out.push_back(call(it->second, {}, budget));
  if (profile_.param_convention == ParamConvention::kGpTaEntry) {
    if (auto it = eps.find(kRoleInvoke); it != eps.end()) {
      const std::uint64_t args[] = {0, ctx, 0, 0, params};
      out.push_back(call(it->second, args, budget));
    }
  } else if (auto it = eps.find(kRoleOpen); it != eps.end()) {
    const std::uint64_t args[] = {0, params, ctx};
    out.push_back(call(it->second, args, budget));
  }
  return out;
}

std::vector<std::uint64_t> Session::marshal(const Command& cmd) {
  AddressSpace& vas = image_->vas;
  const unsigned wb = word_bytes(image_->word_width);
  const std::uint64_t param_size = 2ull * wb;
  for (std::size_t i = 0; i < kParamSlots; ++i) {
    const Address param = param_base_ + kParamArrayOffset + i * param_size;
    const auto& bytes = cmd.payload[i];
    const std::uint64_t n = std::min<std::uint64_t>(bytes.size(), kMaxPayload);
    const Address buf = param_base_ + slot_buffer_offset(i);
    const std::uint8_t t = cmd.types[i];
    if (t >= kParamMemrefInput && t <= kParamMemrefInout) {
      vas.poke(buf, bytes.data(), n);
      vas.poke_word(param, buf, wb);
      vas.poke_word(param + wb, n, wb);
    } else if (t >= kParamValueInput && t <= kParamValueInout) {
      std::uint8_t v[8] = {};
      std::copy_n(bytes.begin(), std::min<std::size_t>(bytes.size(), 8), v);
      vas.poke(param, v, 8);
    } else {
      vas.poke_word(param, 0, wb);
      vas.poke_word(param + wb, 0, wb);
    }
  }
  const Address params = param_base_ + kParamArrayOffset;
  const Address ctx = param_base_ + kSessionCtxOffset;
  switch (profile_.param_convention) {
    case ParamConvention::kGpTaEntry:
      return {1, ctx, cmd.id, cmd.param_types(), params};
    case ParamConvention::kGp:
      return {ctx, cmd.id, cmd.param_types(), params};
    case ParamConvention::kBuffers: {
      const Address rsp_len = param_base_ + kRspLenOffset;
      vas.poke_word(rsp_len, kMaxPayload, wb);
      const std::uint64_t req_len = std::min<std::uint64_t>(cmd.payload[0].size(), kMaxPayload);
      return {cmd.id, param_base_ + slot_buffer_offset(0), req_len,
              param_base_ + slot_buffer_offset(1), rsp_len};
    }
  }
  return {};
}

ExitStatus Session::invoke(const Command& cmd, std::uint64_t budget, BranchTrace* trace,
                           const AddressFilter* filter) {
  auto it = image_->entrypoints.find(kRoleInvoke);
  if (it == image_->entrypoints.end())
    throw Error(ErrorCode::kEntryNotFound, "image has no invoke entrypoint");
  const auto args = marshal(cmd);
  machine_->invalidate_caches();
  return call(it->second, args, budget, trace, filter);
}

SessionSnapshot Session::snapshot() { return {machine_->snapshot(), devices_}; }

void Session::restore(const SessionSnapshot& s) {
  machine_->restore(s.machine);
  devices_ = s.devices;
}

std::uint64_t Session::state_hash() const {
  std::uint64_t h = machine_->state_hash();
  auto mix = [&](std::uint64_t v) { h ^= v + 0x9E3779B97F4A7C15ull + (h << 6) + (h >> 2); };
  mix(static_cast<std::uint64_t>(devices_.next_fd()));
  for (const auto& [path, dev] : devices_.devices()) {
    mix(std::hash<std::string>{}(path));
    mix(dev.cursor);
    mix(dev.open_count);
    for (auto fd : dev.fds) mix(static_cast<std::uint64_t>(fd));
  }
  return h;
}

AddressFilter Session::ta_code_filter() const {
  AddressFilter f;
  for (const auto& r : image_->vas.regions())
    if ((r->perms & kPermX) && r->kind != RegionKind::kTrampoline && image_->in_image(r->base))
      f.add_range(r->base, r->end());
  return f;
}

}  // namespace taforge

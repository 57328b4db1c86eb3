#include <gtest/gtest.h>

#include <cstring>

#include "taforge/error.hpp"
#include "taforge/isa.hpp"
#include "taforge/syscall.hpp"
#include "test_util.hpp"

namespace taforge {
namespace {

constexpr Address kText = 0x0040'0000;
constexpr Address kData = 0x0040'2000;
constexpr Address kStackBase = 0x0080'0000;
constexpr std::uint32_t kErr = 0xFFFF'0006;

const std::vector<std::uint8_t> kCryptoBytes = {0x00, 0x11, 0x22, 0x33, 0x44, 0x55, 0x66, 0x77,
                                                0x88, 0x99, 0xaa, 0xbb, 0xcc, 0xdd, 0xee, 0xff};

constexpr const char* kScript =
    "device dev://crypto\n"
    "respond 00112233445566778899aabbccddeeff status 0\n"
    "respond 0102 status 7\n"
    "device dev://rng\n";

struct Env {
  AddressSpace vas{0x0040'0000, 0x1000'0000, WordWidth::kW64};
  std::unique_ptr<Machine> m;
  DeviceModel devices{parse_device_script(kScript)};

  Env() {
    vas.map(kText, kPageSize, kPermR | kPermX, RegionKind::kSegment, "text");
    vas.map(kData, kPageSize, kPermR | kPermW, RegionKind::kSegment, "data");
    vas.map(kStackBase, 16 * kPageSize, kPermR | kPermW, RegionKind::kStack, "stack");
    m = std::make_unique<Machine>(vas, kStackBase + 16 * kPageSize);
  }

  void put_string(Address a, const std::string& s) { vas.poke(a, s.c_str(), s.size() + 1); }

  // Number from an svc immediate (or x8 for register-numbered tables).
  DispatchResult call(const SyscallTable& t, std::uint64_t number, std::vector<std::uint64_t> args) {
    for (std::size_t i = 0; i < args.size(); ++i) m->x[t.arg_registers.at(i)] = args[i];
    SvcSite site;
    site.address = kText;
    if (t.number_source == NumberSource::kImmediate) {
      site.immediate = static_cast<std::uint16_t>(number);
    } else {
      m->x[t.number_register] = number;
    }
    site.original_word = isa::enc::svc(site.immediate);
    return dispatch(t, *m, site, devices, kErr);
  }
};

std::uint64_t number(const SyscallTable& t, Handler h) {
  const auto n = t.number_of(h);
  EXPECT_TRUE(n) << to_string(h);
  return n.value_or(0);
}

TEST(Syscall, ReadAfterOpenReturnsScriptedBytes) {
  Env env;
  const auto& t = syscall_table("teegris");
  env.put_string(kData, "dev://crypto");
  const auto fd = env.call(t, number(t, Handler::kOpen), {kData});
  ASSERT_FALSE(fd.fault);
  EXPECT_EQ(fd.value, 3u);
  const auto r = env.call(t, number(t, Handler::kRead), {fd.value, kData + 0x100, 16});
  ASSERT_FALSE(r.fault);
  EXPECT_EQ(r.value, 16u);
  std::vector<std::uint8_t> buf(16);
  env.vas.peek(kData + 0x100, buf.data(), 16);
  EXPECT_EQ(buf, kCryptoBytes);
  // The script is consumed in order; a nonzero scripted status is returned
  // as is, then the script runs dry.
  const auto second = env.call(t, number(t, Handler::kRead), {fd.value, kData + 0x200, 16});
  EXPECT_EQ(second.value, 7u);
  const auto dry = env.call(t, number(t, Handler::kRead), {fd.value, kData + 0x200, 16});
  EXPECT_EQ(dry.value, kErr);
}

TEST(Syscall, ReadOnUnopenedFdFails) {
  Env env;
  const auto& t = syscall_table("optee");
  const auto r = env.call(t, number(t, Handler::kRead), {7, kData, 16});
  EXPECT_FALSE(r.fault);
  EXPECT_EQ(r.value, kErr);
}

TEST(Syscall, UnknownNumberReturnsErrorAndContinues) {
  for (const char* id : {"optee", "teegris", "qsee", "trusty"}) {
    Env env;
    const auto& t = syscall_table(id);
    std::uint64_t unknown = 0x7ff;
    while (t.entries.count(unknown)) ++unknown;
    EXPECT_EQ(t.lookup(unknown), Handler::kUnsupported);
    const auto r = env.call(t, unknown, {});
    EXPECT_FALSE(r.fault) << id;
    EXPECT_EQ(r.value, kErr) << id;
  }
}

TEST(Syscall, WriteFromBadBufferFaultsOobRead) {
  Env env;
  const auto& t = syscall_table("teegris");
  const Address bad = 0x0900'0000;
  const auto r = env.call(t, number(t, Handler::kWrite), {1, bad, 8});
  ASSERT_TRUE(r.fault);
  EXPECT_EQ(r.fault->kind, FaultKind::kOobRead);
  EXPECT_EQ(r.fault->access_addr, bad);
}

TEST(Syscall, OpenAllocatesFdsFromThree) {
  Env env;
  const auto& t = syscall_table("optee");
  env.put_string(kData, "dev://missing");
  env.put_string(kData + 0x40, "dev://crypto");
  EXPECT_EQ(env.call(t, number(t, Handler::kOpen), {kData}).value, kErr);
  EXPECT_EQ(env.devices.next_fd(), 3);
  const auto a = env.call(t, number(t, Handler::kOpen), {kData + 0x40}).value;
  const auto b = env.call(t, number(t, Handler::kOpen), {kData + 0x40}).value;
  EXPECT_EQ(a, 3u);
  EXPECT_NE(a, b);
  EXPECT_EQ(env.devices.devices().at("dev://crypto").open_count, 2u);
  EXPECT_EQ(env.call(t, number(t, Handler::kClose), {a}).value, 0u);
  EXPECT_EQ(env.call(t, number(t, Handler::kClose), {a}).value, kErr);
}

TEST(Syscall, DeviceModelDirect) {
  DeviceModel d(parse_device_script(kScript));
  EXPECT_FALSE(d.open("dev://missing"));
  const auto a = d.open("dev://crypto");
  const auto b = d.open("dev://crypto");
  ASSERT_TRUE(a && b);
  EXPECT_EQ(*a, 3);
  EXPECT_EQ(*b, 4);
  // An unscripted device answers every request with an empty success.
  const auto rng = d.open("dev://rng");
  ASSERT_TRUE(rng);
  for (int i = 0; i < 3; ++i) {
    const auto resp = d.next_response(*rng);
    ASSERT_TRUE(resp);
    EXPECT_TRUE(resp->response.empty());
    EXPECT_EQ(resp->status, 0);
  }
}

TEST(Syscall, MmapRegions) {
  Env env;
  const auto one = mmap_region(*env.m, 1, kPermR | kPermW);
  ASSERT_TRUE(one);
  EXPECT_EQ(*one % kPageSize, 0u);
  const Region* r = env.vas.find(*one);
  ASSERT_NE(r, nullptr);
  EXPECT_EQ(r->base, *one);
  EXPECT_EQ(r->length, kPageSize);
  EXPECT_EQ(r->kind, RegionKind::kHeap);
  EXPECT_EQ(r->perms, kPermR | kPermW);
  EXPECT_FALSE(mmap_region(*env.m, 0, kPermR | kPermW));
  const auto big = mmap_region(*env.m, 3 * kPageSize + 1, kPermR);
  ASSERT_TRUE(big);
  const Region* rb = env.vas.find(*big);
  EXPECT_EQ(rb->length, 4 * kPageSize);
  EXPECT_TRUE(*big >= r->end() || rb->end() <= r->base);
  EXPECT_FALSE(mmap_region(*env.m, 0x2000'0000, kPermR | kPermW));

  const auto& t = syscall_table("optee");
  EXPECT_EQ(env.call(t, number(t, Handler::kMmap), {0, kPermR | kPermW}).value, kErr);
  const auto via = env.call(t, number(t, Handler::kMmap), {100, kPermR | kPermW}).value;
  EXPECT_NE(via, kErr);
  EXPECT_EQ(via % kPageSize, 0u);
}

TEST(Syscall, TablesAreConsultedPerProfile) {
  // Number 3 is read on OP-TEE and close on Teegris.
  const auto& optee = syscall_table("optee");
  const auto& teegris = syscall_table("teegris");
  ASSERT_EQ(optee.lookup(3), Handler::kRead);
  ASSERT_EQ(teegris.lookup(3), Handler::kClose);

  Env a;
  a.put_string(kData, "dev://crypto");
  const auto fd_a = a.call(optee, number(optee, Handler::kOpen), {kData}).value;
  EXPECT_EQ(a.call(optee, 3, {fd_a, kData + 0x100, 16}).value, 16u);
  EXPECT_TRUE(a.devices.file(static_cast<std::int64_t>(fd_a)));

  Env b;
  b.put_string(kData, "dev://crypto");
  const auto fd_b = b.call(teegris, number(teegris, Handler::kOpen), {kData}).value;
  EXPECT_EQ(b.call(teegris, 3, {fd_b, kData + 0x100, 16}).value, 0u);
  EXPECT_FALSE(b.devices.file(static_cast<std::int64_t>(fd_b)));
}

TEST(Syscall, RegisterNumberedTableReadsNumberRegister) {
  const auto& qsee = syscall_table("qsee");
  ASSERT_EQ(qsee.number_source, NumberSource::kRegister);
  Env env;
  env.put_string(kData, "dev://crypto");
  const auto fd = env.call(qsee, number(qsee, Handler::kOpen), {kData});
  EXPECT_EQ(fd.value, 3u);
}

TEST(Syscall, BuiltinTablesAreWellFormed) {
  for (const char* id : {"optee", "teegris", "qsee", "trusty"}) {
    const auto& t = syscall_table(id);
    EXPECT_FALSE(t.entries.empty()) << id;
    for (const auto& [n, h] : t.entries) EXPECT_NE(h, Handler::kUnsupported) << id;
    for (auto h : {Handler::kRead, Handler::kWrite, Handler::kClose, Handler::kIoctl, Handler::kMmap, Handler::kOpen})
      EXPECT_TRUE(t.number_of(h)) << id << " " << to_string(h);
  }
  EXPECT_THROW(syscall_table("nope"), Error);
}

TEST(Syscall, DeviceScriptRoundTrips) {
  const auto s = parse_device_script(kScript);
  ASSERT_EQ(s.devices.size(), 2u);
  EXPECT_EQ(s.devices[0].first, "dev://crypto");
  ASSERT_EQ(s.devices[0].second.size(), 2u);
  EXPECT_EQ(s.devices[0].second[0].response, kCryptoBytes);
  EXPECT_EQ(s.devices[0].second[1].status, 7);
  const auto again = parse_device_script(format_device_script(s));
  EXPECT_EQ(again.devices, s.devices);
  EXPECT_THROW(parse_device_script("respond 00 status 0\n"), Error);
  EXPECT_THROW(parse_device_script("device d\nrespond 0g status 0\n"), Error);
}

TEST(SyscallProperty, ReturnSequenceIsPureFunctionOfInput) {
  const auto g = gen::generate(gen::hdcp_spec(TzosKind::kTeegris));
  std::vector<std::vector<SyscallRecord>> logs;
  for (int run = 0; run < 2; ++run) {
    auto s = test::make_session(g);
    s->initialize(200000);
    for (std::uint64_t id : {230, 222, 231, 230, 222}) s->invoke(test::command(id), 200000);
    logs.push_back(s->syscall_log());
  }
  EXPECT_FALSE(logs[0].empty());
  EXPECT_EQ(logs[0], logs[1]);
}

}  // namespace
}  // namespace taforge

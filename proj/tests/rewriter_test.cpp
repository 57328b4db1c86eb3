#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "taforge/error.hpp"
#include "taforge/isa.hpp"
#include "taforge/rewriter.hpp"
#include "test_util.hpp"

namespace taforge {
namespace {

namespace e = isa::enc;

const std::filesystem::path kElfData = std::filesystem::path(TAFORGE_TEST_DATA) / "elf";
constexpr Address kBase = 0x0040'0000;

template <typename F>
ErrorCode error_of(F&& f) {
  try {
    f();
  } catch (const Error& err) {
    return err.code();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorCode::kIo;
}

// Text page of `words` at kBase; a trampoline region of `tramp_pages` at
// `tramp_base` when nonzero.
LoadedImage raw_image(const std::vector<std::uint32_t>& words, Address tramp_base = 0, std::uint64_t tramp_pages = 1) {
  LoadedImage img(0x0040'0000, 0x1000'0000, WordWidth::kW64);
  img.vas.map(kBase, page_ceil(4 * words.size() + 1), kPermR | kPermX, RegionKind::kSegment, "text");
  img.vas.poke(kBase, words.data(), 4 * words.size());
  if (tramp_base)
    img.vas.map(tramp_base, tramp_pages * kPageSize, kPermR | kPermX, RegionKind::kTrampoline, "trampolines");
  img.image_start = img.image_base = kBase;
  img.image_end = kBase + page_ceil(4 * words.size() + 1);
  LoadedObject o;
  o.name = "ta";
  o.base = kBase;
  o.start = kBase;
  o.end = img.image_end;
  img.objects.push_back(o);
  return img;
}

// (file, link offset, immediate) from the capstone oracle.
std::set<std::tuple<std::string, Address, std::uint16_t>> oracle_sites() {
  std::ifstream in(kElfData / "svc_sites.txt");
  EXPECT_TRUE(in);
  std::set<std::tuple<std::string, Address, std::uint16_t>> out;
  std::string file, off;
  unsigned imm = 0;
  while (in >> file >> off >> imm) out.emplace(file, std::stoull(off, nullptr, 0), static_cast<std::uint16_t>(imm));
  return out;
}

struct Fixture {
  std::string ta;
  TzosKind profile;
};

class ScanFixture : public ::testing::TestWithParam<Fixture> {};

TEST_P(ScanFixture, SitesMatchDisassemblerAndManifest) {
  const auto& fx = GetParam();
  const TzosProfile p = builtin_profile(fx.profile);
  const auto img = load_and_link(read_file(kElfData / fx.ta), p, LayoutConfig::from_profile(p),
                                 directory_resolver(kElfData));
  const auto sites = scan_svc_sites(img);
  std::set<std::tuple<std::string, Address, std::uint16_t>> got;
  for (const auto& s : sites) {
    const auto obj = std::find_if(img.objects.begin(), img.objects.end(),
                                  [&](const auto& o) { return s.address >= o.start && s.address < o.end; });
    ASSERT_NE(obj, img.objects.end());
    got.emplace(obj->name == "ta" ? fx.ta : obj->name, s.address - obj->base, s.immediate);
    EXPECT_TRUE(isa::is_svc(s.original_word));
    EXPECT_EQ(s.address % 4, 0u);
  }
  for (std::size_t i = 1; i < sites.size(); ++i) EXPECT_LT(sites[i - 1].address, sites[i].address);

  std::set<std::tuple<std::string, Address, std::uint16_t>> want;
  for (const auto& t : oracle_sites()) {
    const auto& name = std::get<0>(t);
    if (name == fx.ta || std::any_of(img.objects.begin(), img.objects.end(), [&](const auto& o) { return o.name == name; }))
      want.insert(t);
  }
  EXPECT_EQ(got, want);

  const auto text = read_file(kElfData / (fx.ta.substr(0, fx.ta.rfind('.')) + ".manifest"));
  const auto manifest = gen::parse_manifest(std::string(text.begin(), text.end()));
  std::set<std::pair<std::string, Address>> got_offsets, from_manifest;
  for (const auto& [name, off, imm] : got) got_offsets.emplace(name, off);
  for (const auto& [object, list] : manifest.svc) {
    const std::string name = object == "ta" ? fx.ta : object;
    for (const auto& s : list) {
      from_manifest.emplace(name, s.offset);
      if (s.number) EXPECT_TRUE(got.count({name, s.offset, static_cast<std::uint16_t>(*s.number)})) << name << " " << s.offset;
    }
  }
  EXPECT_EQ(got_offsets, from_manifest);
}

INSTANTIATE_TEST_SUITE_P(Fixtures, ScanFixture,
                         ::testing::Values(Fixture{"hdcp_optee.elf", TzosKind::kOptee},
                                           Fixture{"hdcp_teegris.elf", TzosKind::kTeegris},
                                           Fixture{"hdcp_optee32.elf", TzosKind::kOptee}),
                         [](const auto& info) {
                           std::string n = info.param.ta;
                           return n.substr(0, n.find('.'));
                         });

TEST(Rewriter, SvcZeroAtOffset0x40) {
  std::vector<std::uint32_t> words(32, e::nop());
  words[0x40 / 4] = 0xD400'0001;
  const auto sites = scan_svc_sites(raw_image(words));
  ASSERT_EQ(sites.size(), 1u);
  EXPECT_EQ(sites[0].address, kBase + 0x40);
  EXPECT_EQ(sites[0].immediate, 0);
  EXPECT_EQ(sites[0].original_word, 0xD400'0001u);
}

TEST(Rewriter, NoSvcWordsGivesEmptyList) {
  EXPECT_TRUE(scan_svc_sites(raw_image({e::nop(), e::ret(), e::hvc(1)})).empty());
}

TEST(Rewriter, TrampolineRegionsAreNotScanned) {
  auto img = raw_image({e::svc(3), e::ret()}, kBase + 0x10000);
  img.vas.poke_word(kBase + 0x10000, e::svc(9), 4);
  const auto sites = scan_svc_sites(img);
  ASSERT_EQ(sites.size(), 1u);
  EXPECT_EQ(sites[0].immediate, 3);
}

// Non-trampoline region contents keyed by base.
std::map<Address, std::vector<std::uint8_t>> region_bytes(const LoadedImage& img) {
  std::map<Address, std::vector<std::uint8_t>> out;
  for (const auto& r : img.vas.regions())
    if (r->kind != RegionKind::kTrampoline) out.emplace(r->base, *r->bytes);
  return out;
}

// Installs trampolines for every scanned site and checks that only site words
// changed outside trampoline regions, and that each patch and trampoline is
// well formed.
void expect_minimal_patch(LoadedImage& img) {
  const auto before = region_bytes(img);
  const auto sites = scan_svc_sites(img);
  const auto table = install_trampolines(img, sites);
  ASSERT_EQ(table.size(), sites.size());
  const auto after = region_bytes(img);
  ASSERT_EQ(before.size(), after.size());
  std::set<Address> changed;
  for (const auto& [base, bytes] : before) {
    const auto& now = after.at(base);
    ASSERT_EQ(bytes.size(), now.size());
    for (std::size_t i = 0; i < bytes.size(); ++i)
      if (bytes[i] != now[i]) changed.insert(base + (i & ~std::size_t{3}));
  }
  std::set<Address> expected;
  for (const auto& s : sites) expected.insert(s.address);
  EXPECT_EQ(changed, expected);

  std::set<Address> tramps;
  for (const auto& [site, entry] : table.entries()) {
    EXPECT_EQ(entry.return_addr, site + 4);
    EXPECT_TRUE(table.in_trampoline_region(entry.trampoline_addr));
    EXPECT_TRUE(tramps.insert(entry.trampoline_addr).second);
    const auto d = static_cast<std::int64_t>(entry.trampoline_addr - site);
    EXPECT_GE(d, -kTrampolineReach);
    EXPECT_LT(d, kTrampolineReach);
    const auto word = static_cast<std::uint32_t>(img.vas.peek_word(site, 4));
    EXPECT_EQ(word, entry.new_word);
    const auto b = isa::decode(word);
    EXPECT_EQ(b.op, isa::Op::kB);
    EXPECT_EQ(site + static_cast<Address>(b.imm), entry.trampoline_addr);
    const auto tramp_first = static_cast<std::uint32_t>(img.vas.peek_word(entry.trampoline_addr, 4));
    EXPECT_EQ(tramp_first & 0xFFE0'001Fu, 0xD400'0002u);  // hvc
    const auto back = isa::decode(static_cast<std::uint32_t>(img.vas.peek_word(entry.trampoline_addr + 4, 4)));
    EXPECT_EQ(back.op, isa::Op::kB);
    EXPECT_EQ(entry.trampoline_addr + 4 + static_cast<Address>(back.imm), entry.return_addr);
  }
  EXPECT_TRUE(scan_svc_sites(img).empty());
}

TEST(Rewriter, PatchTouchesExactlyTheSiteWords) {
  for (const Fixture& fx : {Fixture{"hdcp_optee.elf", TzosKind::kOptee}, Fixture{"hdcp_teegris.elf", TzosKind::kTeegris}}) {
    SCOPED_TRACE(fx.ta);
    const TzosProfile p = builtin_profile(fx.profile);
    auto img = load_and_link(read_file(kElfData / fx.ta), p, LayoutConfig::from_profile(p), directory_resolver(kElfData));
    ASSERT_FALSE(scan_svc_sites(img).empty());
    expect_minimal_patch(img);
  }
}

TEST(RewriterProperty, PatchMinimalityOverRandomSpecs) {
  for (auto kind : {TzosKind::kOptee, TzosKind::kTeegris, TzosKind::kQsee, TzosKind::kTrusty}) {
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
      SCOPED_TRACE(seed);
      const auto dispatch = seed % 2 ? gen::DispatchStyle::kIfElse : gen::DispatchStyle::kJumpTable;
      auto img = test::load_generated(gen::generate(gen::random_spec(kind, dispatch, seed)));
      expect_minimal_patch(img);
    }
  }
}

TEST(Rewriter, EmptySiteListLeavesImageUntouched) {
  const auto g = gen::generate(gen::hdcp_spec(TzosKind::kOptee));
  auto img = test::load_generated(g);
  const auto before = img.vas.full_hash();
  const auto table = install_trampolines(img, {});
  EXPECT_EQ(table.size(), 0u);
  EXPECT_EQ(img.vas.full_hash(), before);
}

TEST(Rewriter, SiteBeyondReachIsRangeExceeded) {
  auto img = raw_image({e::svc(1), e::ret()}, kBase + (48ull << 20));
  const auto sites = scan_svc_sites(img);
  ASSERT_EQ(sites.size(), 1u);
  EXPECT_EQ(error_of([&] { install_trampolines(img, sites); }), ErrorCode::kRangeExceeded);
}

TEST(Rewriter, FullRegionIsRegionFull) {
  const std::size_t slots = kPageSize / kTrampolineSlotBytes;
  std::vector<std::uint32_t> words(slots + 1, e::svc(1));
  auto img = raw_image(words, kBase + 0x10000);
  const auto sites = scan_svc_sites(img);
  ASSERT_EQ(sites.size(), slots + 1);
  EXPECT_EQ(error_of([&] { install_trampolines(img, sites); }), ErrorCode::kRegionFull);
  auto fits = raw_image(std::vector<std::uint32_t>(slots, e::svc(1)), kBase + 0x10000);
  EXPECT_EQ(install_trampolines(fits, scan_svc_sites(fits)).size(), slots);
}

TEST(Rewriter, UnknownTrampoline) {
  auto img = raw_image({e::svc(1), e::svc(2), e::ret()}, kBase + 0x10000);
  const auto table = install_trampolines(img, scan_svc_sites(img));
  const auto& first = table.entries().begin()->second;
  EXPECT_EQ(site_for_trampoline(table, first.trampoline_addr), first.site);
  EXPECT_EQ(error_of([&] { site_for_trampoline(table, first.trampoline_addr + 4); }), ErrorCode::kUnknownTrampoline);
  EXPECT_EQ(error_of([&] { site_for_trampoline(table, kBase); }), ErrorCode::kUnknownTrampoline);
}

TEST(Rewriter, PatchReportHasOneLinePerSite) {
  auto img = raw_image({e::svc(1), e::nop(), e::svc(2), e::ret()}, kBase + 0x10000);
  const auto table = install_trampolines(img, scan_svc_sites(img));
  std::istringstream in(patch_report(table));
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string site, old_word, new_word, tramp;
    ASSERT_TRUE(ls >> site >> old_word >> new_word >> tramp) << line;
    const auto& entry = table.entries().at(std::stoull(site, nullptr, 0));
    EXPECT_EQ(std::stoull(old_word, nullptr, 16), entry.site.original_word);
    EXPECT_EQ(std::stoull(new_word, nullptr, 16), entry.new_word);
    EXPECT_EQ(std::stoull(tramp, nullptr, 0), entry.trampoline_addr);
    ++n;
  }
  EXPECT_EQ(n, 2u);
}

TEST(RewriterProperty, SiteForTrampolineInvertsInstall) {
  std::size_t total = 0;
  for (auto kind : {TzosKind::kOptee, TzosKind::kTeegris, TzosKind::kQsee, TzosKind::kTrusty}) {
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
      const auto g = gen::generate(gen::random_spec(kind, gen::DispatchStyle::kIfElse, seed));
      auto img = test::load_generated(g);
      const auto sites = scan_svc_sites(img);
      const auto table = install_trampolines(img, sites);
      ASSERT_EQ(table.size(), sites.size());
      for (const auto& s : sites) {
        const auto& entry = table.entries().at(s.address);
        EXPECT_EQ(site_for_trampoline(table, entry.trampoline_addr), s);
        ++total;
      }
    }
  }
  EXPECT_GT(total, 0u);
}

}  // namespace
}  // namespace taforge

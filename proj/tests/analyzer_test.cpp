#include <gtest/gtest.h>

#include <algorithm>
#include <chrono>
#include <random>

#include "taforge/analyzer.hpp"
#include "taforge/assembler.hpp"
#include "taforge/error.hpp"
#include "test_util.hpp"

using namespace taforge;
using namespace taforge::analysis;
namespace e = taforge::isa::enc;

namespace {

struct Analyzed {
  gen::Generated g;
  LoadedImage image;
  TzosProfile profile;
  AnalysisReport report;
  Address base() const { return image.main().base; }
};

Analyzed analyze_spec(const gen::TaSpec& spec) {
  auto g = gen::generate(spec);
  auto image = taforge::test::load_generated(g);
  const auto profile = builtin_profile(spec.profile);
  auto report = analyze(image, profile);
  return {std::move(g), std::move(image), profile, std::move(report)};
}

std::vector<gen::DependencyEdge> as_manifest_edges(const std::vector<DepEdge>& edges) {
  std::vector<gen::DependencyEdge> out;
  for (const auto& ed : edges) out.push_back({ed.from, ed.to, std::string(to_string(ed.kind))});
  std::sort(out.begin(), out.end());
  return out;
}

void expect_matches_manifest(const Analyzed& a) {
  const auto& m = a.g.manifest;
  const auto& r = a.report;
  std::vector<std::uint64_t> want;
  for (const auto& c : m.commands) want.push_back(c.id);
  EXPECT_EQ(r.ids.values(), want) << m.name;
  for (const auto& c : m.commands) {
    const CommandId* got = r.ids.find(c.id);
    ASSERT_NE(got, nullptr);
    EXPECT_EQ(got->handler_addr, a.base() + c.case_offset) << c.id;
    ASSERT_TRUE(got->handler_function);
    EXPECT_EQ(*got->handler_function, a.base() + c.handler_offset) << c.id;
  }
  ASSERT_TRUE(r.ids.default_handler);
  EXPECT_EQ(*r.ids.default_handler, a.base() + m.default_offset);
  EXPECT_EQ(as_manifest_edges(r.graph.edges), m.dependencies) << m.name;
  ASSERT_EQ(r.graph.context_fields.size(), m.fields.size()) << m.name;
  for (std::size_t i = 0; i < m.fields.size(); ++i) {
    EXPECT_EQ(r.graph.context_fields[i].offset, m.fields[i].offset);
    EXPECT_EQ(r.graph.context_fields[i].width, m.fields[i].width);
    EXPECT_EQ(r.graph.context_fields[i].writers, m.fields[i].writers);
    EXPECT_EQ(r.graph.context_fields[i].readers, m.fields[i].readers);
  }
  EXPECT_EQ(r.cfg.blocks.size(), m.cfg_blocks) << m.name;
  EXPECT_EQ(r.cfg.edges.size(), m.cfg_edges) << m.name;
  EXPECT_EQ(r.branches.simple, m.branches_simple) << m.name;
  EXPECT_EQ(r.branches.complex, m.branches_complex) << m.name;
  EXPECT_EQ(r.cfg.incomplete_blocks(), 0u) << m.name;
  for (auto d : m.decoy_values) EXPECT_EQ(r.ids.find(d), nullptr) << "decoy " << d;
}

TEST(Analyzer, HdcpFixtureMatchesListingAndManifest) {
  for (auto p : {TzosKind::kOptee, TzosKind::kTeegris, TzosKind::kQsee, TzosKind::kTrusty}) {
    for (auto w : {WordWidth::kW32, WordWidth::kW64}) {
      if (p == TzosKind::kTrusty && w == WordWidth::kW32) continue;
      const auto a = analyze_spec(gen::hdcp_spec(p, w));
      const auto values = a.report.ids.values();
      for (std::uint64_t id : {202, 222, 230, 231, 251, 252})
        EXPECT_TRUE(std::count(values.begin(), values.end(), id)) << id;
      expect_matches_manifest(a);
      const std::vector<DepEdge> want = {{202, 222, DepKind::kContextMemory},
                                         {230, 222, DepKind::kDeviceFd},
                                         {252, 222, DepKind::kContextMemory}};
      std::vector<DepEdge> got = a.report.graph.edges;
      std::sort(got.begin(), got.end(), [](auto& l, auto& r) { return std::tie(l.from, l.to) < std::tie(r.from, r.to); });
      EXPECT_EQ(got, want);
    }
  }
}

TEST(Analyzer, DefaultArmReturnsInvalidCommand) {
  for (auto d : {gen::DispatchStyle::kIfElse, gen::DispatchStyle::kJumpTable}) {
    auto spec = gen::hdcp_spec();
    spec.dispatch = d;
    const auto a = analyze_spec(spec);
    ASSERT_TRUE(a.report.ids.default_handler);
    const Block* blk = a.report.cfg.block_at(*a.report.ids.default_handler);
    ASSERT_NE(blk, nullptr);
    ASSERT_GE(blk->insns.size(), 2u);
    // movz w0,#0xA; movk w0,#0xFFFF,lsl #16
    EXPECT_EQ(blk->words[0], e::movz(false, 0, 0x000A));
    EXPECT_EQ(blk->words[1], e::movk(false, 0, 0xFFFF, 1));
    auto s = taforge::test::make_session(a.g);
    s->initialize(100000);
    const auto st = s->invoke(taforge::test::command(240), 100000);
    EXPECT_EQ(static_cast<std::uint32_t>(st.return_value), kTeeErrorInvalidCommand);
  }
}

TEST(Analyzer, RandomCorpusIsRecoveredExactly) {
  const auto t0 = std::chrono::steady_clock::now();
  int n = 0;
  for (auto p : {TzosKind::kOptee, TzosKind::kTeegris, TzosKind::kQsee, TzosKind::kTrusty}) {
    for (auto d : {gen::DispatchStyle::kIfElse, gen::DispatchStyle::kJumpTable}) {
      for (std::uint64_t seed = 100; seed < 106; ++seed) {
        expect_matches_manifest(analyze_spec(gen::random_spec(p, d, seed)));
        ++n;
      }
    }
  }
  EXPECT_EQ(n, 48);
  EXPECT_LT(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(), 60.0);
}

TEST(Analyzer, SelfContainedDeviceUseHasNoEdges) {
  const auto a = analyze_spec(gen::parse_spec("command 1 device_io dev://a\ncommand 2 device_io dev://a\n"));
  EXPECT_TRUE(a.report.graph.edges.empty());
  expect_matches_manifest(a);
}

TEST(Analyzer, UnwrittenFieldIsListedWithoutWriters) {
  const auto a = analyze_spec(gen::parse_spec("command 1 context_read 8 8 dangling\ncommand 2 echo\n"));
  ASSERT_EQ(a.report.graph.context_fields.size(), 1u);
  EXPECT_TRUE(a.report.graph.context_fields[0].writers.empty());
  EXPECT_EQ(a.report.graph.context_fields[0].readers, std::vector<std::uint64_t>{1});
  EXPECT_TRUE(a.report.graph.edges.empty());
}

// Raw image with one X region holding `words` at 0x400000.
LoadedImage raw_image(const std::vector<std::uint32_t>& words, std::vector<std::uint8_t> data = {}) {
  LoadedImage img(0x0040'0000, 0x1000'0000, WordWidth::kW64);
  const Address base = 0x0040'0000;
  img.vas.map(base, kPageSize, kPermR | kPermX, RegionKind::kSegment, "text");
  img.vas.poke(base, words.data(), 4 * words.size());
  if (!data.empty()) {
    img.vas.map(base + kPageSize, kPageSize, kPermR | kPermW, RegionKind::kSegment, "data");
    img.vas.poke(base + kPageSize, data.data(), data.size());
  }
  img.image_start = img.image_base = base;
  img.image_end = base + 2 * kPageSize;
  LoadedObject o;
  o.name = "ta";
  o.base = base;
  o.start = base;
  o.end = img.image_end;
  img.objects.push_back(o);
  img.entrypoints[kRoleInvoke] = base;
  return img;
}

TEST(Analyzer, StraightLineFunctionIsOneBlock) {
  const auto img = raw_image({e::movz(true, 0, 1), e::add_imm(true, 0, 0, 2), e::nop(), e::nop(), e::ret()});
  const Cfg cfg = recover_cfg(img);
  EXPECT_EQ(cfg.blocks.size(), 1u);
  EXPECT_TRUE(cfg.edges.empty());
}

TEST(Analyzer, UnresolvedIndirectBranchIsAnnotated) {
  const auto img = raw_image({e::mov_reg(true, 9, 0), e::br(9)});
  const Cfg cfg = recover_cfg(img);
  ASSERT_EQ(cfg.blocks.size(), 1u);
  EXPECT_TRUE(cfg.blocks.begin()->second.incomplete);
  EXPECT_EQ(cfg.blocks.begin()->second.term, Terminator::kIndirect);
  EXPECT_EQ(cfg.incomplete_blocks(), 1u);
}

TEST(Analyzer, InvokeWithoutComparisonsYieldsNoIds) {
  const auto img = raw_image({e::movz(true, 0, 0), e::ret()});
  const auto p = builtin_profile(TzosKind::kOptee);
  const Cfg cfg = recover_cfg(img);
  const auto ids = enumerate_command_ids(cfg, img, p, img.entrypoints.at(kRoleInvoke));
  EXPECT_TRUE(ids.ids.empty());
  EXPECT_FALSE(ids.default_handler);
}

TEST(Analyzer, CondEdgesHaveTwoSuccessors) {
  const auto a = analyze_spec(gen::random_spec(TzosKind::kOptee, gen::DispatchStyle::kIfElse, 3));
  for (const auto& [start, b] : a.report.cfg.blocks) {
    if (b.term != Terminator::kCond) continue;
    std::size_t n = 0;
    for (const auto& ed : a.report.cfg.successors(start))
      n += ed.kind == CfgEdgeKind::kCond || ed.kind == CfgEdgeKind::kFallthrough;
    EXPECT_EQ(n, 2u);
  }
  for (const auto& ed : a.report.cfg.edges) {
    EXPECT_TRUE(a.report.cfg.blocks.count(ed.src));
    EXPECT_TRUE(a.report.cfg.blocks.count(ed.dst));
  }
}

TEST(Analyzer, BranchAgainstImmediateIsSimple) {
  // OPTEE invoke: x2 holds the command id.
  const auto img = raw_image({e::cmp_imm(false, 2, 230), e::b_cond(isa::kEq, 8), e::ret(), e::ret()});
  const auto p = builtin_profile(TzosKind::kOptee);
  const auto b = classify_branches(recover_cfg(img), img, p);
  ASSERT_EQ(b.labels.size(), 1u);
  EXPECT_EQ(b.labels.begin()->second, BranchLabel::kSimple);
  EXPECT_DOUBLE_EQ(b.simple_fraction + b.complex_fraction, 1.0);
}

TEST(Analyzer, BranchOnLoadedContextFieldIsComplex) {
  const auto img = raw_image(
      {e::ldr_imm(2, 9, 0, 16), e::cmp_imm(false, 9, 1), e::b_cond(isa::kEq, 8), e::ret(), e::ret()});
  const auto b = classify_branches(recover_cfg(img), img, builtin_profile(TzosKind::kOptee));
  ASSERT_EQ(b.labels.size(), 1u);
  EXPECT_EQ(b.labels.begin()->second, BranchLabel::kComplex);
}

TEST(Analyzer, TaintExcludesConstantScrutinee) {
  const auto a = analyze_spec(gen::hdcp_spec());
  ASSERT_FALSE(a.g.manifest.decoy_values.empty());
  for (auto d : a.g.manifest.decoy_values) {
    EXPECT_EQ(a.report.ids.find(d), nullptr);
    EXPECT_TRUE(std::count(a.report.ids.excluded.begin(), a.report.ids.excluded.end(), d)) << d;
  }
}

TEST(Analyzer, BranchMixWithinTwoPoints) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto spec = gen::random_spec(TzosKind::kTeegris, gen::DispatchStyle::kJumpTable, seed);
    spec.branch_mix = 0.6;
    const auto a = analyze_spec(spec);
    EXPECT_NEAR(a.report.branches.simple_fraction, 0.6, 0.02);
  }
}

// Every non-indirect TA-internal edge taken at runtime is in the CFG.
TEST(Analyzer, ObservedEdgesAreInCfg) {
  for (std::uint64_t seed = 0; seed < 6; ++seed) {
    const auto a = analyze_spec(gen::random_spec(static_cast<TzosKind>(seed % 4), gen::DispatchStyle::kIfElse, seed));
    auto s = taforge::test::make_session(a.g, ExecMode::kDirectTrap);
    s->initialize(100000);
    const auto filter = s->ta_code_filter();
    const auto& cfg = a.report.cfg;
    for (const auto& c : a.g.manifest.commands) {
      for (std::uint8_t b0 : {1, 200}) {
        BranchTrace trace;
        s->invoke(taforge::test::command(c.id, {b0, 2, 3}), 200000, &trace, &filter);
        for (const auto& ev : trace.events) {
          if (ev.source == kReturnSentinel || ev.target == kReturnSentinel || ev.kind == EdgeKind::kTrap) continue;
          const Block* src = cfg.block_containing(ev.source);
          ASSERT_NE(src, nullptr);
          if (src->term == Terminator::kTable) continue;
          CfgEdgeKind want = CfgEdgeKind::kUncond;
          switch (ev.kind) {
            case EdgeKind::kCondTaken: want = CfgEdgeKind::kCond; break;
            case EdgeKind::kCall: want = CfgEdgeKind::kCall; break;
            case EdgeKind::kRet: want = CfgEdgeKind::kRet; break;
            default: break;
          }
          EXPECT_TRUE(cfg.edges.count({src->start, ev.target, want}))
              << hex(ev.source) << " -> " << hex(ev.target) << " " << to_string(ev.kind);
        }
      }
    }
  }
}

// Brute-force oracle: all permutations of the ancestor set consistent with
// the edges.
std::set<std::vector<std::uint64_t>> brute_orders(const std::set<std::uint64_t>& anc, const std::vector<DepEdge>& edges) {
  std::vector<std::uint64_t> perm(anc.begin(), anc.end());
  std::set<std::vector<std::uint64_t>> out;
  do {
    bool ok = true;
    for (const auto& ed : edges) {
      auto a = std::find(perm.begin(), perm.end(), ed.from), b = std::find(perm.begin(), perm.end(), ed.to);
      if (a != perm.end() && b != perm.end() && a > b) ok = false;
    }
    if (ok) out.insert(perm);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return out;
}

TEST(StateModel, HdcpPrefixesMatchBruteForce) {
  DependencyGraph g;
  g.nodes = {202, 222, 230, 231, 251, 252};
  g.edges = {{202, 222, DepKind::kContextMemory}, {230, 222, DepKind::kDeviceFd}, {252, 222, DepKind::kContextMemory}};
  const auto m = build_state_model(g);
  const auto oracle = brute_orders({202, 230, 252}, g.edges);
  EXPECT_EQ(oracle.size(), 6u);
  const auto& orders = m.prefixes.at(222);
  EXPECT_EQ(std::set<std::vector<std::uint64_t>>(orders.begin(), orders.end()), oracle);
  EXPECT_EQ(m.canonical(222), (std::vector<std::uint64_t>{202, 230, 252}));
  for (auto c : {202, 230, 231, 251, 252}) EXPECT_TRUE(m.canonical(c).empty());
  EXPECT_EQ(parse_state_model(format_state_model(m)).prefixes.at(222).front(), m.canonical(222));
}

TEST(StateModel, ChainsRespectOrderAgainstBruteForce) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 40; ++trial) {
    DependencyGraph g;
    const std::uint64_t n = 2 + rng() % 5;
    for (std::uint64_t i = 1; i <= n; ++i) g.nodes.push_back(i);
    for (std::uint64_t i = 1; i <= n; ++i)
      for (std::uint64_t j = i + 1; j <= n; ++j)
        if (rng() % 3 == 0) g.edges.push_back({i, j, DepKind::kContextMemory});
    const auto m = build_state_model(g);
    for (auto c : g.nodes) {
      std::set<std::uint64_t> anc;
      std::vector<std::uint64_t> work{c};
      while (!work.empty()) {
        auto x = work.back();
        work.pop_back();
        for (const auto& ed : g.edges)
          if (ed.to == x && anc.insert(ed.from).second) work.push_back(ed.from);
      }
      const auto oracle = brute_orders(anc, g.edges);
      const auto& orders = m.prefixes.at(c);
      EXPECT_EQ(std::set<std::vector<std::uint64_t>>(orders.begin(), orders.end()), oracle);
      EXPECT_EQ(orders.front(), *oracle.begin());
    }
  }
}

TEST(StateModel, EmptyGraphGivesEmptyPrefixes) {
  DependencyGraph g;
  g.nodes = {1, 2, 3};
  const auto m = build_state_model(g);
  for (auto c : g.nodes) EXPECT_TRUE(m.canonical(c).empty());
}

TEST(StateModel, CycleIsDetected) {
  DependencyGraph g;
  g.nodes = {1, 2};
  g.edges = {{1, 2, DepKind::kDeviceFd}, {2, 1, DepKind::kContextMemory}};
  try {
    build_state_model(g);
    FAIL();
  } catch (const Error& err) {
    EXPECT_EQ(err.code(), ErrorCode::kCycleDetected);
  }
}

}  // namespace

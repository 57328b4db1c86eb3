#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <random>
#include <set>

#include "taforge/error.hpp"
#include "taforge/fuzzer.hpp"
#include "test_util.hpp"

namespace taforge {
namespace {

using namespace fuzz;
using test::fuzz_targets;
using test::guarded_fixture;
using test::make_session;

constexpr std::uint64_t kBudget = 200000;

std::filesystem::path scratch(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("taforge_fuzz_" + name);
  std::filesystem::remove_all(p);
  return p;
}

FuzzInput input_of(std::initializer_list<std::uint64_t> ids, std::vector<std::uint8_t> payload = {1, 2, 3, 4}) {
  FuzzInput in;
  for (auto id : ids) {
    Command c = test::command(id, payload);
    c.payload[1].assign(64, 0);
    in.sequence.push_back(c);
  }
  return in;
}

FuzzInput random_input(Rng& rng, std::size_t max_len = 4) {
  FuzzInput in;
  const std::size_t n = 1 + rng() % max_len;
  for (std::size_t i = 0; i < n; ++i) {
    Command c;
    c.id = rng() % 400;
    for (auto& t : c.types) t = static_cast<std::uint8_t>(rng() % 8);
    for (auto& p : c.payload) {
      p.resize(rng() % 40);
      for (auto& b : p) b = static_cast<std::uint8_t>(rng());
    }
    in.sequence.push_back(c);
  }
  return in;
}

// Values from tests/oracles/edge_hash.py.
TEST(Coverage, EdgeHashMatchesOracle) {
  EXPECT_EQ(edge_hash(0x1000, 0x1000), 6144u);
  EXPECT_EQ(edge_hash(0x1000, 0x1004), 25207u);
  EXPECT_EQ(edge_hash(0x4000a0, 0x400100), 40552u);
  EXPECT_EQ(edge_hash(0, 0), 0u);
  EXPECT_EQ(edge_hash(0xfffffffc, 0x4), 19512u);
}

// For 10000 edges in 65536 buckets a uniform hash leaves about 92.6% of the
// occupied buckets with a single edge; the rule must do no worse.
TEST(Coverage, EdgeHashCollisionsMatchUniformExpectation) {
  Rng rng(11);
  std::map<std::uint32_t, std::set<Edge>> buckets;
  for (int i = 0; i < 10000; ++i) {
    const Edge e{(rng() & 0xFFFFFF) << 2, (rng() & 0xFFFFFF) << 2};
    buckets[edge_hash(e.first, e.second)].insert(e);
  }
  std::size_t single = 0;
  for (const auto& [b, edges] : buckets) single += edges.size() == 1;
  const double m = kBitmapSize, n = 10000;
  const double expected = n * std::pow(1 - 1 / m, n - 1) / (m * (1 - std::pow(1 - 1 / m, n)));
  const double measured = static_cast<double>(single) / static_cast<double>(buckets.size());
  EXPECT_NEAR(measured, expected, 0.01);
  EXPECT_GT(measured, 0.91);
}

TEST(Coverage, HitClassThresholds) {
  const std::vector<std::pair<int, unsigned>> cases = {{0, 0},   {1, 1},   {2, 2},   {3, 3},   {4, 4},
                                                       {7, 4},   {8, 5},   {15, 5},  {16, 6},  {31, 6},
                                                       {32, 7},  {127, 7}, {128, 8}, {255, 8}};
  for (auto [count, cls] : cases) EXPECT_EQ(hit_class(static_cast<std::uint8_t>(count)), cls) << count;
}

TEST(Coverage, RepeatedEdgeRaisesClass) {
  CoverageBitmap local, global;
  const std::vector<Edge> once = {{0x10, 0x20}};
  EXPECT_TRUE(update_coverage(once, local, global));
  EXPECT_EQ(global.buckets[edge_hash(0x10, 0x20)], 1);
  const std::vector<Edge> twice = {{0x10, 0x20}, {0x10, 0x20}};
  local.clear();
  EXPECT_TRUE(update_coverage(twice, local, global));
  EXPECT_EQ(global.buckets[edge_hash(0x10, 0x20)], 2);
}

TEST(Coverage, EmptyTraceIsNotInteresting) {
  CoverageBitmap local, global;
  EXPECT_FALSE(update_coverage(std::vector<Edge>{}, local, global));
  EXPECT_EQ(global.occupied(), 0u);
  EXPECT_FALSE(update_coverage(BranchTrace{}, local, global));
}

TEST(Coverage, CountersSaturate) {
  CoverageBitmap local, global;
  const std::vector<Edge> many(1000, Edge{0x40, 0x80});
  update_coverage(many, local, global);
  EXPECT_EQ(local.buckets[edge_hash(0x40, 0x80)], 255);
  EXPECT_EQ(hit_class(global.buckets[edge_hash(0x40, 0x80)]), 8u);
}

TEST(Coverage, GlobalIsMonotoneOverRandomTraces) {
  Rng rng(5);
  CoverageBitmap local, global;
  for (int round = 0; round < 300; ++round) {
    std::vector<Edge> edges;
    const std::size_t n = rng() % 50;
    for (std::size_t i = 0; i < n; ++i) edges.emplace_back((rng() % 64) * 4, (rng() % 64) * 4);
    const CoverageBitmap before = global;
    local.clear();
    const bool interesting = update_coverage(edges, local, global);
    bool rose = false;
    for (std::size_t b = 0; b < kBitmapSize; ++b) {
      ASSERT_GE(hit_class(global.buckets[b]), hit_class(before.buckets[b]));
      rose |= hit_class(global.buckets[b]) > hit_class(before.buckets[b]);
    }
    EXPECT_EQ(rose, interesting);
    if (!interesting) EXPECT_EQ(global, before);
    local.clear();
    EXPECT_FALSE(update_coverage(edges, local, global));
  }
}

TEST(Coverage, MergeByMaximum) {
  CoverageBitmap a, b;
  a.buckets[1] = 3;
  b.buckets[1] = 7;
  b.buckets[2] = 1;
  EXPECT_TRUE(merge_max(a, b));
  EXPECT_EQ(a.buckets[1], 7);
  EXPECT_EQ(a.buckets[2], 1);
  EXPECT_FALSE(merge_max(a, b));
}

TEST(FuzzInputFormat, RoundTripsRandomInputs) {
  Rng rng(3);
  for (int i = 0; i < 200; ++i) {
    const FuzzInput in = random_input(rng);
    std::size_t used = 0;
    const auto bytes = serialize(in);
    EXPECT_EQ(deserialize(bytes, &used), in);
    EXPECT_EQ(used, bytes.size());
  }
}

TEST(FuzzInputFormat, LayoutIsLittleEndian) {
  FuzzInput in;
  Command c;
  c.id = 0x0102030405060708ull;
  c.types = {5, 6, 0, 0};
  c.payload[0] = {0xAA};
  in.sequence.push_back(c);
  const std::vector<std::uint8_t> expect = {1,    0, 0, 0, 8, 7, 6, 5, 4, 3, 2, 1, 5, 6, 0, 0, 1, 0,
                                            0,    0, 0xAA, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0};
  EXPECT_EQ(serialize(in), expect);
}

TEST(FuzzInputFormat, RejectsBadData) {
  Rng rng(4);
  const auto bytes = serialize(random_input(rng));
  for (std::size_t cut = 0; cut < bytes.size(); ++cut) {
    EXPECT_THROW(deserialize(std::span(bytes).first(cut)), Error) << cut;
  }
  FuzzInput big = input_of({1});
  big.sequence[0].payload[0].assign(kMaxPayload + 1, 0);
  EXPECT_THROW(deserialize(serialize(big)), Error);
  const std::vector<std::uint8_t> empty = {0, 0, 0, 0};
  EXPECT_THROW(deserialize(empty), Error);
}

TEST(CrashFormat, RoundTrips) {
  CrashReport c;
  c.input = input_of({202, 300});
  c.fault.kind = FaultKind::kOobWrite;
  c.fault.pc = 0x401234;
  c.fault.access_addr = 0x9000;
  c.command_index = 1;
  c.trace_tail = {{0x10, 0x14}, {0x20, 0x40}};
  c.dedup_key = dedup_key(c.fault.kind, 0x1234, c.trace_tail);
  const auto back = deserialize_crash(serialize_crash(c));
  EXPECT_EQ(back.input, c.input);
  EXPECT_EQ(back.fault, c.fault);
  EXPECT_EQ(back.dedup_key, c.dedup_key);
  EXPECT_EQ(back.command_index, 1u);
  EXPECT_EQ(back.trace_tail, c.trace_tail);
}

TEST(CrashFormat, DedupKeyUsesOnlyTheLastFourEdges) {
  const std::vector<Edge> a = {{1, 2}, {3, 4}, {5, 6}, {7, 8}, {9, 10}};
  const std::vector<Edge> b = {{99, 98}, {3, 4}, {5, 6}, {7, 8}, {9, 10}};
  EXPECT_EQ(dedup_key(FaultKind::kOobRead, 0x40, a), dedup_key(FaultKind::kOobRead, 0x40, b));
  EXPECT_NE(dedup_key(FaultKind::kOobRead, 0x40, a), dedup_key(FaultKind::kOobWrite, 0x40, a));
  EXPECT_NE(dedup_key(FaultKind::kOobRead, 0x40, a), dedup_key(FaultKind::kOobRead, 0x44, a));
  const std::vector<Edge> c = {{1, 2}, {3, 4}, {5, 6}, {7, 8}, {9, 12}};
  EXPECT_NE(dedup_key(FaultKind::kOobRead, 0x40, a), dedup_key(FaultKind::kOobRead, 0x40, c));
}

TEST(Targets, CommandTableRoundTrips) {
  const auto t = fuzz_targets(gen::generate(gen::hdcp_spec()));
  ASSERT_FALSE(t.commands.empty());
  for (const auto& c : t.commands) EXPECT_LT(c.lo, c.hi) << c.id;
  EXPECT_EQ(parse_commands(format_commands(t)), t.commands);
  EXPECT_NE(t.find(222), nullptr);
  EXPECT_EQ(t.find(12345), nullptr);
}

FuzzTargets model_targets(std::vector<std::uint64_t> ids, std::vector<analysis::DepEdge> edges) {
  FuzzTargets t;
  for (auto id : ids) {
    CommandTarget c;
    c.id = id;
    t.commands.push_back(c);
  }
  analysis::DependencyGraph g;
  g.nodes = ids;
  g.edges = edges;
  t.model = analysis::build_state_model(g);
  return t;
}

TEST(Schedule, PrependsThePrerequisiteChain) {
  const auto t = model_targets({222, 230}, {{230, 222, analysis::DepKind::kDeviceFd}});
  CampaignState st;
  st.command_coverage[230] = 1000000;  // steer the pick toward 222
  FuzzOptions opt;
  opt.epsilon = 0;
  Rng rng(1);
  bool saw = false;
  for (int i = 0; i < 200; ++i) {
    const auto in = schedule(t, st, opt, rng);
    if (in.sequence.back().id != 222) continue;
    saw = true;
    ASSERT_EQ(in.sequence.size(), 2u);
    EXPECT_EQ(in.sequence[0].id, 230u);
  }
  EXPECT_TRUE(saw);
}

TEST(Schedule, HdcpChainForTheGuardedCommand) {
  const auto t = fuzz_targets(gen::generate(gen::hdcp_spec()));
  CampaignState st;
  FuzzOptions opt;
  opt.epsilon = 0;
  Rng rng(2);
  int seen = 0;
  for (int i = 0; i < 500; ++i) {
    const auto in = schedule(t, st, opt, rng);
    if (in.sequence.back().id != 222) continue;
    ++seen;
    std::set<std::uint64_t> before;
    for (std::size_t k = 0; k + 1 < in.sequence.size(); ++k) before.insert(in.sequence[k].id);
    EXPECT_EQ(before, (std::set<std::uint64_t>{202, 230, 252}));
  }
  EXPECT_GT(seen, 20);
}

TEST(Schedule, EpsilonZeroNeverViolatesTheChain) {
  const auto t = model_targets({202, 222}, {{202, 222, analysis::DepKind::kContextMemory}});
  CampaignState st;
  FuzzOptions opt;
  opt.epsilon = 0;
  Rng rng(3);
  for (int i = 0; i < 1000; ++i) {
    const auto in = schedule(t, st, opt, rng);
    bool seen202 = false;
    for (const auto& c : in.sequence) {
      if (c.id == 202) seen202 = true;
      if (c.id == 222) ASSERT_TRUE(seen202);
    }
  }
}

TEST(Schedule, EpsilonViolatesAtTheConfiguredRate) {
  const auto t = model_targets({202, 222}, {{202, 222, analysis::DepKind::kContextMemory}});
  CampaignState st;
  st.command_coverage[202] = 1000000;
  FuzzOptions opt;
  opt.epsilon = 0.1;
  Rng rng(4);
  int targeted = 0, violated = 0;
  for (int i = 0; i < 20000; ++i) {
    const auto in = schedule(t, st, opt, rng);
    bool seen202 = false, bad = false, has222 = false;
    for (const auto& c : in.sequence) {
      if (c.id == 202) seen202 = true;
      if (c.id == 222) {
        has222 = true;
        bad = !seen202;
      }
    }
    if (!has222) continue;
    ++targeted;
    violated += bad;
  }
  // Binomial 5-sigma band around 0.1.
  const double rate = static_cast<double>(violated) / targeted;
  EXPECT_NEAR(rate, 0.1, 5 * std::sqrt(0.09 / targeted));
}

TEST(Schedule, EmptyModelGivesSingleCommands) {
  const auto t = model_targets({1, 2, 3}, {});
  CampaignState st;
  FuzzOptions opt;
  Rng rng(5);
  for (int i = 0; i < 500; ++i) EXPECT_EQ(schedule(t, st, opt, rng).sequence.size(), 1u);
}

TEST(Schedule, StatelessModeIgnoresTheModel) {
  const auto t = model_targets({202, 222}, {{202, 222, analysis::DepKind::kContextMemory}});
  CampaignState st;
  FuzzOptions opt;
  opt.stateful = false;
  Rng rng(6);
  for (int i = 0; i < 500; ++i) EXPECT_EQ(schedule(t, st, opt, rng).sequence.size(), 1u);
}

TEST(Schedule, FavorsLeastCoveredCommands) {
  const auto t = model_targets({1, 2}, {});
  CampaignState st;
  st.command_coverage[1] = 99;  // weight 1/100 against 1
  FuzzOptions opt;
  Rng rng(7);
  int ones = 0;
  for (int i = 0; i < 10000; ++i) ones += schedule(t, st, opt, rng).sequence[0].id == 1;
  EXPECT_NEAR(ones / 10000.0, 1.0 / 101.0, 0.005);
}

TEST(Mutate, ShrinkCanEmptyAOneBytePayload) {
  Rng rng(8);
  FuzzOptions opt;
  const std::vector<std::uint64_t> ids = {1};
  bool emptied = false;
  for (int i = 0; i < 2000 && !emptied; ++i) {
    const auto out = mutate(input_of({1}, {0x42}), ids, opt, rng);
    emptied = out.sequence[0].payload[0].empty() && out.sequence[0].id == 1 && out.sequence.size() == 1;
  }
  EXPECT_TRUE(emptied);
}

TEST(Mutate, SubstitutionDrawsFromTheIdSetWithRareOutsiders) {
  Rng rng(9);
  FuzzOptions opt;
  const std::vector<std::uint64_t> ids = {10, 20, 30, 40};
  int substitutions = 0, outside = 0;
  for (int i = 0; i < 100000; ++i) {
    const auto in = input_of({10}, {});
    const auto out = mutate(in, ids, opt, rng);
    if (out.sequence.size() != 1 || out.sequence[0].id == 10) continue;
    ++substitutions;
    if (std::find(ids.begin(), ids.end(), out.sequence[0].id) == ids.end()) ++outside;
  }
  ASSERT_GT(substitutions, 1000);
  const double rate = static_cast<double>(outside) / substitutions;
  EXPECT_NEAR(rate, 1.0 / 16, 5 * std::sqrt((1.0 / 16) * (15.0 / 16) / substitutions));
}

TEST(Mutate, IsNonIdentity) {
  Rng rng(10);
  FuzzOptions opt;
  const std::vector<std::uint64_t> ids = {1, 2, 3, 202, 222};
  int same = 0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const auto in = random_input(rng);
    same += mutate(in, ids, opt, rng) == in;
  }
  EXPECT_LE(same, n / 100);
}

TEST(Mutate, RespectsBounds) {
  Rng rng(11);
  FuzzOptions opt;
  opt.max_payload = 16;
  opt.max_sequence = 3;
  const std::vector<std::uint64_t> ids = {1, 2};
  FuzzInput in = input_of({1});
  for (int i = 0; i < 5000; ++i) {
    in = mutate(in, ids, opt, rng);
    ASSERT_FALSE(in.sequence.empty());
    ASSERT_LE(in.sequence.size(), 3u);
    for (const auto& c : in.sequence) ASSERT_LE(c.payload[0].size(), 16u);
  }
  opt.stateful = false;
  in = input_of({1});
  for (int i = 0; i < 2000; ++i) ASSERT_EQ((in = mutate(in, ids, opt, rng)).sequence.size(), 1u);
}

class RunCaseTest : public ::testing::TestWithParam<ExecMode> {};

TEST_P(RunCaseTest, HdcpSequences) {
  const auto g = gen::generate(gen::hdcp_spec());
  Executor ex(make_session(g, GetParam()), kBudget);
  CoverageBitmap local, global;
  const auto ok = run_case(ex, input_of({202, 230, 222}), local, global);
  ASSERT_EQ(ok.statuses.size(), 3u);
  for (const auto& st : ok.statuses) {
    EXPECT_EQ(st.kind, ExitKind::kReturned);
    EXPECT_EQ(st.return_value, kTeeSuccess);
  }
  EXPECT_TRUE(ok.interesting);
  EXPECT_FALSE(ok.crash);
  const auto bad = run_case(ex, input_of({222}), local, global);
  ASSERT_EQ(bad.statuses.size(), 1u);
  EXPECT_EQ(bad.statuses[0].return_value, kTeeErrorBadState);
}

TEST_P(RunCaseTest, PlantedOverflowIsReportedAndReplays) {
  const auto g = guarded_fixture();
  Executor ex(make_session(g, GetParam()), kBudget);
  CoverageBitmap local, global;
  const auto in = input_of({202, 230, 252, 300, 202}, {200, 1, 2, 3});
  const auto r = run_case(ex, in, local, global);
  ASSERT_TRUE(r.crash);
  EXPECT_EQ(r.statuses.size(), 4u) << "commands after the fault are skipped";
  EXPECT_EQ(r.crash->command_index, 3u);
  EXPECT_EQ(r.crash->fault.kind, FaultKind::kOobWrite);
  EXPECT_EQ(r.crash->fault.pc, ex.session().image().main().base + g.manifest.vulns[0].fault_offset);
  EXPECT_LE(r.crash->trace_tail.size(), kTraceTail);
  const auto again = ex.run(r.crash->input);
  ASSERT_TRUE(again.crash);
  EXPECT_EQ(again.crash->dedup_key, r.crash->dedup_key);
  EXPECT_EQ(again.crash->fault, r.crash->fault);
}

TEST_P(RunCaseTest, ResetMakesRunsIndependent) {
  const auto g = gen::generate(gen::hdcp_spec());
  Executor ex(make_session(g, GetParam()), kBudget);
  Rng rng(12);
  for (std::uint64_t id : {202, 222, 230, 231, 251, 252, 999}) {
    const auto in = input_of({id});
    const auto a = ex.run(in);
    ex.run(input_of({202, 230, 252}));  // leaves state behind unless reset
    const auto b = ex.run(in);
    EXPECT_EQ(a.trace, b.trace) << id;
    EXPECT_EQ(a.statuses, b.statuses) << id;
  }
  Executor sticky(make_session(g, GetParam()), kBudget, false);
  sticky.run(input_of({202, 230, 252}));
  EXPECT_EQ(sticky.run(input_of({222})).statuses[0].return_value, kTeeSuccess);
}

TEST_P(RunCaseTest, SequenceReachesEdgesNoSingleCommandDoes) {
  const auto g = gen::generate(gen::hdcp_spec());
  Executor ex(make_session(g, GetParam()), kBudget);
  const auto seq = ex.run(input_of({202, 230, 252, 222})).trace.edges;
  std::set<Edge> singles;
  for (auto id : g.manifest.commands) {
    const auto one = ex.run(input_of({id.id})).trace.edges;
    singles.insert(one.begin(), one.end());
    if (id.id == 202 || id.id == 230 || id.id == 252) {
      EXPECT_TRUE(std::includes(seq.begin(), seq.end(), one.begin(), one.end())) << id.id;
    }
  }
  std::vector<Edge> only_seq;
  std::set_difference(seq.begin(), seq.end(), singles.begin(), singles.end(), std::back_inserter(only_seq));
  EXPECT_FALSE(only_seq.empty());
}

TEST_P(RunCaseTest, VerifiedRestoresPass) {
  const auto g = gen::generate(gen::hdcp_spec());
  Executor ex(make_session(g, GetParam()), kBudget);
  ex.set_verify_interval(1);
  for (int i = 0; i < 5; ++i) EXPECT_NO_THROW(ex.run(input_of({202, 230, 252, 222})));
}

INSTANTIATE_TEST_SUITE_P(Modes, RunCaseTest, ::testing::Values(ExecMode::kRewritten, ExecMode::kDirectTrap),
                         [](const auto& info) { return info.param == ExecMode::kRewritten ? "Rewritten" : "DirectTrap"; });

CampaignConfig hdcp_campaign(const gen::Generated& g, const std::filesystem::path& dir, std::uint64_t iterations,
                             std::uint64_t seed = 1) {
  CampaignConfig cfg;
  cfg.make_session = [&g] { return make_session(g); };
  cfg.targets = fuzz_targets(g);
  cfg.out_dir = dir;
  cfg.iterations = iterations;
  cfg.seed = seed;
  cfg.checkpoint_every = 250;
  return cfg;
}

TEST(Campaign, ZeroIterationsLeavesAnEmptyCorpus) {
  const auto g = gen::generate(gen::hdcp_spec());
  const auto dir = scratch("zero");
  const auto st = run_campaign(hdcp_campaign(g, dir, 0));
  EXPECT_TRUE(st.corpus.empty());
  EXPECT_EQ(st.stats.executions, 0u);
  EXPECT_TRUE(std::filesystem::exists(dir / "stats.txt"));
  EXPECT_EQ(read_file(dir / "bitmap.bin").size(), kBitmapSize);
}

TEST(Campaign, CountsExecutionsAndPersists) {
  const auto g = guarded_fixture();
  const auto dir = scratch("persist");
  const auto st = run_campaign(hdcp_campaign(g, dir, 2000));
  EXPECT_EQ(st.stats.executions, 2000u);
  EXPECT_EQ(st.stats.iterations, 2000u);
  EXPECT_GE(st.stats.requests, 2000u);
  EXPECT_FALSE(st.corpus.empty());
  for (const auto& e : st.corpus) EXPECT_FALSE(e.signature.empty()) << "corpus entries added coverage";
  const auto text = read_file(dir / "stats.txt");
  const auto stats = parse_stats(std::string(text.begin(), text.end()));
  EXPECT_EQ(stats.executions, 2000u);
  EXPECT_GT(stats.execs_per_sec, 0);
  EXPECT_EQ(stats.unique_crashes, st.crashes.size());
  std::size_t files = 0;
  for ([[maybe_unused]] const auto& f : std::filesystem::directory_iterator(dir / "corpus")) ++files;
  EXPECT_EQ(files, st.corpus.size());
  const auto bitmap = read_file(dir / "bitmap.bin");
  EXPECT_TRUE(std::equal(bitmap.begin(), bitmap.end(), st.global.buckets.begin()));

  // Persisted crashes replay with the same fault and key.
  ASSERT_FALSE(st.crashes.empty()) << "the guarded overflow should be found within 2000 iterations";
  Executor ex(make_session(g), kBudget);
  for (const auto& f : std::filesystem::directory_iterator(dir / "crashes")) {
    const auto c = deserialize_crash(read_file(f.path()));
    const auto r = ex.run(c.input);
    ASSERT_TRUE(r.crash) << f.path();
    EXPECT_EQ(r.crash->fault.kind, c.fault.kind);
    EXPECT_EQ(r.crash->fault.pc, c.fault.pc);
    EXPECT_EQ(r.crash->dedup_key, c.dedup_key);
  }
}

TEST(Campaign, SingleWorkerIsDeterministic) {
  const auto g = gen::generate(gen::hdcp_spec());
  const auto a = run_campaign(hdcp_campaign(g, scratch("det_a"), 1500, 7));
  const auto b = run_campaign(hdcp_campaign(g, scratch("det_b"), 1500, 7));
  EXPECT_EQ(a.global, b.global);
  EXPECT_EQ(a.stats.executions, b.stats.executions);
  ASSERT_EQ(a.corpus.size(), b.corpus.size());
  for (std::size_t i = 0; i < a.corpus.size(); ++i) EXPECT_EQ(a.corpus[i].input, b.corpus[i].input);
}

TEST(Campaign, ResumeContinuesTheSameTrajectory) {
  const auto g = gen::generate(gen::hdcp_spec());
  const auto whole = run_campaign(hdcp_campaign(g, scratch("whole"), 1000, 3));
  const auto dir = scratch("split");
  run_campaign(hdcp_campaign(g, dir, 500, 3));
  auto cfg = hdcp_campaign(g, dir, 1000, 3);
  cfg.resume = true;
  const auto resumed = run_campaign(cfg);
  EXPECT_EQ(resumed.stats.executions, 1000u);
  EXPECT_EQ(resumed.global, whole.global);
  ASSERT_EQ(resumed.corpus.size(), whole.corpus.size());
  for (std::size_t i = 0; i < whole.corpus.size(); ++i) {
    EXPECT_EQ(resumed.corpus[i].input, whole.corpus[i].input);
    EXPECT_EQ(resumed.corpus[i].signature, whole.corpus[i].signature);
  }
  EXPECT_EQ(resumed.command_coverage, whole.command_coverage);
}

TEST(Campaign, ResumeWithoutCheckpointFails) {
  const auto g = gen::generate(gen::hdcp_spec());
  auto cfg = hdcp_campaign(g, scratch("nockpt"), 10);
  cfg.resume = true;
  EXPECT_THROW(run_campaign(cfg), Error);
}

TEST(Campaign, RecordsEveryExecutedInput) {
  const auto g = gen::generate(gen::hdcp_spec());
  auto cfg = hdcp_campaign(g, {}, 300);
  std::vector<FuzzInput> seen;
  cfg.on_input = [&](const FuzzInput& in) { seen.push_back(in); };
  const auto st = run_campaign(cfg);
  EXPECT_EQ(seen.size(), 300u);
  // Replaying the recorded inputs rebuilds the same bitmap.
  Executor ex(make_session(g), cfg.budget);
  CoverageBitmap local, global;
  for (const auto& in : seen) run_case(ex, in, local, global);
  EXPECT_EQ(global, st.global);
}

TEST(Campaign, WorkersShareOneBitmap) {
  const auto g = guarded_fixture();
  auto cfg = hdcp_campaign(g, scratch("workers"), 1200);
  cfg.workers = 3;
  const auto st = run_campaign(cfg);
  EXPECT_EQ(st.stats.executions, 1200u);
  EXPECT_GT(st.global.occupied(), 0u);
  const auto bitmap = read_file(cfg.out_dir / "bitmap.bin");
  EXPECT_TRUE(std::equal(bitmap.begin(), bitmap.end(), st.global.buckets.begin()));
}

TEST(Campaign, StopFlagEndsAnUnboundedRun) {
  const auto g = gen::generate(gen::hdcp_spec());
  auto cfg = hdcp_campaign(g, {}, 0);
  cfg.iterations.reset();
  std::atomic<bool> stop{false};
  cfg.stop = &stop;
  std::uint64_t n = 0;
  cfg.on_input = [&](const FuzzInput&) {
    if (++n == 50) stop = true;
  };
  EXPECT_EQ(run_campaign(cfg).stats.executions, 50u);
}

TEST(Campaign, NeedsABound) {
  const auto g = gen::generate(gen::hdcp_spec());
  auto cfg = hdcp_campaign(g, {}, 0);
  cfg.iterations.reset();
  EXPECT_THROW(run_campaign(cfg), Error);
}

}  // namespace
}  // namespace taforge

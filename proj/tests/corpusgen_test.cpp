#include <gtest/gtest.h>

#include "taforge/corpusgen.hpp"
#include "taforge/error.hpp"
#include "test_util.hpp"

using namespace taforge;
using namespace taforge::gen;
using taforge::test::command;
using taforge::test::make_session;

namespace {

constexpr std::uint64_t kBudget = 200000;

std::uint32_t run(Session& s, std::uint64_t id, std::vector<std::uint8_t> payload = {1, 2, 3, 4}) {
  const auto st = s.invoke(command(id, std::move(payload)), kBudget);
  EXPECT_EQ(st.kind, ExitKind::kReturned) << "command " << id;
  return static_cast<std::uint32_t>(st.return_value);
}

struct Variant {
  TzosKind profile;
  WordWidth width;
  ExecMode mode;
};

class HdcpTest : public ::testing::TestWithParam<Variant> {};

TEST_P(HdcpTest, GuardedSequenceAndDependencies) {
  const auto v = GetParam();
  const auto g = generate(hdcp_spec(v.profile, v.width));
  auto s = make_session(g, v.mode);
  for (const auto& st : s->initialize(kBudget)) ASSERT_EQ(st.kind, ExitKind::kReturned);
  const auto snap = s->snapshot();

  EXPECT_EQ(run(*s, 222), kTeeErrorBadState);
  s->restore(snap);
  EXPECT_EQ(run(*s, 202), 0u);
  EXPECT_EQ(run(*s, 230), 0u);
  EXPECT_EQ(run(*s, 222), 0u);
  EXPECT_EQ(run(*s, 999), kTeeErrorInvalidCommand);

  const std::vector<DependencyEdge> want = {
      {202, 222, "CONTEXT_MEMORY"}, {230, 222, "DEVICE_FD"}, {252, 222, "CONTEXT_MEMORY"}};
  EXPECT_EQ(g.manifest.dependencies, want);
}

std::vector<Variant> all_variants() {
  std::vector<Variant> out;
  for (auto p : {TzosKind::kOptee, TzosKind::kTeegris, TzosKind::kQsee, TzosKind::kTrusty})
    for (auto w : {WordWidth::kW32, WordWidth::kW64})
      for (auto m : {ExecMode::kRewritten, ExecMode::kDirectTrap})
        if (!(p == TzosKind::kTrusty && w == WordWidth::kW32)) out.push_back({p, w, m});
  return out;
}

INSTANTIATE_TEST_SUITE_P(Profiles, HdcpTest, ::testing::ValuesIn(all_variants()));

TEST(Corpusgen, HdcpBranchMixMatchesTarget) {
  const auto g = generate(hdcp_spec());
  const double s = static_cast<double>(g.manifest.branches_simple);
  const double c = static_cast<double>(g.manifest.branches_complex);
  EXPECT_NEAR(s / (s + c), 0.571, 0.01);
}

TEST(Corpusgen, PlantedVulnerabilityNeedsItsGuards) {
  const TaSpec spec = plant_vulnerability(hdcp_spec(), VulnKind::kOobWrite, {202, 230, 252}, 300);
  const auto g = generate(spec);
  ASSERT_EQ(g.manifest.vulns.size(), 1u);
  const auto& vi = g.manifest.vulns[0];
  EXPECT_EQ(vi.trigger, (std::vector<std::uint64_t>{202, 230, 252, 300}));

  auto s = make_session(g);
  s->initialize(kBudget);
  const auto clean = s->snapshot();
  const std::vector<std::uint8_t> hot = {200, 1, 2, 3};

  EXPECT_EQ(run(*s, 300, hot), kTeeErrorBadState);
  s->restore(clean);
  for (auto id : {202, 230}) run(*s, id);
  EXPECT_EQ(run(*s, 300, hot), kTeeErrorBadState);

  s->restore(clean);
  for (auto id : {202, 230, 252}) run(*s, id);
  const auto armed = s->snapshot();
  EXPECT_EQ(run(*s, 300, {10, 1}), 0u);
  s->restore(armed);
  const auto st = s->invoke(command(300, hot), kBudget);
  ASSERT_EQ(st.kind, ExitKind::kFault);
  EXPECT_EQ(st.fault->kind, FaultKind::kOobWrite);
  EXPECT_EQ(st.fault->pc, s->image().main().base + vi.fault_offset);
}

TEST(Corpusgen, EveryVulnKindFaultsAsDeclared) {
  for (auto kind : {VulnKind::kStackOverflow, VulnKind::kOobWrite, VulnKind::kOobRead, VulnKind::kUafStub}) {
    for (auto p : {TzosKind::kOptee, TzosKind::kQsee}) {
      const auto g = generate(plant_vulnerability(hdcp_spec(p), kind, {251}, 400));
      auto s = make_session(g);
      s->initialize(kBudget);
      run(*s, 251);
      const auto st = s->invoke(command(400, {255, 0, 0, 0}), kBudget);
      ASSERT_EQ(st.kind, ExitKind::kFault) << to_string(kind);
      EXPECT_EQ(to_string(st.fault->kind), vuln_fault_kind(kind));
      EXPECT_EQ(st.fault->pc, s->image().main().base + g.manifest.vulns[0].fault_offset);
    }
  }
}

TEST(Corpusgen, SpecTextRoundTrips) {
  const TaSpec spec = plant_vulnerability(hdcp_spec(TzosKind::kQsee, WordWidth::kW32), VulnKind::kUafStub, {230});
  EXPECT_EQ(parse_spec(format_spec(spec)), spec);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const TaSpec r = random_spec(TzosKind::kOptee, DispatchStyle::kJumpTable, seed);
    EXPECT_EQ(parse_spec(format_spec(r)), r);
  }
}

TEST(Corpusgen, ManifestTextRoundTrips) {
  for (auto p : {TzosKind::kOptee, TzosKind::kTeegris, TzosKind::kQsee, TzosKind::kTrusty}) {
    const auto g = generate(plant_vulnerability(hdcp_spec(p), VulnKind::kOobRead, {202}));
    EXPECT_EQ(parse_manifest(format_manifest(g.manifest)), g.manifest);
  }
}

TEST(Corpusgen, GenerationIsDeterministic) {
  const TaSpec spec = random_spec(TzosKind::kTeegris, DispatchStyle::kIfElse, 7);
  const auto a = generate(spec), b = generate(spec);
  EXPECT_EQ(a.elf, b.elf);
  EXPECT_EQ(a.libraries, b.libraries);
  EXPECT_EQ(a.manifest, b.manifest);
}

void expect_invalid(const std::string& text) {
  try {
    validate(parse_spec(text));
    ADD_FAILURE() << "accepted: " << text;
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kSpecInvalid) << text;
  }
}

TEST(Corpusgen, ValidationRejectsBadSpecs) {
  expect_invalid("profile optee\n");
  expect_invalid("command 1 echo\ncommand 1 checksum\n");
  expect_invalid("command 5000 echo\n");
  expect_invalid("dispatch jump_table\ncommand 1 echo\ncommand 900 echo\n");
  expect_invalid("command 1 context_write 500 16\n");
  expect_invalid("command 1 context_write 0 65\n");
  expect_invalid("command 1 set_flag 100\n");
  expect_invalid("command 1 device_open dev://a 100\n");
  expect_invalid("command 1 context_read 0 8\n");
  expect_invalid("command 1 echo\nvuln oob_read 2 guard 7\n");
  expect_invalid("profile trusty\nwidth 32\ncommand 1 echo\n");
  expect_invalid("command 1 context_write 0 4 + context_read 8 4\ncommand 2 context_write 8 4 + context_read 0 4\n");
  expect_invalid("command 1 bogus\n");
  EXPECT_NO_THROW(validate(parse_spec("command 1 context_read 0 8 dangling\n")));
}

TEST(Corpusgen, RandomSpecsRunCleanlyAndTriggerVulns) {
  for (auto p : {TzosKind::kOptee, TzosKind::kTeegris, TzosKind::kQsee, TzosKind::kTrusty}) {
    for (auto d : {DispatchStyle::kIfElse, DispatchStyle::kJumpTable}) {
      for (std::uint64_t seed = 1; seed <= 6; ++seed) {
        const TaSpec spec = random_spec(p, d, seed);
        const auto g = generate(spec);
        const double sc = static_cast<double>(g.manifest.branches_simple);
        EXPECT_NEAR(sc / (sc + g.manifest.branches_complex), spec.branch_mix, 0.01);
        auto s = make_session(g);
        s->initialize(kBudget);
        const auto clean = s->snapshot();
        for (const auto& c : g.manifest.commands) {
          const auto st = s->invoke(command(c.id, {1, 2, 3}), kBudget);
          ASSERT_EQ(st.kind, ExitKind::kReturned) << spec.name << " cmd " << c.id;
        }
        for (const auto& v : g.manifest.vulns) {
          s->restore(clean);
          for (std::size_t i = 0; i + 1 < v.trigger.size(); ++i) run(*s, v.trigger[i]);
          const auto st = s->invoke(command(v.id, {250, 1, 2, 3}), kBudget);
          ASSERT_EQ(st.kind, ExitKind::kFault) << spec.name;
          EXPECT_EQ(to_string(st.fault->kind), vuln_fault_kind(v.kind));
          EXPECT_EQ(st.fault->pc, s->image().main().base + v.fault_offset);
        }
      }
    }
  }
}

TEST(Corpusgen, JumpTableHoleHitsDefault) {
  const auto g = generate(parse_spec("dispatch jump_table\ncommand 10 echo\ncommand 14 checksum\n"));
  auto s = make_session(g);
  s->initialize(kBudget);
  EXPECT_EQ(run(*s, 12), kTeeErrorInvalidCommand);
  EXPECT_EQ(run(*s, 9), kTeeErrorInvalidCommand);
  EXPECT_EQ(run(*s, 15), kTeeErrorInvalidCommand);
  EXPECT_EQ(run(*s, 14), 0u);
}

}  // namespace

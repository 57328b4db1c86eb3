#pragma once

// Stateful coverage-guided fuzzing: command sequences scheduled from the
// state model, one mutation per input, snapshot reset between sequences,
// edge coverage over normalized traces and crash triage.

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "taforge/analyzer.hpp"
#include "taforge/coverage.hpp"
#include "taforge/session.hpp"
#include "taforge/trace.hpp"

namespace taforge::fuzz {

using Rng = std::mt19937_64;

struct FuzzInput {
  std::vector<Command> sequence;
  std::uint64_t seed_id = 0;  // lineage only, not serialized

  bool operator==(const FuzzInput& o) const { return sequence == o.sequence; }
};

// u32 sequence length, then per command: u64 id, 4 slot descriptors, and per
// slot u32 size + bytes. Little-endian throughout.
std::vector<std::uint8_t> serialize(const FuzzInput& in);
// Throws Error(IO) on truncated or oversized data. `consumed` receives the
// number of bytes read.
FuzzInput deserialize(std::span<const std::uint8_t> bytes, std::size_t* consumed = nullptr,
                      std::size_t max_payload = kMaxPayload);

struct CommandTarget {
  std::uint64_t id = 0;
  // Handler address range as offsets from the image base.
  std::uint64_t lo = 0;
  std::uint64_t hi = 0;

  bool operator==(const CommandTarget&) const = default;
};

// What the fuzzer needs from analysis.
struct FuzzTargets {
  std::vector<CommandTarget> commands;  // sorted by id
  analysis::StateModel model;

  std::vector<std::uint64_t> ids() const;
  const CommandTarget* find(std::uint64_t id) const;
};

FuzzTargets targets_from_analysis(const analysis::AnalysisReport& report, Address image_base);
// `command <id> <lo> <hi>` lines.
std::string format_commands(const FuzzTargets& t);
std::vector<CommandTarget> parse_commands(std::string_view text);

struct CrashReport {
  FuzzInput input;
  Fault fault;
  std::uint64_t dedup_key = 0;
  std::uint32_t command_index = 0;  // sequence element that faulted
  std::vector<Edge> trace_tail;     // normalized, oldest first
};
inline constexpr std::size_t kTraceTail = 64;
inline constexpr std::size_t kDedupEdges = 4;

// FNV-1a over (fault kind, fault pc offset, last 4 normalized edges).
std::uint64_t dedup_key(FaultKind kind, std::uint64_t pc_offset, std::span<const Edge> trace);

// Serialized input, then: u8 fault kind, u64 pc, u8 has_access, u64 access,
// u64 dedup_key, u32 command_index, u32 tail length, tail (u64, u64) pairs.
std::vector<std::uint8_t> serialize_crash(const CrashReport& c);
CrashReport deserialize_crash(std::span<const std::uint8_t> bytes);

struct FuzzOptions {
  double epsilon = 0.1;        // probability of deliberately violating the prereq chain
  bool stateful = true;        // false: single-command inputs only
  std::size_t max_payload = kMaxPayload;
  std::size_t max_sequence = 16;
  std::size_t fresh_payload_max = 32;
  std::size_t output_size = 64;  // bytes offered in memref-output slots
};

// Corpus and coverage bookkeeping the scheduler reads.
struct CorpusEntry {
  FuzzInput input;
  std::vector<std::uint32_t> signature;  // buckets whose hit class rose
};

struct CampaignStats {
  std::uint64_t iterations = 0;
  std::uint64_t executions = 0;
  std::uint64_t requests = 0;
  std::uint64_t timeouts = 0;
  std::uint64_t unique_crashes = 0;
  std::uint64_t corpus_size = 0;
  double seconds = 0;
  double execs_per_sec = 0;
  double requests_per_sec = 0;
  double bitmap_occupancy = 0;
};

struct CampaignState {
  std::vector<CorpusEntry> corpus;
  CoverageBitmap global;
  CampaignStats stats;
  std::uint64_t rng_seed = 0;
  std::string rng_state;  // serialized engine state at the last checkpoint
  std::map<std::uint64_t, CrashReport> crashes;  // by dedup key
  std::map<std::uint64_t, std::uint64_t> command_coverage;  // id -> buckets attributed
  std::uint64_t next_seed_id = 0;
};

// Target weighted by 1 / (1 + coverage under its handler), one of its
// prerequisite orders prepended, payloads from a corpus parent or fresh.
FuzzInput schedule(const FuzzTargets& targets, const CampaignState& state, const FuzzOptions& opt, Rng& rng);

// Applies exactly one mutation operator.
FuzzInput mutate(const FuzzInput& in, std::span<const std::uint64_t> ids, const FuzzOptions& opt, Rng& rng);

// A fresh request for `id` in the conventional shape.
Command fresh_command(std::uint64_t id, const FuzzOptions& opt, Rng& rng);

struct CaseResult {
  std::vector<ExitStatus> statuses;
  trace::NormalizedTrace trace;
  std::optional<CrashReport> crash;
  bool timeout = false;
  bool interesting = false;
};

// A session prepared for repeated cases: initialized, snapshotted, traced over
// TA code and its trampolines.
class Executor {
 public:
  Executor(std::unique_ptr<Session> session, std::uint64_t budget, bool reset_between_sequences = true);

  // Runs the sequence without touching coverage.
  CaseResult run(const FuzzInput& in);
  // Every `n` resets the restored state hash is checked against the
  // snapshot's; 0 disables. Mismatch throws SNAPSHOT_MISMATCH.
  void set_verify_interval(std::uint64_t n) { verify_every_ = n; }

  Session& session() { return *session_; }
  const SessionSnapshot& snapshot() const { return snapshot_; }

 private:
  std::unique_ptr<Session> session_;
  std::uint64_t budget_;
  bool reset_;
  SessionSnapshot snapshot_;
  std::uint64_t snapshot_hash_ = 0;
  AddressFilter filter_;
  std::uint64_t runs_ = 0;
  std::uint64_t verify_every_ = 1000;
};

// run + update_coverage.
CaseResult run_case(Executor& ex, const FuzzInput& in, CoverageBitmap& local, CoverageBitmap& global);

struct CampaignConfig {
  std::function<std::unique_ptr<Session>()> make_session;
  FuzzTargets targets;
  FuzzOptions options;
  std::filesystem::path out_dir;  // empty: nothing persisted
  std::optional<std::uint64_t> iterations;
  std::optional<double> seconds;
  unsigned workers = 1;
  std::uint64_t seed = 0;
  std::uint64_t budget = 100000;  // instructions per command
  bool reset_between_sequences = true;
  std::uint64_t checkpoint_every = 1000;
  bool resume = false;
  bool stop_on_crash = false;
  const std::atomic<bool>* stop = nullptr;
  // Called with every executed input, in execution order for one worker.
  std::function<void(const FuzzInput&)> on_input;
};

// Runs until the iteration bound, time bound, stop flag or (optionally) the
// first crash. At least one bound or the stop flag must be set.
CampaignState run_campaign(const CampaignConfig& cfg);

// stats.txt: `key value` lines.
std::string format_stats(const CampaignStats& s);
CampaignStats parse_stats(std::string_view text);

// Loads corpus, crashes, bitmap and the rng/bookkeeping checkpoint.
CampaignState load_checkpoint(const std::filesystem::path& dir);
void save_checkpoint(const CampaignState& state, const std::filesystem::path& dir);

}  // namespace taforge::fuzz

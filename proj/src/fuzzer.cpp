#include "taforge/fuzzer.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "taforge/error.hpp"
#include "taforge/types.hpp"

namespace taforge::fuzz {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Serialization

namespace {

void put_le(std::vector<std::uint8_t>& out, std::uint64_t v, unsigned bytes) {
  for (unsigned i = 0; i < bytes; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> b) : b_(b) {}

  std::uint64_t le(unsigned bytes) {
    need(bytes);
    std::uint64_t v = 0;
    for (unsigned i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(b_[pos_ + i]) << (8 * i);
    pos_ += bytes;
    return v;
  }
  std::vector<std::uint8_t> take(std::size_t n) {
    need(n);
    std::vector<std::uint8_t> v(b_.begin() + static_cast<std::ptrdiff_t>(pos_),
                                b_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
    pos_ += n;
    return v;
  }
  std::size_t pos() const { return pos_; }
  std::span<const std::uint8_t> rest() const { return b_.subspan(pos_); }

 private:
  void need(std::size_t n) const {
    if (b_.size() - pos_ < n) throw Error(ErrorCode::kIo, "truncated fuzz input");
  }
  std::span<const std::uint8_t> b_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> serialize(const FuzzInput& in) {
  std::vector<std::uint8_t> out;
  put_le(out, in.sequence.size(), 4);
  for (const auto& c : in.sequence) {
    put_le(out, c.id, 8);
    for (auto t : c.types) out.push_back(t);
    for (const auto& p : c.payload) {
      put_le(out, p.size(), 4);
      out.insert(out.end(), p.begin(), p.end());
    }
  }
  return out;
}

FuzzInput deserialize(std::span<const std::uint8_t> bytes, std::size_t* consumed, std::size_t max_payload) {
  Reader r(bytes);
  FuzzInput in;
  const auto n = r.le(4);
  if (n == 0) throw Error(ErrorCode::kIo, "empty command sequence");
  for (std::uint64_t i = 0; i < n; ++i) {
    Command c;
    c.id = r.le(8);
    for (auto& t : c.types) t = static_cast<std::uint8_t>(r.le(1));
    for (auto& p : c.payload) {
      const auto size = r.le(4);
      if (size > max_payload) throw Error(ErrorCode::kIo, fmt::format("payload of {} bytes exceeds {}", size, max_payload));
      p = r.take(size);
    }
    in.sequence.push_back(std::move(c));
  }
  if (consumed) *consumed = r.pos();
  return in;
}

std::uint64_t dedup_key(FaultKind kind, std::uint64_t pc_offset, std::span<const Edge> trace) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  auto mix = [&](std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
      h ^= (v >> (8 * i)) & 0xFF;
      h *= 0x100000001b3ull;
    }
  };
  mix(static_cast<std::uint64_t>(kind));
  mix(pc_offset);
  const std::size_t from = trace.size() > kDedupEdges ? trace.size() - kDedupEdges : 0;
  for (std::size_t i = from; i < trace.size(); ++i) {
    mix(trace[i].first);
    mix(trace[i].second);
  }
  return h;
}

std::vector<std::uint8_t> serialize_crash(const CrashReport& c) {
  auto out = serialize(c.input);
  out.push_back(static_cast<std::uint8_t>(c.fault.kind));
  put_le(out, c.fault.pc, 8);
  out.push_back(c.fault.access_addr.has_value());
  put_le(out, c.fault.access_addr.value_or(0), 8);
  put_le(out, c.dedup_key, 8);
  put_le(out, c.command_index, 4);
  put_le(out, c.trace_tail.size(), 4);
  for (const auto& [s, t] : c.trace_tail) {
    put_le(out, s, 8);
    put_le(out, t, 8);
  }
  return out;
}

CrashReport deserialize_crash(std::span<const std::uint8_t> bytes) {
  CrashReport c;
  std::size_t used = 0;
  c.input = deserialize(bytes, &used);
  Reader r(bytes.subspan(used));
  const auto kind = r.le(1);
  if (kind > static_cast<std::uint64_t>(FaultKind::kDivZero)) throw Error(ErrorCode::kIo, "bad fault kind");
  c.fault.kind = static_cast<FaultKind>(kind);
  c.fault.pc = r.le(8);
  const bool has_access = r.le(1) != 0;
  const auto access = r.le(8);
  if (has_access) c.fault.access_addr = access;
  c.dedup_key = r.le(8);
  c.command_index = static_cast<std::uint32_t>(r.le(4));
  const auto n = r.le(4);
  for (std::uint64_t i = 0; i < n; ++i) {
    const auto s = r.le(8);
    c.trace_tail.emplace_back(s, r.le(8));
  }
  return c;
}

// ---------------------------------------------------------------------------
// Targets

std::vector<std::uint64_t> FuzzTargets::ids() const {
  std::vector<std::uint64_t> out;
  for (const auto& c : commands) out.push_back(c.id);
  return out;
}

const CommandTarget* FuzzTargets::find(std::uint64_t id) const {
  auto it = std::lower_bound(commands.begin(), commands.end(), id,
                             [](const CommandTarget& c, std::uint64_t v) { return c.id < v; });
  return it != commands.end() && it->id == id ? &*it : nullptr;
}

FuzzTargets targets_from_analysis(const analysis::AnalysisReport& report, Address image_base) {
  FuzzTargets t;
  t.model = report.model;
  for (const auto& id : report.ids.ids) {
    CommandTarget c;
    c.id = id.value;
    Address lo = ~Address{0}, hi = 0;
    auto span_block = [&](const analysis::Block* b) {
      if (!b) return;
      lo = std::min(lo, b->start);
      hi = std::max(hi, b->end);
    };
    auto fn = id.handler_function ? report.cfg.functions.find(*id.handler_function) : report.cfg.functions.end();
    if (fn != report.cfg.functions.end()) {
      for (Address b : fn->second) span_block(report.cfg.block_at(b));
    } else {
      span_block(report.cfg.block_containing(id.handler_addr));
    }
    if (hi > lo) {
      c.lo = lo - image_base;
      c.hi = hi - image_base;
    }
    t.commands.push_back(c);
  }
  std::sort(t.commands.begin(), t.commands.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  return t;
}

std::string format_commands(const FuzzTargets& t) {
  std::string out;
  for (const auto& c : t.commands) out += fmt::format("command {} {:#x} {:#x}\n", c.id, c.lo, c.hi);
  return out;
}

std::vector<CommandTarget> parse_commands(std::string_view text) {
  std::vector<CommandTarget> out;
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string kw, id, lo, hi;
    if (!(ls >> kw >> id >> lo >> hi) || kw != "command") throw Error(ErrorCode::kConfig, "bad command line: " + line);
    CommandTarget c;
    c.id = parse_u64(id);
    c.lo = parse_u64(lo);
    c.hi = parse_u64(hi);
    out.push_back(c);
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  return out;
}

// ---------------------------------------------------------------------------
// Scheduling and mutation

namespace {

double unit(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }
std::size_t below(Rng& rng, std::size_t n) { return static_cast<std::size_t>(rng() % n); }

bool is_input_slot(std::uint8_t t) {
  return t == kParamMemrefInput || t == kParamMemrefInout || t == kParamValueInput || t == kParamValueInout;
}

}  // namespace

Command fresh_command(std::uint64_t id, const FuzzOptions& opt, Rng& rng) {
  Command c;
  c.id = id;
  const std::size_t cap = std::max<std::size_t>(1, std::min(opt.fresh_payload_max, opt.max_payload));
  auto& p = c.payload[0];
  p.resize(1 + below(rng, cap));
  for (auto& b : p) b = static_cast<std::uint8_t>(rng());
  c.payload[1].assign(std::min(opt.output_size, opt.max_payload), 0);
  return c;
}

FuzzInput schedule(const FuzzTargets& targets, const CampaignState& state, const FuzzOptions& opt, Rng& rng) {
  if (targets.commands.empty()) throw Error(ErrorCode::kConfig, "no command ids to schedule");
  double total = 0;
  std::vector<double> cumulative;
  for (const auto& c : targets.commands) {
    auto it = state.command_coverage.find(c.id);
    total += 1.0 / (1.0 + static_cast<double>(it == state.command_coverage.end() ? 0 : it->second));
    cumulative.push_back(total);
  }
  const double x = unit(rng) * total;
  const std::size_t pick =
      std::min<std::size_t>(static_cast<std::size_t>(std::upper_bound(cumulative.begin(), cumulative.end(), x) -
                                                     cumulative.begin()),
                            cumulative.size() - 1);
  const std::uint64_t target = targets.commands[pick].id;

  std::vector<std::uint64_t> ids;
  if (opt.stateful) {
    std::vector<std::uint64_t> chain;
    auto it = targets.model.prefixes.find(target);
    if (it != targets.model.prefixes.end() && !it->second.empty()) chain = it->second[below(rng, it->second.size())];
    if (!chain.empty() && unit(rng) < opt.epsilon) {
      if (rng() & 1) {
        chain.erase(chain.begin() + static_cast<std::ptrdiff_t>(below(rng, chain.size())));
        ids = chain;
        ids.push_back(target);
      } else {
        ids.push_back(target);
        ids.insert(ids.end(), chain.begin(), chain.end());
      }
    } else {
      ids = chain;
      ids.push_back(target);
    }
    const std::size_t cap = std::max<std::size_t>(1, opt.max_sequence);
    if (ids.size() > cap) ids.erase(ids.begin(), ids.end() - static_cast<std::ptrdiff_t>(cap));
  } else {
    ids.push_back(target);
  }

  const FuzzInput* parent = nullptr;
  if (!state.corpus.empty() && (rng() & 1)) parent = &state.corpus[below(rng, state.corpus.size())].input;
  FuzzInput out;
  std::vector<bool> used(parent ? parent->sequence.size() : 0, false);
  for (auto id : ids) {
    std::optional<Command> from_parent;
    if (parent) {
      for (std::size_t i = 0; i < parent->sequence.size(); ++i) {
        if (!used[i] && parent->sequence[i].id == id) {
          used[i] = true;
          from_parent = parent->sequence[i];
          break;
        }
      }
    }
    out.sequence.push_back(from_parent ? *from_parent : fresh_command(id, opt, rng));
  }
  return out;
}

namespace {

enum class MutOp : std::uint8_t {
  kBitFlip,
  kByteFlip,
  kInteresting,
  kGrow,
  kShrink,
  kDuplicate,
  kSubstitute,
  kTruncate,
  kExtend,
};
constexpr std::size_t kMutOps = 9;

std::uint64_t interesting_value(unsigned width_log2, Rng& rng) {
  const unsigned bits = 8u << width_log2;
  const std::uint64_t all = bits == 64 ? ~0ull : (1ull << bits) - 1;
  switch (below(rng, 4)) {
    case 0: return 0;
    case 1: return 1;
    case 2: return all;        // -1
    default: return all >> 1;  // signed MAX
  }
}

}  // namespace

FuzzInput mutate(const FuzzInput& in, std::span<const std::uint64_t> ids, const FuzzOptions& opt, Rng& rng) {
  FuzzInput out = in;
  if (out.sequence.empty()) {
    out.sequence.push_back(fresh_command(ids.empty() ? 0 : ids[below(rng, ids.size())], opt, rng));
    return out;
  }
  const std::size_t max_seq = opt.stateful ? std::max<std::size_t>(1, opt.max_sequence) : 1;
  for (;;) {
    const auto op = static_cast<MutOp>(below(rng, kMutOps));
    Command& c = out.sequence[below(rng, out.sequence.size())];
    std::vector<std::size_t> slots;
    for (std::size_t s = 0; s < kParamSlots; ++s)
      if (is_input_slot(c.types[s])) slots.push_back(s);
    auto& p = c.payload[slots.empty() ? 0 : slots[below(rng, slots.size())]];
    switch (op) {
      case MutOp::kBitFlip:
        if (p.empty()) continue;
        p[below(rng, p.size())] ^= static_cast<std::uint8_t>(1u << below(rng, 8));
        return out;
      case MutOp::kByteFlip:
        if (p.empty()) continue;
        p[below(rng, p.size())] ^= 0xFF;
        return out;
      case MutOp::kInteresting: {
        const unsigned wl = static_cast<unsigned>(below(rng, 4));
        const std::size_t w = std::size_t{1} << wl;
        if (w > opt.max_payload) continue;
        const std::size_t pos = below(rng, std::min(p.size(), opt.max_payload - w) + 1);
        if (p.size() < pos + w) p.resize(pos + w, 0);
        const std::uint64_t v = interesting_value(wl, rng);
        for (std::size_t i = 0; i < w; ++i) p[pos + i] = static_cast<std::uint8_t>(v >> (8 * i));
        return out;
      }
      case MutOp::kGrow: {
        if (p.size() >= opt.max_payload) continue;
        const std::size_t n = 1 + below(rng, std::min<std::size_t>(16, opt.max_payload - p.size()));
        for (std::size_t i = 0; i < n; ++i) p.push_back(static_cast<std::uint8_t>(rng()));
        return out;
      }
      case MutOp::kShrink:
        if (p.empty()) continue;
        p.resize(below(rng, p.size()));
        return out;
      case MutOp::kDuplicate: {
        if (p.empty() || p.size() >= opt.max_payload) continue;
        const std::size_t from = below(rng, p.size());
        const std::size_t n =
            1 + below(rng, std::min(p.size() - from, opt.max_payload - p.size()));
        const std::vector<std::uint8_t> block(p.begin() + static_cast<std::ptrdiff_t>(from),
                                              p.begin() + static_cast<std::ptrdiff_t>(from + n));
        const std::size_t at = below(rng, p.size() + 1);
        p.insert(p.begin() + static_cast<std::ptrdiff_t>(at), block.begin(), block.end());
        return out;
      }
      case MutOp::kSubstitute: {
        if (ids.empty()) continue;
        if (below(rng, 16) == 0) {
          std::uint64_t v;
          do v = rng() & 0xFFFF'FFFF;
          while (std::find(ids.begin(), ids.end(), v) != ids.end() || v == c.id);
          c.id = v;
          return out;
        }
        if (ids.size() == 1 && ids[0] == c.id) continue;
        std::uint64_t v;
        do v = ids[below(rng, ids.size())];
        while (v == c.id);
        c.id = v;
        return out;
      }
      case MutOp::kTruncate:
        if (out.sequence.size() <= 1) continue;
        out.sequence.erase(out.sequence.begin() + static_cast<std::ptrdiff_t>(below(rng, out.sequence.size())));
        return out;
      case MutOp::kExtend: {
        if (out.sequence.size() >= max_seq || ids.empty()) continue;
        const std::size_t at = below(rng, out.sequence.size() + 1);
        auto extra = fresh_command(ids[below(rng, ids.size())], opt, rng);
        out.sequence.insert(out.sequence.begin() + static_cast<std::ptrdiff_t>(at), std::move(extra));
        return out;
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Execution

Executor::Executor(std::unique_ptr<Session> session, std::uint64_t budget, bool reset_between_sequences)
    : session_(std::move(session)), budget_(budget), reset_(reset_between_sequences) {
  for (const auto& st : session_->initialize(budget_)) {
    if (st.kind != ExitKind::kReturned)
      throw Error(ErrorCode::kConfig, fmt::format("initialization entrypoint ended with {}", to_string(st.kind)));
  }
  snapshot_ = session_->snapshot();
  snapshot_hash_ = session_->state_hash();
  filter_ = session_->ta_code_filter();
  for (const auto& [lo, hi] : session_->trampolines().regions()) filter_.add_range(lo, hi);
}

CaseResult Executor::run(const FuzzInput& in) {
  if (reset_) {
    session_->restore(snapshot_);
    ++runs_;
    if (verify_every_ && runs_ % verify_every_ == 0 && session_->state_hash() != snapshot_hash_)
      throw Error(ErrorCode::kSnapshotMismatch, "restored state differs from the snapshot");
  }
  CaseResult r;
  BranchTrace raw;
  std::optional<std::uint32_t> faulted;
  for (std::size_t i = 0; i < in.sequence.size(); ++i) {
    const auto st = session_->invoke(in.sequence[i], budget_, &raw, &filter_);
    r.statuses.push_back(st);
    if (st.kind == ExitKind::kFault) {
      faulted = static_cast<std::uint32_t>(i);
      break;
    }
    if (st.kind == ExitKind::kBudgetExhausted) {
      r.timeout = true;
      break;
    }
  }
  const LoadedImage& image = session_->image();
  r.trace = trace::normalize(raw, image,
                             session_->mode() == ExecMode::kRewritten ? &session_->trampolines() : nullptr);
  if (faulted) {
    CrashReport c;
    c.input = in;
    c.fault = *r.statuses.back().fault;
    c.command_index = *faulted;
    const auto& seq = r.trace.sequence;
    const std::size_t from = seq.size() > kTraceTail ? seq.size() - kTraceTail : 0;
    c.trace_tail.assign(seq.begin() + static_cast<std::ptrdiff_t>(from), seq.end());
    c.dedup_key = dedup_key(c.fault.kind, c.fault.pc - image.image_base, seq);
    r.crash = std::move(c);
  }
  return r;
}

CaseResult run_case(Executor& ex, const FuzzInput& in, CoverageBitmap& local, CoverageBitmap& global) {
  CaseResult r = ex.run(in);
  local.clear();
  r.interesting = update_coverage(r.trace.sequence, local, global);
  return r;
}

// ---------------------------------------------------------------------------
// Persistence

namespace {

void write_text(const fs::path& p, const std::string& text) {
  write_file(p, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::string corpus_name(std::uint64_t seed_id) { return fmt::format("{:08}.bin", seed_id); }
std::string crash_name(std::uint64_t key) { return fmt::format("{:016x}.bin", key); }

}  // namespace

std::string format_stats(const CampaignStats& s) {
  return fmt::format(
      "executions {}\nexecs_per_sec {:.2f}\nunique_crashes {}\nbitmap_occupancy {:.6f}\niterations {}\n"
      "requests {}\nrequests_per_sec {:.2f}\ntimeouts {}\ncorpus_size {}\nseconds {:.3f}\n",
      s.executions, s.execs_per_sec, s.unique_crashes, s.bitmap_occupancy, s.iterations, s.requests,
      s.requests_per_sec, s.timeouts, s.corpus_size, s.seconds);
}

CampaignStats parse_stats(std::string_view text) {
  CampaignStats s;
  std::istringstream in{std::string(text)};
  std::string key, value;
  while (in >> key >> value) {
    auto u = [&] { return parse_u64(value); };
    auto d = [&] {
      try {
        return std::stod(value);
      } catch (const std::exception&) {
        throw Error(ErrorCode::kConfig, "bad stats value: " + value);
      }
    };
    if (key == "executions") s.executions = u();
    else if (key == "execs_per_sec") s.execs_per_sec = d();
    else if (key == "unique_crashes") s.unique_crashes = u();
    else if (key == "bitmap_occupancy") s.bitmap_occupancy = d();
    else if (key == "iterations") s.iterations = u();
    else if (key == "requests") s.requests = u();
    else if (key == "requests_per_sec") s.requests_per_sec = d();
    else if (key == "timeouts") s.timeouts = u();
    else if (key == "corpus_size") s.corpus_size = u();
    else if (key == "seconds") s.seconds = d();
  }
  return s;
}

void save_checkpoint(const CampaignState& state, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir / "corpus", ec);
  fs::create_directories(dir / "crashes", ec);
  if (ec) throw Error(ErrorCode::kIo, fmt::format("cannot create {}: {}", dir.string(), ec.message()));
  std::string cp;
  cp += fmt::format("rng_seed {}\nnext_seed_id {}\n", state.rng_seed, state.next_seed_id);
  cp += fmt::format("iterations {}\nexecutions {}\nrequests {}\ntimeouts {}\nseconds {}\n", state.stats.iterations,
                    state.stats.executions, state.stats.requests, state.stats.timeouts, state.stats.seconds);
  for (const auto& [id, n] : state.command_coverage) cp += fmt::format("coverage {} {}\n", id, n);
  for (const auto& e : state.corpus) {
    const auto path = dir / "corpus" / corpus_name(e.input.seed_id);
    if (!fs::exists(path)) write_file(path, serialize(e.input));
    cp += fmt::format("entry {} {}\n", e.input.seed_id,
                      e.signature.empty() ? std::string("-") : fmt::format("{}", fmt::join(e.signature, ",")));
  }
  for (const auto& [key, c] : state.crashes) {
    const auto path = dir / "crashes" / crash_name(key);
    if (!fs::exists(path)) write_file(path, serialize_crash(c));
    cp += fmt::format("crash {:016x}\n", key);
  }
  cp += "rng " + state.rng_state + "\n";
  write_file(dir / "bitmap.bin", state.global.buckets);
  write_text(dir / "stats.txt", format_stats(state.stats));
  write_text(dir / "checkpoint.tmp", cp);
  fs::rename(dir / "checkpoint.tmp", dir / "checkpoint.txt", ec);
  if (ec) throw Error(ErrorCode::kIo, "cannot commit checkpoint: " + ec.message());
}

CampaignState load_checkpoint(const fs::path& dir) {
  CampaignState s;
  const auto text = read_file(dir / "checkpoint.txt");
  std::istringstream in{std::string(text.begin(), text.end())};
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "rng") {
      s.rng_state = line.size() > 4 ? line.substr(4) : "";
      continue;
    }
    std::string a, b;
    ls >> a >> b;
    if (key == "rng_seed") s.rng_seed = parse_u64(a);
    else if (key == "next_seed_id") s.next_seed_id = parse_u64(a);
    else if (key == "iterations") s.stats.iterations = parse_u64(a);
    else if (key == "executions") s.stats.executions = parse_u64(a);
    else if (key == "requests") s.stats.requests = parse_u64(a);
    else if (key == "timeouts") s.stats.timeouts = parse_u64(a);
    else if (key == "seconds") s.stats.seconds = std::stod(a);
    else if (key == "coverage") s.command_coverage[parse_u64(a)] = parse_u64(b);
    else if (key == "entry") {
      CorpusEntry e;
      e.input = deserialize(read_file(dir / "corpus" / corpus_name(parse_u64(a))));
      e.input.seed_id = parse_u64(a);
      if (b != "-") {
        std::istringstream bs(b);
        std::string tok;
        while (std::getline(bs, tok, ',')) e.signature.push_back(static_cast<std::uint32_t>(parse_u64(tok)));
      }
      s.corpus.push_back(std::move(e));
    } else if (key == "crash") {
      auto c = deserialize_crash(read_file(dir / "crashes" / (a + ".bin")));
      s.crashes.emplace(c.dedup_key, std::move(c));
    } else if (!key.empty()) {
      throw Error(ErrorCode::kIo, "unknown checkpoint line: " + line);
    }
  }
  const auto bitmap = read_file(dir / "bitmap.bin");
  if (bitmap.size() != kBitmapSize) throw Error(ErrorCode::kIo, "bitmap.bin has the wrong size");
  std::copy(bitmap.begin(), bitmap.end(), s.global.buckets.begin());
  s.stats.corpus_size = s.corpus.size();
  s.stats.unique_crashes = s.crashes.size();
  s.stats.bitmap_occupancy = s.global.occupancy();
  return s;
}

// ---------------------------------------------------------------------------
// Campaign

namespace {

std::string rng_text(const Rng& rng) {
  std::ostringstream o;
  o << rng;
  return o.str();
}

void clear_artifacts(const fs::path& dir) {
  std::error_code ec;
  for (const char* name : {"corpus", "crashes", "stats.txt", "bitmap.bin", "checkpoint.txt"})
    fs::remove_all(dir / name, ec);
}

}  // namespace

CampaignState run_campaign(const CampaignConfig& cfg) {
  if (!cfg.make_session) throw Error(ErrorCode::kConfig, "campaign needs a session factory");
  if (!cfg.iterations && !cfg.seconds && !cfg.stop)
    throw Error(ErrorCode::kConfig, "campaign needs an iteration bound, a time bound or a stop flag");
  const bool persist = !cfg.out_dir.empty();
  const unsigned workers = std::max(1u, cfg.workers);

  CampaignState state;
  Rng rng0;
  if (cfg.resume) {
    if (!persist || !fs::exists(cfg.out_dir / "checkpoint.txt"))
      throw Error(ErrorCode::kIo, "no checkpoint to resume in " + cfg.out_dir.string());
    state = load_checkpoint(cfg.out_dir);
    std::istringstream rs(state.rng_state);
    rs >> rng0;
    if (!rs) throw Error(ErrorCode::kIo, "checkpoint rng state is unreadable");
    spdlog::info("resuming at {} executions, corpus {}", state.stats.executions, state.corpus.size());
  } else {
    state.rng_seed = cfg.seed;
    rng0.seed(cfg.seed);
    if (persist) {
      clear_artifacts(cfg.out_dir);
      std::error_code ec;
      fs::create_directories(cfg.out_dir, ec);
      if (ec) throw Error(ErrorCode::kIo, fmt::format("cannot create {}: {}", cfg.out_dir.string(), ec.message()));
    }
  }

  std::vector<Rng> rngs{rng0};
  for (unsigned w = 1; w < workers; ++w) rngs.emplace_back(cfg.seed ^ (0x9E3779B97F4A7C15ull * w));

  const auto ids = cfg.targets.ids();
  const double prior_seconds = state.stats.seconds;
  const auto start = std::chrono::steady_clock::now();
  auto elapsed = [&] {
    return prior_seconds + std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  };
  std::mutex mu;
  std::uint64_t claimed = state.stats.iterations;
  std::exception_ptr failure;

  auto refresh_stats = [&] {
    auto& s = state.stats;
    s.seconds = elapsed();
    s.execs_per_sec = s.seconds > 0 ? static_cast<double>(s.executions) / s.seconds : 0;
    s.requests_per_sec = s.seconds > 0 ? static_cast<double>(s.requests) / s.seconds : 0;
    s.unique_crashes = state.crashes.size();
    s.corpus_size = state.corpus.size();
    s.bitmap_occupancy = state.global.occupancy();
  };
  auto checkpoint = [&] {
    refresh_stats();
    state.rng_state = rng_text(rngs[0]);
    if (persist) save_checkpoint(state, cfg.out_dir);
    spdlog::debug("{} execs, {:.0f} execs/s, corpus {}, crashes {}, occupancy {:.4f}", state.stats.executions,
                  state.stats.execs_per_sec, state.corpus.size(), state.crashes.size(), state.stats.bitmap_occupancy);
  };

  auto worker = [&](unsigned w, Executor& ex) {
    Rng& rng = rngs[w];
    CoverageBitmap local;
    for (;;) {
      FuzzInput input;
      {
        std::lock_guard lock(mu);
        if (failure) return;
        if (cfg.iterations && claimed >= *cfg.iterations) return;
        if (cfg.seconds && elapsed() >= *cfg.seconds) return;
        if (cfg.stop && cfg.stop->load()) return;
        if (cfg.stop_on_crash && !state.crashes.empty()) return;
        ++claimed;
        input = mutate(schedule(cfg.targets, state, cfg.options, rng), ids, cfg.options, rng);
        if (cfg.on_input) cfg.on_input(input);
      }
      CaseResult r = ex.run(input);
      std::lock_guard lock(mu);
      local.clear();
      std::vector<std::uint32_t> fresh;
      r.interesting = update_coverage(r.trace.sequence, local, state.global, &fresh);
      auto& s = state.stats;
      ++s.iterations;
      ++s.executions;
      s.requests += r.statuses.size();
      if (r.timeout) ++s.timeouts;
      if (r.interesting) {
        const std::set<std::uint32_t> rose(fresh.begin(), fresh.end());
        for (const auto& e : r.trace.edges) {
          if (!rose.count(edge_hash(e.first, e.second))) continue;
          for (const auto& c : cfg.targets.commands)
            if (e.first >= c.lo && e.first < c.hi) ++state.command_coverage[c.id];
        }
        input.seed_id = state.next_seed_id++;
        state.corpus.push_back({input, std::move(fresh)});
      }
      if (r.crash && !state.crashes.count(r.crash->dedup_key)) {
        r.crash->input.seed_id = input.seed_id;
        spdlog::warn("new crash {:016x}: {} at {:#x}", r.crash->dedup_key, to_string(r.crash->fault.kind),
                     r.crash->fault.pc);
        if (persist) {
          std::error_code ec;
          fs::create_directories(cfg.out_dir / "crashes", ec);
          write_file(cfg.out_dir / "crashes" / crash_name(r.crash->dedup_key), serialize_crash(*r.crash));
        }
        state.crashes.emplace(r.crash->dedup_key, std::move(*r.crash));
      }
      if (cfg.checkpoint_every && s.executions % cfg.checkpoint_every == 0) checkpoint();
    }
  };

  std::vector<std::unique_ptr<Executor>> executors;
  for (unsigned w = 0; w < workers; ++w)
    executors.push_back(std::make_unique<Executor>(cfg.make_session(), cfg.budget, cfg.reset_between_sequences));

  if (workers == 1) {
    worker(0, *executors[0]);
  } else {
    std::vector<std::thread> threads;
    for (unsigned w = 0; w < workers; ++w) {
      threads.emplace_back([&, w] {
        try {
          worker(w, *executors[w]);
        } catch (...) {
          std::lock_guard lock(mu);
          if (!failure) failure = std::current_exception();
        }
      });
    }
    for (auto& t : threads) t.join();
    if (failure) std::rethrow_exception(failure);
  }
  checkpoint();
  return state;
}

}  // namespace taforge::fuzz

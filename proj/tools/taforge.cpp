// Command-line front end: gen, load, analyze, fuzz, replay, compare, report.
//
// Exit codes: 0 success, 1 usage error, 2 input error, 3 crashes found or
// reproduced.

#include <atomic>
#include <csignal>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "taforge/analyzer.hpp"
#include "taforge/corpusgen.hpp"
#include "taforge/error.hpp"
#include "taforge/fuzzer.hpp"
#include "taforge/loader.hpp"
#include "taforge/session.hpp"
#include "taforge/trace.hpp"

namespace fs = std::filesystem;
using namespace taforge;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitInput = 2;
constexpr int kExitCrash = 3;

std::atomic<bool> g_stop{false};

void on_signal(int) { g_stop = true; }

void setup_logging() {
  auto logger = spdlog::stderr_color_mt("taforge");
  logger->set_pattern("%^%l%$: %v");
  spdlog::set_default_logger(logger);
  const char* env = std::getenv("TAFORGE_LOG");
  const std::string level = env ? env : "info";
  if (level == "error")
    spdlog::set_level(spdlog::level::err);
  else if (level == "debug")
    spdlog::set_level(spdlog::level::debug);
  else
    spdlog::set_level(spdlog::level::info);
}

std::string read_text(const fs::path& p) {
  const auto bytes = read_file(p);
  return {bytes.begin(), bytes.end()};
}

void write_text(const fs::path& p, const std::string& text) {
  write_file(p, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

struct Target {
  std::string ta;
  std::string profile;
  std::string libs;
};

void add_target_options(CLI::App* cmd, Target& t) {
  cmd->add_option("--ta", t.ta, "TA image")->required()->check(CLI::ExistingFile);
  cmd->add_option("--profile", t.profile, "optee, teegris, qsee, trusty or a profile config file")->required();
  cmd->add_option("--libs", t.libs, "directory searched for needed libraries (default: the TA's directory)");
}

LibraryResolver resolver_for(const Target& t) {
  return directory_resolver(t.libs.empty() ? fs::path(t.ta).parent_path() : fs::path(t.libs));
}

LoadedImage load_target(const Target& t, const TzosProfile& p) {
  return load_and_link(read_file(t.ta), p, LayoutConfig::from_profile(p), resolver_for(t));
}

struct Execution {
  std::string devices;
  std::string mode = "rewritten";
  std::uint64_t budget = 100000;
  std::uint64_t seed = 0;
};

void add_execution_options(CLI::App* cmd, Execution& e) {
  cmd->add_option("--devices", e.devices, "device script")->check(CLI::ExistingFile);
  cmd->add_option("--mode", e.mode, "rewritten or direct-trap")
      ->check(CLI::IsMember({"rewritten", "direct-trap"}));
  cmd->add_option("--budget", e.budget, "instruction budget per command");
}

std::function<std::unique_ptr<Session>()> session_factory(const Target& t, const Execution& e,
                                                          std::uint64_t random_seed) {
  const TzosProfile profile = load_profile(t.profile);
  SessionConfig cfg;
  cfg.mode = e.mode == "direct-trap" ? ExecMode::kDirectTrap : ExecMode::kRewritten;
  if (!e.devices.empty()) cfg.devices = parse_device_script(read_text(e.devices));
  cfg.random_seed = random_seed;
  const auto bytes = read_file(t.ta);
  const auto resolver = resolver_for(t);
  return [=] {
    return std::make_unique<Session>(load_and_link(bytes, profile, LayoutConfig::from_profile(profile), resolver),
                                     profile, cfg);
  };
}

// ---------------------------------------------------------------------------

struct GenArgs {
  std::string spec;
  std::string templ;
  std::string profile = "optee";
  std::string dispatch = "if_else";
  int width = 64;
  std::uint64_t seed = 1;
  std::string out;
};

int run_gen(const GenArgs& a) {
  gen::TaSpec spec;
  if (!a.spec.empty()) {
    spec = gen::parse_spec(read_text(a.spec));
  } else {
    const auto kind = parse_tzos(a.profile);
    if (!kind) throw Error(ErrorCode::kConfig, "unknown profile " + a.profile);
    const WordWidth w = a.width == 32 ? WordWidth::kW32 : WordWidth::kW64;
    if (a.templ == "hdcp") {
      spec = gen::hdcp_spec(*kind, w);
    } else {
      spec = gen::random_spec(*kind, a.dispatch == "jump_table" ? gen::DispatchStyle::kJumpTable
                                                                : gen::DispatchStyle::kIfElse,
                              a.seed);
    }
  }
  const auto g = gen::generate(spec);
  const fs::path out(a.out);
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw Error(ErrorCode::kIo, fmt::format("cannot create {}: {}", out.string(), ec.message()));
  write_file(out / "ta.elf", g.elf);
  std::cout << (out / "ta.elf").string() << '\n';
  for (const auto& [name, bytes] : g.libraries) {
    write_file(out / name, bytes);
    std::cout << (out / name).string() << '\n';
  }
  write_text(out / "manifest.txt", gen::format_manifest(g.manifest));
  write_text(out / "spec.txt", gen::format_spec(spec));
  write_text(out / "devices.txt", format_device_script(gen::default_devices(g.manifest)));
  for (const char* f : {"manifest.txt", "spec.txt", "devices.txt"}) std::cout << (out / f).string() << '\n';
  return kExitOk;
}

int run_load(const Target& t) {
  const TzosProfile p = load_profile(t.profile);
  const LoadedImage img = load_target(t, p);
  std::cout << layout_table(img);
  return kExitOk;
}

int run_analyze(const Target& t, const std::string& out_dir) {
  const TzosProfile p = load_profile(t.profile);
  const LoadedImage img = load_target(t, p);
  const auto report = analysis::analyze(img, p);
  const auto targets = fuzz::targets_from_analysis(report, img.image_base);
  const fs::path out(out_dir);
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw Error(ErrorCode::kIo, fmt::format("cannot create {}: {}", out.string(), ec.message()));
  write_text(out / "commands.txt", fuzz::format_commands(targets));
  write_text(out / "state_model.txt", analysis::format_state_model(report.model));
  const auto& b = report.branches;
  const std::string complexity = fmt::format("simple {}\ncomplex {}\nsimple_fraction {:.4f}\ncomplex_fraction {:.4f}\n",
                                             b.simple, b.complex, b.simple_fraction, b.complex_fraction);
  write_text(out / "complexity.txt", complexity);
  write_text(out / "report.txt", analysis::format_report(report, img.image_base));
  std::cout << fmt::format("commands {}\n", targets.commands.size());
  std::cout << fmt::format("dependencies {}\n", report.graph.edges.size());
  std::cout << complexity;
  std::cout << fmt::format("incomplete_blocks {}\n", report.cfg.incomplete_blocks());
  return kExitOk;
}

fuzz::FuzzTargets read_targets(const fs::path& dir) {
  fuzz::FuzzTargets t;
  t.commands = fuzz::parse_commands(read_text(dir / "commands.txt"));
  t.model = analysis::parse_state_model(read_text(dir / "state_model.txt"));
  return t;
}

struct FuzzArgs {
  Target target;
  Execution exec;
  std::string analysis;
  std::string out;
  std::optional<std::uint64_t> iterations;
  std::optional<double> seconds;
  unsigned workers = 1;
  std::uint64_t seed = 0;
  bool resume = false;
  bool stateless = false;
  bool no_reset = false;
  double epsilon = 0.1;
  std::uint64_t checkpoint = 1000;
  std::string record;
};

int run_fuzz(const FuzzArgs& a) {
  fuzz::CampaignConfig cfg;
  cfg.make_session = session_factory(a.target, a.exec, a.seed);
  cfg.targets = read_targets(a.analysis);
  cfg.out_dir = a.out;
  cfg.iterations = a.iterations;
  cfg.seconds = a.seconds;
  cfg.workers = a.workers;
  cfg.seed = a.seed;
  cfg.budget = a.exec.budget;
  cfg.resume = a.resume;
  cfg.reset_between_sequences = !a.no_reset;
  cfg.checkpoint_every = a.checkpoint;
  cfg.options.stateful = !a.stateless;
  cfg.options.epsilon = a.epsilon;
  cfg.stop = &g_stop;
  std::ofstream record;
  if (!a.record.empty()) {
    record.open(a.record, std::ios::binary | std::ios::trunc);
    if (!record) throw Error(ErrorCode::kIo, "cannot write " + a.record);
    cfg.on_input = [&](const fuzz::FuzzInput& in) {
      const auto bytes = fuzz::serialize(in);
      record.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    };
  }
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  const auto state = fuzz::run_campaign(cfg);
  if (record.is_open() && !record.flush()) throw Error(ErrorCode::kIo, "cannot write " + a.record);
  std::cout << fuzz::format_stats(state.stats);
  for (const auto& [key, c] : state.crashes)
    std::cout << fmt::format("crash {:016x} {} {:#x}\n", key, to_string(c.fault.kind), c.fault.pc);
  return state.crashes.empty() ? kExitOk : kExitCrash;
}

struct ReplayArgs {
  Target target;
  Execution exec;
  std::string crash;
  std::string input;
  std::string inputs;
  std::string trace_out;
  std::string bitmap_out;
};

void print_case(std::size_t n, const fuzz::FuzzInput& in, const fuzz::CaseResult& r) {
  for (std::size_t i = 0; i < r.statuses.size(); ++i) {
    const auto& st = r.statuses[i];
    std::cout << fmt::format("case {} cmd {} {} {:#x}\n", n, in.sequence[i].id, to_string(st.kind), st.return_value);
  }
}

int run_replay(const ReplayArgs& a) {
  const int sources = !a.crash.empty() + !a.input.empty() + !a.inputs.empty();
  if (sources != 1) throw CLI::ValidationError("replay needs exactly one of --crash, --input, --inputs");
  fuzz::Executor ex(session_factory(a.target, a.exec, 0)(), a.exec.budget);
  std::vector<fuzz::FuzzInput> inputs;
  std::optional<fuzz::CrashReport> stored;
  if (!a.crash.empty()) {
    stored = fuzz::deserialize_crash(read_file(a.crash));
    inputs.push_back(stored->input);
  } else if (!a.input.empty()) {
    inputs.push_back(fuzz::deserialize(read_file(a.input)));
  } else {
    const auto bytes = read_file(a.inputs);
    std::size_t pos = 0;
    while (pos < bytes.size()) {
      std::size_t used = 0;
      inputs.push_back(fuzz::deserialize(std::span(bytes).subspan(pos), &used));
      pos += used;
    }
  }
  CoverageBitmap local, global;
  trace::NormalizedTrace all;
  std::size_t faults = 0;
  for (std::size_t n = 0; n < inputs.size(); ++n) {
    const auto r = fuzz::run_case(ex, inputs[n], local, global);
    if (!a.trace_out.empty()) {
      all.origin = r.trace.origin;
      all.edges.insert(r.trace.edges.begin(), r.trace.edges.end());
      all.sequence.insert(all.sequence.end(), r.trace.sequence.begin(), r.trace.sequence.end());
    }
    if (inputs.size() == 1) print_case(n, inputs[n], r);
    if (r.crash) {
      ++faults;
      std::cout << fmt::format("fault {} pc {:#x} dedup {:016x}\n", to_string(r.crash->fault.kind),
                               r.crash->fault.pc, r.crash->dedup_key);
    }
    if (stored) {
      const bool same = r.crash && r.crash->fault.kind == stored->fault.kind &&
                        r.crash->fault.pc == stored->fault.pc && r.crash->dedup_key == stored->dedup_key;
      std::cout << (same ? "reproduced\n" : "not reproduced\n");
      if (!same) spdlog::error("replay diverged from the stored report");
    }
  }
  if (inputs.size() > 1)
    std::cout << fmt::format("executions {}\nfaults {}\n{}", inputs.size(), faults, trace::heatmap_summary(global));
  if (!a.trace_out.empty()) {
    std::ofstream out(a.trace_out);
    trace::write_normalized(out, all);
    if (!out) throw Error(ErrorCode::kIo, "cannot write " + a.trace_out);
  }
  if (!a.bitmap_out.empty()) write_file(a.bitmap_out, global.buckets);
  return faults ? kExitCrash : kExitOk;
}

int run_compare(const std::string& fa, const std::string& fb, const std::string& heatmap) {
  const auto a = trace::read_comparable(read_file(fa));
  const auto b = trace::read_comparable(read_file(fb));
  const auto c = trace::compare(a, b);
  std::cout << fmt::format("jaccard {:.6f}\nonly_a {}\nonly_b {}\n", c.jaccard, c.only_a.size(), c.only_b.size());
  const bool bitmaps = std::holds_alternative<CoverageBitmap>(a);
  for (const auto& [x, y] : c.only_a) {
    if (bitmaps)
      spdlog::debug("only in a: bucket {}", x);
    else
      spdlog::debug("only in a: {:#x} -> {:#x}", x, y);
  }
  for (const auto& [x, y] : c.only_b) {
    if (bitmaps)
      spdlog::debug("only in b: bucket {}", x);
    else
      spdlog::debug("only in b: {:#x} -> {:#x}", x, y);
  }
  if (!heatmap.empty()) {
    if (!bitmaps) throw Error(ErrorCode::kKindMismatch, "--heatmap needs bitmap inputs");
    std::ofstream out(heatmap);
    trace::heatmap(std::get<CoverageBitmap>(a), out);
    std::cout << trace::heatmap_summary(std::get<CoverageBitmap>(a));
  }
  return kExitOk;
}

int run_report(const std::string& dir) {
  const fs::path d(dir);
  const auto stats = fuzz::parse_stats(read_text(d / "stats.txt"));
  std::cout << fuzz::format_stats(stats);
  const auto bitmap = read_file(d / "bitmap.bin");
  if (bitmap.size() != kBitmapSize) throw Error(ErrorCode::kIo, "bitmap.bin has the wrong size");
  CoverageBitmap b;
  std::copy(bitmap.begin(), bitmap.end(), b.buckets.begin());
  std::cout << fmt::format("max_hit_class {}\n", b.max_hit_class());
  std::error_code ec;
  if (fs::is_directory(d / "crashes", ec)) {
    std::vector<fs::path> files;
    for (const auto& f : fs::directory_iterator(d / "crashes")) files.push_back(f.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      const auto c = fuzz::deserialize_crash(read_file(f));
      std::cout << fmt::format("crash {:016x} {} {:#x} cmd {}\n", c.dedup_key, to_string(c.fault.kind), c.fault.pc,
                               c.input.sequence.at(c.command_index).id);
    }
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  setup_logging();
  CLI::App app{"Rehosting, analysis and stateful fuzzing of trusted applications"};
  app.require_subcommand(1);

  GenArgs gen_args;
  auto* gen = app.add_subcommand("gen", "generate a synthetic TA, its libraries and manifest");
  auto* spec_opt = gen->add_option("--spec", gen_args.spec, "TA spec file")->check(CLI::ExistingFile);
  gen->add_option("--template", gen_args.templ, "hdcp or random (instead of --spec)")
      ->check(CLI::IsMember({"hdcp", "random"}))
      ->excludes(spec_opt);
  gen->add_option("--profile", gen_args.profile, "profile for --template");
  gen->add_option("--dispatch", gen_args.dispatch, "if_else or jump_table for --template random")
      ->check(CLI::IsMember({"if_else", "jump_table"}));
  gen->add_option("--width", gen_args.width, "32 or 64 for --template hdcp")->check(CLI::IsMember({32, 64}));
  gen->add_option("--seed", gen_args.seed, "seed for --template random");
  gen->add_option("--out", gen_args.out, "output directory")->required();

  Target load_t;
  auto* load = app.add_subcommand("load", "load and link a TA and print its layout");
  add_target_options(load, load_t);

  Target an_t;
  std::string an_out;
  auto* analyze = app.add_subcommand("analyze", "recover command ids, dependencies and the state model");
  add_target_options(analyze, an_t);
  analyze->add_option("--out", an_out, "output directory")->required();

  FuzzArgs fz;
  auto* fuzzc = app.add_subcommand("fuzz", "run a fuzzing campaign");
  add_target_options(fuzzc, fz.target);
  add_execution_options(fuzzc, fz.exec);
  fuzzc->add_option("--analysis", fz.analysis, "directory written by analyze")->required()->check(CLI::ExistingDirectory);
  fuzzc->add_option("--out", fz.out, "campaign directory")->required();
  auto* it_opt = fuzzc->add_option("--iterations", fz.iterations, "iteration bound");
  fuzzc->add_option("--seconds", fz.seconds, "time bound")->excludes(it_opt);
  fuzzc->add_option("--workers", fz.workers, "parallel workers")->check(CLI::Range(1u, 256u));
  fuzzc->add_option("--seed", fz.seed, "rng seed");
  fuzzc->add_flag("--resume", fz.resume, "continue from the checkpoint in --out");
  fuzzc->add_flag("--stateless", fz.stateless, "single-command inputs only");
  fuzzc->add_flag("--no-reset", fz.no_reset, "keep TA state across sequences");
  fuzzc->add_option("--epsilon", fz.epsilon, "probability of violating the prerequisite chain")
      ->check(CLI::Range(0.0, 1.0));
  fuzzc->add_option("--checkpoint", fz.checkpoint, "executions between checkpoints");
  fuzzc->add_option("--record", fz.record, "append every executed input to this file");

  ReplayArgs rp;
  auto* replay = app.add_subcommand("replay", "re-run a crash, a corpus input or a recorded input stream");
  add_target_options(replay, rp.target);
  add_execution_options(replay, rp.exec);
  replay->add_option("--crash", rp.crash, "crash file")->check(CLI::ExistingFile);
  replay->add_option("--input", rp.input, "corpus input file")->check(CLI::ExistingFile);
  replay->add_option("--inputs", rp.inputs, "file of concatenated inputs (fuzz --record)")->check(CLI::ExistingFile);
  replay->add_option("--trace", rp.trace_out, "write the normalized trace here");
  replay->add_option("--bitmap", rp.bitmap_out, "write the coverage bitmap here");

  std::string cmp_a, cmp_b, cmp_heatmap;
  auto* compare = app.add_subcommand("compare", "compare two normalized traces or two bitmaps");
  compare->add_option("--a", cmp_a, "first trace or bitmap")->required()->check(CLI::ExistingFile);
  compare->add_option("--b", cmp_b, "second trace or bitmap")->required()->check(CLI::ExistingFile);
  compare->add_option("--heatmap", cmp_heatmap, "write a PGM heatmap of --a");

  std::string report_dir;
  auto* report = app.add_subcommand("report", "print campaign statistics");
  report->add_option("--campaign", report_dir, "campaign directory")->required()->check(CLI::ExistingDirectory);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (*gen) {
      if (gen_args.spec.empty() && gen_args.templ.empty())
        throw CLI::ValidationError("gen needs --spec or --template");
      return run_gen(gen_args);
    }
    if (*load) return run_load(load_t);
    if (*analyze) return run_analyze(an_t, an_out);
    if (*fuzzc) {
      if (!fz.iterations && !fz.seconds) throw CLI::ValidationError("fuzz needs --iterations or --seconds");
      return run_fuzz(fz);
    }
    if (*replay) return run_replay(rp);
    if (*compare) return run_compare(cmp_a, cmp_b, cmp_heatmap);
    if (*report) return run_report(report_dir);
  } catch (const CLI::ValidationError& e) {
    spdlog::error("{}", e.what());
    return kExitUsage;
  } catch (const Error& e) {
    spdlog::error("{}", e.what());
    return kExitInput;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return kExitInput;
  }
  return kExitUsage;
}

#include "taforge/trace.hpp"

#include <algorithm>
#include <istream>
#include <optional>
#include <ostream>
#include <sstream>

#include <fmt/format.h>

#include "taforge/error.hpp"
#include "taforge/types.hpp"

namespace taforge::trace {

std::string_view to_string(Origin o) {
  switch (o) {
    case Origin::kRewritten: return "rewritten";
    case Origin::kDirectTrap: return "direct-trap";
    case Origin::kExternal: return "external";
  }
  return "?";
}

namespace {

std::optional<Origin> parse_origin(std::string_view s) {
  for (Origin o : {Origin::kRewritten, Origin::kDirectTrap, Origin::kExternal})
    if (to_string(o) == s) return o;
  return std::nullopt;
}

}  // namespace

NormalizedTrace normalize(const BranchTrace& trace, const LoadedImage& image, const TrampolineTable* table) {
  NormalizedTrace out;
  out.origin = table ? Origin::kRewritten : Origin::kDirectTrap;
  const Address base = image.image_base;
  std::size_t outside = 0;
  const TrampolineEntry* pending = nullptr;
  auto emit = [&](Address s, Address t) {
    const Edge e{s - base, t - base};
    out.edges.insert(e);
    out.sequence.push_back(e);
  };
  std::size_t counted = 0;
  for (const auto& ev : trace.events) {
    // Returns into the host are an artifact of the call harness.
    if (ev.source == kReturnSentinel || ev.target == kReturnSentinel) continue;
    ++counted;
    if (table && table->in_trampoline_region(ev.target) && !table->in_trampoline_region(ev.source)) {
      pending = table->at_trampoline(ev.target);
      if (pending && pending->site.address != ev.source) pending = nullptr;
      if (!image.in_image(ev.source)) ++outside;
      continue;
    }
    if (table && table->in_trampoline_region(ev.source)) {
      if (pending && ev.target == pending->return_addr && image.in_image(pending->site.address) &&
          image.in_image(ev.target))
        emit(pending->site.address, ev.target);
      else if (!image.in_image(ev.target))
        ++outside;
      if (!table->in_trampoline_region(ev.target)) pending = nullptr;
      continue;
    }
    if (image.in_image(ev.source) && image.in_image(ev.target))
      emit(ev.source, ev.target);
    else
      ++outside;
  }
  if (outside * 2 > counted)
    throw Error(ErrorCode::kForeignTrace, fmt::format("{} of {} events lie outside the image", outside, counted));
  return out;
}

BranchTrace denormalize(const NormalizedTrace& t, Address image_base) {
  BranchTrace out;
  out.events.reserve(t.sequence.size());
  for (const auto& [s, d] : t.sequence) {
    BranchEvent e;
    e.source = s + image_base;
    e.target = d + image_base;
    out.events.push_back(e);
  }
  return out;
}

namespace {

template <typename T>
Comparison jaccard_of(const std::set<T>& a, const std::set<T>& b, auto to_edge) {
  Comparison c;
  std::size_t common = 0;
  for (const auto& x : a) {
    if (b.count(x))
      ++common;
    else
      c.only_a.push_back(to_edge(x));
  }
  for (const auto& x : b)
    if (!a.count(x)) c.only_b.push_back(to_edge(x));
  const std::size_t uni = a.size() + b.size() - common;
  c.jaccard = uni == 0 ? 1.0 : static_cast<double>(common) / static_cast<double>(uni);
  return c;
}

}  // namespace

Comparison compare(const NormalizedTrace& a, const NormalizedTrace& b) {
  return jaccard_of(a.edges, b.edges, [](const Edge& e) { return e; });
}

Comparison compare(const CoverageBitmap& a, const CoverageBitmap& b) {
  const auto oa = a.occupied_buckets();
  const auto ob = b.occupied_buckets();
  return jaccard_of(std::set<std::uint32_t>(oa.begin(), oa.end()), std::set<std::uint32_t>(ob.begin(), ob.end()),
                    [](std::uint32_t k) { return Edge{k, 0}; });
}

Comparison compare(const Comparable& a, const Comparable& b) {
  if (a.index() != b.index()) throw Error(ErrorCode::kKindMismatch, "cannot compare a trace with a bitmap");
  if (const auto* ta = std::get_if<NormalizedTrace>(&a)) return compare(*ta, std::get<NormalizedTrace>(b));
  return compare(std::get<CoverageBitmap>(a), std::get<CoverageBitmap>(b));
}

void write_normalized(std::ostream& out, const NormalizedTrace& t) {
  out << "# normalized-trace " << to_string(t.origin) << '\n';
  for (const auto& [s, d] : t.sequence) out << fmt::format("{:#x} {:#x}\n", s, d);
}

NormalizedTrace read_normalized(std::string_view text) {
  NormalizedTrace t;
  std::istringstream in{std::string(text)};
  std::string line;
  if (!std::getline(in, line) || line.rfind("# normalized-trace ", 0) != 0)
    throw Error(ErrorCode::kIo, "missing normalized-trace header");
  const auto origin = parse_origin(line.substr(19));
  if (!origin) throw Error(ErrorCode::kIo, "unknown trace origin: " + line.substr(19));
  t.origin = *origin;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string a, b;
    if (!(ls >> a >> b)) throw Error(ErrorCode::kIo, "bad trace line: " + line);
    const Edge e{parse_u64(a), parse_u64(b)};
    t.edges.insert(e);
    t.sequence.push_back(e);
  }
  return t;
}

Comparable read_comparable(const std::vector<std::uint8_t>& bytes) {
  static constexpr std::string_view kHeader = "# normalized-trace ";
  if (bytes.size() >= kHeader.size() && std::equal(kHeader.begin(), kHeader.end(), bytes.begin()))
    return read_normalized(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
  if (bytes.size() != kBitmapSize)
    throw Error(ErrorCode::kIo, fmt::format("neither a bitmap nor a normalized trace ({} bytes)", bytes.size()));
  CoverageBitmap b;
  std::copy(bytes.begin(), bytes.end(), b.buckets.begin());
  return b;
}

void heatmap(const CoverageBitmap& bitmap, std::ostream& pgm) {
  pgm << "P2\n256 256\n" << kMaxHitClass << '\n';
  for (std::size_t y = 0; y < 256; ++y) {
    for (std::size_t x = 0; x < 256; ++x) {
      if (x) pgm << ' ';
      pgm << hit_class(bitmap.buckets[y * 256 + x]);
    }
    pgm << '\n';
  }
  if (!pgm) throw Error(ErrorCode::kIo, "heatmap sink write failed");
}

std::string heatmap_summary(const CoverageBitmap& bitmap) {
  return fmt::format("occupancy {:.6f}\nmax_hit_class {}\n", bitmap.occupancy(), bitmap.max_hit_class());
}

}  // namespace taforge::trace

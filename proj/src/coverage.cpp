#include "taforge/coverage.hpp"

#include <algorithm>

namespace taforge {

std::size_t CoverageBitmap::occupied() const {
  return static_cast<std::size_t>(std::count_if(buckets.begin(), buckets.end(), [](std::uint8_t b) { return b != 0; }));
}

unsigned CoverageBitmap::max_hit_class() const {
  return hit_class(*std::max_element(buckets.begin(), buckets.end()));
}

std::vector<std::uint32_t> CoverageBitmap::occupied_buckets() const {
  std::vector<std::uint32_t> out;
  for (std::uint32_t i = 0; i < kBitmapSize; ++i)
    if (buckets[i]) out.push_back(i);
  return out;
}

namespace {

bool absorb(const std::vector<std::uint32_t>& touched, const CoverageBitmap& local, CoverageBitmap& global,
            std::vector<std::uint32_t>* new_buckets) {
  bool interesting = false;
  for (std::uint32_t b : touched) {
    if (hit_class(local.buckets[b]) > hit_class(global.buckets[b])) {
      interesting = true;
      if (new_buckets) new_buckets->push_back(b);
    }
  }
  if (!interesting) return false;
  for (std::uint32_t b : touched) global.buckets[b] = std::max(global.buckets[b], local.buckets[b]);
  return true;
}

}  // namespace

bool update_coverage(std::span<const Edge> edges, CoverageBitmap& local, CoverageBitmap& global,
                     std::vector<std::uint32_t>* new_buckets) {
  std::vector<std::uint32_t> touched;
  touched.reserve(edges.size());
  for (const auto& [s, t] : edges) {
    const std::uint32_t b = edge_hash(s, t);
    if (local.buckets[b] == 0) touched.push_back(b);
    local.hit(b);
  }
  std::sort(touched.begin(), touched.end());
  return absorb(touched, local, global, new_buckets);
}

bool update_coverage(const BranchTrace& trace, CoverageBitmap& local, CoverageBitmap& global) {
  std::vector<Edge> edges;
  edges.reserve(trace.events.size());
  for (const auto& e : trace.events) edges.emplace_back(e.source, e.target);
  return update_coverage(edges, local, global);
}

bool merge_max(CoverageBitmap& into, const CoverageBitmap& from) {
  bool changed = false;
  for (std::size_t i = 0; i < kBitmapSize; ++i) {
    if (from.buckets[i] > into.buckets[i]) {
      into.buckets[i] = from.buckets[i];
      changed = true;
    }
  }
  return changed;
}

}  // namespace taforge

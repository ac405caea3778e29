#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sparseprof/errors.hpp"

namespace sparseprof {

/// Doubly-sparse two-level table: an ordered group index mapping each
/// non-empty outer key to the start of its run in `values`, terminated by a
/// sentinel entry whose start is `values.size()`. Within a run the inner keys
/// are strictly increasing and no stored value is zero.
///
/// Profile planes use <context, metric key>; context-major planes use
/// <metric key, profile>.
template <class Outer, class Inner>
struct CsrPlane {
  using outer_type = Outer;
  using inner_type = Inner;

  static constexpr Outer kSentinel = std::numeric_limits<Outer>::max();

  struct Group {
    Outer key;
    std::uint64_t start;
    friend bool operator==(const Group&, const Group&) = default;
  };
  struct Entry {
    Inner key;
    double value;
    friend bool operator==(const Entry&, const Entry&) = default;
  };

  std::vector<Group> index{Group{kSentinel, 0}};
  std::vector<Entry> values;

  std::size_t group_count() const { return index.size() - 1; }
  bool empty() const { return values.empty(); }

  std::span<const Entry> run(std::size_t g) const {
    auto lo = static_cast<std::size_t>(index[g].start);
    auto hi = static_cast<std::size_t>(index[g + 1].start);
    return std::span<const Entry>(values).subspan(lo, hi - lo);
  }

  friend bool operator==(const CsrPlane&, const CsrPlane&) = default;
};

using SparsePlane = CsrPlane<std::uint32_t, std::uint16_t>;

/// Three-way binary search over a sorted range of distinct keys. Each probe
/// is one key comparison; at most floor(log2 n) + 1 probes are made.
template <class T, class Key, class Proj>
std::optional<std::size_t> binary_find(std::span<const T> items, Key key, Proj proj,
                                       std::size_t* probes = nullptr) {
  std::size_t lo = 0;
  std::size_t hi = items.size();
  while (lo < hi) {
    std::size_t mid = lo + (hi - lo) / 2;
    if (probes) ++*probes;
    auto k = proj(items[mid]);
    if (k == key) return mid;
    if (k < key)
      lo = mid + 1;
    else
      hi = mid;
  }
  return std::nullopt;
}

template <class Outer, class Inner>
std::optional<std::size_t> find_group(const CsrPlane<Outer, Inner>& plane, Outer key,
                                      std::size_t* probes = nullptr) {
  using G = typename CsrPlane<Outer, Inner>::Group;
  std::span<const G> groups(plane.index.data(), plane.group_count());
  return binary_find(groups, key, [](const G& g) { return g.key; }, probes);
}

/// Value at (outer, inner), or nullopt meaning zero. When `probes` is given
/// it is incremented once per key comparison.
template <class Outer, class Inner>
std::optional<double> plane_lookup(const CsrPlane<Outer, Inner>& plane, Outer outer, Inner inner,
                                   std::size_t* probes = nullptr) {
  using E = typename CsrPlane<Outer, Inner>::Entry;
  auto g = find_group(plane, outer, probes);
  if (!g) return std::nullopt;
  auto run = plane.run(*g);
  auto e = binary_find(run, inner, [](const E& x) { return x.key; }, probes);
  if (!e) return std::nullopt;
  return run[*e].value;
}

/// Incremental construction in key order. Zero values are dropped and
/// groups left empty are not recorded.
template <class Outer, class Inner>
class PlaneBuilder {
 public:
  using Plane = CsrPlane<Outer, Inner>;

  void begin(Outer key) {
    close();
    if (open_ && key <= current_) throw InvariantError("plane groups out of order");
    open_ = true;
    current_ = key;
    start_ = plane_.values.size();
  }

  void add(Inner key, double v) {
    if (v == 0.0) return;
    if (plane_.values.size() > start_ && plane_.values.back().key >= key)
      throw InvariantError("plane keys out of order");
    plane_.values.push_back({key, v});
  }

  Plane finish() {
    close();
    plane_.index.push_back({Plane::kSentinel, plane_.values.size()});
    Plane out = std::move(plane_);
    plane_ = empty_plane();
    open_ = false;
    return out;
  }

 private:
  void close() {
    if (open_ && plane_.values.size() > start_) plane_.index.push_back({current_, start_});
  }

  static Plane empty_plane() {
    Plane p;
    p.index.clear();
    return p;
  }

  Plane plane_ = empty_plane();
  Outer current_{};
  std::size_t start_ = 0;
  bool open_ = false;
};

/// Rows indexed [context][metric]; all-zero rows and zero cells are elided.
SparsePlane plane_from_dense(const std::vector<std::vector<double>>& rows);

/// Inverse of plane_from_dense for a known shape.
std::vector<std::vector<double>> densify(const SparsePlane& plane, std::size_t rows, std::size_t cols);

struct PlaneDefect {
  std::string reason;
  std::size_t group;  // index position at which the defect was detected
};

/// Checks every structural invariant; returns the first violation found.
template <class Outer, class Inner>
std::optional<PlaneDefect> check_plane(const CsrPlane<Outer, Inner>& p) {
  using Plane = CsrPlane<Outer, Inner>;
  if (p.index.empty()) return PlaneDefect{"missing sentinel", 0};
  const auto& last = p.index.back();
  if (last.key != Plane::kSentinel) return PlaneDefect{"missing sentinel", p.index.size() - 1};
  if (last.start != p.values.size()) return PlaneDefect{"sentinel does not match value count", p.index.size() - 1};
  if (p.index.size() > 1 && p.index[0].start != 0) return PlaneDefect{"first group does not start at zero", 0};
  for (std::size_t g = 0; g + 1 < p.index.size(); ++g) {
    if (p.index[g + 1].start > p.values.size()) return PlaneDefect{"value offset past end", g + 1};
    if (g > 0 && p.index[g].key <= p.index[g - 1].key) return PlaneDefect{"non-monotone context index", g};
    if (p.index[g].key == Plane::kSentinel) return PlaneDefect{"sentinel before end of index", g};
    if (p.index[g + 1].start < p.index[g].start) return PlaneDefect{"decreasing value offset", g};
    auto run = p.run(g);
    for (std::size_t i = 0; i < run.size(); ++i) {
      if (run[i].value == 0.0) return PlaneDefect{"zero stored value", g};
      if (i > 0 && run[i].key <= run[i - 1].key) return PlaneDefect{"non-monotone keys in group", g};
    }
  }
  if (p.index.size() == 1 && !p.values.empty()) return PlaneDefect{"values without index", 0};
  return std::nullopt;
}

}  // namespace sparseprof

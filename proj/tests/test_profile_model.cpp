#include <doctest.h>

#include <array>
#include <random>

#include "sparseprof/frame.hpp"
#include "sparseprof/ids.hpp"
#include "sparseprof/plane.hpp"
#include "support.hpp"

using namespace sparseprof;
using testing::example_matrix;

namespace {

std::size_t ceil_log2(std::size_t n) {
  std::size_t r = 0;
  while ((std::size_t{1} << r) < n) ++r;
  return r;
}

}  // namespace

TEST_CASE("metric scope encoding") {
  CHECK(scope_of(MetricScopeId(0)) == ScopedMetric{MetricId(0), Scope::exclusive});
  CHECK(scope_of(MetricScopeId(5)) == ScopedMetric{MetricId(2), Scope::inclusive});
  CHECK(scope_of(MetricScopeId(124)) == ScopedMetric{MetricId(62), Scope::exclusive});
  for (std::uint16_t m = 0; m < kMaxMetrics; ++m)
    for (auto s : {Scope::exclusive, Scope::inclusive}) {
      auto k = scoped(MetricId(m), s);
      REQUIRE(scope_of(k) == ScopedMetric{MetricId(m), s});
    }
}

TEST_CASE("statistic ids stay below the sentinel for every metric") {
  auto top = scoped(MetricId(kMaxMetrics - 1), Scope::inclusive);
  auto last = stat_metric(top, Stat::sumsq);
  CHECK(last.value() < 0xFFFF);
  for (std::uint16_t k = 0; k <= top.value(); ++k)
    for (unsigned s = 0; s < kStatCount; ++s) {
      auto id = stat_metric(MetricScopeId(k), static_cast<Stat>(s));
      auto back = stat_of(id);
      REQUIRE(back.scope == MetricScopeId(k));
      REQUIRE(back.stat == static_cast<Stat>(s));
    }
}

TEST_CASE("frame labels and well-formedness") {
  CHECK(to_string(Frame::func("foo")) == "foo()");
  CHECK(to_string(Frame::inlined("baz")) == "(inlined) baz()");
  CHECK(to_string(Frame::loop("foo.c", 7)) == "loop at foo.c:7");
  CHECK(to_string(Frame::line("foo.c", 5)) == "foo.c:5");
  CHECK(to_string(Frame::instruction(BinaryId(1), 0x3B)) == "+0x3B");
  CHECK(Frame::root().well_formed());
  CHECK(Frame::func("x").well_formed());
  Frame bad = Frame::func("x");
  bad.lineno = 3;
  CHECK_FALSE(bad.well_formed());
  Frame bad_root = Frame::root();
  bad_root.name = "r";
  CHECK_FALSE(bad_root.well_formed());
}

TEST_CASE("frame order is total and consistent with equality") {
  std::vector<Frame> fs{Frame::root(),          Frame::func("a"),      Frame::func("b"),
                        Frame::inlined("a"),    Frame::loop("f.c", 1), Frame::loop("f.c", 2),
                        Frame::line("e.c", 9),  Frame::line("f.c", 1), Frame::instruction(BinaryId(0), 4),
                        Frame::instruction(BinaryId(1), 0)};
  for (std::size_t i = 0; i < fs.size(); ++i)
    for (std::size_t j = 0; j < fs.size(); ++j) {
      CHECK((fs[i] == fs[j]) == (i == j));
      CHECK((fs[i] < fs[j]) == (i < j));
      if (fs[i] == fs[j]) CHECK(FrameHash{}(fs[i]) == FrameHash{}(fs[j]));
    }
}

TEST_CASE("example matrix converts to the exact sparse layout") {
  auto p = plane_from_dense(example_matrix());
  using E = SparsePlane::Entry;
  using G = SparsePlane::Group;
  CHECK(p.values == std::vector<E>{{1, 5}, {0, 2}, {2, 6}, {1, 3}});
  CHECK(p.index == std::vector<G>{{0, 0}, {1, 1}, {3, 3}, {kTopContext, 4}});
  CHECK_FALSE(check_plane(p));
}

TEST_CASE("plane_from_dense edge cases") {
  auto zero = plane_from_dense(std::vector<std::vector<double>>(4, std::vector<double>(4, 0)));
  CHECK(zero.values.empty());
  CHECK(zero.index == std::vector<SparsePlane::Group>{{kTopContext, 0}});

  auto one = plane_from_dense({{7.5}});
  CHECK(one.values == std::vector<SparsePlane::Entry>{{0, 7.5}});
  CHECK(one.index == std::vector<SparsePlane::Group>{{0, 0}, {kTopContext, 1}});

  SparsePlane empty;
  CHECK(empty.index.size() == 1);
  CHECK_FALSE(plane_lookup(empty, 0u, std::uint16_t{0}));
  CHECK_FALSE(check_plane(empty));
}

TEST_CASE("lookup on the example plane") {
  auto p = plane_from_dense(example_matrix());
  CHECK(plane_lookup(p, 1u, std::uint16_t{0}) == 2.0);
  CHECK(plane_lookup(p, 0u, std::uint16_t{1}) == 5.0);
  CHECK(plane_lookup(p, 3u, std::uint16_t{1}) == 3.0);
  for (std::uint16_t k = 0; k < 8; ++k) CHECK_FALSE(plane_lookup(p, 2u, k));
  CHECK_FALSE(plane_lookup(p, 1u, std::uint16_t{1}));
  CHECK_FALSE(plane_lookup(p, 99u, std::uint16_t{0}));
}

TEST_CASE("dense round trip and oracle equivalence") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 1000; ++trial) {
    std::size_t rows = 1 + rng() % 64, cols = 1 + rng() % 64;
    double density = std::array{0.01, 0.2, 1.0}[trial % 3];
    auto m = testing::random_matrix(rng, rows, cols, density);
    auto p = plane_from_dense(m);
    REQUIRE_FALSE(check_plane(p));
    REQUIRE(densify(p, rows, cols) == m);
    for (std::uint32_t c = 0; c < rows; ++c)
      for (std::uint16_t k = 0; k < cols; ++k) {
        auto v = plane_lookup(p, c, k);
        REQUIRE(v.value_or(0.0) == m[c][k]);
        REQUIRE(v.has_value() == (m[c][k] != 0.0));
      }
  }
}

TEST_CASE("lookup comparison bound") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    std::size_t rows = 1 + rng() % 300, cols = 1 + rng() % 200;
    auto m = testing::random_matrix(rng, rows, cols, (rng() % 100 + 1) / 100.0);
    auto p = plane_from_dense(m);
    std::size_t C = p.group_count();
    for (int q = 0; q < 200; ++q) {
      auto c = static_cast<std::uint32_t>(rng() % (rows + 4));
      auto k = static_cast<std::uint16_t>(rng() % (cols + 4));
      std::size_t probes = 0;
      plane_lookup(p, c, k, &probes);
      std::size_t Mc = 0;
      if (auto g = find_group(p, c)) Mc = p.run(*g).size();
      REQUIRE(probes <= ceil_log2(C) + ceil_log2(Mc) + 2);
    }
  }
}

TEST_CASE("check_plane reports each defect") {
  auto base = plane_from_dense(example_matrix());
  auto reason = [](const SparsePlane& p) { return check_plane(p) ? check_plane(p)->reason : std::string(); };

  auto p = base;
  p.index.pop_back();
  CHECK(reason(p) == "missing sentinel");
  p = base;
  p.index.back().start = 3;
  CHECK(reason(p) == "sentinel does not match value count");
  p = base;
  p.index[1].key = 0;
  CHECK(reason(p) == "non-monotone context index");
  p = base;
  p.index[2].start = 0;
  CHECK(reason(p) == "decreasing value offset");
  p = base;
  p.values[0].value = 0.0;
  CHECK(reason(p) == "zero stored value");
  p = base;
  std::swap(p.values[1], p.values[2]);
  CHECK(reason(p) == "non-monotone keys in group");
  p = base;
  p.index[0].start = 1;
  CHECK(reason(p) == "first group does not start at zero");
  p = base;
  p.index[1].key = kTopContext;
  p.index[2].key = kTopContext;
  CHECK(!reason(p).empty());
  SparsePlane orphan;
  orphan.values.push_back({0, 1.0});
  orphan.index.back().start = 1;
  CHECK(reason(orphan) == "values without index");
}

TEST_CASE("plane builder rejects out-of-order input and drops empties") {
  PlaneBuilder<std::uint32_t, std::uint16_t> b;
  b.begin(3);
  b.add(1, 1.0);
  CHECK_THROWS_AS(b.add(1, 2.0), InvariantError);
  CHECK_THROWS_AS(b.begin(2), InvariantError);
  PlaneBuilder<std::uint32_t, std::uint16_t> e;
  e.begin(1);
  e.add(0, 0.0);
  e.begin(2);
  e.add(4, 1.5);
  auto p = e.finish();
  CHECK(p.group_count() == 1);
  CHECK(p.index[0].key == 2);
}

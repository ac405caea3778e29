#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <string>
#include <unistd.h>
#include <vector>

#include "sparseprof/cct_store.hpp"
#include "sparseprof/frame.hpp"
#include "sparseprof/meas_format.hpp"
#include "sparseprof/plane.hpp"
#include "sparseprof/structure_map.hpp"

namespace testing {

using namespace sparseprof;

/// Scratch directory removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("sparseprof-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

 private:
  std::filesystem::path path_;
};

/// The 4x4 example matrix: rows are contexts, columns metrics.
inline std::vector<std::vector<double>> example_matrix() {
  return {{0, 5, 0, 0}, {2, 0, 6, 0}, {0, 0, 0, 0}, {0, 3, 0, 0}};
}

inline std::vector<std::vector<double>> random_matrix(std::mt19937_64& rng, std::size_t rows, std::size_t cols,
                                                      double density) {
  std::uniform_real_distribution<double> u(0, 1);
  std::vector<std::vector<double>> m(rows, std::vector<double>(cols, 0));
  for (auto& r : m)
    for (auto& v : r)
      if (u(rng) < density) v = static_cast<double>(1 + rng() % 1000) * (rng() % 2 ? 1 : -0.5);
  return m;
}

/// Random well-formed measurement file.
inline MeasurementFile random_measurement(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  MeasurementFile f;
  f.meta.kind = rng() % 2 ? ProfileKind::gpu_stream : ProfileKind::cpu_thread;
  f.meta.rank = static_cast<std::uint32_t>(rng() % 1000);
  f.meta.local_index = static_cast<std::uint32_t>(rng() % 64);
  f.metric_count = static_cast<std::uint16_t>(1 + rng() % 40);
  std::size_t nb = rng() % 4;
  for (std::size_t b = 0; b < nb; ++b) f.binaries.push_back("bin" + std::to_string(b) + (rng() % 2 ? ".so" : ""));
  std::size_t nodes = 1 + rng() % 60;
  for (std::size_t n = 1; n < nodes; ++n) {
    LocalNode ln;
    ln.parent = ContextId(static_cast<std::uint32_t>(rng() % n));
    ln.binary = nb ? static_cast<std::uint32_t>(rng() % nb) : 0;
    ln.offset = rng() % 0x100000;
    f.nodes.push_back(ln);
  }
  PlaneBuilder<std::uint32_t, std::uint16_t> b;
  double density = (rng() % 100) / 100.0;
  for (std::uint32_t n = 0; n < nodes; ++n) {
    if ((rng() % 1000) / 1000.0 >= density) continue;
    b.begin(n);
    for (std::uint16_t m = 0; m < f.metric_count; ++m)
      if (rng() % 4 == 0) b.add(m, static_cast<double>(static_cast<std::int64_t>(rng() % 2001) - 1000) / 8.0);
  }
  f.plane = b.finish();
  if (rng() % 3 == 0) {
    f.trace.emplace();
    std::uint64_t ts = rng() % 100;
    for (std::size_t i = rng() % 20; i > 0; --i) {
      ts += rng() % 50;
      f.trace->push_back({ts, ContextId(static_cast<std::uint32_t>(rng() % nodes))});
    }
  }
  if (nb == 0 && nodes > 1) f.binaries.push_back("a.out");
  return f;
}

// ---------------------------------------------------------------------------
// Lexical expansion fixture: three binaries and a runtime tree of
// instruction offsets.

inline const char* kMainStruct =
    "binary main\n"
    "map 10 18 := func main / line main.c:5\n";
inline const char* kFooStruct =
    "binary libfoo.so\n"
    "map 20 28 := func foo / line foo.c:5\n"
    "map 28 30 := func foo / line foo.c:6\n"
    "map 30 3b := func foo / loop foo.c:7 / line foo.c:8\n"
    "map 3b 40 := func foo / line foo.c:9 / inline baz / line foo.c:20\n";
inline const char* kBarStruct =
    "binary libbar.so\n"
    "map 80 90 := func bar / line bar.c:5\n";

inline constexpr std::uint32_t kMainBin = 0, kFooBin = 1, kBarBin = 2;

/// Writes the three structure files and returns the runtime measurement.
inline MeasurementFile write_expansion_fixture(const std::filesystem::path& dir) {
  write_structure(parse_structure(kMainStruct), dir / "main.structz");
  write_structure(parse_structure(kFooStruct), dir / "libfoo.structz");
  write_structure(parse_structure(kBarStruct), dir / "libbar.structz");
  MeasurementFile f;
  f.metric_count = 1;
  f.binaries = {"main", "libfoo.so", "libbar.so"};
  auto add = [&](std::uint32_t parent, std::uint32_t bin, std::uint64_t off) {
    f.nodes.push_back({ContextId(parent), bin, off});
    return static_cast<std::uint32_t>(f.nodes.size() - 1);
  };
  auto n10 = add(0, kMainBin, 0x10);
  add(n10, kFooBin, 0x20);
  auto n28 = add(n10, kFooBin, 0x28);
  add(n28, kBarBin, 0x80);
  auto n2b = add(n10, kFooBin, 0x2B);
  add(n2b, kBarBin, 0x80);
  add(n10, kFooBin, 0x30);
  add(n10, kFooBin, 0x38);
  add(n10, kFooBin, 0x3B);
  add(n10, kFooBin, 0x00);
  PlaneBuilder<std::uint32_t, std::uint16_t> b;
  for (std::uint32_t n = 1; n < f.nodes.size(); ++n) {
    b.begin(n);
    b.add(0, n);
  }
  f.plane = b.finish();
  return f;
}

/// The ten root-to-leaf paths of the expanded tree, written out by hand.
inline std::vector<ContextPath> expansion_paths() {
  auto R = Frame::root();
  auto M = Frame::func("main"), M5 = Frame::line("main.c", 5), I10 = Frame::instruction(BinaryId(kMainBin), 0x10);
  auto F = Frame::func("foo");
  auto B = Frame::func("bar"), B5 = Frame::line("bar.c", 5), I80 = Frame::instruction(BinaryId(kBarBin), 0x80);
  auto foo = [](std::uint64_t off) { return Frame::instruction(BinaryId(kFooBin), off); };
  ContextPath pre{R, M, M5, I10};
  auto with = [&](std::vector<Frame> tail) {
    auto p = pre;
    p.insert(p.end(), tail.begin(), tail.end());
    return p;
  };
  return {
      pre,
      with({F, Frame::line("foo.c", 5), foo(0x20)}),
      with({F, Frame::line("foo.c", 6), foo(0x28)}),
      with({F, Frame::line("foo.c", 6), foo(0x28), B, B5, I80}),
      with({F, Frame::line("foo.c", 6), foo(0x2B)}),
      with({F, Frame::line("foo.c", 6), foo(0x2B), B, B5, I80}),
      with({F, Frame::loop("foo.c", 7), Frame::line("foo.c", 8), foo(0x30)}),
      with({F, Frame::loop("foo.c", 7), Frame::line("foo.c", 8), foo(0x38)}),
      with({F, Frame::line("foo.c", 9), Frame::inlined("baz"), Frame::line("foo.c", 20), foo(0x3B)}),
      with({foo(0x00)}),
  };
}

inline constexpr std::size_t kExpansionNodes = 24;  // non-root nodes of the expanded tree

// ---------------------------------------------------------------------------
// Brute-force oracles over a snapshot.

/// Root-to-node frames of `id`.
inline ContextPath path_of(const CctStore& s, ContextId id) {
  ContextPath p;
  while (true) {
    p.push_back(s.frame(id));
    if (id == kRootContext) break;
    id = s.parent(id);
  }
  std::reverse(p.begin(), p.end());
  return p;
}

/// Children lists indexed by id.
inline std::vector<std::vector<std::uint32_t>> children_of(const std::vector<NodeRecord>& tree) {
  std::vector<std::vector<std::uint32_t>> kids(tree.size());
  for (std::size_t i = 1; i < tree.size(); ++i) kids[tree[i].parent.value()].push_back(static_cast<std::uint32_t>(i));
  return kids;
}

/// (context, key) -> value for one plane.
inline std::map<std::pair<std::uint32_t, std::uint16_t>, double> plane_map(const SparsePlane& p) {
  std::map<std::pair<std::uint32_t, std::uint16_t>, double> out;
  for (std::size_t g = 0; g < p.group_count(); ++g)
    for (const auto& e : p.run(g)) out[{p.index[g].key, e.key}] = e.value;
  return out;
}

}  // namespace testing

#include <doctest.h>

#include <set>

#include "sparseprof/aggregator.hpp"
#include "sparseprof/byte_io.hpp"
#include "sparseprof/synth_gen.hpp"
#include "support.hpp"

using namespace sparseprof;
using testing::TempDir;

namespace {

WorkloadSpec medium_spec() {
  WorkloadSpec s;
  s.profiles = 64;
  s.metrics = 40;
  s.depth = 4;
  s.branching = 4;
  s.ctx_density = 0.3;
  s.metric_density = 0.1;
  s.shared_fraction = 0.5;
  s.seed = 3;
  return s;
}

std::vector<std::pair<std::string, std::vector<std::uint8_t>>> dir_contents(const std::filesystem::path& d) {
  std::vector<std::pair<std::string, std::vector<std::uint8_t>>> out;
  for (const auto& e : std::filesystem::directory_iterator(d)) out.emplace_back(e.path().filename().string(), read_file(e.path()));
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

TEST_CASE("spec validation") {
  WorkloadSpec s;
  CHECK_NOTHROW(s.validate());
  auto bad = [](auto mutate) {
    WorkloadSpec w;
    mutate(w);
    CHECK_THROWS_AS(w.validate(), ConfigError);
  };
  bad([](WorkloadSpec& w) { w.profiles = 0; });
  bad([](WorkloadSpec& w) { w.metrics = 0; });
  bad([](WorkloadSpec& w) { w.metrics = static_cast<std::uint16_t>(kMaxMetrics + 1); });
  bad([](WorkloadSpec& w) { w.ctx_density = 0; });
  bad([](WorkloadSpec& w) { w.metric_density = 1.5; });
  bad([](WorkloadSpec& w) { w.depth = 10, w.branching = 10; });
  bad([](WorkloadSpec& w) { w.binaries = 1, w.branching = 65; });
  CHECK(s.nodes_per_profile() == 1 + 4 + 16 + 64);
}

TEST_CASE("metric probability hits the conditional density") {
  CHECK(metric_probability(0.01, 10) == 0);
  CHECK(metric_probability(1.0, 10) == 1);
  for (double d : {0.2, 0.5, 0.8})
    for (std::uint32_t n : {8u, 40u}) {
      double p = metric_probability(d, n);
      if (d * n <= 1) continue;
      CHECK(p / (1 - std::pow(1 - p, n)) == doctest::Approx(d).epsilon(1e-9));
    }
}

TEST_CASE("generation is deterministic and independent of thread count") {
  TempDir dir;
  auto spec = medium_spec();
  spec.profiles = 16;
  spec.trace_len = 10;
  auto a = generate(spec, dir / "a", 1);
  auto b = generate(spec, dir / "b", 4);
  CHECK(dir_contents(dir / "a") == dir_contents(dir / "b"));
  CHECK(a.unified_contexts == b.unified_contexts);
  spec.seed = 4;
  generate(spec, dir / "c", 1);
  CHECK(dir_contents(dir / "a") != dir_contents(dir / "c"));
}

TEST_CASE("every profile is a valid measurement file") {
  auto spec = medium_spec();
  spec.gpu_split = true;
  spec.trace_len = 5;
  for (std::uint32_t p = 0; p < 8; ++p) {
    auto f = synth_profile(spec, p);
    CHECK_NOTHROW(validate_measurement(f));
    CHECK(f.nodes.size() == spec.nodes_per_profile());
    CHECK(f.trace->size() == 5);
    CHECK(f.meta.rank == p / 4);
  }
}

TEST_CASE("realized densities are within 10% of the request") {
  TempDir dir;
  auto spec = medium_spec();
  auto m = generate(spec, dir.path());
  CHECK(m.contexts_total >= 10'000);
  CHECK(m.ctx_density() == doctest::Approx(spec.ctx_density).epsilon(0.10));
  CHECK(m.metric_density() == doctest::Approx(spec.metric_density).epsilon(0.10));
  auto scan = scan_measurements(list_measurements(dir.path()));
  CHECK(scan.files == spec.profiles);
  CHECK(scan.contexts == m.contexts_total);
  CHECK(scan.nonzeros == m.nonzeros);
  CHECK(scan.sparse_bytes == m.sparse_bytes);
  CHECK(scan.dense_bytes == m.dense_bytes);
  CHECK(scan.ctx_density() == doctest::Approx(m.ctx_density()));
}

TEST_CASE("a single dense profile") {
  TempDir dir;
  WorkloadSpec s;
  s.profiles = 1;
  s.metrics = 5;
  s.depth = 2;
  s.branching = 3;
  s.ctx_density = 1;
  s.metric_density = 1;
  auto m = generate(s, dir.path());
  CHECK(m.contexts_total == 13);
  CHECK(m.nonempty_contexts == 12);
  CHECK(m.nonzeros == 12 * 5);
  CHECK(m.metric_density() == 1.0);
}

TEST_CASE("dense size formula") {
  WorkloadSpec s;
  s.profiles = 1;
  s.metrics = 7;
  s.depth = 2;
  s.branching = 2;
  s.binaries = 3;
  auto f = synth_profile(s, 0);
  std::uint64_t names = 4;
  for (const auto& b : f.binaries) names += 4 + b.size();
  std::uint64_t N = 7;
  CHECK(dense_equivalent_size(f) == 48 + 16 * N + names + 8 * N * 7);
  CHECK(encoded_size(f) == 48 + 16 * N + names + 12 * (f.plane.group_count() + 1) + 12 * f.plane.values.size());
  TempDir dir;
  auto m = generate(s, dir.path());
  CHECK(dense_size(m) == dense_equivalent_size(f));
}

TEST_CASE("dense size grows with metrics; sparse size tracks density") {
  TempDir dir;
  auto spec = medium_spec();
  spec.profiles = 4;
  std::uint64_t prev_dense = 0, prev_sparse = 0;
  for (std::uint16_t M : {10, 20, 40, 80}) {
    spec.metrics = M;
    auto m = generate(spec, dir / std::to_string(M));
    CHECK(dense_size(m) > prev_dense);
    prev_dense = dense_size(m);
  }
  for (double d : {0.05, 0.2, 0.5, 1.0}) {
    spec.metrics = 40;
    spec.metric_density = d;
    auto m = generate(spec, dir / ("d" + std::to_string(d)));
    CHECK(m.sparse_bytes > prev_sparse);
    prev_sparse = m.sparse_bytes;
  }
}

TEST_CASE("sparse storage loses only near full density") {
  TempDir dir;
  WorkloadSpec s;
  s.profiles = 2;
  s.metrics = 32;
  s.depth = 3;
  s.branching = 6;
  s.ctx_density = 1;
  // Per row: sparse 12 + 12 d M bytes against dense 8 M; break-even near d = 0.64.
  s.metric_density = 0.02;
  auto sparse = generate(s, dir / "min");
  CHECK(sparse.sparse_bytes * 5 <= dense_size(sparse));
  for (double d : {0.1, 0.3, 0.5}) {
    s.metric_density = d;
    auto m = generate(s, dir / ("lo" + std::to_string(d)));
    CHECK(m.sparse_bytes < dense_size(m));
  }
  for (double d : {0.8, 1.0}) {
    s.metric_density = d;
    auto m = generate(s, dir / ("hi" + std::to_string(d)));
    CHECK(m.sparse_bytes > dense_size(m));
  }
}

TEST_CASE("manifest round trip") {
  TempDir dir;
  auto spec = medium_spec();
  spec.profiles = 3;
  spec.gpu_split = true;
  spec.trace_len = 2;
  auto m = generate(spec, dir.path());
  auto back = read_manifest(dir.path());
  CHECK(format_manifest(back) == format_manifest(m));
  CHECK(back.files == m.files);
  CHECK(back.spec.gpu_split);
  CHECK(back.spec.shared_fraction == spec.shared_fraction);
  CHECK_THROWS(parse_manifest("profiles=x\n"));
}

TEST_CASE("gpu split keeps CPU and GPU metrics disjoint") {
  auto spec = medium_spec();
  spec.gpu_split = true;
  spec.metric_density = 0.3;
  std::set<std::uint16_t> cpu, gpu;
  for (std::uint32_t p = 0; p < 16; ++p) {
    auto f = synth_profile(spec, p);
    CHECK((f.meta.kind == ProfileKind::gpu_stream) == (p % 4 == 3));
    for (const auto& e : f.plane.values) (f.meta.kind == ProfileKind::gpu_stream ? gpu : cpu).insert(e.key);
  }
  CHECK(!cpu.empty());
  CHECK(!gpu.empty());
  CHECK(*cpu.rbegin() < *gpu.begin());
}

TEST_CASE("generated workloads analyze consistently") {
  TempDir dir;
  auto spec = medium_spec();
  spec.profiles = 16;
  auto m = generate(spec, dir / "in");
  AnalysisConfig cfg;
  cfg.outdir = dir / "out";
  cfg.threads = 2;
  auto rep = analyze(list_measurements(dir / "in"), cfg);
  CHECK(rep.contexts == m.unified_contexts);
  CHECK(rep.exclusive_nonzeros == m.nonzeros);
  CHECK(rep.input_nonzeros == m.nonzeros);
  CHECK(rep.binaries == spec.binaries);
}

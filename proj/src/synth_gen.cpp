#include "sparseprof/synth_gen.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <random>
#include <set>
#include <sstream>

#include "sparseprof/byte_io.hpp"
#include "sparseprof/cct_store.hpp"
#include "sparseprof/errors.hpp"
#include "sparseprof/parallel.hpp"

namespace sparseprof {

namespace {

constexpr std::uint32_t kFunctions = 64;
constexpr std::uint32_t kSlots = 64;  // 4-byte instruction slots per function
constexpr std::uint32_t kLines = 8;

std::uint64_t function_base(std::uint32_t f) { return 0x1000 + 0x100 * std::uint64_t{f}; }

double uniform(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }
std::uint64_t below(std::mt19937_64& rng, std::uint64_t n) { return rng() % n; }

bool gpu_profile(const WorkloadSpec& s, std::uint32_t p) { return s.gpu_split && p % 4 == 3; }

/// Metrics a profile may carry under the cpu/gpu role split.
std::pair<std::uint16_t, std::uint16_t> allowed_metrics(const WorkloadSpec& s, std::uint32_t p) {
  if (!s.gpu_split || s.metrics < 2) return {0, s.metrics};
  std::uint16_t half = s.metrics / 2;
  return gpu_profile(s, p) ? std::pair<std::uint16_t, std::uint16_t>{half, s.metrics}
                           : std::pair<std::uint16_t, std::uint16_t>{0, half};
}

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

std::uint64_t WorkloadSpec::nodes_per_profile() const {
  std::uint64_t n = 1, level = 1;
  for (std::uint32_t d = 0; d < depth; ++d) {
    level *= branching;
    n += level;
    if (n > 10'000'000) return n;
  }
  return n;
}

void WorkloadSpec::validate() const {
  if (profiles == 0) throw ConfigError("profiles must be positive");
  if (metrics == 0 || metrics > kMaxMetrics) throw ConfigError("metric count out of range");
  if (depth == 0 || branching == 0) throw ConfigError("depth and branching must be positive");
  if (nodes_per_profile() > 1'000'000) throw ConfigError("tree exceeds 10^6 contexts per profile");
  if (!(shared_fraction >= 0 && shared_fraction <= 1)) throw ConfigError("shared fraction must be in [0,1]");
  if (!(ctx_density > 0 && ctx_density <= 1)) throw ConfigError("context density must be in (0,1]");
  if (!(metric_density > 0 && metric_density <= 1)) throw ConfigError("metric density must be in (0,1]");
  if (binaries == 0) throw ConfigError("at least one binary is required");
  if (branching > std::uint64_t{binaries} * kFunctions) throw ConfigError("branching exceeds distinct call sites");
}

double Manifest::ctx_density() const {
  return contexts_total ? double(nonempty_contexts) / double(contexts_total) : 0;
}

double Manifest::metric_density() const {
  return nonempty_contexts ? double(nonzeros) / (double(nonempty_contexts) * spec.metrics) : 0;
}

double metric_probability(double density, std::uint32_t allowed) {
  if (allowed == 0) return 0;
  if (density * allowed <= 1.0) return 0;  // exactly one nonzero
  if (density >= 1.0) return 1;
  auto f = [&](double p) { return p / (1 - std::pow(1 - p, allowed)); };
  double lo = 0, hi = 1;
  for (int i = 0; i < 100; ++i) {
    double mid = 0.5 * (lo + hi);
    (f(mid) < density ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

std::string synth_binary_name(std::uint32_t k) { return "lib" + std::to_string(k) + ".so"; }

StructureFile synth_structure(std::uint32_t k) {
  StructureFile s;
  s.binary_path = synth_binary_name(k);
  auto ks = std::to_string(k);
  for (std::uint32_t f = 0; f < kFunctions; ++f) {
    if (f % 16 == 15) continue;
    auto fname = "fn_" + ks + "_" + std::to_string(f);
    auto src = "src_" + ks + ".c";
    for (std::uint32_t l = 0; l < kLines; ++l) {
      StructureEntry e;
      e.lo = function_base(f) + 0x20 * l;
      e.hi = e.lo + 0x20;
      e.frames.push_back(Frame::func(fname));
      if (f % 4 == 1 && l >= 2 && l < 6) e.frames.push_back(Frame::loop(src, 100 * f + 3));
      if (f % 8 == 5 && l >= 6) {
        e.frames.push_back(Frame::inlined("helper_" + ks + "_" + std::to_string(f)));
        e.frames.push_back(Frame::line("inc_" + ks + ".h", 10 * f + l));
      } else {
        e.frames.push_back(Frame::line(src, 100 * f + 4 + l));
      }
      s.entries.push_back(std::move(e));
    }
  }
  return s;
}

MeasurementFile synth_profile(const WorkloadSpec& spec, std::uint32_t p) {
  std::mt19937_64 rng(spec.seed ^ (std::uint64_t{p} + 1));
  const std::uint32_t B = spec.branching, nb = spec.binaries;

  MeasurementFile f;
  f.meta.kind = gpu_profile(spec, p) ? ProfileKind::gpu_stream : ProfileKind::cpu_thread;
  f.meta.rank = p / 4;
  f.meta.local_index = p % 4;
  f.metric_count = spec.metrics;
  for (std::uint32_t k = 0; k < nb; ++k) f.binaries.push_back(synth_binary_name(k));

  std::vector<bool> shared(B);
  for (std::uint32_t j = 0; j < B; ++j) shared[j] = uniform(rng) < spec.shared_fraction;
  std::vector<std::mt19937_64> pool(B);
  for (std::uint32_t j = 0; j < B; ++j) {
    std::seed_seq seq{static_cast<std::uint32_t>(spec.seed), static_cast<std::uint32_t>(spec.seed >> 32), 0x5EA7u, j};
    pool[j] = std::mt19937_64(seq);
  }

  std::vector<std::uint32_t> subtree{0};  // top-level subtree of each node
  std::vector<std::uint32_t> level{0};
  for (std::uint32_t d = 1; d <= spec.depth; ++d) {
    std::vector<std::uint32_t> next;
    for (auto parent : level) {
      std::set<std::pair<std::uint32_t, std::uint64_t>> siblings;
      for (std::uint32_t c = 0; c < B; ++c) {
        std::uint32_t j = d == 1 ? c : subtree[parent];
        auto& r = shared[j] ? pool[j] : rng;
        LocalNode n;
        n.parent = ContextId(parent);
        if (d == 1) {
          n.binary = j % nb;
          n.offset = function_base((j / nb) % kFunctions) + 4 * below(r, kSlots);
        } else {
          do {
            n.binary = static_cast<std::uint32_t>(below(r, nb));
            n.offset = function_base(static_cast<std::uint32_t>(below(r, kFunctions))) + 4 * below(r, kSlots);
          } while (!siblings.emplace(n.binary, n.offset).second);
        }
        next.push_back(static_cast<std::uint32_t>(f.nodes.size()));
        subtree.push_back(j);
        f.nodes.push_back(n);
      }
    }
    level = std::move(next);
  }

  auto [mlo, mhi] = allowed_metrics(spec, p);
  std::uint32_t allowed = mhi - mlo;
  double target = std::min(1.0, spec.metric_density * spec.metrics / allowed);
  double prob = metric_probability(target, allowed);
  PlaneBuilder<std::uint32_t, std::uint16_t> b;
  std::vector<std::uint16_t> picked;
  for (std::uint32_t n = 1; n < f.nodes.size(); ++n) {
    if (uniform(rng) >= spec.ctx_density) continue;
    picked.clear();
    if (prob == 0) {
      picked.push_back(static_cast<std::uint16_t>(mlo + below(rng, allowed)));
    } else {
      while (picked.empty())
        for (std::uint16_t m = mlo; m < mhi; ++m)
          if (uniform(rng) < prob) picked.push_back(m);
    }
    b.begin(n);
    for (auto m : picked) b.add(m, static_cast<double>(1 + below(rng, 1000)));
  }
  f.plane = b.finish();

  if (spec.trace_len > 0 && f.nodes.size() > 1) {
    f.trace.emplace();
    std::uint64_t ts = 1000;
    for (std::uint32_t i = 0; i < spec.trace_len; ++i) {
      ts += 1 + below(rng, 1000);
      f.trace->push_back({ts, ContextId(static_cast<std::uint32_t>(1 + below(rng, f.nodes.size() - 1)))});
    }
  }
  return f;
}

Manifest generate(const WorkloadSpec& spec, const std::filesystem::path& dest, unsigned threads) {
  spec.validate();
  std::error_code ec;
  std::filesystem::create_directories(dest, ec);
  if (ec) throw IoError("cannot create " + dest.string() + ": " + ec.message());

  std::vector<StructureFile> structs;
  for (std::uint32_t k = 0; k < spec.binaries; ++k) {
    structs.push_back(synth_structure(k));
    write_structure(structs.back(), dest / ("lib" + std::to_string(k) + ".structz"));
  }

  Manifest m;
  m.spec = spec;
  m.files.resize(spec.profiles);
  CctStore unified;
  std::atomic<std::uint32_t> next{0};
  std::atomic<std::uint64_t> contexts{0}, nonempty{0}, nonzeros{0}, sparse{0}, dense{0};
  run_workers(threads, [&](unsigned) {
    for (auto p = next.fetch_add(1); p < spec.profiles; p = next.fetch_add(1)) {
      auto f = synth_profile(spec, p);
      char name[32];
      std::snprintf(name, sizeof name, "profile-%05u.spfm", p + 1);
      m.files[p] = name;
      sparse += write_measurement(f, dest / name);
      dense += dense_equivalent_size(f);
      contexts += f.nodes.size();
      nonempty += f.plane.group_count();
      nonzeros += f.plane.values.size();

      std::vector<ContextId> leaf(f.nodes.size(), kRootContext);
      for (std::size_t n = 1; n < f.nodes.size(); ++n) {
        auto cur = leaf[f.nodes[n].parent.value()];
        auto b = f.nodes[n].binary;
        for (const auto& fr : expand_with(&structs[b], BinaryId(b), f.nodes[n].offset)) cur = unified.insert_child(cur, fr);
        leaf[n] = cur;
      }
    }
  });
  m.contexts_total = contexts;
  m.nonempty_contexts = nonempty;
  m.nonzeros = nonzeros;
  m.sparse_bytes = sparse;
  m.dense_bytes = dense;
  m.unified_contexts = unified.size();

  auto text = format_manifest(m);
  AtomicOutput out(dest / "manifest.txt");
  write_file(out.temp_path(), std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
  out.commit();
  return m;
}

std::uint64_t dense_size(const Manifest& m) { return m.dense_bytes; }

std::string format_manifest(const Manifest& m) {
  std::ostringstream os;
  const auto& s = m.spec;
  os << "profiles=" << s.profiles << '\n'
     << "metrics=" << s.metrics << '\n'
     << "depth=" << s.depth << '\n'
     << "branching=" << s.branching << '\n'
     << "shared_fraction=" << fmt_double(s.shared_fraction) << '\n'
     << "ctx_density=" << fmt_double(s.ctx_density) << '\n'
     << "metric_density=" << fmt_double(s.metric_density) << '\n'
     << "trace_len=" << s.trace_len << '\n'
     << "seed=" << s.seed << '\n'
     << "binaries=" << s.binaries << '\n'
     << "gpu_split=" << (s.gpu_split ? 1 : 0) << '\n'
     << "contexts_total=" << m.contexts_total << '\n'
     << "nonempty_contexts=" << m.nonempty_contexts << '\n'
     << "nonzeros=" << m.nonzeros << '\n'
     << "sparse_bytes=" << m.sparse_bytes << '\n'
     << "dense_bytes=" << m.dense_bytes << '\n'
     << "unified_contexts=" << m.unified_contexts << '\n'
     << "realized_ctx_density=" << fmt_double(m.ctx_density()) << '\n'
     << "realized_metric_density=" << fmt_double(m.metric_density()) << '\n'
     << "files=";
  for (std::size_t i = 0; i < m.files.size(); ++i) os << (i ? "," : "") << m.files[i];
  os << '\n';
  return os.str();
}

Manifest parse_manifest(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream is(text);
  std::string line;
  std::uint64_t at = 0;
  while (std::getline(is, line)) {
    auto eq = line.find('=');
    if (!line.empty() && eq == std::string::npos) throw FormatError("manifest line without '='", at);
    if (!line.empty()) kv[line.substr(0, eq)] = line.substr(eq + 1);
    at += line.size() + 1;
  }
  auto need = [&](const char* k) -> const std::string& {
    auto it = kv.find(k);
    if (it == kv.end()) throw FormatError(std::string("manifest missing ") + k, 0);
    return it->second;
  };
  auto u64 = [&](const char* k) { return std::stoull(need(k)); };
  Manifest m;
  try {
    auto& s = m.spec;
    s.profiles = static_cast<std::uint32_t>(u64("profiles"));
    s.metrics = static_cast<std::uint16_t>(u64("metrics"));
    s.depth = static_cast<std::uint32_t>(u64("depth"));
    s.branching = static_cast<std::uint32_t>(u64("branching"));
    s.shared_fraction = std::stod(need("shared_fraction"));
    s.ctx_density = std::stod(need("ctx_density"));
    s.metric_density = std::stod(need("metric_density"));
    s.trace_len = static_cast<std::uint32_t>(u64("trace_len"));
    s.seed = u64("seed");
    s.binaries = static_cast<std::uint32_t>(u64("binaries"));
    s.gpu_split = u64("gpu_split") != 0;
    m.contexts_total = u64("contexts_total");
    m.nonempty_contexts = u64("nonempty_contexts");
    m.nonzeros = u64("nonzeros");
    m.sparse_bytes = u64("sparse_bytes");
    m.dense_bytes = u64("dense_bytes");
    m.unified_contexts = u64("unified_contexts");
  } catch (const std::logic_error&) {
    throw FormatError("bad manifest value", 0);
  }
  std::istringstream fs(need("files"));
  for (std::string f; std::getline(fs, f, ',');)
    if (!f.empty()) m.files.push_back(f);
  return m;
}

Manifest read_manifest(const std::filesystem::path& dir) {
  auto bytes = read_file(dir / "manifest.txt");
  return parse_manifest(std::string(bytes.begin(), bytes.end()));
}

std::vector<std::filesystem::path> list_measurements(const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> out;
  std::error_code ec;
  for (const auto& e : std::filesystem::directory_iterator(dir, ec))
    if (e.is_regular_file() && e.path().extension() == ".spfm") out.push_back(e.path());
  if (ec) throw IoError("cannot list " + dir.string() + ": " + ec.message());
  std::sort(out.begin(), out.end());
  return out;
}

DensityReport scan_measurements(const std::vector<std::filesystem::path>& files) {
  DensityReport r;
  for (const auto& p : files) {
    auto f = read_measurement(p);
    ++r.files;
    r.contexts += f.nodes.size();
    r.nonempty_contexts += f.plane.group_count();
    r.nonzeros += f.plane.values.size();
    r.metric_slots += f.plane.group_count() * std::uint64_t{f.metric_count};
    r.sparse_bytes += encoded_size(f);
    r.dense_bytes += dense_equivalent_size(f);
  }
  return r;
}

}  // namespace sparseprof

#include "sparseprof/aggregator.hpp"

#include <algorithm>
#include <chrono>
#include <limits>
#include <numeric>
#include <unistd.h>

#include "sparseprof/byte_io.hpp"
#include "sparseprof/errors.hpp"
#include "sparseprof/parallel.hpp"
#include "sparseprof/result_formats.hpp"

namespace sparseprof {

void AnalysisConfig::validate() const {
  if (threads < 1) throw ConfigError("threads must be at least 1");
  if (partitions < 1) throw ConfigError("partitions must be at least 1");
  if (reduction_arity() < 2) throw ConfigError("reduction arity must be at least 2");
}

std::filesystem::path pms_path(const std::filesystem::path& outdir) { return outdir / "profile.pmsdb"; }
std::filesystem::path cms_path(const std::filesystem::path& outdir) { return outdir / "context.cmsdb"; }
std::filesystem::path trace_path(const std::filesystem::path& outdir) { return outdir / "trace.db"; }

void ResidencyGauge::acquire() {
  auto now = live_.fetch_add(1) + 1;
  auto high = high_.load();
  while (now > high && !high_.compare_exchange_weak(high, now)) {
  }
}

void ResidencyGauge::release() { live_.fetch_sub(1); }

Class1Plane::Class1Plane(ProfileId p, ResidencyGauge* gauge) : profile(p), gauge_(gauge) {
  if (gauge_) gauge_->acquire();
}

Class1Plane::~Class1Plane() {
  if (gauge_) gauge_->release();
}

Class1Plane::Class1Plane(Class1Plane&& o) noexcept
    : profile(o.profile),
      plane(std::move(o.plane)),
      trace(std::move(o.trace)),
      input_nonzeros(o.input_nonzeros),
      gauge_(o.gauge_) {
  o.gauge_ = nullptr;
}

namespace {

using MetricVec = std::vector<std::pair<std::uint16_t, double>>;

/// Global nodes reached while expanding one profile, in discovery order.
/// A node is always discovered after its parent.
struct Touched {
  std::unordered_map<std::uint32_t, std::uint32_t> slot_of;
  std::vector<ContextId> gid;
  std::vector<std::uint32_t> parent;

  std::uint32_t slot(ContextId g, std::uint32_t parent_slot) {
    auto [it, inserted] = slot_of.try_emplace(g.value(), static_cast<std::uint32_t>(gid.size()));
    if (inserted) {
      gid.push_back(g);
      parent.push_back(parent_slot);
    }
    return it->second;
  }
};

/// Expands every local node; returns the global leaf per local node and the
/// slot of each leaf when `touched` is given.
std::vector<ContextId> expand_nodes(const MeasurementFile& f, CctStore& store, StructureRegistry& reg,
                                    const std::filesystem::path& base, Touched* touched,
                                    std::vector<std::uint32_t>* leaf_slot) {
  std::vector<BinaryId> bins;
  bins.reserve(f.binaries.size());
  for (const auto& b : f.binaries) {
    bins.push_back(reg.intern(b, base));
    reg.ensure_loaded(bins.back());
  }
  std::vector<ContextId> leaf(f.nodes.size(), kRootContext);
  if (touched) {
    touched->slot(kRootContext, 0);
    leaf_slot->assign(f.nodes.size(), 0);
  }
  for (std::size_t n = 1; n < f.nodes.size(); ++n) {
    const auto& node = f.nodes[n];
    if (node.parent.value() >= n) throw InvariantError("dangling local parent id " + std::to_string(node.parent.value()));
    if (node.binary >= bins.size()) throw InvariantError("local node " + std::to_string(n) + " references unknown binary");
    ContextId cur = leaf[node.parent.value()];
    std::uint32_t cur_slot = touched ? (*leaf_slot)[node.parent.value()] : 0;
    for (const auto& fr : reg.expand(bins[node.binary], node.offset)) {
      cur = store.insert_child(cur, fr);
      if (touched) cur_slot = touched->slot(cur, cur_slot);
    }
    leaf[n] = cur;
    if (touched) (*leaf_slot)[n] = cur_slot;
  }
  return leaf;
}

void add_into(MetricVec& dst, std::span<const std::pair<std::uint16_t, double>> src) {
  if (src.empty()) return;
  MetricVec out;
  out.reserve(dst.size() + src.size());
  std::size_t i = 0, j = 0;
  while (i < dst.size() || j < src.size()) {
    if (j == src.size() || (i < dst.size() && dst[i].first < src[j].first)) {
      out.push_back(dst[i++]);
    } else if (i == dst.size() || src[j].first < dst[i].first) {
      out.push_back(src[j++]);
    } else {
      out.emplace_back(dst[i].first, dst[i].second + src[j].second);
      ++i;
      ++j;
    }
  }
  dst = std::move(out);
}

}  // namespace

void class2_for_profile(const MeasurementFile& file, CctStore& store, StructureRegistry& reg,
                        const std::filesystem::path& base) {
  expand_nodes(file, store, reg, base, nullptr, nullptr);
}

Class1Plane class1_for_profile(const MeasurementFile& file, ProfileId id, CctStore& store, StructureRegistry& reg,
                               const std::filesystem::path& base, ResidencyGauge* gauge) {
  Class1Plane out(id, gauge);
  Touched t;
  std::vector<std::uint32_t> leaf_slot;
  auto leaf = expand_nodes(file, store, reg, base, &t, &leaf_slot);

  std::vector<MetricVec> excl(t.gid.size());
  for (std::size_t g = 0; g < file.plane.group_count(); ++g) {
    auto local = file.plane.index[g].key;
    MetricVec run;
    for (const auto& e : file.plane.run(g)) {
      if (e.key >= file.metric_count) throw InvariantError("metric id out of range");
      run.emplace_back(e.key, e.value);
    }
    out.input_nonzeros += run.size();
    add_into(excl[leaf_slot[local]], run);
  }

  std::vector<MetricVec> incl(excl);
  for (std::size_t s = t.gid.size(); s-- > 1;) add_into(incl[t.parent[s]], incl[s]);

  std::vector<std::uint32_t> order(t.gid.size());
  std::iota(order.begin(), order.end(), 0u);
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return t.gid[a] < t.gid[b]; });
  PlaneBuilder<std::uint32_t, std::uint16_t> b;
  for (auto s : order) {
    b.begin(t.gid[s].value());
    const auto& ex = excl[s];
    const auto& in = incl[s];
    std::size_t i = 0;
    for (const auto& [m, v] : in) {
      while (i < ex.size() && ex[i].first < m) {
        b.add(scoped(MetricId(ex[i].first), Scope::exclusive).value(), ex[i].second);
        ++i;
      }
      if (i < ex.size() && ex[i].first == m) {
        b.add(scoped(MetricId(m), Scope::exclusive).value(), ex[i].second);
        ++i;
      }
      b.add(scoped(MetricId(m), Scope::inclusive).value(), v);
    }
    for (; i < ex.size(); ++i) b.add(scoped(MetricId(ex[i].first), Scope::exclusive).value(), ex[i].second);
  }
  out.plane = b.finish();

  if (file.trace) {
    out.trace.emplace();
    out.trace->reserve(file.trace->size());
    for (const auto& s : *file.trace) {
      if (s.ctx.value() >= leaf.size()) throw InvariantError("trace references unknown local context");
      out.trace->push_back({s.timestamp_ns, leaf[s.ctx.value()]});
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

void SummaryStats::add(double v) {
  if (count == 0) {
    min = max = v;
  } else {
    min = std::min(min, v);
    max = std::max(max, v);
  }
  sum += v;
  sumsq += v * v;
  count += 1;
}

void SummaryStats::merge(const SummaryStats& o) {
  if (o.count == 0) return;
  if (count == 0) {
    *this = o;
    return;
  }
  sum += o.sum;
  sumsq += o.sumsq;
  count += o.count;
  min = std::min(min, o.min);
  max = std::max(max, o.max);
}

double SummaryStats::get(Stat s) const {
  switch (s) {
    case Stat::sum: return sum;
    case Stat::min: return min;
    case Stat::max: return max;
    case Stat::count: return count;
    case Stat::sumsq: return sumsq;
  }
  return 0;
}

struct Class3Accumulator::Shard {
  mutable std::mutex mu;
  std::unordered_map<std::uint64_t, SummaryStats> cells;
};

namespace {

std::uint64_t cell_key(std::uint32_t c, std::uint16_t k) { return (std::uint64_t{c} << 16) | k; }

std::size_t shard_of(std::uint64_t key) { return ((key >> 16) * 0x9E3779B97F4A7C15ull) >> 58; }

}  // namespace

Class3Accumulator::Class3Accumulator() : shards_(std::make_unique<Shard[]>(kShards)) {}
Class3Accumulator::Class3Accumulator(Class3Accumulator&&) noexcept = default;
Class3Accumulator& Class3Accumulator::operator=(Class3Accumulator&&) noexcept = default;
Class3Accumulator::~Class3Accumulator() = default;

void Class3Accumulator::add(ContextId c, std::uint16_t key, double v) {
  auto k = cell_key(c.value(), key);
  auto& s = shards_[shard_of(k)];
  std::lock_guard lk(s.mu);
  s.cells[k].add(v);
}

void Class3Accumulator::accumulate(const SparsePlane& plane) {
  for (std::size_t g = 0; g < plane.group_count(); ++g) {
    auto c = plane.index[g].key;
    auto& s = shards_[shard_of(cell_key(c, 0))];
    std::lock_guard lk(s.mu);
    for (const auto& e : plane.run(g)) s.cells[cell_key(c, e.key)].add(e.value);
  }
}

void Class3Accumulator::merge(const Class3Accumulator& o) {
  for (std::size_t i = 0; i < kShards; ++i) {
    std::scoped_lock lk(shards_[i].mu, o.shards_[i].mu);
    for (const auto& [k, v] : o.shards_[i].cells) shards_[i].cells[k].merge(v);
  }
}

std::size_t Class3Accumulator::size() const {
  std::size_t n = 0;
  for (std::size_t i = 0; i < kShards; ++i) {
    std::lock_guard lk(shards_[i].mu);
    n += shards_[i].cells.size();
  }
  return n;
}

std::optional<SummaryStats> Class3Accumulator::get(ContextId c, std::uint16_t key) const {
  auto k = cell_key(c.value(), key);
  auto& s = shards_[shard_of(k)];
  std::lock_guard lk(s.mu);
  auto it = s.cells.find(k);
  if (it == s.cells.end()) return std::nullopt;
  return it->second;
}

std::vector<std::pair<std::uint64_t, SummaryStats>> Class3Accumulator::cells() const {
  std::vector<std::pair<std::uint64_t, SummaryStats>> out;
  for (std::size_t i = 0; i < kShards; ++i) {
    std::lock_guard lk(shards_[i].mu);
    out.insert(out.end(), shards_[i].cells.begin(), shards_[i].cells.end());
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  return out;
}

SparsePlane Class3Accumulator::summary_plane() const {
  PlaneBuilder<std::uint32_t, std::uint16_t> b;
  std::optional<std::uint32_t> open;
  for (const auto& [k, st] : cells()) {
    auto c = static_cast<std::uint32_t>(k >> 16);
    auto scope = MetricScopeId(static_cast<std::uint16_t>(k & 0xFFFF));
    if (open != c) {
      b.begin(c);
      open = c;
    }
    for (std::size_t s = 0; s < kStatCount; ++s) {
      auto stat = static_cast<Stat>(s);
      b.add(stat_metric(scope, stat).value(), st.get(stat));
    }
  }
  return b.finish();
}

// ---------------------------------------------------------------------------

std::size_t reduction_rounds(std::size_t n, unsigned arity) {
  std::size_t rounds = 0;
  while (n > 1) {
    n = (n + arity - 1) / arity;
    ++rounds;
  }
  return rounds;
}

Class2Reduction reduce_class2(std::vector<CctStore> stores, unsigned arity, unsigned threads) {
  if (arity < 2) throw InvariantError("reduction arity must be at least 2");
  if (stores.empty()) throw InvariantError("nothing to reduce");
  Class2Reduction out;
  const std::size_t R = stores.size();
  out.mappings.resize(R);
  for (std::size_t r = 0; r < R; ++r) {
    out.mappings[r].resize(stores[r].size());
    for (std::uint32_t i = 0; i < out.mappings[r].size(); ++i) out.mappings[r][i] = ContextId(i);
  }
  std::vector<std::vector<std::size_t>> members(R);
  for (std::size_t r = 0; r < R; ++r) members[r] = {r};

  while (stores.size() > 1) {
    std::size_t groups = (stores.size() + arity - 1) / arity;
    unsigned workers = static_cast<unsigned>(std::min<std::size_t>(threads, groups));
    run_workers(workers, [&](unsigned w) {
      for (std::size_t g = w; g < groups; g += workers) {
        std::size_t lead = g * arity;
        for (std::size_t j = lead + 1; j < std::min(lead + arity, stores.size()); ++j) {
          auto m = merge_into(stores[lead], stores[j]);
          for (auto r : members[j])
            for (auto& id : out.mappings[r]) id = m[id.value()];
        }
      }
    });
    std::vector<CctStore> next;
    std::vector<std::vector<std::size_t>> next_members;
    for (std::size_t g = 0; g < groups; ++g) {
      std::size_t lead = g * arity;
      next.push_back(std::move(stores[lead]));
      std::vector<std::size_t> mem;
      for (std::size_t j = lead; j < std::min(lead + arity, stores.size()); ++j)
        mem.insert(mem.end(), members[j].begin(), members[j].end());
      next_members.push_back(std::move(mem));
    }
    stores = std::move(next);
    members = std::move(next_members);
    ++out.rounds;
  }
  out.unified = std::move(stores.front());
  return out;
}

Class3Reduction reduce_class3(std::vector<Class3Accumulator> accs, unsigned arity, unsigned threads) {
  if (arity < 2) throw InvariantError("reduction arity must be at least 2");
  if (accs.empty()) throw InvariantError("nothing to reduce");
  Class3Reduction out;
  while (accs.size() > 1) {
    std::size_t groups = (accs.size() + arity - 1) / arity;
    unsigned workers = static_cast<unsigned>(std::min<std::size_t>(threads, groups));
    run_workers(workers, [&](unsigned w) {
      for (std::size_t g = w; g < groups; g += workers) {
        std::size_t lead = g * arity;
        for (std::size_t j = lead + 1; j < std::min(lead + arity, accs.size()); ++j) accs[lead].merge(accs[j]);
      }
    });
    std::vector<Class3Accumulator> next;
    for (std::size_t g = 0; g < groups; ++g) next.push_back(std::move(accs[g * arity]));
    accs = std::move(next);
    ++out.rounds;
  }
  out.result = std::move(accs.front());
  return out;
}

// ---------------------------------------------------------------------------

namespace {

std::filesystem::path scratch_path(const std::filesystem::path& outdir, const char* name) {
  return outdir / ("." + std::string(name) + "-" + std::to_string(::getpid()));
}

struct Collected {
  std::mutex mu;
  std::vector<std::string> errors;

  void add(const std::filesystem::path& p, const std::exception& e) {
    std::lock_guard lk(mu);
    errors.push_back(p.string() + ": " + e.what());
  }
  void raise() {
    if (errors.empty()) return;
    std::sort(errors.begin(), errors.end());
    std::string msg = std::to_string(errors.size()) + " invalid input file(s)";
    for (const auto& e : errors) msg += "\n  " + e;
    throw InputError(msg);
  }
};

/// Profile indices of one partition, largest file first.
std::vector<std::size_t> schedule(std::span<const std::uintmax_t> sizes, std::size_t lo, std::size_t hi) {
  std::vector<std::size_t> order(hi - lo);
  std::iota(order.begin(), order.end(), lo);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return sizes[a] > sizes[b]; });
  return order;
}

template <class Fn>
void drain(unsigned threads, std::span<const std::size_t> order, std::span<const std::filesystem::path> inputs,
           Collected& errs, Fn&& fn) {
  std::atomic<std::size_t> next{0};
  run_workers(threads, [&](unsigned) {
    for (auto i = next.fetch_add(1); i < order.size(); i = next.fetch_add(1)) {
      const auto& path = inputs[order[i]];
      try {
        fn(order[i], read_measurement(path));
      } catch (const Error& e) {
        errs.add(path, e);
      }
    }
  });
}

}  // namespace

AnalysisReport analyze(std::vector<std::filesystem::path> inputs, const AnalysisConfig& cfg) {
  auto t0 = std::chrono::steady_clock::now();
  cfg.validate();
  if (inputs.empty()) throw InputError("no input profiles");
  std::sort(inputs.begin(), inputs.end());
  if (std::adjacent_find(inputs.begin(), inputs.end()) != inputs.end()) throw InputError("duplicate input path");
  if (inputs.size() >= std::numeric_limits<std::uint32_t>::max()) throw InputError("too many input profiles");
  const auto P = static_cast<std::uint32_t>(inputs.size());

  Collected errs;
  std::vector<std::uintmax_t> sizes(P, 0);
  for (std::uint32_t i = 0; i < P; ++i) {
    std::error_code ec;
    sizes[i] = std::filesystem::file_size(inputs[i], ec);
    if (ec) errs.add(inputs[i], std::runtime_error("unreadable: " + ec.message()));
  }
  errs.raise();

  std::error_code ec;
  std::filesystem::create_directories(cfg.outdir, ec);
  if (ec) throw IoError("cannot create " + cfg.outdir.string() + ": " + ec.message());

  AtomicOutput pms_out(pms_path(cfg.outdir));
  std::optional<AtomicOutput> cms_out, trace_out, raw_pms, raw_trace;
  if (cfg.cms) cms_out.emplace(cms_path(cfg.outdir));
  if (cfg.traces) trace_out.emplace(trace_path(cfg.outdir));
  if (cfg.canonical) {
    raw_pms.emplace(scratch_path(cfg.outdir, "profile.pmsdb.raw"));
    if (cfg.traces) raw_trace.emplace(scratch_path(cfg.outdir, "trace.db.raw"));
  }
  const auto& pms_dest = raw_pms ? raw_pms->temp_path() : pms_out.temp_path();

  AnalysisReport rep;
  rep.profiles = P;
  StructureRegistry reg(cfg.struct_dir);
  ResidencyGauge gauge;
  PmsWriter writer(pms_dest, {P, 0});
  std::optional<TraceWriter> tw;
  if (cfg.traces) tw.emplace(raw_trace ? raw_trace->temp_path() : trace_out->temp_path(), P);
  std::atomic<std::uint16_t> metric_count{0};
  std::atomic<std::uint64_t> nonzeros{0}, excl_nonzeros{0}, input_nonzeros{0};

  auto emit = [&](std::size_t index, const MeasurementFile& file, Class1Plane& c1, Class3Accumulator& acc) {
    auto mc = metric_count.load();
    while (file.metric_count > mc && !metric_count.compare_exchange_weak(mc, file.metric_count)) {
    }
    acc.accumulate(c1.plane);
    std::uint64_t ex = 0;
    for (const auto& e : c1.plane.values) ex += scope_of(MetricScopeId(e.key)).scope == Scope::exclusive;
    nonzeros += c1.plane.values.size();
    excl_nonzeros += ex;
    input_nonzeros += c1.input_nonzeros;
    writer.write_plane(ProfileId(static_cast<std::uint32_t>(index + 1)), c1.plane);
    if (tw) {
      static const std::vector<TraceSample> none;
      tw->write(ProfileId(static_cast<std::uint32_t>(index + 1)), c1.trace ? *c1.trace : none);
    }
  };

  CctStore unified;
  Class3Accumulator summary;
  const unsigned R = static_cast<unsigned>(std::min<std::size_t>(cfg.partitions, P));
  auto part_lo = [&](unsigned r) { return std::size_t{P} * r / R; };

  if (R == 1) {
    auto order = schedule(sizes, 0, P);
    drain(cfg.threads, order, inputs, errs, [&](std::size_t i, MeasurementFile file) {
      auto c1 = class1_for_profile(file, ProfileId(static_cast<std::uint32_t>(i + 1)), unified, reg,
                                   inputs[i].parent_path(), &gauge);
      emit(i, file, c1, summary);
    });
    errs.raise();
  } else {
    // Phase 1: each simulated rank builds the CCT of its own profiles.
    std::vector<CctStore> local(R);
    for (unsigned r = 0; r < R; ++r) {
      auto order = schedule(sizes, part_lo(r), part_lo(r + 1));
      drain(cfg.threads, order, inputs, errs,
            [&](std::size_t i, MeasurementFile file) { class2_for_profile(file, local[r], reg, inputs[i].parent_path()); });
    }
    errs.raise();

    // Phase 2: t-ary class 2 reduction; each rank keeps its own tree plus the
    // mapping into the unified one.
    std::vector<CctStore> copies;
    for (auto& s : local) copies.push_back(s.clone());
    auto red2 = reduce_class2(std::move(copies), cfg.reduction_arity(), cfg.threads);
    rep.class2_rounds = red2.rounds;
    unified = std::move(red2.unified);

    // Phase 3: class 1 per rank in local ids, rewritten to unified ids.
    std::vector<Class3Accumulator> accs(R);
    for (unsigned r = 0; r < R; ++r) {
      auto order = schedule(sizes, part_lo(r), part_lo(r + 1));
      const auto& map = red2.mappings[r];
      drain(cfg.threads, order, inputs, errs, [&](std::size_t i, MeasurementFile file) {
        auto c1 = class1_for_profile(file, ProfileId(static_cast<std::uint32_t>(i + 1)), local[r], reg,
                                     inputs[i].parent_path(), &gauge);
        if (c1.plane.group_count() && c1.plane.index[c1.plane.group_count() - 1].key >= map.size())
          throw InvariantError("context created after the class 2 reduction");
        c1.plane = remap_plane(c1.plane, map);
        if (c1.trace)
          for (auto& s : *c1.trace) s.ctx = map[s.ctx.value()];
        emit(i, file, c1, accs[r]);
      });
    }
    errs.raise();

    // Phase 4: t-ary class 3 reduction.
    auto red3 = reduce_class3(std::move(accs), cfg.reduction_arity(), cfg.threads);
    rep.class3_rounds = red3.rounds;
    summary = std::move(red3.result);
  }

  auto summary_plane = summary.summary_plane();
  rep.summary_nonzeros = summary_plane.values.size();
  writer.write_plane(kSummaryProfile, summary_plane);
  writer.set_metric_count(metric_count.load());
  auto tree = unified.snapshot();
  auto binaries = reg.binary_paths();
  writer.finish(tree, binaries);
  if (tw) tw->finish();
  rep.contexts = static_cast<std::uint32_t>(tree.size());
  rep.binaries = static_cast<std::uint32_t>(binaries.size());
  rep.nonzeros = nonzeros.load();
  rep.exclusive_nonzeros = excl_nonzeros.load();
  rep.input_nonzeros = input_nonzeros.load();
  rep.peak_resident = gauge.high_water();

  if (cfg.canonical) {
    auto raw = ProfileDb::open(raw_pms->temp_path());
    auto mapping = canonicalize_pms(raw, pms_out.temp_path());
    if (cfg.traces) canonicalize_traces(raw_trace->temp_path(), trace_out->temp_path(), mapping);
  }
  rep.pms_bytes = std::filesystem::file_size(pms_out.temp_path());
  if (cfg.cms) {
    auto db = ProfileDb::open(pms_out.temp_path());
    transpose_to_cms(db, cms_out->temp_path(), cfg.threads);
    rep.cms_bytes = std::filesystem::file_size(cms_out->temp_path());
  }
  if (cfg.traces) rep.trace_bytes = std::filesystem::file_size(trace_out->temp_path());

  pms_out.commit();
  if (cms_out) cms_out->commit();
  if (trace_out) trace_out->commit();
  rep.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rep;
}

}  // namespace sparseprof

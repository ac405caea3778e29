#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "sparseprof/aggregator.hpp"
#include "sparseprof/bench.hpp"
#include "sparseprof/errors.hpp"
#include "sparseprof/meas_format.hpp"
#include "sparseprof/result_formats.hpp"
#include "sparseprof/synth_gen.hpp"

namespace fs = std::filesystem;
using namespace sparseprof;
using nlohmann::ordered_json;

namespace {

enum Exit { ok = 0, usage = 1, invalid = 2, io = 3, internal = 4 };

struct Output {
  bool json = false;
  bool quiet = false;

  /// A report: key=value lines, or one JSON object.
  void report(const ordered_json& obj) const {
    if (quiet) return;
    if (json) {
      std::cout << obj.dump() << '\n';
      return;
    }
    for (const auto& [k, v] : obj.items()) std::cout << k << '=' << (v.is_string() ? v.get<std::string>() : v.dump()) << '\n';
  }

  /// A table: TSV with a header, or one JSON object per row.
  void table(const std::vector<std::string>& cols, const std::vector<std::vector<ordered_json>>& rows) const {
    if (!json) {
      for (std::size_t i = 0; i < cols.size(); ++i) std::cout << (i ? "\t" : "") << cols[i];
      std::cout << '\n';
    }
    for (const auto& r : rows) {
      if (json) {
        ordered_json o;
        for (std::size_t i = 0; i < cols.size(); ++i) o[cols[i]] = r[i];
        std::cout << o.dump() << '\n';
      } else {
        for (std::size_t i = 0; i < r.size(); ++i)
          std::cout << (i ? "\t" : "") << (r[i].is_string() ? r[i].get<std::string>() : r[i].dump());
        std::cout << '\n';
      }
    }
  }
};

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

/// Values print with full precision so TSV round-trips bit-exactly.
ordered_json num(double v) { return ordered_json::parse(fmt(v)); }

std::vector<fs::path> expand_inputs(const std::vector<std::string>& args) {
  std::vector<fs::path> out;
  for (const auto& a : args) {
    if (fs::is_directory(a)) {
      auto files = list_measurements(a);
      out.insert(out.end(), files.begin(), files.end());
    } else {
      out.emplace_back(a);
    }
  }
  return out;
}

std::vector<unsigned> parse_list(const std::string& s) {
  std::vector<unsigned> out;
  std::istringstream is(s);
  for (std::string part; std::getline(is, part, ',');) {
    std::size_t used = 0;
    unsigned long v = 0;
    try {
      v = std::stoul(part, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != part.size() || part.empty() || v == 0) throw ConfigError("bad thread list '" + s + "'");
    out.push_back(static_cast<unsigned>(v));
  }
  if (out.empty()) throw ConfigError("empty thread list");
  return out;
}

std::string scope_label(std::uint16_t key) {
  auto s = scope_of(MetricScopeId(key));
  return std::to_string(s.metric.value()) + (s.scope == Scope::exclusive ? ":E" : ":I");
}

std::string stat_label(std::uint16_t key) {
  static const char* names[] = {"sum", "min", "max", "count", "sumsq"};
  auto s = stat_of(StatMetricId(key));
  return scope_label(s.scope.value()) + ":" + names[static_cast<int>(s.stat)];
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sparse performance-profile toolkit"};
  app.require_subcommand(0, 1);
  Output out;
  app.add_flag("--json", out.json, "Emit reports as JSON objects, one per line");
  app.add_flag("-q,--quiet", out.quiet, "Suppress reports");
  app.set_version_flag("--version", "SPFM " + std::to_string(kMeasVersion) + ", SPDB " + std::to_string(kPmsVersion) +
                                        ", SCDB " + std::to_string(kCmsVersion));

  // gen
  WorkloadSpec spec;
  std::string gen_out;
  unsigned gen_threads = 1;
  auto* gen = app.add_subcommand("gen", "Generate a synthetic workload");
  gen->add_option("--profiles", spec.profiles)->check(CLI::PositiveNumber);
  gen->add_option("--metrics", spec.metrics)->check(CLI::Range(1, int(kMaxMetrics)));
  gen->add_option("--depth", spec.depth)->check(CLI::PositiveNumber);
  gen->add_option("--branch", spec.branching)->check(CLI::PositiveNumber);
  gen->add_option("--shared", spec.shared_fraction)->check(CLI::Range(0.0, 1.0));
  gen->add_option("--ctx-density", spec.ctx_density);
  gen->add_option("--metric-density", spec.metric_density);
  gen->add_option("--seed", spec.seed);
  gen->add_option("--binaries", spec.binaries)->check(CLI::PositiveNumber);
  gen->add_option("--traces", spec.trace_len, "Trace samples per profile");
  gen->add_flag("--gpu-split", spec.gpu_split);
  gen->add_option("-j,--threads", gen_threads)->check(CLI::PositiveNumber);
  gen->add_option("-o,--output", gen_out)->required();

  // analyze
  AnalysisConfig cfg;
  unsigned arity = 0;
  std::string struct_dir, an_out;
  bool no_canonical = false;
  std::vector<std::string> an_inputs;
  auto* an = app.add_subcommand("analyze", "Aggregate measurement files into result databases");
  an->add_option("-j,--threads", cfg.threads)->check(CLI::PositiveNumber);
  an->add_option("--partitions", cfg.partitions)->check(CLI::PositiveNumber);
  an->add_option("--arity", arity)->check(CLI::Range(2u, 1u << 20));
  an->add_option("-o,--output", an_out)->required();
  an->add_flag("--cms", cfg.cms, "Also write the context-major database");
  an->add_flag("--traces", cfg.traces, "Also write the trace database");
  an->add_option("--struct-dir", struct_dir);
  an->add_flag("--no-canonical", no_canonical, "Keep run-dependent ids");
  an->add_option("inputs", an_inputs, "Measurement files or directories")->required();

  // transpose
  std::string tr_in, tr_out;
  unsigned tr_threads = 1;
  auto* tr = app.add_subcommand("transpose", "Build a context-major database from a profile-major one");
  tr->add_option("pms", tr_in)->required();
  tr->add_option("-o,--output", tr_out)->required();
  tr->add_option("-j,--threads", tr_threads)->check(CLI::PositiveNumber);

  // query
  auto* q = app.add_subcommand("query", "Read values from a database");
  q->require_subcommand(1);
  std::string q_db;
  std::optional<std::uint32_t> q_profile, q_context;
  std::optional<std::uint16_t> q_metric;
  auto* qp = q->add_subcommand("pms", "Profile-major query");
  qp->add_option("db", q_db)->required();
  qp->add_option("--profile", q_profile)->required();
  qp->add_option("--context", q_context);
  qp->add_option("--metric", q_metric, "Metric key (scope id; stat id for profile 0)");
  auto* qc = q->add_subcommand("cms", "Context-major query");
  qc->add_option("db", q_db)->required();
  qc->add_option("--context", q_context)->required();
  qc->add_option("--metric", q_metric);
  qc->add_option("--profile", q_profile);

  // stats
  std::vector<std::string> st_inputs;
  auto* st = app.add_subcommand("stats", "Density and size statistics");
  st->add_option("inputs", st_inputs, "Measurement files, directories or a .pmsdb")->required();

  // bench
  auto* bn = app.add_subcommand("bench", "Benchmarks");
  bn->require_subcommand(1);
  unsigned bm_threads = 8, bm_reps = 5, bm_trees = 32;
  std::size_t bm_nodes = 10000;
  std::uint64_t bm_seed = 1;
  auto* bm = bn->add_subcommand("merge", "Compare CCT unification strategies");
  bm->add_option("--threads", bm_threads)->check(CLI::PositiveNumber);
  bm->add_option("--reps", bm_reps)->check(CLI::Range(5u, 1u << 20));
  bm->add_option("--nodes", bm_nodes)->check(CLI::Range(std::size_t{2}, std::size_t{1} << 24));
  bm->add_option("--trees", bm_trees)->check(CLI::PositiveNumber);
  bm->add_option("--seed", bm_seed);
  std::string bs_dir, bs_threads = "1,2,4,8";
  auto* bs = bn->add_subcommand("scaling", "Analysis wall time per thread count");
  bs->add_option("dir", bs_dir)->required();
  bs->add_option("--threads", bs_threads);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? Exit::ok : Exit::usage;
  }

  try {
    if (*gen) {
      auto m = generate(spec, gen_out, gen_threads);
      out.report({{"profiles", m.spec.profiles},
                  {"contexts_total", m.contexts_total},
                  {"nonempty_contexts", m.nonempty_contexts},
                  {"nonzeros", m.nonzeros},
                  {"unified_contexts", m.unified_contexts},
                  {"ctx_density", num(m.ctx_density())},
                  {"metric_density", num(m.metric_density())},
                  {"sparse_bytes", m.sparse_bytes},
                  {"dense_bytes", dense_size(m)}});
    } else if (*an) {
      if (arity) cfg.arity = arity;
      if (!struct_dir.empty()) cfg.struct_dir = struct_dir;
      cfg.canonical = !no_canonical;
      cfg.outdir = an_out;
      auto rep = analyze(expand_inputs(an_inputs), cfg);
      out.report({{"profiles", rep.profiles},
                  {"contexts", rep.contexts},
                  {"binaries", rep.binaries},
                  {"nonzeros", rep.nonzeros},
                  {"exclusive_nonzeros", rep.exclusive_nonzeros},
                  {"summary_nonzeros", rep.summary_nonzeros},
                  {"input_nonzeros", rep.input_nonzeros},
                  {"bytes", rep.bytes()},
                  {"pms_bytes", rep.pms_bytes},
                  {"cms_bytes", rep.cms_bytes},
                  {"trace_bytes", rep.trace_bytes},
                  {"class2_rounds", rep.class2_rounds},
                  {"class3_rounds", rep.class3_rounds},
                  {"peak_resident", rep.peak_resident},
                  {"wall_seconds", num(rep.wall_seconds)}});
    } else if (*tr) {
      auto db = ProfileDb::open(tr_in);
      AtomicOutput dest{fs::path(tr_out)};
      auto s = transpose_to_cms(db, dest.temp_path(), tr_threads);
      dest.commit();
      out.report({{"contexts", s.contexts}, {"entries", s.entries}, {"max_heap", s.max_heap}, {"bytes", s.bytes}});
    } else if (*qp) {
      auto db = ProfileDb::open(q_db);
      auto p = ProfileId(*q_profile);
      auto label = p == kSummaryProfile ? stat_label : scope_label;
      std::vector<std::vector<ordered_json>> rows;
      if (q_context && q_metric) {
        auto v = db.value(p, ContextId(*q_context), *q_metric);
        rows.push_back({*q_profile, *q_context, label(*q_metric), num(v.value_or(0.0))});
      } else {
        auto plane = db.plane(p);
        for (std::size_t g = 0; g < plane.group_count(); ++g) {
          auto c = plane.index[g].key;
          if (q_context && c != *q_context) continue;
          for (const auto& e : plane.run(g))
            if (!q_metric || e.key == *q_metric) rows.push_back({*q_profile, c, label(e.key), num(e.value)});
        }
      }
      out.table({"profile", "context", "metric", "value"}, rows);
    } else if (*qc) {
      auto db = ContextDb::open(q_db);
      auto c = ContextId(*q_context);
      std::vector<std::vector<ordered_json>> rows;
      if (q_metric && q_profile) {
        auto v = db.value(c, *q_metric, ProfileId(*q_profile));
        rows.push_back({*q_context, scope_label(*q_metric), *q_profile, num(v.value_or(0.0))});
      } else {
        std::optional<ContextPlane> plane;
        try {
          plane = db.plane(c);
        } catch (const NotFoundError&) {
        }
        if (plane)
          for (std::size_t g = 0; g < plane->group_count(); ++g) {
            auto k = plane->index[g].key;
            if (q_metric && k != *q_metric) continue;
            for (const auto& e : plane->run(g))
              if (!q_profile || e.key == *q_profile) rows.push_back({*q_context, scope_label(k), e.key, num(e.value)});
          }
      }
      out.table({"context", "metric", "profile", "value"}, rows);
    } else if (*st) {
      if (st_inputs.size() == 1 && fs::path(st_inputs[0]).extension() == ".pmsdb") {
        auto db = ProfileDb::open(st_inputs[0]);
        auto d = pms_density(db);
        out.report({{"profiles", d.profiles},
                    {"contexts", d.contexts},
                    {"nonempty", d.nonempty},
                    {"nonzeros", d.nonzeros},
                    {"ctx_density", num(d.ctx_density)},
                    {"metric_density", num(d.metric_density)},
                    {"bytes", db.file_size()}});
      } else {
        auto r = scan_measurements(expand_inputs(st_inputs));
        out.report({{"files", r.files},
                    {"contexts", r.contexts},
                    {"nonempty_contexts", r.nonempty_contexts},
                    {"nonzeros", r.nonzeros},
                    {"ctx_density", num(r.ctx_density())},
                    {"metric_density", num(r.metric_density())},
                    {"sparse_bytes", r.sparse_bytes},
                    {"dense_bytes", r.dense_bytes}});
      }
    } else if (*bm) {
      auto trees = make_bench_trees(bm_trees, bm_nodes, bm_seed);
      auto res = run_merge_bench(trees, bm_threads, bm_reps);
      std::vector<std::vector<ordered_json>> rows;
      for (const auto& r : res)
        rows.push_back({to_string(r.strategy), num(r.phase1_ms), num(r.phase2_ms), num(r.total_ms), r.unified_nodes});
      out.table({"strategy", "phase1_ms", "phase2_ms", "total_ms", "unified_nodes"}, rows);
    } else if (*bs) {
      auto rows_in = run_scaling_bench(bs_dir, parse_list(bs_threads));
      std::vector<std::vector<ordered_json>> rows;
      for (const auto& r : rows_in) rows.push_back({r.threads, num(r.seconds), r.contexts, r.nonzeros});
      out.table({"threads", "seconds", "contexts", "nonzeros"}, rows);
    } else {
      std::cout << app.help();
      return Exit::usage;
    }
  } catch (const ConfigError& e) {
    std::cerr << "sparseprof: " << e.what() << '\n';
    return Exit::usage;
  } catch (const FormatError& e) {
    std::cerr << "sparseprof: invalid input: " << e.what() << '\n';
    return Exit::invalid;
  } catch (const InputError& e) {
    std::cerr << "sparseprof: " << e.what() << '\n';
    return Exit::invalid;
  } catch (const NotFoundError& e) {
    std::cerr << "sparseprof: " << e.what() << '\n';
    return Exit::invalid;
  } catch (const IoError& e) {
    std::cerr << "sparseprof: " << e.what() << '\n';
    return Exit::io;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "sparseprof: " << e.what() << '\n';
    return Exit::io;
  } catch (const std::exception& e) {
    std::cerr << "sparseprof: internal error: " << e.what() << '\n';
    return Exit::internal;
  }
  return Exit::ok;
}

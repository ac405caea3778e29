#include "sparseprof/bench.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <chrono>
#include <memory>
#include <random>
#include <unistd.h>

#include <tbb/concurrent_hash_map.h>

#include "sparseprof/aggregator.hpp"
#include "sparseprof/errors.hpp"
#include "sparseprof/parallel.hpp"
#include "sparseprof/synth_gen.hpp"

namespace sparseprof {

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t) { return std::chrono::duration<double, std::milli>(Clock::now() - t).count(); }

void insert_tree(CctStore& store, const std::vector<NodeRecord>& tree) {
  std::vector<ContextId> map(tree.size(), kRootContext);
  for (std::size_t i = 1; i < tree.size(); ++i) map[i] = store.insert_child(map[tree[i].parent.value()], tree[i].frame);
}

/// Thread-local trees built from round-robin shares of the input.
std::vector<CctStore> build_local(const std::vector<std::vector<NodeRecord>>& trees, unsigned threads) {
  std::vector<CctStore> local(threads);
  run_workers(threads, [&](unsigned w) {
    for (std::size_t t = w; t < trees.size(); t += threads) insert_tree(local[w], trees[t]);
  });
  return local;
}

struct FrameHashCompare {
  static std::size_t hash(const Frame& f) { return FrameHash{}(f); }
  static bool equal(const Frame& a, const Frame& b) { return a == b; }
};

/// Tree whose child tables are general-purpose concurrent hash maps.
class LockFreeMapTree {
 public:
  struct Node {
    std::uint32_t id;
    std::uint32_t parent;
    Frame frame;
    tbb::concurrent_hash_map<Frame, Node*, FrameHashCompare> children;
  };

  explicit LockFreeMapTree(unsigned threads) : owned_(threads) {
    root_ = std::make_unique<Node>();
    root_->id = 0;
    root_->parent = 0;
    root_->frame = Frame::root();
  }

  void insert(const std::vector<NodeRecord>& tree, unsigned worker) {
    std::vector<Node*> map(tree.size(), root_.get());
    for (std::size_t i = 1; i < tree.size(); ++i) map[i] = child(map[tree[i].parent.value()], tree[i].frame, worker);
  }

  std::vector<NodeRecord> records() const {
    std::vector<NodeRecord> out(next_.load());
    out[0] = {ContextId(0), ContextId(0), root_->frame};
    for (const auto& nodes : owned_)
      for (const auto& n : nodes) out[n->id] = {ContextId(n->id), ContextId(n->parent), n->frame};
    return out;
  }

 private:
  Node* child(Node* parent, const Frame& f, unsigned worker) {
    using Map = decltype(parent->children);
    {
      typename Map::const_accessor ca;
      if (parent->children.find(ca, f)) return ca->second;
    }
    typename Map::accessor a;
    if (parent->children.insert(a, f)) {
      auto n = std::make_unique<Node>();
      n->id = next_.fetch_add(1);
      n->parent = parent->id;
      n->frame = f;
      a->second = n.get();
      owned_[worker].push_back(std::move(n));
    }
    return a->second;
  }

  std::unique_ptr<Node> root_;
  std::atomic<std::uint32_t> next_{1};
  std::vector<std::vector<std::unique_ptr<Node>>> owned_;
};

std::vector<NodeRecord> canonical_of(const std::vector<NodeRecord>& records) {
  return relabel_records(records, canonical_order(records));
}

}  // namespace

std::string to_string(MergeStrategy s) {
  switch (s) {
    case MergeStrategy::two_phase_flat: return "two_phase_flat";
    case MergeStrategy::two_phase_tree: return "two_phase_tree";
    case MergeStrategy::shared_rwlock: return "shared_rwlock";
    case MergeStrategy::shared_lockfree_map: return "shared_lockfree_map";
  }
  return "?";
}

std::vector<std::vector<NodeRecord>> make_bench_trees(std::size_t count, std::size_t nodes, std::uint64_t seed) {
  std::vector<std::vector<NodeRecord>> trees;
  for (std::size_t t = 0; t < count; ++t) {
    std::mt19937_64 rng(seed ^ ((t + 1) * 0x9E3779B97F4A7C15ull));
    std::vector<NodeRecord> tree{{ContextId(0), ContextId(0), Frame::root()}};
    std::vector<std::array<std::int32_t, 16>> kids(1);
    kids[0].fill(-1);
    while (tree.size() < nodes) {
      std::uint32_t cur = 0;
      while (true) {
        // min of two draws skews toward low labels, so trees share prefixes
        auto label = static_cast<std::uint32_t>(std::min(rng() % 16, rng() % 16));
        if (kids[cur][label] >= 0) {
          cur = static_cast<std::uint32_t>(kids[cur][label]);
          continue;
        }
        auto id = static_cast<std::uint32_t>(tree.size());
        kids[cur][label] = static_cast<std::int32_t>(id);
        kids.emplace_back().fill(-1);
        tree.push_back({ContextId(id), ContextId(cur), Frame::instruction(BinaryId(label % 4), 0x400 + 4 * label)});
        break;
      }
    }
    trees.push_back(std::move(tree));
  }
  return trees;
}

std::vector<NodeRecord> serial_unify(const std::vector<std::vector<NodeRecord>>& trees) {
  CctStore s;
  for (const auto& t : trees) insert_tree(s, t);
  return canonical_records(s);
}

MergeRun run_merge(MergeStrategy s, const std::vector<std::vector<NodeRecord>>& trees, unsigned threads) {
  MergeRun r;
  auto t0 = Clock::now();
  switch (s) {
    case MergeStrategy::two_phase_flat:
    case MergeStrategy::two_phase_tree: {
      auto local = build_local(trees, threads);
      r.phase1_ms = ms_since(t0);
      auto t1 = Clock::now();
      CctStore unified;
      if (s == MergeStrategy::two_phase_flat) {
        unified = std::move(local.front());
        for (std::size_t i = 1; i < local.size(); ++i) merge_into(unified, local[i]);
      } else {
        unified = reduce_class2(std::move(local), 2, threads).unified;
      }
      r.phase2_ms = ms_since(t1);
      r.total_ms = ms_since(t0);
      r.canonical = canonical_records(unified);
      break;
    }
    case MergeStrategy::shared_rwlock: {
      CctStore shared;
      run_workers(threads, [&](unsigned w) {
        for (std::size_t t = w; t < trees.size(); t += threads) insert_tree(shared, trees[t]);
      });
      r.phase1_ms = r.total_ms = ms_since(t0);
      r.canonical = canonical_records(shared);
      break;
    }
    case MergeStrategy::shared_lockfree_map: {
      LockFreeMapTree shared(threads);
      run_workers(threads, [&](unsigned w) {
        for (std::size_t t = w; t < trees.size(); t += threads) shared.insert(trees[t], w);
      });
      r.phase1_ms = r.total_ms = ms_since(t0);
      r.canonical = canonical_of(shared.records());
      break;
    }
  }
  return r;
}

double median(std::vector<double> v) {
  if (v.empty()) return 0;
  std::sort(v.begin(), v.end());
  auto n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::vector<MergeTiming> run_merge_bench(const std::vector<std::vector<NodeRecord>>& trees, unsigned threads,
                                         unsigned reps) {
  if (reps < 5) throw InvariantError("merge benchmark needs at least 5 repetitions");
  threads = std::max(threads, 1u);
  auto oracle = serial_unify(trees);
  std::vector<MergeTiming> out;
  std::vector<std::array<std::vector<double>, 3>> samples(std::size(kAllStrategies));
  for (unsigned rep = 0; rep < reps; ++rep) {
    for (std::size_t i = 0; i < std::size(kAllStrategies); ++i) {
      auto r = run_merge(kAllStrategies[i], trees, threads);
      if (r.canonical != oracle)
        throw InvariantError("strategy " + to_string(kAllStrategies[i]) + " disagrees with the serial tree");
      samples[i][0].push_back(r.phase1_ms);
      samples[i][1].push_back(r.phase2_ms);
      samples[i][2].push_back(r.total_ms);
    }
  }
  for (std::size_t i = 0; i < std::size(kAllStrategies); ++i)
    out.push_back({kAllStrategies[i], median(samples[i][0]), median(samples[i][1]), median(samples[i][2]), oracle.size()});
  return out;
}

std::vector<ScalingRow> run_scaling_bench(const std::filesystem::path& dir, const std::vector<unsigned>& threads) {
  auto inputs = list_measurements(dir);
  std::vector<ScalingRow> rows;
  for (auto t : threads) {
    AnalysisConfig cfg;
    cfg.threads = t;
    cfg.canonical = false;
    cfg.outdir = std::filesystem::temp_directory_path() /
                 ("sparseprof-scaling-" + std::to_string(::getpid()) + "-" + std::to_string(t));
    auto rep = analyze(inputs, cfg);
    std::error_code ec;
    std::filesystem::remove_all(cfg.outdir, ec);
    rows.push_back({t, rep.wall_seconds, rep.nonzeros, rep.contexts});
  }
  return rows;
}

}  // namespace sparseprof

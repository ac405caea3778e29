#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "sparseprof/cct_store.hpp"

namespace sparseprof {

enum class MergeStrategy { two_phase_flat, two_phase_tree, shared_rwlock, shared_lockfree_map };

inline constexpr MergeStrategy kAllStrategies[] = {MergeStrategy::two_phase_flat, MergeStrategy::two_phase_tree,
                                                   MergeStrategy::shared_rwlock, MergeStrategy::shared_lockfree_map};

std::string to_string(MergeStrategy s);

/// Profiler-shaped input trees: heavy prefix sharing across trees, fan-out at
/// most 16. Each tree has exactly `nodes` nodes, root included.
std::vector<std::vector<NodeRecord>> make_bench_trees(std::size_t count, std::size_t nodes, std::uint64_t seed);

struct MergeRun {
  double phase1_ms = 0;
  double phase2_ms = 0;
  double total_ms = 0;
  std::vector<NodeRecord> canonical;  // unified tree, canonically numbered
};

/// One timed unification of `trees` with `threads` workers.
MergeRun run_merge(MergeStrategy s, const std::vector<std::vector<NodeRecord>>& trees, unsigned threads);

/// Serial reference unification, canonically numbered.
std::vector<NodeRecord> serial_unify(const std::vector<std::vector<NodeRecord>>& trees);

struct MergeTiming {
  MergeStrategy strategy;
  double phase1_ms = 0;  // medians over reps
  double phase2_ms = 0;
  double total_ms = 0;
  std::size_t unified_nodes = 0;
};

/// Validates every strategy against the serial oracle on every rep before
/// reporting; throws InvariantError on any mismatch.
std::vector<MergeTiming> run_merge_bench(const std::vector<std::vector<NodeRecord>>& trees, unsigned threads,
                                         unsigned reps);

struct ScalingRow {
  unsigned threads = 0;
  double seconds = 0;
  std::uint64_t nonzeros = 0;
  std::uint32_t contexts = 0;
};

/// Analyzes every measurement file in `dir` once per thread count.
std::vector<ScalingRow> run_scaling_bench(const std::filesystem::path& dir, const std::vector<unsigned>& threads);

double median(std::vector<double> v);

}  // namespace sparseprof

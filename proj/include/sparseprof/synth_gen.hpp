#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "sparseprof/meas_format.hpp"
#include "sparseprof/structure_map.hpp"

namespace sparseprof {

struct WorkloadSpec {
  std::uint32_t profiles = 4;
  std::uint16_t metrics = 8;
  std::uint32_t depth = 3;
  std::uint32_t branching = 4;
  double shared_fraction = 0.5;  // chance a top-level subtree comes from the workload-wide pool
  double ctx_density = 0.5;
  double metric_density = 0.25;
  std::uint32_t trace_len = 0;
  std::uint64_t seed = 1;
  std::uint32_t binaries = 2;
  bool gpu_split = false;  // every fourth profile is a GPU stream; metrics split cpu/gpu by halves

  /// Local nodes per profile, root included.
  std::uint64_t nodes_per_profile() const;
  void validate() const;
};

struct Manifest {
  WorkloadSpec spec;
  std::vector<std::string> files;
  std::uint64_t contexts_total = 0;     // local nodes over all profiles
  std::uint64_t nonempty_contexts = 0;
  std::uint64_t nonzeros = 0;
  std::uint64_t sparse_bytes = 0;
  std::uint64_t dense_bytes = 0;
  std::uint64_t unified_contexts = 0;   // size of the expanded, unified CCT
  double ctx_density() const;
  double metric_density() const;
};

/// Per-node probability that yields `density` nonzeros per non-empty context
/// over `allowed` metrics, conditional on at least one nonzero.
double metric_probability(double density, std::uint32_t allowed);

/// Structure description of synthetic binary `k`.
StructureFile synth_structure(std::uint32_t k);
std::string synth_binary_name(std::uint32_t k);

/// Measurement file for profile index `p` (0-based). Independent of every
/// other profile; seeded by seed ^ profile.
MeasurementFile synth_profile(const WorkloadSpec& spec, std::uint32_t p);

/// Writes P measurement files, one structure file per binary and
/// manifest.txt into `dest`. Identical specs give byte-identical output.
Manifest generate(const WorkloadSpec& spec, const std::filesystem::path& dest, unsigned threads = 1);

/// Dense-format equivalent of the generated workload.
std::uint64_t dense_size(const Manifest& m);

std::string format_manifest(const Manifest& m);
Manifest parse_manifest(const std::string& text);
Manifest read_manifest(const std::filesystem::path& dir);

/// Measurement files in `dir`, sorted.
std::vector<std::filesystem::path> list_measurements(const std::filesystem::path& dir);

struct DensityReport {
  std::uint64_t files = 0;
  std::uint64_t contexts = 0;
  std::uint64_t nonempty_contexts = 0;
  std::uint64_t nonzeros = 0;
  std::uint64_t metric_slots = 0;  // nonempty contexts x metric count
  std::uint64_t sparse_bytes = 0;
  std::uint64_t dense_bytes = 0;
  double ctx_density() const { return contexts ? double(nonempty_contexts) / double(contexts) : 0; }
  double metric_density() const { return metric_slots ? double(nonzeros) / double(metric_slots) : 0; }
};

DensityReport scan_measurements(const std::vector<std::filesystem::path>& files);

}  // namespace sparseprof

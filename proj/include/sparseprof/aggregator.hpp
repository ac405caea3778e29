#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "sparseprof/cct_store.hpp"
#include "sparseprof/meas_format.hpp"
#include "sparseprof/plane.hpp"
#include "sparseprof/structure_map.hpp"

namespace sparseprof {

struct AnalysisConfig {
  unsigned threads = 1;
  unsigned partitions = 1;            // simulated ranks
  std::optional<unsigned> arity;      // t of the reduction tree; defaults to max(threads, 2)
  std::filesystem::path outdir;       // receives profile.pmsdb, context.cmsdb, trace.db
  bool cms = false;
  bool traces = false;
  std::optional<std::filesystem::path> struct_dir;
  bool canonical = true;

  unsigned reduction_arity() const { return arity ? *arity : std::max(threads, 2u); }
  void validate() const;
};

struct AnalysisReport {
  std::uint32_t profiles = 0;
  std::uint32_t contexts = 0;
  std::uint32_t binaries = 0;
  std::uint64_t nonzeros = 0;            // class 1 entries over all input profiles
  std::uint64_t exclusive_nonzeros = 0;
  std::uint64_t summary_nonzeros = 0;
  std::uint64_t input_nonzeros = 0;      // measured values consumed
  std::uint64_t pms_bytes = 0, cms_bytes = 0, trace_bytes = 0;
  std::size_t class2_rounds = 0, class3_rounds = 0;
  std::size_t peak_resident = 0;         // high-water mark of live per-profile planes
  double wall_seconds = 0;

  std::uint64_t bytes() const { return pms_bytes + cms_bytes + trace_bytes; }
};

std::filesystem::path pms_path(const std::filesystem::path& outdir);
std::filesystem::path cms_path(const std::filesystem::path& outdir);
std::filesystem::path trace_path(const std::filesystem::path& outdir);

/// Counts live Class1Plane objects and their high-water mark.
class ResidencyGauge {
 public:
  void acquire();
  void release();
  std::size_t live() const { return live_.load(); }
  std::size_t high_water() const { return high_.load(); }

 private:
  std::atomic<std::size_t> live_{0};
  std::atomic<std::size_t> high_{0};
};

/// One profile's class 1 result. Holds a residency token while alive.
class Class1Plane {
 public:
  Class1Plane(ProfileId p, ResidencyGauge* gauge);
  ~Class1Plane();
  Class1Plane(Class1Plane&& o) noexcept;
  Class1Plane& operator=(Class1Plane&&) = delete;
  Class1Plane(const Class1Plane&) = delete;

  ProfileId profile;
  SparsePlane plane;  // keyed (global ContextId, MetricScopeId)
  std::optional<std::vector<TraceSample>> trace;
  std::uint64_t input_nonzeros = 0;

 private:
  ResidencyGauge* gauge_;
};

/// Class 1 analysis of one measurement file: lexically expands every local
/// node into `store`, attributes exclusive costs to expansion leaves and
/// propagates inclusive costs bottom-up over the touched global nodes.
/// Relative binary paths resolve against `base`.
Class1Plane class1_for_profile(const MeasurementFile& file, ProfileId id, CctStore& store, StructureRegistry& reg,
                               const std::filesystem::path& base = {}, ResidencyGauge* gauge = nullptr);

/// Inserts the expanded CCT of `file` into `store` without computing values.
void class2_for_profile(const MeasurementFile& file, CctStore& store, StructureRegistry& reg,
                        const std::filesystem::path& base = {});

struct SummaryStats {
  double sum = 0;
  double min = 0;
  double max = 0;
  double count = 0;
  double sumsq = 0;

  void add(double v);
  void merge(const SummaryStats& o);
  double get(Stat s) const;
  friend bool operator==(const SummaryStats&, const SummaryStats&) = default;
};

/// Concurrent (ContextId, MetricScopeId) -> SummaryStats map.
class Class3Accumulator {
 public:
  Class3Accumulator();
  Class3Accumulator(Class3Accumulator&&) noexcept;
  Class3Accumulator& operator=(Class3Accumulator&&) noexcept;
  ~Class3Accumulator();

  /// Adds every nonzero of a class 1 plane.
  void accumulate(const SparsePlane& plane);
  void add(ContextId c, std::uint16_t key, double v);
  void merge(const Class3Accumulator& o);

  std::size_t size() const;
  std::optional<SummaryStats> get(ContextId c, std::uint16_t key) const;
  /// Cells sorted by (context, key).
  std::vector<std::pair<std::uint64_t, SummaryStats>> cells() const;
  /// Summary plane keyed (ContextId, StatMetricId).
  SparsePlane summary_plane() const;

 private:
  struct Shard;
  static constexpr std::size_t kShards = 64;
  std::unique_ptr<Shard[]> shards_;
};

struct Class2Reduction {
  CctStore unified;
  std::vector<std::vector<ContextId>> mappings;  // per partition: local id -> unified id
  std::size_t rounds = 0;
};

/// t-ary tree of merge_into steps; groups within a round merge concurrently.
Class2Reduction reduce_class2(std::vector<CctStore> stores, unsigned arity, unsigned threads = 1);

struct Class3Reduction {
  Class3Accumulator result;
  std::size_t rounds = 0;
};

Class3Reduction reduce_class3(std::vector<Class3Accumulator> accs, unsigned arity, unsigned threads = 1);

/// Number of rounds a t-ary reduction of n items takes.
std::size_t reduction_rounds(std::size_t n, unsigned arity);

/// Full analysis: streams class 1 results to the PMS, reduces class 2 and 3
/// across simulated ranks, writes the summary plane and optional CMS and
/// traces. Inputs are numbered by sorted path. Outputs appear only on success.
AnalysisReport analyze(std::vector<std::filesystem::path> inputs, const AnalysisConfig& cfg);

}  // namespace sparseprof

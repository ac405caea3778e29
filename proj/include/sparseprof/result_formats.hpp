#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sparseprof/byte_io.hpp"
#include "sparseprof/cct_store.hpp"
#include "sparseprof/ids.hpp"
#include "sparseprof/meas_format.hpp"
#include "sparseprof/plane.hpp"

namespace sparseprof {

inline constexpr std::uint16_t kPmsVersion = 1;
inline constexpr std::uint16_t kCmsVersion = 1;
inline constexpr std::uint16_t kTraceDbVersion = 1;
inline constexpr std::size_t kPmsHeaderSize = 72;
inline constexpr std::size_t kCmsHeaderSize = 24;
inline constexpr std::size_t kTraceDbHeaderSize = 16;
inline constexpr std::size_t kTocEntrySize = 24;

/// Context-major plane: groups keyed by metric key, entries keyed by profile.
using ContextPlane = CsrPlane<std::uint16_t, std::uint32_t>;

struct TocEntry {
  std::uint32_t id = 0;      // profile (PMS, traces) or context (CMS)
  std::uint32_t groups = 0;  // non-empty groups in the plane
  std::uint64_t offset = 0;
  std::uint64_t size = 0;
  friend bool operator==(const TocEntry&, const TocEntry&) = default;
};

std::vector<std::uint8_t> encode_plane(const SparsePlane& p);
std::vector<std::uint8_t> encode_plane(const ContextPlane& p);
SparsePlane decode_sparse_plane(std::span<const std::uint8_t> bytes, std::uint32_t groups, std::uint64_t base);
ContextPlane decode_context_plane(std::span<const std::uint8_t> bytes, std::uint32_t groups, std::uint64_t base);
inline std::uint64_t plane_bytes(std::size_t groups, std::size_t values) {
  return kIndexEntrySize * (groups + 1) + kValueEntrySize * values;
}

std::vector<std::uint8_t> encode_tree(std::span<const NodeRecord> records);
std::vector<NodeRecord> decode_tree(std::span<const std::uint8_t> bytes, std::uint32_t count, std::uint64_t base);

// ---------------------------------------------------------------------------
// Profile-major database

/// Shared PMS output. write_plane may be called concurrently: each call
/// reserves its byte range with one fetch-and-add on the file cursor and
/// writes there, so planes land in completion order. finish() writes the
/// tree and binary sections (unless given up front), the toc and the header.
class PmsWriter {
 public:
  struct Layout {
    std::uint32_t profiles = 0;  // input profiles, excluding the summary
    std::uint16_t metric_count = 0;
  };

  PmsWriter(const std::filesystem::path& path, Layout layout);
  /// Places the tree and binary sections ahead of the planes.
  PmsWriter(const std::filesystem::path& path, Layout layout, std::span<const NodeRecord> tree,
            std::span<const std::string> binaries);

  /// Returns (offset, size). Throws InvariantError on a duplicate profile.
  std::pair<std::uint64_t, std::uint64_t> write_plane(ProfileId p, const SparsePlane& plane);

  /// Returns the final file size.
  std::uint64_t finish(std::span<const NodeRecord> tree, std::span<const std::string> binaries);
  std::uint64_t finish();

  std::uint64_t planes_offset() const { return planes_offset_; }
  /// For writers created before the metric count was known.
  void set_metric_count(std::uint16_t m) { layout_.metric_count = m; }

 private:
  void init(Layout layout);

  File file_;
  Layout layout_;
  std::vector<TocEntry> toc_;
  std::unique_ptr<std::atomic<bool>[]> written_;
  std::atomic<std::uint64_t> cursor_{0};
  std::uint64_t planes_offset_ = 0;
  std::optional<std::pair<std::uint64_t, std::uint64_t>> tree_at_, binaries_at_;
  std::uint32_t tree_count_ = 0, binary_count_ = 0;
};

struct PmsHeader {
  std::uint32_t toc_count = 0;  // profiles + 1
  std::uint16_t metric_count = 0;
  std::uint32_t context_count = 0;
  std::uint32_t binary_count = 0;
  std::uint64_t toc_offset = 0;
  std::uint64_t tree_offset = 0, tree_size = 0;
  std::uint64_t binaries_offset = 0, binaries_size = 0;
  std::uint64_t planes_offset = 0;
};

/// Read-only PMS database. All accessors are safe to call concurrently.
class ProfileDb {
 public:
  static ProfileDb open(const std::filesystem::path& path);

  const PmsHeader& header() const { return header_; }
  std::uint32_t profile_count() const { return header_.toc_count - 1; }
  std::uint16_t metric_count() const { return header_.metric_count; }
  const std::vector<TocEntry>& toc() const { return toc_; }
  const std::vector<NodeRecord>& tree() const { return tree_; }
  const std::vector<std::string>& binaries() const { return binaries_; }
  std::uint64_t file_size() const { return file_->size(); }

  /// Profile 0 is the summary. One direct toc index, one contiguous read.
  SparsePlane plane(ProfileId p) const;
  std::optional<double> value(ProfileId p, ContextId c, std::uint16_t key, std::size_t* probes = nullptr) const;

 private:
  std::shared_ptr<File> file_;
  PmsHeader header_;
  std::vector<TocEntry> toc_;
  std::vector<NodeRecord> tree_;
  std::vector<std::string> binaries_;
};

struct ResultDensity {
  std::uint32_t profiles = 0;
  std::uint32_t contexts = 0;
  std::uint64_t nonempty = 0;  // (profile, context) pairs with a value
  std::uint64_t nonzeros = 0;
  double ctx_density = 0;      // nonempty / (profiles x contexts)
  double metric_density = 0;   // nonzeros / (nonempty x 2 x metric_count)
};

/// Density of the input-profile planes (the summary is excluded).
ResultDensity pms_density(const ProfileDb& db);

/// Rewrites the contexts of a plane through `mapping` (old id -> new id).
SparsePlane remap_plane(const SparsePlane& p, std::span<const ContextId> mapping);

struct CanonicalMaps {
  std::vector<ContextId> contexts;  // old -> new
  std::vector<BinaryId> binaries;   // old -> new
};

/// Canonical numbering of a tree: binaries renumbered by sorted path, then
/// contexts renumbered by canonical_order.
CanonicalMaps canonical_maps(std::span<const NodeRecord> tree, std::span<const std::string> binaries);

/// Rewrites a PMS with canonical ids, tree before planes, planes in profile
/// order. Returns the context mapping applied.
std::vector<ContextId> canonicalize_pms(const ProfileDb& raw, const std::filesystem::path& dest);

// ---------------------------------------------------------------------------
// Context-major database

struct TransposeStats {
  std::size_t contexts = 0;
  std::uint64_t entries = 0;
  std::size_t max_heap = 0;  // largest merge heap observed in any worker
  std::uint64_t bytes = 0;
};

/// Builds the CMS for every input profile (the summary stays PMS-only). Each
/// worker owns a contiguous range of contexts whose output offsets were fixed
/// up front, and merges the profiles' context-ordered runs with a heap of at
/// most one cursor per profile.
TransposeStats transpose_to_cms(const ProfileDb& pms, const std::filesystem::path& dest, unsigned threads = 1);

class ContextDb {
 public:
  static ContextDb open(const std::filesystem::path& path);

  std::uint32_t profile_count() const { return profile_count_; }
  std::uint16_t metric_count() const { return metric_count_; }
  const std::vector<TocEntry>& toc() const { return toc_; }

  /// Plane for `c`, or NotFoundError if the context is empty.
  ContextPlane plane(ContextId c, std::size_t* probes = nullptr) const;
  std::optional<double> value(ContextId c, std::uint16_t key, ProfileId p, std::size_t* probes = nullptr) const;

 private:
  std::shared_ptr<File> file_;
  std::uint32_t profile_count_ = 0;
  std::uint16_t metric_count_ = 0;
  std::vector<TocEntry> toc_;
};

// ---------------------------------------------------------------------------
// Trace database

/// Concurrent trace output, one contiguous record run per profile.
class TraceWriter {
 public:
  TraceWriter(const std::filesystem::path& path, std::uint32_t profiles);
  void write(ProfileId p, std::span<const TraceSample> samples);
  std::uint64_t finish();

 private:
  File file_;
  std::vector<TocEntry> toc_;
  std::atomic<std::uint64_t> cursor_;
};

struct ProfileTrace {
  ProfileId profile;
  std::vector<TraceSample> samples;
  friend bool operator==(const ProfileTrace&, const ProfileTrace&) = default;
};

std::vector<ProfileTrace> read_traces(const std::filesystem::path& path);

/// Rewrites a trace database through a context mapping, in profile order.
void canonicalize_traces(const std::filesystem::path& raw, const std::filesystem::path& dest,
                         std::span<const ContextId> mapping);

}  // namespace sparseprof

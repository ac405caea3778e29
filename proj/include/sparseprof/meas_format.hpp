#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sparseprof/ids.hpp"
#include "sparseprof/plane.hpp"

namespace sparseprof {

inline constexpr std::uint16_t kMeasVersion = 1;
inline constexpr std::size_t kMeasHeaderSize = 48;
inline constexpr std::size_t kMeasNodeSize = 16;
inline constexpr std::size_t kIndexEntrySize = 12;
inline constexpr std::size_t kValueEntrySize = 12;
inline constexpr std::size_t kTraceEntrySize = 16;

enum class ProfileKind : std::uint8_t { cpu_thread = 0, gpu_stream = 1 };

struct ProfileMeta {
  ProfileKind kind = ProfileKind::cpu_thread;
  std::uint32_t rank = 0;
  std::uint32_t local_index = 0;
  friend bool operator==(const ProfileMeta&, const ProfileMeta&) = default;
};

/// Instruction-level CCT node; its id is its position in the node list.
/// `binary` indexes the file's own binary table.
struct LocalNode {
  ContextId parent;
  std::uint32_t binary = 0;
  std::uint64_t offset = 0;
  friend bool operator==(const LocalNode&, const LocalNode&) = default;
};

struct TraceSample {
  std::uint64_t timestamp_ns = 0;
  ContextId ctx;
  friend bool operator==(const TraceSample&, const TraceSample&) = default;
};

/// One thread's or stream's measurements. The plane is keyed by
/// (local node id, MetricId).
struct MeasurementFile {
  ProfileMeta meta;
  std::uint16_t metric_count = 0;
  std::vector<LocalNode> nodes{LocalNode{}};
  SparsePlane plane;
  std::optional<std::vector<TraceSample>> trace;
  std::vector<std::string> binaries;

  friend bool operator==(const MeasurementFile&, const MeasurementFile&) = default;
};

/// Throws InvariantError naming the first violated invariant.
void validate_measurement(const MeasurementFile& f);

std::vector<std::uint8_t> encode_measurement(const MeasurementFile& f);
/// Throws FormatError with the offending byte offset on any invalid input.
MeasurementFile decode_measurement(std::span<const std::uint8_t> bytes);

std::uint64_t write_measurement(const MeasurementFile& f, const std::filesystem::path& dest);
MeasurementFile read_measurement(const std::filesystem::path& src);

/// Byte size encode_measurement would produce.
std::uint64_t encoded_size(const MeasurementFile& f);
/// Size of the same file with the plane stored as a dense nodes x metrics
/// array of 8-byte values.
std::uint64_t dense_equivalent_size(const MeasurementFile& f);

struct Density {
  double contexts = 0;  // non-empty contexts / all contexts
  double metrics = 0;   // mean over non-empty contexts of nonzeros / metric_count
};

Density density_stats(const MeasurementFile& f, std::uint32_t metric_count);

}  // namespace sparseprof

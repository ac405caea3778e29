#pragma once

#include <atomic>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "sparseprof/frame.hpp"
#include "sparseprof/ids.hpp"

namespace sparseprof {

/// Instruction range [lo, hi) and the source-level frames enclosing it,
/// outermost first (function, inline, loop and line frames only).
struct StructureEntry {
  std::uint64_t lo = 0;
  std::uint64_t hi = 0;
  std::vector<Frame> frames;
  friend bool operator==(const StructureEntry&, const StructureEntry&) = default;
};

struct StructureFile {
  std::string binary_path;
  std::vector<StructureEntry> entries;  // sorted by lo, pairwise disjoint
  friend bool operator==(const StructureFile&, const StructureFile&) = default;
};

/// Text format, one entry per line:
///   binary <path>
///   map <lo-hex> <hi-hex> := <frame> / <frame> ...
/// with frames "func <name>", "inline <name>", "loop <file>:<line>",
/// "line <file>:<line>". Lines starting with '#' are comments.
StructureFile parse_structure(std::string_view text);
std::string format_structure(const StructureFile& s);
StructureFile read_structure(const std::filesystem::path& path);
void write_structure(const StructureFile& s, const std::filesystem::path& path);

/// Where the structure file for `binary_path` is looked up: the binary path
/// with its extension replaced by ".structz", or that file name inside
/// `struct_dir` when given. Relative binary paths resolve against `base`.
std::filesystem::path structure_path_for(const std::string& binary_path, const std::filesystem::path& base,
                                         const std::optional<std::filesystem::path>& struct_dir);

/// Frames for `offset`: the covering entry's frames followed by the
/// instruction frame, or the instruction frame alone when nothing covers it.
std::vector<Frame> expand_with(const StructureFile* s, BinaryId b, std::uint64_t offset);

/// Interns binaries and loads each one's structure at most once.
///
/// The first caller of ensure_loaded for a binary performs the load; other
/// callers return immediately and only block later, inside expand, until the
/// load has finished.
class StructureRegistry {
 public:
  enum class State : std::uint8_t { unloaded, loading, ready, missing };
  using Loader = std::function<std::optional<StructureFile>(const std::filesystem::path&)>;

  explicit StructureRegistry(std::optional<std::filesystem::path> struct_dir = std::nullopt, Loader loader = {});

  /// Id for `binary_path`; relative paths resolve against `base` on first sight.
  BinaryId intern(const std::string& binary_path, const std::filesystem::path& base = {});

  void ensure_loaded(BinaryId b);
  std::vector<Frame> expand(BinaryId b, std::uint64_t offset);

  State state(BinaryId b) const;
  std::size_t binary_count() const;
  std::string binary_path(BinaryId b) const;
  std::vector<std::string> binary_paths() const;
  std::size_t load_count() const { return loads_.load(); }

 private:
  struct Entry {
    std::string path;
    std::filesystem::path structure;
    std::atomic<State> state{State::unloaded};
    std::optional<StructureFile> file;
  };
  Entry& entry(BinaryId b) const;

  std::optional<std::filesystem::path> struct_dir_;
  Loader loader_;
  mutable std::shared_mutex mu_;
  mutable std::deque<Entry> entries_;
  std::unordered_map<std::string, std::uint32_t> by_path_;
  std::atomic<std::size_t> loads_{0};
};

}  // namespace sparseprof

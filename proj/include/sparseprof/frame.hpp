#pragma once

#include <compare>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "sparseprof/ids.hpp"

namespace sparseprof {

enum class FrameKind : std::uint8_t { root = 0, function = 1, inlined = 2, loop = 3, line = 4, instruction = 5 };

/// One element of a calling context. Only the fields belonging to `kind` are
/// populated; the rest stay value-initialized so equality is field-wise.
///
/// The defaulted ordering (kind, name, file, lineno, binary, offset) is the
/// total order used for canonical tree numbering.
struct Frame {
  FrameKind kind = FrameKind::root;
  std::string name;
  std::string file;
  std::uint32_t lineno = 0;
  BinaryId binary{};
  std::uint64_t offset = 0;

  static Frame root() { return {}; }
  static Frame func(std::string n) { return {FrameKind::function, std::move(n), {}, 0, {}, 0}; }
  static Frame inlined(std::string n) { return {FrameKind::inlined, std::move(n), {}, 0, {}, 0}; }
  static Frame loop(std::string f, std::uint32_t l) { return {FrameKind::loop, {}, std::move(f), l, {}, 0}; }
  static Frame line(std::string f, std::uint32_t l) { return {FrameKind::line, {}, std::move(f), l, {}, 0}; }
  static Frame instruction(BinaryId b, std::uint64_t off) { return {FrameKind::instruction, {}, {}, 0, b, off}; }

  /// True when exactly the fields for this kind are populated.
  bool well_formed() const;

  friend bool operator==(const Frame&, const Frame&) = default;
  friend std::strong_ordering operator<=>(const Frame&, const Frame&) = default;
};

/// Human-readable label, e.g. "foo()", "(inlined) baz()", "loop at foo.c:7",
/// "foo.c:5", "+0x3B".
std::string to_string(const Frame& f);

struct FrameHash {
  std::size_t operator()(const Frame& f) const noexcept;
};

/// Root-to-leaf frame sequence; the first frame is always the root.
using ContextPath = std::vector<Frame>;

}  // namespace sparseprof

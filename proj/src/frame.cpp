#include "sparseprof/frame.hpp"

#include <cstdio>

namespace sparseprof {

bool Frame::well_formed() const {
  bool no_name = name.empty();
  bool no_src = file.empty() && lineno == 0;
  bool no_ins = binary.value() == 0 && offset == 0;
  switch (kind) {
    case FrameKind::root: return no_name && no_src && no_ins;
    case FrameKind::function:
    case FrameKind::inlined: return !no_name && no_src && no_ins;
    case FrameKind::loop:
    case FrameKind::line: return no_name && !file.empty() && no_ins;
    case FrameKind::instruction: return no_name && no_src;
  }
  return false;
}

std::string to_string(const Frame& f) {
  switch (f.kind) {
    case FrameKind::root: return "<root>";
    case FrameKind::function: return f.name + "()";
    case FrameKind::inlined: return "(inlined) " + f.name + "()";
    case FrameKind::loop: return "loop at " + f.file + ":" + std::to_string(f.lineno);
    case FrameKind::line: return f.file + ":" + std::to_string(f.lineno);
    case FrameKind::instruction: {
      char buf[32];
      std::snprintf(buf, sizeof buf, "+0x%llX", static_cast<unsigned long long>(f.offset));
      return buf;
    }
  }
  return "?";
}

std::size_t FrameHash::operator()(const Frame& f) const noexcept {
  // boost-style combine
  auto mix = [](std::size_t h, std::size_t v) { return h ^ (v + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2)); };
  std::size_t h = static_cast<std::size_t>(f.kind);
  switch (f.kind) {
    case FrameKind::root: break;
    case FrameKind::function:
    case FrameKind::inlined: h = mix(h, std::hash<std::string>{}(f.name)); break;
    case FrameKind::loop:
    case FrameKind::line:
      h = mix(h, std::hash<std::string>{}(f.file));
      h = mix(h, f.lineno);
      break;
    case FrameKind::instruction:
      h = mix(h, f.binary.value());
      h = mix(h, std::hash<std::uint64_t>{}(f.offset));
      break;
  }
  return h;
}

}  // namespace sparseprof

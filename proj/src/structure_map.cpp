#include "sparseprof/structure_map.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

#include "sparseprof/byte_io.hpp"
#include "sparseprof/errors.hpp"

namespace sparseprof {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::uint64_t parse_hex(std::string_view s, std::uint64_t at) {
  std::uint64_t v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v, 16);
  if (ec != std::errc{} || p != s.data() + s.size() || s.empty()) throw FormatError("bad hex offset", at);
  return v;
}

Frame parse_frame(std::string_view text, std::uint64_t at) {
  text = trim(text);
  auto sp = text.find(' ');
  if (sp == std::string_view::npos) throw FormatError("bad frame", at);
  auto kind = text.substr(0, sp);
  auto arg = trim(text.substr(sp + 1));
  if (arg.empty()) throw FormatError("bad frame", at);
  if (kind == "func") return Frame::func(std::string(arg));
  if (kind == "inline") return Frame::inlined(std::string(arg));
  if (kind == "loop" || kind == "line") {
    auto colon = arg.rfind(':');
    if (colon == std::string_view::npos || colon == 0) throw FormatError("bad file:line", at);
    std::uint32_t line = 0;
    auto num = arg.substr(colon + 1);
    auto [p, ec] = std::from_chars(num.data(), num.data() + num.size(), line);
    if (ec != std::errc{} || p != num.data() + num.size() || num.empty()) throw FormatError("bad line number", at);
    std::string file(arg.substr(0, colon));
    return kind == "loop" ? Frame::loop(std::move(file), line) : Frame::line(std::move(file), line);
  }
  throw FormatError("unknown frame kind", at);
}

}  // namespace

StructureFile parse_structure(std::string_view text) {
  StructureFile s;
  bool have_binary = false;
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::uint64_t at = pos;
    auto line = trim(text.substr(pos, end - pos));
    pos = end + 1;
    if (line.empty() || line.front() == '#') continue;
    if (line.starts_with("binary ")) {
      if (have_binary) throw FormatError("duplicate binary line", at);
      s.binary_path = std::string(trim(line.substr(7)));
      have_binary = true;
      continue;
    }
    if (!line.starts_with("map ")) throw FormatError("unrecognized line", at);
    if (!have_binary) throw FormatError("map before binary line", at);
    auto rest = line.substr(4);
    auto assign = rest.find(":=");
    if (assign == std::string_view::npos) throw FormatError("missing ':='", at);
    std::istringstream range{std::string(rest.substr(0, assign))};
    std::string lo, hi, extra;
    if (!(range >> lo >> hi) || (range >> extra)) throw FormatError("bad range", at);
    StructureEntry e;
    e.lo = parse_hex(lo, at);
    e.hi = parse_hex(hi, at);
    if (e.hi <= e.lo) throw FormatError("empty range", at);
    auto frames = rest.substr(assign + 2);
    std::size_t fp = 0;
    while (true) {
      auto sep = frames.find(" / ", fp);
      e.frames.push_back(parse_frame(frames.substr(fp, sep == std::string_view::npos ? sep : sep - fp), at));
      if (sep == std::string_view::npos) break;
      fp = sep + 3;
    }
    if (!s.entries.empty() && e.lo < s.entries.back().hi) throw FormatError("ranges unsorted or overlapping", at);
    s.entries.push_back(std::move(e));
  }
  if (!have_binary) throw FormatError("missing binary line", 0);
  return s;
}

std::string format_structure(const StructureFile& s) {
  std::ostringstream os;
  os << "binary " << s.binary_path << '\n';
  for (const auto& e : s.entries) {
    os << "map " << std::hex << e.lo << ' ' << e.hi << std::dec << " :=";
    for (std::size_t i = 0; i < e.frames.size(); ++i) {
      const auto& f = e.frames[i];
      os << (i ? " / " : " ");
      switch (f.kind) {
        case FrameKind::function: os << "func " << f.name; break;
        case FrameKind::inlined: os << "inline " << f.name; break;
        case FrameKind::loop: os << "loop " << f.file << ':' << f.lineno; break;
        case FrameKind::line: os << "line " << f.file << ':' << f.lineno; break;
        default: throw InvariantError("structure entries hold only source-level frames");
      }
    }
    os << '\n';
  }
  return os.str();
}

StructureFile read_structure(const std::filesystem::path& path) {
  auto bytes = read_file(path);
  std::string_view text(reinterpret_cast<const char*>(bytes.data()), bytes.size());
  try {
    return parse_structure(text);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.reason(), e.offset());
  }
}

void write_structure(const StructureFile& s, const std::filesystem::path& path) {
  auto text = format_structure(s);
  write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::filesystem::path structure_path_for(const std::string& binary_path, const std::filesystem::path& base,
                                         const std::optional<std::filesystem::path>& struct_dir) {
  std::filesystem::path bin(binary_path);
  if (struct_dir) return *struct_dir / bin.filename().replace_extension(".structz");
  if (bin.is_relative() && !base.empty()) bin = base / bin;
  return bin.replace_extension(".structz");
}

std::vector<Frame> expand_with(const StructureFile* s, BinaryId b, std::uint64_t offset) {
  std::vector<Frame> out;
  if (s) {
    auto it = std::upper_bound(s->entries.begin(), s->entries.end(), offset,
                               [](std::uint64_t off, const StructureEntry& e) { return off < e.lo; });
    if (it != s->entries.begin()) {
      --it;
      if (offset < it->hi) out = it->frames;
    }
  }
  out.push_back(Frame::instruction(b, offset));
  return out;
}

StructureRegistry::StructureRegistry(std::optional<std::filesystem::path> struct_dir, Loader loader)
    : struct_dir_(std::move(struct_dir)), loader_(std::move(loader)) {
  if (!loader_) {
    loader_ = [](const std::filesystem::path& p) -> std::optional<StructureFile> {
      std::error_code ec;
      if (!std::filesystem::is_regular_file(p, ec)) return std::nullopt;
      try {
        return read_structure(p);
      } catch (const Error&) {
        return std::nullopt;
      }
    };
  }
}

BinaryId StructureRegistry::intern(const std::string& binary_path, const std::filesystem::path& base) {
  {
    std::shared_lock lk(mu_);
    auto it = by_path_.find(binary_path);
    if (it != by_path_.end()) return BinaryId(it->second);
  }
  std::unique_lock lk(mu_);
  auto [it, inserted] = by_path_.try_emplace(binary_path, static_cast<std::uint32_t>(entries_.size()));
  if (inserted) {
    auto& e = entries_.emplace_back();
    e.path = binary_path;
    e.structure = structure_path_for(binary_path, base, struct_dir_);
  }
  return BinaryId(it->second);
}

StructureRegistry::Entry& StructureRegistry::entry(BinaryId b) const {
  std::shared_lock lk(mu_);
  if (b.value() >= entries_.size()) throw NotFoundError("unknown binary id");
  return entries_[b.value()];
}

void StructureRegistry::ensure_loaded(BinaryId b) {
  auto& e = entry(b);
  auto expected = State::unloaded;
  if (!e.state.compare_exchange_strong(expected, State::loading, std::memory_order_acq_rel)) return;
  std::optional<StructureFile> file;
  try {
    file = loader_(e.structure);
  } catch (...) {
    file.reset();
  }
  loads_.fetch_add(1);
  e.file = std::move(file);
  e.state.store(e.file ? State::ready : State::missing, std::memory_order_release);
  e.state.notify_all();
}

std::vector<Frame> StructureRegistry::expand(BinaryId b, std::uint64_t offset) {
  auto& e = entry(b);
  auto s = e.state.load(std::memory_order_acquire);
  if (s == State::unloaded) {
    ensure_loaded(b);
    s = e.state.load(std::memory_order_acquire);
  }
  while (s == State::loading) {
    e.state.wait(State::loading, std::memory_order_acquire);
    s = e.state.load(std::memory_order_acquire);
  }
  return expand_with(s == State::ready ? &*e.file : nullptr, b, offset);
}

StructureRegistry::State StructureRegistry::state(BinaryId b) const { return entry(b).state.load(); }

std::size_t StructureRegistry::binary_count() const {
  std::shared_lock lk(mu_);
  return entries_.size();
}

std::string StructureRegistry::binary_path(BinaryId b) const { return entry(b).path; }

std::vector<std::string> StructureRegistry::binary_paths() const {
  std::shared_lock lk(mu_);
  std::vector<std::string> out;
  for (const auto& e : entries_) out.push_back(e.path);
  return out;
}

}  // namespace sparseprof

#include <algorithm>

#include "sparseprof/result_formats.hpp"

namespace sparseprof {

namespace {

constexpr std::string_view kTraceMagic = "STDB";

std::vector<std::uint8_t> encode_samples(std::span<const TraceSample> samples) {
  std::vector<std::uint8_t> out;
  out.reserve(samples.size() * kTraceEntrySize);
  ByteWriter w(out);
  for (const auto& s : samples) {
    w.put<std::uint64_t>(s.timestamp_ns);
    w.put<std::uint32_t>(s.ctx.value());
    w.pad(4);
  }
  return out;
}

}  // namespace

TraceWriter::TraceWriter(const std::filesystem::path& path, std::uint32_t profiles)
    : file_(path, File::Mode::create), toc_(profiles), cursor_(kTraceDbHeaderSize + kTocEntrySize * profiles) {
  for (std::uint32_t i = 0; i < profiles; ++i) toc_[i].id = i + 1;
}

void TraceWriter::write(ProfileId p, std::span<const TraceSample> samples) {
  if (p.value() == 0 || p.value() > toc_.size()) throw InvariantError("trace profile id out of range");
  for (std::size_t i = 1; i < samples.size(); ++i)
    if (samples[i].timestamp_ns < samples[i - 1].timestamp_ns) throw InvariantError("trace timestamps decrease");
  auto bytes = encode_samples(samples);
  auto off = cursor_.fetch_add(bytes.size());
  file_.pwrite(bytes, off);
  toc_[p.value() - 1].offset = off;
  toc_[p.value() - 1].size = bytes.size();
}

std::uint64_t TraceWriter::finish() {
  std::vector<std::uint8_t> head;
  ByteWriter w(head);
  w.tag(kTraceMagic);
  w.put<std::uint16_t>(kTraceDbVersion);
  w.put<std::uint16_t>(0);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(toc_.size()));
  w.pad(4);
  for (const auto& t : toc_) {
    w.put<std::uint32_t>(t.id);
    w.pad(4);
    w.put<std::uint64_t>(t.offset);
    w.put<std::uint64_t>(t.size / kTraceEntrySize);
  }
  file_.pwrite(head, 0);
  return cursor_.load();
}

std::vector<ProfileTrace> read_traces(const std::filesystem::path& path) {
  auto bytes = read_file(path);
  std::vector<ProfileTrace> out;
  try {
    ByteReader r(bytes);
    r.expect_tag(kTraceMagic);
    if (r.get<std::uint16_t>() != kTraceDbVersion) throw FormatError("unsupported version", 4);
    r.zeros(2);
    auto n = r.get<std::uint32_t>();
    r.zeros(4);
    if (std::uint64_t{n} * kTocEntrySize > r.remaining()) throw FormatError("table of contents past end of file", 8);
    for (std::uint32_t i = 0; i < n; ++i) {
      auto at = r.offset();
      auto id = r.get<std::uint32_t>();
      r.zeros(4);
      auto off = r.get<std::uint64_t>();
      auto count = r.get<std::uint64_t>();
      if (id != i + 1) throw FormatError("trace toc out of profile order", at);
      if (off > bytes.size() || count > (bytes.size() - off) / kTraceEntrySize) throw FormatError("trace past end of file", at);
      ProfileTrace t{ProfileId(id), {}};
      ByteReader sr(std::span<const std::uint8_t>(bytes).subspan(off, count * kTraceEntrySize), off);
      for (std::uint64_t k = 0; k < count; ++k) {
        auto sat = sr.offset();
        TraceSample s;
        s.timestamp_ns = sr.get<std::uint64_t>();
        s.ctx = ContextId(sr.get<std::uint32_t>());
        sr.zeros(4);
        if (!t.samples.empty() && s.timestamp_ns < t.samples.back().timestamp_ns)
          throw FormatError("trace timestamps decrease", sat);
        t.samples.push_back(s);
      }
      out.push_back(std::move(t));
    }
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.reason(), e.offset());
  }
  return out;
}

void canonicalize_traces(const std::filesystem::path& raw, const std::filesystem::path& dest,
                         std::span<const ContextId> mapping) {
  auto traces = read_traces(raw);
  TraceWriter w(dest, static_cast<std::uint32_t>(traces.size()));
  for (auto& t : traces) {
    for (auto& s : t.samples) {
      if (s.ctx.value() >= mapping.size()) throw InvariantError("trace references unknown context");
      s.ctx = mapping[s.ctx.value()];
    }
    w.write(t.profile, t.samples);
  }
  w.finish();
}

}  // namespace sparseprof

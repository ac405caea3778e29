#include "sparseprof/meas_format.hpp"

#include <cmath>

#include "sparseprof/byte_io.hpp"

namespace sparseprof {

namespace {

constexpr std::string_view kMagic = "SPFM";
constexpr std::uint16_t kFlagTrace = 1u << 0;
constexpr std::uint16_t kFlagBinaries = 1u << 1;

}  // namespace

void validate_measurement(const MeasurementFile& f) {
  if (f.metric_count > kMaxMetrics) throw InvariantError("metric count exceeds limit");
  if (f.nodes.empty()) throw InvariantError("measurement has no root node");
  if (f.nodes[0] != LocalNode{}) throw InvariantError("root node carries a payload");
  for (std::size_t i = 1; i < f.nodes.size(); ++i) {
    if (f.nodes[i].parent.value() >= i) throw InvariantError("node parent does not precede child");
    if (f.nodes[i].binary >= f.binaries.size()) throw InvariantError("node references unknown binary");
  }
  if (auto d = check_plane(f.plane)) throw InvariantError("plane: " + d->reason);
  for (std::size_t g = 0; g < f.plane.group_count(); ++g) {
    if (f.plane.index[g].key >= f.nodes.size()) throw InvariantError("plane references unknown context");
    for (const auto& e : f.plane.run(g)) {
      if (e.key >= f.metric_count) throw InvariantError("plane references unknown metric");
      if (!std::isfinite(e.value)) throw InvariantError("non-finite stored value");
    }
  }
  if (f.trace) {
    for (std::size_t i = 0; i < f.trace->size(); ++i) {
      const auto& s = (*f.trace)[i];
      if (s.ctx.value() >= f.nodes.size()) throw InvariantError("trace references unknown context");
      if (i > 0 && s.timestamp_ns < (*f.trace)[i - 1].timestamp_ns) throw InvariantError("trace timestamps decrease");
    }
  }
}

std::uint64_t encoded_size(const MeasurementFile& f) {
  std::uint64_t n = kMeasHeaderSize + kMeasNodeSize * f.nodes.size() + kIndexEntrySize * f.plane.index.size() +
                    kValueEntrySize * f.plane.values.size();
  if (f.trace) n += kTraceEntrySize * f.trace->size();
  if (!f.binaries.empty()) {
    n += 4;
    for (const auto& b : f.binaries) n += 4 + b.size();
  }
  return n;
}

std::uint64_t dense_equivalent_size(const MeasurementFile& f) {
  std::uint64_t plane = kIndexEntrySize * f.plane.index.size() + kValueEntrySize * f.plane.values.size();
  return encoded_size(f) - plane + std::uint64_t{8} * f.nodes.size() * f.metric_count;
}

std::vector<std::uint8_t> encode_measurement(const MeasurementFile& f) {
  validate_measurement(f);
  std::vector<std::uint8_t> out;
  out.reserve(encoded_size(f));
  ByteWriter w(out);
  std::uint16_t flags = (f.trace ? kFlagTrace : 0) | (f.binaries.empty() ? 0 : kFlagBinaries);
  w.tag(kMagic);
  w.put<std::uint16_t>(kMeasVersion);
  w.put<std::uint16_t>(flags);
  w.put<std::uint16_t>(f.metric_count);
  w.pad(2);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(f.nodes.size()));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(f.plane.index.size()));
  w.put<std::uint64_t>(f.plane.values.size());
  w.put<std::uint64_t>(f.trace ? f.trace->size() : 0);
  w.put<std::uint8_t>(static_cast<std::uint8_t>(f.meta.kind));
  w.pad(3);
  w.put<std::uint32_t>(f.meta.rank);
  w.put<std::uint32_t>(f.meta.local_index);

  for (const auto& n : f.nodes) {
    w.put<std::uint32_t>(n.parent.value());
    w.put<std::uint32_t>(n.binary);
    w.put<std::uint64_t>(n.offset);
  }
  for (const auto& g : f.plane.index) {
    w.put<std::uint32_t>(g.key);
    w.put<std::uint64_t>(g.start);
  }
  for (const auto& e : f.plane.values) {
    w.put<std::uint16_t>(e.key);
    w.pad(2);
    w.put<double>(e.value);
  }
  if (f.trace) {
    for (const auto& s : *f.trace) {
      w.put<std::uint64_t>(s.timestamp_ns);
      w.put<std::uint32_t>(s.ctx.value());
      w.pad(4);
    }
  }
  if (!f.binaries.empty()) {
    w.put<std::uint32_t>(static_cast<std::uint32_t>(f.binaries.size()));
    for (const auto& b : f.binaries) w.str(b);
  }
  return out;
}

MeasurementFile decode_measurement(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  MeasurementFile f;
  r.expect_tag(kMagic);
  {
    auto at = r.offset();
    if (r.get<std::uint16_t>() != kMeasVersion) throw FormatError("unsupported version", at);
  }
  auto flags_at = r.offset();
  auto flags = r.get<std::uint16_t>();
  if (flags & ~(kFlagTrace | kFlagBinaries)) throw FormatError("unknown flags", flags_at);
  auto metric_at = r.offset();
  f.metric_count = r.get<std::uint16_t>();
  if (f.metric_count > kMaxMetrics) throw FormatError("metric count exceeds limit", metric_at);
  r.zeros(2);
  auto node_count = r.get<std::uint32_t>();
  auto index_count = r.get<std::uint32_t>();
  auto counts_at = r.offset();
  auto value_count = r.get<std::uint64_t>();
  auto trace_count = r.get<std::uint64_t>();
  auto kind_at = r.offset();
  auto kind = r.get<std::uint8_t>();
  if (kind > 1) throw FormatError("unknown profile kind", kind_at);
  f.meta.kind = static_cast<ProfileKind>(kind);
  r.zeros(3);
  f.meta.rank = r.get<std::uint32_t>();
  f.meta.local_index = r.get<std::uint32_t>();

  if (node_count == 0) throw FormatError("measurement has no root node", kMeasHeaderSize);
  if (index_count == 0) throw FormatError("missing sentinel", kMeasHeaderSize);
  // Reject counts that cannot fit before allocating anything.
  std::uint64_t fixed = std::uint64_t{kMeasNodeSize} * node_count + std::uint64_t{kIndexEntrySize} * index_count;
  if (value_count > bytes.size() || trace_count > bytes.size() || fixed + kValueEntrySize * value_count +
                                                                         ((flags & kFlagTrace) ? kTraceEntrySize * trace_count : 0) >
                                                                     r.remaining())
    throw FormatError("section sizes exceed file size", counts_at);
  if (!(flags & kFlagTrace) && trace_count != 0) throw FormatError("trace count without trace flag", counts_at);

  f.nodes.clear();
  f.nodes.reserve(node_count);
  std::vector<std::uint64_t> binary_refs;
  for (std::uint32_t i = 0; i < node_count; ++i) {
    auto at = r.offset();
    LocalNode n;
    n.parent = ContextId(r.get<std::uint32_t>());
    n.binary = r.get<std::uint32_t>();
    n.offset = r.get<std::uint64_t>();
    if (i == 0 && n != LocalNode{}) throw FormatError("root node carries a payload", at);
    if (i > 0 && n.parent.value() >= i) throw FormatError("node parent does not precede child", at);
    if (i > 0) binary_refs.push_back(at + 4);
    f.nodes.push_back(n);
  }

  f.plane.index.clear();
  f.plane.index.reserve(index_count);
  for (std::uint32_t g = 0; g < index_count; ++g) {
    auto at = r.offset();
    auto c = r.get<std::uint32_t>();
    auto i = r.get<std::uint64_t>();
    bool last = g + 1 == index_count;
    if (last) {
      if (c != kTopContext) throw FormatError("missing sentinel", at);
      if (i != value_count) throw FormatError("sentinel does not match value count", at);
    } else {
      if (c >= node_count) throw FormatError("dangling context id", at);
      if (g > 0 && c <= f.plane.index.back().key) throw FormatError("non-monotone context index", at);
      if (g == 0 && i != 0) throw FormatError("first group does not start at zero", at);
    }
    if (g > 0 && i < f.plane.index.back().start) throw FormatError("decreasing value offset", at);
    f.plane.index.push_back({c, i});
  }

  if (index_count == 1 && value_count != 0) throw FormatError("values without context index", counts_at);
  f.plane.values.reserve(value_count);
  std::size_t group = 0;
  for (std::uint64_t v = 0; v < value_count; ++v) {
    auto at = r.offset();
    while (f.plane.index[group + 1].start <= v) ++group;
    auto m = r.get<std::uint16_t>();
    r.zeros(2);
    auto x = r.get<double>();
    if (m >= f.metric_count) throw FormatError("unknown metric id", at);
    if (x == 0.0) throw FormatError("zero stored value", at);
    if (!std::isfinite(x)) throw FormatError("non-finite stored value", at);
    if (v > f.plane.index[group].start && m <= f.plane.values.back().key) throw FormatError("non-monotone metric ids", at);
    f.plane.values.push_back({m, x});
  }

  if (flags & kFlagTrace) {
    std::vector<TraceSample> trace;
    trace.reserve(trace_count);
    for (std::uint64_t i = 0; i < trace_count; ++i) {
      auto at = r.offset();
      TraceSample s;
      s.timestamp_ns = r.get<std::uint64_t>();
      s.ctx = ContextId(r.get<std::uint32_t>());
      r.zeros(4);
      if (s.ctx.value() >= node_count) throw FormatError("dangling context id in trace", at);
      if (!trace.empty() && s.timestamp_ns < trace.back().timestamp_ns) throw FormatError("trace timestamps decrease", at);
      trace.push_back(s);
    }
    f.trace = std::move(trace);
  }

  if (flags & kFlagBinaries) {
    auto at = r.offset();
    auto n = r.get<std::uint32_t>();
    if (n == 0 || n > r.remaining() / 4) throw FormatError("bad binary table size", at);
    f.binaries.reserve(n);
    for (std::uint32_t i = 0; i < n; ++i) f.binaries.push_back(r.str(4096));
  }
  for (std::size_t i = 1; i < f.nodes.size(); ++i)
    if (f.nodes[i].binary >= f.binaries.size()) throw FormatError("node references unknown binary", binary_refs[i - 1]);

  if (!r.at_end()) throw FormatError("trailing bytes", r.offset());
  return f;
}

std::uint64_t write_measurement(const MeasurementFile& f, const std::filesystem::path& dest) {
  auto bytes = encode_measurement(f);
  write_file(dest, bytes);
  return bytes.size();
}

MeasurementFile read_measurement(const std::filesystem::path& src) {
  auto bytes = read_file(src);
  try {
    return decode_measurement(bytes);
  } catch (const FormatError& e) {
    throw FormatError(src.string() + ": " + e.reason(), e.offset());
  }
}

Density density_stats(const MeasurementFile& f, std::uint32_t metric_count) {
  Density d;
  auto groups = f.plane.group_count();
  if (f.nodes.empty() || groups == 0 || metric_count == 0) return d;
  d.contexts = static_cast<double>(groups) / static_cast<double>(f.nodes.size());
  double sum = 0;
  for (std::size_t g = 0; g < groups; ++g) sum += static_cast<double>(f.plane.run(g).size()) / metric_count;
  d.metrics = sum / static_cast<double>(groups);
  return d;
}

}  // namespace sparseprof

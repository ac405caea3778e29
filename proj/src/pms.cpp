#include <algorithm>
#include <numeric>

#include "sparseprof/result_formats.hpp"

namespace sparseprof {

namespace {

constexpr std::string_view kPmsMagic = "SPDB";

template <class Outer, class Inner>
std::vector<std::uint8_t> encode_csr(const CsrPlane<Outer, Inner>& p) {
  std::vector<std::uint8_t> out;
  out.reserve(plane_bytes(p.group_count(), p.values.size()));
  ByteWriter w(out);
  for (const auto& g : p.index) {
    if constexpr (sizeof(Outer) == 2) {
      w.put<std::uint16_t>(g.key);
      w.pad(2);
    } else {
      w.put<std::uint32_t>(g.key);
    }
    w.put<std::uint64_t>(g.start);
  }
  for (const auto& e : p.values) {
    if constexpr (sizeof(Inner) == 2) {
      w.put<std::uint16_t>(e.key);
      w.pad(2);
    } else {
      w.put<std::uint32_t>(e.key);
    }
    w.put<double>(e.value);
  }
  return out;
}

template <class Outer, class Inner>
CsrPlane<Outer, Inner> decode_csr(std::span<const std::uint8_t> bytes, std::uint32_t groups, std::uint64_t base) {
  using Plane = CsrPlane<Outer, Inner>;
  std::uint64_t index_bytes = kIndexEntrySize * (std::uint64_t{groups} + 1);
  if (bytes.size() < index_bytes || (bytes.size() - index_bytes) % kValueEntrySize != 0)
    throw FormatError("plane size inconsistent with group count", base);
  std::size_t nvalues = (bytes.size() - index_bytes) / kValueEntrySize;

  ByteReader r(bytes, base);
  Plane p;
  p.index.clear();
  p.index.reserve(groups + 1);
  for (std::uint32_t g = 0; g <= groups; ++g) {
    Outer key;
    if constexpr (sizeof(Outer) == 2) {
      key = r.get<std::uint16_t>();
      r.zeros(2);
    } else {
      key = r.get<std::uint32_t>();
    }
    p.index.push_back({key, r.get<std::uint64_t>()});
  }
  p.values.reserve(nvalues);
  for (std::size_t i = 0; i < nvalues; ++i) {
    Inner key;
    if constexpr (sizeof(Inner) == 2) {
      key = r.get<std::uint16_t>();
      r.zeros(2);
    } else {
      key = r.get<std::uint32_t>();
    }
    p.values.push_back({key, r.get<double>()});
  }
  if (auto d = check_plane(p)) throw FormatError("plane: " + d->reason, base + kIndexEntrySize * d->group);
  return p;
}

void put_header(ByteWriter& w, const PmsHeader& h) {
  w.tag(kPmsMagic);
  w.put<std::uint16_t>(kPmsVersion);
  w.put<std::uint16_t>(0);
  w.put<std::uint32_t>(h.toc_count);
  w.put<std::uint16_t>(h.metric_count);
  w.pad(2);
  w.put<std::uint32_t>(h.context_count);
  w.put<std::uint32_t>(h.binary_count);
  w.put<std::uint64_t>(h.toc_offset);
  w.put<std::uint64_t>(h.tree_offset);
  w.put<std::uint64_t>(h.tree_size);
  w.put<std::uint64_t>(h.binaries_offset);
  w.put<std::uint64_t>(h.binaries_size);
  w.put<std::uint64_t>(h.planes_offset);
}

void put_toc(ByteWriter& w, std::span<const TocEntry> toc) {
  for (const auto& t : toc) {
    w.put<std::uint32_t>(t.id);
    w.put<std::uint32_t>(t.groups);
    w.put<std::uint64_t>(t.offset);
    w.put<std::uint64_t>(t.size);
  }
}

std::vector<std::uint8_t> encode_binaries(std::span<const std::string> binaries) {
  std::vector<std::uint8_t> out;
  ByteWriter w(out);
  for (const auto& b : binaries) w.str(b);
  return out;
}

void check_range(std::uint64_t offset, std::uint64_t size, std::uint64_t file_size, std::uint64_t at, const char* what) {
  if (offset > file_size || size > file_size - offset) throw FormatError(std::string(what) + " past end of file", at);
}

}  // namespace

std::vector<std::uint8_t> encode_plane(const SparsePlane& p) { return encode_csr(p); }
std::vector<std::uint8_t> encode_plane(const ContextPlane& p) { return encode_csr(p); }

SparsePlane decode_sparse_plane(std::span<const std::uint8_t> bytes, std::uint32_t groups, std::uint64_t base) {
  return decode_csr<std::uint32_t, std::uint16_t>(bytes, groups, base);
}

ContextPlane decode_context_plane(std::span<const std::uint8_t> bytes, std::uint32_t groups, std::uint64_t base) {
  return decode_csr<std::uint16_t, std::uint32_t>(bytes, groups, base);
}

std::vector<std::uint8_t> encode_tree(std::span<const NodeRecord> records) {
  std::vector<std::uint8_t> out;
  ByteWriter w(out);
  for (const auto& r : records) {
    w.put<std::uint32_t>(r.id.value());
    w.put<std::uint32_t>(r.parent.value());
    w.put<std::uint8_t>(static_cast<std::uint8_t>(r.frame.kind));
    switch (r.frame.kind) {
      case FrameKind::root: break;
      case FrameKind::function:
      case FrameKind::inlined: w.str(r.frame.name); break;
      case FrameKind::loop:
      case FrameKind::line:
        w.str(r.frame.file);
        w.put<std::uint32_t>(r.frame.lineno);
        break;
      case FrameKind::instruction:
        w.put<std::uint32_t>(r.frame.binary.value());
        w.put<std::uint64_t>(r.frame.offset);
        break;
    }
  }
  return out;
}

std::vector<NodeRecord> decode_tree(std::span<const std::uint8_t> bytes, std::uint32_t count, std::uint64_t base) {
  ByteReader r(bytes, base);
  std::vector<NodeRecord> out;
  out.reserve(std::min<std::size_t>(count, bytes.size() / 9));
  for (std::uint32_t i = 0; i < count; ++i) {
    auto at = r.offset();
    NodeRecord n;
    n.id = ContextId(r.get<std::uint32_t>());
    n.parent = ContextId(r.get<std::uint32_t>());
    auto kind = r.get<std::uint8_t>();
    if (kind > static_cast<std::uint8_t>(FrameKind::instruction)) throw FormatError("unknown frame kind", at);
    n.frame.kind = static_cast<FrameKind>(kind);
    switch (n.frame.kind) {
      case FrameKind::root: break;
      case FrameKind::function:
      case FrameKind::inlined: n.frame.name = r.str(); break;
      case FrameKind::loop:
      case FrameKind::line:
        n.frame.file = r.str();
        n.frame.lineno = r.get<std::uint32_t>();
        break;
      case FrameKind::instruction:
        n.frame.binary = BinaryId(r.get<std::uint32_t>());
        n.frame.offset = r.get<std::uint64_t>();
        break;
    }
    if (n.id.value() != i) throw FormatError("tree records out of id order", at);
    if (i == 0 && (n.frame.kind != FrameKind::root || n.parent != kRootContext)) throw FormatError("bad tree root", at);
    if (i > 0 && (n.parent >= n.id || n.frame.kind == FrameKind::root)) throw FormatError("bad tree parent", at);
    out.push_back(std::move(n));
  }
  if (!r.at_end()) throw FormatError("trailing bytes in tree section", r.offset());
  return out;
}

// ---------------------------------------------------------------------------

PmsWriter::PmsWriter(const std::filesystem::path& path, Layout layout) : file_(path, File::Mode::create) {
  init(layout);
}

PmsWriter::PmsWriter(const std::filesystem::path& path, Layout layout, std::span<const NodeRecord> tree,
                     std::span<const std::string> binaries)
    : file_(path, File::Mode::create) {
  init(layout);
  auto t = encode_tree(tree);
  auto b = encode_binaries(binaries);
  std::uint64_t at = cursor_.load();
  file_.pwrite(t, at);
  file_.pwrite(b, at + t.size());
  tree_at_ = {at, t.size()};
  binaries_at_ = {at + t.size(), b.size()};
  tree_count_ = static_cast<std::uint32_t>(tree.size());
  binary_count_ = static_cast<std::uint32_t>(binaries.size());
  cursor_ = at + t.size() + b.size();
  planes_offset_ = cursor_.load();
}

void PmsWriter::init(Layout layout) {
  layout_ = layout;
  toc_.resize(std::size_t{layout.profiles} + 1);
  written_ = std::make_unique<std::atomic<bool>[]>(toc_.size());
  planes_offset_ = kPmsHeaderSize + kTocEntrySize * toc_.size();
  cursor_ = planes_offset_;
}

std::pair<std::uint64_t, std::uint64_t> PmsWriter::write_plane(ProfileId p, const SparsePlane& plane) {
  if (p.value() >= toc_.size()) throw InvariantError("profile id out of range for PMS");
  if (written_[p.value()].exchange(true)) throw InvariantError("profile " + std::to_string(p.value()) + " written twice");
  auto bytes = encode_plane(plane);
  auto offset = cursor_.fetch_add(bytes.size());
  file_.pwrite(bytes, offset);
  toc_[p.value()] = {p.value(), static_cast<std::uint32_t>(plane.group_count()), offset, bytes.size()};
  return {offset, bytes.size()};
}

std::uint64_t PmsWriter::finish() {
  if (!tree_at_) throw InvariantError("PMS tree section was not provided");
  return finish({}, {});
}

std::uint64_t PmsWriter::finish(std::span<const NodeRecord> tree, std::span<const std::string> binaries) {
  for (std::size_t i = 0; i < toc_.size(); ++i)
    if (!written_[i].load()) throw InvariantError("profile " + std::to_string(i) + " missing from PMS");
  if (!tree_at_) {
    auto t = encode_tree(tree);
    auto b = encode_binaries(binaries);
    auto at = cursor_.fetch_add(t.size() + b.size());
    file_.pwrite(t, at);
    file_.pwrite(b, at + t.size());
    tree_at_ = {at, t.size()};
    binaries_at_ = {at + t.size(), b.size()};
    tree_count_ = static_cast<std::uint32_t>(tree.size());
    binary_count_ = static_cast<std::uint32_t>(binaries.size());
  }
  PmsHeader h;
  h.toc_count = static_cast<std::uint32_t>(toc_.size());
  h.metric_count = layout_.metric_count;
  h.context_count = tree_count_;
  h.binary_count = binary_count_;
  h.toc_offset = kPmsHeaderSize;
  h.tree_offset = tree_at_->first;
  h.tree_size = tree_at_->second;
  h.binaries_offset = binaries_at_->first;
  h.binaries_size = binaries_at_->second;
  h.planes_offset = planes_offset_;
  std::vector<std::uint8_t> head;
  ByteWriter w(head);
  put_header(w, h);
  put_toc(w, toc_);
  file_.pwrite(head, 0);
  return cursor_.load();
}

// ---------------------------------------------------------------------------

ProfileDb ProfileDb::open(const std::filesystem::path& path) {
  ProfileDb db;
  db.file_ = std::make_shared<File>(path, File::Mode::read);
  auto fsize = db.file_->size();
  try {
    if (fsize < kPmsHeaderSize) throw FormatError("truncated", fsize);
    auto head = db.file_->read_range(0, kPmsHeaderSize);
    ByteReader r(head);
    r.expect_tag(kPmsMagic);
    if (r.get<std::uint16_t>() != kPmsVersion) throw FormatError("unsupported version", 4);
    r.zeros(2);
    auto& h = db.header_;
    h.toc_count = r.get<std::uint32_t>();
    h.metric_count = r.get<std::uint16_t>();
    r.zeros(2);
    h.context_count = r.get<std::uint32_t>();
    h.binary_count = r.get<std::uint32_t>();
    h.toc_offset = r.get<std::uint64_t>();
    h.tree_offset = r.get<std::uint64_t>();
    h.tree_size = r.get<std::uint64_t>();
    h.binaries_offset = r.get<std::uint64_t>();
    h.binaries_size = r.get<std::uint64_t>();
    h.planes_offset = r.get<std::uint64_t>();
    if (h.toc_count == 0) throw FormatError("empty table of contents", 8);
    if (h.context_count == 0) throw FormatError("empty context tree", 16);
    check_range(h.toc_offset, kTocEntrySize * std::uint64_t{h.toc_count}, fsize, 24, "table of contents");
    check_range(h.tree_offset, h.tree_size, fsize, 32, "tree section");
    check_range(h.binaries_offset, h.binaries_size, fsize, 48, "binary section");

    auto tocb = db.file_->read_range(h.toc_offset, kTocEntrySize * std::uint64_t{h.toc_count});
    ByteReader tr(tocb, h.toc_offset);
    db.toc_.reserve(h.toc_count);
    for (std::uint32_t i = 0; i < h.toc_count; ++i) {
      auto at = tr.offset();
      TocEntry t{tr.get<std::uint32_t>(), tr.get<std::uint32_t>(), tr.get<std::uint64_t>(), tr.get<std::uint64_t>()};
      if (t.id != i) throw FormatError("table of contents out of profile order", at);
      check_range(t.offset, t.size, fsize, at, "plane");
      if (t.size < plane_bytes(t.groups, 0)) throw FormatError("plane smaller than its index", at);
      db.toc_.push_back(t);
    }
    std::vector<TocEntry> sorted = db.toc_;
    std::sort(sorted.begin(), sorted.end(), [](auto& a, auto& b) { return a.offset < b.offset; });
    for (std::size_t i = 1; i < sorted.size(); ++i)
      if (sorted[i - 1].offset + sorted[i - 1].size > sorted[i].offset)
        throw FormatError("overlapping planes", h.toc_offset + kTocEntrySize * sorted[i].id);

    auto treeb = db.file_->read_range(h.tree_offset, h.tree_size);
    db.tree_ = decode_tree(treeb, h.context_count, h.tree_offset);
    auto binb = db.file_->read_range(h.binaries_offset, h.binaries_size);
    ByteReader br(binb, h.binaries_offset);
    for (std::uint32_t i = 0; i < h.binary_count; ++i) db.binaries_.push_back(br.str());
    if (!br.at_end()) throw FormatError("trailing bytes in binary section", br.offset());
    for (const auto& n : db.tree_)
      if (n.frame.kind == FrameKind::instruction && n.frame.binary.value() >= h.binary_count)
        throw FormatError("tree references unknown binary", h.tree_offset);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.reason(), e.offset());
  }
  return db;
}

SparsePlane ProfileDb::plane(ProfileId p) const {
  if (p.value() >= toc_.size()) throw NotFoundError("unknown profile " + std::to_string(p.value()));
  const auto& t = toc_[p.value()];
  auto bytes = file_->read_range(t.offset, t.size);
  auto plane = decode_sparse_plane(bytes, t.groups, t.offset);
  for (std::size_t g = 0; g < plane.group_count(); ++g)
    if (plane.index[g].key >= header_.context_count)
      throw FormatError("plane references unknown context", t.offset + kIndexEntrySize * g);
  return plane;
}

std::optional<double> ProfileDb::value(ProfileId p, ContextId c, std::uint16_t key, std::size_t* probes) const {
  return plane_lookup(plane(p), c.value(), key, probes);
}

ResultDensity pms_density(const ProfileDb& db) {
  ResultDensity d;
  d.profiles = db.profile_count();
  d.contexts = db.header().context_count;
  for (std::uint32_t p = 1; p <= d.profiles; ++p) {
    const auto& t = db.toc()[p];
    d.nonempty += t.groups;
    d.nonzeros += (t.size - plane_bytes(t.groups, 0)) / kValueEntrySize;
  }
  if (d.profiles && d.contexts) d.ctx_density = double(d.nonempty) / (double(d.profiles) * d.contexts);
  if (d.nonempty && db.metric_count())
    d.metric_density = double(d.nonzeros) / (double(d.nonempty) * 2.0 * db.metric_count());
  return d;
}

SparsePlane remap_plane(const SparsePlane& p, std::span<const ContextId> mapping) {
  std::vector<std::pair<std::uint32_t, std::size_t>> order;
  order.reserve(p.group_count());
  for (std::size_t g = 0; g < p.group_count(); ++g) order.emplace_back(mapping[p.index[g].key].value(), g);
  std::sort(order.begin(), order.end());
  PlaneBuilder<std::uint32_t, std::uint16_t> b;
  for (auto [key, g] : order) {
    b.begin(key);
    for (const auto& e : p.run(g)) b.add(e.key, e.value);
  }
  return b.finish();
}

CanonicalMaps canonical_maps(std::span<const NodeRecord> tree, std::span<const std::string> binaries) {
  CanonicalMaps maps;
  std::vector<std::uint32_t> order(binaries.size());
  std::iota(order.begin(), order.end(), 0u);
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return binaries[a] < binaries[b]; });
  maps.binaries.resize(binaries.size());
  for (std::uint32_t i = 0; i < order.size(); ++i) maps.binaries[order[i]] = BinaryId(i);

  std::vector<NodeRecord> renamed(tree.begin(), tree.end());
  for (auto& n : renamed)
    if (n.frame.kind == FrameKind::instruction) n.frame.binary = maps.binaries[n.frame.binary.value()];
  maps.contexts = canonical_order(renamed);
  return maps;
}

std::vector<ContextId> canonicalize_pms(const ProfileDb& raw, const std::filesystem::path& dest) {
  auto maps = canonical_maps(raw.tree(), raw.binaries());
  std::vector<NodeRecord> renamed = raw.tree();
  for (auto& n : renamed)
    if (n.frame.kind == FrameKind::instruction) n.frame.binary = maps.binaries[n.frame.binary.value()];
  auto tree = relabel_records(renamed, maps.contexts);
  std::vector<std::string> bins(raw.binaries().size());
  for (std::size_t i = 0; i < bins.size(); ++i) bins[maps.binaries[i].value()] = raw.binaries()[i];

  PmsWriter w(dest, {raw.profile_count(), raw.metric_count()}, tree, bins);
  for (std::uint32_t p = 0; p <= raw.profile_count(); ++p)
    w.write_plane(ProfileId(p), remap_plane(raw.plane(ProfileId(p)), maps.contexts));
  w.finish();
  return maps.contexts;
}

}  // namespace sparseprof

#include <algorithm>
#include <queue>

#include "sparseprof/parallel.hpp"
#include "sparseprof/result_formats.hpp"

namespace sparseprof {

namespace {

constexpr std::string_view kCmsMagic = "SCDB";

struct Cursor {
  std::uint32_t ctx;
  std::uint32_t profile;  // index into the loaded planes (profile id - 1)
  std::size_t group;
};

struct CursorAfter {
  bool operator()(const Cursor& a, const Cursor& b) const {
    return a.ctx != b.ctx ? a.ctx > b.ctx : a.profile > b.profile;
  }
};

struct Triple {
  std::uint16_t key;
  std::uint32_t profile;
  double value;
};

}  // namespace

TransposeStats transpose_to_cms(const ProfileDb& pms, const std::filesystem::path& dest, unsigned threads) {
  const std::uint32_t P = pms.profile_count();
  const std::uint32_t C = pms.header().context_count;

  std::vector<SparsePlane> planes;
  planes.reserve(P);
  for (std::uint32_t p = 1; p <= P; ++p) planes.push_back(pms.plane(ProfileId(p)));

  // Sizes are fixed before any plane is written so workers never coordinate.
  std::vector<std::uint64_t> entries(C, 0);
  std::vector<std::vector<std::uint16_t>> keys(C);
  for (const auto& pl : planes)
    for (std::size_t g = 0; g < pl.group_count(); ++g) {
      auto c = pl.index[g].key;
      auto run = pl.run(g);
      entries[c] += run.size();
      for (const auto& e : run) keys[c].push_back(e.key);
    }

  std::vector<TocEntry> toc;
  std::uint64_t total_entries = 0;
  for (std::uint32_t c = 0; c < C; ++c) {
    auto& k = keys[c];
    if (k.empty()) continue;
    std::sort(k.begin(), k.end());
    k.erase(std::unique(k.begin(), k.end()), k.end());
    toc.push_back({c, static_cast<std::uint32_t>(k.size()), 0, plane_bytes(k.size(), entries[c])});
    total_entries += entries[c];
    std::vector<std::uint16_t>().swap(k);
  }
  std::uint64_t cursor = kCmsHeaderSize + kTocEntrySize * toc.size();
  for (auto& t : toc) {
    t.offset = cursor;
    cursor += t.size;
  }

  File out(dest, File::Mode::create);
  {
    std::vector<std::uint8_t> head;
    ByteWriter w(head);
    w.tag(kCmsMagic);
    w.put<std::uint16_t>(kCmsVersion);
    w.put<std::uint16_t>(0);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(toc.size()));
    w.put<std::uint32_t>(P);
    w.put<std::uint16_t>(pms.metric_count());
    w.pad(2);
    w.pad(4);
    for (const auto& t : toc) {
      w.put<std::uint32_t>(t.id);
      w.put<std::uint32_t>(t.groups);
      w.put<std::uint64_t>(t.offset);
      w.put<std::uint64_t>(t.size);
    }
    out.pwrite(head, 0);
  }

  // Contiguous toc ranges with roughly equal entry counts.
  threads = std::max(1u, std::min<unsigned>(threads, std::max<std::size_t>(toc.size(), 1)));
  std::vector<std::size_t> bounds{0};
  {
    std::uint64_t acc = 0;
    for (std::size_t i = 0; i < toc.size() && bounds.size() < threads; ++i) {
      acc += entries[toc[i].id];
      if (acc * threads >= total_entries * bounds.size()) bounds.push_back(i + 1);
    }
    while (bounds.size() <= threads) bounds.push_back(toc.size());
    bounds.back() = toc.size();
  }

  std::vector<std::size_t> max_heap(threads, 0);
  run_workers(threads, [&](unsigned w) {
    std::size_t lo = bounds[w], hi = bounds[w + 1];
    if (lo >= hi) return;
    std::uint32_t c_lo = toc[lo].id;
    std::uint32_t c_end = toc[hi - 1].id + 1;

    std::priority_queue<Cursor, std::vector<Cursor>, CursorAfter> heap;
    for (std::uint32_t p = 0; p < P; ++p) {
      const auto& idx = planes[p].index;
      auto it = std::lower_bound(idx.begin(), idx.end() - 1, c_lo, [](const auto& g, std::uint32_t c) { return g.key < c; });
      auto g = static_cast<std::size_t>(it - idx.begin());
      if (g < planes[p].group_count() && idx[g].key < c_end) heap.push({idx[g].key, p, g});
    }

    std::size_t t = lo;
    std::vector<Triple> buf;
    auto flush = [&] {
      std::stable_sort(buf.begin(), buf.end(), [](const Triple& a, const Triple& b) { return a.key < b.key; });
      PlaneBuilder<std::uint16_t, std::uint32_t> b;
      for (std::size_t i = 0; i < buf.size(); ++i) {
        if (i == 0 || buf[i].key != buf[i - 1].key) b.begin(buf[i].key);
        b.add(buf[i].profile + 1, buf[i].value);
      }
      auto bytes = encode_plane(b.finish());
      if (bytes.size() != toc[t].size) throw InvariantError("context plane size changed during transpose");
      out.pwrite(bytes, toc[t].offset);
      buf.clear();
      ++t;
    };

    while (!heap.empty()) {
      max_heap[w] = std::max(max_heap[w], heap.size());
      auto top = heap.top();
      heap.pop();
      if (top.ctx != toc[t].id) flush();
      for (const auto& e : planes[top.profile].run(top.group)) buf.push_back({e.key, top.profile, e.value});
      auto next = top.group + 1;
      const auto& idx = planes[top.profile].index;
      if (next < planes[top.profile].group_count() && idx[next].key < c_end)
        heap.push({idx[next].key, top.profile, next});
    }
    flush();
    if (t != hi) throw InvariantError("transpose worker skipped contexts");
  });

  TransposeStats st;
  st.contexts = toc.size();
  st.entries = total_entries;
  st.max_heap = *std::max_element(max_heap.begin(), max_heap.end());
  st.bytes = cursor;
  return st;
}

ContextDb ContextDb::open(const std::filesystem::path& path) {
  ContextDb db;
  db.file_ = std::make_shared<File>(path, File::Mode::read);
  auto fsize = db.file_->size();
  try {
    if (fsize < kCmsHeaderSize) throw FormatError("truncated", fsize);
    auto head = db.file_->read_range(0, kCmsHeaderSize);
    ByteReader r(head);
    r.expect_tag(kCmsMagic);
    if (r.get<std::uint16_t>() != kCmsVersion) throw FormatError("unsupported version", 4);
    r.zeros(2);
    auto count = r.get<std::uint32_t>();
    db.profile_count_ = r.get<std::uint32_t>();
    db.metric_count_ = r.get<std::uint16_t>();
    r.zeros(6);
    if (std::uint64_t{count} * kTocEntrySize > fsize - kCmsHeaderSize) throw FormatError("table of contents past end of file", 8);
    auto tocb = db.file_->read_range(kCmsHeaderSize, kTocEntrySize * std::uint64_t{count});
    ByteReader tr(tocb, kCmsHeaderSize);
    std::uint64_t prev_end = kCmsHeaderSize + kTocEntrySize * std::uint64_t{count};
    for (std::uint32_t i = 0; i < count; ++i) {
      auto at = tr.offset();
      TocEntry t{tr.get<std::uint32_t>(), tr.get<std::uint32_t>(), tr.get<std::uint64_t>(), tr.get<std::uint64_t>()};
      if (!db.toc_.empty() && t.id <= db.toc_.back().id) throw FormatError("table of contents not increasing", at);
      if (t.groups == 0) throw FormatError("empty context plane listed", at);
      if (t.offset < prev_end || t.offset > fsize || t.size > fsize - t.offset) throw FormatError("plane out of range", at);
      if (t.size < plane_bytes(t.groups, 0)) throw FormatError("plane smaller than its index", at);
      prev_end = t.offset + t.size;
      db.toc_.push_back(t);
    }
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.reason(), e.offset());
  }
  return db;
}

ContextPlane ContextDb::plane(ContextId c, std::size_t* probes) const {
  auto pos = binary_find(std::span<const TocEntry>(toc_), c.value(), [](const TocEntry& t) { return t.id; }, probes);
  if (!pos) throw NotFoundError("context " + std::to_string(c.value()) + " has no values");
  const auto& t = toc_[*pos];
  auto bytes = file_->read_range(t.offset, t.size);
  auto plane = decode_context_plane(bytes, t.groups, t.offset);
  for (const auto& e : plane.values)
    if (e.key == 0 || e.key > profile_count_) throw FormatError("plane references unknown profile", t.offset);
  return plane;
}

std::optional<double> ContextDb::value(ContextId c, std::uint16_t key, ProfileId p, std::size_t* probes) const {
  auto pos = binary_find(std::span<const TocEntry>(toc_), c.value(), [](const TocEntry& t) { return t.id; }, probes);
  if (!pos) return std::nullopt;
  const auto& t = toc_[*pos];
  auto plane = decode_context_plane(file_->read_range(t.offset, t.size), t.groups, t.offset);
  return plane_lookup(plane, key, p.value(), probes);
}

}  // namespace sparseprof

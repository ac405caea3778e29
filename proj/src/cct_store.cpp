#include "sparseprof/cct_store.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <mutex>
#include <shared_mutex>
#include <unordered_map>

#include "sparseprof/errors.hpp"

namespace sparseprof {

struct CctStore::Node {
  ContextId id;
  ContextId parent;
  Frame frame;
  mutable std::shared_mutex mu;
  std::unordered_map<Frame, Node*, FrameHash> children;

  Node(ContextId i, ContextId p, Frame f) : id(i), parent(p), frame(std::move(f)) {}
};

namespace {

// Node slots live in geometrically growing chunks: chunk k holds
// 2^(k + kBaseBits) slots, so a 32-bit id space needs only a few dozen
// chunk pointers and existing slots never move.
constexpr unsigned kBaseBits = 10;
constexpr unsigned kChunks = 33 - kBaseBits;

struct SlotPos {
  unsigned chunk;
  std::uint64_t offset;
};

SlotPos slot_pos(std::uint32_t id) {
  std::uint64_t biased = std::uint64_t{id} + (std::uint64_t{1} << kBaseBits);
  unsigned width = static_cast<unsigned>(std::bit_width(biased)) - 1;
  return {width - kBaseBits, biased - (std::uint64_t{1} << width)};
}

}  // namespace

struct CctStore::State {
  std::array<std::atomic<std::atomic<Node*>*>, kChunks> chunks{};
  std::atomic<std::uint32_t> next_id{0};

  ~State() {
    auto n = next_id.load();
    for (std::uint32_t i = 0; i < n; ++i) delete slot(i).load();
    for (unsigned k = 0; k < kChunks; ++k) delete[] chunks[k].load();
  }

  std::atomic<Node*>& slot(std::uint32_t id) {
    auto pos = slot_pos(id);
    auto* chunk = chunks[pos.chunk].load(std::memory_order_acquire);
    if (!chunk) {
      auto* fresh = new std::atomic<Node*>[std::size_t{1} << (pos.chunk + kBaseBits)]();
      if (chunks[pos.chunk].compare_exchange_strong(chunk, fresh, std::memory_order_acq_rel))
        chunk = fresh;
      else
        delete[] fresh;
    }
    return chunk[pos.offset];
  }

  Node* create(ContextId parent, Frame f) {
    auto id = next_id.fetch_add(1, std::memory_order_relaxed);
    if (id == kTopContext) throw InvariantError("context id space exhausted");
    auto* n = new Node(ContextId(id), parent, std::move(f));
    slot(id).store(n, std::memory_order_release);
    return n;
  }
};

CctStore::CctStore() : state_(std::make_unique<State>()) { state_->create(kRootContext, Frame::root()); }
CctStore::~CctStore() = default;
CctStore::CctStore(CctStore&&) noexcept = default;
CctStore& CctStore::operator=(CctStore&&) noexcept = default;

CctStore::Node* CctStore::node(ContextId id) const {
  if (id.value() >= state_->next_id.load(std::memory_order_acquire)) throw NotFoundError("unknown context id");
  Node* n = state_->slot(id.value()).load(std::memory_order_acquire);
  if (!n) throw NotFoundError("context id not yet published");
  return n;
}

CctStore::Node* CctStore::child_of(Node* parent, const Frame& f) {
  {
    std::shared_lock lk(parent->mu);
    auto it = parent->children.find(f);
    if (it != parent->children.end()) return it->second;
  }
  std::unique_lock lk(parent->mu);
  auto [it, inserted] = parent->children.try_emplace(f, nullptr);
  if (inserted) it->second = state_->create(parent->id, f);
  return it->second;
}

ContextId CctStore::insert_path(std::span<const Frame> path) {
  if (path.empty() || path.front().kind != FrameKind::root) throw InvariantError("context path must start at the root");
  Node* cur = node(kRootContext);
  for (std::size_t i = 1; i < path.size(); ++i) cur = child_of(cur, path[i]);
  return cur->id;
}

ContextId CctStore::insert_child(ContextId parent, const Frame& f) { return child_of(node(parent), f)->id; }

std::optional<ContextId> CctStore::find_child(ContextId parent, const Frame& f) const {
  Node* p = node(parent);
  std::shared_lock lk(p->mu);
  auto it = p->children.find(f);
  if (it == p->children.end()) return std::nullopt;
  return it->second->id;
}

std::size_t CctStore::size() const { return state_->next_id.load(std::memory_order_acquire); }

ContextId CctStore::parent(ContextId id) const { return node(id)->parent; }

const Frame& CctStore::frame(ContextId id) const { return node(id)->frame; }

std::vector<NodeRecord> CctStore::snapshot() const {
  std::vector<NodeRecord> out;
  auto n = size();
  out.reserve(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    const Node* x = node(ContextId(i));
    out.push_back({x->id, x->parent, x->frame});
  }
  return out;
}

CctStore CctStore::clone() const {
  auto records = snapshot();
  return from_records(records);
}

CctStore CctStore::from_records(std::span<const NodeRecord> records) {
  CctStore out;
  for (std::size_t i = 1; i < records.size(); ++i) {
    const auto& r = records[i];
    if (r.id.value() != i || r.parent >= r.id) throw InvariantError("records are not in dense topological id order");
    auto got = out.insert_child(r.parent, r.frame);
    if (got != r.id) throw InvariantError("duplicate sibling frame in records");
  }
  return out;
}

std::vector<ContextId> merge_into(CctStore& dst, const CctStore& src) {
  auto n = src.size();
  std::vector<ContextId> map(n);
  map[0] = kRootContext;
  for (std::uint32_t i = 1; i < n; ++i) {
    ContextId id(i);
    map[i] = dst.insert_child(map[src.parent(id).value()], src.frame(id));
  }
  return map;
}

std::vector<ContextId> canonical_order(std::span<const NodeRecord> records) {
  auto n = records.size();
  std::vector<std::vector<std::uint32_t>> kids(n);
  for (std::size_t i = 1; i < n; ++i) kids[records[i].parent.value()].push_back(static_cast<std::uint32_t>(i));
  for (auto& k : kids)
    std::sort(k.begin(), k.end(), [&](std::uint32_t a, std::uint32_t b) { return records[a].frame < records[b].frame; });

  std::vector<ContextId> map(n);
  std::vector<std::uint32_t> stack{0};
  std::uint32_t next = 0;
  while (!stack.empty()) {
    auto cur = stack.back();
    stack.pop_back();
    map[cur] = ContextId(next++);
    for (auto it = kids[cur].rbegin(); it != kids[cur].rend(); ++it) stack.push_back(*it);
  }
  return map;
}

std::vector<NodeRecord> relabel_records(std::span<const NodeRecord> records, std::span<const ContextId> mapping) {
  std::vector<NodeRecord> out(records.size());
  for (const auto& r : records) {
    auto id = mapping[r.id.value()];
    out[id.value()] = {id, r.id == kRootContext ? kRootContext : mapping[r.parent.value()], r.frame};
  }
  return out;
}

std::vector<ContextId> canonical_relabel(CctStore& store) {
  auto records = store.snapshot();
  auto map = canonical_order(records);
  store = CctStore::from_records(relabel_records(records, map));
  return map;
}

std::vector<NodeRecord> canonical_records(const CctStore& store) {
  auto records = store.snapshot();
  return relabel_records(records, canonical_order(records));
}

}  // namespace sparseprof

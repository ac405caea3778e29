#pragma once

#include <atomic>
#include <cstddef>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "sparseprof/frame.hpp"
#include "sparseprof/ids.hpp"

namespace sparseprof {

/// Flat view of one tree node. Snapshots list these in id order.
struct NodeRecord {
  ContextId id;
  ContextId parent;
  Frame frame;
  friend bool operator==(const NodeRecord&, const NodeRecord&) = default;
};

/// Unified calling context tree shared by concurrent inserters.
///
/// Each node guards its child table with its own reader-writer lock. A lookup
/// takes the parent's lock in read mode; on a miss the lock is re-acquired in
/// write mode and the table re-checked before a child is created. Ids come
/// from a single atomic counter, are assigned once at creation and never
/// change, and every child id is greater than its parent's id.
///
/// insert_path / insert_child / find_child are safe from any number of
/// threads. Everything else requires a quiescent store.
class CctStore {
 public:
  CctStore();
  ~CctStore();
  CctStore(CctStore&&) noexcept;
  CctStore& operator=(CctStore&&) noexcept;
  CctStore(const CctStore&) = delete;
  CctStore& operator=(const CctStore&) = delete;

  /// Id of the leaf of `path`, creating missing nodes. path[0] must be the root.
  ContextId insert_path(std::span<const Frame> path);
  ContextId insert_child(ContextId parent, const Frame& f);
  std::optional<ContextId> find_child(ContextId parent, const Frame& f) const;

  std::size_t size() const;
  ContextId parent(ContextId id) const;
  const Frame& frame(ContextId id) const;

  std::vector<NodeRecord> snapshot() const;
  CctStore clone() const;

  /// Rebuilds the store from records listed in id order with dense ids.
  static CctStore from_records(std::span<const NodeRecord> records);

 private:
  struct Node;
  struct State;
  Node* node(ContextId id) const;
  Node* child_of(Node* parent, const Frame& f);

  std::unique_ptr<State> state_;
};

/// Inserts every path of `src` into `dst`. Returns the mapping indexed by src
/// id. Ids already present in dst are unchanged.
std::vector<ContextId> merge_into(CctStore& dst, const CctStore& src);

/// old id -> new id, where new ids are the preorder numbering with children
/// visited in Frame order. `records` must be in id order with dense ids.
std::vector<ContextId> canonical_order(std::span<const NodeRecord> records);

/// Applies a relabeling and returns the records sorted by new id.
std::vector<NodeRecord> relabel_records(std::span<const NodeRecord> records, std::span<const ContextId> mapping);

/// Renumbers `store` canonically in place; returns old id -> new id.
std::vector<ContextId> canonical_relabel(CctStore& store);

/// Canonically numbered snapshot; equal for isomorphic trees.
std::vector<NodeRecord> canonical_records(const CctStore& store);

}  // namespace sparseprof

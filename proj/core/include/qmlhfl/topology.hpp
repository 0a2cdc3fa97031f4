// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

namespace qmlhfl {

/// Address of a node: layer 0 holds devices, layers 1..N-1 edge servers and
/// layer N the single cloud server. Indices are dense per layer.
struct NodeRef {
  int layer = 0;
  int index = 0;
  friend bool operator==(const NodeRef&, const NodeRef&) = default;
};

/// Strict N-layer aggregation tree. Immutable once built; every query is
/// index based so iteration order is reproducible.
class Topology {
 public:
  /// Builds from layer sizes (layer 0 .. N, last entry must be 1) and a flat
  /// parent table over global node ids. Global ids enumerate layer 0 first,
  /// then layer 1, and so on; the cloud has no entry (the table has one entry
  /// per non-cloud node, -1 marks a missing parent).
  static Topology build(std::span<const int> layer_sizes, std::span<const int> parents);

  /// Builds a uniform tree: fanouts[0] devices per layer-1 server (or per
  /// cloud when N = 1), fanouts[n] layer-n nodes per layer-(n+1) node.
  /// N = fanouts.size().
  static Topology from_fanouts(std::span<const int> fanouts);

  int num_layers() const noexcept { return num_layers_; }
  int num_devices() const noexcept { return layer_size(0); }
  int layer_size(int layer) const { return static_cast<int>(subtree_.at(layer).size()); }

  /// Parent of a non-cloud node (always in layer + 1).
  int parent(NodeRef node) const { return parent_.at(node.layer).at(node.index); }
  /// Children of a non-device node (all in layer - 1).
  const std::vector<int>& children(NodeRef node) const {
    return children_.at(node.layer).at(node.index);
  }
  /// Number of devices below the node (1 for a device).
  int subtree_devices(NodeRef node) const { return subtree_.at(node.layer).at(node.index); }

  /// Devices below a node, ascending.
  std::vector<int> devices_under(NodeRef node) const;

  /// (C_1, ..., C_{N-1}, N_tot).
  std::vector<int> layer_counts() const;

  /// Per-layer fan-outs when the tree was built from a uniform rule.
  const std::optional<std::vector<int>>& fanouts() const noexcept { return fanouts_; }

  std::vector<int> layer_sizes() const;
  /// Flat parent table in the same form accepted by build().
  std::vector<int> flat_parents() const;

  friend bool operator==(const Topology& a, const Topology& b) {
    return a.num_layers_ == b.num_layers_ && a.parent_ == b.parent_ && a.children_ == b.children_ &&
           a.subtree_ == b.subtree_;
  }

 private:
  Topology() = default;
  static Topology from_parent_layers(std::vector<std::vector<int>> parent_layers);

  int num_layers_ = 0;
  std::vector<std::vector<int>> parent_;                // [layer 0..N-1][index]
  std::vector<std::vector<std::vector<int>>> children_;  // [layer 0..N][index] (empty at layer 0)
  std::vector<std::vector<int>> subtree_;               // [layer 0..N][index]
  std::optional<std::vector<int>> fanouts_;
};

/// Removes the lowest k edge layers of a uniform tree and attaches devices to
/// the first surviving layer; fan-outs of the removed layers multiply.
Topology reduce_depth(const Topology& topology, int removed_lower_layers);

}  // namespace qmlhfl

// SPDX-License-Identifier: Apache-2.0
#include "qmlhfl/topology.hpp"

#include <algorithm>
#include <functional>
#include <numeric>
#include <string>

#include "qmlhfl/errors.hpp"

namespace qmlhfl {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidLayerSizes: return "InvalidLayerSizes";
    case ErrorCode::kOrphanNode: return "OrphanNode";
    case ErrorCode::kEmptyServer: return "EmptyServer";
    case ErrorCode::kLayerSkip: return "LayerSkip";
    case ErrorCode::kTooDeep: return "TooDeep";
    case ErrorCode::kNotUniform: return "NotUniform";
    case ErrorCode::kBatchTooLarge: return "BatchTooLarge";
    case ErrorCode::kInsufficientPool: return "InsufficientPool";
    case ErrorCode::kUnknownDevice: return "UnknownDevice";
    case ErrorCode::kNonFiniteInput: return "NonFiniteInput";
    case ErrorCode::kInvalidQuantizer: return "InvalidQuantizer";
    case ErrorCode::kDimensionMismatch: return "DimensionMismatch";
    case ErrorCode::kQuantizerCountMismatch: return "QuantizerCountMismatch";
    case ErrorCode::kInvalidSchedule: return "InvalidSchedule";
    case ErrorCode::kLayerOutOfRange: return "LayerOutOfRange";
    case ErrorCode::kNeedsTwoLayers: return "NeedsTwoLayers";
    case ErrorCode::kWrongSpecialization: return "WrongSpecialization";
    case ErrorCode::kNoFeasibleMu: return "NoFeasibleMu";
    case ErrorCode::kInvalidParams: return "InvalidParams";
    case ErrorCode::kNonPositiveRate: return "NonPositiveRate";
    case ErrorCode::kLengthMismatch: return "LengthMismatch";
    case ErrorCode::kNonPositiveTau: return "NonPositiveTau";
    case ErrorCode::kInfeasibleStart: return "InfeasibleStart";
    case ErrorCode::kSubproblemFailure: return "SubproblemFailure";
    case ErrorCode::kNoFeasiblePoint: return "NoFeasiblePoint";
    case ErrorCode::kSearchTooLarge: return "SearchTooLarge";
    case ErrorCode::kRegimeViolation: return "RegimeViolation";
    case ErrorCode::kConfigError: return "ConfigError";
    case ErrorCode::kIoError: return "IoError";
  }
  return "Unknown";
}

Topology Topology::build(std::span<const int> layer_sizes, std::span<const int> parents) {
  if (layer_sizes.size() < 2) {
    throw Error(ErrorCode::kInvalidLayerSizes, "need at least devices and a cloud layer");
  }
  for (int s : layer_sizes) {
    if (s < 1) throw Error(ErrorCode::kInvalidLayerSizes, "every layer needs at least one node");
  }
  if (layer_sizes.back() != 1) {
    throw Error(ErrorCode::kInvalidLayerSizes, "top layer must hold exactly one cloud node");
  }
  const int num_layers = static_cast<int>(layer_sizes.size()) - 1;

  std::vector<int> offsets(layer_sizes.size() + 1, 0);
  for (std::size_t n = 0; n < layer_sizes.size(); ++n) offsets[n + 1] = offsets[n] + layer_sizes[n];
  const int non_cloud = offsets[num_layers];
  if (static_cast<int>(parents.size()) != non_cloud) {
    throw Error(ErrorCode::kOrphanNode, "parent table has " + std::to_string(parents.size()) +
                                            " entries, expected " + std::to_string(non_cloud));
  }

  std::vector<std::vector<int>> parent_layers(num_layers);
  for (int n = 0; n < num_layers; ++n) {
    parent_layers[n].resize(layer_sizes[n]);
    for (int i = 0; i < layer_sizes[n]; ++i) {
      const int gid = offsets[n] + i;
      const int p = parents[gid];
      if (p < 0 || p >= offsets[num_layers + 1]) {
        throw Error(ErrorCode::kOrphanNode,
                    "node " + std::to_string(i) + " of layer " + std::to_string(n) + " has no parent");
      }
      if (p < offsets[n + 1] || p >= offsets[n + 2]) {
        throw Error(ErrorCode::kLayerSkip, "node " + std::to_string(i) + " of layer " + std::to_string(n) +
                                               " points outside layer " + std::to_string(n + 1));
      }
      parent_layers[n][i] = p - offsets[n + 1];
    }
  }
  return from_parent_layers(std::move(parent_layers));
}

Topology Topology::from_parent_layers(std::vector<std::vector<int>> parent_layers) {
  Topology t;
  t.num_layers_ = static_cast<int>(parent_layers.size());
  const int N = t.num_layers_;

  // Layer sizes above 0 follow from the parent tables.
  std::vector<int> sizes(N + 1, 1);
  sizes[0] = static_cast<int>(parent_layers[0].size());
  for (int n = 1; n < N; ++n) sizes[n] = static_cast<int>(parent_layers[n].size());

  t.children_.assign(N + 1, {});
  t.children_[0].assign(sizes[0], {});
  for (int n = 1; n <= N; ++n) t.children_[n].assign(sizes[n], {});
  for (int n = 0; n < N; ++n) {
    for (int i = 0; i < sizes[n]; ++i) t.children_[n + 1][parent_layers[n][i]].push_back(i);
  }
  for (int n = 1; n <= N; ++n) {
    for (int i = 0; i < sizes[n]; ++i) {
      if (t.children_[n][i].empty()) {
        throw Error(ErrorCode::kEmptyServer,
                    "server " + std::to_string(i) + " of layer " + std::to_string(n) + " has no children");
      }
    }
  }

  t.subtree_.assign(N + 1, {});
  t.subtree_[0].assign(sizes[0], 1);
  for (int n = 1; n <= N; ++n) {
    t.subtree_[n].assign(sizes[n], 0);
    for (int i = 0; i < sizes[n]; ++i) {
      for (int c : t.children_[n][i]) t.subtree_[n][i] += t.subtree_[n - 1][c];
    }
  }
  t.parent_ = std::move(parent_layers);
  return t;
}

Topology Topology::from_fanouts(std::span<const int> fanouts) {
  if (fanouts.empty()) throw Error(ErrorCode::kInvalidLayerSizes, "fan-out list is empty");
  for (int f : fanouts) {
    if (f < 1) throw Error(ErrorCode::kEmptyServer, "fan-out must be at least 1");
  }
  const int N = static_cast<int>(fanouts.size());
  // Size of layer n is the product of the fan-outs above it.
  std::vector<int> sizes(N + 1, 1);
  for (int n = N - 1; n >= 0; --n) sizes[n] = sizes[n + 1] * fanouts[n];

  std::vector<std::vector<int>> parent_layers(N);
  for (int n = 0; n < N; ++n) {
    parent_layers[n].resize(sizes[n]);
    for (int i = 0; i < sizes[n]; ++i) parent_layers[n][i] = i / fanouts[n];
  }
  Topology t = from_parent_layers(std::move(parent_layers));
  t.fanouts_ = std::vector<int>(fanouts.begin(), fanouts.end());
  return t;
}

std::vector<int> Topology::devices_under(NodeRef node) const {
  if (node.layer == 0) return {node.index};
  std::vector<int> frontier{node.index};
  for (int n = node.layer; n > 0; --n) {
    std::vector<int> next;
    for (int i : frontier) {
      const auto& ch = children_[n][i];
      next.insert(next.end(), ch.begin(), ch.end());
    }
    frontier = std::move(next);
  }
  std::sort(frontier.begin(), frontier.end());
  return frontier;
}

std::vector<int> Topology::layer_counts() const {
  std::vector<int> out;
  for (int n = 1; n < num_layers_; ++n) out.push_back(layer_size(n));
  out.push_back(num_devices());
  return out;
}

std::vector<int> Topology::layer_sizes() const {
  std::vector<int> out;
  for (int n = 0; n <= num_layers_; ++n) out.push_back(layer_size(n));
  return out;
}

std::vector<int> Topology::flat_parents() const {
  std::vector<int> offsets(num_layers_ + 2, 0);
  for (int n = 0; n <= num_layers_; ++n) offsets[n + 1] = offsets[n] + layer_size(n);
  std::vector<int> out;
  for (int n = 0; n < num_layers_; ++n) {
    for (int p : parent_[n]) out.push_back(offsets[n + 1] + p);
  }
  return out;
}

Topology reduce_depth(const Topology& topology, int removed_lower_layers) {
  const int N = topology.num_layers();
  if (removed_lower_layers < 0) throw Error(ErrorCode::kInvalidLayerSizes, "negative layer count");
  if (removed_lower_layers >= N) {
    throw Error(ErrorCode::kTooDeep, "cannot remove " + std::to_string(removed_lower_layers) +
                                         " layers from a " + std::to_string(N) + "-layer tree");
  }
  if (!topology.fanouts()) {
    throw Error(ErrorCode::kNotUniform, "depth reduction needs a tree built from fan-outs");
  }
  const auto& f = *topology.fanouts();
  std::vector<int> reduced;
  reduced.push_back(std::accumulate(f.begin(), f.begin() + removed_lower_layers + 1, 1, std::multiplies<>()));
  reduced.insert(reduced.end(), f.begin() + removed_lower_layers + 1, f.end());
  return Topology::from_fanouts(reduced);
}

}  // namespace qmlhfl

#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "flower/tensor.hpp"

namespace flower::graph {

using AdjacencyMatrix = std::vector<std::vector<std::uint8_t>>;

// Validated DAG of operations. Nodes carry an operation index into a shared
// vocabulary; the one-hot feature matrix is derived on demand. Immutable
// after construction.
class ArchitectureGraph {
 public:
  // Throws on cycles (message lists one cycle) or out-of-range op indices.
  ArchitectureGraph(AdjacencyMatrix adjacency, std::vector<int> ops,
                    std::shared_ptr<const std::vector<std::string>> vocab);

  // Builds from a raw one-hot feature matrix; rejects rows that are not
  // exactly one-hot (message names the row index).
  static ArchitectureGraph from_features(AdjacencyMatrix adjacency,
                                         const std::vector<std::vector<std::uint8_t>>& features,
                                         std::shared_ptr<const std::vector<std::string>> vocab);

  int num_nodes() const { return n_; }
  bool edge(int from, int to) const { return adj_[from][to] != 0; }
  const AdjacencyMatrix& adjacency() const { return adj_; }
  const std::vector<int>& ops() const { return ops_; }
  const std::vector<std::string>& vocab() const { return *vocab_; }
  std::shared_ptr<const std::vector<std::string>> vocab_ptr() const { return vocab_; }

  const std::vector<int>& in_neighbors(int node) const { return in_[node]; }
  const std::vector<int>& out_neighbors(int node) const { return out_[node]; }
  int num_edges() const;

  // N x D one-hot feature matrix, untracked.
  ad::Tensor features() const;

  // A' = P A P^T, X' = P X where perm[i] is the new index of old node i.
  // Throws if perm is not a bijection on node indices.
  ArchitectureGraph permuted(const std::vector<int>& perm) const;

 private:
  int n_ = 0;
  AdjacencyMatrix adj_;
  std::vector<int> ops_;
  std::shared_ptr<const std::vector<std::string>> vocab_;
  std::vector<std::vector<int>> in_, out_;
};

// Ordered partition of node indices: generation k holds the nodes whose
// in-degree drops to zero once generations 1..k-1 are removed.
using Generations = std::vector<std::vector<int>>;

Generations topological_generations(const ArchitectureGraph& g);

// Symmetric binary matrix with unit diagonal; mask[i][j] == 1 iff i == j or
// one of the nodes reaches the other along directed edges.
std::vector<std::vector<std::uint8_t>> reachability_mask(const ArchitectureGraph& g);

}  // namespace flower::graph

#include "flower/graph.hpp"

#include <algorithm>
#include <stdexcept>

namespace flower::graph {

namespace {

// Any node still carrying an in-edge after Kahn peeling lies on a cycle;
// walk predecessors within the leftover set until a node repeats.
std::string describe_cycle(const AdjacencyMatrix& adj, const std::vector<char>& leftover) {
  const int n = static_cast<int>(adj.size());
  int start = -1;
  for (int i = 0; i < n && start < 0; ++i)
    if (leftover[i]) start = i;
  std::vector<int> trail;
  std::vector<char> seen(n, 0);
  int cur = start;
  while (!seen[cur]) {
    seen[cur] = 1;
    trail.push_back(cur);
    for (int p = 0; p < n; ++p) {
      if (leftover[p] && adj[p][cur]) {
        cur = p;
        break;
      }
    }
  }
  // trail ends just before revisiting `cur`; extract the loop.
  auto loop_begin = std::find(trail.begin(), trail.end(), cur);
  std::string msg;
  for (auto it = loop_begin; it != trail.end(); ++it)
    msg = std::to_string(*it) + (msg.empty() ? "" : " -> ") + msg;
  return std::to_string(cur) + " -> " + msg;
}

}  // namespace

ArchitectureGraph::ArchitectureGraph(AdjacencyMatrix adjacency, std::vector<int> ops,
                                     std::shared_ptr<const std::vector<std::string>> vocab)
    : n_(static_cast<int>(adjacency.size())),
      adj_(std::move(adjacency)),
      ops_(std::move(ops)),
      vocab_(std::move(vocab)) {
  if (n_ == 0) throw std::invalid_argument("graph: empty graph");
  for (const auto& row : adj_)
    if (static_cast<int>(row.size()) != n_)
      throw std::invalid_argument("graph: adjacency matrix is not square");
  if (static_cast<int>(ops_.size()) != n_)
    throw std::invalid_argument("graph: one op per node required");
  if (!vocab_) throw std::invalid_argument("graph: missing op vocabulary");
  const int d = static_cast<int>(vocab_->size());
  for (int i = 0; i < n_; ++i)
    if (ops_[i] < 0 || ops_[i] >= d)
      throw std::invalid_argument("graph: op index out of vocabulary at node " +
                                  std::to_string(i));
  for (int i = 0; i < n_; ++i) {
    adj_[i][i] = adj_[i][i] ? 1 : 0;
    for (int j = 0; j < n_; ++j) adj_[i][j] = adj_[i][j] ? 1 : 0;  // collapse multi-edges
    if (adj_[i][i]) throw std::invalid_argument("graph: cycle detected: " + std::to_string(i) +
                                                " -> " + std::to_string(i));
  }

  in_.assign(n_, {});
  out_.assign(n_, {});
  for (int i = 0; i < n_; ++i)
    for (int j = 0; j < n_; ++j)
      if (adj_[i][j]) {
        out_[i].push_back(j);
        in_[j].push_back(i);
      }

  // Kahn peeling for acyclicity.
  std::vector<int> indeg(n_);
  for (int j = 0; j < n_; ++j) indeg[j] = static_cast<int>(in_[j].size());
  std::vector<int> frontier;
  for (int j = 0; j < n_; ++j)
    if (indeg[j] == 0) frontier.push_back(j);
  int removed = 0;
  while (!frontier.empty()) {
    int v = frontier.back();
    frontier.pop_back();
    ++removed;
    for (int w : out_[v])
      if (--indeg[w] == 0) frontier.push_back(w);
  }
  if (removed != n_) {
    std::vector<char> leftover(n_, 0);
    for (int j = 0; j < n_; ++j) leftover[j] = indeg[j] > 0;
    throw std::invalid_argument("graph: cycle detected: " + describe_cycle(adj_, leftover));
  }
}

ArchitectureGraph ArchitectureGraph::from_features(
    AdjacencyMatrix adjacency, const std::vector<std::vector<std::uint8_t>>& features,
    std::shared_ptr<const std::vector<std::string>> vocab) {
  std::vector<int> ops;
  ops.reserve(features.size());
  for (std::size_t r = 0; r < features.size(); ++r) {
    int hot = -1;
    for (std::size_t c = 0; c < features[r].size(); ++c) {
      if (features[r][c] == 0) continue;
      if (features[r][c] != 1 || hot >= 0)
        throw std::invalid_argument("graph: feature row " + std::to_string(r) +
                                    " is not one-hot");
      hot = static_cast<int>(c);
    }
    if (hot < 0)
      throw std::invalid_argument("graph: feature row " + std::to_string(r) + " is not one-hot");
    ops.push_back(hot);
  }
  return ArchitectureGraph(std::move(adjacency), std::move(ops), std::move(vocab));
}

int ArchitectureGraph::num_edges() const {
  int e = 0;
  for (int i = 0; i < n_; ++i) e += static_cast<int>(out_[i].size());
  return e;
}

ad::Tensor ArchitectureGraph::features() const {
  ad::Tensor x(n_, static_cast<int>(vocab_->size()));
  for (int i = 0; i < n_; ++i) x.at(i, ops_[i]) = 1.0;
  return x;
}

ArchitectureGraph ArchitectureGraph::permuted(const std::vector<int>& perm) const {
  if (static_cast<int>(perm.size()) != n_)
    throw std::invalid_argument("permute: permutation size mismatch");
  std::vector<char> hit(n_, 0);
  for (int p : perm) {
    if (p < 0 || p >= n_ || hit[p]) throw std::invalid_argument("permute: not a bijection");
    hit[p] = 1;
  }
  AdjacencyMatrix adj(n_, std::vector<std::uint8_t>(n_, 0));
  std::vector<int> ops(n_);
  for (int i = 0; i < n_; ++i) {
    ops[perm[i]] = ops_[i];
    for (int j = 0; j < n_; ++j) adj[perm[i]][perm[j]] = adj_[i][j];
  }
  return ArchitectureGraph(std::move(adj), std::move(ops), vocab_);
}

Generations topological_generations(const ArchitectureGraph& g) {
  const int n = g.num_nodes();
  std::vector<int> indeg(n);
  for (int j = 0; j < n; ++j) indeg[j] = static_cast<int>(g.in_neighbors(j).size());
  std::vector<char> removed(n, 0);
  Generations gens;
  int left = n;
  while (left > 0) {
    std::vector<int> gen;
    for (int j = 0; j < n; ++j)
      if (!removed[j] && indeg[j] == 0) gen.push_back(j);
    for (int j : gen) {
      removed[j] = 1;
      for (int w : g.out_neighbors(j)) --indeg[w];
    }
    left -= static_cast<int>(gen.size());
    gens.push_back(std::move(gen));
  }
  return gens;
}

std::vector<std::vector<std::uint8_t>> reachability_mask(const ArchitectureGraph& g) {
  const int n = g.num_nodes();
  // One DFS per node for the transitive closure; N stays small here.
  std::vector<std::vector<std::uint8_t>> reach(n, std::vector<std::uint8_t>(n, 0));
  for (int s = 0; s < n; ++s) {
    std::vector<int> stack{s};
    while (!stack.empty()) {
      int v = stack.back();
      stack.pop_back();
      for (int w : g.out_neighbors(v)) {
        if (!reach[s][w]) {
          reach[s][w] = 1;
          stack.push_back(w);
        }
      }
    }
  }
  std::vector<std::vector<std::uint8_t>> mask(n, std::vector<std::uint8_t>(n, 0));
  for (int i = 0; i < n; ++i) {
    mask[i][i] = 1;  // a node always attends to itself
    for (int j = 0; j < n; ++j)
      if (reach[i][j] || reach[j][i]) mask[i][j] = 1;
  }
  return mask;
}

}  // namespace flower::graph

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "flower/graph.hpp"

namespace flower::data {

// One labeled architecture. `cells` holds a single graph, or two for
// two-cell records.
struct DatasetRecord {
  std::string id;
  std::vector<graph::ArchitectureGraph> cells;
  double score = 0.0;

  bool two_cell() const { return cells.size() == 2; }
};

// JSON-lines format, one record per line:
//   {"id": str, "ops": [str], "adj": [[0/1]], "score": real}
// or {"id": str, "cells": [{"ops": [...], "adj": [...]}, {...}], "score": real}
// The op vocabulary is the sorted set of op names appearing in the file.
// `score` may be omitted for unlabeled prediction inputs.
std::vector<DatasetRecord> load_dataset(const std::string& path);
void save_dataset(const std::string& path, const std::vector<DatasetRecord>& records);

// Sorted union of op names over all records.
std::vector<std::string> dataset_vocab(const std::vector<DatasetRecord>& records);

struct SplitSpec {
  double train_portion = 1.0;  // fraction of the training half actually used
  std::uint64_t split_seed = 0;
  int validation_size = 40;
};

struct Splits {
  std::vector<DatasetRecord> train, val, test;
};

// Seeded shuffle, then: first half = training split, second half = test
// split; the used training set is the leading `train_portion` fraction of
// the training split; validation is the first `validation_size` records of
// the test split and the remainder is the test set.
Splits make_splits(const std::vector<DatasetRecord>& records, const SplitSpec& spec);

// Analytic ground-truth score in (0, 1): logistic of
//   0.5 * longest_path_edges + 0.8 * #op0_nodes - 1.0 * edge_density
// (op0 = first entry of the graph's vocabulary). Depends only on structural
// statistics, so it is invariant under graph isomorphism.
double synthetic_oracle(const graph::ArchitectureGraph& g);

// Random DAGs (a layer of sources, a single sink every node reaches) with
// uniform random ops, labeled by synthetic_oracle. Deterministic per seed.
std::vector<DatasetRecord> generate_synthetic(int count, int max_nodes,
                                              std::vector<std::string> op_vocab,
                                              std::uint64_t seed);

}  // namespace flower::data

#include "flower/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <set>
#include <stdexcept>

#include <json.hpp>

#include "flower/rng.hpp"

namespace flower::data {

using nlohmann::json;

namespace {

struct RawCell {
  std::vector<std::string> ops;
  graph::AdjacencyMatrix adj;
};

struct RawRecord {
  std::string id;
  std::vector<RawCell> cells;
  double score = std::numeric_limits<double>::quiet_NaN();
};

RawCell parse_cell(const json& j) {
  RawCell cell;
  for (const auto& op : j.at("ops")) cell.ops.push_back(op.get<std::string>());
  for (const auto& row : j.at("adj")) {
    std::vector<std::uint8_t> r;
    for (const auto& v : row) {
      const long long e = v.get<long long>();
      if (e < 0) throw std::runtime_error("negative adjacency entry");
      r.push_back(e > 0 ? 1 : 0);  // collapse multi-edges
    }
    cell.adj.push_back(std::move(r));
  }
  return cell;
}

graph::ArchitectureGraph build_graph(const RawCell& cell,
                                     const std::shared_ptr<const std::vector<std::string>>& vocab) {
  std::vector<int> ops;
  ops.reserve(cell.ops.size());
  for (const std::string& name : cell.ops) {
    const auto it = std::lower_bound(vocab->begin(), vocab->end(), name);
    if (it == vocab->end() || *it != name)
      throw std::runtime_error("op '" + name + "' missing from vocabulary");
    ops.push_back(static_cast<int>(it - vocab->begin()));
  }
  return graph::ArchitectureGraph(cell.adj, std::move(ops), vocab);
}

json cell_to_json(const graph::ArchitectureGraph& g) {
  json ops = json::array();
  for (int op : g.ops()) ops.push_back(g.vocab()[op]);
  json adj = json::array();
  for (const auto& row : g.adjacency()) {
    json r = json::array();
    for (std::uint8_t v : row) r.push_back(static_cast<int>(v));
    adj.push_back(std::move(r));
  }
  return json{{"ops", std::move(ops)}, {"adj", std::move(adj)}};
}

}  // namespace

std::vector<DatasetRecord> load_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_dataset: cannot open " + path);

  std::vector<RawRecord> raws;
  std::set<std::string> names;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    RawRecord raw;
    try {
      const json j = json::parse(line);
      raw.id = j.at("id").get<std::string>();
      if (j.contains("cells")) {
        for (const auto& c : j.at("cells")) raw.cells.push_back(parse_cell(c));
        if (raw.cells.size() != 2)
          throw std::runtime_error("'cells' must hold exactly two graphs");
      } else {
        raw.cells.push_back(parse_cell(j));
      }
      if (j.contains("score")) raw.score = j.at("score").get<double>();
    } catch (const std::exception& e) {
      throw std::runtime_error("load_dataset: " + path + ":" + std::to_string(line_no) + ": " +
                               e.what());
    }
    for (const RawCell& c : raw.cells)
      for (const std::string& op : c.ops) names.insert(op);
    raws.push_back(std::move(raw));
  }

  auto vocab = std::make_shared<const std::vector<std::string>>(names.begin(), names.end());
  std::vector<DatasetRecord> records;
  records.reserve(raws.size());
  for (const RawRecord& raw : raws) {
    DatasetRecord rec;
    rec.id = raw.id;
    rec.score = raw.score;
    try {
      for (const RawCell& c : raw.cells) rec.cells.push_back(build_graph(c, vocab));
    } catch (const std::exception& e) {
      throw std::runtime_error("load_dataset: record '" + raw.id + "': " + e.what());
    }
    records.push_back(std::move(rec));
  }
  return records;
}

void save_dataset(const std::string& path, const std::vector<DatasetRecord>& records) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_dataset: cannot open " + path);
  for (const DatasetRecord& rec : records) {
    json j;
    j["id"] = rec.id;
    if (rec.two_cell()) {
      j["cells"] = json::array({cell_to_json(rec.cells[0]), cell_to_json(rec.cells[1])});
    } else {
      j.update(cell_to_json(rec.cells[0]));
    }
    if (std::isfinite(rec.score)) j["score"] = rec.score;
    out << j.dump() << "\n";
  }
  if (!out) throw std::runtime_error("save_dataset: write failure on " + path);
}

std::vector<std::string> dataset_vocab(const std::vector<DatasetRecord>& records) {
  std::set<std::string> names;
  for (const DatasetRecord& rec : records)
    for (const auto& g : rec.cells)
      for (int op : g.ops()) names.insert(g.vocab()[op]);
  return {names.begin(), names.end()};
}

Splits make_splits(const std::vector<DatasetRecord>& records, const SplitSpec& spec) {
  if (spec.train_portion <= 0.0 || spec.train_portion > 1.0)
    throw std::invalid_argument("make_splits: train_portion must be in (0, 1]");
  if (spec.validation_size < 0)
    throw std::invalid_argument("make_splits: negative validation size");
  const std::size_t n = records.size();
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(spec.split_seed);
  rng.shuffle(idx);

  const std::size_t train_half = n / 2;
  const std::size_t test_half = n - train_half;
  if (test_half < static_cast<std::size_t>(spec.validation_size) + 1)
    throw std::invalid_argument("make_splits: test split smaller than validation_size + 1");

  std::size_t used = static_cast<std::size_t>(
      std::llround(spec.train_portion * static_cast<double>(train_half)));
  used = std::clamp<std::size_t>(used, 1, train_half);

  Splits s;
  for (std::size_t i = 0; i < used; ++i) s.train.push_back(records[idx[i]]);
  for (std::size_t i = 0; i < test_half; ++i) {
    const DatasetRecord& r = records[idx[train_half + i]];
    if (i < static_cast<std::size_t>(spec.validation_size))
      s.val.push_back(r);
    else
      s.test.push_back(r);
  }
  return s;
}

double synthetic_oracle(const graph::ArchitectureGraph& g) {
  const int n = g.num_nodes();
  // Longest path in edges; node order from the generations is topological.
  std::vector<int> lp(n, 0);
  int longest = 0;
  for (const auto& gen : graph::topological_generations(g)) {
    for (int j : gen) {
      for (int i : g.in_neighbors(j)) lp[j] = std::max(lp[j], lp[i] + 1);
      longest = std::max(longest, lp[j]);
    }
  }
  int op0_nodes = 0;
  for (int op : g.ops()) op0_nodes += op == 0 ? 1 : 0;
  const double density =
      n > 1 ? static_cast<double>(g.num_edges()) / (0.5 * n * (n - 1)) : 0.0;
  const double logit = 0.5 * longest + 0.8 * op0_nodes - 1.0 * density;
  return 1.0 / (1.0 + std::exp(-logit));
}

std::vector<DatasetRecord> generate_synthetic(int count, int max_nodes,
                                              std::vector<std::string> op_vocab,
                                              std::uint64_t seed) {
  if (count < 0) throw std::invalid_argument("generate_synthetic: negative count");
  if (count > 0 && max_nodes < 3)
    throw std::invalid_argument("generate_synthetic: max_nodes must be >= 3");
  if (op_vocab.empty()) throw std::invalid_argument("generate_synthetic: empty op vocabulary");
  std::sort(op_vocab.begin(), op_vocab.end());
  auto vocab = std::make_shared<const std::vector<std::string>>(std::move(op_vocab));
  const auto d = static_cast<std::uint64_t>(vocab->size());

  Rng rng(seed);
  std::vector<DatasetRecord> records;
  records.reserve(count);
  for (int r = 0; r < count; ++r) {
    const int n = 3 + static_cast<int>(rng.next_below(max_nodes - 2));
    const int sources = 1 + static_cast<int>(rng.next_below(std::min(3, n - 2)));
    graph::AdjacencyMatrix adj(n, std::vector<std::uint8_t>(n, 0));
    for (int j = sources; j < n; ++j) {
      for (int i = 0; i < j; ++i)
        if (rng.next_double() < 0.25) adj[i][j] = 1;
      bool has_in = false;
      for (int i = 0; i < j; ++i) has_in = has_in || adj[i][j];
      if (!has_in) adj[static_cast<int>(rng.next_below(j))][j] = 1;
    }
    // Route every dead end into the single sink (node n-1).
    for (int v = 0; v + 1 < n; ++v) {
      bool has_out = false;
      for (int w = 0; w < n; ++w) has_out = has_out || adj[v][w];
      if (!has_out) adj[v][n - 1] = 1;
    }
    std::vector<int> ops(n);
    for (int& op : ops) op = static_cast<int>(rng.next_below(d));

    DatasetRecord rec;
    rec.id = "syn-" + std::to_string(seed) + "-" + std::to_string(r);
    rec.cells.emplace_back(std::move(adj), std::move(ops), vocab);
    rec.score = synthetic_oracle(rec.cells[0]);
    records.push_back(std::move(rec));
  }
  return records;
}

}  // namespace flower::data

#include "flower/checkpoint.hpp"

#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace flower::nn {

using nlohmann::json;

namespace {
constexpr int kFormatVersion = 1;
}

void save_checkpoint(const std::string& path, ModelParameters& params) {
  json j;
  j["format_version"] = kFormatVersion;
  j["config"] = {{"layers", params.config.layers},     {"hidden", params.config.hidden},
                 {"heads", params.config.heads},       {"vocab_size", params.config.vocab_size},
                 {"dropout", params.config.dropout},   {"margin", params.config.margin},
                 {"two_cell", params.config.two_cell}};
  j["vocab"] = params.vocab;
  json tensors = json::object();
  for (auto& [name, t] : params.named_tensors())
    tensors[name] = {{"shape", {t.rows(), t.cols()}}, {"values", t.values()}};
  j["tensors"] = std::move(tensors);
  json bns = json::object();
  for (auto& [name, bn] : params.named_batch_norms())
    bns[name] = {{"running_mean", bn->running_mean},
                 {"running_var", bn->running_var},
                 {"momentum", bn->momentum},
                 {"eps", bn->eps}};
  j["batch_norm"] = std::move(bns);

  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_checkpoint: cannot open " + path);
  out << j.dump() << "\n";
  if (!out) throw std::runtime_error("save_checkpoint: write failure on " + path);
}

ModelParameters load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path);
  json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw std::runtime_error("load_checkpoint: " + path + ": " + e.what());
  }
  if (j.at("format_version").get<int>() != kFormatVersion)
    throw std::runtime_error("load_checkpoint: unsupported format version");

  ModelConfig cfg;
  const json& c = j.at("config");
  cfg.layers = c.at("layers").get<int>();
  cfg.hidden = c.at("hidden").get<int>();
  cfg.heads = c.at("heads").get<int>();
  cfg.vocab_size = c.at("vocab_size").get<int>();
  cfg.dropout = c.at("dropout").get<double>();
  cfg.margin = c.at("margin").get<double>();
  cfg.two_cell = c.at("two_cell").get<bool>();

  Rng rng(0);  // placeholder draws, every value is overwritten below
  ModelParameters params =
      ModelParameters::init(cfg, j.at("vocab").get<std::vector<std::string>>(), rng);

  const json& tensors = j.at("tensors");
  for (auto& [name, t] : params.named_tensors()) {
    if (!tensors.contains(name))
      throw std::runtime_error("load_checkpoint: missing tensor '" + name + "'");
    const json& entry = tensors.at(name);
    const auto shape = entry.at("shape").get<std::vector<int>>();
    if (shape.size() != 2 || shape[0] != t.rows() || shape[1] != t.cols())
      throw std::runtime_error("load_checkpoint: shape mismatch for '" + name + "'");
    auto values = entry.at("values").get<std::vector<double>>();
    if (values.size() != static_cast<std::size_t>(t.size()))
      throw std::runtime_error("load_checkpoint: value count mismatch for '" + name + "'");
    t.values() = std::move(values);
  }
  const json& bns = j.at("batch_norm");
  for (auto& [name, bn] : params.named_batch_norms()) {
    if (!bns.contains(name))
      throw std::runtime_error("load_checkpoint: missing batch norm state '" + name + "'");
    const json& entry = bns.at(name);
    bn->running_mean = entry.at("running_mean").get<std::vector<double>>();
    bn->running_var = entry.at("running_var").get<std::vector<double>>();
    bn->momentum = entry.at("momentum").get<double>();
    bn->eps = entry.at("eps").get<double>();
    if (bn->running_mean.size() != static_cast<std::size_t>(cfg.hidden) ||
        bn->running_var.size() != static_cast<std::size_t>(cfg.hidden))
      throw std::runtime_error("load_checkpoint: running stat width mismatch for '" + name + "'");
  }
  return params;
}

}  // namespace flower::nn

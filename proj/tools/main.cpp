// Command-line front end: dataset generation, training, evaluation,
// prediction, and a full-model gradient check.

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "flower/checkpoint.hpp"
#include "flower/dataset.hpp"
#include "flower/metrics.hpp"
#include "flower/model.hpp"
#include "flower/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace flower;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

struct TrainOptions {
  std::string dataset;
  std::string out = "run";
  double portion = 1.0;
  int layers = 4;
  int hidden = 64;
  int heads = 4;
  double margin = 0.1;
  double lr = 1e-3;
  double weight_decay = 1e-6;
  double dropout = 0.1;
  int epochs = 300;
  int patience = 100;
  int batch_size = 32;
  std::uint64_t seed = 0;
  std::uint64_t split_seed = 0;
  int val_size = 40;
  int trials = 1;
  bool plot = false;
  std::string from_manifest;
};

json manifest_json(const TrainOptions& o) {
  return json{{"format_version", 1},
              {"tool", "flower 0.1.0"},
              {"command", "train"},
              {"dataset", o.dataset},
              {"out", o.out},
              {"model",
               {{"layers", o.layers},
                {"hidden", o.hidden},
                {"heads", o.heads},
                {"dropout", o.dropout},
                {"margin", o.margin}}},
              {"train",
               {{"lr", o.lr},
                {"weight_decay", o.weight_decay},
                {"batch_size", o.batch_size},
                {"epochs", o.epochs},
                {"patience", o.patience},
                {"seed", o.seed}}},
              {"split",
               {{"portion", o.portion},
                {"split_seed", o.split_seed},
                {"validation_size", o.val_size}}},
              {"trials", o.trials},
              {"plot", o.plot}};
}

TrainOptions manifest_options(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open manifest: " + path);
  json j = json::parse(in);
  TrainOptions o;
  o.dataset = j.at("dataset").get<std::string>();
  o.out = j.at("out").get<std::string>();
  const json& m = j.at("model");
  o.layers = m.at("layers").get<int>();
  o.hidden = m.at("hidden").get<int>();
  o.heads = m.at("heads").get<int>();
  o.dropout = m.at("dropout").get<double>();
  o.margin = m.at("margin").get<double>();
  const json& t = j.at("train");
  o.lr = t.at("lr").get<double>();
  o.weight_decay = t.at("weight_decay").get<double>();
  o.batch_size = t.at("batch_size").get<int>();
  o.epochs = t.at("epochs").get<int>();
  o.patience = t.at("patience").get<int>();
  o.seed = t.at("seed").get<std::uint64_t>();
  const json& s = j.at("split");
  o.portion = s.at("portion").get<double>();
  o.split_seed = s.at("split_seed").get<std::uint64_t>();
  o.val_size = s.at("validation_size").get<int>();
  o.trials = j.at("trials").get<int>();
  o.plot = j.at("plot").get<bool>();
  return o;
}

void write_history_csv(const std::string& path, const std::vector<train::EpochStats>& history) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "epoch,train_loss,val_tau\n";
  for (const auto& e : history)
    out << e.epoch << "," << fmt(e.train_loss) << "," << fmt(e.val_tau) << "\n";
}

// Two polylines (training loss rescaled to [0,1], validation tau as-is) on a
// fixed 640x400 canvas.
void write_history_svg(const std::string& path, const std::vector<train::EpochStats>& history) {
  const double w = 640.0, h = 400.0, pad = 40.0;
  double max_loss = 1e-12;
  for (const auto& e : history) max_loss = std::max(max_loss, e.train_loss);
  const int n = static_cast<int>(history.size());
  auto x_of = [&](int i) { return pad + (w - 2 * pad) * (n > 1 ? double(i) / (n - 1) : 0.5); };
  auto y_of = [&](double v01) { return h - pad - (h - 2 * pad) * v01; };
  auto polyline = [&](const std::string& color, auto value01) {
    std::string pts;
    for (int i = 0; i < n; ++i)
      pts += fmt(x_of(i)) + "," + fmt(y_of(value01(history[i]))) + " ";
    return "<polyline fill=\"none\" stroke=\"" + color + "\" stroke-width=\"1.5\" points=\"" +
           pts + "\"/>\n";
  };
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"400\" "
         "viewBox=\"0 0 640 400\">\n"
      << "<rect width=\"640\" height=\"400\" fill=\"white\"/>\n"
      << "<line x1=\"40\" y1=\"360\" x2=\"600\" y2=\"360\" stroke=\"black\"/>\n"
      << "<line x1=\"40\" y1=\"40\" x2=\"40\" y2=\"360\" stroke=\"black\"/>\n"
      << polyline("#d62728",
                  [&](const train::EpochStats& e) { return e.train_loss / max_loss; })
      << polyline("#1f77b4",
                  [&](const train::EpochStats& e) {
                    return std::isfinite(e.val_tau) ? (e.val_tau + 1.0) / 2.0 : 0.5;
                  })
      << "<text x=\"48\" y=\"28\" font-size=\"12\">red: train loss (scaled), "
         "blue: validation tau</text>\n"
      << "</svg>\n";
}

bool all_two_cell(const std::vector<data::DatasetRecord>& records) {
  if (records.empty()) return false;
  for (const auto& r : records)
    if (!r.two_cell()) return false;
  return true;
}

struct TrialOutcome {
  double test_tau = 0.0;
  double best_val_tau = 0.0;
  int best_epoch = -1;
};

TrialOutcome run_one_trial(const TrainOptions& o, const std::vector<data::DatasetRecord>& records,
                           const std::vector<std::string>& vocab, std::uint64_t split_seed,
                           std::uint64_t seed, const fs::path& dir) {
  data::SplitSpec spec;
  spec.train_portion = o.portion;
  spec.split_seed = split_seed;
  spec.validation_size = o.val_size;
  data::Splits splits = data::make_splits(records, spec);

  nn::ModelConfig mc;
  mc.layers = o.layers;
  mc.hidden = o.hidden;
  mc.heads = o.heads;
  mc.dropout = o.dropout;
  mc.margin = o.margin;
  mc.vocab_size = static_cast<int>(vocab.size());
  mc.two_cell = all_two_cell(records);
  mc.validate();

  Rng init_rng(seed);
  nn::ModelParameters params = nn::ModelParameters::init(mc, vocab, init_rng);

  train::TrainConfig tc;
  tc.lr = o.lr;
  tc.weight_decay = o.weight_decay;
  tc.margin = o.margin;
  tc.batch_size = o.batch_size;
  tc.max_epochs = o.epochs;
  tc.patience = o.patience;
  tc.seed = seed;
  train::TrainResult result = train::train(std::move(params), splits.train, splits.val, tc);

  fs::create_directories(dir);
  nn::save_checkpoint((dir / "checkpoint.json").string(), result.best);
  write_history_csv((dir / "history.csv").string(), result.history);
  if (o.plot) write_history_svg((dir / "history.svg").string(), result.history);

  TrialOutcome out;
  out.best_val_tau = result.best_val_tau;
  out.best_epoch = result.best_epoch;
  if (!splits.test.empty()) {
    std::vector<double> labels;
    for (const auto& r : splits.test) labels.push_back(r.score);
    const auto preds = train::predict_records(splits.test, result.best);
    out.test_tau = metrics::kendall_tau(preds, labels);
  } else {
    out.test_tau = std::numeric_limits<double>::quiet_NaN();
  }
  return out;
}

int cmd_train(const TrainOptions& opts_in) {
  TrainOptions o = opts_in;
  if (!o.from_manifest.empty()) {
    TrainOptions replay = manifest_options(o.from_manifest);
    if (o.out != "run") replay.out = o.out;  // allow redirecting replay output
    o = replay;
  }
  if (o.trials < 1) throw std::invalid_argument("train: --trials must be >= 1");

  const auto records = data::load_dataset(o.dataset);
  const auto vocab = data::dataset_vocab(records);
  for (const auto& r : records)
    if (!std::isfinite(r.score))
      throw std::runtime_error("train: record '" + r.id + "' has no score");

  fs::create_directories(o.out);
  {
    std::ofstream m(fs::path(o.out) / "manifest.json");
    m << manifest_json(o).dump(2) << "\n";
  }

  std::vector<TrialOutcome> outcomes;
  for (int t = 0; t < o.trials; ++t) {
    const std::uint64_t split_seed = o.split_seed + static_cast<std::uint64_t>(t % 3);
    const std::uint64_t seed = o.seed + static_cast<std::uint64_t>(t / 3);
    const fs::path dir =
        o.trials == 1 ? fs::path(o.out) : fs::path(o.out) / ("trial_" + std::to_string(t));
    TrialOutcome r = run_one_trial(o, records, vocab, split_seed, seed, dir);
    outcomes.push_back(r);
    std::cout << "trial " << t << ": split_seed=" << split_seed << " seed=" << seed
              << " best_epoch=" << r.best_epoch << " val_tau=" << fmt(r.best_val_tau)
              << " test_tau=" << fmt(r.test_tau) << "\n";
  }

  if (o.trials > 1) {
    double mean = 0.0;
    for (const auto& r : outcomes) mean += r.test_tau;
    mean /= outcomes.size();
    double var = 0.0;
    for (const auto& r : outcomes) var += (r.test_tau - mean) * (r.test_tau - mean);
    const double stddev = std::sqrt(var / outcomes.size());
    std::cout << "test tau over " << o.trials << " trials: mean=" << fmt(mean)
              << " std=" << fmt(stddev) << "\n";
  }
  return kExitOk;
}

struct EvalOptions {
  std::string checkpoint;
  std::string dataset;
  bool latency = false;
};

std::vector<double> labeled_scores(const std::vector<data::DatasetRecord>& records,
                                   const char* cmd) {
  if (records.empty()) throw std::runtime_error(std::string(cmd) + ": empty dataset");
  std::vector<double> labels;
  for (const auto& r : records) {
    if (!std::isfinite(r.score))
      throw std::runtime_error(std::string(cmd) + ": record '" + r.id + "' has no score");
    labels.push_back(r.score);
  }
  return labels;
}

int cmd_eval(const EvalOptions& o) {
  nn::ModelParameters params = nn::load_checkpoint(o.checkpoint);
  const auto records = data::load_dataset(o.dataset);
  const auto labels = labeled_scores(records, "eval");
  const auto vocab = data::dataset_vocab(records);
  for (const auto& op : vocab)
    if (std::find(params.vocab.begin(), params.vocab.end(), op) == params.vocab.end())
      throw std::runtime_error("eval: op '" + op + "' not in checkpoint vocabulary");

  const auto preds = train::predict_records(records, params);
  std::cout << "kendall_tau " << fmt(metrics::kendall_tau(preds, labels)) << "\n";
  for (double k : {1.0, 5.0, 10.0, 50.0})
    std::cout << "precision_at_" << k << "% " << fmt(metrics::precision_at_k(preds, labels, k))
              << "\n";
  if (o.latency) {
    const auto lm = metrics::latency_metrics(preds, labels, {0.1, 1.0, 5.0});
    std::cout << "mape " << fmt(lm.mape) << "\n";
    for (const auto& [delta, acc] : lm.acc)
      std::cout << "acc_" << delta << "% " << fmt(acc) << "\n";
  }
  return kExitOk;
}

int cmd_predict(const std::string& checkpoint, const std::string& dataset) {
  nn::ModelParameters params = nn::load_checkpoint(checkpoint);
  const auto records = data::load_dataset(dataset);
  if (records.empty()) throw std::runtime_error("predict: empty dataset");
  const auto preds = train::predict_records(records, params);
  std::vector<std::size_t> order(records.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return preds[a] > preds[b]; });
  for (std::size_t i : order) std::cout << records[i].id << "\t" << fmt(preds[i]) << "\n";
  return kExitOk;
}

int cmd_generate(const std::string& out, int count, int max_nodes, int num_ops,
                 std::uint64_t seed) {
  std::vector<std::string> vocab;
  for (int i = 0; i < num_ops; ++i) vocab.push_back("op" + std::to_string(i));
  const auto records = data::generate_synthetic(count, max_nodes, vocab, seed);
  data::save_dataset(out, records);
  std::cout << "wrote " << records.size() << " records to " << out << "\n";
  return kExitOk;
}

struct GradcheckOptions {
  int layers = 2;
  int hidden = 8;
  int heads = 2;
  int nodes = 7;
  int batch = 2;
  std::uint64_t seed = 0;
  double threshold = 1e-4;
};

int cmd_gradcheck(const GradcheckOptions& o) {
  std::vector<std::string> vocab = {"op0", "op1", "op2"};
  nn::ModelConfig mc;
  mc.layers = o.layers;
  mc.hidden = o.hidden;
  mc.heads = o.heads;
  mc.vocab_size = static_cast<int>(vocab.size());
  mc.dropout = 0.0;  // keeps the loss a pure function of the parameters
  mc.validate();
  if (o.batch < 2) throw std::invalid_argument("gradcheck: --batch must be >= 2");

  Rng rng(o.seed);
  nn::ModelParameters params = nn::ModelParameters::init(mc, vocab, rng);
  const auto records = data::generate_synthetic(o.batch, o.nodes, vocab, o.seed + 1);
  std::vector<nn::GraphContext> ctx;
  std::vector<double> labels;
  for (std::size_t i = 0; i < records.size(); ++i) {
    ctx.push_back(nn::make_context(records[i].cells[0]));
    // Nudge labels apart so every pair contributes a hinge term.
    labels.push_back(records[i].score + 1e-3 * static_cast<double>(i));
  }

  auto f = [&]() {
    nn::EncodeOptions eo;
    eo.mode = ad::Mode::kTrain;
    eo.update_bn_stats = false;
    std::vector<std::vector<const nn::GraphContext*>> batch;
    for (auto& c : ctx) batch.push_back({&c});
    std::vector<ad::Tensor> preds = nn::predict_scores_batch(batch, params, eo);
    // Scaling the loss keeps every relative gradient error unchanged while
    // pushing central-difference roundoff (~ulp(loss)/2h) below the absolute
    // 1e-8 denominator floor, so near-zero true gradients do not register as
    // spurious errors.
    return ad::scale(train::margin_ranking_loss(ad::concat_rows(preds), labels, 1.0), 1e-3);
  };
  std::vector<ad::Tensor> points;
  for (auto& [name, t] : params.named_tensors()) points.push_back(t);

  const double err = ad::grad_check(f, points);
  std::cout << "max relative error " << fmt(err) << " (threshold " << fmt(o.threshold) << ")\n";
  return err < o.threshold ? kExitOk : kExitFailure;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"flow-aware graph encoder for architecture performance prediction"};
  app.require_subcommand(1);

  TrainOptions to;
  CLI::App* train_cmd = app.add_subcommand("train", "train a model and save a checkpoint");
  auto* ds_opt = train_cmd->add_option("--dataset", to.dataset, "JSON-lines dataset path");
  auto* manifest_opt =
      train_cmd->add_option("--from-manifest", to.from_manifest, "replay a saved manifest");
  ds_opt->excludes(manifest_opt);
  train_cmd->add_option("--out", to.out, "output directory");
  train_cmd->add_option("--portion", to.portion, "fraction of the training split used");
  train_cmd->add_option("--layers", to.layers);
  train_cmd->add_option("--hidden", to.hidden);
  train_cmd->add_option("--heads", to.heads);
  train_cmd->add_option("--margin", to.margin);
  train_cmd->add_option("--lr", to.lr);
  train_cmd->add_option("--weight-decay", to.weight_decay);
  train_cmd->add_option("--dropout", to.dropout);
  train_cmd->add_option("--epochs", to.epochs);
  train_cmd->add_option("--patience", to.patience);
  train_cmd->add_option("--batch-size", to.batch_size);
  train_cmd->add_option("--seed", to.seed);
  train_cmd->add_option("--split-seed", to.split_seed);
  train_cmd->add_option("--val-size", to.val_size);
  train_cmd->add_option("--trials", to.trials);
  train_cmd->add_flag("--plot", to.plot, "emit an SVG of the training curves");

  EvalOptions eo;
  CLI::App* eval_cmd = app.add_subcommand("eval", "report ranking metrics for a checkpoint");
  eval_cmd->add_option("--checkpoint", eo.checkpoint)->required();
  eval_cmd->add_option("--dataset", eo.dataset)->required();
  eval_cmd->add_flag("--latency", eo.latency, "also report MAPE and Acc(delta)");

  std::string pred_ckpt, pred_data;
  CLI::App* predict_cmd = app.add_subcommand("predict", "score records, highest first");
  predict_cmd->add_option("--checkpoint", pred_ckpt)->required();
  predict_cmd->add_option("--dataset", pred_data)->required();

  std::string gen_out;
  int gen_count = 100, gen_max_nodes = 8, gen_num_ops = 5;
  std::uint64_t gen_seed = 0;
  CLI::App* gen_cmd = app.add_subcommand("generate", "write a synthetic labeled dataset");
  gen_cmd->add_option("--out", gen_out)->required();
  gen_cmd->add_option("--count", gen_count);
  gen_cmd->add_option("--max-nodes", gen_max_nodes);
  gen_cmd->add_option("--num-ops", gen_num_ops);
  gen_cmd->add_option("--seed", gen_seed);

  GradcheckOptions go;
  CLI::App* gc_cmd = app.add_subcommand("gradcheck", "finite-difference check of the full model");
  gc_cmd->add_option("--layers", go.layers);
  gc_cmd->add_option("--hidden", go.hidden);
  gc_cmd->add_option("--heads", go.heads);
  gc_cmd->add_option("--nodes", go.nodes);
  gc_cmd->add_option("--batch", go.batch);
  gc_cmd->add_option("--seed", go.seed);
  gc_cmd->add_option("--threshold", go.threshold);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (train_cmd->parsed()) {
      if (to.dataset.empty() && to.from_manifest.empty()) {
        std::cerr << "train: either --dataset or --from-manifest is required\n";
        return kExitUsage;
      }
      return cmd_train(to);
    }
    if (eval_cmd->parsed()) return cmd_eval(eo);
    if (predict_cmd->parsed()) return cmd_predict(pred_ckpt, pred_data);
    if (gen_cmd->parsed()) return cmd_generate(gen_out, gen_count, gen_max_nodes, gen_num_ops,
                                               gen_seed);
    if (gc_cmd->parsed()) {
      try {
        return cmd_gradcheck(go);
      } catch (const std::invalid_argument& e) {
        std::cerr << "gradcheck: " << e.what() << "\n";
        return kExitUsage;  // bad dimensions are a usage problem
      }
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitUsage;
}

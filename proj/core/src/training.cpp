#include "flower/training.hpp"

#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "flower/metrics.hpp"

namespace flower::train {

using ad::Tensor;

Tensor margin_ranking_loss(const Tensor& preds, const std::vector<double>& labels,
                           double margin) {
  if (static_cast<std::size_t>(preds.size()) != labels.size())
    throw std::invalid_argument("margin_ranking_loss: preds/labels length mismatch");
  if (labels.size() < 2)
    throw std::invalid_argument("margin_ranking_loss: need at least 2 items");
  const int n = preds.size();
  const bool rec = ad::recording(preds);
  Tensor out(1, 1, rec);
  double loss = 0.0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      if (labels[i] > labels[j]) {
        const double hinge = margin - (preds.values()[i] - preds.values()[j]);
        if (hinge > 0.0) loss += hinge;
      }
  out.values()[0] = loss;
  if (rec) {
    ad::Tape::active()->record([preds = preds, out, labels, margin]() mutable {
      const int n = preds.size();
      const double g = out.grad()[0];
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
          if (labels[i] > labels[j] &&
              margin - (preds.values()[i] - preds.values()[j]) > 0.0) {
            preds.grad()[i] -= g;
            preds.grad()[j] += g;
          }
    });
  }
  return out;
}

void AdamW::step(std::vector<std::pair<std::string, Tensor>>& params, const TrainConfig& cfg) {
  if (m_.empty()) {
    for (auto& [name, t] : params) {
      m_.emplace_back(t.size(), 0.0);
      v_.emplace_back(t.size(), 0.0);
    }
  }
  if (m_.size() != params.size())
    throw std::invalid_argument("adamw: parameter set changed between steps");
  for (auto& [name, t] : params)
    for (double g : t.grad())
      if (!std::isfinite(g))
        throw std::runtime_error("adamw: non-finite gradient in " + name);

  ++t_;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t_));
  for (std::size_t p = 0; p < params.size(); ++p) {
    Tensor& t = params[p].second;
    for (int i = 0; i < t.size(); ++i) {
      const double g = t.grad()[i];
      m_[p][i] = cfg.beta1 * m_[p][i] + (1.0 - cfg.beta1) * g;
      v_[p][i] = cfg.beta2 * v_[p][i] + (1.0 - cfg.beta2) * g * g;
      const double mhat = m_[p][i] / bc1;
      const double vhat = v_[p][i] / bc2;
      t.values()[i] -=
          cfg.lr * (mhat / (std::sqrt(vhat) + cfg.eps) + cfg.weight_decay * t.values()[i]);
    }
  }
}

namespace {

struct PreparedRecord {
  std::vector<nn::GraphContext> ctx;  // 1 or 2 cells
  double score = 0.0;
};

std::vector<PreparedRecord> prepare(const std::vector<data::DatasetRecord>& records) {
  std::vector<PreparedRecord> out;
  out.reserve(records.size());
  for (const data::DatasetRecord& r : records) {
    PreparedRecord p;
    for (const auto& g : r.cells) p.ctx.push_back(nn::make_context(g));
    p.score = r.score;
    out.push_back(std::move(p));
  }
  return out;
}

Tensor score_record(PreparedRecord& r, nn::ModelParameters& params,
                    const nn::EncodeOptions& opts) {
  return r.ctx.size() == 2 ? nn::predict_score_pair(r.ctx[0], r.ctx[1], params, opts)
                           : nn::predict_score(r.ctx[0], params, opts);
}

std::vector<double> eval_scores(std::vector<PreparedRecord>& recs, nn::ModelParameters& params) {
  nn::EncodeOptions opts;  // eval mode, no stat updates
  std::vector<double> out;
  out.reserve(recs.size());
  for (PreparedRecord& r : recs) out.push_back(score_record(r, params, opts).item());
  return out;
}

}  // namespace

std::vector<double> predict_records(const std::vector<data::DatasetRecord>& records,
                                    nn::ModelParameters& params) {
  auto prepared = prepare(records);
  return eval_scores(prepared, params);
}

TrainResult train(nn::ModelParameters params, const std::vector<data::DatasetRecord>& train_set,
                  const std::vector<data::DatasetRecord>& val_set, const TrainConfig& cfg) {
  if (train_set.empty()) throw std::invalid_argument("train: empty training set");
  if (cfg.batch_size < 2) throw std::invalid_argument("train: batch size must be >= 2");

  auto train_prepared = prepare(train_set);
  auto val_prepared = prepare(val_set);
  std::vector<double> val_labels;
  for (const auto& r : val_prepared) val_labels.push_back(r.score);

  Rng rng(cfg.seed);
  AdamW optimizer;
  TrainResult result;
  result.best = params.clone();
  result.best_val_tau = -std::numeric_limits<double>::infinity();
  int epochs_since_improvement = 0;

  std::vector<std::size_t> order(train_prepared.size());
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    rng.shuffle(order);
    double pair_loss_sum = 0.0;
    long long pair_count = 0;
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end =
          std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      if (end - start < 2) continue;  // no pairs to rank in a singleton batch
      params.zero_grad();
      ad::Tape tape;
      nn::EncodeOptions opts;
      opts.mode = ad::Mode::kTrain;
      opts.update_bn_stats = true;
      opts.rng = &rng;
      // The whole minibatch is scored jointly so batch-norm statistics span
      // every graph in it; per-graph normalization would make all pooled
      // embeddings identical and the ranking loss untrainable.
      std::vector<std::vector<const nn::GraphContext*>> batch;
      std::vector<double> labels;
      for (std::size_t k = start; k < end; ++k) {
        std::vector<const nn::GraphContext*> rec;
        for (const nn::GraphContext& c : train_prepared[order[k]].ctx) rec.push_back(&c);
        batch.push_back(std::move(rec));
        labels.push_back(train_prepared[order[k]].score);
      }
      std::vector<Tensor> preds = nn::predict_scores_batch(batch, params, opts);
      Tensor loss = margin_ranking_loss(ad::concat_rows(preds), labels, cfg.margin);
      tape.backward(loss);
      auto named = params.named_tensors();
      optimizer.step(named, cfg);

      long long pairs = 0;
      for (std::size_t i = 0; i < labels.size(); ++i)
        for (std::size_t j = 0; j < labels.size(); ++j) pairs += labels[i] > labels[j] ? 1 : 0;
      pair_loss_sum += loss.item();
      pair_count += pairs;
    }

    double val_tau = 0.0;
    if (!val_prepared.empty()) {
      const auto val_preds = eval_scores(val_prepared, params);
      val_tau = metrics::kendall_tau(val_preds, val_labels);
    }
    const double seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.history.push_back({epoch,
                              pair_count > 0 ? pair_loss_sum / static_cast<double>(pair_count)
                                             : 0.0,
                              val_tau, seconds});

    if (std::isfinite(val_tau) && val_tau > result.best_val_tau) {
      result.best_val_tau = val_tau;
      result.best_epoch = epoch;
      result.best = params.clone();
      epochs_since_improvement = 0;
    } else {
      ++epochs_since_improvement;
    }
    if (epochs_since_improvement > cfg.patience) break;
    if (result.best_val_tau >= 1.0) break;  // a perfect ranking cannot improve
  }
  return result;
}

}  // namespace flower::train

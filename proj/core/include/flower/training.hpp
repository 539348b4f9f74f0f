#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "flower/dataset.hpp"
#include "flower/model.hpp"
#include "flower/tensor.hpp"

namespace flower::train {

struct TrainConfig {
  double lr = 1e-3;
  double weight_decay = 1e-6;
  double margin = 0.1;
  int batch_size = 32;
  int max_epochs = 300;
  int patience = 100;
  std::uint64_t seed = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Sum over ordered pairs (i, j) with labels[i] > labels[j] of
// max(0, margin - (preds[i] - preds[j])). Pairs with tied labels contribute
// nothing; the hinge subgradient at the corner is 0. `preds` is n x 1.
ad::Tensor margin_ranking_loss(const ad::Tensor& preds, const std::vector<double>& labels,
                               double margin);

// Decoupled weight decay Adam. Moment buffers are keyed by parameter order,
// which is stable via ModelParameters::named_tensors().
class AdamW {
 public:
  // theta <- theta - lr * (mhat / (sqrt(vhat) + eps) + wd * theta).
  // Throws on non-finite gradients; the parameter set is left untouched then.
  void step(std::vector<std::pair<std::string, ad::Tensor>>& params, const TrainConfig& cfg);

  long long step_count() const { return t_; }

 private:
  std::vector<std::vector<double>> m_, v_;
  long long t_ = 0;
};

struct EpochStats {
  int epoch = 0;
  double train_loss = 0.0;  // mean hinge loss per pair
  double val_tau = 0.0;
  double seconds = 0.0;
};

struct TrainResult {
  nn::ModelParameters best;
  std::vector<EpochStats> history;
  double best_val_tau = 0.0;
  int best_epoch = -1;
};

// Scores every record with the given parameters in eval mode.
std::vector<double> predict_records(const std::vector<data::DatasetRecord>& records,
                                    nn::ModelParameters& params);

// Seeded epoch loop: shuffle, minibatch, margin ranking loss over each
// batch's internal pairs, backward, AdamW step. Keeps the best-validation
// snapshot (Kendall tau) and stops once `patience` epochs pass without
// improvement, or immediately when tau reaches 1 (no improvement possible).
TrainResult train(nn::ModelParameters params, const std::vector<data::DatasetRecord>& train_set,
                  const std::vector<data::DatasetRecord>& val_set, const TrainConfig& cfg);

}  // namespace flower::train

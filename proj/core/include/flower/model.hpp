#pragma once

#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "flower/graph.hpp"
#include "flower/ops.hpp"
#include "flower/rng.hpp"
#include "flower/tensor.hpp"

namespace flower::nn {

struct ModelConfig {
  int layers = 4;
  int hidden = 64;
  int heads = 4;
  int vocab_size = 0;
  double dropout = 0.1;
  double margin = 0.1;
  bool two_cell = false;

  int head_dim() const { return hidden / heads; }
  void validate() const;  // hidden divisible by heads, positive sizes, dropout in [0,1)
};

struct FlowDirectionParams {
  ad::Tensor w1, w2;  // message score weights, d x 1
  ad::GruParams gru;
};

struct AttentionParams {
  std::vector<ad::Tensor> wq, wk, wv;  // per head, d x d/s
  ad::Tensor wo;                       // d x d
};

struct LayerParams {
  FlowDirectionParams forward_flow;   // along edges (forward sweep)
  FlowDirectionParams backward_flow;  // against edges (backward sweep)
  AttentionParams attention;
  ad::Tensor ff_w1, ff_b1, ff_w2, ff_b2;  // 2-layer MLP with ReLU
  ad::BatchNormState bn_flow, bn_global, bn_out;
};

struct ModelParameters {
  ModelConfig config;
  std::vector<std::string> vocab;
  ad::Tensor input_proj;  // D x d
  std::vector<LayerParams> layers;
  ad::Tensor bridge;  // 2d x 2d, only when config.two_cell
  ad::Tensor regressor_w;  // d x 1
  ad::Tensor regressor_b;  // 1 x 1

  static ModelParameters init(const ModelConfig& config, std::vector<std::string> vocab,
                              Rng& rng);

  // Trainable tensors with stable names (checkpoint and optimizer order).
  std::vector<std::pair<std::string, ad::Tensor>> named_tensors();
  std::vector<std::pair<std::string, ad::BatchNormState*>> named_batch_norms();

  ModelParameters clone() const;
  void zero_grad();
};

// Per-graph structures computed once and reused across layers and epochs.
struct GraphContext {
  graph::ArchitectureGraph g;
  graph::Generations generations;
  ad::Tensor mask;      // N x N, untracked
  ad::Tensor features;  // N x D, untracked
  int sink = -1;        // unique out-degree-0 node, -1 if not unique
};

GraphContext make_context(graph::ArchitectureGraph g);

struct EncodeOptions {
  ad::Mode mode = ad::Mode::kEval;
  bool update_bn_stats = false;
  Rng* rng = nullptr;          // required in train mode when dropout > 0
  bool sequential_flow = false;  // node-by-node reference path instead of
                                 // generation-level batching
};

// Softmax-weighted message for one target: scores w1.h_target + w2.h_source
// over `sources` (each 1 x d), normalized over that set. Empty source set
// gives the zero message.
ad::Tensor flow_message(const ad::Tensor& h_target, const std::vector<ad::Tensor>& sources,
                        const FlowDirectionParams& p);

// Bidirectional asynchronous message passing: a forward sweep over the
// topological generations with `forward_flow`, then a backward sweep in
// reverse order with `backward_flow`. Nodes with no neighbors in a sweep go
// through the GRU with a zero message.
ad::Tensor flow_encode(const GraphContext& ctx, const ad::Tensor& h_in,
                       const LayerParams& layer, bool sequential = false);

// Same as flow_encode over two cells sharing parameters, with the output-node
// embeddings mixed through `bridge` between the forward and backward sweeps.
std::pair<ad::Tensor, ad::Tensor> flow_encode_pair(const GraphContext& a, const GraphContext& b,
                                                   const ad::Tensor& ha, const ad::Tensor& hb,
                                                   const LayerParams& layer,
                                                   const ad::Tensor& bridge,
                                                   bool sequential = false);

// concat(h1, h2) * bridge, split back into two d-vectors.
std::pair<ad::Tensor, ad::Tensor> two_cell_bridge(const ad::Tensor& h1, const ad::Tensor& h2,
                                                  const ad::Tensor& bridge);

// Masked multi-head attention: per head softmax(Q K^T / sqrt(dk)) is masked
// elementwise by M after normalization (rows are not re-normalized), applied
// to V; heads are concatenated and projected. Dropout on the output in train
// mode.
ad::Tensor flow_attention(const ad::Tensor& h_in, const ad::Tensor& mask,
                          const AttentionParams& p, double dropout_rate,
                          const EncodeOptions& opts);

// One layer: residual + batch norm around the flow encoder, the attention
// module, and the feedforward network; the flow and global branches are fused
// by addition.
ad::Tensor flower_layer(const GraphContext& ctx, const ad::Tensor& h_prev, LayerParams& layer,
                        const ModelConfig& config, const EncodeOptions& opts);

// Graph embedding z_G: projected input features through all layers, mean
// pooling over the final node embeddings. 1 x d.
ad::Tensor encode_embedding(const GraphContext& ctx, ModelParameters& params,
                            const EncodeOptions& opts);
ad::Tensor encode_embedding_pair(const GraphContext& a, const GraphContext& b,
                                 ModelParameters& params, const EncodeOptions& opts);

// Predicted performance: fully connected regressor over z_G. 1 x 1.
ad::Tensor predict_score(const GraphContext& ctx, ModelParameters& params,
                         const EncodeOptions& opts);
ad::Tensor predict_score_pair(const GraphContext& a, const GraphContext& b,
                              ModelParameters& params, const EncodeOptions& opts);

// Scores for a batch of records (each one cell, or two for a two-cell model)
// with shared batch-norm statistics: the three batch norms in every layer
// normalize over the concatenated node rows of all cells in the batch rather
// than per graph. In train mode this is essential — normalizing each graph on
// its own pins every column mean at beta, so the mean-pool readout would
// collapse to the same embedding for every graph and the ranking loss could
// never separate them. In eval mode batch norm is a per-row affine map, so
// the result matches the per-record encoders exactly. Returns one 1 x 1
// score per record.
std::vector<ad::Tensor> predict_scores_batch(
    const std::vector<std::vector<const GraphContext*>>& batch, ModelParameters& params,
    const EncodeOptions& opts);

}  // namespace flower::nn

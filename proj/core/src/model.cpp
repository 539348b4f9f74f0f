#include "flower/model.hpp"

#include <cmath>
#include <stdexcept>

namespace flower::nn {

using ad::Tensor;

namespace {

Tensor xavier(int rows, int cols, Rng& rng) {
  const double bound = std::sqrt(6.0 / (rows + cols));
  Tensor t(rows, cols, true);
  for (double& v : t.values()) v = rng.uniform(-bound, bound);
  return t;
}

ad::GruParams init_gru(int d, Rng& rng) {
  ad::GruParams p;
  p.wz = xavier(d, d, rng);
  p.uz = xavier(d, d, rng);
  p.bz = Tensor(1, d, true);
  p.wr = xavier(d, d, rng);
  p.ur = xavier(d, d, rng);
  p.br = Tensor(1, d, true);
  p.wh = xavier(d, d, rng);
  p.uh = xavier(d, d, rng);
  p.bh = Tensor(1, d, true);
  return p;
}

FlowDirectionParams init_flow(int d, Rng& rng) {
  FlowDirectionParams p;
  p.w1 = xavier(d, 1, rng);
  p.w2 = xavier(d, 1, rng);
  p.gru = init_gru(d, rng);
  return p;
}

ad::BatchNormState init_bn(int d) {
  ad::BatchNormState bn;
  bn.gamma = Tensor(1, d, true);
  for (double& v : bn.gamma.values()) v = 1.0;
  bn.beta = Tensor(1, d, true);
  bn.running_mean.assign(d, 0.0);
  bn.running_var.assign(d, 1.0);
  return bn;
}

Tensor clone_tensor(const Tensor& t) {
  Tensor c(t.rows(), t.cols(), t.tracked());
  c.values() = t.values();
  return c;
}

Rng* require_rng(const EncodeOptions& opts, double rate) {
  if (opts.mode == ad::Mode::kTrain && rate > 0.0 && opts.rng == nullptr)
    throw std::invalid_argument("encode: train mode with dropout requires an rng");
  return opts.rng;
}

}  // namespace

void ModelConfig::validate() const {
  if (layers < 1) throw std::invalid_argument("config: layers must be >= 1");
  if (hidden < 1) throw std::invalid_argument("config: hidden width must be >= 1");
  if (heads < 1) throw std::invalid_argument("config: heads must be >= 1");
  if (hidden % heads != 0)
    throw std::invalid_argument("config: hidden width must be divisible by head count");
  if (vocab_size < 1) throw std::invalid_argument("config: vocab size must be >= 1");
  if (dropout < 0.0 || dropout >= 1.0)
    throw std::invalid_argument("config: dropout must be in [0, 1)");
  if (margin < 0.0) throw std::invalid_argument("config: margin must be >= 0");
}

ModelParameters ModelParameters::init(const ModelConfig& config, std::vector<std::string> vocab,
                                      Rng& rng) {
  config.validate();
  if (static_cast<int>(vocab.size()) != config.vocab_size)
    throw std::invalid_argument("init: vocab size mismatch");
  ModelParameters p;
  p.config = config;
  p.vocab = std::move(vocab);
  const int d = config.hidden;
  const int dk = config.head_dim();
  p.input_proj = xavier(config.vocab_size, d, rng);
  for (int l = 0; l < config.layers; ++l) {
    LayerParams layer;
    layer.forward_flow = init_flow(d, rng);
    layer.backward_flow = init_flow(d, rng);
    for (int h = 0; h < config.heads; ++h) {
      layer.attention.wq.push_back(xavier(d, dk, rng));
      layer.attention.wk.push_back(xavier(d, dk, rng));
      layer.attention.wv.push_back(xavier(d, dk, rng));
    }
    layer.attention.wo = xavier(d, d, rng);
    layer.ff_w1 = xavier(d, 2 * d, rng);
    layer.ff_b1 = Tensor(1, 2 * d, true);
    layer.ff_w2 = xavier(2 * d, d, rng);
    layer.ff_b2 = Tensor(1, d, true);
    layer.bn_flow = init_bn(d);
    layer.bn_global = init_bn(d);
    layer.bn_out = init_bn(d);
    p.layers.push_back(std::move(layer));
  }
  if (config.two_cell) p.bridge = xavier(2 * d, 2 * d, rng);
  p.regressor_w = xavier(d, 1, rng);
  p.regressor_b = Tensor(1, 1, true);
  return p;
}

std::vector<std::pair<std::string, Tensor>> ModelParameters::named_tensors() {
  std::vector<std::pair<std::string, Tensor>> out;
  out.emplace_back("input_proj", input_proj);
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const std::string base = "layers." + std::to_string(l) + ".";
    LayerParams& ly = layers[l];
    auto add_flow = [&](const std::string& name, FlowDirectionParams& f) {
      out.emplace_back(base + name + ".w1", f.w1);
      out.emplace_back(base + name + ".w2", f.w2);
      out.emplace_back(base + name + ".gru.wz", f.gru.wz);
      out.emplace_back(base + name + ".gru.uz", f.gru.uz);
      out.emplace_back(base + name + ".gru.bz", f.gru.bz);
      out.emplace_back(base + name + ".gru.wr", f.gru.wr);
      out.emplace_back(base + name + ".gru.ur", f.gru.ur);
      out.emplace_back(base + name + ".gru.br", f.gru.br);
      out.emplace_back(base + name + ".gru.wh", f.gru.wh);
      out.emplace_back(base + name + ".gru.uh", f.gru.uh);
      out.emplace_back(base + name + ".gru.bh", f.gru.bh);
    };
    add_flow("forward_flow", ly.forward_flow);
    add_flow("backward_flow", ly.backward_flow);
    for (std::size_t h = 0; h < ly.attention.wq.size(); ++h) {
      const std::string hs = std::to_string(h);
      out.emplace_back(base + "attention.wq." + hs, ly.attention.wq[h]);
      out.emplace_back(base + "attention.wk." + hs, ly.attention.wk[h]);
      out.emplace_back(base + "attention.wv." + hs, ly.attention.wv[h]);
    }
    out.emplace_back(base + "attention.wo", ly.attention.wo);
    out.emplace_back(base + "ff.w1", ly.ff_w1);
    out.emplace_back(base + "ff.b1", ly.ff_b1);
    out.emplace_back(base + "ff.w2", ly.ff_w2);
    out.emplace_back(base + "ff.b2", ly.ff_b2);
    out.emplace_back(base + "bn_flow.gamma", ly.bn_flow.gamma);
    out.emplace_back(base + "bn_flow.beta", ly.bn_flow.beta);
    out.emplace_back(base + "bn_global.gamma", ly.bn_global.gamma);
    out.emplace_back(base + "bn_global.beta", ly.bn_global.beta);
    out.emplace_back(base + "bn_out.gamma", ly.bn_out.gamma);
    out.emplace_back(base + "bn_out.beta", ly.bn_out.beta);
  }
  if (config.two_cell) out.emplace_back("bridge", bridge);
  out.emplace_back("regressor.w", regressor_w);
  out.emplace_back("regressor.b", regressor_b);
  return out;
}

std::vector<std::pair<std::string, ad::BatchNormState*>> ModelParameters::named_batch_norms() {
  std::vector<std::pair<std::string, ad::BatchNormState*>> out;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const std::string base = "layers." + std::to_string(l) + ".";
    out.emplace_back(base + "bn_flow", &layers[l].bn_flow);
    out.emplace_back(base + "bn_global", &layers[l].bn_global);
    out.emplace_back(base + "bn_out", &layers[l].bn_out);
  }
  return out;
}

ModelParameters ModelParameters::clone() const {
  ModelParameters c;
  c.config = config;
  c.vocab = vocab;
  c.input_proj = clone_tensor(input_proj);
  for (const LayerParams& ly : layers) {
    LayerParams n;
    auto clone_flow = [](const FlowDirectionParams& f) {
      FlowDirectionParams g;
      g.w1 = clone_tensor(f.w1);
      g.w2 = clone_tensor(f.w2);
      g.gru.wz = clone_tensor(f.gru.wz);
      g.gru.uz = clone_tensor(f.gru.uz);
      g.gru.bz = clone_tensor(f.gru.bz);
      g.gru.wr = clone_tensor(f.gru.wr);
      g.gru.ur = clone_tensor(f.gru.ur);
      g.gru.br = clone_tensor(f.gru.br);
      g.gru.wh = clone_tensor(f.gru.wh);
      g.gru.uh = clone_tensor(f.gru.uh);
      g.gru.bh = clone_tensor(f.gru.bh);
      return g;
    };
    n.forward_flow = clone_flow(ly.forward_flow);
    n.backward_flow = clone_flow(ly.backward_flow);
    for (const Tensor& t : ly.attention.wq) n.attention.wq.push_back(clone_tensor(t));
    for (const Tensor& t : ly.attention.wk) n.attention.wk.push_back(clone_tensor(t));
    for (const Tensor& t : ly.attention.wv) n.attention.wv.push_back(clone_tensor(t));
    n.attention.wo = clone_tensor(ly.attention.wo);
    n.ff_w1 = clone_tensor(ly.ff_w1);
    n.ff_b1 = clone_tensor(ly.ff_b1);
    n.ff_w2 = clone_tensor(ly.ff_w2);
    n.ff_b2 = clone_tensor(ly.ff_b2);
    auto clone_bn = [](const ad::BatchNormState& bn) {
      ad::BatchNormState b;
      b.gamma = clone_tensor(bn.gamma);
      b.beta = clone_tensor(bn.beta);
      b.running_mean = bn.running_mean;
      b.running_var = bn.running_var;
      b.momentum = bn.momentum;
      b.eps = bn.eps;
      return b;
    };
    n.bn_flow = clone_bn(ly.bn_flow);
    n.bn_global = clone_bn(ly.bn_global);
    n.bn_out = clone_bn(ly.bn_out);
    c.layers.push_back(std::move(n));
  }
  if (config.two_cell) c.bridge = clone_tensor(bridge);
  c.regressor_w = clone_tensor(regressor_w);
  c.regressor_b = clone_tensor(regressor_b);
  return c;
}

void ModelParameters::zero_grad() {
  for (auto& [name, t] : named_tensors()) t.zero_grad();
}

GraphContext make_context(graph::ArchitectureGraph g) {
  GraphContext ctx{std::move(g), {}, {}, {}, -1};
  ctx.generations = topological_generations(ctx.g);
  const auto mask = reachability_mask(ctx.g);
  const int n = ctx.g.num_nodes();
  ctx.mask = Tensor(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) ctx.mask.at(i, j) = mask[i][j];
  ctx.features = ctx.g.features();
  int sink = -1;
  int sinks = 0;
  for (int i = 0; i < n; ++i)
    if (ctx.g.out_neighbors(i).empty()) {
      sink = i;
      ++sinks;
    }
  ctx.sink = sinks == 1 ? sink : -1;
  return ctx;
}

Tensor flow_message(const Tensor& h_target, const std::vector<Tensor>& sources,
                    const FlowDirectionParams& p) {
  if (sources.empty()) return Tensor(1, h_target.cols());
  const Tensor target_score = matmul(h_target, p.w1);  // 1 x 1
  std::vector<Tensor> score_parts;
  score_parts.reserve(sources.size());
  for (const Tensor& s : sources) score_parts.push_back(add(target_score, matmul(s, p.w2)));
  const Tensor weights = ad::rowwise_softmax(concat_cols(score_parts));  // 1 x k
  return matmul(weights, concat_rows(sources));                          // 1 x d
}

namespace {

// Shared sweep machinery: per generation, compute every target's message from
// already-updated neighbor embeddings, then push the whole generation through
// the GRU at once (or one node at a time for the sequential reference).
void sweep(std::vector<Tensor>& h, const graph::ArchitectureGraph& g,
           const graph::Generations& gens, const FlowDirectionParams& p, bool reverse,
           bool sequential) {
  const auto order = gens;
  const int num_gens = static_cast<int>(order.size());
  for (int step = 0; step < num_gens; ++step) {
    const std::vector<int>& gen = order[reverse ? num_gens - 1 - step : step];
    std::vector<Tensor> messages;
    messages.reserve(gen.size());
    for (int j : gen) {
      const std::vector<int>& nbrs = reverse ? g.out_neighbors(j) : g.in_neighbors(j);
      std::vector<Tensor> sources;
      sources.reserve(nbrs.size());
      for (int i : nbrs) sources.push_back(h[i]);
      messages.push_back(flow_message(h[j], sources, p));
    }
    if (sequential) {
      for (std::size_t k = 0; k < gen.size(); ++k)
        h[gen[k]] = ad::gru_cell(h[gen[k]], messages[k], p.gru);
    } else {
      std::vector<Tensor> hidden;
      hidden.reserve(gen.size());
      for (int j : gen) hidden.push_back(h[j]);
      Tensor updated = ad::gru_cell(concat_rows(hidden), concat_rows(messages), p.gru);
      for (std::size_t k = 0; k < gen.size(); ++k)
        h[gen[k]] = ad::gather_rows(updated, {static_cast<int>(k)});
    }
  }
}

std::vector<Tensor> split_rows(const Tensor& m) {
  std::vector<Tensor> rows;
  rows.reserve(m.rows());
  for (int r = 0; r < m.rows(); ++r) rows.push_back(ad::gather_rows(m, {r}));
  return rows;
}

}  // namespace

Tensor flow_encode(const GraphContext& ctx, const Tensor& h_in, const LayerParams& layer,
                   bool sequential) {
  std::vector<Tensor> h = split_rows(h_in);
  sweep(h, ctx.g, ctx.generations, layer.forward_flow, /*reverse=*/false, sequential);
  sweep(h, ctx.g, ctx.generations, layer.backward_flow, /*reverse=*/true, sequential);
  return concat_rows(h);
}

std::pair<Tensor, Tensor> two_cell_bridge(const Tensor& h1, const Tensor& h2,
                                          const Tensor& bridge) {
  if (h1.rows() != 1 || h2.rows() != 1 || h1.cols() != h2.cols())
    throw std::invalid_argument("two_cell_bridge: expected two 1 x d embeddings");
  const int d = h1.cols();
  if (bridge.rows() != 2 * d || bridge.cols() != 2 * d)
    throw std::invalid_argument("two_cell_bridge: projection must be 2d x 2d");
  Tensor mixed = matmul(ad::concat_cols({h1, h2}), bridge);
  return {ad::slice_cols(mixed, 0, d), ad::slice_cols(mixed, d, d)};
}

std::pair<Tensor, Tensor> flow_encode_pair(const GraphContext& a, const GraphContext& b,
                                           const Tensor& ha, const Tensor& hb,
                                           const LayerParams& layer, const Tensor& bridge,
                                           bool sequential) {
  if (a.sink < 0 || b.sink < 0)
    throw std::invalid_argument("flow_encode_pair: each cell needs a unique output node");
  std::vector<Tensor> h1 = split_rows(ha);
  std::vector<Tensor> h2 = split_rows(hb);
  sweep(h1, a.g, a.generations, layer.forward_flow, false, sequential);
  sweep(h2, b.g, b.generations, layer.forward_flow, false, sequential);
  auto [o1, o2] = two_cell_bridge(h1[a.sink], h2[b.sink], bridge);
  h1[a.sink] = o1;
  h2[b.sink] = o2;
  sweep(h1, a.g, a.generations, layer.backward_flow, true, sequential);
  sweep(h2, b.g, b.generations, layer.backward_flow, true, sequential);
  return {concat_rows(h1), concat_rows(h2)};
}

Tensor flow_attention(const Tensor& h_in, const Tensor& mask, const AttentionParams& p,
                      double dropout_rate, const EncodeOptions& opts) {
  const int s = static_cast<int>(p.wq.size());
  const int dk = p.wq[0].cols();
  if (mask.rows() != h_in.rows() || mask.cols() != h_in.rows())
    throw std::invalid_argument("flow_attention: mask shape mismatch");
  const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(dk));
  std::vector<Tensor> heads;
  heads.reserve(s);
  for (int i = 0; i < s; ++i) {
    Tensor q = matmul(h_in, p.wq[i]);
    Tensor k = matmul(h_in, p.wk[i]);
    Tensor v = matmul(h_in, p.wv[i]);
    Tensor scores = ad::scale(matmul(q, ad::transpose(k)), inv_sqrt_dk);
    Tensor weights = ad::mul(mask, ad::rowwise_softmax(scores));
    heads.push_back(matmul(weights, v));
  }
  Tensor out = matmul(s == 1 ? heads[0] : concat_cols(heads), p.wo);
  if (opts.mode == ad::Mode::kTrain && dropout_rate > 0.0)
    out = ad::dropout(out, dropout_rate, *require_rng(opts, dropout_rate), opts.mode);
  return out;
}

namespace {

Tensor feedforward(const Tensor& fused, LayerParams& layer, const ModelConfig& config,
                   const EncodeOptions& opts) {
  const int n = fused.rows();
  Tensor hidden = ad::relu(add(matmul(fused, layer.ff_w1), ad::broadcast_rows(layer.ff_b1, n)));
  if (opts.mode == ad::Mode::kTrain && config.dropout > 0.0)
    hidden = ad::dropout(hidden, config.dropout, *require_rng(opts, config.dropout), opts.mode);
  return add(matmul(hidden, layer.ff_w2), ad::broadcast_rows(layer.ff_b2, n));
}

Tensor fuse_and_project(const GraphContext& ctx, const Tensor& h_prev, const Tensor& h_flow_raw,
                        LayerParams& layer, const ModelConfig& config,
                        const EncodeOptions& opts) {
  Tensor h_flow =
      ad::batch_norm(add(h_prev, h_flow_raw), layer.bn_flow, opts.mode, opts.update_bn_stats);
  Tensor attended = flow_attention(h_prev, ctx.mask, layer.attention, config.dropout, opts);
  Tensor h_global =
      ad::batch_norm(add(h_prev, attended), layer.bn_global, opts.mode, opts.update_bn_stats);
  Tensor fused = add(h_flow, h_global);
  Tensor projected = feedforward(fused, layer, config, opts);
  return ad::batch_norm(add(fused, projected), layer.bn_out, opts.mode, opts.update_bn_stats);
}

}  // namespace

Tensor flower_layer(const GraphContext& ctx, const Tensor& h_prev, LayerParams& layer,
                    const ModelConfig& config, const EncodeOptions& opts) {
  require_rng(opts, config.dropout);
  Tensor h_flow_raw = flow_encode(ctx, h_prev, layer, opts.sequential_flow);
  return fuse_and_project(ctx, h_prev, h_flow_raw, layer, config, opts);
}

Tensor encode_embedding(const GraphContext& ctx, ModelParameters& params,
                        const EncodeOptions& opts) {
  if (static_cast<std::size_t>(params.config.vocab_size) != params.vocab.size() ||
      ctx.features.cols() != params.config.vocab_size)
    throw std::invalid_argument("encode: graph vocabulary does not match model vocabulary");
  Tensor h = matmul(ctx.features, params.input_proj);
  for (LayerParams& layer : params.layers)
    h = flower_layer(ctx, h, layer, params.config, opts);
  return ad::mean_rows(h);
}

Tensor encode_embedding_pair(const GraphContext& a, const GraphContext& b,
                             ModelParameters& params, const EncodeOptions& opts) {
  if (!params.config.two_cell)
    throw std::invalid_argument("encode: model was not configured for two-cell inputs");
  Tensor ha = matmul(a.features, params.input_proj);
  Tensor hb = matmul(b.features, params.input_proj);
  for (LayerParams& layer : params.layers) {
    auto [fa, fb] =
        flow_encode_pair(a, b, ha, hb, layer, params.bridge, opts.sequential_flow);
    ha = fuse_and_project(a, ha, fa, layer, params.config, opts);
    hb = fuse_and_project(b, hb, fb, layer, params.config, opts);
  }
  return ad::mean_rows(ad::concat_rows({ha, hb}));
}

Tensor predict_score(const GraphContext& ctx, ModelParameters& params,
                     const EncodeOptions& opts) {
  Tensor z = encode_embedding(ctx, params, opts);
  return add(matmul(z, params.regressor_w), params.regressor_b);
}

Tensor predict_score_pair(const GraphContext& a, const GraphContext& b, ModelParameters& params,
                          const EncodeOptions& opts) {
  Tensor z = encode_embedding_pair(a, b, params, opts);
  return add(matmul(z, params.regressor_w), params.regressor_b);
}

std::vector<Tensor> predict_scores_batch(const std::vector<std::vector<const GraphContext*>>& batch,
                                         ModelParameters& params, const EncodeOptions& opts) {
  require_rng(opts, params.config.dropout);
  // Flatten the batch into cells; remember which cells belong to each record.
  std::vector<const GraphContext*> cells;
  std::vector<std::pair<std::size_t, std::size_t>> record_cells;  // [first, count)
  for (const auto& rec : batch) {
    if (rec.empty() || rec.size() > 2)
      throw std::invalid_argument("predict_scores_batch: each record needs 1 or 2 cells");
    if (rec.size() == 2 && !params.config.two_cell)
      throw std::invalid_argument("predict_scores_batch: model was not configured for two cells");
    record_cells.emplace_back(cells.size(), rec.size());
    for (const GraphContext* c : rec) {
      if (c->features.cols() != params.config.vocab_size)
        throw std::invalid_argument("encode: graph vocabulary does not match model vocabulary");
      cells.push_back(c);
    }
  }

  std::vector<Tensor> h;
  h.reserve(cells.size());
  for (const GraphContext* c : cells) h.push_back(matmul(c->features, params.input_proj));

  for (LayerParams& layer : params.layers) {
    std::vector<Tensor> flow(cells.size());
    for (const auto& [first, count] : record_cells) {
      if (count == 1) {
        flow[first] = flow_encode(*cells[first], h[first], layer, opts.sequential_flow);
      } else {
        auto [fa, fb] = flow_encode_pair(*cells[first], *cells[first + 1], h[first],
                                         h[first + 1], layer, params.bridge,
                                         opts.sequential_flow);
        flow[first] = fa;
        flow[first + 1] = fb;
      }
    }
    std::vector<Tensor> flow_residual, attn_residual;
    flow_residual.reserve(cells.size());
    attn_residual.reserve(cells.size());
    for (std::size_t c = 0; c < cells.size(); ++c) {
      flow_residual.push_back(add(h[c], flow[c]));
      attn_residual.push_back(add(
          h[c], flow_attention(h[c], cells[c]->mask, layer.attention, params.config.dropout,
                               opts)));
    }
    Tensor h_flow = ad::batch_norm(ad::concat_rows(flow_residual), layer.bn_flow, opts.mode,
                                   opts.update_bn_stats);
    Tensor h_global = ad::batch_norm(ad::concat_rows(attn_residual), layer.bn_global, opts.mode,
                                     opts.update_bn_stats);
    Tensor fused = add(h_flow, h_global);
    Tensor projected = feedforward(fused, layer, params.config, opts);
    Tensor out = ad::batch_norm(add(fused, projected), layer.bn_out, opts.mode,
                                opts.update_bn_stats);
    int offset = 0;
    for (std::size_t c = 0; c < cells.size(); ++c) {
      const int n = cells[c]->g.num_nodes();
      std::vector<int> rows(n);
      for (int r = 0; r < n; ++r) rows[r] = offset + r;
      h[c] = ad::gather_rows(out, rows);
      offset += n;
    }
  }

  std::vector<Tensor> scores;
  scores.reserve(batch.size());
  for (const auto& [first, count] : record_cells) {
    Tensor pooled = count == 1 ? ad::mean_rows(h[first])
                               : ad::mean_rows(ad::concat_rows({h[first], h[first + 1]}));
    scores.push_back(add(matmul(pooled, params.regressor_w), params.regressor_b));
  }
  return scores;
}

}  // namespace flower::nn

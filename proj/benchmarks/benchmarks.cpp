#include <benchmark/benchmark.h>

#include <memory>
#include <string>
#include <vector>

#include "flower/dataset.hpp"
#include "flower/metrics.hpp"
#include "flower/model.hpp"

using namespace flower;
using ad::Tensor;

namespace {

std::shared_ptr<const std::vector<std::string>> vocab3() {
  static auto v = std::make_shared<const std::vector<std::string>>(
      std::vector<std::string>{"op0", "op1", "op2"});
  return v;
}

nn::ModelParameters bench_model(int layers, int hidden, int heads) {
  nn::ModelConfig mc;
  mc.layers = layers;
  mc.hidden = hidden;
  mc.heads = heads;
  mc.vocab_size = 3;
  mc.dropout = 0.0;
  Rng rng(1);
  return nn::ModelParameters::init(mc, *vocab3(), rng);
}

nn::GraphContext bench_context(int nodes, std::uint64_t seed) {
  auto records = data::generate_synthetic(1, nodes, *vocab3(), seed);
  return nn::make_context(records[0].cells[0]);
}

void BM_EncodeForward(benchmark::State& state) {
  auto params = bench_model(static_cast<int>(state.range(0)), 64, 4);
  auto ctx = bench_context(8, 2);
  nn::EncodeOptions opts;
  for (auto _ : state) {
    Tensor z = nn::encode_embedding(ctx, params, opts);
    benchmark::DoNotOptimize(z.values().data());
  }
}
BENCHMARK(BM_EncodeForward)->Arg(1)->Arg(4);

void BM_FlowEncode(benchmark::State& state) {
  auto params = bench_model(1, 64, 4);
  auto ctx = bench_context(static_cast<int>(state.range(0)), 3);
  const int n = ctx.g.num_nodes();
  Rng rng(4);
  Tensor h(n, 64);
  for (double& v : h.values()) v = rng.uniform(-1.0, 1.0);
  for (auto _ : state) {
    Tensor out = nn::flow_encode(ctx, h, params.layers[0]);
    benchmark::DoNotOptimize(out.values().data());
  }
}
BENCHMARK(BM_FlowEncode)->Arg(5)->Arg(8);

void BM_FlowAttention(benchmark::State& state) {
  auto params = bench_model(1, 64, 4);
  auto ctx = bench_context(8, 5);
  const int n = ctx.g.num_nodes();
  Rng rng(6);
  Tensor h(n, 64);
  for (double& v : h.values()) v = rng.uniform(-1.0, 1.0);
  nn::EncodeOptions opts;
  for (auto _ : state) {
    Tensor out = nn::flow_attention(h, ctx.mask, params.layers[0].attention, 0.0, opts);
    benchmark::DoNotOptimize(out.values().data());
  }
}
BENCHMARK(BM_FlowAttention);

void BM_KendallTau(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  Rng rng(7);
  std::vector<double> a(n), b(n);
  for (double& v : a) v = rng.next_double();
  for (double& v : b) v = rng.next_double();
  for (auto _ : state) benchmark::DoNotOptimize(metrics::kendall_tau(a, b));
}
BENCHMARK(BM_KendallTau)->Arg(100)->Arg(1000);

}  // namespace

BENCHMARK_MAIN();

#include <benchmark/benchmark.h>

#include "lasi/lm.hpp"
#include "lasi/train.hpp"

namespace {

using namespace lasi;

Tensor<float> randf(Shape shape, uint64_t seed) {
  Rng rng(seed);
  return Tensor<float>::randn(std::move(shape), rng, 1.0);
}

void BM_matmul(benchmark::State& state) {
  const int64_t n = state.range(0);
  auto a = randf({n, n}, 1);
  auto b = randf({n, n}, 2);
  for (auto _ : state) {
    benchmark::DoNotOptimize(matmul(a, b));
  }
  state.SetItemsProcessed(state.iterations() * 2 * n * n * n);
}
BENCHMARK(BM_matmul)->Arg(64)->Arg(128)->Arg(256);

void BM_attention(benchmark::State& state) {
  const int64_t len = state.range(0);
  nn::BlockConfig cfg;
  Rng rng(3);
  auto params = nn::AttentionParams<float>::init(cfg.d_model, rng);
  auto x = randf({len, cfg.d_model}, 4);
  for (auto _ : state) {
    benchmark::DoNotOptimize(nn::multi_head_attention(cfg, params, x, x, x));
  }
}
BENCHMARK(BM_attention)->Arg(16)->Arg(50)->Arg(100);

void BM_encoder_layer_fwd(benchmark::State& state) {
  const int64_t len = state.range(0);
  nn::BlockConfig cfg;
  Rng rng(5);
  auto params = nn::EncoderLayerParams<float>::init(cfg, rng);
  auto x = randf({len, cfg.d_model}, 6);
  for (auto _ : state) {
    benchmark::DoNotOptimize(nn::encoder_layer(cfg, params, x));
  }
}
BENCHMARK(BM_encoder_layer_fwd)->Arg(16)->Arg(50)->Arg(100);

void BM_mlm_train_step(benchmark::State& state) {
  lm::ModelSpec spec;
  spec.vocab_size = 1000;
  Rng rng(7);
  auto model = lm::EncoderModel<float>::init(spec, rng);
  nn::ParamList<float> params;
  model.visit_params("enc", [&](const std::string& n, Tensor<float>& t) {
    params.emplace_back(n, t);
  });
  std::vector<int> ids = {2};  // [CLS]
  for (int i = 0; i < 14; ++i) ids.push_back(7 + i);
  ids.push_back(3);  // [SEP]
  for (auto _ : state) {
    for (auto& [n, t] : params) t.zero_grad();
    Rng step_rng(state.iterations());
    GradStore<float> store;
    auto loss = model.mlm_example_loss(ids, 0.15, step_rng);
    backward(loss, store);
    benchmark::DoNotOptimize(loss.item());
  }
}
BENCHMARK(BM_mlm_train_step);

}  // namespace

BENCHMARK_MAIN();

#include <benchmark/benchmark.h>

#include "expose/model.hpp"

namespace {

expose::ModelConfig desk_model() {
  expose::ModelConfig c;
  c.length = 50;
  c.model_dim = 64;
  c.mlp_dim = 128;
  c.num_heads = 4;
  c.num_layers = 2;
  c.audio_dim = 16;
  c.adapter_tokens = 8;
  c.dropout = 0.0;
  return c;
}

expose::DenoiseBatch<float> random_batch(const expose::ModelConfig& c, int clips, expose::Rng& rng) {
  std::normal_distribution<float> n;
  expose::DenoiseBatch<float> b;
  b.noisy.resize(static_cast<Eigen::Index>(clips) * c.length, c.feature_dim);
  b.audio.resize(static_cast<Eigen::Index>(clips) * c.length, c.audio_dim);
  for (Eigen::Index i = 0; i < b.noisy.size(); ++i) b.noisy.data()[i] = n(rng);
  for (Eigen::Index i = 0; i < b.audio.size(); ++i) b.audio.data()[i] = n(rng);
  for (int i = 0; i < clips; ++i) {
    b.timesteps.push_back(1 + i % 1000);
    b.audio_on.push_back(i % 3 != 0);
    b.identity_on.push_back(i % 3 == 2);
  }
  return b;
}

void DenoiseForward(benchmark::State& state) {
  const auto c = desk_model();
  expose::Rng rng(1);
  const auto params = expose::init_base_params(c, rng);
  const auto adapter = expose::init_adapter(c, rng);
  const auto batch = random_batch(c, static_cast<int>(state.range(0)), rng);
  expose::ForwardCache<float> cache;
  for (auto _ : state) {
    auto out = expose::denoise_forward(c, params, &adapter, batch, cache);
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(DenoiseForward)->Arg(1)->Arg(64)->Arg(192);

void DenoiseTrainStep(benchmark::State& state) {
  const auto c = desk_model();
  expose::Rng rng(2);
  const auto params = expose::init_base_params(c, rng);
  const auto batch = random_batch(c, static_cast<int>(state.range(0)), rng);
  expose::MatrixF noise = batch.noisy;
  expose::ForwardCache<float> cache;
  auto grad = params.zeros_like();
  for (auto _ : state) {
    benchmark::DoNotOptimize(
        expose::denoise_loss_and_grad<float>(c, params, nullptr, batch, noise, cache, &grad, nullptr));
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(DenoiseTrainStep)->Arg(64);

void AdapterTrainStep(benchmark::State& state) {
  const auto c = desk_model();
  expose::Rng rng(3);
  const auto params = expose::init_base_params(c, rng);
  const auto adapter = expose::init_adapter(c, rng);
  const auto batch = random_batch(c, static_cast<int>(state.range(0)), rng);
  expose::MatrixF noise = batch.noisy;
  expose::ForwardCache<float> cache;
  auto grad = expose::AdapterParams::zeros(c.adapter_tokens, c.model_dim);
  for (auto _ : state) {
    benchmark::DoNotOptimize(
        expose::denoise_loss_and_grad<float>(c, params, &adapter, batch, noise, cache, nullptr, &grad));
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(AdapterTrainStep)->Arg(64);

}  // namespace
BENCHMARK_MAIN();

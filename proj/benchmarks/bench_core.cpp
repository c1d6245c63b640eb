#include <benchmark/benchmark.h>

#include "tra/backbone.hpp"
#include "tra/dataprep.hpp"
#include "tra/numerics.hpp"
#include "tra/ot.hpp"
#include "tra/tra_model.hpp"
#include "tra/trainer.hpp"

namespace {

using namespace tra;

void BM_SinkhornPlan(benchmark::State& state) {
  const std::size_t n = static_cast<std::size_t>(state.range(0));
  const std::size_t k = 3;
  SeededRng rng(1);
  Matrix loss(n, k);
  for (double& v : loss.flat()) v = rng.uniform();
  const Vec shares(k, 1.0 / 3.0);
  SinkhornConfig cfg;
  cfg.epsilon = 0.05 * mean(loss.flat());
  for (auto _ : state) {
    benchmark::DoNotOptimize(sinkhorn_plan(loss, shares, cfg));
  }
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_SinkhornPlan)->RangeMultiplier(4)->Range(32, 2048)->Complexity();

void BM_BackboneForward(benchmark::State& state) {
  BackboneConfig cfg;
  cfg.kind = static_cast<BackboneKind>(state.range(0));
  cfg.window_len = 10;
  cfg.feature_dim = 16;
  cfg.latent_dim = 16;
  if (cfg.kind != BackboneKind::LinearFlatten) cfg.hidden_dims = {16};
  SeededRng rng(2);
  const BackboneParams params = init_backbone(cfg, rng);
  Matrix window(cfg.window_len, cfg.feature_dim);
  for (double& v : window.flat()) v = rng.uniform();
  for (auto _ : state) {
    benchmark::DoNotOptimize(backbone_forward(params, window));
  }
}
BENCHMARK(BM_BackboneForward)->Arg(0)->Arg(1)->Arg(2);

void BM_BackboneBackward(benchmark::State& state) {
  BackboneConfig cfg;
  cfg.kind = static_cast<BackboneKind>(state.range(0));
  cfg.window_len = 10;
  cfg.feature_dim = 16;
  cfg.latent_dim = 16;
  if (cfg.kind != BackboneKind::LinearFlatten) cfg.hidden_dims = {16};
  SeededRng rng(3);
  const BackboneParams params = init_backbone(cfg, rng);
  Matrix window(cfg.window_len, cfg.feature_dim);
  for (double& v : window.flat()) v = rng.uniform();
  Vec grad_h(cfg.latent_dim, 0.3);
  BackboneCache cache;
  backbone_forward(params, window, &cache);
  BackboneParams grads = zero_like(params);
  for (auto _ : state) {
    backbone_backward(params, window, cache, grad_h, grads);
    benchmark::DoNotOptimize(grads);
  }
}
BENCHMARK(BM_BackboneBackward)->Arg(0)->Arg(1)->Arg(2);

void BM_Route(benchmark::State& state) {
  RouterParams shape;
  shape.k = 3;
  shape.latent_dim = 16;
  shape.state_dim = 8;
  shape.lookback = 30;
  shape.gap = 8;
  SeededRng rng(4);
  const RouterParams router = init_router(shape, rng);
  Matrix err(23, 3);
  for (double& v : err.flat()) v = 0.1 * rng.uniform();
  Vec h(16);
  for (double& v : h) v = rng.uniform();
  SeededRng draw(5);
  for (auto _ : state) {
    benchmark::DoNotOptimize(route(router, h, err, draw, RouteMode::Train));
  }
}
BENCHMARK(BM_Route);

void BM_MemoryAggregate(benchmark::State& state) {
  ErrorMemory memory(100, 3);
  for (int t = 0; t < 1000; ++t) memory.write(7, t, Vec{0.1, 0.2, 0.3});
  Matrix out;
  for (auto _ : state) {
    memory.aggregate_into(7, 900, 30, 8, out);
    benchmark::DoNotOptimize(out);
  }
}
BENCHMARK(BM_MemoryAggregate);

void BM_CrossSectionalRank(benchmark::State& state) {
  SeededRng rng(6);
  Vec values(static_cast<std::size_t>(state.range(0)));
  for (double& v : values) v = rng.uniform();
  for (auto _ : state) {
    benchmark::DoNotOptimize(cross_sectional_rank(values));
  }
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_CrossSectionalRank)->RangeMultiplier(4)->Range(64, 4096)->Complexity();

}  // namespace

BENCHMARK_MAIN();

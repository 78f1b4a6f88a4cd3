#include <benchmark/benchmark.h>

#include "dsanet/backbone.hpp"
#include "dsanet/conv4d.hpp"
#include "dsanet/cost_model.hpp"
#include "dsanet/dsa.hpp"
#include "dsanet/rng.hpp"

namespace {

using namespace dsanet;

Tensor random_tensor(const Shape& shape, Rng& rng) {
  Tensor t = Tensor::zeros(shape);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-1.0, 1.0);
  return t;
}

void BM_SegmentConv(benchmark::State& state) {
  const std::size_t c = static_cast<std::size_t>(state.range(0));
  Rng rng(1);
  Tensor v = random_tensor({2, c, 4, 4, 14, 14}, rng);
  DynamicKernel k{Tensor::zeros({2, c, 3})};
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t l = 0; l < 3; ++l) k.values(n, ch, l) = 1.0 / 3;
  for (auto _ : state) {
    benchmark::DoNotOptimize(segment_conv(v, k));
  }
  state.SetItemsProcessed(state.iterations() *
                          static_cast<std::int64_t>(v.size() * 3));
}
BENCHMARK(BM_SegmentConv)->Arg(8)->Arg(32);

void BM_Conv4dOracle(benchmark::State& state) {
  Rng rng(2);
  Tensor v = random_tensor({1, 3, 4, 2, 2, 2}, rng);
  DynamicKernel rows{Tensor::full({1, 3, 3}, 1.0 / 3)};
  Kernel4D k = embed_dsa_kernel(rows, 3);
  for (auto _ : state) {
    benchmark::DoNotOptimize(conv4d(v, k));
  }
}
BENCHMARK(BM_Conv4dOracle);

void BM_GenerateKernel(benchmark::State& state) {
  DsaConfig cfg;
  cfg.channels = static_cast<std::size_t>(state.range(0));
  cfg.snippets = 4;
  Rng rng(3);
  DsaParams p = DsaParams::init(cfg, rng);
  Tensor ctx = random_tensor({8, cfg.channels, 4}, rng);
  for (auto _ : state) {
    benchmark::DoNotOptimize(generate_kernel(ctx, p, cfg, Mode::kEval));
  }
}
BENCHMARK(BM_GenerateKernel)->Arg(16)->Arg(64);

void BM_DsaForward(benchmark::State& state) {
  DsaConfig cfg;
  cfg.channels = 32;
  cfg.snippets = 4;
  cfg.dynamic_fraction = 0.125;
  Rng rng(4);
  DsaParams p = DsaParams::init(cfg, rng);
  Tensor v = random_tensor({2, 32, 4, 2, 8, 8}, rng);
  for (auto _ : state) {
    benchmark::DoNotOptimize(dsa_forward(v, p, cfg, Mode::kEval));
  }
}
BENCHMARK(BM_DsaForward);

void BM_ArchCost(benchmark::State& state) {
  const ArchSpec arch = load_arch(builtin_arch_dir() / "i3d_r50.json");
  for (auto _ : state) {
    benchmark::DoNotOptimize(arch_cost(arch, 4, 224, 4));
  }
}
BENCHMARK(BM_ArchCost);

void BM_ToyNetStep(benchmark::State& state) {
  ToyNetSpec spec = make_demo_spec(2, 16, 0.125);
  Rng rng(5);
  ToyNetParams params = ToyNetParams::init(spec, rng);
  OrderDataset ds = make_order_dataset(32, 6);
  for (auto _ : state) {
    ToyNetParams work = params;
    benchmark::DoNotOptimize(train_toy(spec, work, ds, 1, 0.05, 1, 16));
  }
}
BENCHMARK(BM_ToyNetStep);

}  // namespace

BENCHMARK_MAIN();

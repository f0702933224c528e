// Microbenchmarks for the hot kernels: convolution, Gram products, feature
// extraction, and one full objective+gradient evaluation.

#include <benchmark/benchmark.h>

#include "purify/autodiff.hpp"
#include "purify/fixtures.hpp"
#include "purify/lossnet.hpp"
#include "purify/stylize.hpp"

using namespace purify;

namespace {

const LossNetWeights& bench_weights() {
  static LossNetWeights w(make_random_weight_file(7));
  return w;
}

void BM_conv2d(benchmark::State& state) {
  const int size = static_cast<int>(state.range(0));
  const int channels = static_cast<int>(state.range(1));
  Tensor x = Tensor::uniform({1, channels, size, size}, 1, -1.f, 1.f);
  Tensor k = Tensor::gaussian({channels, channels, 3, 3}, 2, 0.0, 0.05);
  for (auto _ : state) {
    auto y = ad::conv2d(ad::constant(x), ad::constant(k), {}, 1, 1);
    benchmark::DoNotOptimize(y->value.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(size) * size * channels *
                          channels * 9);
}

void BM_gram(benchmark::State& state) {
  const int size = static_cast<int>(state.range(0));
  Tensor x = Tensor::uniform({1, 256, size, size}, 3, -1.f, 1.f);
  for (auto _ : state) {
    auto g = ad::gram(ad::constant(x));
    benchmark::DoNotOptimize(g->value.data());
  }
}

void BM_extract_features(benchmark::State& state) {
  const int size = static_cast<int>(state.range(0));
  Tensor img = Tensor::uniform({1, 3, size, size}, 4, 0.f, 255.f);
  for (auto _ : state) {
    FeatureBundle bundle = extract_features(img, bench_weights(), TapSet{});
    benchmark::DoNotOptimize(bundle.features);
  }
}

void BM_objective_gradient(benchmark::State& state) {
  const int size = static_cast<int>(state.range(0));
  DeskFixture fx = make_desk_fixture(size, 5);
  LossContext ctx = build_loss_context(fx.content, fx.content_mask, fx.style, fx.style_mask,
                                       LossConfig{}, bench_weights());
  Tensor x = Tensor::uniform(fx.content.shape(), 6, 0.f, 255.f);
  Tensor grad;
  for (auto _ : state) {
    const double loss = evaluate_objective(x, ctx, bench_weights(), &grad);
    benchmark::DoNotOptimize(loss);
  }
}

}  // namespace

BENCHMARK(BM_conv2d)->Args({64, 64})->Args({128, 64})->Args({64, 128})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_gram)->Arg(16)->Arg(32)->Arg(64)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_extract_features)->Arg(32)->Arg(64)->Arg(128)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_objective_gradient)->Arg(32)->Arg(64)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();

#include <benchmark/benchmark.h>

#include "ldct/autodiff.hpp"

using namespace ldct;
using namespace ldct::ad;

static void BM_Conv32Forward(benchmark::State& state) {
  const auto batch = static_cast<std::size_t>(state.range(0));
  Tensor<float> x({batch, 32, 64, 64}, 0.5f);
  Tensor<float> w({32, 32, 3, 3}, 0.01f);
  for (auto _ : state) {
    Tape<float> tape;
    auto y = conv2d(tape.constant(x), tape.constant(w));
    benchmark::DoNotOptimize(y.value().data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<long>(batch));
}
BENCHMARK(BM_Conv32Forward)->Arg(1)->Arg(8)->Unit(benchmark::kMillisecond);

static void BM_Conv32ForwardBackward(benchmark::State& state) {
  const auto batch = static_cast<std::size_t>(state.range(0));
  Tensor<float> x({batch, 32, 64, 64}, 0.5f);
  Tensor<float> w({32, 32, 3, 3}, 0.01f);
  for (auto _ : state) {
    Tape<float> tape;
    auto xv = tape.variable(x);
    auto wv = tape.variable(w);
    auto g = gradients(sum(conv2d(xv, wv)), {xv, wv});
    benchmark::DoNotOptimize(g[1].data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<long>(batch));
}
BENCHMARK(BM_Conv32ForwardBackward)->Arg(8)->Unit(benchmark::kMillisecond);
BENCHMARK_MAIN();

#include <benchmark/benchmark.h>

#include "ldct/autodiff.hpp"
#include "ldct/ct_sim.hpp"
#include "ldct/losses.hpp"
#include "ldct/metrics.hpp"
#include "ldct/networks.hpp"

using namespace ldct;
using namespace ldct::ad;

namespace {

Tensor<float> ramp(const Shape& shape) {
  Tensor<float> t(shape);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<float>((i * 2654435761u) % 1000) / 1000.0f;
  return t;
}

}  // namespace

static void BM_GeneratorMseStep(benchmark::State& state) {
  const auto batch = static_cast<std::size_t>(state.range(0));
  const nn::GeneratorSpec spec;
  const auto params = nn::init_params<float>(spec, 1);
  const auto z = ramp({batch, 1, 64, 64}), x = ramp({batch, 1, 64, 64});
  for (auto _ : state) {
    Tape<float> tape;
    auto b = nn::bind(params, tape, true);
    auto loss = loss::mse_loss(nn::generator_forward(spec, b, tape.constant(z)), tape.constant(x));
    auto g = gradients(loss, b.vars);
    benchmark::DoNotOptimize(g.back().data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<long>(batch));
}
BENCHMARK(BM_GeneratorMseStep)->Arg(1)->Arg(16)->Unit(benchmark::kMillisecond);

static void BM_CriticPenaltyStep(benchmark::State& state) {
  const auto batch = static_cast<std::size_t>(state.range(0));
  const nn::DiscriminatorSpec spec;
  const auto params = nn::init_params<float>(spec, 2);
  const auto x = ramp({batch, 1, 64, 64}), gz = ramp({batch, 1, 64, 64});
  Tensor<float> eps({batch}, 0.5f);
  for (auto _ : state) {
    Tape<float> tape;
    auto b = nn::bind(params, tape, true);
    auto penalty = loss::gradient_penalty<float>(spec, b, x, gz, eps, 10.0, tape);
    auto g = gradients(penalty, b.vars);
    benchmark::DoNotOptimize(g.back().data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<long>(batch));
}
BENCHMARK(BM_CriticPenaltyStep)->Arg(1)->Arg(4)->Unit(benchmark::kMillisecond);

static void BM_Ssim(benchmark::State& state) {
  const auto side = static_cast<std::size_t>(state.range(0));
  const auto a = ramp({side, side}).cast<double>(), b = ramp({side, side}).cast<double>();
  for (auto _ : state) benchmark::DoNotOptimize(metrics::ssim(a, b));
}
BENCHMARK(BM_Ssim)->Arg(256)->Arg(512)->Unit(benchmark::kMillisecond);

static void BM_RadonFbp(benchmark::State& state) {
  const auto grid = static_cast<std::size_t>(state.range(0));
  const auto phantom = ct::random_abdomen(3, grid, 38.4 / static_cast<double>(grid));
  const auto img = ct::render_phantom(phantom);
  const ct::ScanProtocol protocol;
  for (auto _ : state) {
    auto rec = ct::fbp_reconstruct(ct::radon_forward(img, phantom.pixel_size, protocol));
    benchmark::DoNotOptimize(rec.data());
  }
}
BENCHMARK(BM_RadonFbp)->Arg(128)->Arg(256)->Unit(benchmark::kMillisecond);

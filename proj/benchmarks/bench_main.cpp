#include <cstdint>
#include <vector>

#include <benchmark/benchmark.h>

#include "reinlab/head.hpp"
#include "reinlab/model.hpp"
#include "reinlab/ops.hpp"
#include "reinlab/optim.hpp"
#include "reinlab/rng.hpp"
#include "reinlab/synth.hpp"

using namespace reinlab;

namespace {

std::vector<Scalar> random_values(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Scalar> v(n);
  for (auto& x : v) x = static_cast<Scalar>(rng.uniform(-1, 1));
  return v;
}

void BM_Gemm(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = random_values(n * n, 1), b = random_values(n * n, 2);
  std::vector<Scalar> c(n * n);
  for (auto _ : state) {
    std::fill(c.begin(), c.end(), Scalar(0));
    gemm_accumulate(n, n, n, a.data(), b.data(), c.data());
    benchmark::DoNotOptimize(c.data());
  }
  state.counters["FLOP/s"] = benchmark::Counter(2.0 * n * n * n, benchmark::Counter::kIsIterationInvariantRate,
                                                 benchmark::Counter::kIs1000);
}
BENCHMARK(BM_Gemm)->Arg(64)->Arg(128)->Arg(256);

void BM_MatmulBackward(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Tensor a({n, n}, random_values(n * n, 3), true);
  Tensor b({n, n}, random_values(n * n, 4), true);
  for (auto _ : state) {
    Tape tape;
    const auto loss = sum(matmul(a, b));
    tape.backward(loss);
    a.zero_grad();
    b.zero_grad();
  }
}
BENCHMARK(BM_MatmulBackward)->Arg(64)->Arg(256);

SceneSample bench_scene() {
  return generate_scene(9, DomainSpec::source(6), 6, 64, 64);
}

void BM_Forward(benchmark::State& state) {
  auto cfg = ModelConfig::desk_default();
  cfg.mode = static_cast<FineTuneMode>(state.range(0));
  SegModel model(cfg, 0, 0);
  const auto image = image_tensor(bench_scene());
  NoGradGuard no_grad;
  for (auto _ : state) benchmark::DoNotOptimize(model.forward(image).prediction.pixel_logits.data().data());
  state.SetLabel(std::string(mode_name(cfg.mode)));
}
BENCHMARK(BM_Forward)
    ->Arg(static_cast<int>(FineTuneMode::freeze))
    ->Arg(static_cast<int>(FineTuneMode::rein))
    ->Unit(benchmark::kMillisecond);

void BM_TrainStep(benchmark::State& state) {
  auto cfg = ModelConfig::desk_default();
  cfg.mode = static_cast<FineTuneMode>(state.range(0));
  SegModel model(cfg, 0, 0);
  AdamW opt(AdamWOptions{});
  for (const auto& p : model.trainable_parameters()) opt.add(p, 1e-4);
  const auto scene = bench_scene();
  const auto image = image_tensor(scene);
  const auto labels = label_map(scene);
  for (auto _ : state) {
    Tape tape;
    const auto loss = segmentation_loss(model.forward(image).prediction, labels);
    tape.backward(loss);
    opt.step();
    opt.zero_grad();
  }
  state.SetLabel(std::string(mode_name(cfg.mode)));
}
BENCHMARK(BM_TrainStep)
    ->Arg(static_cast<int>(FineTuneMode::full))
    ->Arg(static_cast<int>(FineTuneMode::freeze))
    ->Arg(static_cast<int>(FineTuneMode::rein))
    ->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();

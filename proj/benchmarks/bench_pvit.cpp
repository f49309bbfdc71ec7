#include <benchmark/benchmark.h>

#include <vector>

#include "pvit/explain.hpp"
#include "pvit/phantom.hpp"
#include "pvit/rng.hpp"
#include "pvit/stats.hpp"
#include "pvit/vit.hpp"

namespace {

using namespace pvit;

Tensor noise_image(std::size_t size, std::uint64_t seed) {
  Rng rng(seed);
  Tensor t({size, size});
  for (double& v : t.storage()) v = rng.normal();
  return t;
}

ViTConfig preset(std::int64_t index) {
  switch (index) {
    case 0: return ViTConfig::micro_student();
    case 1: return ViTConfig::micro_teacher();
    case 2: return ViTConfig::student();
    default: return ViTConfig::teacher();
  }
}

void BM_Forward(benchmark::State& state) {
  const ViTConfig c = preset(state.range(0));
  const ModelParams p = init_params(c, 1);
  const Tensor img = noise_image(c.image_size, 2);
  for (auto _ : state) benchmark::DoNotOptimize(predict(p, img).logits);
  state.counters["params"] = static_cast<double>(param_count(c));
}
// Full-size presets at 224 px are slow on one core; a single iteration is enough.
BENCHMARK(BM_Forward)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Forward)->Arg(2)->Arg(3)->Iterations(1)->Unit(benchmark::kMillisecond);

void BM_ForwardBackward(benchmark::State& state) {
  const ViTConfig c = preset(state.range(0));
  const ModelParams p = init_params(c, 1);
  const Tensor img = noise_image(c.image_size, 2);
  for (auto _ : state) {
    Tape tape;
    const BoundParams bp = bind(tape, p, true);
    tape.backward(element(forward(tape, bp, img).logits, 1));
    benchmark::DoNotOptimize(bp.grads(tape));
  }
}
BENCHMARK(BM_ForwardBackward)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

void BM_GradCam(benchmark::State& state) {
  const ModelParams p = init_params(ViTConfig::micro_student(), 1);
  const Tensor img = noise_image(32, 2);
  const GradCamOptions opts{.output_size = static_cast<std::size_t>(state.range(0))};
  for (auto _ : state) benchmark::DoNotOptimize(grad_cam(p, img, 1, opts));
}
BENCHMARK(BM_GradCam)->Arg(32)->Arg(224)->Unit(benchmark::kMillisecond);

void BM_PhantomSubject(benchmark::State& state) {
  const auto specs = sample_specs(1, 0, 7);
  for (auto _ : state) benchmark::DoNotOptimize(generate_subject(specs.front(), 7, static_cast<std::size_t>(state.range(0))));
}
BENCHMARK(BM_PhantomSubject)->Arg(224)->Unit(benchmark::kMillisecond);

void BM_DeLong(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(3);
  std::vector<double> a(n), b(n);
  std::vector<int> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    y[i] = i < n / 2 ? 1 : 0;
    a[i] = y[i] + rng.normal();
    b[i] = 0.5 * y[i] + rng.normal();
  }
  for (auto _ : state) benchmark::DoNotOptimize(delong_test(a, b, y));
}
BENCHMARK(BM_DeLong)->Arg(169)->Arg(1000);

}  // namespace

BENCHMARK_MAIN();

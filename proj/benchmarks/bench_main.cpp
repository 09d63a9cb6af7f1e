#include <vector>

#include <benchmark/benchmark.h>

#include "fairdiff/adjusted_dft.hpp"
#include "fairdiff/denoiser.hpp"
#include "fairdiff/ot.hpp"
#include "fairdiff/rng.hpp"
#include "fairdiff/sampler.hpp"
#include "fairdiff/schedule.hpp"

using namespace fairdiff;

namespace {

DenoiserShape bench_shape() {
  DenoiserShape s;
  s.data_dim = 8;
  s.num_contexts = 40;
  s.max_timestep = 100;
  return s;
}

ProbMatrix random_probs(Rng& rng, int n, int k) {
  ProbMatrix p(static_cast<std::size_t>(n), std::vector<double>(static_cast<std::size_t>(k)));
  for (auto& row : p) {
    double s = 0.0;
    for (double& v : row) s += v = 0.05 + rng.uniform();
    for (double& v : row) v /= s;
  }
  return p;
}

void BM_DenoiserPredict(benchmark::State& state) {
  auto model = DenoiserModel::create(bench_shape(), 1);
  ConditionedDenoiser den(model, 3, std::nullopt);
  std::vector<double> z(8, 0.3), eps(8);
  for (auto _ : state) {
    den.predict(z, 50, eps, nullptr);
    benchmark::DoNotOptimize(eps.data());
  }
}
BENCHMARK(BM_DenoiserPredict);

void BM_Sample(benchmark::State& state) {
  const auto model = DenoiserModel::create(bench_shape(), 2);
  const auto schedule = build_noise_schedule(100, 0.0085, 0.12, ScheduleKind::kScaledLinear);
  const auto cfg = SamplerConfig::strided(100, static_cast<int>(state.range(0)));
  const std::vector<double> zT(8, 0.5);
  for (auto _ : state) benchmark::DoNotOptimize(sample(model, 0, zT, schedule, cfg));
}
BENCHMARK(BM_Sample)->Arg(6)->Arg(21)->Arg(101);

void BM_SampleWithGrad(benchmark::State& state) {
  const auto model = DenoiserModel::create(bench_shape(), 3);
  const auto schedule = build_noise_schedule(100, 0.0085, 0.12, ScheduleKind::kScaledLinear);
  const auto cfg = SamplerConfig::strided(100, 21);
  const auto mode = static_cast<GradientMode>(state.range(0));
  const std::vector<double> zT(8, 0.5), g(8, 1.0);
  std::vector<double> grad(model.params().size());
  for (auto _ : state) {
    const auto s = sample_with_grad(mode, model, 0, zT, schedule, cfg);
    s.backward(g, grad);
    benchmark::DoNotOptimize(grad.data());
  }
  state.SetLabel(to_string(mode));
}
BENCHMARK(BM_SampleWithGrad)
    ->Arg(static_cast<int>(GradientMode::kNaive))
    ->Arg(static_cast<int>(GradientMode::kAdjusted));

void BM_OtAssign(benchmark::State& state) {
  Rng rng(4);
  const int n = static_cast<int>(state.range(0)), k = static_cast<int>(state.range(1));
  const auto p = random_probs(rng, n, k);
  std::vector<int> counts(static_cast<std::size_t>(k), n / k);
  counts[0] += n % k;
  for (auto _ : state) benchmark::DoNotOptimize(ot_assign(p, counts));
}
BENCHMARK(BM_OtAssign)->Args({24, 2})->Args({24, 4})->Args({96, 4});

void BM_ExpectedTargetsExact(benchmark::State& state) {
  Rng rng(5);
  const int n = static_cast<int>(state.range(0)), k = static_cast<int>(state.range(1));
  const auto p = random_probs(rng, n, k);
  const auto target = TargetDistribution::uniform(k);
  for (auto _ : state) benchmark::DoNotOptimize(expected_ot_targets(p, target, OtMethod::exact()));
}
BENCHMARK(BM_ExpectedTargetsExact)->Args({24, 2})->Args({12, 3})->Unit(benchmark::kMillisecond);

void BM_ExpectedTargetsMonteCarlo(benchmark::State& state) {
  Rng rng(6);
  const auto p = random_probs(rng, 24, 4);
  const auto target = TargetDistribution::uniform(4);
  const long draws = state.range(0);
  for (auto _ : state) benchmark::DoNotOptimize(expected_ot_targets(p, target, OtMethod::monte_carlo(draws, 1)));
}
BENCHMARK(BM_ExpectedTargetsMonteCarlo)->Arg(1000)->Arg(10000)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();

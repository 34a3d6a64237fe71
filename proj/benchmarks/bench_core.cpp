#include <benchmark/benchmark.h>

#include <numeric>
#include <vector>

#include "drpo/datagen.hpp"
#include "drpo/environments.hpp"
#include "drpo/estimators.hpp"
#include "drpo/oracle.hpp"
#include "drpo/train.hpp"

namespace {

using namespace drpo;

const TestEnvironment& e2() {
  static const TestEnvironment t = make_test_environment("E2", 0);
  return t;
}

void BM_PsiEval(benchmark::State& state) {
  const auto& t = e2();
  const auto data = sample_dataset(t.env, 1024, 1);
  const EstimatorConfig cfg{};
  std::size_t i = 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(
        psi_eval(data[i % data.size()], t.target, t.env.ref_policy(), t.env.preference(), cfg));
    ++i;
  }
}
BENCHMARK(BM_PsiEval);

void BM_DrEstimate(benchmark::State& state) {
  const auto& t = e2();
  const auto data = sample_dataset(t.env, static_cast<std::size_t>(state.range(0)), 2);
  const EstimatorConfig cfg{};
  for (auto _ : state) {
    auto r = dr_estimate(data, t.target, t.env.ref_policy(), t.env.preference(), cfg);
    benchmark::DoNotOptimize(r.value);
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_DrEstimate)->Arg(500)->Arg(5000);

void BM_SampleDataset(benchmark::State& state) {
  const auto& t = e2();
  std::uint64_t seed = 0;
  for (auto _ : state) {
    auto d = sample_dataset(t.env, static_cast<std::size_t>(state.range(0)), seed++);
    benchmark::DoNotOptimize(d.size());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_SampleDataset)->Arg(1000)->Arg(10000);

void BM_DrpoStep(benchmark::State& state) {
  const auto& t = e2();
  const auto data = augment_swapped(sample_dataset(t.env, 1000, 3));
  std::vector<std::size_t> batch(64);
  std::iota(batch.begin(), batch.end(), 0);
  TrainConfig cfg;
  cfg.dm_mode = state.range(0) ? TrainDmMode::kMonteCarlo : TrainDmMode::kExact;
  const Policy& ref = t.env.ref_policy();
  std::uint64_t step = 0;
  for (auto _ : state) {
    auto g = drpo_loss_and_grad(data, batch, ref, ref, t.env.preference(), cfg, step++);
    benchmark::DoNotOptimize(g.loss);
  }
}
BENCHMARK(BM_DrpoStep)->Arg(0)->Arg(1);

void BM_EnumeratePsiMoments(benchmark::State& state) {
  const auto& t = e2();
  const EstimatorConfig cfg{};
  for (auto _ : state) {
    auto m = enumerate_moments(t.env, [&](const PreferenceTuple& u) {
      return psi_eval(u, t.target, t.env.ref_policy(), t.env.preference(), cfg);
    });
    benchmark::DoNotOptimize(m.variance);
  }
}
BENCHMARK(BM_EnumeratePsiMoments);

}  // namespace

BENCHMARK_MAIN();

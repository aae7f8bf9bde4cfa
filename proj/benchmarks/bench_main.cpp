#include <benchmark/benchmark.h>

#include "cfvi/dynamics.hpp"
#include "cfvi/evaluation.hpp"
#include "cfvi/features.hpp"
#include "cfvi/hjb.hpp"
#include "cfvi/reward.hpp"
#include "cfvi/value_ensemble.hpp"

namespace {

using namespace cfvi;

void BM_EnsembleValueAndGradient(benchmark::State& state) {
  const SystemSpec spec = make_system("pendulum");
  const FeatureTransform ft(spec);
  const ValueEnsemble ve(ft.feature_dim(), EnsembleConfig{}, 1);
  const StateBatch x = sample_domain(spec, static_cast<int>(state.range(0)), 2);
  Eigen::RowVectorXd v(x.cols());
  Eigen::MatrixXd g;
  for (auto _ : state) {
    ve.evaluate_batch(ft, x, v, &g);
    benchmark::DoNotOptimize(v.data());
  }
  state.SetItemsProcessed(state.iterations() * x.cols());
}
BENCHMARK(BM_EnsembleValueAndGradient)->Arg(256)->Arg(4096);

void BM_Targets(benchmark::State& state) {
  const SystemSpec spec = make_system("pendulum");
  const RewardSpec rs = make_reward(spec);
  const FeatureTransform ft(spec);
  const ValueEnsemble ve(ft.feature_dim(), EnsembleConfig{}, 1);
  const EnsembleValue value(ve, ft);
  TargetConfig tc;
  tc.lambda = static_cast<double>(state.range(0)) / 10.0;
  const StateBatch x = sample_domain(spec, 256, 3);
  for (auto _ : state) {
    TargetBatch tb = n_step_targets(value, rs, spec, tc, x);
    benchmark::DoNotOptimize(tb.targets.data());
  }
  state.SetItemsProcessed(state.iterations() * x.cols());
}
BENCHMARK(BM_Targets)->Arg(1)->Arg(5)->Arg(9)->Unit(benchmark::kMillisecond);

void BM_FitEpoch(benchmark::State& state) {
  const SystemSpec spec = make_system("pendulum");
  const FeatureTransform ft(spec);
  ValueEnsemble ve(ft.feature_dim(), EnsembleConfig{}, 1);
  const StateBatch x = sample_domain(spec, 4096, 4);
  Eigen::RowVectorXd v(x.cols());
  ValueEnsemble(ft.feature_dim(), EnsembleConfig{}, 9).evaluate_batch(ft, x, v, nullptr);
  const Eigen::VectorXd t = v.transpose();
  FitConfig fc;
  fc.epochs = 1;
  for (auto _ : state) {
    FitResult r = ve.fit(ft, x, t, fc, 5);
    benchmark::DoNotOptimize(r.final_loss.data());
  }
  state.SetItemsProcessed(state.iterations() * x.cols());
}
BENCHMARK(BM_FitEpoch)->Unit(benchmark::kMillisecond);

void BM_EvaluatePolicy(benchmark::State& state) {
  const SystemSpec spec = make_system("pendulum");
  const RewardSpec rs = make_reward(spec);
  const FeatureTransform ft(spec);
  const ValueEnsemble ve(ft.feature_dim(), EnsembleConfig{}, 1);
  const EnsembleValue value(ve, ft);
  EvalProtocol ep;
  ep.n_rollouts = 10;
  ep.duration = 5.0;
  for (auto _ : state) {
    EvalResult r = evaluate_policy(value, rs, spec, ep, 7, false);
    benchmark::DoNotOptimize(r.success_rate);
  }
}
BENCHMARK(BM_EvaluatePolicy)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();

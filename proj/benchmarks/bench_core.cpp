#include <benchmark/benchmark.h>

#include "pigpvae/data.hpp"
#include "pigpvae/gp.hpp"
#include "pigpvae/metrics.hpp"
#include "pigpvae/models.hpp"
#include "pigpvae/training.hpp"

namespace {

using namespace pigpvae;

SeriesBatch bench_batch(int n = 20) {
  SurrogateSpec spec;
  spec.n = n;
  spec.seed = 7;
  return synthesize_surrogate(spec);
}

void BM_KernelMatrix(benchmark::State& state) {
  Eigen::VectorXd grid = Eigen::VectorXd::LinSpaced(24, 0.0, 1.0);
  KernelParams params;
  for (auto _ : state) benchmark::DoNotOptimize(kernel_matrix(grid, params));
}
BENCHMARK(BM_KernelMatrix);

void BM_GpPosterior(benchmark::State& state) {
  Eigen::VectorXd grid = Eigen::VectorXd::LinSpaced(24, 0.0, 1.0);
  KernelParams params;
  PseudoObservations pseudo;
  pseudo.targets = Eigen::MatrixXd::Random(3, 24);
  pseudo.noise_sd = Eigen::MatrixXd::Constant(3, 24, 0.3);
  for (auto _ : state)
    benchmark::DoNotOptimize(gp_posterior(grid, pseudo, params));
}
BENCHMARK(BM_GpPosterior);

void BM_ObjectiveEpoch(benchmark::State& state) {
  SeriesBatch batch = bench_batch();
  ModelConfig cfg;
  cfg.kind = static_cast<ModelKind>(state.range(0));
  ModelState model = init_model(cfg, batch.time_grid, 11);
  model.normalizer = fit_normalizer(batch);
  model.mode = batch.mode;
  for (auto _ : state) {
    Tape tape;
    BoundParams bound = bind_params(tape, model.params);
    ObjectiveVars obj = build_objective(tape, bound, model, batch, 3);
    Var loss = -obj.total;
    tape.backward(loss);
    benchmark::DoNotOptimize(bound.vars[0].grad_or_zero());
  }
}
BENCHMARK(BM_ObjectiveEpoch)
    ->Arg(static_cast<int>(ModelKind::vae))
    ->Arg(static_cast<int>(ModelKind::gpvae))
    ->Arg(static_cast<int>(ModelKind::pivae))
    ->Arg(static_cast<int>(ModelKind::pigpvae));

void BM_Mmd(benchmark::State& state) {
  SeriesBatch a = bench_batch(29);
  SeriesBatch b = bench_batch(29);
  for (auto _ : state)
    benchmark::DoNotOptimize(mmd2_unbiased(a.values, b.values));
}
BENCHMARK(BM_Mmd);

}  // namespace

BENCHMARK_MAIN();

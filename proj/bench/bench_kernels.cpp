// Serial references against their OpenMP counterparts on four-room data.

#include "dwrl/eval.hpp"
#include "dwrl/experiment.hpp"
#include "dwrl/kernels.hpp"

#include <benchmark/benchmark.h>

using namespace dwrl;

namespace {

const TransitionDataset &dataset() {
  static const TransitionDataset ds = [] {
    GenConfig gen;
    gen.n_trajectories = 1000;
    return generate_four_room(gen);
  }();
  return ds;
}

WeightModel random_model(const TransitionDataset &ds, const DWConfig &cfg) {
  WeightModel m = initial_model(ds, cfg);
  Rng rng(7);
  for (double &v : m.phi) v = uniform01(rng) - 0.5;
  for (double &v : m.psi) v = uniform01(rng) - 0.5;
  return m;
}

template <auto Kernel> void dataset_losses(benchmark::State &state) {
  const TransitionDataset &ds = dataset();
  DWConfig cfg;
  cfg.flow_form = FlowForm::kBalance;
  cfg.flow_scale = FlowScale::kBatchMean;
  const WeightModel m = random_model(ds, cfg);
  for (auto _ : state) benchmark::DoNotOptimize(Kernel(m, ds.records(), cfg));
  state.SetItemsProcessed(state.iterations() * static_cast<long long>(ds.size()));
}

template <auto Kernel> void optdice(benchmark::State &state) {
  const TransitionDataset &ds = dataset();
  std::vector<double> rho0(ds.meta().num_states, 0.0);
  for (const TrajectorySpan &t : ds.trajectories()) rho0[ds[t.begin].s] += 1.0 / ds.num_trajectories();
  std::vector<double> nu(ds.meta().num_states, 0.1), grad;
  for (auto _ : state) benchmark::DoNotOptimize(Kernel(ds.records(), rho0, nu, 1.0, 0.99, &grad));
  state.SetItemsProcessed(state.iterations() * static_cast<long long>(ds.size()));
}

template <auto Kernel> void mc_returns(benchmark::State &state) {
  const GridWorld g = make_four_room(EnvSpec{});
  const TabularPolicy pi = TabularPolicy::uniform(g.mdp.num_states, g.mdp.num_actions);
  const int n = static_cast<int>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(Kernel(g.mdp, pi, 3, n, 200, 0.99));
  state.SetItemsProcessed(state.iterations() * n);
}

template <auto Kernel> void bootstrap(benchmark::State &state) {
  std::vector<double> xs(40);
  Rng rng(1);
  for (double &x : xs) x = uniform01(rng);
  const kernels::Statistic stat = [](std::span<const double> v) { return iqm(v); };
  for (auto _ : state) benchmark::DoNotOptimize(Kernel(xs, stat, 2000, 5));
}

} // namespace

BENCHMARK(dataset_losses<kernels::dataset_losses_serial>)->Name("dataset_losses/serial");
BENCHMARK(dataset_losses<kernels::dataset_losses_parallel>)->Name("dataset_losses/parallel");
BENCHMARK(optdice<kernels::optdice_objective_serial>)->Name("optdice_objective/serial");
BENCHMARK(optdice<kernels::optdice_objective_parallel>)->Name("optdice_objective/parallel");
BENCHMARK(mc_returns<kernels::mc_returns_serial>)->Name("mc_returns/serial")->Arg(200);
BENCHMARK(mc_returns<kernels::mc_returns_parallel>)->Name("mc_returns/parallel")->Arg(200);
BENCHMARK(bootstrap<kernels::bootstrap_serial>)->Name("bootstrap_iqm/serial");
BENCHMARK(bootstrap<kernels::bootstrap_parallel>)->Name("bootstrap_iqm/parallel");

BENCHMARK_MAIN();

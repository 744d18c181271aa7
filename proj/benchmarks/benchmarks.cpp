// Microbenchmarks for the hot paths: rate-model propagation, the Lindblad
// right-hand side in each register size, Krylov time stepping, and the
// small-system steady-state solve.

#include <benchmark/benchmark.h>

#include "vbsim/config.hpp"
#include "vbsim/lindblad.hpp"
#include "vbsim/rate_model.hpp"

using namespace vbsim;

namespace {

ElectronicRates pumped_rates() {
  ElectronicRates r = preset("vb-this-work");
  r.gamma_P = 20.0;
  return r;
}

void BM_RateMatrixExp(benchmark::State& state) {
  RateMatrix m = build_rate_matrix(pumped_rates());
  LevelPopulations p0 = LevelPopulations::ground_unpolarized();
  std::vector<double> times = {137.0};
  for (auto _ : state) {
    auto traj = evolve_populations(m, p0, times);
    benchmark::DoNotOptimize(traj.states[0].p);
  }
}
BENCHMARK(BM_RateMatrixExp);

void BM_RatePropagatorAt(benchmark::State& state) {
  RateMatrix m = build_rate_matrix(pumped_rates());
  RatePropagator prop(m);
  Vector7d p0 = LevelPopulations::ground_unpolarized().p;
  double t = 1.0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(prop.at(p0, t));
    t += 1.0;
  }
}
BENCHMARK(BM_RatePropagatorAt);

SpinSystemConfig system_for(int arg) {
  switch (arg) {
    case 0: return spin_system_bare();
    case 1: return spin_system_n15();
    default: return spin_system_n14();
  }
}

void BM_LindbladRhs(benchmark::State& state) {
  SpinSystemConfig cfg = system_for(static_cast<int>(state.range(0)));
  HilbertLayout layout = HilbertLayout::from(cfg);
  MatrixXcd H = build_hamiltonian(cfg, {74.0, 1.0});
  JumpOperatorSet jumps = build_jump_operators(pumped_rates(), layout);
  MatrixXcd rho = unpolarized_ground_state(layout);
  for (auto _ : state) {
    MatrixXcd d = lindblad_rhs(H, jumps, rho);
    benchmark::DoNotOptimize(d.data());
  }
  state.SetLabel("dim=" + std::to_string(layout.total_dim));
}
BENCHMARK(BM_LindbladRhs)->Arg(0)->Arg(1)->Arg(2);

void BM_EvolveKrylov(benchmark::State& state) {
  SpinSystemConfig cfg = spin_system_n15();
  HilbertLayout layout = HilbertLayout::from(cfg);
  MatrixXcd H = build_hamiltonian(cfg, {74.0, 1.0});
  JumpOperatorSet jumps = build_jump_operators(pumped_rates(), layout);
  MatrixXcd rho0 = unpolarized_ground_state(layout);
  EvolveOptions opt;
  opt.method = PropagationMethod::kKrylov;
  for (auto _ : state) {
    auto states = evolve_density_matrix(H, jumps, rho0, {50.0}, opt);
    benchmark::DoNotOptimize(states[0].data());
  }
}
BENCHMARK(BM_EvolveKrylov)->Unit(benchmark::kMillisecond);

void BM_SteadyStateSuperoperator(benchmark::State& state) {
  SpinSystemConfig cfg = spin_system_n15();
  HilbertLayout layout = HilbertLayout::from(cfg);
  MatrixXcd H = build_hamiltonian(cfg, {74.0, 1.0});
  JumpOperatorSet jumps = build_jump_operators(pumped_rates(), layout);
  for (auto _ : state) {
    DensityMatrix ss = steady_state_lindblad(H, jumps);
    benchmark::DoNotOptimize(ss.rho.data());
  }
}
BENCHMARK(BM_SteadyStateSuperoperator)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();

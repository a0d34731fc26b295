#include <random>

#include <benchmark/benchmark.h>

#include "bls/ift.hpp"
#include "bls/instances.hpp"
#include "bls/tensor.hpp"

namespace {

bls::Matrix random_matrix(bls::Index r, bls::Index c, std::mt19937_64& rng) {
  std::normal_distribution<double> normal;
  bls::Matrix m(r, c);
  for (bls::Index i = 0; i < r; ++i)
    for (bls::Index j = 0; j < c; ++j) m(i, j) = normal(rng);
  return m;
}

// Synthetic bundles at m inner and n outer dimensions; D_z k is well conditioned.
struct Bundles {
  bls::FirstOrderBundle fb;
  bls::SecondOrderBundle sb;
};

Bundles make_bundles(bls::Index m, bls::Index n) {
  std::mt19937_64 rng(7);
  Bundles b;
  const bls::Matrix g = random_matrix(m, m, rng);
  b.fb.Dz_k = g * g.transpose() / static_cast<double>(m) + bls::Matrix::Identity(m, m);
  b.fb.Dp_k = random_matrix(m, n, rng);
  b.fb.Dz_fU = random_matrix(1, m, rng);
  b.fb.Dp_fU = random_matrix(1, n, rng);
  b.sb.Hp_k = bls::StackedMatrix(m, n, random_matrix(m * n, n, rng));
  b.sb.Dpz_k = bls::StackedMatrix(m, n, random_matrix(m * n, m, rng));
  b.sb.Dzp_k = bls::StackedMatrix(m, m, random_matrix(m * m, n, rng));
  b.sb.Hz_k = bls::StackedMatrix(m, m, random_matrix(m * m, m, rng));
  b.sb.Hp_fU = bls::Matrix::Identity(n, n);
  b.sb.Hz_fU = bls::Matrix::Identity(m, m);
  b.sb.Dzp_fU = bls::Matrix::Zero(m, n);
  return b;
}

void BM_TotalHessian(benchmark::State& state, bls::HessianStrategy strategy) {
  const Bundles b = make_bundles(state.range(0), state.range(1));
  for (auto _ : state) {
    const bls::SensitivityResult s = bls::ift_jacobian(b.fb);
    benchmark::DoNotOptimize(bls::total_hessian(b.fb, b.sb, s, bls::HessianMode::general, strategy));
  }
  state.SetComplexityN(state.range(0));
}

void BM_TotalHessianFast(benchmark::State& state) { BM_TotalHessian(state, bls::HessianStrategy::fast); }
void BM_TotalHessianFull(benchmark::State& state) { BM_TotalHessian(state, bls::HessianStrategy::full); }

BENCHMARK(BM_TotalHessianFast)->ArgsProduct({{25, 50, 100, 200}, {5}})->Complexity(benchmark::oNCubed)
    ->Unit(benchmark::kMillisecond);
BENCHMARK(BM_TotalHessianFull)->ArgsProduct({{25, 50, 100}, {5}})->Complexity(benchmark::oNCubed)
    ->Unit(benchmark::kMillisecond);

void BM_KronLeftApply(benchmark::State& state) {
  std::mt19937_64 rng(1);
  const bls::Index m = state.range(0), n = 5;
  const bls::Matrix a = random_matrix(m, m, rng);
  const bls::StackedMatrix c(m, n, random_matrix(m * n, n, rng));
  for (auto _ : state) benchmark::DoNotOptimize(bls::kron_left_apply(a, c));
}
BENCHMARK(BM_KronLeftApply)->RangeMultiplier(2)->Range(25, 200);

void BM_KronRightApply(benchmark::State& state) {
  std::mt19937_64 rng(2);
  const bls::Index m = state.range(0), n = 5;
  const bls::Matrix b = random_matrix(n, m, rng);
  const bls::StackedMatrix c(m, m, random_matrix(m * m, n, rng));
  for (auto _ : state) benchmark::DoNotOptimize(bls::kron_right_apply(b, c));
}
BENCHMARK(BM_KronRightApply)->RangeMultiplier(2)->Range(25, 200);

void BM_RidgeTotalDerivatives(benchmark::State& state) {
  const bls::ProblemInstance rr = bls::make_ridge(state.range(0), 100, 0);
  bls::LowerConfig cfg;
  const bls::Vector z = bls::solve_lower(rr.problem, rr.p0, rr.z0, cfg).z;
  for (auto _ : state) benchmark::DoNotOptimize(bls::total_derivatives(rr.problem, z, rr.p0, true));
}
BENCHMARK(BM_RidgeTotalDerivatives)->Arg(20)->Arg(50)->Unit(benchmark::kMicrosecond);

}  // namespace

BENCHMARK_MAIN();

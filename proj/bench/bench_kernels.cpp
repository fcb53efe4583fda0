#include <benchmark/benchmark.h>

#include <random>

#include "uoro/harness.hpp"
#include "uoro/kernels.hpp"
#include "uoro/montecarlo.hpp"

using namespace uoro;

namespace {

DenseMatrix random_matrix(std::size_t r, std::size_t c, std::uint64_t seed) {
  std::mt19937_64 g(seed);
  std::normal_distribution<double> n;
  DenseMatrix m(r, c);
  for (double& x : m.flat()) x = n(g);
  return m;
}

void BM_GemmSerial(benchmark::State& st) {
  const auto n = static_cast<std::size_t>(st.range(0));
  const DenseMatrix a = random_matrix(n, n, 1), b = random_matrix(n, n, 2);
  DenseMatrix c(n, n);
  for (auto _ : st) {
    kernels::gemm_serial(a, b, c);
    benchmark::DoNotOptimize(c.flat().data());
  }
}

void BM_GemmParallel(benchmark::State& st) {
  const auto n = static_cast<std::size_t>(st.range(0));
  const DenseMatrix a = random_matrix(n, n, 1), b = random_matrix(n, n, 2);
  DenseMatrix c(n, n);
  for (auto _ : st) {
    kernels::gemm_parallel(a, b, c);
    benchmark::DoNotOptimize(c.flat().data());
  }
}

void BM_VecmatSerial(benchmark::State& st) {
  const auto n = static_cast<std::size_t>(st.range(0));
  const DenseMatrix a = random_matrix(n, n * n, 3);
  const Vector x(n, 1.0);
  for (auto _ : st) benchmark::DoNotOptimize(kernels::vecmat_serial(x, a));
}

void BM_VecmatParallel(benchmark::State& st) {
  const auto n = static_cast<std::size_t>(st.range(0));
  const DenseMatrix a = random_matrix(n, n * n, 3);
  const Vector x(n, 1.0);
  for (auto _ : st) benchmark::DoNotOptimize(kernels::vecmat_parallel(x, a));
}

void BM_MonteCarloUoro(benchmark::State& st) {
  const Instance inst = make_instance(CellKind::VanillaTanh, 8, 2, 10, 4);
  const EpisodeTape tape = run_episode(inst.params, inst.head, inst.episode);
  EstimatorOptions o;
  MonteCarloOptions mc;
  mc.exec = st.range(0) ? Execution::Parallel : Execution::Serial;
  const std::size_t P = inst.params->param_count();
  for (auto _ : st) {
    const SampleStats s = monte_carlo(
        2048, P,
        [&](std::uint64_t i, Vector& out) {
          EpisodeNoise n(1, i, NoiseMode::SignGaussian, 8);
          out = run_uoro(tape, o, n).gradient;
        },
        mc);
    benchmark::DoNotOptimize(s.mean().data());
  }
}

}  // namespace

BENCHMARK(BM_GemmSerial)->Arg(32)->Arg(128)->Arg(256);
BENCHMARK(BM_GemmParallel)->Arg(32)->Arg(128)->Arg(256);
BENCHMARK(BM_VecmatSerial)->Arg(16)->Arg(50);
BENCHMARK(BM_VecmatParallel)->Arg(16)->Arg(50);
BENCHMARK(BM_MonteCarloUoro)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();

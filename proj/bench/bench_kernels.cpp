#include <random>

#include <benchmark/benchmark.h>

#include "settp/kernels.hpp"

using namespace settp;

namespace {

Matrix random_matrix(std::size_t r, std::size_t c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  Matrix m(r, c);
  for (double& v : m.values()) v = g(rng);
  return m;
}

template <void (*Gemm)(const Matrix&, const Matrix&, Matrix&, bool)>
void bm_gemm_nn(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Matrix a = random_matrix(n, n, 1), b = random_matrix(n, n, 2);
  Matrix c(n, n);
  for (auto _ : state) {
    Gemm(a, b, c, false);
    benchmark::DoNotOptimize(c.values().data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * n * n * n));
}

template <void (*Gemm)(const Matrix&, const Matrix&, Matrix&, bool)>
void bm_gemm_nt(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Matrix a = random_matrix(n, n, 3), b = random_matrix(n, n, 4);
  Matrix c(n, n);
  for (auto _ : state) {
    Gemm(a, b, c, false);
    benchmark::DoNotOptimize(c.values().data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * n * n * n));
}

template <Matrix (*Affinity)(const Matrix&)>
void bm_affinity(benchmark::State& state) {
  const Matrix p = random_matrix(static_cast<std::size_t>(state.range(0)), 32, 5);
  for (auto _ : state) benchmark::DoNotOptimize(Affinity(p));
}

template <std::vector<std::size_t> (*Nearest)(const Matrix&, const Matrix&)>
void bm_nearest(benchmark::State& state) {
  const Matrix centroids = random_matrix(64, 32, 6);
  const Matrix queries = random_matrix(static_cast<std::size_t>(state.range(0)), 32, 7);
  for (auto _ : state) benchmark::DoNotOptimize(Nearest(centroids, queries));
}

}  // namespace

BENCHMARK(bm_gemm_nn<kernels::serial::gemm_nn>)->Name("gemm_nn/serial")->Arg(32)->Arg(128)->Arg(256);
BENCHMARK(bm_gemm_nn<kernels::omp::gemm_nn>)->Name("gemm_nn/omp")->Arg(32)->Arg(128)->Arg(256);
BENCHMARK(bm_gemm_nt<kernels::serial::gemm_nt>)->Name("gemm_nt/serial")->Arg(32)->Arg(128)->Arg(256);
BENCHMARK(bm_gemm_nt<kernels::omp::gemm_nt>)->Name("gemm_nt/omp")->Arg(32)->Arg(128)->Arg(256);
BENCHMARK(bm_affinity<kernels::serial::affinity>)->Name("affinity/serial")->Arg(100)->Arg(400);
BENCHMARK(bm_affinity<kernels::omp::affinity>)->Name("affinity/omp")->Arg(100)->Arg(400);
BENCHMARK(bm_nearest<kernels::serial::nearest_rows>)->Name("nearest_rows/serial")->Arg(256)->Arg(4096);
BENCHMARK(bm_nearest<kernels::omp::nearest_rows>)->Name("nearest_rows/omp")->Arg(256)->Arg(4096);

BENCHMARK_MAIN();

// Serial reference against the OpenMP kernels. Run with OMP_NUM_THREADS set
// to compare thread counts; the serial rows ignore it.

#include "atlasflow/kernels.hpp"
#include "atlasflow/synth.hpp"

#include <benchmark/benchmark.h>

using namespace atlasflow;

namespace {

Matrix cloud(int n) {
  synth::ManifoldSpec s;
  s.kind = synth::ManifoldKind::torus;
  s.n_points = n;
  s.seed = 0;
  return synth::generate(s).points;
}

kernels::Adjacency knn_graph(int n) {
  const Matrix x = cloud(n);
  const auto nbrs = kernels::k_nearest(x, 10);
  kernels::Adjacency g;
  g.arcs.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i)
    for (int j : nbrs[static_cast<std::size_t>(i)]) {
      const double w = (x.row(i) - x.row(j)).norm();
      g.arcs[static_cast<std::size_t>(i)].emplace_back(j, w);
      g.arcs[static_cast<std::size_t>(j)].emplace_back(i, w);
    }
  return g;
}

template <auto Fn>
void BM_shortest_paths(benchmark::State& state) {
  const auto g = knn_graph(static_cast<int>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(Fn(g));
}

template <auto Fn>
void BM_knn(benchmark::State& state) {
  const Matrix x = cloud(static_cast<int>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(Fn(x, 10));
}

template <auto Fn>
void BM_kde(benchmark::State& state) {
  const Matrix ref = cloud(static_cast<int>(state.range(0)));
  const Matrix q = cloud(1000);
  const Vector bw = synth::scott_bandwidth(ref);
  for (auto _ : state) benchmark::DoNotOptimize(Fn(ref, q, bw));
}

template <auto Fn>
void BM_distances(benchmark::State& state) {
  const Matrix x = cloud(static_cast<int>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(Fn(x));
}

}  // namespace

BENCHMARK(BM_shortest_paths<kernels::all_pairs_shortest_paths_serial>)->Name("shortest_paths/serial")->Arg(500)->Arg(2000)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_shortest_paths<kernels::all_pairs_shortest_paths>)->Name("shortest_paths/omp")->Arg(500)->Arg(2000)->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_knn<kernels::k_nearest_serial>)->Name("knn/serial")->Arg(2000)->Arg(10000)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_knn<kernels::k_nearest>)->Name("knn/omp")->Arg(2000)->Arg(10000)->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_kde<kernels::kde_serial>)->Name("kde/serial")->Arg(2000)->Arg(10000)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_kde<kernels::kde>)->Name("kde/omp")->Arg(2000)->Arg(10000)->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_distances<kernels::pairwise_distances_serial>)->Name("distances/serial")->Arg(1000)->Arg(3000)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_distances<kernels::pairwise_distances>)->Name("distances/omp")->Arg(1000)->Arg(3000)->Unit(benchmark::kMillisecond)->UseRealTime();

BENCHMARK_MAIN();

// Serial reference kernels against their OpenMP counterparts.

#include <benchmark/benchmark.h>

#include "fixtures.hpp"
#include "mara/kernels.hpp"

using namespace mara;
using mara::test::World;

namespace {

Matrix random_means(std::size_t rows, std::size_t dim) {
  Rng rng(7);
  Matrix m(rows, dim);
  for (auto& v : m.data) v = 2.0 * uniform01(rng) - 1.0;
  return m;
}

template <auto Kernel>
void BM_ScoreMeans(benchmark::State& state) {
  const RankerShape shape{1000, 32, 32};
  const SurrogateRanker r(shape, 3);
  const Matrix docs = random_means(static_cast<std::size_t>(state.range(0)), shape.dim);
  const std::vector<double> q = r.mean_embedding(std::vector<TokenId>{1, 2, 3});
  std::vector<double> out(docs.rows);
  for (auto _ : state) {
    Kernel(r, q, docs, out);
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

template <auto Rollout>
void BM_Episodes(benchmark::State& state) {
  const World w(80, 5, 16);
  const Agents a = Agents::create(w.ranker.dim(), 16, 4);
  std::vector<EpisodeInput> inputs;
  for (std::size_t i = 0; i < static_cast<std::size_t>(state.range(0)); ++i)
    inputs.push_back(w.input(i % w.queries.size(), i % w.corpus->size()));
  for (auto _ : state) {
    auto trajs = Rollout(w.ctx, a, inputs, EpisodeOptions{}, 11);
    benchmark::DoNotOptimize(trajs.data());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

}  // namespace

BENCHMARK(BM_ScoreMeans<kernels::score_means_serial>)->Name("score_means/serial")->Arg(1000)->Arg(20000);
BENCHMARK(BM_ScoreMeans<kernels::score_means_parallel>)->Name("score_means/parallel")->Arg(1000)->Arg(20000);
BENCHMARK(BM_Episodes<run_episodes_serial>)->Name("episodes/serial")->Arg(32)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Episodes<run_episodes_parallel>)->Name("episodes/parallel")->Arg(32)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();

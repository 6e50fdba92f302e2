#include <vector>

#include <benchmark/benchmark.h>

#include "graad/eval.hpp"
#include "graad/kernels.hpp"
#include "graad/text.hpp"

namespace {

using namespace graad;

std::vector<double> random_matrix(std::size_t size, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> v(size);
  for (double& x : v) x = rng.uniform_real() - 0.5;
  return v;
}

template <bool Parallel>
void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = random_matrix(n * n, 1), b = random_matrix(n * n, 2);
  std::vector<double> out(n * n);
  for (auto _ : state) {
    if constexpr (Parallel) {
      kernels::matmul_parallel(a, b, out, n, n, n);
    } else {
      kernels::matmul_serial(a, b, out, n, n, n);
    }
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * n * n));
}
BENCHMARK(BM_Matmul<false>)->Name("matmul/serial")->Arg(64)->Arg(128)->Arg(256)->UseRealTime();
BENCHMARK(BM_Matmul<true>)->Name("matmul/parallel")->Arg(64)->Arg(128)->Arg(256)->UseRealTime();

struct ScoringSetup {
  TextClassifier model;
  LabeledDataset data;

  ScoringSetup() {
    data = gen_synthetic(256, 2, 3);
    const auto texts = data.texts();
    model.vocab = build_vocab(texts, 1, 100000);
    model.config.vocab_size = model.vocab.size();
    model.params = init_params(model.config, 4);
  }
};

// Attention + gradient attribution per sentence; jobs = 1 is the serial path.
void BM_ScoreSet(benchmark::State& state) {
  static const ScoringSetup setup;
  const int jobs = static_cast<int>(state.range(0));
  for (auto _ : state) {
    benchmark::DoNotOptimize(score_set(setup.model, setup.data, jobs));
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(setup.data.size()));
}
BENCHMARK(BM_ScoreSet)->Name("score_set/jobs")->Arg(1)->Arg(2)->Arg(4)->Arg(8)->UseRealTime();

}  // namespace

BENCHMARK_MAIN();

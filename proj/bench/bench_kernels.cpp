// Serial reference vs OpenMP kernels, and serial vs parallel task fan-out.
#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "fewshot/eval.hpp"
#include "fewshot/kernels.hpp"
#include "fewshot/trainer.hpp"

using namespace fewshot;
namespace k = fewshot::kernels;

namespace {

std::vector<double> random_values(std::size_t n, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  std::vector<double> v(n);
  for (double& x : v) x = normal(rng);
  return v;
}

template <bool Parallel>
void BM_gemm(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = random_values(n * n, 1), b = random_values(n * n, 2);
  std::vector<double> c(n * n);
  for (auto _ : state) {
    if constexpr (Parallel) {
      k::gemm(k::Trans::kNo, k::Trans::kYes, n, n, n, a, b, c, false);
    } else {
      k::reference::gemm(k::Trans::kNo, k::Trans::kYes, n, n, n, a, b, c, false);
    }
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * n * n));
}

template <bool Parallel>
void BM_normalize_rows(benchmark::State& state) {
  const auto rows = static_cast<std::size_t>(state.range(0)), cols = std::size_t{64};
  const auto in = random_values(rows * cols, 3);
  std::vector<double> out(in.size()), norms(rows);
  for (auto _ : state) {
    if constexpr (Parallel) {
      k::normalize_rows(rows, cols, 1e-12, in, out, norms);
    } else {
      k::reference::normalize_rows(rows, cols, 1e-12, in, out, norms);
    }
    benchmark::DoNotOptimize(out.data());
  }
}

template <bool Parallel>
void BM_softmax_rows(benchmark::State& state) {
  const auto rows = static_cast<std::size_t>(state.range(0)), cols = std::size_t{64};
  const auto in = random_values(rows * cols, 4);
  std::vector<double> out(in.size());
  for (auto _ : state) {
    if constexpr (Parallel) {
      k::softmax_rows(rows, cols, in, out);
    } else {
      k::reference::softmax_rows(rows, cols, in, out);
    }
    benchmark::DoNotOptimize(out.data());
  }
}

void BM_evaluate(benchmark::State& state) {
  static const Dataset data = generate_dataset(SynthConfig{});
  static const BaseViews views = [] {
    Rng rng = make_rng(0, streams::kHoldout);
    return base_holdout_split(data, 15, rng);
  }();
  static const Model model = init_model(ExtractorConfig{}, 64, HeadKind::kCosine, GeneratorMode::kAvgPlusAttention, 0);
  const EvalOptions options{200, 0, state.range(0) != 0};
  for (auto _ : state) benchmark::DoNotOptimize(evaluate(data, views, model, TaskConfig{}, options));
}

}  // namespace

BENCHMARK(BM_gemm<false>)->Name("gemm/serial")->Arg(64)->Arg(256);
BENCHMARK(BM_gemm<true>)->Name("gemm/openmp")->Arg(64)->Arg(256);
BENCHMARK(BM_normalize_rows<false>)->Name("normalize_rows/serial")->Arg(4096);
BENCHMARK(BM_normalize_rows<true>)->Name("normalize_rows/openmp")->Arg(4096);
BENCHMARK(BM_softmax_rows<false>)->Name("softmax_rows/serial")->Arg(4096);
BENCHMARK(BM_softmax_rows<true>)->Name("softmax_rows/openmp")->Arg(4096);
BENCHMARK(BM_evaluate)->Name("evaluate_200_tasks")->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();

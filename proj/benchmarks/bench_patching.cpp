#include <random>

#include <benchmark/benchmark.h>

#include "protex/patching.hpp"

using namespace protex;

namespace {

FMat tokens(std::size_t l, std::size_t d) {
  std::mt19937_64 g(l * 131 + d);
  std::normal_distribution<float> n;
  FMat m(l, d);
  for (auto& v : m.flat()) v = n(g);
  return m;
}

void BM_BruteForce(benchmark::State& st) {
  const auto t = tokens(static_cast<std::size_t>(st.range(0)), 64);
  for (auto _ : st) benchmark::DoNotOptimize(enumerate_patches(t, static_cast<std::size_t>(st.range(1))));
}
BENCHMARK(BM_BruteForce)->Args({10, 2})->Args({10, 3})->Args({20, 3})->Args({40, 2});

void BM_Sliding(benchmark::State& st) {
  const auto t = tokens(static_cast<std::size_t>(st.range(0)), 64);
  for (auto _ : st) benchmark::DoNotOptimize(sliding_patches(t, 4, static_cast<std::size_t>(st.range(1))));
}
BENCHMARK(BM_Sliding)->Args({40, 0})->Args({40, 2});

void BM_Attention(benchmark::State& st) {
  const auto t = tokens(static_cast<std::size_t>(st.range(0)), 64);
  const SelectorConfig cfg{SelectorKind::attention, 4, 0, 10, 1'000'000};
  for (auto _ : st) benchmark::DoNotOptimize(attention_select(t, cfg));
}
BENCHMARK(BM_Attention)->Arg(12)->Arg(40);

}  // namespace

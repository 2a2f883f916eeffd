#include <benchmark/benchmark.h>

#include <numeric>
#include <vector>

#include "hfmrg/kernels.hpp"
#include "hfmrg/rng.hpp"

using namespace hfmrg;

namespace {

std::vector<double> random_probs(std::size_t size, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> p(size);
  for (auto& v : p) v = rng.exponential();
  const double z = std::accumulate(p.begin(), p.end(), 0.0);
  for (auto& v : p) v /= z;
  return p;
}

Matrix random_weights(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  Rng rng(seed);
  Matrix w(rows, cols);
  for (auto& v : w.data) v = rng.normal(0.0, 0.1);
  return w;
}

BinaryMatrix random_bits(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  Rng rng(seed);
  BinaryMatrix x(rows, cols);
  for (auto& v : x.data) v = rng.bernoulli(0.3) ? 1 : 0;
  return x;
}

template <bool Parallel>
void BM_coarse_gather(benchmark::State& state) {
  const std::size_t n = static_cast<std::size_t>(state.range(0));
  const auto p = random_probs(std::size_t{1} << n, 1);
  std::vector<double> out(p.size());
  for (auto _ : state) {
    if constexpr (Parallel)
      kernels::parallel::coarse_gather(p, 0.3, out);
    else
      kernels::serial::coarse_gather(p, 0.3, out);
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(p.size()));
}

template <bool Parallel>
void BM_hidden_means(benchmark::State& state) {
  const std::size_t rows = static_cast<std::size_t>(state.range(0));
  const auto w = random_weights(196, 100, 2);
  const std::vector<double> b(100, -0.5);
  const auto x = random_bits(rows, 196, 3);
  Matrix out(rows, 100);
  for (auto _ : state) {
    if constexpr (Parallel)
      kernels::parallel::hidden_means(w, b, x, out);
    else
      kernels::serial::hidden_means(w, b, x, out);
    benchmark::DoNotOptimize(out.data.data());
  }
}

template <bool Parallel>
void BM_kendall(benchmark::State& state) {
  const std::size_t n = static_cast<std::size_t>(state.range(0));
  Rng rng(4);
  std::vector<double> x(n), y(n);
  for (std::size_t i = 0; i < n; ++i) {
    x[i] = static_cast<double>(rng.below(50));
    y[i] = x[i] + static_cast<double>(rng.below(10));
  }
  for (auto _ : state) {
    auto c = Parallel ? kernels::parallel::kendall_pair_counts(x, y) : kernels::serial::kendall_pair_counts(x, y);
    benchmark::DoNotOptimize(c);
  }
}

template <bool Parallel>
void BM_permutation_cost(benchmark::State& state) {
  const std::size_t count = static_cast<std::size_t>(state.range(0));
  Rng rng(5);
  std::vector<std::uint64_t> words(count), counts(count);
  for (std::size_t i = 0; i < count; ++i) {
    words[i] = rng.next() & ((std::uint64_t{1} << 30) - 1);
    counts[i] = 1 + rng.below(20);
  }
  std::vector<std::uint16_t> position(30);
  std::iota(position.begin(), position.end(), std::uint16_t{1});
  const kernels::PackedStates packed{1, words};
  for (auto _ : state) {
    auto c = Parallel ? kernels::parallel::permutation_cost(packed, counts, position)
                      : kernels::serial::permutation_cost(packed, counts, position);
    benchmark::DoNotOptimize(c);
  }
}

}  // namespace

BENCHMARK(BM_coarse_gather<false>)->Arg(16)->Arg(20);
BENCHMARK(BM_coarse_gather<true>)->Arg(16)->Arg(20);
BENCHMARK(BM_hidden_means<false>)->Arg(3000);
BENCHMARK(BM_hidden_means<true>)->Arg(3000);
BENCHMARK(BM_kendall<false>)->Arg(2000);
BENCHMARK(BM_kendall<true>)->Arg(2000);
BENCHMARK(BM_permutation_cost<false>)->Arg(100000);
BENCHMARK(BM_permutation_cost<true>)->Arg(100000);

BENCHMARK_MAIN();

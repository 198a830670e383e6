// Serial vs OpenMP kernels at training-loop sizes.

#include <benchmark/benchmark.h>

#include <random>

#include "rankcore/encoder.hpp"
#include "rankcore/kernels.hpp"
#include "rankcore/spi.hpp"

using namespace rankcore;
namespace k = rankcore::kernels;

namespace {

Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m(i) = n(rng);
  return m;
}

struct Batch {
  std::vector<Matrix> xs;
  std::vector<const Matrix*> ptr;
  explicit Batch(std::size_t count, Eigen::Index n = 16, Eigen::Index t = 70) {
    for (std::size_t i = 0; i < count; ++i) xs.push_back(random_matrix(n, t, i + 1));
    for (const auto& x : xs) ptr.push_back(&x);
  }
};

k::Exec exec_of(const benchmark::State& s) { return s.range(0) ? k::Exec::parallel : k::Exec::serial; }

void BM_forward_batch(benchmark::State& state) {
  const Batch b(64);
  const auto p = encoder::init_params(70, 4, 32, 32, 32, 1);
  for (auto _ : state) benchmark::DoNotOptimize(k::forward_batch(p, b.ptr, true, exec_of(state)));
  state.SetItemsProcessed(state.iterations() * 64);
}

void BM_gradient_sum(benchmark::State& state) {
  const Batch b(64);
  const auto p = encoder::init_params(70, 4, 32, 32, 32, 1);
  const auto outs = k::forward_batch(p, b.ptr, true, k::Exec::serial);
  std::vector<Vector> gz(64, Vector::Ones(32));
  for (auto _ : state) benchmark::DoNotOptimize(k::gradient_sum(p, outs, gz, {}, exec_of(state)));
  state.SetItemsProcessed(state.iterations() * 64);
}

void BM_pair_similarities(benchmark::State& state) {
  const Matrix f = random_matrix(360, 120, 3);
  std::vector<k::Pair> pairs;
  for (std::size_t i = 0; i < 360; ++i)
    for (std::size_t j = i + 1; j < 360; ++j) pairs.emplace_back(i, j);
  for (auto _ : state) benchmark::DoNotOptimize(k::pair_similarities(f, pairs, exec_of(state)));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(pairs.size()));
}

void BM_kde(benchmark::State& state) {
  Rng rng(5);
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> v(2000);
  for (auto& x : v) x = n(rng);
  for (auto _ : state) benchmark::DoNotOptimize(k::kde_evaluate(v, 0.2, v, exec_of(state)));
}

void BM_fc_batch(benchmark::State& state) {
  const Batch b(32);
  const auto& op = spi::find_operator("cohmag_mean");
  for (auto _ : state) benchmark::DoNotOptimize(k::fc_batch(op, b.ptr, exec_of(state)));
  state.SetItemsProcessed(state.iterations() * 32);
}

}  // namespace

BENCHMARK(BM_forward_batch)->Arg(0)->Arg(1)->ArgName("omp")->Unit(benchmark::kMillisecond);
BENCHMARK(BM_gradient_sum)->Arg(0)->Arg(1)->ArgName("omp")->Unit(benchmark::kMillisecond);
BENCHMARK(BM_pair_similarities)->Arg(0)->Arg(1)->ArgName("omp")->Unit(benchmark::kMillisecond);
BENCHMARK(BM_kde)->Arg(0)->Arg(1)->ArgName("omp")->Unit(benchmark::kMillisecond);
BENCHMARK(BM_fc_batch)->Arg(0)->Arg(1)->ArgName("omp")->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();

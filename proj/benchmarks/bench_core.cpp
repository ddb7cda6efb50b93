#include <benchmark/benchmark.h>

#include "bhpeft/training.hpp"

namespace {

using namespace bhpeft;

ModelConfig bench_config(std::size_t d, std::size_t layers) {
  ModelConfig cfg;
  cfg.d = d;
  cfg.h = d >= 32 ? 4 : 2;
  cfg.layers = layers;
  cfg.n_max = 32;
  cfg.vocab = 512;
  return cfg;
}

std::vector<int> bench_tokens(std::size_t n) {
  std::vector<int> t(n);
  for (std::size_t i = 0; i < n; ++i) t[i] = static_cast<int>((i * 37 + 11) % 512);
  return t;
}

void BM_forward_mean(benchmark::State& state) {
  Model m = Model::create(bench_config(static_cast<std::size_t>(state.range(0)), 2), 1);
  auto tokens = bench_tokens(24);
  for (auto _ : state) {
    benchmark::DoNotOptimize(m.forward_mean(tokens));
  }
}
BENCHMARK(BM_forward_mean)->Arg(16)->Arg(32)->Arg(64);

void BM_elbo_step(benchmark::State& state) {
  Model m = Model::create(bench_config(static_cast<std::size_t>(state.range(0)), 2), 1);
  GenParams gp;
  Dataset ds = generate(GenTask::keyword, 64, 3, gp);
  TrainConfig cfg;
  std::vector<const Example*> batch;
  for (std::size_t i = 0; i < 32; ++i) batch.push_back(&ds.examples[i]);
  Rng rng(5);
  for (auto _ : state) {
    Tape tape;
    RngEps eps(rng);
    ElboParts parts = negative_elbo(tape, m, batch, ds.size(), cfg, eps);
    tape.backward(parts.loss);
    benchmark::DoNotOptimize(tape.grad(m.head().w));
  }
}
BENCHMARK(BM_elbo_step)->Arg(16)->Arg(32);

void BM_kl_closed_form(benchmark::State& state) {
  Rng rng(9);
  GaussianParameter p = init_gaussian_param("p", {64, 8}, 64, 0.1, 0.1, rng);
  for (auto _ : state) {
    benchmark::DoNotOptimize(kl_to_prior(p, p.prior));
  }
}
BENCHMARK(BM_kl_closed_form);

}  // namespace

BENCHMARK_MAIN();

#include <benchmark/benchmark.h>

#include <jebm/model.hpp>
#include <jebm/rng.hpp>
#include <jebm/samplers.hpp>
#include <jebm/tape.hpp>

namespace {

jebm::Models toy_models() {
  jebm::ModelConfig cfg;
  cfg.latent_dims = {2, 2};
  cfg.data_dim = 2;
  cfg.energy_hidden = {64, 64};
  cfg.conditional_hidden = {64, 64};
  cfg.decoder_hidden = {64};
  cfg.inference_hidden = {64};
  return jebm::build_models(cfg, 7);
}

void BM_Matmul(benchmark::State& state) {
  auto n = static_cast<std::size_t>(state.range(0));
  jebm::RngStream rng = jebm::make_stream(1, "bench/matmul", 0);
  jebm::Tensor a = rng.normal_tensor({n, n});
  jebm::Tensor b = rng.normal_tensor({n, n});
  for (auto _ : state) {
    jebm::Tape t(false);
    benchmark::DoNotOptimize(t.value(t.matmul(t.leaf(a), t.leaf(b))));
  }
}
BENCHMARK(BM_Matmul)->Arg(32)->Arg(128);

void BM_PriorGradient(benchmark::State& state) {
  jebm::Models m = toy_models();
  jebm::RngStream rng = jebm::make_stream(2, "bench/grad", 0);
  jebm::LatentStack z = jebm::ancestral_sample(m.prior, 64, rng);
  for (auto _ : state)
    benchmark::DoNotOptimize(jebm::grad_log_prior(m.prior, z));
}
BENCHMARK(BM_PriorGradient);

void BM_LangevinStep(benchmark::State& state) {
  jebm::Models m = toy_models();
  jebm::RngStream rng = jebm::make_stream(3, "bench/langevin", 0);
  jebm::LangevinConfig cfg;
  cfg.steps = 1;
  for (auto _ : state)
    benchmark::DoNotOptimize(jebm::sample_prior(m.prior, 64, cfg, rng));
}
BENCHMARK(BM_LangevinStep);

}  // namespace

BENCHMARK_MAIN();

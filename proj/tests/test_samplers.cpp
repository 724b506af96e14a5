#include <doctest/doctest.h>

#include <cmath>
#include <cstring>
#include <vector>

#include "jebm/model.hpp"
#include "jebm/oracles.hpp"
#include "jebm/rng.hpp"
#include "jebm/samplers.hpp"

using namespace jebm;

namespace {

ModelConfig tiny_config(std::vector<std::size_t> dims, std::size_t data_dim) {
  ModelConfig cfg;
  cfg.latent_dims = std::move(dims);
  cfg.data_dim = data_dim;
  cfg.energy_hidden = {8};
  cfg.conditional_hidden = {8};
  cfg.decoder_hidden = {8};
  cfg.inference_hidden = {8};
  return cfg;
}

void zero_final_layer(Mlp& mlp) {
  for (double& v : mlp.weights.back().raw()) v = 0.0;
  for (double& v : mlp.biases.back().raw()) v = 0.0;
}

bool stacks_equal(const LatentStack& a, const LatentStack& b) {
  if (a.num_layers() != b.num_layers()) return false;
  for (std::size_t i = 0; i < a.num_layers(); ++i) {
    if (a.layers[i].shape() != b.layers[i].shape()) return false;
    if (std::memcmp(a.layers[i].raw().data(), b.layers[i].raw().data(),
                    a.layers[i].size() * sizeof(double)) != 0)
      return false;
  }
  return true;
}

double sample_variance(const Tensor& layer) {
  double mean = 0.0;
  for (double v : layer.raw()) mean += v;
  mean /= static_cast<double>(layer.size());
  double var = 0.0;
  for (double v : layer.raw()) var += (v - mean) * (v - mean);
  return var / static_cast<double>(layer.size() - 1);
}

double max_stack_diff(const LatentStack& a, const LatentStack& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.num_layers(); ++i)
    for (std::size_t j = 0; j < a.layers[i].size(); ++j)
      m = std::max(m, std::abs(a.layers[i][j] - b.layers[i][j]));
  return m;
}

}  // namespace

TEST_CASE("zero steps leave the chain untouched") {
  auto rng = make_stream(1, "test/ula0");
  LatentStack z0;
  z0.layers.push_back(rng.normal_tensor({4, 3}));
  LatentStack saved = z0;
  GradFn grad = [](const LatentStack& z) {
    LatentStack g = z;
    for (auto& l : g.layers)
      for (double& v : l.raw()) v = -v;
    return g;
  };
  LangevinConfig cfg;
  cfg.steps = 0;
  LatentStack out = langevin(grad, std::move(z0), cfg, rng);
  CHECK(stacks_equal(out, saved));
}

TEST_CASE("ULA stationary variance for a standard normal target") {
  // The update z <- (1 - s) z + sqrt(2s) eps has exact stationary variance
  // 2s / (1 - (1-s)^2) = 1 / (1 - s/2); for s = 0.1 that is 1.052631...
  auto rng = make_stream(2, "test/ula-var");
  LangevinConfig cfg;
  cfg.steps = 1500;
  cfg.step_size = 0.1;
  GradFn grad = [](const LatentStack& z) {
    LatentStack g = z;
    for (auto& l : g.layers)
      for (double& v : l.raw()) v = -v;
    return g;
  };
  LatentStack z0;
  z0.layers.push_back(rng.normal_tensor({8000, 2}));
  LatentStack out = langevin(grad, std::move(z0), cfg, rng);
  CHECK(sample_variance(out.layers[0]) ==
        doctest::Approx(1.0 / (1.0 - 0.05)).epsilon(0.05));
}

TEST_CASE("ULA stationary variance for a tilted (sharper) target") {
  // Drift -(1+c) z with c = 1: stationary variance 2s / (1 - (1 - s(1+c))^2);
  // for s = 0.1 that is 0.2 / 0.36 = 0.5556.
  double c = 1.0, s = 0.1;
  auto rng = make_stream(3, "test/ula-tilt");
  LangevinConfig cfg;
  cfg.steps = 1500;
  cfg.step_size = s;
  GradFn grad = [c](const LatentStack& z) {
    LatentStack g = z;
    for (auto& l : g.layers)
      for (double& v : l.raw()) v = -(1.0 + c) * v;
    return g;
  };
  LatentStack z0;
  z0.layers.push_back(rng.normal_tensor({8000, 1}));
  LatentStack out = langevin(grad, std::move(z0), cfg, rng);
  double want = 2.0 * s / (1.0 - (1.0 - s * (1.0 + c)) * (1.0 - s * (1.0 + c)));
  CHECK(sample_variance(out.layers[0]) == doctest::Approx(want).epsilon(0.06));
}

TEST_CASE("prior gradient is -z when the prior is the standard normal") {
  Models m = build_models(tiny_config({2, 2}, 2), 5);
  for (auto& layer : m.prior.layers) zero_final_layer(layer.trunk);
  auto rng = make_stream(5, "test/gradz");
  LatentStack z;
  z.layers.push_back(rng.normal_tensor({3, 2}));
  z.layers.push_back(rng.normal_tensor({3, 2}));
  LatentStack g = grad_log_prior(m.prior, z);
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < z.layers[i].size(); ++j)
      CHECK(g.layers[i][j] == doctest::Approx(-z.layers[i][j]).epsilon(1e-12));
}

TEST_CASE("posterior gradient approaches the prior gradient as sigma grows") {
  Models m = build_models(tiny_config({2, 2}, 2), 7);
  auto rng = make_stream(7, "test/postgrad");
  m.decoder.observation_sigma = 1e6;
  Tensor x = rng.normal_tensor({3, 2});
  LatentStack z;
  z.layers.push_back(rng.normal_tensor({3, 2}));
  z.layers.push_back(rng.normal_tensor({3, 2}));
  LatentStack gp = grad_log_prior(m.prior, z);
  LatentStack gpost = grad_log_posterior(m.decoder, m.prior, x, z);
  CHECK(max_stack_diff(gp, gpost) < 1e-4);
}

TEST_CASE("posterior Langevin recovers the conjugate Gaussian mean") {
  // Linear 1-D decoder x = a z + noise with a standard-normal prior:
  // p(z | x) = N(a x / (a^2 + sigma^2), sigma^2 / (a^2 + sigma^2)).
  Models m = build_models(tiny_config({1}, 1), 11);
  double a = 0.8, sigma = 0.5, x_obs = 1.3;
  m.decoder.net.spec = MlpSpec{.input_dim = 1, .hidden_dims = {}, .output_dim = 1};
  m.decoder.net.weights = {Tensor::matrix(1, 1, {a})};
  m.decoder.net.biases = {Tensor::zeros({1, 1})};
  m.decoder.observation_sigma = sigma;

  std::size_t n = 4000;
  Tensor x = Tensor::zeros({n, 1});
  for (double& v : x.raw()) v = x_obs;

  auto rng = make_stream(11, "test/conjugate");
  LatentStack z0;
  z0.layers.push_back(rng.normal_tensor({n, 1}));
  GradFn grad = [&](const LatentStack& z) {
    return grad_log_posterior(m.decoder, m.prior, x, z);
  };
  LangevinConfig cfg;
  cfg.steps = 400;
  cfg.step_size = 0.05;
  LatentStack out = langevin(grad, std::move(z0), cfg, rng);

  double mean = 0.0;
  for (double v : out.layers[0].raw()) mean += v;
  mean /= static_cast<double>(n);
  double want = a * x_obs / (a * a + sigma * sigma);
  CHECK(std::abs(mean - want) < 0.05);
}

TEST_CASE("epsilon transform: identity at zeroed conditionals, mean path, round trip") {
  Models m = build_models(tiny_config({2, 2, 2}, 2), 13);
  auto rng = make_stream(13, "test/eps");

  // Zeroed conditionals: mean 0, std 1 => z == eps.
  {
    Models mz = build_models(tiny_config({2, 2}, 2), 14);
    for (auto& layer : mz.prior.layers) zero_final_layer(layer.trunk);
    LatentStack eps;
    eps.layers.push_back(rng.normal_tensor({3, 2}));
    eps.layers.push_back(rng.normal_tensor({3, 2}));
    LatentStack z = epsilon_transform(mz.prior, eps);
    CHECK(max_stack_diff(z, eps) < 1e-14);
  }

  // eps = 0 follows the chained conditional means.
  {
    LatentStack eps;
    for (std::size_t d : m.prior.dims) eps.layers.push_back(Tensor::zeros({2, d}));
    LatentStack z = epsilon_transform(m.prior, eps);
    for (double v : z.layers[2].raw()) CHECK(v == 0.0);
    Tensor out1 = m.prior.layers[1].trunk.forward_eager(z.layers[2]);
    for (std::size_t r = 0; r < 2; ++r)
      for (std::size_t c = 0; c < 2; ++c)
        CHECK(z.layers[1].at(r, c) == doctest::Approx(out1.at(r, c)).epsilon(1e-12));
  }

  // Round trips in both directions.
  {
    LatentStack eps;
    for (std::size_t d : m.prior.dims) eps.layers.push_back(rng.normal_tensor({4, d}));
    LatentStack z = epsilon_transform(m.prior, eps);
    CHECK(max_stack_diff(epsilon_inverse(m.prior, z), eps) < 1e-10);

    LatentStack z2;
    for (std::size_t d : m.prior.dims) z2.layers.push_back(rng.normal_tensor({4, d}));
    CHECK(max_stack_diff(epsilon_transform(m.prior, epsilon_inverse(m.prior, z2)), z2) <
          1e-10);
  }
}

TEST_CASE("conditional Langevin: fixed layers held, free layers move") {
  Models m = build_models(tiny_config({2, 2}, 2), 17);
  auto rng = make_stream(17, "test/cond");
  LatentStack z0;
  z0.layers.push_back(rng.normal_tensor({3, 2}));
  z0.layers.push_back(rng.normal_tensor({3, 2}));
  LangevinConfig cfg;
  cfg.steps = 10;

  // All fixed: nothing moves.
  {
    auto r = make_stream(18, "test/cond-all");
    LatentStack out =
        conditional_prior_langevin(m.prior, {true, true}, z0, cfg, r);
    CHECK(stacks_equal(out, z0));
  }

  // Top fixed: bottom moves, top exactly preserved.
  {
    auto r = make_stream(19, "test/cond-top");
    LatentStack out =
        conditional_prior_langevin(m.prior, {false, true}, z0, cfg, r);
    CHECK(std::memcmp(out.layers[1].raw().data(), z0.layers[1].raw().data(),
                      out.layers[1].size() * sizeof(double)) == 0);
    CHECK(max_stack_diff(out, z0) > 0.0);
  }

  // No layers fixed matches the unconditional path with a shared stream.
  {
    auto r1 = make_stream(20, "test/cond-none");
    auto r2 = make_stream(20, "test/cond-none");
    GradFn grad = [&](const LatentStack& z) { return grad_log_prior(m.prior, z); };
    LatentStack a = conditional_prior_langevin(m.prior, {false, false}, z0, cfg, r1);
    LatentStack b = langevin(grad, z0, cfg, r2);
    CHECK(stacks_equal(a, b));
  }

  // Epsilon-space conditional: fixed z layer survives bit-exactly.
  {
    auto r = make_stream(21, "test/cond-eps");
    LatentStack eps0;
    eps0.layers.push_back(rng.normal_tensor({3, 2}));
    eps0.layers.push_back(rng.normal_tensor({3, 2}));
    LatentStack out = conditional_epsilon_langevin(m.prior, z0, {false, true}, eps0,
                                                   cfg, r);
    CHECK(std::memcmp(out.layers[1].raw().data(), z0.layers[1].raw().data(),
                      out.layers[1].size() * sizeof(double)) == 0);
  }
}

TEST_CASE("sample_prior is deterministic under a shared seed") {
  Models m = build_models(tiny_config({2, 2}, 2), 19);
  LangevinConfig cfg;
  cfg.steps = 15;
  auto r1 = make_stream(23, "test/det");
  auto r2 = make_stream(23, "test/det");
  CHECK(stacks_equal(sample_prior(m.prior, 8, cfg, r1),
                     sample_prior(m.prior, 8, cfg, r2)));

  cfg.space = LangevinConfig::Space::Epsilon;
  auto r3 = make_stream(29, "test/det");
  auto r4 = make_stream(29, "test/det");
  CHECK(stacks_equal(sample_prior(m.prior, 8, cfg, r3),
                     sample_prior(m.prior, 8, cfg, r4)));
}

TEST_CASE("noise-free Langevin with a small step ascends the log prior") {
  Models m = build_models(tiny_config({2, 2}, 2), 23);
  auto rng = make_stream(31, "test/ascent");
  LangevinConfig cfg;
  cfg.steps = 50;
  cfg.step_size = 0.01;
  cfg.noise_enabled = false;
  ChainRecord rec;
  sample_prior(m.prior, 16, cfg, rng, &rec);
  REQUIRE(rec.log_prior.size() == 51);
  for (std::size_t t = 1; t < rec.log_prior.size(); ++t) {
    double prev = 0.0, cur = 0.0;
    for (double v : rec.log_prior[t - 1].raw()) prev += v;
    for (double v : rec.log_prior[t].raw()) cur += v;
    CHECK(cur >= prev - 1e-10);
  }
}

TEST_CASE("thinned records: 40 steps, thin 10 gives 5 snapshots") {
  Models m = build_models(tiny_config({2, 2}, 2), 29);
  auto rng = make_stream(37, "test/thin");
  LangevinConfig cfg;
  cfg.steps = 40;
  cfg.thin = 10;
  ChainRecord rec;
  sample_prior(m.prior, 2, cfg, rng, &rec);
  REQUIRE(rec.snapshots.size() == 5);
  CHECK(rec.snapshot_steps == std::vector<int>{0, 10, 20, 30, 40});
  CHECK(rec.energy.size() == 41);
  CHECK(rec.log_prior.size() == 41);
}

TEST_CASE("diverging chains raise with the last finite state attached") {
  auto rng = make_stream(41, "test/diverge");
  LatentStack z0;
  z0.layers.push_back(Tensor::row({1.0}));
  GradFn grad = [](const LatentStack& z) {
    LatentStack g = z;
    for (auto& l : g.layers)
      for (double& v : l.raw()) v = v * 1e200;  // explosive drift
    return g;
  };
  LangevinConfig cfg;
  cfg.steps = 10;
  cfg.step_size = 1.0;
  CHECK_THROWS_AS(langevin(grad, z0, cfg, rng), DivergedChainError);
}

TEST_CASE("gradient clamping bounds the per-chain step") {
  auto rng = make_stream(43, "test/clamp");
  LatentStack z0;
  z0.layers.push_back(Tensor::row({100.0, 0.0}));
  GradFn grad = [](const LatentStack& z) {
    LatentStack g = z;
    for (auto& l : g.layers)
      for (double& v : l.raw()) v = -v * 1e6;
    return g;
  };
  LangevinConfig cfg;
  cfg.steps = 1;
  cfg.step_size = 0.1;
  cfg.noise_enabled = false;
  cfg.clamp_grad = 1.0;
  LatentStack out = langevin(grad, z0, cfg, rng);
  CHECK(out.layers[0][0] == doctest::Approx(100.0 - 0.1).epsilon(1e-12));
}

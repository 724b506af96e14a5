#include <doctest/doctest.h>

#include <cmath>
#include <cstring>
#include <vector>

#include "jebm/model.hpp"
#include "jebm/oracles.hpp"
#include "jebm/rng.hpp"
#include "jebm/samplers.hpp"
#include "jebm/training.hpp"

using namespace jebm;

namespace {

constexpr double kLog2Pi = 1.8378770664093453;

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

double gauss_logpdf(double x, double mean, double log_var) {
  double diff = x - mean;
  return -0.5 * kLog2Pi - 0.5 * log_var - 0.5 * diff * diff * std::exp(-log_var);
}

double clamp_lv(double lv) {
  return std::min(kLogVarClampHi, std::max(kLogVarClampLo, lv));
}

std::vector<double> flatten_params(Models& m, const std::vector<Tensor*>& group) {
  std::vector<double> out;
  for (Tensor* p : group)
    out.insert(out.end(), p->raw().begin(), p->raw().end());
  return out;
}

bool params_equal(const std::vector<Tensor*>& a, const std::vector<double>& snap) {
  std::size_t k = 0;
  for (Tensor* p : a)
    for (double v : p->raw())
      if (v != snap[k++]) return false;
  return true;
}

}  // namespace

TEST_CASE("Adam: hand-computed first step, zero gradient, sign asymptote") {
  Adam opt;
  Tensor p = Tensor::scalar(1.0);
  std::vector<Tensor*> params = {&p};

  // Constant gradient g: bias correction makes m_hat = g, v_hat = g^2 at
  // every step, so each update is lr * g / (|g| + eps').
  std::vector<Tensor> g = {Tensor::scalar(2.0)};
  opt.step(params, g, 0.1);
  // first step: m_hat = 2, v_hat = 4; update = lr * 2 / (2 + eps)
  CHECK(p[0] == doctest::Approx(1.0 + 0.1).epsilon(1e-6));

  // Subsequent constant-gradient steps stay at lr * sign(g).
  for (int i = 0; i < 50; ++i) {
    double before = p[0];
    opt.step(params, g, 0.1);
    CHECK(p[0] - before == doctest::Approx(0.1).epsilon(1e-6));
  }

  // Zero gradient with fresh state: no movement.
  Adam opt2;
  Tensor q = Tensor::scalar(3.0);
  std::vector<Tensor*> qp = {&q};
  std::vector<Tensor> zg = {Tensor::scalar(0.0)};
  opt2.step(qp, zg, 0.1);
  CHECK(q[0] == 3.0);

  // plain_sgd is an exact ascent step.
  Adam sgd;
  sgd.plain_sgd = true;
  Tensor r = Tensor::scalar(0.0);
  std::vector<Tensor*> rp = {&r};
  std::vector<Tensor> rg = {Tensor::scalar(-1.5)};
  sgd.step(rp, rg, 0.01);
  CHECK(r[0] == doctest::Approx(-0.015).epsilon(1e-14));
}

TEST_CASE("variational step matches an independent ELBO implementation") {
  // L = 2, 1-D everywhere. The returned (beta0, beta, omega) gradients must
  // match central finite differences of an eagerly re-implemented objective
  // evaluated at the same reparameterization noise.
  Models m = build_models(tiny_config({1, 1}, 1), 101);
  auto data_rng = make_stream(7, "test/elbo-x");
  std::size_t n = 6;
  Tensor x = data_rng.normal_tensor({n, 1});

  // Clone the noise the step will consume: one [n x d] draw per layer,
  // bottom-up.
  auto noise_rng = make_stream(55, "test/elbo-step");
  Tensor eps0 = noise_rng.normal_tensor({n, 1});
  Tensor eps1 = noise_rng.normal_tensor({n, 1});

  TrainerConfig tc;
  tc.mode = TrainerConfig::Mode::Variational;
  tc.batch_size = n;
  tc.plain_sgd = true;
  tc.lr_alpha = tc.lr_beta = tc.lr_omega = 1e-12;
  Models stepped = m;
  Trainer trainer(stepped, tc);
  auto step_rng = make_stream(55, "test/elbo-step");
  GradEstimates est = trainer.variational_step(x, step_rng, /*train_alpha=*/false);

  // Independent objective: mean over the batch of
  //   log p(x|z0) - KL_top(q(z1|z0) || N(0,1)) - [log q(z0|x) - log p(z0|z1)]
  // at z0 = m0 + exp(lv0/2) eps0, z1 = m1(z0) + exp(lv1/2) eps1.
  auto objective = [&](Models& w) {
    double total = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
      Tensor xr = Tensor::row({x.at(r, 0)});
      Tensor h0 = w.inference.heads[0].forward_eager(xr);
      double m0 = h0[0], lv0 = clamp_lv(h0[1]);
      double z0 = m0 + std::exp(0.5 * lv0) * eps0.at(r, 0);
      Tensor h1 = w.inference.heads[1].forward_eager(Tensor::row({z0}));
      double m1 = h1[0], lv1 = clamp_lv(h1[1]);
      double z1 = m1 + std::exp(0.5 * lv1) * eps1.at(r, 0);

      double g = w.decoder.net.forward_eager(Tensor::row({z0}))[0];
      double sigma = w.decoder.observation_sigma;
      double recon = gauss_logpdf(x.at(r, 0), g, 2.0 * std::log(sigma));

      double kl_top = 0.5 * (std::exp(lv1) + m1 * m1 - 1.0 - lv1);

      Tensor pt = w.prior.layers[0].trunk.forward_eager(Tensor::row({z1}));
      double pm = pt[0], plv = clamp_lv(pt[1]);
      double ratio = gauss_logpdf(z0, m0, lv0) - gauss_logpdf(z0, pm, plv);

      total += recon - kl_top - ratio;
    }
    return total / static_cast<double>(n);
  };

  auto check_group = [&](const std::vector<Tensor*>& group,
                         const std::vector<Tensor>& grads) {
    REQUIRE(group.size() == grads.size());
    for (std::size_t i = 0; i < group.size(); ++i) {
      Tensor* p = group[i];
      Tensor saved = *p;
      Tensor fd = fd_gradient(
          [&](const Tensor& v) {
            *p = v;
            return objective(m);
          },
          saved);
      *p = saved;
      CHECK(max_rel_err(grads[i], fd) < 1e-6);
    }
  };
  check_group(m.decoder.parameters(), est.beta0);
  check_group(m.prior.beta_parameters(), est.beta);
  check_group(m.inference.parameters(), est.omega);
}

TEST_CASE("learning gradient self-consistency at the data distribution") {
  // Data drawn from the model itself: the expected alpha gradient is zero.
  // Averaged over replicates, each probe entry must sit within a few standard
  // errors of zero.
  Models m = build_models(tiny_config({1, 1}, 1), 303);
  m.decoder.observation_sigma = 1.0;
  m.config.observation_sigma = 1.0;

  TrainerConfig tc;
  tc.mode = TrainerConfig::Mode::Mle;
  tc.plain_sgd = true;
  tc.lr_alpha = tc.lr_beta = tc.lr_omega = 1e-30;
  tc.posterior_sampler.steps = 120;
  tc.posterior_sampler.step_size = 0.1;
  tc.prior_sampler.steps = 0;  // alpha = 0: the backbone is the prior

  const std::size_t K = 24, batch = 400;
  std::vector<std::vector<double>> grads;
  for (std::size_t k = 0; k < K; ++k) {
    auto rng = make_stream(1000 + k, "test/selfcon");
    LatentStack z = ancestral_sample(m.prior, batch, rng);
    Tensor x = decode_mean_rows(m.decoder, z.layers[0]);
    for (double& v : x.raw()) v += m.decoder.observation_sigma * rng.normal();

    Models copy = m;
    Trainer tr(copy, tc);
    GradEstimates est = tr.mle_step(x, rng);
    std::vector<double> flat;
    for (const Tensor& g : est.alpha)
      flat.insert(flat.end(), g.raw().begin(), g.raw().end());
    grads.push_back(std::move(flat));
  }
  std::size_t dim = grads[0].size();
  for (std::size_t j = 0; j < dim; ++j) {
    double mean = 0.0;
    for (const auto& g : grads) mean += g[j];
    mean /= static_cast<double>(K);
    double var = 0.0;
    for (const auto& g : grads) var += (g[j] - mean) * (g[j] - mean);
    double se = std::sqrt(var / (K - 1.0) / K);
    CHECK(std::abs(mean) < 4.0 * se + 1e-9);
  }
}

TEST_CASE("identical-example batch matches averaged single-example steps") {
  // A batch of copies of one x estimates the same gradient as the average of
  // independent single-example steps; compare within Monte-Carlo error.
  Models m = build_models(tiny_config({1, 1}, 1), 404);
  Tensor x = Tensor::row({0.7});

  TrainerConfig tc;
  tc.mode = TrainerConfig::Mode::Mle;
  tc.plain_sgd = true;
  tc.lr_alpha = tc.lr_beta = tc.lr_omega = 1e-30;
  tc.posterior_sampler.steps = 20;
  tc.prior_sampler.steps = 20;

  const std::size_t K = 64;
  auto run_step = [&](const Tensor& batch, std::uint64_t seed) {
    Models copy = m;
    Trainer tr(copy, tc);
    auto rng = make_stream(seed, "test/identx");
    GradEstimates est = tr.mle_step(batch, rng);
    std::vector<double> flat;
    for (const Tensor& g : est.beta)
      flat.insert(flat.end(), g.raw().begin(), g.raw().end());
    return flat;
  };

  std::vector<std::vector<double>> singles;
  for (std::size_t k = 0; k < K; ++k) singles.push_back(run_step(x, 2000 + k));

  Tensor batch = Tensor::zeros({K, 1});
  for (std::size_t r = 0; r < K; ++r) batch.at(r, 0) = 0.7;
  std::vector<double> batched = run_step(batch, 9999);

  std::size_t dim = singles[0].size();
  for (std::size_t j = 0; j < dim; ++j) {
    double mean = 0.0;
    for (const auto& g : singles) mean += g[j];
    mean /= static_cast<double>(K);
    double var = 0.0;
    for (const auto& g : singles) var += (g[j] - mean) * (g[j] - mean);
    double se = std::sqrt(var / (K - 1.0) / K);
    CHECK(std::abs(batched[j] - mean) < 6.0 * se * std::sqrt(2.0) + 1e-9);
  }
}

TEST_CASE("zero iterations change nothing and still emit the final checkpoint") {
  Models m = build_models(tiny_config({2, 2}, 2), 505);
  auto all = [&]() {
    std::vector<Tensor*> ps;
    for (auto* p : m.prior.alpha_parameters()) ps.push_back(p);
    for (auto* p : m.prior.beta_parameters()) ps.push_back(p);
    for (auto* p : m.decoder.parameters()) ps.push_back(p);
    for (auto* p : m.inference.parameters()) ps.push_back(p);
    return ps;
  };
  std::vector<double> before = flatten_params(m, all());

  TrainerConfig tc;
  tc.iterations = 0;
  Trainer tr(m, tc);
  auto rng = make_stream(3, "test/zero-iter");
  Tensor data = rng.normal_tensor({16, 2});
  int logs = 0;
  std::vector<std::int64_t> ckpts;
  tr.run(data, [&](const StepMetrics&) { ++logs; },
         [&](std::int64_t it) { ckpts.push_back(it); });
  CHECK(logs == 0);
  CHECK(ckpts == std::vector<std::int64_t>{0});
  CHECK(params_equal(all(), before));
}

TEST_CASE("checkpoint cadence: every 2 over 5 iterations gives 2, 4, 5") {
  Models m = build_models(tiny_config({1, 1}, 1), 606);
  TrainerConfig tc;
  tc.iterations = 5;
  tc.batch_size = 4;
  tc.checkpoint_every = 2;
  tc.prior_sampler.steps = 2;
  Trainer tr(m, tc);
  auto rng = make_stream(4, "test/ckpt-cadence");
  Tensor data = rng.normal_tensor({16, 1});
  std::vector<std::int64_t> ckpts;
  tr.run(data, nullptr, [&](std::int64_t it) { ckpts.push_back(it); });
  CHECK(ckpts == std::vector<std::int64_t>{2, 4, 5});
}

TEST_CASE("two-stage: stage 1 leaves alpha alone, stage 2 freezes beta/omega") {
  Models m = build_models(tiny_config({1, 1}, 1), 707);
  TrainerConfig tc;
  tc.mode = TrainerConfig::Mode::TwoStage;
  tc.iterations = 6;
  tc.stage1_iterations = 3;
  tc.batch_size = 8;
  tc.log_every = 1;
  tc.prior_sampler.steps = 3;
  tc.seed = 12;

  std::vector<double> alpha0 = flatten_params(m, m.prior.alpha_parameters());
  Trainer tr(m, tc);
  auto data_rng = make_stream(5, "test/two-stage");
  Tensor data = data_rng.normal_tensor({32, 1});

  std::vector<double> beta_mid, omega_mid, alpha_mid;
  tr.run(data, [&](const StepMetrics& sm) {
    if (sm.iter == 3) {
      beta_mid = flatten_params(m, m.prior.beta_parameters());
      auto b0 = m.decoder.parameters();
      for (Tensor* p : b0)
        beta_mid.insert(beta_mid.end(), p->raw().begin(), p->raw().end());
      omega_mid = flatten_params(m, m.inference.parameters());
      alpha_mid = flatten_params(m, m.prior.alpha_parameters());
    }
  });

  REQUIRE(!beta_mid.empty());
  CHECK(alpha_mid == alpha0);  // stage 1 never touches alpha

  std::vector<double> beta_end = flatten_params(m, m.prior.beta_parameters());
  auto b0 = m.decoder.parameters();
  for (Tensor* p : b0)
    beta_end.insert(beta_end.end(), p->raw().begin(), p->raw().end());
  std::vector<double> omega_end = flatten_params(m, m.inference.parameters());
  CHECK(beta_end == beta_mid);
  CHECK(omega_end == omega_mid);
  CHECK(flatten_params(m, m.prior.alpha_parameters()) != alpha0);
}

TEST_CASE("training runs are reproducible under a shared seed") {
  auto run_once = [&]() {
    Models m = build_models(tiny_config({1, 1}, 1), 808);
    TrainerConfig tc;
    tc.iterations = 8;
    tc.batch_size = 8;
    tc.log_every = 1;
    tc.seed = 99;
    tc.prior_sampler.steps = 3;
    Trainer tr(m, tc);
    auto data_rng = make_stream(6, "test/repro");
    Tensor data = data_rng.normal_tensor({32, 1});
    std::vector<double> trace;
    tr.run(data, [&](const StepMetrics& sm) {
      trace.push_back(sm.recon);
      trace.push_back(sm.kl);
      trace.push_back(sm.grad_norm_beta);
    });
    std::vector<Tensor*> ps;
    for (auto* p : m.prior.beta_parameters()) ps.push_back(p);
    for (auto* p : m.inference.parameters()) ps.push_back(p);
    for (Tensor* p : ps)
      trace.insert(trace.end(), p->raw().begin(), p->raw().end());
    return trace;
  };
  CHECK(run_once() == run_once());
}

TEST_CASE("three KL decomposition terms cancel under quadrature") {
  // KL(p_d q || p_theta(x, z)) - KL(p_d || p_theta(x))
  //   - E_{p_d} KL(q || p_theta(z|x)) = 0.
  // Each term is integrated with its own grid so the residual measures true
  // consistency between decoder, prior, posterior, and normalizer, not shared
  // discretization error.
  Models m = build_models(tiny_config({1, 1}, 1), 909);
  auto rng = make_stream(17, "test/kl3");
  for (auto& head : m.prior.energies) {
    for (double& v : head.net.weights.back().raw()) v += 0.05 * rng.normal();
    for (double& v : head.net.biases.back().raw()) v += 0.05 * rng.normal();
  }

  GridSpec gA{-8.0, 8.0, 1001};
  GridSpec gB{-8.0, 8.0, 801};
  GridSpec gC{-8.0, 8.0, 901};
  double log_z_a = quad_log_z(m.prior, gA);
  double log_z_c = quad_log_z(m.prior, gC);

  // E_{q(z|x)}[log q(z|x) - log p(x|z0) - log unnormalized prior(z)] by
  // tensor-product quadrature over (z0, z1).
  auto inner = [&](double xval, const GridSpec& g) {
    Tensor xr = Tensor::row({xval});
    Tensor h0 = m.inference.heads[0].forward_eager(xr);
    double m0 = h0[0], lv0 = clamp_lv(h0[1]);

    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < g.points; ++i) {
      double z0 = g.node(i);
      double q0 = std::exp(gauss_logpdf(z0, m0, lv0));
      if (q0 < 1e-300) continue;
      Tensor h1 = m.inference.heads[1].forward_eager(Tensor::row({z0}));
      double m1 = h1[0], lv1 = clamp_lv(h1[1]);
      double ll = decode_log_likelihood(m.decoder, xr, Tensor::row({z0}));

      LatentStack stack;
      stack.layers.push_back(Tensor::full({g.points, 1}, z0));
      Tensor z1s = Tensor::zeros({g.points, 1});
      for (std::size_t j = 0; j < g.points; ++j) z1s[j] = g.node(j);
      stack.layers.push_back(std::move(z1s));
      Tensor unnorm = unnormalized_log_prior_rows(m.prior, stack);

      for (std::size_t j = 0; j < g.points; ++j) {
        double z1 = g.node(j);
        double lq = gauss_logpdf(z0, m0, lv0) + gauss_logpdf(z1, m1, lv1);
        double w = g.weight(i) * g.weight(j) * q0 *
                   std::exp(gauss_logpdf(z1, m1, lv1));
        num += w * (lq - ll - unnorm[j]);
        den += w;
      }
    }
    return num / den;
  };

  // Data distribution N(0.4, 0.8^2) on its own grid.
  double mu_d = 0.4, sd_d = 0.8;
  GridSpec gx{mu_d - 4.5 * sd_d, mu_d + 4.5 * sd_d, 81};
  double A = 0.0, B = 0.0, C = 0.0;
  for (std::size_t i = 0; i < gx.points; ++i) {
    double xv = gx.node(i);
    double log_pd = gauss_logpdf(xv, mu_d, 2.0 * std::log(sd_d));
    double pd = std::exp(log_pd);
    double w = gx.weight(i) * pd;

    double log_px = quad_log_marginal(m, Tensor::row({xv}), gB);
    A += w * (log_pd + inner(xv, gA) + log_z_a);
    B += w * (log_pd - log_px);
    C += w * (inner(xv, gC) + log_z_c + log_px);
  }
  CHECK(std::abs(A - B - C) < 1e-4);
}

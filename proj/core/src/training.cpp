#include "jebm/training.hpp"

#include <chrono>
#include <cmath>

namespace jebm {

void Adam::step(std::span<Tensor* const> params, std::span<const Tensor> grads,
                double lr) {
  if (params.size() != grads.size())
    throw DimensionError("Adam::step: param/grad count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = *params[i];
    const Tensor& g = grads[i];
    if (!p.same_shape(g)) throw DimensionError("Adam::step: grad shape mismatch");
    if (plain_sgd) {
      for (std::size_t j = 0; j < p.size(); ++j) p[j] += lr * g[j];
      continue;
    }
    State& s = state_for(params[i]);
    s.t += 1;
    double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(s.t));
    double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(s.t));
    for (std::size_t j = 0; j < p.size(); ++j) {
      s.m[j] = cfg.beta1 * s.m[j] + (1.0 - cfg.beta1) * g[j];
      s.v[j] = cfg.beta2 * s.v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
      double mhat = s.m[j] / bc1;
      double vhat = s.v[j] / bc2;
      p[j] += lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
  }
}

Adam::State& Adam::state_for(Tensor* p) {
  auto it = states_.find(p);
  if (it == states_.end()) {
    State s;
    s.m = Tensor::zeros(p->shape());
    s.v = Tensor::zeros(p->shape());
    it = states_.emplace(p, std::move(s)).first;
  }
  return it->second;
}

void TrainerConfig::validate() const {
  if (batch_size < 1) throw std::invalid_argument("TrainerConfig: batch_size must be >= 1");
  if (iterations < 0) throw std::invalid_argument("TrainerConfig: iterations must be >= 0");
  if (!(lr_alpha > 0.0 && lr_beta > 0.0 && lr_omega > 0.0))
    throw std::invalid_argument("TrainerConfig: learning rates must be > 0");
  prior_sampler.validate();
  posterior_sampler.validate();
}

namespace {

double mean_rows(const Tensor& rows) {
  double s = 0.0;
  for (double v : rows.raw()) s += v;
  return rows.size() ? s / static_cast<double>(rows.size()) : 0.0;
}

double grad_l2(const std::vector<Tensor>& grads) {
  double sq = 0.0;
  for (const Tensor& g : grads)
    for (double v : g.raw()) sq += v * v;
  return std::sqrt(sq);
}

std::vector<Tensor> collect_grads(Tape& t, ParamBinding& params,
                                  const std::vector<Tensor*>& group) {
  std::vector<Tensor> grads;
  grads.reserve(group.size());
  for (Tensor* p : group)
    grads.push_back(params.bound(*p) ? t.grad(params.id_of(*p)) : Tensor::zeros(p->shape()));
  return grads;
}

Tensor take_rows(const Tensor& data, std::span<const std::size_t> idx) {
  std::size_t d = data.cols();
  Tensor out = Tensor::zeros({idx.size(), d});
  for (std::size_t i = 0; i < idx.size(); ++i)
    for (std::size_t j = 0; j < d; ++j) out.at(i, j) = data.at(idx[i], j);
  return out;
}

LatentStack take_chain_row(const LatentStack& z, std::size_t row) {
  LatentStack out;
  for (const Tensor& layer : z.layers) {
    Tensor r = Tensor::zeros({1, layer.cols()});
    for (std::size_t j = 0; j < layer.cols(); ++j) r.at(0, j) = layer.at(row, j);
    out.layers.push_back(std::move(r));
  }
  return out;
}

void put_chain_row(LatentStack& dst, std::size_t row, const LatentStack& src) {
  for (std::size_t l = 0; l < dst.num_layers(); ++l)
    for (std::size_t j = 0; j < dst.layers[l].cols(); ++j)
      dst.layers[l].at(row, j) = src.layers[l].at(0, j);
}

}  // namespace

Trainer::Trainer(Models& models, TrainerConfig cfg)
    : models_(models), cfg_(std::move(cfg)) {
  cfg_.validate();
  adam_.cfg = cfg_.adam;
  adam_.plain_sgd = cfg_.plain_sgd;
}

LatentStack Trainer::sample_negative(std::size_t n, RngStream& rng, GradEstimates* est) {
  LatentStack zneg = sample_prior(models_.prior, n, cfg_.prior_sampler, rng);
  if (est) est->energy_neg = -mean_rows(energy_sum_rows(models_.prior, zneg));
  return zneg;
}

GradEstimates Trainer::apply_updates(GradEstimates est, bool alpha, bool beta,
                                     bool omega) {
  est.grad_norm_alpha = grad_l2(est.alpha);
  est.grad_norm_beta = grad_l2(est.beta) + grad_l2(est.beta0);
  if (alpha) {
    auto group = models_.prior.alpha_parameters();
    adam_.step(group, est.alpha, cfg_.lr_alpha);
  }
  if (beta) {
    auto g0 = models_.decoder.parameters();
    adam_.step(g0, est.beta0, cfg_.lr_beta);
    auto gb = models_.prior.beta_parameters();
    adam_.step(gb, est.beta, cfg_.lr_beta);
  }
  if (omega) {
    auto go = models_.inference.parameters();
    adam_.step(go, est.omega, cfg_.lr_omega);
  }
  return est;
}

GradEstimates Trainer::mle_step(const Tensor& batch, RngStream& rng,
                                std::span<const std::size_t> indices) {
  if (batch.rows() == 0) throw std::invalid_argument("mle_step: empty batch");
  std::size_t n = batch.rows();
  GradEstimates est;

  // positive phase: z+ ~ p(z|x) via short-run posterior Langevin
  LatentStack zpos0;
  bool persist = cfg_.persistent_posterior_chains && indices.size() == n;
  if (persist) {
    zpos0 = ancestral_sample(models_.prior, n, rng);
    for (std::size_t i = 0; i < n; ++i) {
      auto it = persistent_chains_.find(indices[i]);
      if (it != persistent_chains_.end()) put_chain_row(zpos0, i, it->second);
    }
  } else {
    zpos0 = ancestral_sample(models_.prior, n, rng);
  }
  GradFn post_grad = [this, &batch](const LatentStack& z) {
    return grad_log_posterior(models_.decoder, models_.prior, batch, z);
  };
  LatentStack zpos = langevin(post_grad, std::move(zpos0), cfg_.posterior_sampler, rng);
  if (persist)
    for (std::size_t i = 0; i < n; ++i)
      persistent_chains_[indices[i]] = take_chain_row(zpos, i);

  // negative phase: z- ~ p_{alpha,beta>0}(z), one chain per batch element
  LatentStack zneg = sample_negative(cfg_.prior_chains(), rng, &est);
  std::size_t m = zneg.batch();

  Tape t;
  ParamBinding params(t);
  std::vector<Tape::Id> pos_ids, neg_ids;
  for (const Tensor& layer : zpos.layers) pos_ids.push_back(t.leaf(layer));
  for (const Tensor& layer : zneg.layers) neg_ids.push_back(t.leaf(layer));
  Tape::Id x = t.leaf(batch);

  Tape::Id recon_rows = models_.decoder.log_likelihood_rows(params, x, pos_ids[0]);
  Tape::Id pos_rows = t.add(recon_rows,
                            models_.prior.unnormalized_log_prior_rows(params, pos_ids));
  Tape::Id neg_rows = models_.prior.unnormalized_log_prior_rows(params, neg_ids);
  Tape::Id obj = t.sub(t.scale(t.sum(pos_rows), 1.0 / static_cast<double>(n)),
                       t.scale(t.sum(neg_rows), 1.0 / static_cast<double>(m)));
  if (cfg_.energy_l2 > 0.0) {
    Tape::Id fp = models_.prior.energy_sum_rows(params, pos_ids);
    Tape::Id fn = models_.prior.energy_sum_rows(params, neg_ids);
    Tape::Id pen = t.add(t.scale(t.sum(t.square(fp)), 1.0 / static_cast<double>(n)),
                         t.scale(t.sum(t.square(fn)), 1.0 / static_cast<double>(m)));
    obj = t.sub(obj, t.scale(pen, cfg_.energy_l2));
  }
  t.backward(obj);

  est.recon = -mean_rows(t.value(recon_rows));
  est.energy_pos = -mean_rows(energy_sum_rows(models_.prior, zpos));
  est.alpha = collect_grads(t, params, models_.prior.alpha_parameters());
  est.beta0 = collect_grads(t, params, models_.decoder.parameters());
  est.beta = collect_grads(t, params, models_.prior.beta_parameters());
  est.omega.assign(models_.inference.parameters().size(), Tensor());
  for (std::size_t i = 0; i < est.omega.size(); ++i)
    est.omega[i] = Tensor::zeros(models_.inference.parameters()[i]->shape());

  return apply_updates(std::move(est), true, true, false);
}

GradEstimates Trainer::variational_step(const Tensor& batch, RngStream& rng,
                                        bool train_alpha) {
  if (batch.rows() == 0) throw std::invalid_argument("variational_step: empty batch");
  std::size_t n = batch.rows();
  std::size_t L = models_.prior.num_layers();
  GradEstimates est;

  // negative phase first so RNG consumption is independent of L
  LatentStack zneg;
  std::size_t m = 0;
  if (train_alpha) {
    zneg = sample_negative(cfg_.prior_chains(), rng, &est);
    m = zneg.batch();
  }

  Tape t;
  ParamBinding params(t);
  Tape::Id x = t.leaf(batch);

  // reparameterized bottom-up inference on the tape
  std::vector<Tape::Id> z_ids(L), mean_ids(L), lv_ids(L);
  Tape::Id input = x;
  for (std::size_t i = 0; i < L; ++i) {
    auto [mean, lv] = models_.inference.head_mean_log_var(params, i, input);
    std::size_t d = t.value(mean).cols();
    Tape::Id eps = t.leaf(rng.normal_tensor({n, d}));
    Tape::Id z = t.add(mean, t.mul(t.exp_(t.affine(lv, 0.5, 0.0)), eps));
    z_ids[i] = z;
    mean_ids[i] = mean;
    lv_ids[i] = lv;
    input = z;
  }

  // optionally cut the reparameterization path into the prior-side terms
  auto pos_z = [&](std::size_t i) {
    return cfg_.detach_positive_path ? t.leaf(t.value(z_ids[i])) : z_ids[i];
  };
  std::vector<Tape::Id> pz_ids(L);
  for (std::size_t i = 0; i < L; ++i) pz_ids[i] = pos_z(i);

  Tape::Id recon_rows = models_.decoder.log_likelihood_rows(params, x, z_ids[0]);

  // KL(q || p_{beta>0}): analytic for the top layer against N(0, I), and a
  // single-sample log-ratio for the conditional layers below it
  est.kl_per_layer.assign(L, 0.0);
  Tape::Id kl_rows = t.scale(
      t.row_sum(t.add(t.add(t.exp_(lv_ids[L - 1]), t.square(mean_ids[L - 1])),
                      t.affine(lv_ids[L - 1], -1.0, -1.0))),
      0.5);
  est.kl_per_layer[L - 1] = mean_rows(t.value(kl_rows));
  for (std::size_t i = 0; i + 1 < L; ++i) {
    Tape::Id log_q = gaussian_log_density_rows(t, z_ids[i], mean_ids[i], lv_ids[i]);
    auto [pm, plv] = models_.prior.layers[i].mean_log_var(params, pz_ids[i + 1]);
    Tape::Id log_p = gaussian_log_density_rows(t, pz_ids[i], pm, plv);
    Tape::Id term = t.sub(log_q, log_p);
    est.kl_per_layer[i] = mean_rows(t.value(term));
    kl_rows = t.add(kl_rows, term);
  }

  Tape::Id obj_rows = t.sub(recon_rows, kl_rows);
  if (train_alpha)
    obj_rows = t.add(obj_rows, models_.prior.energy_sum_rows(params, pz_ids));
  Tape::Id obj = t.scale(t.sum(obj_rows), 1.0 / static_cast<double>(n));

  std::vector<Tape::Id> neg_ids;
  if (train_alpha) {
    for (const Tensor& layer : zneg.layers) neg_ids.push_back(t.leaf(layer));
    Tape::Id neg_rows = models_.prior.unnormalized_log_prior_rows(params, neg_ids);
    obj = t.sub(obj, t.scale(t.sum(neg_rows), 1.0 / static_cast<double>(m)));
    if (cfg_.energy_l2 > 0.0) {
      Tape::Id fp = models_.prior.energy_sum_rows(params, pz_ids);
      Tape::Id fn = models_.prior.energy_sum_rows(params, neg_ids);
      Tape::Id pen = t.add(t.scale(t.sum(t.square(fp)), 1.0 / static_cast<double>(n)),
                           t.scale(t.sum(t.square(fn)), 1.0 / static_cast<double>(m)));
      obj = t.sub(obj, t.scale(pen, cfg_.energy_l2));
    }
  }
  t.backward(obj);

  est.recon = -mean_rows(t.value(recon_rows));
  est.kl = mean_rows(t.value(kl_rows));
  {
    LatentStack zpos;
    for (std::size_t i = 0; i < L; ++i) zpos.layers.push_back(t.value(z_ids[i]));
    est.energy_pos = -mean_rows(energy_sum_rows(models_.prior, zpos));
  }
  est.alpha = collect_grads(t, params, models_.prior.alpha_parameters());
  est.beta0 = collect_grads(t, params, models_.decoder.parameters());
  est.beta = collect_grads(t, params, models_.prior.beta_parameters());
  est.omega = collect_grads(t, params, models_.inference.parameters());

  return apply_updates(std::move(est), train_alpha, true, true);
}

GradEstimates Trainer::stage2_step(const Tensor& batch, RngStream& rng) {
  if (batch.rows() == 0) throw std::invalid_argument("stage2_step: empty batch");
  std::size_t n = batch.rows();
  GradEstimates est;

  InferResult inf = infer(models_.inference, batch, rng);
  LangevinConfig neg_cfg = cfg_.prior_sampler;
  neg_cfg.space = LangevinConfig::Space::Epsilon;
  LatentStack zneg = sample_prior(models_.prior, cfg_.prior_chains(), neg_cfg, rng);
  est.energy_neg = -mean_rows(energy_sum_rows(models_.prior, zneg));
  std::size_t m = zneg.batch();

  Tape t;
  ParamBinding params(t);
  std::vector<Tape::Id> pos_ids, neg_ids;
  for (const Tensor& layer : inf.z.layers) pos_ids.push_back(t.leaf(layer));
  for (const Tensor& layer : zneg.layers) neg_ids.push_back(t.leaf(layer));
  Tape::Id fpos = models_.prior.energy_sum_rows(params, pos_ids);
  Tape::Id fneg = models_.prior.energy_sum_rows(params, neg_ids);
  Tape::Id obj = t.sub(t.scale(t.sum(fpos), 1.0 / static_cast<double>(n)),
                       t.scale(t.sum(fneg), 1.0 / static_cast<double>(m)));
  if (cfg_.energy_l2 > 0.0) {
    Tape::Id pen = t.add(t.scale(t.sum(t.square(fpos)), 1.0 / static_cast<double>(n)),
                         t.scale(t.sum(t.square(fneg)), 1.0 / static_cast<double>(m)));
    obj = t.sub(obj, t.scale(pen, cfg_.energy_l2));
  }
  t.backward(obj);

  est.energy_pos = -mean_rows(t.value(fpos));
  est.alpha = collect_grads(t, params, models_.prior.alpha_parameters());
  auto zero_like = [](const std::vector<Tensor*>& g) {
    std::vector<Tensor> v;
    for (Tensor* p : g) v.push_back(Tensor::zeros(p->shape()));
    return v;
  };
  est.beta0 = zero_like(models_.decoder.parameters());
  est.beta = zero_like(models_.prior.beta_parameters());
  est.omega = zero_like(models_.inference.parameters());

  return apply_updates(std::move(est), true, false, false);
}

void Trainer::run(const Tensor& data,
                  const std::function<void(const StepMetrics&)>& on_log,
                  const std::function<void(std::int64_t)>& on_checkpoint) {
  std::size_t n_data = data.rows();
  if (n_data == 0 && cfg_.iterations > 0)
    throw std::invalid_argument("Trainer::run: empty dataset");
  std::int64_t stage1 =
      cfg_.stage1_iterations > 0 ? cfg_.stage1_iterations : cfg_.iterations / 2;

  std::int64_t end = iteration_ + cfg_.iterations;
  while (iteration_ < end) {
    auto t0 = std::chrono::steady_clock::now();
    RngStream batch_rng = make_stream(cfg_.seed, "train/batch", iteration_);
    RngStream step_rng = make_stream(cfg_.seed, "train/step", iteration_);
    std::vector<std::size_t> idx(cfg_.batch_size);
    for (std::size_t& i : idx)
      i = static_cast<std::size_t>(batch_rng.uniform() * static_cast<double>(n_data)) %
          n_data;
    Tensor batch = take_rows(data, idx);

    GradEstimates est;
    switch (cfg_.mode) {
      case TrainerConfig::Mode::Mle:
        est = mle_step(batch, step_rng, idx);
        break;
      case TrainerConfig::Mode::Variational:
        est = variational_step(batch, step_rng, true);
        break;
      case TrainerConfig::Mode::TwoStage:
        if (iteration_ < stage1)
          est = variational_step(batch, step_rng, false);
        else
          est = stage2_step(batch, step_rng);
        break;
    }
    ++iteration_;

    auto t1 = std::chrono::steady_clock::now();
    if (on_log && cfg_.log_every > 0 && iteration_ % cfg_.log_every == 0) {
      StepMetrics m;
      m.iter = iteration_;
      m.recon = est.recon;
      m.energy_pos = est.energy_pos;
      m.energy_neg = est.energy_neg;
      m.kl = est.kl;
      m.grad_norm_alpha = est.grad_norm_alpha;
      m.grad_norm_beta = est.grad_norm_beta;
      m.wall_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
      on_log(m);
    }
    if (on_checkpoint && cfg_.checkpoint_every > 0 &&
        iteration_ % cfg_.checkpoint_every == 0 && iteration_ < end)
      on_checkpoint(iteration_);
  }
  if (on_checkpoint) on_checkpoint(iteration_);
}

void two_stage_fit(Models& models, const Tensor& data, const TrainerConfig& cfg,
                   const std::function<void(const StepMetrics&)>& on_log) {
  TrainerConfig c = cfg;
  c.mode = TrainerConfig::Mode::TwoStage;
  Trainer trainer(models, c);
  trainer.run(data, on_log);
}

}  // namespace jebm

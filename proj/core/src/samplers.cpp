#include "jebm/samplers.hpp"

#include <cmath>

namespace jebm {

void LangevinConfig::validate() const {
  if (steps < 0) throw std::invalid_argument("LangevinConfig: steps must be >= 0");
  if (!(step_size > 0.0)) throw std::invalid_argument("LangevinConfig: step_size must be > 0");
  if (thin < 0) throw std::invalid_argument("LangevinConfig: thin must be >= 0");
}

namespace {

// first chain row containing a non-finite value, or 0
std::size_t bad_chain_index(const LatentStack& z) {
  for (const Tensor& layer : z.layers) {
    std::size_t n = layer.rows(), d = layer.cols();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < d; ++j)
        if (!std::isfinite(layer.at(i, j))) return i;
  }
  return 0;
}

void clamp_rows(Tensor& layer, double max_norm) {
  std::size_t n = layer.rows(), d = layer.cols();
  for (std::size_t i = 0; i < n; ++i) {
    double sq = 0.0;
    for (std::size_t j = 0; j < d; ++j) sq += layer.at(i, j) * layer.at(i, j);
    double norm = std::sqrt(sq);
    if (norm > max_norm) {
      double f = max_norm / norm;
      for (std::size_t j = 0; j < d; ++j) layer.at(i, j) *= f;
    }
  }
}

void record_step(ChainRecord* record, const DiagFn* diag, const LangevinConfig& cfg,
                 const LatentStack& z, int step) {
  if (!record) return;
  if (diag) {
    auto [energy, log_prior] = (*diag)(z);
    record->energy.push_back(std::move(energy));
    record->log_prior.push_back(std::move(log_prior));
  }
  if (cfg.thin > 0 && step % cfg.thin == 0) {
    record->snapshot_steps.push_back(step);
    record->snapshots.push_back(z);
  }
}

}  // namespace

LatentStack langevin(const GradFn& grad, LatentStack z0, const LangevinConfig& cfg,
                     RngStream& rng, ChainRecord* record, const DiagFn* diag,
                     const std::vector<bool>* fixed) {
  cfg.validate();
  if (!z0.all_finite())
    throw DivergedChainError("langevin: non-finite initial state", z0, bad_chain_index(z0), -1);

  record_step(record, diag, cfg, z0, 0);
  LatentStack z = std::move(z0);
  double s = cfg.step_size;
  double noise_scale = std::sqrt(2.0 * s);

  for (int t = 1; t <= cfg.steps; ++t) {
    LatentStack g;
    try {
      g = grad(z);
    } catch (const NonFiniteError& e) {
      if (record) record->diverged = true;
      throw DivergedChainError(std::string("langevin: non-finite gradient at step ") +
                                   std::to_string(t) + ": " + e.what(),
                               z, bad_chain_index(z), t);
    }
    for (std::size_t l = 0; l < z.num_layers(); ++l) {
      if (fixed && (*fixed)[l]) continue;
      Tensor& layer = z.layers[l];
      Tensor& gl = g.layers[l];
      if (cfg.clamp_grad) clamp_rows(gl, *cfg.clamp_grad);
      if (cfg.noise_enabled) {
        for (std::size_t i = 0; i < layer.size(); ++i)
          layer[i] += s * gl[i] + noise_scale * rng.normal();
      } else {
        for (std::size_t i = 0; i < layer.size(); ++i) layer[i] += s * gl[i];
      }
    }
    if (!z.all_finite()) {
      if (record) record->diverged = true;
      throw DivergedChainError("langevin: chain diverged at step " + std::to_string(t),
                               z, bad_chain_index(z), t);
    }
    record_step(record, diag, cfg, z, t);
  }
  return z;
}

LatentStack grad_log_prior(const JointEbmPrior& prior, const LatentStack& z) {
  prior.check_stack(z);
  Tape t;
  ParamBinding params(t);
  std::vector<Tape::Id> ids;
  for (const Tensor& layer : z.layers) ids.push_back(t.leaf(layer));
  Tape::Id target = t.sum(prior.unnormalized_log_prior_rows(params, ids));
  t.backward(target);
  LatentStack g;
  for (Tape::Id id : ids) g.layers.push_back(t.grad(id));
  return g;
}

LatentStack grad_log_posterior(const GeneratorDecoder& dec, const JointEbmPrior& prior,
                               const Tensor& x, const LatentStack& z) {
  prior.check_stack(z);
  Tape t;
  ParamBinding params(t);
  std::vector<Tape::Id> ids;
  for (const Tensor& layer : z.layers) ids.push_back(t.leaf(layer));
  Tape::Id rows = prior.unnormalized_log_prior_rows(params, ids);
  rows = t.add(rows, dec.log_likelihood_rows(params, t.leaf(x), ids[0]));
  t.backward(t.sum(rows));
  LatentStack g;
  for (Tape::Id id : ids) g.layers.push_back(t.grad(id));
  return g;
}

namespace {

// Shared top-down transform builder. eps_ids entries may be absent (fixed
// layers), in which case the corresponding z leaf must be given.
std::vector<Tape::Id> build_transform(const JointEbmPrior& prior, ParamBinding& params,
                                      const std::vector<std::optional<Tape::Id>>& eps_ids,
                                      const std::vector<std::optional<Tape::Id>>& fixed_z) {
  Tape& t = params.tape();
  std::size_t L = prior.num_layers();
  std::vector<Tape::Id> z(L);
  for (std::size_t idx = L; idx-- > 0;) {
    if (fixed_z[idx]) {
      z[idx] = *fixed_z[idx];
      continue;
    }
    if (idx == L - 1) {
      z[idx] = *eps_ids[idx];
    } else {
      auto [mean, log_var] = prior.layers[idx].mean_log_var(params, z[idx + 1]);
      Tape::Id std_dev = t.exp_(t.affine(log_var, 0.5, 0.0));
      z[idx] = t.add(mean, t.mul(std_dev, *eps_ids[idx]));
    }
  }
  return z;
}

}  // namespace

LatentStack epsilon_transform(const JointEbmPrior& prior, const LatentStack& eps) {
  prior.check_stack(eps);
  Tape t(false);
  ParamBinding params(t);
  std::size_t L = prior.num_layers();
  std::vector<std::optional<Tape::Id>> eps_ids(L), fixed(L);
  for (std::size_t i = 0; i < L; ++i) eps_ids[i] = t.leaf(eps.layers[i]);
  std::vector<Tape::Id> z = build_transform(prior, params, eps_ids, fixed);
  LatentStack out;
  for (Tape::Id id : z) out.layers.push_back(t.value(id));
  return out;
}

LatentStack epsilon_inverse(const JointEbmPrior& prior, const LatentStack& z) {
  prior.check_stack(z);
  std::size_t L = prior.num_layers();
  LatentStack eps;
  eps.layers.resize(L);
  eps.layers[L - 1] = z.layers[L - 1];
  for (std::size_t i = 0; i + 1 < L; ++i) {
    Tape t(false);
    ParamBinding params(t);
    auto [mean_id, log_var_id] =
        prior.layers[i].mean_log_var(params, t.leaf(z.layers[i + 1]));
    const Tensor& mean = t.value(mean_id);
    const Tensor& log_var = t.value(log_var_id);
    Tensor e = z.layers[i];
    for (std::size_t j = 0; j < e.size(); ++j)
      e[j] = (e[j] - mean[j]) / std::exp(0.5 * log_var[j]);
    eps.layers[i] = std::move(e);
  }
  return eps;
}

LatentStack grad_log_prior_eps(const JointEbmPrior& prior, const LatentStack& eps) {
  prior.check_stack(eps);
  Tape t;
  ParamBinding params(t);
  std::size_t L = prior.num_layers();
  std::vector<std::optional<Tape::Id>> eps_ids(L), fixed(L);
  for (std::size_t i = 0; i < L; ++i) eps_ids[i] = t.leaf(eps.layers[i]);
  std::vector<Tape::Id> z = build_transform(prior, params, eps_ids, fixed);
  Tape::Id rows = prior.energy_sum_rows(params, z);
  for (std::size_t i = 0; i < L; ++i)
    rows = t.add(rows, std_normal_log_density_rows(t, *eps_ids[i]));
  t.backward(t.sum(rows));
  LatentStack g;
  for (std::size_t i = 0; i < L; ++i) g.layers.push_back(t.grad(*eps_ids[i]));
  return g;
}

LatentStack conditional_prior_langevin(const JointEbmPrior& prior,
                                       const std::vector<bool>& fixed,
                                       LatentStack z_init, const LangevinConfig& cfg,
                                       RngStream& rng, ChainRecord* record) {
  GradFn grad = [&prior](const LatentStack& z) { return grad_log_prior(prior, z); };
  DiagFn diag = prior_diag(prior);
  return langevin(grad, std::move(z_init), cfg, rng, record, record ? &diag : nullptr,
                  &fixed);
}

LatentStack conditional_epsilon_langevin(const JointEbmPrior& prior,
                                         const LatentStack& z_fixed,
                                         const std::vector<bool>& fixed,
                                         LatentStack eps0, const LangevinConfig& cfg,
                                         RngStream& rng, ChainRecord* record) {
  std::size_t L = prior.num_layers();

  auto transform = [&](const LatentStack& eps) {
    Tape t(false);
    ParamBinding params(t);
    std::vector<std::optional<Tape::Id>> eps_ids(L), fixed_ids(L);
    for (std::size_t i = 0; i < L; ++i) {
      if (fixed[i])
        fixed_ids[i] = t.leaf(z_fixed.layers[i]);
      else
        eps_ids[i] = t.leaf(eps.layers[i]);
    }
    std::vector<Tape::Id> z = build_transform(prior, params, eps_ids, fixed_ids);
    LatentStack out;
    for (Tape::Id id : z) out.layers.push_back(t.value(id));
    return out;
  };

  GradFn grad = [&](const LatentStack& eps) {
    Tape t;
    ParamBinding params(t);
    std::vector<std::optional<Tape::Id>> eps_ids(L), fixed_ids(L);
    for (std::size_t i = 0; i < L; ++i) {
      if (fixed[i])
        fixed_ids[i] = t.leaf(z_fixed.layers[i]);
      else
        eps_ids[i] = t.leaf(eps.layers[i]);
    }
    std::vector<Tape::Id> z = build_transform(prior, params, eps_ids, fixed_ids);
    Tape::Id rows = t.leaf(Tensor::zeros({eps.batch(), 1}));
    for (std::size_t i = 0; i < L; ++i) {
      if (fixed[i]) continue;  // fixed-layer energies are constants here
      rows = t.add(rows, prior.energies[i].value_rows(params, z[i]));
      rows = t.add(rows, std_normal_log_density_rows(t, *eps_ids[i]));
    }
    t.backward(t.sum(rows));
    LatentStack g;
    for (std::size_t i = 0; i < L; ++i)
      g.layers.push_back(fixed[i] ? Tensor::zeros(eps.layers[i].shape())
                                  : t.grad(*eps_ids[i]));
    return g;
  };

  DiagFn diag = [&](const LatentStack& eps) {
    LatentStack z = transform(eps);
    Tensor e = energy_sum_rows(prior, z);
    for (double& v : e.raw()) v = -v;
    return std::make_pair(std::move(e), unnormalized_log_prior_rows(prior, z));
  };

  ChainRecord eps_record;
  LatentStack eps = langevin(grad, std::move(eps0), cfg, rng,
                             record ? &eps_record : nullptr,
                             record ? &diag : nullptr, &fixed);
  if (record) {
    record->energy = std::move(eps_record.energy);
    record->log_prior = std::move(eps_record.log_prior);
    record->snapshot_steps = eps_record.snapshot_steps;
    for (const LatentStack& s : eps_record.snapshots)
      record->snapshots.push_back(transform(s));
    record->diverged = eps_record.diverged;
  }
  return transform(eps);
}

LatentStack ancestral_sample(const JointEbmPrior& prior, std::size_t n, RngStream& rng) {
  LatentStack eps;
  for (std::size_t d : prior.dims) eps.layers.push_back(rng.normal_tensor({n, d}));
  return epsilon_transform(prior, eps);
}

DiagFn prior_diag(const JointEbmPrior& prior) {
  return [&prior](const LatentStack& z) {
    Tensor e = energy_sum_rows(prior, z);
    for (double& v : e.raw()) v = -v;
    return std::make_pair(std::move(e), unnormalized_log_prior_rows(prior, z));
  };
}

LatentStack sample_prior(const JointEbmPrior& prior, std::size_t n,
                         const LangevinConfig& cfg, RngStream& rng,
                         ChainRecord* record) {
  if (cfg.space == LangevinConfig::Space::Z) {
    LatentStack z0 = ancestral_sample(prior, n, rng);
    GradFn grad = [&prior](const LatentStack& z) { return grad_log_prior(prior, z); };
    DiagFn diag = prior_diag(prior);
    return langevin(grad, std::move(z0), cfg, rng, record, record ? &diag : nullptr);
  }
  // epsilon space: all layers free, no fixed values
  LatentStack eps0;
  for (std::size_t d : prior.dims) eps0.layers.push_back(rng.normal_tensor({n, d}));
  LatentStack none_fixed_z;
  none_fixed_z.layers.resize(prior.num_layers());
  std::vector<bool> fixed(prior.num_layers(), false);
  return conditional_epsilon_langevin(prior, none_fixed_z, fixed, std::move(eps0), cfg,
                                      rng, record);
}

GenerateResult generate(const GeneratorDecoder& dec, const JointEbmPrior& prior,
                        std::size_t n, const LangevinConfig& cfg, std::uint64_t seed,
                        bool with_noise) {
  GenerateResult res;
  res.means = Tensor::zeros({n, dec.net.spec.output_dim});
  if (n == 0) {
    res.z.layers.clear();
    return res;
  }
  RngStream rng = make_stream(seed, "generate");
  res.z = sample_prior(prior, n, cfg, rng);
  res.means = decode_mean_rows(dec, res.z.layers[0]);
  if (with_noise) {
    Tensor noisy = res.means;
    for (double& v : noisy.raw()) v += dec.observation_sigma * rng.normal();
    res.noisy = std::move(noisy);
  }
  return res;
}

void write_snapshot_csv(std::ostream& os, const ChainRecord& rec) {
  os << "chain,step,layer,coordinate,value\n";
  for (std::size_t s = 0; s < rec.snapshots.size(); ++s) {
    const LatentStack& z = rec.snapshots[s];
    for (std::size_t l = 0; l < z.num_layers(); ++l) {
      const Tensor& layer = z.layers[l];
      for (std::size_t c = 0; c < layer.rows(); ++c)
        for (std::size_t j = 0; j < layer.cols(); ++j)
          os << c << ',' << rec.snapshot_steps[s] << ',' << (l + 1) << ',' << j << ','
             << layer.at(c, j) << '\n';
    }
  }
}

void write_energy_csv(std::ostream& os, const ChainRecord& rec) {
  os << "chain,step,energy,log_prior\n";
  for (std::size_t s = 0; s < rec.energy.size(); ++s) {
    const Tensor& e = rec.energy[s];
    const Tensor& lp = rec.log_prior[s];
    for (std::size_t c = 0; c < e.rows(); ++c)
      os << c << ',' << s << ',' << e[c] << ',' << lp[c] << '\n';
  }
}

}  // namespace jebm

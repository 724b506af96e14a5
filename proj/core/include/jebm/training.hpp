#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <unordered_map>
#include <vector>

#include "jebm/model.hpp"
#include "jebm/rng.hpp"
#include "jebm/samplers.hpp"

namespace jebm {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam in ascent convention: parameters move along +gradient.
/// plain_sgd switches to p += lr * g (used by gradient-identity tests).
class Adam {
 public:
  AdamConfig cfg;
  bool plain_sgd = false;

  void step(std::span<Tensor* const> params, std::span<const Tensor> grads, double lr);

  struct State {
    Tensor m, v;
    std::int64_t t = 0;
  };
  /// State for a parameter (zeros/t=0 if never stepped). Used by checkpoints.
  State& state_for(Tensor* p);
  bool has_state(Tensor* p) const { return states_.count(p) > 0; }

 private:
  std::unordered_map<Tensor*, State> states_;
};

struct TrainerConfig {
  enum class Mode { Mle, Variational, TwoStage };
  Mode mode = Mode::Variational;
  std::size_t batch_size = 64;
  std::int64_t iterations = 1000;
  double lr_alpha = 1e-4;
  double lr_beta = 1e-4;
  double lr_omega = 1e-4;
  AdamConfig adam;
  LangevinConfig prior_sampler;                    // defaults: k=40, s=0.1
  LangevinConfig posterior_sampler{.steps = 20};   // MLE mode only
  std::size_t n_prior_chains = 0;                  // 0 => batch_size
  std::uint64_t seed = 0;
  std::int64_t checkpoint_every = 0;               // 0 => final only
  std::int64_t log_every = 10;
  std::int64_t stage1_iterations = 0;              // two-stage; 0 => iterations/2
  bool persistent_posterior_chains = false;
  bool detach_positive_path = false;
  bool plain_sgd = false;
  double energy_l2 = 0.0;

  void validate() const;
  std::size_t prior_chains() const {
    return n_prior_chains == 0 ? batch_size : n_prior_chains;
  }
};

/// Per-step Monte-Carlo gradient estimates plus scalar diagnostics.
struct GradEstimates {
  std::vector<Tensor> alpha, beta0, beta, omega;  // parameter-list order
  double recon = 0.0;        // mean negative log-likelihood
  double energy_pos = 0.0;   // mean -sum_i f_i at the positive-phase samples
  double energy_neg = 0.0;   // same at the prior samples
  double kl = 0.0;           // mean per-example KL estimate (variational mode)
  std::vector<double> kl_per_layer;
  double grad_norm_alpha = 0.0;
  double grad_norm_beta = 0.0;
};

struct StepMetrics {
  std::int64_t iter = 0;
  double recon = 0.0, energy_pos = 0.0, energy_neg = 0.0, kl = 0.0;
  double grad_norm_alpha = 0.0, grad_norm_beta = 0.0;
  double wall_ms = 0.0;
};

/// Runs the configured learning scheme against a Models bundle it does not
/// own. One prior chain per batch element unless n_prior_chains overrides.
class Trainer {
 public:
  Trainer(Models& models, TrainerConfig cfg);

  /// MLE step: posterior Langevin positive phase, prior Langevin negative
  /// phase, Adam ascent on (alpha, beta0, beta).
  GradEstimates mle_step(const Tensor& batch, RngStream& rng,
                         std::span<const std::size_t> indices = {});

  /// Joint-KL step: reparameterized positive phase from q, prior Langevin
  /// negative phase, Adam ascent on all groups. With train_alpha=false the
  /// step is a plain hierarchical-VAE ELBO step on (beta0, beta, omega):
  /// no prior sampling, no energy terms.
  GradEstimates variational_step(const Tensor& batch, RngStream& rng,
                                 bool train_alpha = true);

  /// Stage-2 step of the two-stage protocol: alpha only; positive phase
  /// from q samples, negative phase from epsilon-space prior Langevin.
  GradEstimates stage2_step(const Tensor& batch, RngStream& rng);

  /// Runs cfg.iterations steps over `data` ([N x d_x] rows), drawing batches
  /// uniformly with replacement. Invokes on_log every log_every iterations
  /// and on_checkpoint per checkpoint_every plus once at the end.
  void run(const Tensor& data,
           const std::function<void(const StepMetrics&)>& on_log = nullptr,
           const std::function<void(std::int64_t)>& on_checkpoint = nullptr);

  std::int64_t iteration() const { return iteration_; }
  void set_iteration(std::int64_t it) { iteration_ = it; }
  Adam& optimizer() { return adam_; }
  const TrainerConfig& config() const { return cfg_; }

 private:
  GradEstimates apply_updates(GradEstimates est, bool alpha, bool beta, bool omega);
  LatentStack sample_negative(std::size_t n, RngStream& rng, GradEstimates* est);

  Models& models_;
  TrainerConfig cfg_;
  Adam adam_;
  std::int64_t iteration_ = 0;
  std::unordered_map<std::size_t, LatentStack> persistent_chains_;
};

/// Two-stage protocol: stage 1 trains (beta, omega) with alpha frozen at
/// zero; stage 2 freezes (beta, omega) and trains alpha only.
void two_stage_fit(Models& models, const Tensor& data, const TrainerConfig& cfg,
                   const std::function<void(const StepMetrics&)>& on_log = nullptr);

}  // namespace jebm

#pragma once

#include <functional>
#include <optional>
#include <ostream>
#include <utility>
#include <vector>

#include "jebm/model.hpp"
#include "jebm/rng.hpp"
#include "jebm/tensor.hpp"

namespace jebm {

/// Thrown when a Langevin chain reaches a non-finite state or gradient.
/// Carries the last finite state and the index of the first bad chain.
struct DivergedChainError : std::runtime_error {
  DivergedChainError(std::string msg, LatentStack last, std::size_t chain, int step)
      : std::runtime_error(std::move(msg)),
        last_finite(std::move(last)),
        chain_index(chain),
        step_index(step) {}
  LatentStack last_finite;
  std::size_t chain_index;
  int step_index;
};

struct LangevinConfig {
  int steps = 40;
  double step_size = 0.1;
  bool noise_enabled = true;
  enum class Space { Z, Epsilon } space = Space::Z;
  std::optional<double> clamp_grad;  // max gradient norm per layer per chain
  int thin = 0;                      // snapshot every `thin` steps when > 0

  void validate() const;
};

/// Per-step diagnostics and thinned snapshots of a batch of chains.
/// With thin m and k steps the record holds floor(k/m)+1 snapshots
/// (steps 0, m, 2m, ...).
struct ChainRecord {
  std::vector<int> snapshot_steps;
  std::vector<LatentStack> snapshots;
  std::vector<Tensor> energy;     // per step, [n x 1]; energy = -sum_i f_i
  std::vector<Tensor> log_prior;  // per step, [n x 1] unnormalized log prior
  bool diverged = false;
};

using GradFn = std::function<LatentStack(const LatentStack&)>;
/// Returns (energy_rows, log_prior_rows) for recording.
using DiagFn = std::function<std::pair<Tensor, Tensor>(const LatentStack&)>;

/// Unadjusted Langevin: z <- z + s * grad + sqrt(2s) * eps, all layers
/// updated simultaneously. Layers flagged in `fixed` keep their values.
LatentStack langevin(const GradFn& grad, LatentStack z0, const LangevinConfig& cfg,
                     RngStream& rng, ChainRecord* record = nullptr,
                     const DiagFn* diag = nullptr,
                     const std::vector<bool>* fixed = nullptr);

/// grad_z [ sum_i f_i(z_i) + sum_i log p(z_i|z_{i+1}) + log p(z_L) ].
LatentStack grad_log_prior(const JointEbmPrior& prior, const LatentStack& z);

/// grad_z [ log p(x|z_1) + unnormalized log prior ].
LatentStack grad_log_posterior(const GeneratorDecoder& dec, const JointEbmPrior& prior,
                               const Tensor& x, const LatentStack& z);

/// Top-down reparameterization: z_L = eps_L, z_i = mu(z_{i+1}) + sigma * eps_i.
LatentStack epsilon_transform(const JointEbmPrior& prior, const LatentStack& eps);

/// Algebraic inverse of epsilon_transform.
LatentStack epsilon_inverse(const JointEbmPrior& prior, const LatentStack& z);

/// grad_eps [ f(T(eps)) + log N(eps; 0, I) ].
LatentStack grad_log_prior_eps(const JointEbmPrior& prior, const LatentStack& eps);

/// z-space Langevin on the prior updating only the non-fixed layers;
/// gradients flow through fixed values without moving them.
LatentStack conditional_prior_langevin(const JointEbmPrior& prior,
                                       const std::vector<bool>& fixed,
                                       LatentStack z_init, const LangevinConfig& cfg,
                                       RngStream& rng, ChainRecord* record = nullptr);

/// Epsilon-space Langevin over the non-fixed layers with the fixed layers
/// held at the values in z_fixed. Returns the transformed z stack (fixed
/// layers preserved exactly).
LatentStack conditional_epsilon_langevin(const JointEbmPrior& prior,
                                         const LatentStack& z_fixed,
                                         const std::vector<bool>& fixed,
                                         LatentStack eps0, const LangevinConfig& cfg,
                                         RngStream& rng, ChainRecord* record = nullptr);

/// Ancestral sample from the Gaussian backbone p_{beta>0} (alpha ignored):
/// epsilon_transform applied to standard-normal noise.
LatentStack ancestral_sample(const JointEbmPrior& prior, std::size_t n, RngStream& rng);

/// Short-run prior sampling: ancestral init, then Langevin in the configured
/// space targeting the joint EBM prior.
LatentStack sample_prior(const JointEbmPrior& prior, std::size_t n,
                         const LangevinConfig& cfg, RngStream& rng,
                         ChainRecord* record = nullptr);

/// Diagnostics function computing (energy, unnormalized log prior) rows.
DiagFn prior_diag(const JointEbmPrior& prior);

/// CSV export: columns (chain, step, layer, coordinate, value).
void write_snapshot_csv(std::ostream& os, const ChainRecord& rec);
/// CSV export: columns (chain, step, energy, log_prior).
void write_energy_csv(std::ostream& os, const ChainRecord& rec);

}  // namespace jebm

#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "jebm/mlp.hpp"
#include "jebm/rng.hpp"
#include "jebm/tape.hpp"
#include "jebm/tensor.hpp"

namespace jebm {

inline constexpr double kLogVarClampLo = -8.0;
inline constexpr double kLogVarClampHi = 8.0;

/// Conditional Gaussian p(z_i | z_{i+1}): one trunk MLP mapping the parent
/// layer to 2*dim(z_i), split into (mean, log_var). log_var is clamped to
/// [-8, 8] before use.
struct ConditionalGaussianLayer {
  std::size_t index = 1;  // i in 1..L-1, bottom-up
  Mlp trunk;

  std::size_t child_dim() const { return trunk.spec.output_dim / 2; }

  /// Taped (mean, log_var) given the parent layer id.
  std::pair<Tape::Id, Tape::Id> mean_log_var(ParamBinding& params,
                                             Tape::Id parent) const;
};

/// Layer-wise energy f_{alpha_i}(z_i); the negative output is the energy.
struct EnergyHead {
  std::size_t index = 1;  // i in 1..L
  Mlp net;                // z_i -> 1

  Tape::Id value_rows(ParamBinding& params, Tape::Id z) const {
    return net.forward(params, z);  // [n x 1]
  }
};

/// Joint EBM prior over the whole latent stack:
///   p(z) = (1/Z) exp[sum_i f_{alpha_i}(z_i)] prod_i p_{beta_i}(z_i|z_{i+1}) p(z_L)
/// with a standard-normal top layer. Z is never computed here; only test
/// oracles estimate it.
struct JointEbmPrior {
  std::vector<std::size_t> dims;                 // dims[i] = dim of layer i+1
  std::vector<ConditionalGaussianLayer> layers;  // size L-1; layers[i]: z_{i+2} -> z_{i+1}
  std::vector<EnergyHead> energies;              // size L

  std::size_t num_layers() const { return dims.size(); }
  void check_stack(const LatentStack& z) const;

  /// log p(z_L) + sum_i log p_{beta_i}(z_i|z_{i+1}), per example [n x 1].
  Tape::Id gaussian_logpdf_rows(ParamBinding& params,
                                const std::vector<Tape::Id>& z) const;
  /// sum_i f_{alpha_i}(z_i), per example [n x 1].
  Tape::Id energy_sum_rows(ParamBinding& params,
                           const std::vector<Tape::Id>& z) const;
  /// energy_sum + gaussian_logpdf, per example [n x 1].
  Tape::Id unnormalized_log_prior_rows(ParamBinding& params,
                                       const std::vector<Tape::Id>& z) const;

  std::vector<Tensor*> alpha_parameters();
  std::vector<Tensor*> beta_parameters();
};

/// Eager per-example evaluations (non-recording tape underneath, so values
/// are bit-identical to the taped path).
Tensor gaussian_prior_logpdf_rows(const JointEbmPrior& prior, const LatentStack& z);
Tensor energy_sum_rows(const JointEbmPrior& prior, const LatentStack& z);
Tensor unnormalized_log_prior_rows(const JointEbmPrior& prior, const LatentStack& z);

/// Scalar conveniences summing over the batch.
double gaussian_prior_logpdf(const JointEbmPrior& prior, const LatentStack& z);
double energy_sum(const JointEbmPrior& prior, const LatentStack& z);
double unnormalized_log_prior(const JointEbmPrior& prior, const LatentStack& z);

/// Generation model p(x|z_1) = N(g(z_1), sigma^2 I) with pre-specified sigma.
struct GeneratorDecoder {
  Mlp net;  // z_1 -> x
  double observation_sigma = 0.3;

  Tape::Id mean_rows(ParamBinding& params, Tape::Id z1) const {
    return net.forward(params, z1);
  }
  /// Per-example Gaussian log-likelihood [n x 1] given taped x and z_1.
  Tape::Id log_likelihood_rows(ParamBinding& params, Tape::Id x, Tape::Id z1) const;

  std::vector<Tensor*> parameters() { return net.parameters(); }
};

Tensor decode_mean_rows(const GeneratorDecoder& dec, const Tensor& z1);
Tensor decode_log_likelihood_rows(const GeneratorDecoder& dec, const Tensor& x,
                                  const Tensor& z1);
double decode_log_likelihood(const GeneratorDecoder& dec, const Tensor& x,
                             const Tensor& z1);

/// Bottom-up amortized posterior q(z|x) = q(z_1|x) prod q(z_{i+1}|z_i).
/// heads[0] maps x -> 2*d_1; heads[i] maps z_i -> 2*d_{i+1}.
struct InferenceStack {
  std::vector<Mlp> heads;

  std::size_t num_layers() const { return heads.size(); }
  std::pair<Tape::Id, Tape::Id> head_mean_log_var(ParamBinding& params,
                                                  std::size_t i,
                                                  Tape::Id input) const;
  std::vector<Tensor*> parameters();
};

struct InferResult {
  LatentStack z;                 // reparameterized sample
  std::vector<Tensor> means;     // per layer [n x d_i]
  std::vector<Tensor> log_vars;  // clamped
  Tensor log_q_rows;             // [n x 1], log q(z|x) at the sample
};

/// Ancestral reparameterized sampling bottom-up. With noise=false the sample
/// is the chained mean path.
InferResult infer(const InferenceStack& enc, const Tensor& x, RngStream& rng,
                  bool noise = true);

struct ModelConfig {
  std::vector<std::size_t> latent_dims = {2, 2};  // bottom to top
  std::size_t data_dim = 2;
  std::vector<std::size_t> energy_hidden = {100, 100};
  std::vector<std::size_t> conditional_hidden = {200, 200, 200};
  std::vector<std::size_t> decoder_hidden = {128, 128};
  std::vector<std::size_t> inference_hidden = {128, 128};
  double observation_sigma = 0.3;
  double lrelu_slope = 0.2;
  bool decoder_tanh = false;
  double energy_weight_std = 0.02;
  std::string dtype = "f64";  // checkpoint storage width

  void validate() const;
};

struct Models {
  ModelConfig config;
  JointEbmPrior prior;
  GeneratorDecoder decoder;
  InferenceStack inference;
};

Models build_models(const ModelConfig& cfg, std::uint64_t seed);

// Implemented with the samplers module (prior sampling draws z via Langevin).
struct LangevinConfig;
struct GenerateResult {
  Tensor means;                        // [n x d_x] decoder means
  std::optional<Tensor> noisy;         // means + sigma * noise when requested
  LatentStack z;
};
GenerateResult generate(const GeneratorDecoder& dec, const JointEbmPrior& prior,
                        std::size_t n, const LangevinConfig& cfg,
                        std::uint64_t seed, bool with_noise = false);

}  // namespace jebm

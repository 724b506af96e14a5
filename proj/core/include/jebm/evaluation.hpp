#pragma once

#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "jebm/model.hpp"
#include "jebm/samplers.hpp"

namespace jebm {

/// Thrown on invalid arguments to evaluation entry points (k out of range,
/// empty score sets, missing labels).
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct OodScore {
  std::size_t k = 0;      // layer cutoff; 0 = no prior-resampled layers
  double value = 0.0;
  std::size_t n_mc = 1;
};

struct DetectionReport {
  double auroc = 0.0;
  double auprc = 0.0;
  double fpr80 = 0.0;
  std::string positive_class;  // "in-distribution" (OOD) or "anomaly" (AD)
  std::vector<double> hist_edges;
  std::vector<std::size_t> hist_pos, hist_neg;
};

/// AUROC = P(pos > neg) + 1/2 P(pos = neg), computed by rank statistic.
double auroc(std::span<const double> pos_scores, std::span<const double> neg_scores);
/// Average precision via precision-recall step integration.
double auprc(std::span<const double> pos_scores, std::span<const double> neg_scores);
/// False-positive rate at the first threshold reaching TPR >= 0.80
/// (ties broken toward lower FPR).
double fpr80(std::span<const double> pos_scores, std::span<const double> neg_scores);

DetectionReport make_report(std::span<const double> pos_scores,
                            std::span<const double> neg_scores,
                            std::string positive_class, std::size_t bins = 30);
void write_report_json(std::ostream& os, const DetectionReport& report);

struct ScoringConfig {
  std::size_t n_mc = 4;
  LangevinConfig sampler;            // conditional epsilon-space resampling
  bool sampled_inference = false;    // default: posterior mean path
  std::size_t threads = 1;
};

/// L^{>k}: infer the full stack from q, hold layers above k fixed, resample
/// layers <= k from the conditional EBM prior, and average
/// log p(x|z) + log p_{beta>0}(z) + sum_i f_i(z_i) over n_mc replicates.
/// Scores a whole batch; replicate noise is seeded per example so the result
/// is independent of the thread count.
std::vector<double> ood_scores(const Models& models, const Tensor& x, std::size_t k,
                               const ScoringConfig& cfg, std::uint64_t seed);

OodScore ood_score(const Models& models, const Tensor& x_row, std::size_t k,
                   const ScoringConfig& cfg, std::uint64_t seed);

/// LLR^{>k} = L^{>0} - L^{>k}, sharing the inferred codes across both terms.
std::vector<double> llr_scores(const Models& models, const Tensor& x, std::size_t k,
                               const ScoringConfig& cfg, std::uint64_t seed);

/// L^{>0}; higher = more normal.
double anomaly_score(const Models& models, const Tensor& x_row,
                     const ScoringConfig& cfg, std::uint64_t seed);
std::vector<double> anomaly_scores(const Models& models, const Tensor& x,
                                   const ScoringConfig& cfg, std::uint64_t seed);

/// Redraws the selected layers of base_z via conditional prior Langevin and
/// decodes each variant. base_z must have batch 1.
Tensor hierarchical_sample(const Models& models, const LatentStack& base_z,
                           const std::vector<bool>& resample_layers,
                           std::size_t n_variants, const LangevinConfig& cfg,
                           RngStream& rng);

/// Infer, resample layers <= k from the conditional prior, decode.
Tensor hierarchical_reconstruct(const Models& models, const Tensor& x, std::size_t k,
                                const LangevinConfig& cfg, RngStream& rng);

/// Long-run prior chain: k_long steps with per-step energy (-sum f) and
/// unnormalized log-prior traces; trace length is k_long + 1.
ChainRecord energy_profile(const Models& models, int k_long, const LangevinConfig& cfg,
                           RngStream& rng, std::size_t n_chains = 1);

/// CSV export: columns (id, label, k, score, score_type).
void write_scores_csv(std::ostream& os, std::span<const double> scores,
                      std::span<const std::uint32_t> labels, std::size_t k,
                      const std::string& score_type, std::size_t id_offset = 0);

}  // namespace jebm

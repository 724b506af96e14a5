#include "jebm/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <mutex>
#include <thread>

#include <nlohmann/json.hpp>

namespace jebm {

namespace {

Tensor repeat_rows(const Tensor& row, std::size_t m) {
  std::size_t d = row.cols();
  Tensor out = Tensor::zeros({m, d});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < d; ++j) out.at(i, j) = row.at(0, j);
  return out;
}

LatentStack repeat_stack(const LatentStack& s, std::size_t m) {
  LatentStack out;
  out.layers.reserve(s.num_layers());
  for (const auto& l : s.layers) out.layers.push_back(repeat_rows(l, m));
  return out;
}

double mean_rows(const Tensor& rows) {
  double acc = 0.0;
  for (double v : rows.data()) acc += v;
  return acc / static_cast<double>(rows.rows());
}

void parallel_for(std::size_t n, std::size_t threads,
                  const std::function<void(std::size_t)>& fn) {
  if (threads <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::size_t workers = std::min(threads, n);
  std::vector<std::thread> pool;
  pool.reserve(workers);
  std::exception_ptr err;
  std::mutex err_mu;
  for (std::size_t w = 0; w < workers; ++w)
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < n; i += workers) fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(err_mu);
        if (!err) err = std::current_exception();
      }
    });
  for (auto& t : pool) t.join();
  if (err) std::rethrow_exception(err);
}

/// log p(x|z_1) + unnormalized log prior, per row.
Tensor joint_rows(const Models& m, const Tensor& x, const LatentStack& z) {
  Tensor ll = decode_log_likelihood_rows(m.decoder, x, z.layers[0]);
  Tensor lp = unnormalized_log_prior_rows(m.prior, z);
  for (std::size_t i = 0; i < ll.size(); ++i) ll[i] += lp[i];
  return ll;
}

/// Resamples layers <= k of the inferred stack (batch 1) from the
/// conditional EBM prior and averages the joint density over n_mc chains.
double resampled_score(const Models& m, const Tensor& x_row, const LatentStack& z,
                       std::size_t k, const ScoringConfig& cfg, RngStream& rng) {
  std::size_t num_l = m.prior.num_layers();
  if (k == 0) {
    return joint_rows(m, x_row, z).item();
  }
  std::vector<bool> fixed(num_l);
  for (std::size_t j = 0; j < num_l; ++j) fixed[j] = j >= k;
  LatentStack z_fixed = repeat_stack(z, cfg.n_mc);
  LatentStack eps0;
  for (std::size_t j = 0; j < num_l; ++j) {
    if (fixed[j])
      eps0.layers.push_back(Tensor::zeros({cfg.n_mc, m.prior.dims[j]}));
    else
      eps0.layers.push_back(rng.normal_tensor({cfg.n_mc, m.prior.dims[j]}));
  }
  LatentStack z_new =
      conditional_epsilon_langevin(m.prior, z_fixed, fixed, std::move(eps0),
                                   cfg.sampler, rng);
  Tensor x_rep = repeat_rows(x_row, cfg.n_mc);
  return mean_rows(joint_rows(m, x_rep, z_new));
}

Tensor row_of(const Tensor& x, std::size_t i) {
  std::size_t d = x.cols();
  std::vector<double> v(d);
  for (std::size_t j = 0; j < d; ++j) v[j] = x.at(i, j);
  return Tensor::row(std::move(v));
}

void check_args(const Models& m, const Tensor& x, std::size_t k) {
  if (x.rows() == 0) throw UsageError("evaluation: empty input batch");
  if (k > m.prior.num_layers())
    throw UsageError("evaluation: k exceeds the number of latent layers");
}

}  // namespace

double auroc(std::span<const double> pos_scores, std::span<const double> neg_scores) {
  if (pos_scores.empty() || neg_scores.empty())
    throw UsageError("auroc: both score sets must be non-empty");
  std::vector<double> neg(neg_scores.begin(), neg_scores.end());
  std::sort(neg.begin(), neg.end());
  double acc = 0.0;
  for (double p : pos_scores) {
    auto lo = std::lower_bound(neg.begin(), neg.end(), p);
    auto hi = std::upper_bound(lo, neg.end(), p);
    acc += static_cast<double>(lo - neg.begin()) + 0.5 * static_cast<double>(hi - lo);
  }
  return acc / (static_cast<double>(pos_scores.size()) *
                static_cast<double>(neg_scores.size()));
}

namespace {

/// Descending unique thresholds with (positives, negatives) counted per group.
struct ThresholdGroups {
  std::vector<std::size_t> tp_in_group, fp_in_group;
};

ThresholdGroups threshold_groups(std::span<const double> pos, std::span<const double> neg) {
  std::vector<std::pair<double, bool>> all;
  all.reserve(pos.size() + neg.size());
  for (double v : pos) all.emplace_back(v, true);
  for (double v : neg) all.emplace_back(v, false);
  std::sort(all.begin(), all.end(),
            [](const auto& a, const auto& b) { return a.first > b.first; });
  ThresholdGroups g;
  std::size_t i = 0;
  while (i < all.size()) {
    std::size_t tp = 0, fp = 0;
    double v = all[i].first;
    for (; i < all.size() && all[i].first == v; ++i) (all[i].second ? tp : fp) += 1;
    g.tp_in_group.push_back(tp);
    g.fp_in_group.push_back(fp);
  }
  return g;
}

}  // namespace

double auprc(std::span<const double> pos_scores, std::span<const double> neg_scores) {
  if (pos_scores.empty() || neg_scores.empty())
    throw UsageError("auprc: both score sets must be non-empty");
  ThresholdGroups g = threshold_groups(pos_scores, neg_scores);
  double total_pos = static_cast<double>(pos_scores.size());
  std::size_t tp = 0, fp = 0;
  double ap = 0.0;
  for (std::size_t i = 0; i < g.tp_in_group.size(); ++i) {
    tp += g.tp_in_group[i];
    fp += g.fp_in_group[i];
    if (g.tp_in_group[i] > 0) {
      double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
      ap += (static_cast<double>(g.tp_in_group[i]) / total_pos) * precision;
    }
  }
  return ap;
}

double fpr80(std::span<const double> pos_scores, std::span<const double> neg_scores) {
  if (pos_scores.empty() || neg_scores.empty())
    throw UsageError("fpr80: both score sets must be non-empty");
  ThresholdGroups g = threshold_groups(pos_scores, neg_scores);
  double total_pos = static_cast<double>(pos_scores.size());
  double total_neg = static_cast<double>(neg_scores.size());
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < g.tp_in_group.size(); ++i) {
    tp += g.tp_in_group[i];
    fp += g.fp_in_group[i];
    if (static_cast<double>(tp) / total_pos >= 0.80)
      return static_cast<double>(fp) / total_neg;
  }
  return 1.0;
}

DetectionReport make_report(std::span<const double> pos_scores,
                            std::span<const double> neg_scores,
                            std::string positive_class, std::size_t bins) {
  DetectionReport r;
  r.auroc = auroc(pos_scores, neg_scores);
  r.auprc = auprc(pos_scores, neg_scores);
  r.fpr80 = fpr80(pos_scores, neg_scores);
  r.positive_class = std::move(positive_class);

  double lo = pos_scores[0], hi = pos_scores[0];
  for (double v : pos_scores) lo = std::min(lo, v), hi = std::max(hi, v);
  for (double v : neg_scores) lo = std::min(lo, v), hi = std::max(hi, v);
  if (lo == hi) {
    lo -= 0.5;
    hi += 0.5;
  }
  r.hist_edges.resize(bins + 1);
  for (std::size_t i = 0; i <= bins; ++i)
    r.hist_edges[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(bins);
  r.hist_pos.assign(bins, 0);
  r.hist_neg.assign(bins, 0);
  auto bin_of = [&](double v) {
    auto b = static_cast<std::size_t>((v - lo) / (hi - lo) * static_cast<double>(bins));
    return std::min(b, bins - 1);
  };
  for (double v : pos_scores) r.hist_pos[bin_of(v)] += 1;
  for (double v : neg_scores) r.hist_neg[bin_of(v)] += 1;
  return r;
}

void write_report_json(std::ostream& os, const DetectionReport& report) {
  nlohmann::json j;
  j["auroc"] = report.auroc;
  j["auprc"] = report.auprc;
  j["fpr80"] = report.fpr80;
  j["positive_class"] = report.positive_class;
  j["histogram"]["edges"] = report.hist_edges;
  j["histogram"]["positive"] = report.hist_pos;
  j["histogram"]["negative"] = report.hist_neg;
  os << j.dump(2) << '\n';
}

std::vector<double> ood_scores(const Models& models, const Tensor& x, std::size_t k,
                               const ScoringConfig& cfg, std::uint64_t seed) {
  check_args(models, x, k);
  std::vector<double> out(x.rows());
  parallel_for(x.rows(), cfg.threads, [&](std::size_t i) {
    Tensor xi = row_of(x, i);
    RngStream infer_rng = make_stream(seed, "eval/infer", i);
    InferResult q = infer(models.inference, xi, infer_rng, cfg.sampled_inference);
    RngStream rng = make_stream(seed, "eval/resample", i);
    out[i] = resampled_score(models, xi, q.z, k, cfg, rng);
  });
  return out;
}

OodScore ood_score(const Models& models, const Tensor& x_row, std::size_t k,
                   const ScoringConfig& cfg, std::uint64_t seed) {
  if (x_row.rows() != 1) throw UsageError("ood_score: expected a single row");
  return OodScore{k, ood_scores(models, x_row, k, cfg, seed)[0], cfg.n_mc};
}

std::vector<double> llr_scores(const Models& models, const Tensor& x, std::size_t k,
                               const ScoringConfig& cfg, std::uint64_t seed) {
  check_args(models, x, k);
  std::vector<double> out(x.rows());
  if (k == 0) return out;  // L>0 minus itself

  parallel_for(x.rows(), cfg.threads, [&](std::size_t i) {
    Tensor xi = row_of(x, i);
    RngStream infer_rng = make_stream(seed, "eval/infer", i);
    InferResult q = infer(models.inference, xi, infer_rng, cfg.sampled_inference);
    RngStream rng = make_stream(seed, "eval/resample", i);
    double base = resampled_score(models, xi, q.z, 0, cfg, rng);
    out[i] = base - resampled_score(models, xi, q.z, k, cfg, rng);
  });
  return out;
}

double anomaly_score(const Models& models, const Tensor& x_row,
                     const ScoringConfig& cfg, std::uint64_t seed) {
  return ood_score(models, x_row, 0, cfg, seed).value;
}

std::vector<double> anomaly_scores(const Models& models, const Tensor& x,
                                   const ScoringConfig& cfg, std::uint64_t seed) {
  return ood_scores(models, x, 0, cfg, seed);
}

namespace {

/// Conditional resample of the non-fixed layers of a replicated stack.
LatentStack resample_layers(const Models& m, const LatentStack& z_rep,
                            const std::vector<bool>& fixed, const LangevinConfig& cfg,
                            RngStream& rng) {
  std::size_t n = z_rep.batch();
  LatentStack eps0;
  for (std::size_t j = 0; j < m.prior.num_layers(); ++j) {
    if (fixed[j])
      eps0.layers.push_back(Tensor::zeros({n, m.prior.dims[j]}));
    else
      eps0.layers.push_back(rng.normal_tensor({n, m.prior.dims[j]}));
  }
  if (cfg.space == LangevinConfig::Space::Epsilon)
    return conditional_epsilon_langevin(m.prior, z_rep, fixed, std::move(eps0), cfg, rng);
  // z-space: conditional ancestral init, then z-space dynamics.
  LangevinConfig init_cfg = cfg;
  init_cfg.steps = 0;
  LatentStack z0 =
      conditional_epsilon_langevin(m.prior, z_rep, fixed, std::move(eps0), init_cfg, rng);
  return conditional_prior_langevin(m.prior, fixed, std::move(z0), cfg, rng);
}

}  // namespace

Tensor hierarchical_sample(const Models& models, const LatentStack& base_z,
                           const std::vector<bool>& resample_layers_mask,
                           std::size_t n_variants, const LangevinConfig& cfg,
                           RngStream& rng) {
  if (base_z.batch() != 1)
    throw UsageError("hierarchical_sample: base_z must have batch 1");
  if (resample_layers_mask.size() != models.prior.num_layers())
    throw UsageError("hierarchical_sample: mask size != number of layers");
  if (n_variants == 0) throw UsageError("hierarchical_sample: n_variants must be >= 1");
  models.prior.check_stack(base_z);
  LatentStack z_rep = repeat_stack(base_z, n_variants);
  bool any = false;
  for (bool b : resample_layers_mask) any = any || b;
  if (any) {
    std::vector<bool> fixed(resample_layers_mask.size());
    for (std::size_t j = 0; j < fixed.size(); ++j) fixed[j] = !resample_layers_mask[j];
    z_rep = resample_layers(models, z_rep, fixed, cfg, rng);
  }
  return decode_mean_rows(models.decoder, z_rep.layers[0]);
}

Tensor hierarchical_reconstruct(const Models& models, const Tensor& x, std::size_t k,
                                const LangevinConfig& cfg, RngStream& rng) {
  check_args(models, x, k);
  InferResult q = infer(models.inference, x, rng, /*noise=*/false);
  LatentStack z = q.z;
  if (k > 0) {
    std::vector<bool> fixed(models.prior.num_layers());
    for (std::size_t j = 0; j < fixed.size(); ++j) fixed[j] = j >= k;
    z = resample_layers(models, z, fixed, cfg, rng);
  }
  return decode_mean_rows(models.decoder, z.layers[0]);
}

ChainRecord energy_profile(const Models& models, int k_long, const LangevinConfig& cfg,
                           RngStream& rng, std::size_t n_chains) {
  if (k_long < 0) throw UsageError("energy_profile: k_long must be >= 0");
  LangevinConfig run_cfg = cfg;
  run_cfg.steps = k_long;
  ChainRecord rec;
  sample_prior(models.prior, n_chains, run_cfg, rng, &rec);
  return rec;
}

void write_scores_csv(std::ostream& os, std::span<const double> scores,
                      std::span<const std::uint32_t> labels, std::size_t k,
                      const std::string& score_type, std::size_t id_offset) {
  os << "id,label,k,score,score_type\n";
  os.precision(17);
  for (std::size_t i = 0; i < scores.size(); ++i) {
    os << (id_offset + i) << ',';
    if (i < labels.size()) os << labels[i];
    os << ',' << k << ',' << scores[i] << ',' << score_type << '\n';
  }
}

}  // namespace jebm

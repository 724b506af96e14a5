#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "jebm/model.hpp"
#include "jebm/rng.hpp"
#include "jebm/tensor.hpp"

namespace jebm {

// Independent reference computations used by the test suite and the
// gradcheck subcommand. Nothing here is used on any training path.

/// Central finite differences of a scalar function of a tensor.
Tensor fd_gradient(const std::function<double(const Tensor&)>& f, Tensor x,
                   double h = 1e-5);

/// max_i |a_i - b_i| / max(|a_i|, |b_i|, floor).
double max_rel_err(const Tensor& a, const Tensor& b, double floor = 1e-6);

struct GridSpec {
  double lo = -8.0;
  double hi = 8.0;
  std::size_t points = 2001;

  double step() const { return (hi - lo) / static_cast<double>(points - 1); }
  double node(std::size_t i) const { return lo + step() * static_cast<double>(i); }
  /// Trapezoid weight of node i.
  double weight(std::size_t i) const {
    return (i == 0 || i + 1 == points) ? step() / 2.0 : step();
  }
};

/// log of the 1-D trapezoid integral of exp(log_f) over the grid.
double quad1_log_integral(const GridSpec& g,
                          const std::function<double(double)>& log_f);

/// Tensor-product trapezoid over (z_1, z_2) for L=2, dims (1,1) models.
/// log_rows maps a 2-layer stack of [c x 1] chunks to [c x 1] log-values.
double quad2_log_integral(
    const GridSpec& g,
    const std::function<Tensor(const LatentStack&)>& log_rows);

/// E[value | density ∝ exp(log_rows)] over the same grid.
double quad2_expectation(
    const GridSpec& g, const std::function<Tensor(const LatentStack&)>& log_rows,
    const std::function<Tensor(const LatentStack&)>& value_rows);

/// log Z_{alpha,beta>0} for an L=2, dims (1,1) prior.
double quad_log_z(const JointEbmPrior& prior, const GridSpec& g);

/// log of int exp(log p(x|z_1) + unnormalized log prior) dz; subtracting
/// quad_log_z gives log p_theta(x).
double quad_log_joint(const Models& m, const Tensor& x_row, const GridSpec& g);
double quad_log_marginal(const Models& m, const Tensor& x_row, const GridSpec& g);

/// Per-example log q(z|x) for an arbitrary stack (not a sample from q):
/// evaluates the bottom-up conditional densities at the given values.
Tensor log_q_rows_at(const InferenceStack& enc, const Tensor& x,
                     const LatentStack& z);

/// Self-normalized importance sampling against the Gaussian backbone
/// proposal. log_weight_rows and value_rows are evaluated on ancestral
/// proposal draws; returns sum w_i v_i / sum w_i over n samples.
double importance_expectation(
    const JointEbmPrior& prior, std::size_t n, RngStream& rng,
    const std::function<Tensor(const LatentStack&)>& log_weight_rows,
    const std::function<Tensor(const LatentStack&)>& value_rows,
    std::size_t chunk = 4096);

/// Taped per-example rows built against a parameter binding, e.g. the energy
/// sum or the backbone log-density.
using TapedRows =
    std::function<Tape::Id(ParamBinding&, const std::vector<Tape::Id>&)>;

/// Importance-sampled gradient of E_target[rows] w.r.t. one parameter
/// tensor, with target ∝ backbone * exp(log_weight_rows).
Tensor importance_param_grad(
    const JointEbmPrior& prior, std::size_t n, RngStream& rng,
    const std::function<Tensor(const LatentStack&)>& log_weight_rows,
    const TapedRows& rows, const Tensor& param, std::size_t chunk = 4096);

struct KMeansResult {
  std::vector<std::size_t> labels;
  std::vector<std::vector<double>> centers;
};

/// 2-means with deterministic farthest-point init.
KMeansResult two_means(const Tensor& points, int iters = 100);

/// Mean silhouette coefficient of a 2-way labeling.
double mean_silhouette(const Tensor& points, const std::vector<std::size_t>& labels);

/// Coverage of the given mode centers: sum over modes of
/// min(assigned fraction, 1/M), counting points within `radius` of their
/// nearest center. 1.0 means perfectly balanced coverage.
double mode_coverage(const Tensor& samples,
                     const std::vector<std::vector<double>>& centers, double radius);

/// Slope of the least-squares line through (0, y_0), (1, y_1), ...
double least_squares_slope(std::span<const double> y);

struct OracleReport {
  std::string name;
  double err = 0.0;
  double tol = 0.0;
  bool pass = false;
};

/// Finite-difference suite over a randomly initialized model of the given
/// latent dims; with dims == {1,1} the quadrature identity for the MLE
/// learning gradient runs as well. corrupt injects a deliberate error so the
/// failure path is testable.
std::vector<OracleReport> run_gradcheck(const std::vector<std::size_t>& dims,
                                        std::uint64_t seed, bool corrupt = false);

}  // namespace jebm

#include <doctest/doctest.h>

#include <cmath>
#include <cstring>
#include <sstream>
#include <vector>

#include "jebm/evaluation.hpp"
#include "jebm/model.hpp"
#include "jebm/oracles.hpp"
#include "jebm/rng.hpp"

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

Models random_tilted_model(std::vector<std::size_t> dims, std::size_t data_dim,
                           std::uint64_t seed) {
  Models m = build_models(tiny_config(std::move(dims), data_dim), seed);
  auto rng = make_stream(seed, "test/tilt");
  for (auto& head : m.prior.energies) {
    for (double& v : head.net.weights.back().raw()) v += 0.05 * rng.normal();
    for (double& v : head.net.biases.back().raw()) v += 0.05 * rng.normal();
  }
  return m;
}

}  // namespace

TEST_CASE("auroc: separation, ties, and a brute-force pair count") {
  std::vector<double> pos = {2.0, 3.0, 4.0};
  std::vector<double> neg = {0.0, 0.5, 1.0};
  CHECK(auroc(pos, neg) == 1.0);
  CHECK(auroc(neg, pos) == 0.0);
  CHECK(auroc(pos, pos) == 0.5);

  auto rng = make_stream(1, "test/auroc");
  std::vector<double> p(37), n(41);
  for (double& v : p) v = std::floor(rng.uniform() * 10.0);
  for (double& v : n) v = std::floor(rng.uniform() * 10.0);
  double brute = 0.0;
  for (double a : p)
    for (double b : n) brute += a > b ? 1.0 : (a == b ? 0.5 : 0.0);
  brute /= static_cast<double>(p.size() * n.size());
  CHECK(auroc(p, n) == doctest::Approx(brute).epsilon(1e-12));
}

TEST_CASE("auprc reference values") {
  CHECK(auprc(std::vector<double>{3.0}, std::vector<double>{1.0, 2.0}) ==
        doctest::Approx(1.0));
  // The single positive is ranked last: found at recall 1 with precision 1/3.
  CHECK(auprc(std::vector<double>{1.0}, std::vector<double>{2.0, 3.0}) ==
        doctest::Approx(1.0 / 3.0));
  // Alternating ranks pos 4 > neg 3 > pos 2 > neg 1:
  // AP = 1/2 * 1 + 1/2 * 2/3 = 5/6.
  CHECK(auprc(std::vector<double>{4.0, 2.0}, std::vector<double>{3.0, 1.0}) ==
        doctest::Approx(5.0 / 6.0));
}

TEST_CASE("fpr80: perfect separation and full overlap") {
  std::vector<double> pos = {5.0, 6.0, 7.0, 8.0, 9.0};
  std::vector<double> neg = {0.0, 1.0, 2.0, 3.0, 4.0};
  CHECK(fpr80(pos, neg) == 0.0);
  // Identical score sets: the threshold reaching TPR 0.8 admits the same
  // fraction of negatives.
  CHECK(fpr80(pos, pos) == 0.8);
  // Four positives above all negatives reach TPR 0.8 with zero FPs.
  std::vector<double> pos2 = {1.5, 5.0, 6.0, 7.0, 8.0};
  CHECK(fpr80(pos2, neg) == 0.0);
}

TEST_CASE("metrics are invariant under strictly increasing transforms") {
  auto rng = make_stream(2, "test/mono");
  std::vector<double> p(50), n(60);
  for (double& v : p) v = rng.normal() + 0.5;
  for (double& v : n) v = rng.normal();
  auto f = [](double v) { return std::tanh(v) * 3.0 + v / 7.0; };
  std::vector<double> pf = p, nf = n;
  for (double& v : pf) v = f(v);
  for (double& v : nf) v = f(v);
  CHECK(auroc(p, n) == doctest::Approx(auroc(pf, nf)).epsilon(1e-12));
  CHECK(auprc(p, n) == doctest::Approx(auprc(pf, nf)).epsilon(1e-12));
  CHECK(fpr80(p, n) == doctest::Approx(fpr80(pf, nf)).epsilon(1e-12));
}

TEST_CASE("empty score sets are rejected") {
  std::vector<double> some = {1.0};
  std::vector<double> none;
  CHECK_THROWS_AS(auroc(none, some), UsageError);
  CHECK_THROWS_AS(auprc(some, none), UsageError);
  CHECK_THROWS_AS(fpr80(none, none), UsageError);
}

TEST_CASE("detection report: histograms count every score") {
  auto rng = make_stream(3, "test/report");
  std::vector<double> p(30), n(40);
  for (double& v : p) v = rng.normal() + 1.0;
  for (double& v : n) v = rng.normal();
  DetectionReport rep = make_report(p, n, "in-distribution");
  CHECK(rep.positive_class == "in-distribution");
  CHECK(rep.auroc == doctest::Approx(auroc(p, n)));
  CHECK(rep.hist_edges.size() == rep.hist_pos.size() + 1);
  std::size_t tot_p = 0, tot_n = 0;
  for (auto c : rep.hist_pos) tot_p += c;
  for (auto c : rep.hist_neg) tot_n += c;
  CHECK(tot_p == p.size());
  CHECK(tot_n == n.size());

  std::ostringstream os;
  write_report_json(os, rep);
  CHECK(os.str().find("auroc") != std::string::npos);
}

TEST_CASE("LLR at k = 0 is identically zero") {
  Models m = random_tilted_model({1, 1}, 1, 11);
  auto rng = make_stream(4, "test/llr0");
  Tensor x = rng.normal_tensor({5, 1});
  ScoringConfig cfg;
  cfg.sampler.steps = 5;
  std::vector<double> s = llr_scores(m, x, 0, cfg, 77);
  REQUIRE(s.size() == 5);
  for (double v : s) CHECK(v == 0.0);
}

TEST_CASE("a constant energy offset shifts L>k by L*c and cancels in LLR") {
  // Adding c to each head's final bias moves every f_i by exactly c without
  // touching any gradient, so the resampling chains are unchanged and the
  // decision function shifts deterministically.
  Models m = random_tilted_model({1, 1}, 1, 13);
  auto rng = make_stream(5, "test/shift");
  Tensor x = rng.normal_tensor({4, 1});
  ScoringConfig cfg;
  cfg.sampler.steps = 8;

  double c = 0.37;
  Models shifted = m;
  for (auto& head : shifted.prior.energies)
    for (double& v : head.net.biases.back().raw()) v += c;

  for (std::size_t k : {std::size_t{0}, std::size_t{1}, std::size_t{2}}) {
    std::vector<double> base = ood_scores(m, x, k, cfg, 42);
    std::vector<double> moved = ood_scores(shifted, x, k, cfg, 42);
    for (std::size_t i = 0; i < base.size(); ++i)
      CHECK(moved[i] == doctest::Approx(base[i] + 2.0 * c).epsilon(1e-10));
  }
  std::vector<double> llr_a = llr_scores(m, x, 2, cfg, 42);
  std::vector<double> llr_b = llr_scores(shifted, x, 2, cfg, 42);
  for (std::size_t i = 0; i < llr_a.size(); ++i)
    CHECK(llr_b[i] == doctest::Approx(llr_a[i]).epsilon(1e-9));
}

TEST_CASE("k = 0 scores ignore n_mc and match the anomaly score") {
  Models m = random_tilted_model({1, 1}, 1, 17);
  auto rng = make_stream(6, "test/k0");
  Tensor x = rng.normal_tensor({6, 1});
  ScoringConfig one;
  one.n_mc = 1;
  ScoringConfig four;
  four.n_mc = 4;
  std::vector<double> a = ood_scores(m, x, 0, one, 9);
  std::vector<double> b = ood_scores(m, x, 0, four, 9);
  std::vector<double> c = anomaly_scores(m, x, four, 9);
  CHECK(a == b);
  CHECK(a == c);
}

TEST_CASE("ood scoring is independent of the thread count") {
  Models m = random_tilted_model({2, 2}, 2, 19);
  auto rng = make_stream(7, "test/threads");
  Tensor x = rng.normal_tensor({12, 2});
  ScoringConfig st;
  st.sampler.steps = 6;
  ScoringConfig mt = st;
  mt.threads = 4;
  CHECK(ood_scores(m, x, 1, st, 31) == ood_scores(m, x, 1, mt, 31));
  CHECK(llr_scores(m, x, 2, st, 31) == llr_scores(m, x, 2, mt, 31));
}

TEST_CASE("out-of-range k is rejected") {
  Models m = random_tilted_model({1, 1}, 1, 23);
  Tensor x = Tensor::row({0.0});
  ScoringConfig cfg;
  CHECK_THROWS_AS(ood_scores(m, x, 3, cfg, 0), UsageError);
}

TEST_CASE("hierarchical sampling with an identity decoder") {
  Models m = random_tilted_model({2, 2}, 2, 29);
  // Identity decoder: output = z0.
  m.decoder.net.spec = MlpSpec{.input_dim = 2, .hidden_dims = {}, .output_dim = 2};
  m.decoder.net.weights = {Tensor::identity(2)};
  m.decoder.net.biases = {Tensor::zeros({1, 2})};

  LatentStack base;
  base.layers.push_back(Tensor::row({0.3, -0.4}));
  base.layers.push_back(Tensor::row({1.1, 0.2}));
  LangevinConfig cfg;
  cfg.steps = 5;
  auto rng = make_stream(8, "test/hier");

  // No layer resampled: every variant decodes the base code exactly.
  Tensor none = hierarchical_sample(m, base, {false, false}, 3, cfg, rng);
  REQUIRE(none.rows() == 3);
  for (std::size_t r = 0; r < 3; ++r) {
    CHECK(none.at(r, 0) == doctest::Approx(0.3).epsilon(1e-12));
    CHECK(none.at(r, 1) == doctest::Approx(-0.4).epsilon(1e-12));
  }

  // Bottom layer resampled: variants differ from the base and each other.
  Tensor bottom = hierarchical_sample(m, base, {true, false}, 4, cfg, rng);
  REQUIRE(bottom.rows() == 4);
  bool moved = false, distinct = false;
  for (std::size_t r = 0; r < 4; ++r) {
    if (std::abs(bottom.at(r, 0) - 0.3) > 1e-9) moved = true;
    if (r > 0 && bottom.at(r, 0) != bottom.at(0, 0)) distinct = true;
  }
  CHECK(moved);
  CHECK(distinct);

  // All layers resampled also works.
  Tensor all = hierarchical_sample(m, base, {true, true}, 2, cfg, rng);
  CHECK(all.rows() == 2);
}

TEST_CASE("reconstruction with k = 0 is the decoded posterior mean path") {
  Models m = random_tilted_model({2, 2}, 2, 31);
  auto rng = make_stream(9, "test/recon");
  Tensor x = rng.normal_tensor({3, 2});
  LangevinConfig cfg;
  cfg.steps = 5;
  auto r1 = make_stream(10, "test/recon-run");
  Tensor rec = hierarchical_reconstruct(m, x, 0, cfg, r1);

  auto r2 = make_stream(11, "test/recon-ref");
  InferResult inf = infer(m.inference, x, r2, /*noise=*/false);
  Tensor want = decode_mean_rows(m.decoder, inf.z.layers[0]);
  CHECK(max_rel_err(rec, want) < 1e-12);
}

TEST_CASE("energy profile: zero tilt gives a zero energy trace") {
  Models m = build_models(tiny_config({2, 2}, 2), 37);  // alpha stays zero
  LangevinConfig cfg;
  auto rng = make_stream(12, "test/profile");
  ChainRecord rec = energy_profile(m, 25, cfg, rng, 2);
  REQUIRE(rec.energy.size() == 26);
  for (const Tensor& e : rec.energy)
    for (double v : e.raw()) CHECK(v == 0.0);
  for (const Tensor& lp : rec.log_prior)
    for (double v : lp.raw()) CHECK(std::isfinite(v));
}

TEST_CASE("score CSV layout") {
  std::vector<double> scores = {1.5, -2.0};
  std::vector<std::uint32_t> labels = {1, 0};
  std::ostringstream os;
  write_scores_csv(os, scores, labels, 2, "L>k");
  std::string s = os.str();
  CHECK(s.rfind("id,label,k,score,score_type\n", 0) == 0);
  CHECK(s.find("0,1,2,1.5,L>k") != std::string::npos);
  CHECK(s.find("1,0,2,-2,L>k") != std::string::npos);
}

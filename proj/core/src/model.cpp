#include "jebm/model.hpp"

#include <cmath>

namespace jebm {

std::pair<Tape::Id, Tape::Id> ConditionalGaussianLayer::mean_log_var(
    ParamBinding& params, Tape::Id parent) const {
  Tape& t = params.tape();
  Tape::Id out = trunk.forward(params, parent);
  std::size_t d = child_dim();
  Tape::Id mean = t.slice_cols(out, 0, d);
  Tape::Id log_var = t.clamp(t.slice_cols(out, d, 2 * d), kLogVarClampLo, kLogVarClampHi);
  return {mean, log_var};
}

void JointEbmPrior::check_stack(const LatentStack& z) const {
  if (z.num_layers() != dims.size())
    throw DimensionError("latent stack: layer count mismatch");
  for (std::size_t i = 0; i < dims.size(); ++i)
    if (z.layers[i].cols() != dims[i])
      throw DimensionError("latent stack: dim mismatch at layer " + std::to_string(i + 1));
}

Tape::Id JointEbmPrior::gaussian_logpdf_rows(ParamBinding& params,
                                             const std::vector<Tape::Id>& z) const {
  Tape& t = params.tape();
  std::size_t L = dims.size();
  Tape::Id total = std_normal_log_density_rows(t, z[L - 1]);
  for (std::size_t i = 0; i + 1 < L; ++i) {
    auto [mean, log_var] = layers[i].mean_log_var(params, z[i + 1]);
    total = t.add(total, gaussian_log_density_rows(t, z[i], mean, log_var));
  }
  return total;
}

Tape::Id JointEbmPrior::energy_sum_rows(ParamBinding& params,
                                        const std::vector<Tape::Id>& z) const {
  Tape& t = params.tape();
  Tape::Id total = energies[0].value_rows(params, z[0]);
  for (std::size_t i = 1; i < energies.size(); ++i)
    total = t.add(total, energies[i].value_rows(params, z[i]));
  return total;
}

Tape::Id JointEbmPrior::unnormalized_log_prior_rows(
    ParamBinding& params, const std::vector<Tape::Id>& z) const {
  Tape& t = params.tape();
  return t.add(energy_sum_rows(params, z), gaussian_logpdf_rows(params, z));
}

std::vector<Tensor*> JointEbmPrior::alpha_parameters() {
  std::vector<Tensor*> ps;
  for (auto& e : energies)
    for (Tensor* p : e.net.parameters()) ps.push_back(p);
  return ps;
}

std::vector<Tensor*> JointEbmPrior::beta_parameters() {
  std::vector<Tensor*> ps;
  for (auto& l : layers)
    for (Tensor* p : l.trunk.parameters()) ps.push_back(p);
  return ps;
}

namespace {

std::vector<Tape::Id> leaf_stack(Tape& t, const LatentStack& z) {
  std::vector<Tape::Id> ids;
  ids.reserve(z.num_layers());
  for (const auto& layer : z.layers) ids.push_back(t.leaf(layer));
  return ids;
}

}  // namespace

Tensor gaussian_prior_logpdf_rows(const JointEbmPrior& prior, const LatentStack& z) {
  prior.check_stack(z);
  Tape t(false);
  ParamBinding params(t);
  return t.value(prior.gaussian_logpdf_rows(params, leaf_stack(t, z)));
}

Tensor energy_sum_rows(const JointEbmPrior& prior, const LatentStack& z) {
  prior.check_stack(z);
  Tape t(false);
  ParamBinding params(t);
  return t.value(prior.energy_sum_rows(params, leaf_stack(t, z)));
}

Tensor unnormalized_log_prior_rows(const JointEbmPrior& prior, const LatentStack& z) {
  prior.check_stack(z);
  Tape t(false);
  ParamBinding params(t);
  return t.value(prior.unnormalized_log_prior_rows(params, leaf_stack(t, z)));
}

namespace {
double sum_rows(const Tensor& rows) {
  double s = 0.0;
  for (double v : rows.raw()) s += v;
  return s;
}
}  // namespace

double gaussian_prior_logpdf(const JointEbmPrior& prior, const LatentStack& z) {
  return sum_rows(gaussian_prior_logpdf_rows(prior, z));
}
double energy_sum(const JointEbmPrior& prior, const LatentStack& z) {
  return sum_rows(energy_sum_rows(prior, z));
}
double unnormalized_log_prior(const JointEbmPrior& prior, const LatentStack& z) {
  return sum_rows(unnormalized_log_prior_rows(prior, z));
}

Tape::Id GeneratorDecoder::log_likelihood_rows(ParamBinding& params, Tape::Id x,
                                               Tape::Id z1) const {
  Tape& t = params.tape();
  Tape::Id mean = mean_rows(params, z1);
  std::size_t n = t.value(x).rows(), d = t.value(x).cols();
  double log_var = 2.0 * std::log(observation_sigma);
  Tape::Id lv = t.leaf(Tensor::full({n, d}, log_var));
  return gaussian_log_density_rows(t, x, mean, lv);
}

Tensor decode_mean_rows(const GeneratorDecoder& dec, const Tensor& z1) {
  return dec.net.forward_eager(z1);
}

Tensor decode_log_likelihood_rows(const GeneratorDecoder& dec, const Tensor& x,
                                  const Tensor& z1) {
  Tape t(false);
  ParamBinding params(t);
  return t.value(dec.log_likelihood_rows(params, t.leaf(x), t.leaf(z1)));
}

double decode_log_likelihood(const GeneratorDecoder& dec, const Tensor& x,
                             const Tensor& z1) {
  return sum_rows(decode_log_likelihood_rows(dec, x, z1));
}

std::pair<Tape::Id, Tape::Id> InferenceStack::head_mean_log_var(
    ParamBinding& params, std::size_t i, Tape::Id input) const {
  Tape& t = params.tape();
  Tape::Id out = heads[i].forward(params, input);
  std::size_t d = heads[i].spec.output_dim / 2;
  Tape::Id mean = t.slice_cols(out, 0, d);
  Tape::Id log_var = t.clamp(t.slice_cols(out, d, 2 * d), kLogVarClampLo, kLogVarClampHi);
  return {mean, log_var};
}

std::vector<Tensor*> InferenceStack::parameters() {
  std::vector<Tensor*> ps;
  for (auto& h : heads)
    for (Tensor* p : h.parameters()) ps.push_back(p);
  return ps;
}

InferResult infer(const InferenceStack& enc, const Tensor& x, RngStream& rng,
                  bool noise) {
  Tape t(false);
  ParamBinding params(t);
  std::size_t n = x.rows();
  InferResult res;
  Tape::Id input = t.leaf(x);
  Tape::Id log_q = t.leaf(Tensor::zeros({n, 1}));
  for (std::size_t i = 0; i < enc.num_layers(); ++i) {
    auto [mean, log_var] = enc.head_mean_log_var(params, i, input);
    std::size_t d = t.value(mean).cols();
    Tensor eps = noise ? rng.normal_tensor({n, d}) : Tensor::zeros({n, d});
    Tape::Id std = t.exp_(t.affine(log_var, 0.5, 0.0));
    Tape::Id z = t.add(mean, t.mul(std, t.leaf(eps)));
    log_q = t.add(log_q, gaussian_log_density_rows(t, z, mean, log_var));
    res.z.layers.push_back(t.value(z));
    res.means.push_back(t.value(mean));
    res.log_vars.push_back(t.value(log_var));
    input = z;
  }
  res.log_q_rows = t.value(log_q);
  return res;
}

void ModelConfig::validate() const {
  if (latent_dims.empty()) throw DimensionError("ModelConfig: latent_dims empty");
  for (std::size_t d : latent_dims)
    if (d < 1) throw DimensionError("ModelConfig: latent dims must be >= 1");
  if (data_dim < 1) throw DimensionError("ModelConfig: data_dim must be >= 1");
  if (!(observation_sigma > 0.0))
    throw std::invalid_argument("ModelConfig: observation_sigma must be > 0");
  if (dtype != "f64" && dtype != "f32")
    throw std::invalid_argument("ModelConfig: dtype must be f64 or f32");
}

Models build_models(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Models m;
  m.config = cfg;
  std::size_t L = cfg.latent_dims.size();
  m.prior.dims = cfg.latent_dims;

  for (std::size_t i = 0; i + 1 < L; ++i) {
    ConditionalGaussianLayer layer;
    layer.index = i + 1;
    MlpSpec spec;
    spec.input_dim = cfg.latent_dims[i + 1];
    spec.hidden_dims = cfg.conditional_hidden;
    spec.output_dim = 2 * cfg.latent_dims[i];
    spec.lrelu_slope = cfg.lrelu_slope;
    RngStream rng = make_stream(seed, "init/conditional", i);
    layer.trunk = Mlp::init(spec, rng);
    m.prior.layers.push_back(std::move(layer));
  }

  for (std::size_t i = 0; i < L; ++i) {
    EnergyHead head;
    head.index = i + 1;
    MlpSpec spec;
    spec.input_dim = cfg.latent_dims[i];
    spec.hidden_dims = cfg.energy_hidden;
    spec.output_dim = 1;
    spec.lrelu_slope = cfg.lrelu_slope;
    RngStream rng = make_stream(seed, "init/energy", i);
    // zero final layer: training starts exactly at the Gaussian prior
    head.net = Mlp::init(spec, rng, cfg.energy_weight_std, /*zero_final=*/true);
    m.prior.energies.push_back(std::move(head));
  }

  {
    MlpSpec spec;
    spec.input_dim = cfg.latent_dims[0];
    spec.hidden_dims = cfg.decoder_hidden;
    spec.output_dim = cfg.data_dim;
    spec.lrelu_slope = cfg.lrelu_slope;
    spec.final_activation = cfg.decoder_tanh ? FinalActivation::Tanh : FinalActivation::None;
    RngStream rng = make_stream(seed, "init/decoder", 0);
    m.decoder.net = Mlp::init(spec, rng);
    m.decoder.observation_sigma = cfg.observation_sigma;
  }

  for (std::size_t i = 0; i < L; ++i) {
    MlpSpec spec;
    spec.input_dim = i == 0 ? cfg.data_dim : cfg.latent_dims[i - 1];
    spec.hidden_dims = cfg.inference_hidden;
    spec.output_dim = 2 * cfg.latent_dims[i];
    spec.lrelu_slope = cfg.lrelu_slope;
    RngStream rng = make_stream(seed, "init/inference", i);
    m.inference.heads.push_back(Mlp::init(spec, rng));
  }
  return m;
}

}  // namespace jebm

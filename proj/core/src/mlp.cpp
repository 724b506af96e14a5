#include "jebm/mlp.hpp"

#include <cmath>

namespace jebm {

void MlpSpec::validate() const {
  if (input_dim < 1 || output_dim < 1)
    throw DimensionError("MlpSpec: dims must be >= 1");
  for (std::size_t h : hidden_dims)
    if (h < 1) throw DimensionError("MlpSpec: dims must be >= 1");
  if (!(lrelu_slope > 0.0 && lrelu_slope < 1.0))
    throw std::invalid_argument("MlpSpec: slope must be in (0,1)");
}

Mlp Mlp::init(MlpSpec spec, RngStream& rng, double weight_std, bool zero_final) {
  spec.validate();
  Mlp m;
  m.spec = spec;
  std::vector<std::size_t> dims;
  dims.push_back(spec.input_dim);
  for (std::size_t h : spec.hidden_dims) dims.push_back(h);
  dims.push_back(spec.output_dim);
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    std::size_t fan_in = dims[l], fan_out = dims[l + 1];
    Tensor W = Tensor::zeros({fan_in, fan_out});
    Tensor b = Tensor::zeros({1, fan_out});
    bool last = (l + 2 == dims.size());
    if (!(last && zero_final)) {
      double std = weight_std / std::sqrt(static_cast<double>(fan_in));
      for (double& v : W.raw()) v = std * rng.normal();
    }
    m.weights.push_back(std::move(W));
    m.biases.push_back(std::move(b));
  }
  return m;
}

Tape::Id Mlp::forward(ParamBinding& params, Tape::Id x) const {
  Tape& t = params.tape();
  Tape::Id h = x;
  for (std::size_t l = 0; l < weights.size(); ++l) {
    h = t.bias_add(t.matmul(h, params.bind(weights[l])), params.bind(biases[l]));
    bool last = (l + 1 == weights.size());
    if (!last) {
      h = t.leaky_relu(h, spec.lrelu_slope);
    } else if (spec.final_activation == FinalActivation::Tanh) {
      h = t.tanh_(h);
    }
  }
  return h;
}

Tensor Mlp::forward_eager(const Tensor& x) const {
  Tape t(false);
  ParamBinding params(t);
  Tape::Id out = forward(params, t.leaf(x));
  return t.value(out);
}

std::vector<Tensor*> Mlp::parameters() {
  std::vector<Tensor*> ps;
  for (std::size_t l = 0; l < weights.size(); ++l) {
    ps.push_back(&weights[l]);
    ps.push_back(&biases[l]);
  }
  return ps;
}

std::vector<const Tensor*> Mlp::parameters() const {
  std::vector<const Tensor*> ps;
  for (std::size_t l = 0; l < weights.size(); ++l) {
    ps.push_back(&weights[l]);
    ps.push_back(&biases[l]);
  }
  return ps;
}

std::size_t Mlp::parameter_count() const {
  std::size_t n = 0;
  for (const auto& w : weights) n += w.size();
  for (const auto& b : biases) n += b.size();
  return n;
}

}  // namespace jebm

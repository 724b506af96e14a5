#pragma once

#include <unordered_map>
#include <vector>

#include "jebm/rng.hpp"
#include "jebm/tape.hpp"
#include "jebm/tensor.hpp"

namespace jebm {

enum class FinalActivation { None, Tanh };

struct MlpSpec {
  std::size_t input_dim = 1;
  std::vector<std::size_t> hidden_dims;
  std::size_t output_dim = 1;
  double lrelu_slope = 0.2;
  FinalActivation final_activation = FinalActivation::None;

  void validate() const;
};

/// Maps parameter tensors to tape leaves. One binding per tape; a tensor is
/// bound at most once so all uses share one leaf and gradients accumulate.
class ParamBinding {
 public:
  explicit ParamBinding(Tape& tape) : tape_(&tape) {}

  Tape::Id bind(const Tensor& t) {
    auto it = ids_.find(&t);
    if (it != ids_.end()) return it->second;
    Tape::Id id = tape_->leaf(t);
    ids_.emplace(&t, id);
    return id;
  }

  bool bound(const Tensor& t) const { return ids_.count(&t) > 0; }
  Tape::Id id_of(const Tensor& t) const { return ids_.at(&t); }
  Tape& tape() { return *tape_; }

 private:
  Tape* tape_;
  std::unordered_map<const Tensor*, Tape::Id> ids_;
};

/// Fully connected net: Linear -> LReLU per hidden layer, Linear out,
/// optional Tanh on the output.
struct Mlp {
  MlpSpec spec;
  std::vector<Tensor> weights;  // [in x out] per layer
  std::vector<Tensor> biases;   // [1 x out] per layer

  /// weight_std scales a fan-in^(-1/2) draw; zero_final zeroes the last
  /// linear layer (used by energy heads so training starts at the Gaussian
  /// prior).
  static Mlp init(MlpSpec spec, RngStream& rng, double weight_std = 1.0,
                  bool zero_final = false);

  Tape::Id forward(ParamBinding& params, Tape::Id x) const;

  /// Convenience eager pass (builds a throwaway non-recording tape, so the
  /// arithmetic is identical to the taped pass).
  Tensor forward_eager(const Tensor& x) const;

  std::vector<Tensor*> parameters();
  std::vector<const Tensor*> parameters() const;
  std::size_t parameter_count() const;
};

}  // namespace jebm

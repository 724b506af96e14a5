#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <vector>

#include "jebm/tensor.hpp"

namespace jebm {

/// Reverse-mode autodiff tape over a small primitive set (enough for the
/// MLPs used by the models: matmul, bias add, elementwise math, reductions).
///
/// Nodes are append-only, so creation order is a topological order and the
/// backward sweep is a single reverse pass with additive accumulation.
/// Every produced value is checked finite; NaN/Inf raises NonFiniteError.
///
/// A tape built with recording=false evaluates the exact same kernels and
/// produces bit-identical values, it just skips storing pullbacks.
class Tape {
 public:
  using Id = std::size_t;

  explicit Tape(bool recording = true) : recording_(recording) {}

  Id leaf(Tensor value);

  Id matmul(Id a, Id b);
  Id add(Id a, Id b);        // same shape
  Id sub(Id a, Id b);        // same shape
  Id mul(Id a, Id b);        // elementwise, same shape
  Id bias_add(Id mat, Id bias);  // [n x d] + [1 x d], broadcast over rows
  Id scale(Id a, double c) { return affine(a, c, 0.0); }
  Id affine(Id a, double mul, double shift);
  Id leaky_relu(Id a, double slope);
  Id tanh_(Id a);
  Id exp_(Id a);
  Id log_(Id a);
  Id square(Id a);
  Id clamp(Id a, double lo, double hi);  // pass-through gradient inside range
  Id sum(Id a);              // -> scalar [1]
  Id row_sum(Id a);          // [n x d] -> [n x 1]
  Id slice_cols(Id a, std::size_t c0, std::size_t c1);  // columns [c0, c1)

  const Tensor& value(Id id) const { return nodes_[id].value; }
  std::size_t size() const { return nodes_.size(); }
  bool recording() const { return recording_; }

  /// Seeds d(output)=1 and sweeps backward. `output` must be scalar and
  /// must have been produced under recording.
  void backward(Id output);

  /// Gradient accumulated at `id` during the last backward(); zeros if the
  /// node does not influence the output.
  Tensor grad(Id id) const;

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool has_grad = false;
    std::function<void(Tape&, Id)> pullback;  // reads nodes_[id].grad
  };

  Id push(Tensor value, std::function<void(Tape&, Id)> pullback);
  void accumulate(Id id, const Tensor& contribution);
  Tensor& grad_ref(Id id);

  std::vector<Node> nodes_;
  bool recording_;
  bool swept_ = false;
};

/// Sum over all elements of the Gaussian log-density
///   -1/2 log(2 pi) - 1/2 log_var - 1/2 (x - mean)^2 exp(-log_var)
/// per element; returns [n x 1] row sums for [n x d] inputs.
Tape::Id gaussian_log_density_rows(Tape& t, Tape::Id x, Tape::Id mean, Tape::Id log_var);

/// Scalar version: sums gaussian_log_density_rows over the batch.
Tape::Id gaussian_log_density(Tape& t, Tape::Id x, Tape::Id mean, Tape::Id log_var);

/// Standard-normal log-density rows: gaussian_log_density with mean 0, log_var 0.
Tape::Id std_normal_log_density_rows(Tape& t, Tape::Id x);

}  // namespace jebm

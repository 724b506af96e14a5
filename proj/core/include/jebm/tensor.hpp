#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace jebm {

/// Thrown when tensor shapes do not match an operation's contract.
struct DimensionError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Thrown when a library-produced value is NaN or Inf.
struct NonFiniteError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Dense row-major real tensor. Values are 64-bit; immutable by convention
/// once handed to a Tape (the tape copies on leaf creation).
class Tensor {
 public:
  Tensor() = default;
  Tensor(std::vector<std::size_t> shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (element_count(shape_) != data_.size())
      throw DimensionError("Tensor: shape/data size mismatch");
  }

  static Tensor zeros(std::vector<std::size_t> shape) {
    std::size_t n = element_count(shape);
    return Tensor(std::move(shape), std::vector<double>(n, 0.0));
  }
  static Tensor full(std::vector<std::size_t> shape, double v) {
    std::size_t n = element_count(shape);
    return Tensor(std::move(shape), std::vector<double>(n, v));
  }
  static Tensor scalar(double v) { return Tensor({1}, {v}); }
  static Tensor row(std::vector<double> v) {
    std::size_t n = v.size();
    return Tensor({1, n}, std::move(v));
  }
  static Tensor matrix(std::size_t r, std::size_t c, std::vector<double> v) {
    return Tensor({r, c}, std::move(v));
  }
  static Tensor identity(std::size_t n) {
    Tensor t = zeros({n, n});
    for (std::size_t i = 0; i < n; ++i) t.at(i, i) = 1.0;
    return t;
  }

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::size_t rows() const { return shape_.empty() ? 0 : shape_[0]; }
  std::size_t cols() const {
    if (shape_.size() == 1) return 1;
    return shape_.size() >= 2 ? shape_[1] : 0;
  }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::vector<double>& raw() { return data_; }
  const std::vector<double>& raw() const { return data_; }

  double item() const {
    if (data_.size() != 1) throw DimensionError("Tensor::item: not a scalar");
    return data_[0];
  }

  bool all_finite() const;
  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  static std::size_t element_count(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t s : shape) n *= s;
    return shape.empty() ? 0 : n;
  }

  std::string shape_str() const;

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

/// Ordered per-layer latent batch; layers[i] is z_{i+1} in 1-based layer
/// terms (index L-1 is the top layer). Each layer is [n_chains x dim_i].
struct LatentStack {
  std::vector<Tensor> layers;

  std::size_t num_layers() const { return layers.size(); }
  std::size_t batch() const { return layers.empty() ? 0 : layers[0].rows(); }
  bool all_finite() const {
    for (const auto& l : layers)
      if (!l.all_finite()) return false;
    return true;
  }
};

}  // namespace jebm

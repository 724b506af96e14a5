#include "jebm/tape.hpp"

#include <cmath>

namespace jebm {

namespace {
constexpr double kLog2Pi = 1.8378770664093454835606594728112;

void check_finite(const Tensor& t, const char* op) {
  if (!t.all_finite())
    throw NonFiniteError(std::string("non-finite value produced by ") + op);
}
}  // namespace

Tape::Id Tape::push(Tensor value, std::function<void(Tape&, Id)> pullback) {
  Node n;
  n.value = std::move(value);
  if (recording_) n.pullback = std::move(pullback);
  nodes_.push_back(std::move(n));
  return nodes_.size() - 1;
}

Tensor& Tape::grad_ref(Id id) {
  Node& n = nodes_[id];
  if (!n.has_grad) {
    n.grad = Tensor::zeros(n.value.shape());
    n.has_grad = true;
  }
  return n.grad;
}

void Tape::accumulate(Id id, const Tensor& contribution) {
  Tensor& g = grad_ref(id);
  for (std::size_t i = 0; i < g.size(); ++i) g[i] += contribution[i];
}

Tensor Tape::grad(Id id) const {
  const Node& n = nodes_[id];
  if (!n.has_grad) return Tensor::zeros(n.value.shape());
  return n.grad;
}

void Tape::backward(Id output) {
  if (!recording_) throw std::logic_error("Tape::backward: tape is not recording");
  if (output >= nodes_.size()) throw std::logic_error("Tape::backward: bad id");
  if (nodes_[output].value.size() != 1)
    throw DimensionError("Tape::backward: output must be scalar");
  if (swept_) {
    // allow repeated sweeps from a fresh state
    for (Node& n : nodes_) {
      n.has_grad = false;
      n.grad = Tensor();
    }
  }
  swept_ = true;
  grad_ref(output)[0] = 1.0;
  for (std::size_t i = output + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.has_grad && n.pullback) {
      n.pullback(*this, i);
      check_finite(n.grad, "backward");
    }
  }
}

Tape::Id Tape::leaf(Tensor value) {
  check_finite(value, "leaf");
  return push(std::move(value), nullptr);
}

Tape::Id Tape::matmul(Id a, Id b) {
  const Tensor& A = nodes_[a].value;
  const Tensor& B = nodes_[b].value;
  if (A.shape().size() != 2 || B.shape().size() != 2 || A.cols() != B.rows())
    throw DimensionError("matmul: shape mismatch " + A.shape_str() + " x " + B.shape_str());
  std::size_t m = A.rows(), k = A.cols(), n = B.cols();
  Tensor C = Tensor::zeros({m, n});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      double av = A.at(i, p);
      for (std::size_t j = 0; j < n; ++j) C.at(i, j) += av * B.at(p, j);
    }
  check_finite(C, "matmul");
  return push(std::move(C), [a, b](Tape& t, Id id) {
    const Tensor& g = t.nodes_[id].grad;
    const Tensor& A = t.nodes_[a].value;
    const Tensor& B = t.nodes_[b].value;
    std::size_t m = A.rows(), k = A.cols(), n = B.cols();
    Tensor& ga = t.grad_ref(a);  // g * B^T
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        double gv = g.at(i, j);
        for (std::size_t p = 0; p < k; ++p) ga.at(i, p) += gv * B.at(p, j);
      }
    Tensor& gb = t.grad_ref(b);  // A^T * g
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t p = 0; p < k; ++p) {
        double av = A.at(i, p);
        for (std::size_t j = 0; j < n; ++j) gb.at(p, j) += av * g.at(i, j);
      }
  });
}

Tape::Id Tape::add(Id a, Id b) {
  const Tensor& A = nodes_[a].value;
  const Tensor& B = nodes_[b].value;
  if (!A.same_shape(B)) throw DimensionError("add: shape mismatch");
  Tensor C = A;
  for (std::size_t i = 0; i < C.size(); ++i) C[i] += B[i];
  check_finite(C, "add");
  return push(std::move(C), [a, b](Tape& t, Id id) {
    t.accumulate(a, t.nodes_[id].grad);
    t.accumulate(b, t.nodes_[id].grad);
  });
}

Tape::Id Tape::sub(Id a, Id b) {
  const Tensor& A = nodes_[a].value;
  const Tensor& B = nodes_[b].value;
  if (!A.same_shape(B)) throw DimensionError("sub: shape mismatch");
  Tensor C = A;
  for (std::size_t i = 0; i < C.size(); ++i) C[i] -= B[i];
  check_finite(C, "sub");
  return push(std::move(C), [a, b](Tape& t, Id id) {
    const Tensor& g = t.nodes_[id].grad;
    t.accumulate(a, g);
    Tensor& gb = t.grad_ref(b);
    for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= g[i];
  });
}

Tape::Id Tape::mul(Id a, Id b) {
  const Tensor& A = nodes_[a].value;
  const Tensor& B = nodes_[b].value;
  if (!A.same_shape(B)) throw DimensionError("mul: shape mismatch");
  Tensor C = A;
  for (std::size_t i = 0; i < C.size(); ++i) C[i] *= B[i];
  check_finite(C, "mul");
  return push(std::move(C), [a, b](Tape& t, Id id) {
    const Tensor& g = t.nodes_[id].grad;
    const Tensor& A = t.nodes_[a].value;
    const Tensor& B = t.nodes_[b].value;
    Tensor& ga = t.grad_ref(a);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * B[i];
    Tensor& gb = t.grad_ref(b);
    for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g[i] * A[i];
  });
}

Tape::Id Tape::bias_add(Id mat, Id bias) {
  const Tensor& A = nodes_[mat].value;
  const Tensor& B = nodes_[bias].value;
  if (B.rows() != 1 || A.cols() != B.cols())
    throw DimensionError("bias_add: shape mismatch");
  Tensor C = A;
  std::size_t n = A.rows(), d = A.cols();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) C.at(i, j) += B[j];
  check_finite(C, "bias_add");
  return push(std::move(C), [mat, bias](Tape& t, Id id) {
    const Tensor& g = t.nodes_[id].grad;
    t.accumulate(mat, g);
    Tensor& gb = t.grad_ref(bias);
    std::size_t n = g.rows(), d = g.cols();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < d; ++j) gb[j] += g.at(i, j);
  });
}

Tape::Id Tape::affine(Id a, double mul, double shift) {
  Tensor C = nodes_[a].value;
  for (std::size_t i = 0; i < C.size(); ++i) C[i] = mul * C[i] + shift;
  check_finite(C, "affine");
  return push(std::move(C), [a, mul](Tape& t, Id id) {
    const Tensor& g = t.nodes_[id].grad;
    Tensor& ga = t.grad_ref(a);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += mul * g[i];
  });
}

Tape::Id Tape::leaky_relu(Id a, double slope) {
  Tensor C = nodes_[a].value;
  for (double& v : C.raw()) v = v >= 0.0 ? v : slope * v;
  check_finite(C, "leaky_relu");
  return push(std::move(C), [a, slope](Tape& t, Id id) {
    const Tensor& g = t.nodes_[id].grad;
    const Tensor& A = t.nodes_[a].value;
    Tensor& ga = t.grad_ref(a);
    // subgradient at 0 takes the positive branch
    for (std::size_t i = 0; i < ga.size(); ++i)
      ga[i] += g[i] * (A[i] >= 0.0 ? 1.0 : slope);
  });
}

Tape::Id Tape::tanh_(Id a) {
  Tensor C = nodes_[a].value;
  for (double& v : C.raw()) v = std::tanh(v);
  check_finite(C, "tanh");
  return push(std::move(C), [a](Tape& t, Id id) {
    const Tensor& g = t.nodes_[id].grad;
    const Tensor& Y = t.nodes_[id].value;
    Tensor& ga = t.grad_ref(a);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * (1.0 - Y[i] * Y[i]);
  });
}

Tape::Id Tape::exp_(Id a) {
  Tensor C = nodes_[a].value;
  for (double& v : C.raw()) v = std::exp(v);
  check_finite(C, "exp");
  return push(std::move(C), [a](Tape& t, Id id) {
    const Tensor& g = t.nodes_[id].grad;
    const Tensor& Y = t.nodes_[id].value;
    Tensor& ga = t.grad_ref(a);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * Y[i];
  });
}

Tape::Id Tape::log_(Id a) {
  Tensor C = nodes_[a].value;
  for (double& v : C.raw()) v = std::log(v);
  check_finite(C, "log");
  return push(std::move(C), [a](Tape& t, Id id) {
    const Tensor& g = t.nodes_[id].grad;
    const Tensor& A = t.nodes_[a].value;
    Tensor& ga = t.grad_ref(a);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] / A[i];
  });
}

Tape::Id Tape::square(Id a) {
  Tensor C = nodes_[a].value;
  for (double& v : C.raw()) v = v * v;
  check_finite(C, "square");
  return push(std::move(C), [a](Tape& t, Id id) {
    const Tensor& g = t.nodes_[id].grad;
    const Tensor& A = t.nodes_[a].value;
    Tensor& ga = t.grad_ref(a);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * 2.0 * A[i];
  });
}

Tape::Id Tape::clamp(Id a, double lo, double hi) {
  Tensor C = nodes_[a].value;
  for (double& v : C.raw()) v = v < lo ? lo : (v > hi ? hi : v);
  check_finite(C, "clamp");
  return push(std::move(C), [a, lo, hi](Tape& t, Id id) {
    const Tensor& g = t.nodes_[id].grad;
    const Tensor& A = t.nodes_[a].value;
    Tensor& ga = t.grad_ref(a);
    for (std::size_t i = 0; i < ga.size(); ++i)
      if (A[i] >= lo && A[i] <= hi) ga[i] += g[i];
  });
}

Tape::Id Tape::sum(Id a) {
  const Tensor& A = nodes_[a].value;
  double s = 0.0;
  for (double v : A.raw()) s += v;
  Tensor C = Tensor::scalar(s);
  check_finite(C, "sum");
  return push(std::move(C), [a](Tape& t, Id id) {
    double g = t.nodes_[id].grad[0];
    Tensor& ga = t.grad_ref(a);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g;
  });
}

Tape::Id Tape::row_sum(Id a) {
  const Tensor& A = nodes_[a].value;
  std::size_t n = A.rows(), d = A.cols();
  Tensor C = Tensor::zeros({n, 1});
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) s += A.at(i, j);
    C[i] = s;
  }
  check_finite(C, "row_sum");
  return push(std::move(C), [a](Tape& t, Id id) {
    const Tensor& g = t.nodes_[id].grad;
    Tensor& ga = t.grad_ref(a);
    std::size_t n = ga.rows(), d = ga.cols();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < d; ++j) ga.at(i, j) += g[i];
  });
}

Tape::Id Tape::slice_cols(Id a, std::size_t c0, std::size_t c1) {
  const Tensor& A = nodes_[a].value;
  if (c1 > A.cols() || c0 >= c1) throw DimensionError("slice_cols: bad range");
  std::size_t n = A.rows(), d = c1 - c0;
  Tensor C = Tensor::zeros({n, d});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) C.at(i, j) = A.at(i, c0 + j);
  return push(std::move(C), [a, c0, c1](Tape& t, Id id) {
    const Tensor& g = t.nodes_[id].grad;
    Tensor& ga = t.grad_ref(a);
    std::size_t n = g.rows(), d = c1 - c0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < d; ++j) ga.at(i, c0 + j) += g.at(i, j);
  });
}

Tape::Id gaussian_log_density_rows(Tape& t, Tape::Id x, Tape::Id mean, Tape::Id log_var) {
  // -1/2 log(2pi) - 1/2 log_var - 1/2 (x-mean)^2 exp(-log_var), summed per row
  Tape::Id diff2 = t.square(t.sub(x, mean));
  Tape::Id inv_var = t.exp_(t.affine(log_var, -1.0, 0.0));
  Tape::Id quad = t.affine(t.mul(diff2, inv_var), -0.5, 0.0);
  Tape::Id lv_term = t.affine(log_var, -0.5, -0.5 * kLog2Pi);
  return t.row_sum(t.add(quad, lv_term));
}

Tape::Id gaussian_log_density(Tape& t, Tape::Id x, Tape::Id mean, Tape::Id log_var) {
  return t.sum(gaussian_log_density_rows(t, x, mean, log_var));
}

Tape::Id std_normal_log_density_rows(Tape& t, Tape::Id x) {
  Tape::Id quad = t.affine(t.square(x), -0.5, -0.5 * kLog2Pi);
  return t.row_sum(quad);
}

}  // namespace jebm

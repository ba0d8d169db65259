#pragma once

// Dense feed-forward building blocks with hand-written backward passes.
//
// Batches are row-major [n x d] matrices: one event per row. A layer with
// `in` inputs and `out` outputs stores weights as [out x in], so the
// pre-activation of a batch is Z = X * W^T + 1 * b^T.

#include <Eigen/Dense>

#include <cstddef>
#include <random>
#include <string>
#include <vector>

namespace dann::nn {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using Rng = std::mt19937_64;

struct Activation {
  enum class Kind { Identity, ReLU, Tanh, ELU, Softmax };

  Kind kind = Kind::Identity;
  double alpha = 1.0;  // ELU only

  static Activation identity() { return {Kind::Identity, 1.0}; }
  static Activation relu() { return {Kind::ReLU, 1.0}; }
  static Activation tanh() { return {Kind::Tanh, 1.0}; }
  static Activation elu(double alpha = 1.0) { return {Kind::ELU, alpha}; }
  static Activation softmax() { return {Kind::Softmax, 1.0}; }

  friend bool operator==(const Activation&, const Activation&) = default;
};

std::string to_string(Activation act);
// Accepts "identity", "relu", "tanh", "elu", "softmax". Throws ConfigError.
Activation parse_activation(const std::string& name, double alpha = 1.0);

// Row-wise activation. Softmax subtracts the row maximum before exponentiating.
Matrix activate(Activation act, const Matrix& pre);

// dL/dZ given dL/dA, the pre-activation Z and the activation output A.
Matrix activation_backward(Activation act, const Matrix& pre, const Matrix& post,
                           const Matrix& upstream);

struct DenseLayer {
  Matrix weights;  // [out x in]
  Vector biases;   // [out]
  Activation activation;

  std::size_t in() const { return static_cast<std::size_t>(weights.cols()); }
  std::size_t out() const { return static_cast<std::size_t>(weights.rows()); }
};

using Stack = std::vector<DenseLayer>;

// Glorot-uniform: entries ~ U[-sqrt(6/(fan_in+fan_out)), +sqrt(6/(fan_in+fan_out))],
// returned with shape [fan_out x fan_in].
Matrix xavier_init(std::size_t fan_in, std::size_t fan_out, Rng& rng);

// Builds a stack input_dim -> sizes[0] -> ... -> sizes.back(). Hidden layers
// use `hidden`, the last layer uses `output`. Biases start at zero.
Stack make_stack(std::size_t input_dim, const std::vector<std::size_t>& sizes,
                 Activation hidden, Activation output, Rng& rng);

// Throws ConfigError if consecutive layers disagree on width.
void check_stack(const Stack& stack);

struct ForwardCache {
  Matrix input;
  std::vector<Matrix> pre;   // per layer Z
  std::vector<Matrix> post;  // per layer A

  const Matrix& output() const { return post.empty() ? input : post.back(); }
};

// Throws ConfigError naming both widths when the batch does not fit the stack.
ForwardCache forward(const Stack& stack, const Matrix& batch);

struct LayerGrad {
  Matrix weights;
  Vector biases;
};

struct BackwardResult {
  std::vector<LayerGrad> params;
  Matrix input;  // dL/d(batch)
};

// Gradients of sum(output .* upstream) w.r.t. every parameter and the input.
BackwardResult backward(const Stack& stack, const ForwardCache& cache, const Matrix& upstream);

// Same, but `upstream_pre` is already dL/dZ of the final layer. Used when the
// final activation is fused with its loss (softmax + cross-entropy).
BackwardResult backward_from_pre(const Stack& stack, const ForwardCache& cache,
                                 const Matrix& upstream_pre);

std::size_t parameter_count(const Stack& stack);
bool all_finite(const Stack& stack);

}  // namespace dann::nn

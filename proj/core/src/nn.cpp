#include "dann/nn.hpp"

#include "dann/error.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace dann::nn {

std::string to_string(Activation act) {
  switch (act.kind) {
    case Activation::Kind::Identity: return "identity";
    case Activation::Kind::ReLU: return "relu";
    case Activation::Kind::Tanh: return "tanh";
    case Activation::Kind::ELU: return "elu";
    case Activation::Kind::Softmax: return "softmax";
  }
  return "unknown";
}

Activation parse_activation(const std::string& name, double alpha) {
  if (name == "identity" || name == "linear") return Activation::identity();
  if (name == "relu") return Activation::relu();
  if (name == "tanh") return Activation::tanh();
  if (name == "elu") {
    if (!(alpha > 0.0) || !std::isfinite(alpha)) {
      throw ConfigError("elu alpha must be a positive finite number");
    }
    return Activation::elu(alpha);
  }
  if (name == "softmax") return Activation::softmax();
  throw ConfigError("unknown activation '" + name + "'");
}

Matrix activate(Activation act, const Matrix& pre) {
  switch (act.kind) {
    case Activation::Kind::Identity:
      return pre;
    case Activation::Kind::ReLU:
      return pre.cwiseMax(0.0);
    case Activation::Kind::Tanh:
      return pre.array().tanh().matrix();
    case Activation::Kind::ELU: {
      const double alpha = act.alpha;
      // max(z,0) + alpha*(e^min(z,0) - 1): exact for z > 0 and vectorisable.
      return (pre.array().max(0.0) + alpha * (pre.array().min(0.0).exp() - 1.0)).matrix();
    }
    case Activation::Kind::Softmax: {
      Matrix out(pre.rows(), pre.cols());
      for (Eigen::Index r = 0; r < pre.rows(); ++r) {
        const double shift = pre.row(r).maxCoeff();
        out.row(r) = (pre.row(r).array() - shift).exp().matrix();
        out.row(r) /= out.row(r).sum();
      }
      return out;
    }
  }
  return pre;
}

Matrix activation_backward(Activation act, const Matrix& pre, const Matrix& post,
                           const Matrix& upstream) {
  switch (act.kind) {
    case Activation::Kind::Identity:
      return upstream;
    case Activation::Kind::ReLU: {
      Matrix out(upstream.rows(), upstream.cols());
      const double* z = pre.data();
      const double* g = upstream.data();
      double* o = out.data();
      for (Eigen::Index i = 0; i < out.size(); ++i) o[i] = z[i] > 0.0 ? g[i] : 0.0;
      return out;
    }
    case Activation::Kind::Tanh:
      return (upstream.array() * (1.0 - post.array().square())).matrix();
    case Activation::Kind::ELU: {
      // For z <= 0 the derivative alpha * e^z equals A + alpha.
      const double alpha = act.alpha;
      Matrix out(upstream.rows(), upstream.cols());
      const double* z = pre.data();
      const double* a = post.data();
      const double* g = upstream.data();
      double* o = out.data();
      for (Eigen::Index i = 0; i < out.size(); ++i) o[i] = z[i] > 0.0 ? g[i] : g[i] * (a[i] + alpha);
      return out;
    }
    case Activation::Kind::Softmax: {
      const Eigen::VectorXd dot = (upstream.array() * post.array()).rowwise().sum();
      return (post.array() * (upstream.colwise() - dot).array()).matrix();
    }
  }
  return upstream;
}

Matrix xavier_init(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Matrix w(static_cast<Eigen::Index>(fan_out), static_cast<Eigen::Index>(fan_in));
  for (Eigen::Index r = 0; r < w.rows(); ++r) {
    for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = dist(rng);
  }
  return w;
}

Stack make_stack(std::size_t input_dim, const std::vector<std::size_t>& sizes,
                 Activation hidden, Activation output, Rng& rng) {
  if (input_dim == 0) throw ConfigError("layer stack needs a positive input width");
  Stack stack;
  stack.reserve(sizes.size());
  std::size_t fan_in = input_dim;
  for (std::size_t k = 0; k < sizes.size(); ++k) {
    if (sizes[k] == 0) throw ConfigError("layer widths must be positive");
    DenseLayer layer;
    layer.weights = xavier_init(fan_in, sizes[k], rng);
    layer.biases = Vector::Zero(static_cast<Eigen::Index>(sizes[k]));
    layer.activation = (k + 1 == sizes.size()) ? output : hidden;
    stack.push_back(std::move(layer));
    fan_in = sizes[k];
  }
  return stack;
}

void check_stack(const Stack& stack) {
  for (std::size_t k = 0; k < stack.size(); ++k) {
    if (stack[k].biases.size() != stack[k].weights.rows()) {
      std::ostringstream os;
      os << "layer " << k << ": " << stack[k].weights.rows() << " outputs but "
         << stack[k].biases.size() << " biases";
      throw ConfigError(os.str());
    }
    if (k > 0 && stack[k].in() != stack[k - 1].out()) {
      std::ostringstream os;
      os << "layer " << k << " expects " << stack[k].in() << " inputs but layer " << k - 1
         << " produces " << stack[k - 1].out();
      throw ConfigError(os.str());
    }
  }
}

ForwardCache forward(const Stack& stack, const Matrix& batch) {
  if (!stack.empty() && static_cast<std::size_t>(batch.cols()) != stack.front().in()) {
    std::ostringstream os;
    os << "batch has " << batch.cols() << " columns but the first layer expects "
       << stack.front().in();
    throw ConfigError(os.str());
  }
  ForwardCache cache;
  cache.input = batch;
  cache.pre.reserve(stack.size());
  cache.post.reserve(stack.size());
  const Matrix* current = &cache.input;
  for (const DenseLayer& layer : stack) {
    Matrix z = *current * layer.weights.transpose();
    z.rowwise() += layer.biases.transpose();
    cache.post.push_back(activate(layer.activation, z));
    cache.pre.push_back(std::move(z));
    current = &cache.post.back();
  }
  return cache;
}

BackwardResult backward_from_pre(const Stack& stack, const ForwardCache& cache,
                                 const Matrix& upstream_pre) {
  if (cache.pre.size() != stack.size() || stack.empty()) {
    throw std::logic_error("backward: cache does not belong to this stack");
  }
  if (upstream_pre.rows() != cache.pre.back().rows() ||
      upstream_pre.cols() != cache.pre.back().cols()) {
    throw std::logic_error("backward: upstream shape does not match the stack output");
  }
  BackwardResult result;
  result.params.resize(stack.size());
  Matrix delta = upstream_pre;
  for (std::size_t k = stack.size(); k-- > 0;) {
    const Matrix& below = (k == 0) ? cache.input : cache.post[k - 1];
    result.params[k].weights = delta.transpose() * below;
    result.params[k].biases = delta.colwise().sum().transpose();
    Matrix grad_below = delta * stack[k].weights;
    if (k == 0) {
      result.input = std::move(grad_below);
    } else {
      delta = activation_backward(stack[k - 1].activation, cache.pre[k - 1], cache.post[k - 1],
                                  grad_below);
    }
  }
  return result;
}

BackwardResult backward(const Stack& stack, const ForwardCache& cache, const Matrix& upstream) {
  if (stack.empty() || cache.post.size() != stack.size()) {
    throw std::logic_error("backward: cache does not belong to this stack");
  }
  if (upstream.rows() != cache.post.back().rows() ||
      upstream.cols() != cache.post.back().cols()) {
    throw std::logic_error("backward: upstream shape does not match the stack output");
  }
  const Matrix delta = activation_backward(stack.back().activation, cache.pre.back(),
                                           cache.post.back(), upstream);
  return backward_from_pre(stack, cache, delta);
}

std::size_t parameter_count(const Stack& stack) {
  std::size_t n = 0;
  for (const DenseLayer& layer : stack) {
    n += static_cast<std::size_t>(layer.weights.size() + layer.biases.size());
  }
  return n;
}

bool all_finite(const Stack& stack) {
  for (const DenseLayer& layer : stack) {
    if (!layer.weights.allFinite() || !layer.biases.allFinite()) return false;
  }
  return true;
}

}  // namespace dann::nn

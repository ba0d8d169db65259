#pragma once

// Small random DANN instances and a central-difference gradient check shared
// by the unit and acceptance tests.

#include "dann/model.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

namespace dann::fixtures {

struct Instance {
  DannNetwork net;
  nn::Matrix x;
  std::vector<data::Label> labels;
  std::vector<data::Domain> domains;
  std::vector<double> label_weights;
  std::vector<double> domain_weights;

  BatchLabels batch() const { return {labels, domains, label_weights, domain_weights}; }
};

inline std::size_t draw(nn::Rng& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

// Each branch has 1..3 layers of at most 8 units; biases are randomised so
// that every activation regime is exercised.
inline Instance random_instance(nn::Rng& rng, LossSetup setup, nn::Activation hidden) {
  DannConfig c;
  c.input_dim = draw(rng, 2, 5);
  c.setup = setup;
  c.hidden = hidden;
  c.feature_sizes.clear();
  for (std::size_t k = draw(rng, 1, 3); k > 0; --k) c.feature_sizes.push_back(draw(rng, 2, 8));
  c.label_sizes.clear();
  for (std::size_t k = draw(rng, 1, 3); k > 1; --k) c.label_sizes.push_back(draw(rng, 2, 8));
  c.label_sizes.push_back(2);
  c.domain_sizes.clear();
  for (std::size_t k = draw(rng, 1, 3); k > 1; --k) c.domain_sizes.push_back(draw(rng, 2, 8));
  c.domain_sizes.push_back(2);

  Instance inst;
  inst.net = DannNetwork::create(c, rng);
  inst.net.standardizer = data::Standardizer::identity(c.input_dim);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (nn::Stack* s : {&inst.net.feature_extractor, &inst.net.label_predictor, &inst.net.domain_classifier}) {
    for (auto& layer : *s) {
      for (Eigen::Index i = 0; i < layer.biases.size(); ++i) layer.biases[i] = 0.5 * u(rng);
    }
  }
  const std::size_t n = draw(rng, 4, 9);
  inst.x.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(c.input_dim));
  for (Eigen::Index i = 0; i < inst.x.size(); ++i) inst.x.data()[i] = 1.5 * u(rng);
  for (std::size_t i = 0; i < n; ++i) {
    // at least one event of each domain, at least one source event of each class
    inst.domains.push_back(i < 2 || (i >= 3 && u(rng) > 0) ? data::Domain::Source : data::Domain::Target);
    inst.labels.push_back(i == 0 || u(rng) > 0 ? data::Label::Signal : data::Label::Background);
    if (i == 1) inst.labels.back() = data::Label::Background;
    inst.label_weights.push_back(0.5 + std::abs(u(rng)));
    inst.domain_weights.push_back(0.5 + std::abs(u(rng)));
  }
  inst.domains[2] = data::Domain::Target;
  return inst;
}

inline double losses(const DannNetwork& net, const Instance& inst, double* domain) {
  const DannOutputs out = dann_forward(net, inst.x);
  *domain = domain_loss(out, inst.domains, inst.domain_weights, net.config.setup);
  return label_loss(out, inst.labels, inst.domains, inst.label_weights);
}

inline double relative_error(double a, double b, double floor = 1e-5) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

// Max relative error between dann_backward and central differences of the
// objective each parameter group descends: label loss for the label head,
// domain loss for the domain head, label - lambda * domain for the extractor.
inline double gradient_check(const Instance& inst, double lambda, double h = 1e-5) {
  DannNetwork net = inst.net;
  const DannOutputs out = dann_forward(net, inst.x);
  const DannGradients g = dann_backward(net, out, inst.batch(), lambda);

  double worst = 0.0;
  auto sweep = [&](nn::Stack& stack, const std::vector<nn::LayerGrad>& grads, double wl, double wd) {
    auto objective = [&] {
      double ld = 0.0;
      const double ly = losses(net, inst, &ld);
      return wl * ly + wd * ld;
    };
    auto probe = [&](double& p, double analytic) {
      const double keep = p;
      p = keep + h;
      const double up = objective();
      p = keep - h;
      const double down = objective();
      p = keep;
      worst = std::max(worst, relative_error((up - down) / (2.0 * h), analytic));
    };
    for (std::size_t k = 0; k < stack.size(); ++k) {
      for (Eigen::Index i = 0; i < stack[k].weights.size(); ++i) {
        probe(stack[k].weights.data()[i], grads[k].weights.data()[i]);
      }
      for (Eigen::Index i = 0; i < stack[k].biases.size(); ++i) probe(stack[k].biases[i], grads[k].biases[i]);
    }
  };
  sweep(net.feature_extractor, g.feature_extractor, 1.0, -lambda);
  sweep(net.label_predictor, g.label_predictor, 1.0, 0.0);
  sweep(net.domain_classifier, g.domain_classifier, 0.0, 1.0);
  return worst;
}

// Max over extractor entries of |g - (g_y - lambda g_d)| / (|g_y| + lambda |g_d|).
inline double reversal_error(const Instance& inst, double lambda) {
  const DannOutputs out = dann_forward(inst.net, inst.x);
  const DannGradients full = dann_backward(inst.net, out, inst.batch(), lambda);
  const DannGradients gy = label_gradients(inst.net, out, inst.batch());
  const DannGradients gd = domain_gradients(inst.net, out, inst.batch());
  double worst = 0.0;
  for (std::size_t k = 0; k < full.feature_extractor.size(); ++k) {
    auto cmp = [&](const double* f, const double* y, const double* d, Eigen::Index n) {
      for (Eigen::Index i = 0; i < n; ++i) {
        const double scale = std::abs(y[i]) + lambda * std::abs(d[i]);
        const double diff = std::abs(f[i] - (y[i] - lambda * d[i]));
        if (diff == 0.0) continue;
        worst = std::max(worst, scale > 0.0 ? diff / scale : INFINITY);
      }
    };
    cmp(full.feature_extractor[k].weights.data(), gy.feature_extractor[k].weights.data(),
        gd.feature_extractor[k].weights.data(), full.feature_extractor[k].weights.size());
    cmp(full.feature_extractor[k].biases.data(), gy.feature_extractor[k].biases.data(),
        gd.feature_extractor[k].biases.data(), full.feature_extractor[k].biases.size());
  }
  return worst;
}

}  // namespace dann::fixtures

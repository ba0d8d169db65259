#include "dann/model.hpp"

#include "dann/error.hpp"
#include "dann/log.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <fstream>
#include <sstream>

namespace dann {

using data::Domain;
using data::Event;
using data::Label;
using nn::Matrix;

std::string to_string(LossSetup setup) { return setup == LossSetup::A ? "A" : "B"; }

LossSetup parse_loss_setup(const std::string& name) {
  if (name == "A" || name == "a") return LossSetup::A;
  if (name == "B" || name == "b") return LossSetup::B;
  throw ConfigError("loss_setup must be 'A' or 'B', got '" + name + "'");
}

std::vector<std::size_t> DannConfig::built_domain_sizes() const {
  std::vector<std::size_t> sizes = domain_sizes;
  if (setup == LossSetup::B && !sizes.empty()) sizes.back() = 1;
  return sizes;
}

void validate(const DannConfig& config) {
  if (config.input_dim == 0) throw ConfigError("input_dim must be positive");
  if (config.feature_sizes.empty()) throw ConfigError("feature extractor needs at least one layer");
  if (config.label_sizes.empty() || config.label_sizes.back() != 2) {
    throw ConfigError("label predictor must end in 2 units");
  }
  if (config.domain_sizes.empty()) throw ConfigError("domain classifier needs at least one layer");
  if (config.setup == LossSetup::A && config.domain_sizes.back() != 2) {
    throw ConfigError("set-up A needs a 2-unit domain classifier output");
  }
  if (config.setup == LossSetup::B && config.domain_sizes.back() != 2 && config.domain_sizes.back() != 1) {
    throw ConfigError("set-up B domain classifier must end in 1 or 2 units");
  }
  for (const auto* sizes : {&config.feature_sizes, &config.label_sizes, &config.domain_sizes}) {
    for (std::size_t s : *sizes) {
      if (s == 0) throw ConfigError("layer widths must be positive");
    }
  }
  if (config.hidden.kind == nn::Activation::Kind::Softmax) {
    throw ConfigError("softmax is not a hidden-layer activation");
  }
  if (!(config.lambda >= 0.0) || !std::isfinite(config.lambda)) {
    throw ConfigError("lambda must be a finite non-negative number");
  }
}

DannConfig dann_config_from_json(const nlohmann::json& j) {
  DannConfig c;
  try {
    auto sizes = [&](const char* key, std::vector<std::size_t>& out) {
      if (!j.contains(key)) return;
      out.clear();
      for (const auto& v : j.at(key)) {
        const long long n = v.get<long long>();
        if (n <= 0) throw ConfigError(std::string(key) + ": layer widths must be positive");
        out.push_back(static_cast<std::size_t>(n));
      }
    };
    if (j.contains("input_dim")) {
      const long long d = j.at("input_dim").get<long long>();
      if (d <= 0) throw ConfigError("input_dim must be positive");
      c.input_dim = static_cast<std::size_t>(d);
    }
    sizes("feature_extractor", c.feature_sizes);
    sizes("label_predictor", c.label_sizes);
    sizes("domain_classifier", c.domain_sizes);
    c.hidden = nn::parse_activation(j.value("hidden_activation", std::string("elu")),
                                    j.value("elu_alpha", 1.0));
    c.lambda = j.value("lambda", 0.0);
    c.setup = parse_loss_setup(j.value("loss_setup", std::string("A")));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("dann config: ") + e.what());
  }
  validate(c);
  return c;
}

nlohmann::json to_json(const DannConfig& c) {
  return {{"input_dim", c.input_dim},
          {"feature_extractor", c.feature_sizes},
          {"label_predictor", c.label_sizes},
          {"domain_classifier", c.domain_sizes},
          {"hidden_activation", nn::to_string(c.hidden)},
          {"elu_alpha", c.hidden.alpha},
          {"lambda", c.lambda},
          {"loss_setup", to_string(c.setup)}};
}

// ---------------------------------------------------------------------------
// Network

DannNetwork DannNetwork::create(const DannConfig& config, nn::Rng& rng) {
  validate(config);
  DannNetwork net;
  net.config = config;
  net.standardizer = data::Standardizer::identity(config.input_dim);
  net.feature_extractor =
      nn::make_stack(config.input_dim, config.feature_sizes, config.hidden, config.hidden, rng);
  const std::size_t features = config.feature_sizes.back();
  net.label_predictor =
      nn::make_stack(features, config.label_sizes, config.hidden, nn::Activation::softmax(), rng);
  net.domain_classifier = nn::make_stack(
      features, config.built_domain_sizes(), config.hidden,
      config.setup == LossSetup::A ? nn::Activation::softmax() : nn::Activation::identity(), rng);
  return net;
}

Matrix DannNetwork::prepare(const std::vector<Event>& events) const {
  if (!events.empty() && events.front().features.size() != config.input_dim) {
    throw ConfigError("events have " + std::to_string(events.front().features.size()) +
                      " features but the network expects " + std::to_string(config.input_dim));
  }
  return data::to_matrix(events, &standardizer);
}

std::size_t DannNetwork::parameter_count() const {
  return nn::parameter_count(feature_extractor) + nn::parameter_count(label_predictor) +
         nn::parameter_count(domain_classifier);
}

bool DannNetwork::finite() const {
  return nn::all_finite(feature_extractor) && nn::all_finite(label_predictor) &&
         nn::all_finite(domain_classifier);
}

namespace {

bool same_stack(const nn::Stack& a, const nn::Stack& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t k = 0; k < a.size(); ++k) {
    if (a[k].activation != b[k].activation) return false;
    if (a[k].weights.rows() != b[k].weights.rows() || a[k].weights.cols() != b[k].weights.cols()) return false;
    if (a[k].weights != b[k].weights || a[k].biases != b[k].biases) return false;
  }
  return true;
}

}  // namespace

bool operator==(const DannNetwork& a, const DannNetwork& b) {
  return a.standardizer.mean == b.standardizer.mean && a.standardizer.scale == b.standardizer.scale &&
         same_stack(a.feature_extractor, b.feature_extractor) &&
         same_stack(a.label_predictor, b.label_predictor) &&
         same_stack(a.domain_classifier, b.domain_classifier);
}

// ---------------------------------------------------------------------------
// Forward and losses

std::vector<double> DannOutputs::signal_probability() const {
  const Matrix& p = label_probs();
  std::vector<double> y(static_cast<std::size_t>(p.rows()));
  for (Eigen::Index i = 0; i < p.rows(); ++i) y[static_cast<std::size_t>(i)] = p(i, 1);
  return y;
}

DannOutputs dann_forward(const DannNetwork& net, const Matrix& batch) {
  if (static_cast<std::size_t>(batch.cols()) != net.config.input_dim) {
    throw ConfigError("batch has " + std::to_string(batch.cols()) +
                      " features but the network expects " + std::to_string(net.config.input_dim));
  }
  DannOutputs out;
  out.extractor = nn::forward(net.feature_extractor, batch);
  // Both heads read the same features; the reversal layer is a no-op here.
  out.label = nn::forward(net.label_predictor, out.extractor.output());
  out.domain = nn::forward(net.domain_classifier, out.extractor.output());
  return out;
}

std::vector<double> predict(const DannNetwork& net, const std::vector<Event>& events) {
  if (events.empty()) return {};
  return dann_forward(net, net.prepare(events)).signal_probability();
}

namespace {

void check_lengths(Eigen::Index rows, std::size_t a, std::size_t b, const char* what) {
  if (static_cast<std::size_t>(rows) != a || static_cast<std::size_t>(rows) != b) {
    throw std::logic_error(std::string(what) + ": batch annotations do not match the outputs");
  }
}

// -ln softmax(z)_c computed from the logits.
double cross_entropy(const Matrix& logits, Eigen::Index row, Eigen::Index cls) {
  const double top = logits.row(row).maxCoeff();
  const double lse = top + std::log((logits.row(row).array() - top).exp().sum());
  return lse - logits(row, cls);
}

double source_weight(std::span<const Domain> domains, std::span<const double> weights) {
  double w = 0.0;
  for (std::size_t i = 0; i < domains.size(); ++i) {
    if (domains[i] == Domain::Source) w += weights[i];
  }
  return w;
}

Matrix label_upstream(const DannOutputs& outputs, const BatchLabels& batch) {
  const Matrix& probs = outputs.label_probs();
  check_lengths(probs.rows(), batch.domains.size(), batch.label_weights.size(), "label gradient");
  const double total = source_weight(batch.domains, batch.label_weights);
  if (!(total > 0.0)) throw DataError("empty source batch");
  Matrix d = Matrix::Zero(probs.rows(), probs.cols());
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    const auto k = static_cast<std::size_t>(i);
    if (batch.domains[k] != Domain::Source) continue;  // gate
    const double w = batch.label_weights[k] / total;
    d.row(i) = w * probs.row(i);
    d(i, batch.labels[k] == Label::Signal ? 1 : 0) -= w;
  }
  return d;
}

Matrix domain_upstream(const DannOutputs& outputs, const BatchLabels& batch, LossSetup setup) {
  const Matrix& scores = outputs.domain_scores();
  check_lengths(scores.rows(), batch.domains.size(), batch.domain_weights.size(), "domain gradient");
  double total = 0.0;
  for (double w : batch.domain_weights) total += w;
  Matrix d = Matrix::Zero(scores.rows(), scores.cols());
  if (!(total > 0.0)) return d;
  for (Eigen::Index i = 0; i < scores.rows(); ++i) {
    const auto k = static_cast<std::size_t>(i);
    const double w = batch.domain_weights[k] / total;
    const bool source = batch.domains[k] == Domain::Source;
    if (setup == LossSetup::A) {
      d.row(i) = w * scores.row(i);
      d(i, source ? 1 : 0) -= w;
    } else {
      d(i, 0) = source ? -w : w;
    }
  }
  return d;
}

}  // namespace

double label_loss(const DannOutputs& outputs, std::span<const Label> labels,
                  std::span<const Domain> domains, std::span<const double> weights) {
  const Matrix& logits = outputs.label.pre.back();
  check_lengths(logits.rows(), labels.size(), domains.size(), "label_loss");
  if (weights.size() != labels.size()) throw std::logic_error("label_loss: weight count mismatch");
  double sum = 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (domains[i] != Domain::Source) continue;
    if (weights[i] < 0.0) throw DataError("label_loss: negative weight");
    if (weights[i] == 0.0) continue;
    total += weights[i];
    sum += weights[i] * cross_entropy(logits, static_cast<Eigen::Index>(i),
                                      labels[i] == Label::Signal ? 1 : 0);
  }
  if (!(total > 0.0)) throw DataError("empty source batch");
  return sum / total;
}

double domain_loss(const DannOutputs& outputs, std::span<const Domain> domains,
                   std::span<const double> weights, LossSetup setup) {
  const Matrix& pre = outputs.domain.pre.back();
  check_lengths(pre.rows(), domains.size(), weights.size(), "domain_loss");
  double sum = 0.0;
  double total = 0.0;
  bool has_source = false;
  bool has_target = false;
  for (std::size_t i = 0; i < domains.size(); ++i) {
    if (weights[i] < 0.0) throw DataError("domain_loss: negative weight");
    const bool source = domains[i] == Domain::Source;
    (source ? has_source : has_target) = true;
    if (weights[i] == 0.0) continue;
    total += weights[i];
    const auto row = static_cast<Eigen::Index>(i);
    if (setup == LossSetup::A) {
      sum += weights[i] * cross_entropy(pre, row, source ? 1 : 0);
    } else {
      const double y = outputs.domain_scores()(row, 0);
      sum += weights[i] * (source ? -y : y);
    }
  }
  if (!has_source || !has_target) log::warn("domain_loss: batch contains a single domain");
  return total > 0.0 ? sum / total : 0.0;
}

// ---------------------------------------------------------------------------
// Backward

DannGradients dann_backward(const DannNetwork& net, const DannOutputs& outputs,
                            const BatchLabels& batch, double lambda) {
  DannGradients g;
  nn::BackwardResult label = nn::backward_from_pre(net.label_predictor, outputs.label,
                                                   label_upstream(outputs, batch));
  nn::BackwardResult domain = nn::backward_from_pre(
      net.domain_classifier, outputs.domain, domain_upstream(outputs, batch, net.config.setup));
  // Gradient reversal: the domain branch reaches the extractor scaled by -lambda.
  const Matrix upstream = label.input - lambda * domain.input;
  g.feature_extractor = nn::backward(net.feature_extractor, outputs.extractor, upstream).params;
  g.label_predictor = std::move(label.params);
  g.domain_classifier = std::move(domain.params);
  return g;
}

namespace {

std::vector<nn::LayerGrad> zeros_like(const nn::Stack& stack) {
  std::vector<nn::LayerGrad> out;
  for (const auto& layer : stack) {
    out.push_back({Matrix::Zero(layer.weights.rows(), layer.weights.cols()),
                   nn::Vector::Zero(layer.biases.size())});
  }
  return out;
}

}  // namespace

DannGradients label_gradients(const DannNetwork& net, const DannOutputs& outputs,
                              const BatchLabels& batch) {
  DannGradients g;
  nn::BackwardResult label = nn::backward_from_pre(net.label_predictor, outputs.label,
                                                   label_upstream(outputs, batch));
  g.feature_extractor = nn::backward(net.feature_extractor, outputs.extractor, label.input).params;
  g.label_predictor = std::move(label.params);
  g.domain_classifier = zeros_like(net.domain_classifier);
  return g;
}

DannGradients domain_gradients(const DannNetwork& net, const DannOutputs& outputs,
                               const BatchLabels& batch) {
  DannGradients g;
  nn::BackwardResult domain = nn::backward_from_pre(
      net.domain_classifier, outputs.domain, domain_upstream(outputs, batch, net.config.setup));
  g.feature_extractor = nn::backward(net.feature_extractor, outputs.extractor, domain.input).params;
  g.label_predictor = zeros_like(net.label_predictor);
  g.domain_classifier = std::move(domain.params);
  return g;
}

std::vector<nn::ParamSlot> parameter_slots(DannNetwork& net, const DannGradients& grads) {
  std::vector<nn::ParamSlot> slots;
  auto add = [&](nn::Stack& stack, const std::vector<nn::LayerGrad>& g) {
    if (g.size() != stack.size()) throw std::logic_error("gradient layout does not match the network");
    for (std::size_t k = 0; k < stack.size(); ++k) {
      slots.push_back({{stack[k].weights.data(), static_cast<std::size_t>(stack[k].weights.size())},
                       {g[k].weights.data(), static_cast<std::size_t>(g[k].weights.size())}});
      slots.push_back({{stack[k].biases.data(), static_cast<std::size_t>(stack[k].biases.size())},
                       {g[k].biases.data(), static_cast<std::size_t>(g[k].biases.size())}});
    }
  };
  add(net.feature_extractor, grads.feature_extractor);
  add(net.label_predictor, grads.label_predictor);
  add(net.domain_classifier, grads.domain_classifier);
  return slots;
}

// ---------------------------------------------------------------------------
// Event weights

std::vector<double> balance_weights(const std::vector<Event>& events, BalanceHead head,
                                    double target_signal_fraction) {
  if (events.empty()) throw DataError("balance_weights: no events");
  if (!(target_signal_fraction > 0.0 && target_signal_fraction < 1.0)) {
    throw ConfigError("target_signal_fraction must lie in (0,1)");
  }
  double source_signal = 0.0;
  double source_background = 0.0;
  double target = 0.0;
  for (const Event& e : events) {
    if (e.is_source()) {
      (e.is_signal() ? source_signal : source_background) += e.weight;
    } else {
      target += e.weight;
    }
  }
  if (!(source_signal > 0.0)) throw DataError("balance_weights: no source signal events");
  if (!(source_background > 0.0)) throw DataError("balance_weights: no source background events");

  double signal_scale = 0.0;
  double background_scale = 0.0;
  if (head == BalanceHead::Label) {
    const double half = 0.5 * (source_signal + source_background);
    signal_scale = half / source_signal;
    background_scale = half / source_background;
  } else {
    if (!(target > 0.0)) throw DataError("balance_weights: no target events");
    signal_scale = target_signal_fraction * target / source_signal;
    background_scale = (1.0 - target_signal_fraction) * target / source_background;
  }
  std::vector<double> w(events.size());
  for (std::size_t i = 0; i < events.size(); ++i) {
    const Event& e = events[i];
    if (e.is_source()) {
      w[i] = e.weight * (e.is_signal() ? signal_scale : background_scale);
    } else {
      w[i] = head == BalanceHead::Label ? 0.0 : e.weight;
    }
  }
  return w;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

nlohmann::json stack_to_json(const nn::Stack& stack) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& layer : stack) {
    std::vector<double> w(layer.weights.data(), layer.weights.data() + layer.weights.size());
    std::vector<double> b(layer.biases.data(), layer.biases.data() + layer.biases.size());
    layers.push_back({{"in", layer.in()},
                      {"out", layer.out()},
                      {"activation", nn::to_string(layer.activation)},
                      {"alpha", layer.activation.alpha},
                      {"weights", w},
                      {"biases", b}});
  }
  return layers;
}

nn::Stack stack_from_json(const nlohmann::json& j, const char* name) {
  nn::Stack stack;
  for (const auto& l : j) {
    const auto in = l.at("in").get<std::size_t>();
    const auto out = l.at("out").get<std::size_t>();
    const auto w = l.at("weights").get<std::vector<double>>();
    const auto b = l.at("biases").get<std::vector<double>>();
    if (w.size() != in * out || b.size() != out) {
      throw ConfigError(std::string("checkpoint: ") + name + " layer has inconsistent array sizes");
    }
    nn::DenseLayer layer;
    layer.weights = Eigen::Map<const Matrix>(w.data(), static_cast<Eigen::Index>(out),
                                             static_cast<Eigen::Index>(in));
    layer.biases = Eigen::Map<const nn::Vector>(b.data(), static_cast<Eigen::Index>(out));
    layer.activation = nn::parse_activation(l.at("activation").get<std::string>(), l.value("alpha", 1.0));
    stack.push_back(std::move(layer));
  }
  nn::check_stack(stack);
  return stack;
}

}  // namespace

nlohmann::json checkpoint_to_json(const DannNetwork& net, const nlohmann::json& metadata) {
  return {{"format", "dann-checkpoint"},
          {"format_version", kCheckpointVersion},
          {"config", to_json(net.config)},
          {"standardizer", {{"mean", net.standardizer.mean}, {"scale", net.standardizer.scale}}},
          {"feature_extractor", stack_to_json(net.feature_extractor)},
          {"label_predictor", stack_to_json(net.label_predictor)},
          {"domain_classifier", stack_to_json(net.domain_classifier)},
          {"metadata", metadata}};
}

DannNetwork checkpoint_from_json(const nlohmann::json& j, nlohmann::json* metadata) {
  try {
    if (j.value("format", std::string()) != "dann-checkpoint") {
      throw ConfigError("checkpoint: not a dann checkpoint");
    }
    const int version = j.at("format_version").get<int>();
    if (version != kCheckpointVersion) {
      throw ConfigError("checkpoint: unsupported format_version " + std::to_string(version));
    }
    DannNetwork net;
    net.config = dann_config_from_json(j.at("config"));
    net.standardizer.mean = j.at("standardizer").at("mean").get<std::vector<double>>();
    net.standardizer.scale = j.at("standardizer").at("scale").get<std::vector<double>>();
    if (net.standardizer.mean.size() != net.config.input_dim ||
        net.standardizer.scale.size() != net.config.input_dim) {
      throw ConfigError("checkpoint: standardizer width does not match input_dim");
    }
    net.feature_extractor = stack_from_json(j.at("feature_extractor"), "feature_extractor");
    net.label_predictor = stack_from_json(j.at("label_predictor"), "label_predictor");
    net.domain_classifier = stack_from_json(j.at("domain_classifier"), "domain_classifier");
    if (net.feature_extractor.empty() || net.feature_extractor.front().in() != net.config.input_dim ||
        net.label_predictor.empty() ||
        net.label_predictor.front().in() != net.feature_extractor.back().out() ||
        net.domain_classifier.empty() ||
        net.domain_classifier.front().in() != net.feature_extractor.back().out()) {
      throw ConfigError("checkpoint: branch widths do not connect");
    }
    if (metadata) *metadata = j.value("metadata", nlohmann::json::object());
    return net;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("checkpoint: ") + e.what());
  }
}

void save_checkpoint(const DannNetwork& net, const std::filesystem::path& path,
                     const nlohmann::json& metadata) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write checkpoint '" + path.string() + "'");
  out << checkpoint_to_json(net, metadata).dump(1) << '\n';
}

DannNetwork load_checkpoint(const std::filesystem::path& path, nlohmann::json* metadata) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open checkpoint '" + path.string() + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("checkpoint '" + path.string() + "': " + e.what());
  }
  return checkpoint_from_json(j, metadata);
}

}  // namespace dann

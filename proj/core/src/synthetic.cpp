#include "dann/synthetic.hpp"

#include "dann/error.hpp"
#include "dann/metrics.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

namespace dann::data {
namespace {

Mixture single(std::vector<double> mean, double cov_scale = 1.0) {
  return Mixture{{GaussianComponent{std::move(mean), cov_scale, 1.0}}};
}

void validate_mixture(const Mixture& m, std::size_t dims, const char* what) {
  if (m.components.empty()) throw ConfigError(std::string(what) + ": mixture has no components");
  for (const GaussianComponent& c : m.components) {
    if (c.mean.size() > dims) {
      throw ConfigError(std::string(what) + ": mean has " + std::to_string(c.mean.size()) +
                        " entries but dims = " + std::to_string(dims));
    }
    for (double x : c.mean) {
      if (!std::isfinite(x)) throw ConfigError(std::string(what) + ": non-finite mean");
    }
    if (!(c.cov_scale > 0.0) || !std::isfinite(c.cov_scale)) {
      throw ConfigError(std::string(what) + ": covariance scale must be positive (covariance is not positive definite)");
    }
    if (!(c.weight > 0.0) || !std::isfinite(c.weight)) {
      throw ConfigError(std::string(what) + ": component weight must be positive");
    }
  }
}

double mean_at(const GaussianComponent& c, std::size_t j) { return j < c.mean.size() ? c.mean[j] : 0.0; }

void draw(const Mixture& m, std::size_t dims, long long count, Label label, Domain domain,
          nn::Rng& rng, Dataset& out) {
  std::vector<double> weights;
  for (const auto& c : m.components) weights.push_back(c.weight);
  std::discrete_distribution<std::size_t> pick(weights.begin(), weights.end());
  std::normal_distribution<double> normal(0.0, 1.0);
  for (long long i = 0; i < count; ++i) {
    const GaussianComponent& c = m.components[m.components.size() == 1 ? 0 : pick(rng)];
    const double sd = std::sqrt(c.cov_scale);
    Event e;
    e.features.resize(dims);
    for (std::size_t j = 0; j < dims; ++j) e.features[j] = mean_at(c, j) + sd * normal(rng);
    e.label = label;
    e.domain = domain;
    e.weight = 1.0;
    e.id = out.events.size();
    out.events.push_back(std::move(e));
  }
}

Mixture mixture_from_json(const nlohmann::json& j) {
  Mixture m;
  auto component = [](const nlohmann::json& c) {
    GaussianComponent g;
    g.mean = c.value("mean", std::vector<double>{});
    g.cov_scale = c.value("cov_scale", 1.0);
    g.weight = c.value("weight", 1.0);
    return g;
  };
  if (j.contains("components")) {
    for (const auto& c : j.at("components")) m.components.push_back(component(c));
  } else {
    m.components.push_back(component(j));
  }
  return m;
}

nlohmann::json mixture_to_json(const Mixture& m) {
  nlohmann::json comps = nlohmann::json::array();
  for (const auto& c : m.components) {
    comps.push_back({{"mean", c.mean}, {"cov_scale", c.cov_scale}, {"weight", c.weight}});
  }
  return {{"components", comps}};
}

}  // namespace

SyntheticConfig SyntheticConfig::defaults() {
  SyntheticConfig c;
  c.dims = 10;
  c.signal = single({0.5, 0.0});
  c.background_source = single({-0.5, -0.7});
  c.background_target = single({-0.5, 0.7});
  c.target_signal_fraction = 0.05;
  c.counts.source_signal = 25000;
  c.counts.source_background = 25000;
  c.counts.target_background = 47500;
  c.counts.target_signal = 2500;
  c.seed = 1;
  return c;
}

SyntheticConfig SyntheticConfig::identical_domains() {
  SyntheticConfig c = defaults();
  c.background_target = c.background_source;
  return c;
}

void validate(const SyntheticConfig& config) {
  if (config.dims == 0) throw ConfigError("synthetic: dims must be positive");
  validate_mixture(config.signal, config.dims, "signal");
  validate_mixture(config.background_source, config.dims, "background_source");
  validate_mixture(config.background_target, config.dims, "background_target");
  const auto& n = config.counts;
  if (n.source_signal < 0 || n.source_background < 0 || n.target_signal < 0 ||
      n.target_background < 0) {
    throw ConfigError("synthetic: event counts must be non-negative");
  }
  if (n.source_signal + n.source_background == 0) throw ConfigError("synthetic: no source events requested");
  if (n.target_signal + n.target_background == 0) throw ConfigError("synthetic: no target events requested");
  if (!(config.target_signal_fraction > 0.0 && config.target_signal_fraction < 1.0)) {
    throw ConfigError("synthetic: target_signal_fraction must lie in (0,1)");
  }
}

Dataset generate_synthetic(const SyntheticConfig& config, nn::Rng& rng) {
  validate(config);
  Dataset out;
  out.feature_names = default_feature_names(config.dims);
  out.provenance = "synthetic seed=" + std::to_string(config.seed);
  const auto& n = config.counts;
  out.events.reserve(static_cast<std::size_t>(n.source_signal + n.source_background +
                                              n.target_signal + n.target_background));
  draw(config.signal, config.dims, n.source_signal, Label::Signal, Domain::Source, rng, out);
  draw(config.background_source, config.dims, n.source_background, Label::Background,
       Domain::Source, rng, out);
  draw(config.signal, config.dims, n.target_signal, Label::Signal, Domain::Target, rng, out);
  draw(config.background_target, config.dims, n.target_background, Label::Background,
       Domain::Target, rng, out);
  return out;
}

Dataset generate_synthetic(const SyntheticConfig& config) {
  nn::Rng rng(config.seed);
  return generate_synthetic(config, rng);
}

double mixture_log_density(const Mixture& mixture, std::size_t dims, const std::vector<double>& x) {
  double total_weight = 0.0;
  for (const auto& c : mixture.components) total_weight += c.weight;
  std::vector<double> terms;
  terms.reserve(mixture.components.size());
  for (const auto& c : mixture.components) {
    double sq = 0.0;
    for (std::size_t j = 0; j < dims; ++j) {
      const double d = x[j] - mean_at(c, j);
      sq += d * d;
    }
    terms.push_back(std::log(c.weight / total_weight) -
                    0.5 * static_cast<double>(dims) * std::log(2.0 * std::numbers::pi * c.cov_scale) -
                    0.5 * sq / c.cov_scale);
  }
  const double top = *std::max_element(terms.begin(), terms.end());
  double acc = 0.0;
  for (double t : terms) acc += std::exp(t - top);
  return top + std::log(acc);
}

double bayes_auc(const SyntheticConfig& config, Domain domain, std::size_t per_class,
                 std::uint64_t seed) {
  validate(config);
  nn::Rng rng(seed);
  const Mixture& background =
      domain == Domain::Source ? config.background_source : config.background_target;
  Dataset sample;
  draw(config.signal, config.dims, static_cast<long long>(per_class), Label::Signal, domain, rng, sample);
  draw(background, config.dims, static_cast<long long>(per_class), Label::Background, domain, rng, sample);
  std::vector<double> scores;
  std::vector<Label> labels;
  scores.reserve(sample.events.size());
  for (const Event& e : sample.events) {
    scores.push_back(mixture_log_density(config.signal, config.dims, e.features) -
                     mixture_log_density(background, config.dims, e.features));
    labels.push_back(e.label);
  }
  return metrics::roc_auc(scores, labels, {});
}

SyntheticConfig synthetic_config_from_json(const nlohmann::json& j) {
  SyntheticConfig c = SyntheticConfig::defaults();
  try {
    if (j.contains("dims")) {
      const long long dims = j.at("dims").get<long long>();
      if (dims <= 0) throw ConfigError("synthetic: dims must be positive");
      c.dims = static_cast<std::size_t>(dims);
    }
    c.seed = j.value("seed", c.seed);
    c.target_signal_fraction = j.value("target_signal_fraction", c.target_signal_fraction);
    if (j.contains("signal")) c.signal = mixture_from_json(j.at("signal"));
    if (j.contains("background_source")) c.background_source = mixture_from_json(j.at("background_source"));
    if (j.contains("background_target")) c.background_target = mixture_from_json(j.at("background_target"));
    if (j.contains("counts")) {
      const auto& n = j.at("counts");
      c.counts.source_signal = n.value("source_signal", c.counts.source_signal);
      c.counts.source_background = n.value("source_background", c.counts.source_background);
      c.counts.target_background = n.value("target_background", c.counts.target_background);
      if (n.contains("target_signal")) {
        c.counts.target_signal = n.at("target_signal").get<long long>();
      } else if (c.counts.target_background >= 0 && c.target_signal_fraction > 0.0 &&
                 c.target_signal_fraction < 1.0) {
        c.counts.target_signal = static_cast<long long>(signal_count_for_fraction(
            static_cast<std::size_t>(c.counts.target_background), c.target_signal_fraction));
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("synthetic config: ") + e.what());
  }
  validate(c);
  return c;
}

nlohmann::json to_json(const SyntheticConfig& c) {
  return {{"dims", c.dims},
          {"seed", c.seed},
          {"target_signal_fraction", c.target_signal_fraction},
          {"signal", mixture_to_json(c.signal)},
          {"background_source", mixture_to_json(c.background_source)},
          {"background_target", mixture_to_json(c.background_target)},
          {"counts",
           {{"source_signal", c.counts.source_signal},
            {"source_background", c.counts.source_background},
            {"target_signal", c.counts.target_signal},
            {"target_background", c.counts.target_background}}}};
}

}  // namespace dann::data

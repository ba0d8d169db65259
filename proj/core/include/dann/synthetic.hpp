#pragma once

// Two-domain Gaussian-mixture events. Signal is drawn from one shared mixture
// in both domains; the source and target backgrounds have their own mixtures,
// so the only difference between the domains is the background model.

#include "dann/data.hpp"

#include <nlohmann/json_fwd.hpp>

#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

namespace dann::data {

struct GaussianComponent {
  std::vector<double> mean;  // zero-padded up to `dims`
  double cov_scale = 1.0;    // covariance = cov_scale * I
  double weight = 1.0;
};

struct Mixture {
  std::vector<GaussianComponent> components;
};

struct StratumCounts {
  long long source_signal = 0;
  long long source_background = 0;
  long long target_signal = 0;
  long long target_background = 0;
};

struct SyntheticConfig {
  std::size_t dims = 10;
  Mixture signal;
  Mixture background_source;
  Mixture background_target;
  StratumCounts counts;
  double target_signal_fraction = 0.05;
  std::uint64_t seed = 1;

  // 10 features, 50k events per domain, target background shifted along f1
  // so that a source-only classifier leans on a feature that flips meaning in
  // the target domain.
  static SyntheticConfig defaults();
  // Same as defaults() but the target background equals the source background.
  static SyntheticConfig identical_domains();
};

// Throws ConfigError (negative counts, non-positive covariance scales, ...).
void validate(const SyntheticConfig& config);

Dataset generate_synthetic(const SyntheticConfig& config);
Dataset generate_synthetic(const SyntheticConfig& config, nn::Rng& rng);

// log p(x) under an isotropic Gaussian mixture.
double mixture_log_density(const Mixture& mixture, std::size_t dims, const std::vector<double>& x);

// AUC of the true likelihood ratio on `domain`, estimated by Monte Carlo with
// `per_class` draws of each class.
double bayes_auc(const SyntheticConfig& config, Domain domain, std::size_t per_class,
                 std::uint64_t seed);

// JSON object with keys dims, seed, target_signal_fraction, signal,
// background_source, background_target and counts. Missing keys keep their
// defaults(); counts.target_signal may be omitted and is then derived from
// target_background and target_signal_fraction.
SyntheticConfig synthetic_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const SyntheticConfig& config);

}  // namespace dann::data

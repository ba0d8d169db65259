#include "dann/error.hpp"
#include "dann/metrics.hpp"
#include "dann/synthetic.hpp"

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include <cmath>
#include <numbers>

using namespace dann;
using namespace dann::data;

namespace {

SyntheticConfig small(SyntheticConfig c) {
  c.counts = {3000, 3000, 300, 5700};
  return c;
}

std::vector<double> feature(const Dataset& d, Label label, Domain domain, std::size_t j) {
  std::vector<double> out;
  for (const auto& e : d.events) {
    if (e.label == label && e.domain == domain) out.push_back(e.features[j]);
  }
  return out;
}

double phi(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

}  // namespace

TEST(Synthetic, ExactStratumCounts) {
  const Dataset d = generate_synthetic(small(SyntheticConfig::defaults()));
  EXPECT_EQ(d.count(Label::Signal, Domain::Source), 3000u);
  EXPECT_EQ(d.count(Label::Background, Domain::Source), 3000u);
  EXPECT_EQ(d.count(Label::Background, Domain::Target), 5700u);
  EXPECT_EQ(d.count(Label::Signal, Domain::Target), 300u);
  EXPECT_EQ(d.dim(), 10u);
  EXPECT_NO_THROW(validate(d));
}

TEST(Synthetic, DefaultsMatchTargetFraction) {
  const auto c = SyntheticConfig::defaults();
  const double f = static_cast<double>(c.counts.target_signal) /
                   static_cast<double>(c.counts.target_signal + c.counts.target_background);
  EXPECT_DOUBLE_EQ(f, c.target_signal_fraction);
  EXPECT_EQ(c.counts.source_signal + c.counts.source_background, 50000);
  EXPECT_EQ(c.counts.target_signal + c.counts.target_background, 50000);
}

TEST(Synthetic, DeterministicPerSeed) {
  auto c = small(SyntheticConfig::defaults());
  const Dataset a = generate_synthetic(c);
  const Dataset b = generate_synthetic(c);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a.events[i].features, b.events[i].features);
  c.seed = 2;
  const Dataset other = generate_synthetic(c);
  EXPECT_NE(a.events[0].features, other.events[0].features);
}

TEST(Synthetic, IdenticalDomainsAreIndistinguishable) {
  const Dataset d = generate_synthetic(small(SyntheticConfig::identical_domains()));
  for (std::size_t j : {0u, 1u, 5u}) {
    const auto s = feature(d, Label::Background, Domain::Source, j);
    const auto t = feature(d, Label::Background, Domain::Target, j);
    EXPECT_LT(metrics::ks_distance(s, {}, t, {}), 0.04) << "feature " << j;
  }
}

TEST(Synthetic, DefaultBackgroundsDifferAlongSecondFeature) {
  const Dataset d = generate_synthetic(small(SyntheticConfig::defaults()));
  const auto s = feature(d, Label::Background, Domain::Source, 1);
  const auto t = feature(d, Label::Background, Domain::Target, 1);
  // unit-variance normals 1.4 apart: sup |F_a - F_b| = 2 Phi(0.7) - 1
  EXPECT_NEAR(metrics::ks_distance(s, {}, t, {}), 2.0 * phi(0.7) - 1.0, 0.04);
  const auto s0 = feature(d, Label::Background, Domain::Source, 0);
  const auto t0 = feature(d, Label::Background, Domain::Target, 0);
  EXPECT_LT(metrics::ks_distance(s0, {}, t0, {}), 0.04);
}

TEST(Synthetic, BayesAucMatchesClosedForm) {
  const auto c = SyntheticConfig::defaults();
  // equal isotropic covariances: AUC = Phi(|mu_s - mu_b| / sqrt 2)
  const double expected = phi(std::sqrt(1.0 * 1.0 + 0.7 * 0.7) / std::numbers::sqrt2);
  EXPECT_NEAR(expected, 0.806, 5e-4);
  EXPECT_NEAR(bayes_auc(c, Domain::Source, 20000, 3), expected, 0.01);
  EXPECT_NEAR(bayes_auc(c, Domain::Target, 20000, 3), expected, 0.01);
}

TEST(Synthetic, MixtureDensityIsNormalised) {
  Mixture m{{{{0.0}, 1.0, 1.0}, {{2.0}, 0.25, 3.0}}};
  double integral = 0.0;
  const double dx = 1e-3;
  for (double x = -10.0; x <= 10.0; x += dx) integral += std::exp(mixture_log_density(m, 1, {x})) * dx;
  EXPECT_NEAR(integral, 1.0, 1e-6);
  EXPECT_NEAR(mixture_log_density(Mixture{{{{0.0, 0.0}, 1.0, 1.0}}}, 2, {0.0, 0.0}),
              -std::log(2.0 * std::numbers::pi), 1e-14);
}

TEST(Synthetic, ValidationRejectsBadConfigs) {
  auto neg = SyntheticConfig::defaults();
  neg.counts.source_signal = -1;
  EXPECT_THROW(validate(neg), ConfigError);
  auto cov = SyntheticConfig::defaults();
  cov.background_target.components[0].cov_scale = 0.0;
  EXPECT_THROW(validate(cov), ConfigError);
  auto wide = SyntheticConfig::defaults();
  wide.signal.components[0].mean.assign(11, 0.0);
  EXPECT_THROW(validate(wide), ConfigError);
  auto empty = SyntheticConfig::defaults();
  empty.counts.target_signal = empty.counts.target_background = 0;
  EXPECT_THROW(generate_synthetic(empty), ConfigError);
}

TEST(Synthetic, JsonRoundTripAndDerivedSignalCount) {
  const auto c = SyntheticConfig::defaults();
  const auto back = synthetic_config_from_json(to_json(c));
  EXPECT_EQ(to_json(back), to_json(c));

  const auto j = nlohmann::json::parse(R"({"counts": {"target_background": 95}, "target_signal_fraction": 0.05})");
  const auto derived = synthetic_config_from_json(j);
  EXPECT_EQ(derived.counts.target_signal, 5);
  EXPECT_THROW(synthetic_config_from_json(nlohmann::json::parse(R"({"dims": 0})")), ConfigError);
}

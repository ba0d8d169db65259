#include "dann/error.hpp"
#include "dann/experiments.hpp"
#include "dann/synthetic.hpp"

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include <cmath>
#include <random>
#include <set>
#include <sstream>

using namespace dann;
using namespace dann::experiments;

namespace {

ExperimentData small_data(bool identical = false) {
  auto c = identical ? data::SyntheticConfig::identical_domains() : data::SyntheticConfig::defaults();
  c.counts = {600, 600, 260, 1140};
  c.seed = 4;
  return prepare_experiment_data(data::generate_synthetic(c), 0.5, 9);
}

ScanSettings quick_settings() {
  ScanSettings s;
  s.train.batch_size = 128;
  s.train.stop_window = 2;
  s.train.epoch_bounds = {4, 4};
  s.repeats = 2;
  s.seed = 21;
  return s;
}

RunMetrics run(double as, double ks, double at = 0.5) {
  RunMetrics m;
  m.auc_source = as;
  m.auc_target = at;
  m.ks = ks;
  m.ams = 1.0;
  return m;
}

}  // namespace

TEST(Percentile, Examples) {
  EXPECT_EQ(aggregate_percentile({1, 2, 3, 4, 5}, 50.0), 3.0);
  EXPECT_EQ(aggregate_percentile({5, 1, 4, 2, 3}, 50.0), 3.0);
  for (double p : {0.0, 15.8, 50.0, 84.2, 100.0}) EXPECT_EQ(aggregate_percentile({0.37}, p), 0.37);
  EXPECT_DOUBLE_EQ(aggregate_percentile({0, 10}, 15.8), 1.58);
  EXPECT_EQ(aggregate_percentile({1, 2, 3}, 0.0), 1.0);
  EXPECT_EQ(aggregate_percentile({1, 2, 3}, 100.0), 3.0);
  EXPECT_THROW(aggregate_percentile({}, 50.0), DataError);
  EXPECT_THROW(aggregate_percentile({1.0}, 101.0), ConfigError);
}

TEST(Percentile, UniformSampleMonteCarlo) {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> v(200);
  for (double& x : v) x = u(rng);
  // binomial standard error of the 15.8% quantile with n = 200 is about 0.026
  EXPECT_NEAR(aggregate_percentile(v, 15.8), 0.158, 0.08);
}

TEST(Aggregate, BandContainsMedianAndSkipsNaN) {
  const std::vector<double> v{0.3, std::nan(""), 0.1, 0.9, 0.5};
  const Aggregate a = aggregate(v);
  EXPECT_EQ(a.n, 4u);
  EXPECT_LE(a.lo, a.median);
  EXPECT_LE(a.median, a.hi);
  EXPECT_DOUBLE_EQ(a.median, 0.4);
  EXPECT_DOUBLE_EQ(a.mean, 0.45);
  const Aggregate none = aggregate(std::vector<double>{std::nan("")});
  EXPECT_EQ(none.n, 0u);
  EXPECT_TRUE(std::isnan(none.median));
}

TEST(Seeds, DistinctAcrossGridAndRepeats) {
  std::set<std::uint64_t> seen;
  for (std::uint64_t p = 0; p < 20; ++p) {
    for (std::uint64_t r = 0; r < 50; ++r) seen.insert(derive_seed(7, p, r));
  }
  EXPECT_EQ(seen.size(), 1000u);
  EXPECT_EQ(derive_seed(7, 3, 4), derive_seed(7, 3, 4));
  EXPECT_NE(derive_seed(7, 3, 4), derive_seed(8, 3, 4));
}

TEST(SelectLambda, SingletonCandidateWins) {
  const std::vector<LambdaCandidate> c{{0.0, 0.3, 0.80}, {1.0, 0.01, 0.60}, {10.0, 0.2, 0.79}};
  EXPECT_EQ(select_lambda(c, 0.02), 1.0);
}

TEST(SelectLambda, TieInKsGoesToSourceAuc) {
  const std::vector<LambdaCandidate> c{{1.0, 0.020, 0.71}, {3.0, 0.015, 0.74}, {10.0, 0.3, 0.9}};
  EXPECT_EQ(select_lambda(c, 0.01), 3.0);
  const std::vector<LambdaCandidate> same{{5.0, 0.02, 0.74}, {2.0, 0.02, 0.74}};
  EXPECT_EQ(select_lambda(same, 0.01), 2.0);
}

TEST(SelectLambda, KneeMatchesBruteForce) {
  // ks and source AUC both fall with lambda
  std::vector<LambdaCandidate> c;
  for (int i = 0; i < 12; ++i) {
    const double lambda = std::pow(10.0, -2.0 + 0.5 * i);
    c.push_back({lambda, 0.3 / (1.0 + lambda) + 0.004, 0.80 - 0.01 * i});
  }
  for (double tol : {0.0, 0.005, 0.01, 0.05, 1.0}) {
    double min_ks = 1.0;
    for (const auto& x : c) min_ks = std::min(min_ks, x.ks);
    double best_auc = -1.0;
    double expect = -1.0;
    for (const auto& x : c) {
      if (x.ks <= min_ks + tol && x.auc_source > best_auc) {
        best_auc = x.auc_source;
        expect = x.lambda;
      }
    }
    EXPECT_EQ(select_lambda(c, tol), expect) << tol;
  }
  EXPECT_EQ(select_lambda(c, 0.0), c.back().lambda);
  EXPECT_EQ(select_lambda(c, 1.0), c.front().lambda);
}

TEST(SelectLambda, UsesMediansOfAScan) {
  ScanResult scan;
  scan.points.push_back(summarize(0.0, {run(0.80, 0.30), run(0.81, 0.31), run(0.79, 0.29)}));
  scan.points.push_back(summarize(1.0, {run(0.75, 0.02), run(0.74, 0.50), run(0.76, 0.03)}));
  scan.points.push_back(summarize(10.0, {run(0.70, 0.02), run(0.71, 0.02), run(0.69, 0.02)}));
  EXPECT_EQ(select_lambda(scan, 0.02), 1.0);
  EXPECT_EQ(select_lambda(scan, 0.0), 10.0);
}

TEST(Summarize, DivergedRunsAreCountedNotAggregated) {
  RunMetrics bad = run(NAN, NAN);
  bad.diverged = true;
  bad.ams = NAN;
  const ScanPoint p = summarize(2.0, {run(0.7, 0.1), bad, run(0.8, 0.3)});
  EXPECT_EQ(p.repeats, 3u);
  EXPECT_EQ(p.diverged, 1u);
  EXPECT_EQ(p.auc_source.n, 2u);
  EXPECT_EQ(p.repeats, p.auc_source.n + p.diverged);
  EXPECT_DOUBLE_EQ(p.auc_source.median, 0.75);
}

TEST(Summarize, SingleRunCollapsesTheBand) {
  const ScanPoint p = summarize(0.5, {run(0.77, 0.12, 0.66)});
  EXPECT_EQ(p.auc_target.lo, 0.66);
  EXPECT_EQ(p.auc_target.median, 0.66);
  EXPECT_EQ(p.auc_target.hi, 0.66);
}

TEST(PrepareData, HalvesEveryStratum) {
  const auto d = small_data();
  EXPECT_EQ(d.source_train.count(data::Label::Signal, data::Domain::Source), 300u);
  EXPECT_EQ(d.source_test.count(data::Label::Background, data::Domain::Source), 300u);
  EXPECT_EQ(d.target_train.count(data::Label::Signal, data::Domain::Target), 130u);
  EXPECT_EQ(d.target_test.count(data::Label::Background, data::Domain::Target), 570u);
  EXPECT_EQ(d.target_train.count(data::Label::Signal, data::Domain::Source), 0u);
}

TEST(Evaluate, KsReadsNoTargetLabels) {
  const auto d = small_data();
  auto s = quick_settings();
  auto tc = s.train;
  tc.lambda = 0.0;
  const auto r = train(d.source_train, d.target_train, s.dann, tc);
  const auto a = evaluate(r.network, d.source_test.events, d.target_test.events, s.eval);
  auto relabelled = d.target_test.events;
  for (auto& e : relabelled) e.label = data::Label::Background;
  relabelled[0].label = data::Label::Signal;
  const double b_ks = evaluate(r.network, d.source_test.events, relabelled, s.eval).metrics.ks;
  EXPECT_EQ(a.metrics.ks, b_ks);
  EXPECT_GE(a.metrics.auc_source, 0.5);
  EXPECT_NEAR(a.purity_curve.points.front().purity, 0.05, 1e-12);
}

TEST(LambdaScan, IndependentOfJobs) {
  const auto d = small_data();
  auto s = quick_settings();
  const std::vector<double> grid{0.0, 1.0, 10.0};
  s.jobs = 1;
  const ScanResult one = lambda_scan(d, grid, s);
  s.jobs = 3;
  const ScanResult three = lambda_scan(d, grid, s);
  EXPECT_EQ(one, three);
  EXPECT_EQ(to_json(one).dump(), to_json(three).dump());
  ASSERT_EQ(one.points.size(), 3u);
  for (const auto& p : one.points) {
    EXPECT_EQ(p.repeats, 2u);
    EXPECT_EQ(p.repeats, p.auc_source.n + p.diverged);
    EXPECT_LE(p.ks.lo, p.ks.median);
    EXPECT_LE(p.ks.median, p.ks.hi);
  }
  EXPECT_NE(std::find(grid.begin(), grid.end(), one.selected_lambda), grid.end());
}

TEST(LambdaScan, GridExtensionKeepsEarlierRuns) {
  const auto d = small_data();
  auto s = quick_settings();
  s.repeats = 1;
  const std::vector<double> short_grid{0.0};
  const std::vector<double> long_grid{0.0, 5.0};
  EXPECT_EQ(lambda_scan(d, short_grid, s).points[0], lambda_scan(d, long_grid, s).points[0]);
}

TEST(LambdaScan, RejectsBadInput) {
  const auto d = small_data();
  auto s = quick_settings();
  EXPECT_THROW(lambda_scan(d, std::vector<double>{}, s), ConfigError);
  EXPECT_THROW(lambda_scan(d, std::vector<double>{-1.0}, s), ConfigError);
  s.repeats = 0;
  EXPECT_THROW(lambda_scan(d, std::vector<double>{0.0}, s), ConfigError);
}

TEST(FractionScan, ModesAgreeAtTheSourceFraction) {
  const auto d = small_data();
  auto s = quick_settings();
  s.repeats = 1;
  const std::vector<double> f{0.05};
  const auto matched = signal_fraction_scan(d, FractionMode::Matched, f, s);
  const auto mismatched = signal_fraction_scan(d, FractionMode::MismatchedTarget, f, s, 0.05);
  ASSERT_EQ(matched.points.size(), 1u);
  EXPECT_EQ(matched.points[0], mismatched.points[0]);
}

TEST(FractionScan, InfeasibleFractionsAreSkipped) {
  const auto d = small_data();
  auto s = quick_settings();
  s.repeats = 1;
  // the target training pool holds 130 signal next to 570 background (18.6%)
  const std::vector<double> f{0.1, 0.3};
  const auto r = signal_fraction_scan(d, FractionMode::MismatchedTarget, f, s);
  ASSERT_EQ(r.points.size(), 1u);
  EXPECT_EQ(r.points[0].fraction, 0.1);
  EXPECT_EQ(r.skipped, std::vector<double>{0.3});
  EXPECT_THROW(signal_fraction_scan(d, FractionMode::Matched, std::vector<double>{1.5}, s), ConfigError);
  EXPECT_EQ(parse_fraction_mode(to_string(FractionMode::MismatchedTarget)), FractionMode::MismatchedTarget);
}

TEST(Export, ScanCsvRows) {
  ScanResult scan;
  scan.points.push_back(summarize(0.0, {run(0.8, 0.3)}));
  scan.points.push_back(summarize(1.0, {run(0.7, 0.1)}));
  std::ostringstream out;
  write_scan_csv(scan, out);
  std::istringstream in(out.str());
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "lambda,metric,median,lo,hi,n");
  int rows = 0;
  while (std::getline(in, line)) ++rows;
  EXPECT_EQ(rows, 8);
  const auto j = to_json(scan);
  EXPECT_EQ(j.at("points").size(), 2u);
}

#pragma once

// Repeated seeded training runs: lambda scans with percentile bands, the
// unsupervised lambda selection rule and signal-fraction scans.

#include "dann/data.hpp"
#include "dann/metrics.hpp"
#include "dann/model.hpp"
#include "dann/training.hpp"

#include <nlohmann/json_fwd.hpp>

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

namespace dann::experiments {

// Linear interpolation between closest ranks of the sorted sample; p in [0,100].
double aggregate_percentile(std::vector<double> values, double p);

// Run seed for grid point `point` and repeat `repeat`.
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t point, std::uint64_t repeat);

struct EvalSettings {
  double signal_fraction = 0.05;    // assumed target signal share
  std::size_t histogram_bins = 20;
  double ams_events = 50000.0;
  double flat_uncertainty = 0.10;
  double purity_efficiency = 0.5;
};

struct RunMetrics {
  double auc_source = 0.0;
  double auc_target = 0.0;
  double ks = 0.0;
  double ams = 0.0;          // NaN when an empty-background bin makes it undefined
  double purity = 0.0;       // target purity at EvalSettings::purity_efficiency
  std::size_t epochs = 0;
  double final_label_loss = 0.0;  // training label loss of the last epoch
  std::uint64_t seed = 0;
  bool diverged = false;

  friend bool operator==(const RunMetrics&, const RunMetrics&) = default;
};

struct Evaluation {
  RunMetrics metrics;
  metrics::ResponseHistogram histogram;
  metrics::AmsBins ams_bins;
  metrics::PurityCurve purity_curve;
};

// Metrics of a trained network on labelled source and target events. KS
// compares source scores, reweighted to the assumed target signal share,
// with target scores and reads no target labels.
Evaluation evaluate(const DannNetwork& net, const std::vector<data::Event>& source,
                    const std::vector<data::Event>& target, const EvalSettings& settings);

struct Aggregate {
  double median = 0.0;
  double lo = 0.0;  // 15.8th percentile
  double hi = 0.0;  // 84.2nd percentile
  double mean = 0.0;
  std::size_t n = 0;

  friend bool operator==(const Aggregate&, const Aggregate&) = default;
};

// Over the finite values only; n = 0 and NaN fields when there are none.
Aggregate aggregate(std::span<const double> values);

struct ScanPoint {
  double lambda = 0.0;
  std::vector<RunMetrics> runs;  // one per repeat, in repeat order
  std::size_t repeats = 0;
  std::size_t diverged = 0;
  Aggregate auc_source;
  Aggregate auc_target;
  Aggregate ks;
  Aggregate ams;

  friend bool operator==(const ScanPoint&, const ScanPoint&) = default;
};

struct ScanResult {
  std::vector<ScanPoint> points;
  double selected_lambda = 0.0;
  double ks_tolerance = 0.01;
  std::uint64_t seed = 0;
  std::size_t repeats = 0;

  friend bool operator==(const ScanResult&, const ScanResult&) = default;
};

// Train/test material for a scan. Training pools are split further by
// train() into training and validation events.
struct ExperimentData {
  data::Dataset source_train;
  data::Dataset target_train;
  data::Dataset source_test;
  data::Dataset target_test;
};

// Stratified split of a two-domain dataset; `test_fraction` of every stratum
// is kept for testing.
ExperimentData prepare_experiment_data(const data::Dataset& dataset, double test_fraction,
                                       std::uint64_t seed);

struct ScanSettings {
  DannConfig dann;
  TrainConfig train;
  EvalSettings eval;
  std::size_t repeats = 20;
  std::uint64_t seed = 1;
  std::size_t jobs = 1;
  double ks_tolerance = 0.01;
};

ScanPoint summarize(double lambda, std::vector<RunMetrics> runs);

// Runs repeats x grid trainings on up to `jobs` threads. The result does not
// depend on `jobs`.
ScanResult lambda_scan(const ExperimentData& data, std::span<const double> grid,
                       const ScanSettings& settings);

// Only the fields the selection rule may see.
struct LambdaCandidate {
  double lambda = 0.0;
  double ks = 0.0;
  double auc_source = 0.0;
};

// Among candidates whose ks is within `ks_tolerance` of the smallest, the one
// with the largest auc_source (smaller lambda on ties).
double select_lambda(std::span<const LambdaCandidate> candidates, double ks_tolerance = 0.01);
// Uses the median ks and median auc_source of every point with successful runs.
double select_lambda(const ScanResult& scan, double ks_tolerance = 0.01);

enum class FractionMode { Matched, MismatchedTarget };

struct FractionPoint {
  double fraction = 0.0;
  std::vector<RunMetrics> runs;
  std::size_t repeats = 0;
  std::size_t diverged = 0;
  Aggregate auc_source;
  Aggregate auc_target;
  Aggregate ks;

  friend bool operator==(const FractionPoint&, const FractionPoint&) = default;
};

struct FractionScanResult {
  FractionMode mode = FractionMode::Matched;
  double source_fraction = 0.05;  // fixed source share in MismatchedTarget mode
  std::vector<FractionPoint> points;
  std::vector<double> skipped;

  friend bool operator==(const FractionScanResult&, const FractionScanResult&) = default;
};

// Matched: source and target signal shares both set to each fraction, and the
// training assumes that share. MismatchedTarget: source kept at
// `source_fraction` (also the assumed share), target varied. Signal events
// are subsampled from the training pools; infeasible fractions are skipped
// with a warning.
FractionScanResult signal_fraction_scan(const ExperimentData& data, FractionMode mode,
                                        std::span<const double> fractions,
                                        const ScanSettings& settings, double source_fraction = 0.05);

std::string to_string(FractionMode mode);
FractionMode parse_fraction_mode(const std::string& name);

nlohmann::json to_json(const RunMetrics& m);
nlohmann::json to_json(const Aggregate& a);
nlohmann::json to_json(const ScanResult& scan);
nlohmann::json to_json(const FractionScanResult& scan);
// lambda,metric,median,lo,hi,n
void write_scan_csv(const ScanResult& scan, std::ostream& out);
// fraction,metric,median,lo,hi,n
void write_fraction_csv(const FractionScanResult& scan, std::ostream& out);

}  // namespace dann::experiments

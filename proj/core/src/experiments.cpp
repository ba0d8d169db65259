#include "dann/experiments.hpp"

#include "dann/error.hpp"
#include "dann/log.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <limits>
#include <mutex>
#include <ostream>
#include <thread>

namespace dann::experiments {

using data::Domain;
using data::Event;
using data::Label;

double aggregate_percentile(std::vector<double> values, double p) {
  if (values.empty()) throw DataError("aggregate_percentile: empty sample");
  if (!(p >= 0.0 && p <= 100.0)) throw ConfigError("aggregate_percentile: p must lie in [0,100]");
  std::sort(values.begin(), values.end());
  const double pos = p / 100.0 * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  const double t = pos - static_cast<double>(lo);
  return values[lo] + t * (values[hi] - values[lo]);
}

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t master, std::uint64_t point, std::uint64_t repeat) {
  return splitmix64(splitmix64(splitmix64(master) ^ point) ^ (repeat * 0xd1342543de82ef95ULL));
}

Aggregate aggregate(std::span<const double> values) {
  std::vector<double> finite;
  for (double v : values) {
    if (std::isfinite(v)) finite.push_back(v);
  }
  Aggregate a;
  a.n = finite.size();
  if (finite.empty()) {
    a.median = a.lo = a.hi = a.mean = std::numeric_limits<double>::quiet_NaN();
    return a;
  }
  a.median = aggregate_percentile(finite, 50.0);
  a.lo = aggregate_percentile(finite, 15.8);
  a.hi = aggregate_percentile(finite, 84.2);
  double s = 0.0;
  for (double v : finite) s += v;
  a.mean = s / static_cast<double>(finite.size());
  return a;
}

// ---------------------------------------------------------------------------

Evaluation evaluate(const DannNetwork& net, const std::vector<Event>& source,
                    const std::vector<Event>& target, const EvalSettings& settings) {
  if (source.empty() || target.empty()) throw DataError("evaluate: both domains need events");
  const std::vector<double> ys = predict(net, source);
  const std::vector<double> yt = predict(net, target);

  auto columns = [](const std::vector<Event>& events, std::vector<Label>& labels,
                    std::vector<double>& weights) {
    for (const Event& e : events) {
      labels.push_back(e.label);
      weights.push_back(e.weight);
    }
  };
  std::vector<Label> ls;
  std::vector<Label> lt;
  std::vector<double> ws;
  std::vector<double> wt;
  columns(source, ls, ws);
  columns(target, lt, wt);

  Evaluation ev;
  RunMetrics& m = ev.metrics;
  m.auc_source = metrics::roc_auc(ys, ls, ws);
  m.auc_target = metrics::roc_auc(yt, lt, wt);

  std::vector<Event> both(source);
  both.insert(both.end(), target.begin(), target.end());
  const std::vector<double> dw = balance_weights(both, BalanceHead::Domain, settings.signal_fraction);
  const std::span<const double> source_reweighted(dw.data(), source.size());
  m.ks = metrics::ks_distance(ys, source_reweighted, yt, wt);

  std::vector<double> scores(ys);
  scores.insert(scores.end(), yt.begin(), yt.end());
  std::vector<Label> labels(ls);
  labels.insert(labels.end(), lt.begin(), lt.end());
  std::vector<Domain> domains(source.size(), Domain::Source);
  domains.resize(both.size(), Domain::Target);
  std::vector<double> weights(ws);
  weights.insert(weights.end(), wt.begin(), wt.end());
  ev.histogram = metrics::response_histogram(scores, labels, domains, weights, settings.histogram_bins);
  ev.ams_bins = metrics::ams_bins(ev.histogram, settings.ams_events, settings.signal_fraction);
  try {
    m.ams = metrics::ams(metrics::merge_empty_background_bins(ev.ams_bins), settings.flat_uncertainty);
  } catch (const DataError& e) {
    log::warn(std::string("evaluate: AMS undefined (") + e.what() + ")");
    m.ams = std::numeric_limits<double>::quiet_NaN();
  }

  ev.purity_curve = metrics::purity_efficiency_curve(yt, lt, wt, settings.signal_fraction);
  m.purity = ev.purity_curve.purity_at_efficiency(settings.purity_efficiency);
  return ev;
}

ExperimentData prepare_experiment_data(const data::Dataset& dataset, double test_fraction,
                                       std::uint64_t seed) {
  auto [test, train] = data::split(dataset, test_fraction, seed);
  ExperimentData d;
  d.source_train = train.select(Domain::Source);
  d.target_train = train.select(Domain::Target);
  d.source_test = test.select(Domain::Source);
  d.target_test = test.select(Domain::Target);
  return d;
}

namespace {

// Calls fn(i) for i in [0, n) on up to `jobs` threads. The first exception is rethrown.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t jobs, Fn fn) {
  jobs = std::max<std::size_t>(1, std::min(jobs, n));
  if (jobs == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < jobs; ++t) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

RunMetrics run_once(const ExperimentData& data, const data::Dataset& source_train,
                    const data::Dataset& target_train, const DannConfig& dann, TrainConfig train_config,
                    const EvalSettings& eval, std::uint64_t seed) {
  train_config.seed = seed;
  RunMetrics m;
  m.seed = seed;
  try {
    TrainResult r = train(source_train, target_train, dann, train_config);
    m = evaluate(r.network, data.source_test.events, data.target_test.events, eval).metrics;
    m.seed = seed;
    m.epochs = r.record.epochs();
    m.final_label_loss = r.record.train.back().label;
  } catch (const TrainingDiverged& e) {
    log::warn(std::string("run with seed ") + std::to_string(seed) + " diverged: " + e.what());
    m.diverged = true;
    m.epochs = e.record().epochs();
    m.auc_source = m.auc_target = m.ks = m.ams = m.purity = m.final_label_loss =
        std::numeric_limits<double>::quiet_NaN();
  }
  return m;
}

template <typename Point>
void fill_common(Point& p, std::vector<RunMetrics> runs) {
  p.repeats = runs.size();
  std::vector<double> as;
  std::vector<double> at;
  std::vector<double> ks;
  for (const RunMetrics& m : runs) {
    if (m.diverged) {
      ++p.diverged;
      continue;
    }
    as.push_back(m.auc_source);
    at.push_back(m.auc_target);
    ks.push_back(m.ks);
  }
  p.auc_source = aggregate(as);
  p.auc_target = aggregate(at);
  p.ks = aggregate(ks);
  p.runs = std::move(runs);
}

}  // namespace

ScanPoint summarize(double lambda, std::vector<RunMetrics> runs) {
  ScanPoint p;
  p.lambda = lambda;
  std::vector<double> ams;
  for (const RunMetrics& m : runs) {
    if (!m.diverged) ams.push_back(m.ams);
  }
  p.ams = aggregate(ams);
  fill_common(p, std::move(runs));
  return p;
}

ScanResult lambda_scan(const ExperimentData& data, std::span<const double> grid,
                       const ScanSettings& settings) {
  if (grid.empty()) throw ConfigError("lambda_scan: empty grid");
  if (settings.repeats < 1) throw ConfigError("lambda_scan: repeats must be at least 1");
  for (double l : grid) {
    if (!(l >= 0.0) || !std::isfinite(l)) throw ConfigError("lambda_scan: grid values must be finite and >= 0");
  }
  validate(settings.train);
  const std::size_t n = grid.size() * settings.repeats;
  std::vector<RunMetrics> runs(n);
  parallel_for(n, settings.jobs, [&](std::size_t task) {
    const std::size_t point = task / settings.repeats;
    const std::size_t repeat = task % settings.repeats;
    TrainConfig tc = settings.train;
    tc.lambda = grid[point];
    runs[task] = run_once(data, data.source_train, data.target_train, settings.dann, tc, settings.eval,
                          derive_seed(settings.seed, point, repeat));
  });

  ScanResult result;
  result.seed = settings.seed;
  result.repeats = settings.repeats;
  result.ks_tolerance = settings.ks_tolerance;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const auto first = runs.begin() + static_cast<std::ptrdiff_t>(i * settings.repeats);
    result.points.push_back(
        summarize(grid[i], std::vector<RunMetrics>(first, first + static_cast<std::ptrdiff_t>(settings.repeats))));
  }
  result.selected_lambda = select_lambda(result, settings.ks_tolerance);
  return result;
}

double select_lambda(std::span<const LambdaCandidate> candidates, double ks_tolerance) {
  if (candidates.empty()) throw DataError("select_lambda: no candidates");
  double min_ks = std::numeric_limits<double>::infinity();
  for (const auto& c : candidates) min_ks = std::min(min_ks, c.ks);
  const LambdaCandidate* best = nullptr;
  for (const auto& c : candidates) {
    if (!(c.ks <= min_ks + ks_tolerance)) continue;
    if (best == nullptr || c.auc_source > best->auc_source ||
        (c.auc_source == best->auc_source && c.lambda < best->lambda)) {
      best = &c;
    }
  }
  return best->lambda;
}

double select_lambda(const ScanResult& scan, double ks_tolerance) {
  std::vector<LambdaCandidate> candidates;
  for (const ScanPoint& p : scan.points) {
    if (p.ks.n == 0 || p.auc_source.n == 0) continue;
    candidates.push_back({p.lambda, p.ks.median, p.auc_source.median});
  }
  if (candidates.empty()) throw NumericalError("select_lambda: every run of every grid point diverged");
  return select_lambda(candidates, ks_tolerance);
}

// ---------------------------------------------------------------------------

std::string to_string(FractionMode mode) {
  return mode == FractionMode::Matched ? "matched" : "mismatched-target";
}

FractionMode parse_fraction_mode(const std::string& name) {
  if (name == "matched") return FractionMode::Matched;
  if (name == "mismatched-target" || name == "mismatched") return FractionMode::MismatchedTarget;
  throw ConfigError("fraction mode must be 'matched' or 'mismatched-target', got '" + name + "'");
}

FractionScanResult signal_fraction_scan(const ExperimentData& data, FractionMode mode,
                                        std::span<const double> fractions,
                                        const ScanSettings& settings, double source_fraction) {
  if (fractions.empty()) throw ConfigError("signal_fraction_scan: no fractions");
  if (settings.repeats < 1) throw ConfigError("signal_fraction_scan: repeats must be at least 1");
  for (double f : fractions) {
    if (!(f > 0.0 && f < 1.0)) throw ConfigError("signal_fraction_scan: fractions must lie in (0,1)");
  }
  FractionScanResult result;
  result.mode = mode;
  result.source_fraction = source_fraction;

  struct Prepared {
    double fraction;
    std::size_t index;
    data::Dataset source;
    data::Dataset target;
    double assumed;
  };
  std::vector<Prepared> prepared;
  for (std::size_t i = 0; i < fractions.size(); ++i) {
    const double f = fractions[i];
    const double fs = mode == FractionMode::Matched ? f : source_fraction;
    nn::Rng rng(derive_seed(settings.seed, i, std::numeric_limits<std::uint64_t>::max()));
    try {
      data::Dataset s = data::subsample_to_fraction(data.source_train, Domain::Source, fs, rng);
      data::Dataset t = data::subsample_to_fraction(data.target_train, Domain::Target, f, rng);
      prepared.push_back({f, i, std::move(s), std::move(t), fs});
    } catch (const DataError& e) {
      log::warn("signal_fraction_scan: skipping fraction " + std::to_string(f) + ": " + e.what());
      result.skipped.push_back(f);
    }
  }

  const std::size_t n = prepared.size() * settings.repeats;
  std::vector<RunMetrics> runs(n);
  parallel_for(n, settings.jobs, [&](std::size_t task) {
    const Prepared& p = prepared[task / settings.repeats];
    const std::size_t repeat = task % settings.repeats;
    TrainConfig tc = settings.train;
    tc.target_signal_fraction = p.assumed;
    EvalSettings es = settings.eval;
    es.signal_fraction = p.assumed;
    runs[task] = run_once(data, p.source, p.target, settings.dann, tc, es,
                          derive_seed(settings.seed, p.index, repeat));
  });

  for (std::size_t k = 0; k < prepared.size(); ++k) {
    FractionPoint fp;
    fp.fraction = prepared[k].fraction;
    const auto first = runs.begin() + static_cast<std::ptrdiff_t>(k * settings.repeats);
    fill_common(fp, std::vector<RunMetrics>(first, first + static_cast<std::ptrdiff_t>(settings.repeats)));
    result.points.push_back(std::move(fp));
  }
  return result;
}

// ---------------------------------------------------------------------------

nlohmann::json to_json(const RunMetrics& m) {
  auto num = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); };
  return {{"seed", m.seed},
          {"diverged", m.diverged},
          {"epochs", m.epochs},
          {"auc_source", num(m.auc_source)},
          {"auc_target", num(m.auc_target)},
          {"ks", num(m.ks)},
          {"ams", num(m.ams)},
          {"purity", num(m.purity)},
          {"final_label_loss", num(m.final_label_loss)}};
}

nlohmann::json to_json(const Aggregate& a) {
  auto num = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); };
  return {{"median", num(a.median)}, {"p15_8", num(a.lo)}, {"p84_2", num(a.hi)}, {"mean", num(a.mean)}, {"n", a.n}};
}

nlohmann::json to_json(const ScanResult& scan) {
  nlohmann::json points = nlohmann::json::array();
  for (const ScanPoint& p : scan.points) {
    nlohmann::json runs = nlohmann::json::array();
    for (const RunMetrics& m : p.runs) runs.push_back(to_json(m));
    points.push_back({{"lambda", p.lambda},
                      {"repeats", p.repeats},
                      {"diverged", p.diverged},
                      {"auc_source", to_json(p.auc_source)},
                      {"auc_target", to_json(p.auc_target)},
                      {"ks", to_json(p.ks)},
                      {"ams", to_json(p.ams)},
                      {"runs", runs}});
  }
  return {{"seed", scan.seed},
          {"repeats", scan.repeats},
          {"ks_tolerance", scan.ks_tolerance},
          {"selected_lambda", scan.selected_lambda},
          {"points", points}};
}

nlohmann::json to_json(const FractionScanResult& scan) {
  nlohmann::json points = nlohmann::json::array();
  for (const FractionPoint& p : scan.points) {
    nlohmann::json runs = nlohmann::json::array();
    for (const RunMetrics& m : p.runs) runs.push_back(to_json(m));
    points.push_back({{"fraction", p.fraction},
                      {"repeats", p.repeats},
                      {"diverged", p.diverged},
                      {"auc_source", to_json(p.auc_source)},
                      {"auc_target", to_json(p.auc_target)},
                      {"ks", to_json(p.ks)},
                      {"runs", runs}});
  }
  return {{"mode", to_string(scan.mode)},
          {"source_fraction", scan.source_fraction},
          {"skipped", scan.skipped},
          {"points", points}};
}

namespace {

void csv_row(std::ostream& out, double x, const char* metric, const Aggregate& a) {
  out << x << ',' << metric << ',' << a.median << ',' << a.lo << ',' << a.hi << ',' << a.n << '\n';
}

}  // namespace

void write_scan_csv(const ScanResult& scan, std::ostream& out) {
  const auto precision = out.precision(17);
  out << "lambda,metric,median,lo,hi,n\n";
  for (const ScanPoint& p : scan.points) {
    csv_row(out, p.lambda, "auc_source", p.auc_source);
    csv_row(out, p.lambda, "auc_target", p.auc_target);
    csv_row(out, p.lambda, "ks", p.ks);
    csv_row(out, p.lambda, "ams", p.ams);
  }
  out.precision(precision);
}

void write_fraction_csv(const FractionScanResult& scan, std::ostream& out) {
  const auto precision = out.precision(17);
  out << "fraction,metric,median,lo,hi,n\n";
  for (const FractionPoint& p : scan.points) {
    csv_row(out, p.fraction, "auc_source", p.auc_source);
    csv_row(out, p.fraction, "auc_target", p.auc_target);
    csv_row(out, p.fraction, "ks", p.ks);
  }
  out.precision(precision);
}

}  // namespace dann::experiments

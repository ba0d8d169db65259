// dannctl: generate data, train, evaluate and scan domain-adversarial networks.
//
// Exit codes: 0 success, 2 invalid input or configuration, 3 numerical failure.

#include "grid.hpp"
#include "manifest.hpp"

#include "dann/data.hpp"
#include "dann/error.hpp"
#include "dann/experiments.hpp"
#include "dann/log.hpp"
#include "dann/metrics.hpp"
#include "dann/model.hpp"
#include "dann/synthetic.hpp"
#include "dann/training.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitInvalid = 2;
constexpr int kExitNumerical = 3;

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw dann::ConfigError("cannot open '" + path.string() + "'");
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw dann::ConfigError("'" + path.string() + "' is not valid JSON: " + e.what());
  }
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw dann::ConfigError("cannot write '" + path.string() + "'");
  out << j.dump(2) << '\n';
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw dann::ConfigError("cannot write '" + path.string() + "'");
  return out;
}

void make_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw dann::ConfigError("cannot create '" + dir.string() + "': " + ec.message());
}

json finite_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

json metrics_json(const dann::experiments::RunMetrics& m, const dann::experiments::EvalSettings& s) {
  return {{"auc_source", finite_or_null(m.auc_source)},
          {"auc_target", finite_or_null(m.auc_target)},
          {"ks", finite_or_null(m.ks)},
          {"ams", finite_or_null(m.ams)},
          {"purity", finite_or_null(m.purity)},
          {"purity_efficiency", s.purity_efficiency},
          {"signal_fraction", s.signal_fraction}};
}

bool has_all_strata(const dann::data::Dataset& d) {
  using dann::data::Domain;
  using dann::data::Label;
  return d.count(Label::Signal, Domain::Source) > 0 && d.count(Label::Background, Domain::Source) > 0 &&
         d.count(Label::Signal, Domain::Target) > 0 && d.count(Label::Background, Domain::Target) > 0;
}

struct Common {
  std::optional<std::uint64_t> seed;
  std::size_t jobs = 1;
  std::string out;
};

void add_common(CLI::App* cmd, Common& c, bool with_jobs) {
  cmd->add_option("--seed", c.seed, "Override the configured seed");
  if (with_jobs) cmd->add_option("--jobs", c.jobs, "Parallel training runs")->check(CLI::PositiveNumber);
  cmd->add_option("--out", c.out, "Output directory")->required();
}

// ---------------------------------------------------------------------------

struct GenArgs {
  Common common;
  std::string config;
};

int cmd_gen_data(const GenArgs& a, const std::vector<std::string>& argv) {
  dannctl::Manifest manifest("gen-data", argv, DANN_VERSION);
  dann::data::SyntheticConfig cfg = dann::data::synthetic_config_from_json(read_json(a.config));
  if (a.common.seed) cfg.seed = *a.common.seed;
  const dann::data::Dataset ds = dann::data::generate_synthetic(cfg);

  const fs::path out(a.common.out);
  make_dir(out);
  const fs::path csv = out / "events.csv";
  dann::data::write_events_csv(ds, csv);

  manifest.set_seed(cfg.seed);
  manifest.set_config("synthetic", dann::data::to_json(cfg));
  manifest.add_input(a.config);
  manifest.add_output(csv);
  manifest.write(out);

  using dann::data::Domain;
  using dann::data::Label;
  std::printf("wrote %zu events to %s\n", ds.size(), csv.string().c_str());
  for (Domain d : {Domain::Source, Domain::Target}) {
    for (Label l : {Label::Signal, Label::Background}) {
      std::printf("  %-6s %-10s %8zu\n", dann::data::to_string(d).c_str(), dann::data::to_string(l).c_str(),
                  ds.count(l, d));
    }
  }
  for (Domain d : {Domain::Source, Domain::Target}) {
    std::vector<double> mean(ds.dim(), 0.0);
    std::size_t n = 0;
    for (const auto& e : ds.events) {
      if (e.domain != d) continue;
      ++n;
      for (std::size_t j = 0; j < mean.size(); ++j) mean[j] += e.features[j];
    }
    std::printf("  %s feature means:", dann::data::to_string(d).c_str());
    for (double m : mean) std::printf(" %+.3f", n ? m / static_cast<double>(n) : 0.0);
    std::printf("\n");
  }
  return 0;
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  Common common;
  std::string data;
  std::string dann_config;
  std::string train_config;
  double test_fraction = 0.5;
};

int cmd_train(const TrainArgs& a, const std::vector<std::string>& argv) {
  dannctl::Manifest manifest("train", argv, DANN_VERSION);
  const dann::DannConfig dc = dann::dann_config_from_json(read_json(a.dann_config));
  dann::TrainConfig tc = dann::train_config_from_json(read_json(a.train_config));
  if (a.common.seed) tc.seed = *a.common.seed;
  const dann::data::Dataset ds = dann::data::read_events_csv(a.data);
  dann::data::validate(ds);

  const fs::path out(a.common.out);
  make_dir(out);
  manifest.set_seed(tc.seed);
  manifest.set_config("dann", dann::to_json(dc));
  manifest.set_config("train", dann::to_json(tc));
  manifest.note("test_fraction", a.test_fraction);
  manifest.add_input(a.data);
  manifest.add_input(a.dann_config);
  manifest.add_input(a.train_config);

  const auto ed = dann::experiments::prepare_experiment_data(ds, a.test_fraction, tc.seed);
  dann::TrainResult result;
  try {
    result = dann::train(ed.source_train, ed.target_train, dc, tc);
  } catch (const dann::TrainingDiverged& e) {
    write_json(out / "record.json", dann::to_json(e.record()));
    manifest.add_output(out / "record.json");
    manifest.note("status", "diverged");
    manifest.write(out);
    throw;
  }

  const json metadata = {{"seed", tc.seed},
                         {"data_sha1", dannctl::git_file_sha1(a.data)},
                         {"best_epoch", result.record.best_epoch},
                         {"epochs", result.record.epochs()},
                         {"lambda", result.record.lambda}};
  dann::save_checkpoint(result.network, out / "model.json", metadata);
  {
    auto csv = open_out(out / "losses.csv");
    dann::write_record_csv(result.record, csv);
  }
  write_json(out / "record.json", dann::to_json(result.record));

  json metrics = {{"best_epoch", result.record.best_epoch},
                  {"epochs", result.record.epochs()},
                  {"lambda", result.record.lambda},
                  {"loss_setup", dann::to_string(result.record.setup)}};
  dann::experiments::EvalSettings es;
  es.signal_fraction = tc.target_signal_fraction;
  dann::data::Dataset test;
  test.feature_names = ds.feature_names;
  test.events = ed.source_test.events;
  test.events.insert(test.events.end(), ed.target_test.events.begin(), ed.target_test.events.end());
  if (has_all_strata(test)) {
    const auto ev = dann::experiments::evaluate(result.network, ed.source_test.events,
                                                ed.target_test.events, es);
    metrics["test"] = metrics_json(ev.metrics, es);
    std::printf("auc_source %.4f  auc_target %.4f  ks %.4f  ams %.3f\n", ev.metrics.auc_source,
                ev.metrics.auc_target, ev.metrics.ks, ev.metrics.ams);
  } else {
    dann::log::warn("test split lacks a (label, domain) stratum; skipping test metrics");
  }
  write_json(out / "metrics.json", metrics);

  for (const char* f : {"model.json", "losses.csv", "record.json", "metrics.json"}) manifest.add_output(out / f);
  manifest.note("status", "ok");
  manifest.write(out);
  std::printf("trained %zu epochs, best epoch %zu; outputs in %s\n", result.record.epochs(),
              result.record.best_epoch, out.string().c_str());
  return 0;
}

// ---------------------------------------------------------------------------

struct EvalArgs {
  Common common;
  std::string checkpoint;
  std::string data;
  double signal_fraction = 0.05;
  std::size_t bins = 20;
};

int cmd_eval(const EvalArgs& a, const std::vector<std::string>& argv) {
  dannctl::Manifest manifest("eval", argv, DANN_VERSION);
  json metadata;
  const dann::DannNetwork net = dann::load_checkpoint(a.checkpoint, &metadata);
  const dann::data::Dataset ds = dann::data::read_events_csv(a.data);
  dann::data::validate(ds);
  if (ds.dim() != net.config.input_dim) {
    throw dann::ConfigError("checkpoint expects " + std::to_string(net.config.input_dim) +
                            " features but '" + a.data + "' has " + std::to_string(ds.dim()));
  }
  dann::experiments::EvalSettings es;
  es.signal_fraction = a.signal_fraction;
  es.histogram_bins = a.bins;
  const auto source = ds.select(dann::data::Domain::Source);
  const auto target = ds.select(dann::data::Domain::Target);
  const auto ev = dann::experiments::evaluate(net, source.events, target.events, es);

  const fs::path out(a.common.out);
  make_dir(out);
  write_json(out / "metrics.json", metrics_json(ev.metrics, es));
  {
    auto csv = open_out(out / "histogram.csv");
    dann::metrics::write_histogram_csv(ev.histogram.normalized(), csv);
  }
  {
    auto csv = open_out(out / "ams_bins.csv");
    dann::metrics::write_ams_bins_csv(ev.ams_bins, ev.histogram.edges, csv);
  }
  {
    auto csv = open_out(out / "purity.csv");
    dann::metrics::write_purity_csv(ev.purity_curve, csv);
  }
  manifest.set_config("eval", {{"signal_fraction", es.signal_fraction}, {"histogram_bins", es.histogram_bins}});
  manifest.note("checkpoint_metadata", metadata);
  manifest.add_input(a.checkpoint);
  manifest.add_input(a.data);
  for (const char* f : {"metrics.json", "histogram.csv", "ams_bins.csv", "purity.csv"}) manifest.add_output(out / f);
  manifest.write(out);
  std::printf("auc_source %.4f  auc_target %.4f  ks %.4f  ams %.3f  purity@%.2f %.4f\n", ev.metrics.auc_source,
              ev.metrics.auc_target, ev.metrics.ks, ev.metrics.ams, es.purity_efficiency, ev.metrics.purity);
  return 0;
}

// ---------------------------------------------------------------------------

struct ScanArgs {
  Common common;
  std::string data;
  std::string dann_config;
  std::string train_config;
  std::string grid = "0,0.1:1000:5";
  std::size_t repeats = 20;
  double ks_tolerance = 0.01;
  double test_fraction = 0.5;
  // scan-fraction only
  std::string mode = "matched";
  std::string fractions = "0.02,0.05,0.1,0.2";
  double source_fraction = 0.05;
};

dann::experiments::ScanSettings scan_settings(const ScanArgs& a, dannctl::Manifest& manifest) {
  dann::experiments::ScanSettings s;
  s.dann = dann::dann_config_from_json(read_json(a.dann_config));
  s.train = dann::train_config_from_json(read_json(a.train_config));
  s.seed = a.common.seed.value_or(s.train.seed);
  s.jobs = a.common.jobs;
  s.repeats = a.repeats;
  s.ks_tolerance = a.ks_tolerance;
  s.eval.signal_fraction = s.train.target_signal_fraction;
  if (s.repeats < 1) throw dann::ConfigError("--repeats must be at least 1");
  manifest.set_seed(s.seed);
  manifest.set_config("dann", dann::to_json(s.dann));
  manifest.set_config("train", dann::to_json(s.train));
  manifest.note("repeats", s.repeats);
  manifest.note("test_fraction", a.test_fraction);
  manifest.add_input(a.data);
  manifest.add_input(a.dann_config);
  manifest.add_input(a.train_config);
  return s;
}

dann::experiments::ExperimentData load_experiment(const ScanArgs& a, std::uint64_t seed) {
  const dann::data::Dataset ds = dann::data::read_events_csv(a.data);
  dann::data::validate(ds);
  return dann::experiments::prepare_experiment_data(ds, a.test_fraction, seed);
}

int cmd_scan_lambda(const ScanArgs& a, const std::vector<std::string>& argv) {
  dannctl::Manifest manifest("scan-lambda", argv, DANN_VERSION);
  const std::vector<double> grid = dannctl::parse_grid(a.grid);
  const auto settings = scan_settings(a, manifest);
  manifest.note("grid", grid);
  manifest.note("ks_tolerance", a.ks_tolerance);
  const auto ed = load_experiment(a, settings.seed);
  if (grid.size() == 1) dann::log::warn("scan-lambda: the grid has a single point; the selection is degenerate");

  const auto scan = dann::experiments::lambda_scan(ed, grid, settings);
  const fs::path out(a.common.out);
  make_dir(out);
  write_json(out / "scan.json", dann::experiments::to_json(scan));
  {
    auto csv = open_out(out / "scan.csv");
    dann::experiments::write_scan_csv(scan, csv);
  }
  manifest.add_output(out / "scan.json");
  manifest.add_output(out / "scan.csv");
  manifest.note("selected_lambda", scan.selected_lambda);
  manifest.write(out);

  std::printf("%12s %9s %9s %9s %9s %5s\n", "lambda", "auc_src", "auc_tgt", "ks", "ams", "n");
  for (const auto& p : scan.points) {
    std::printf("%12.4g %9.4f %9.4f %9.4f %9.3f %2zu/%-2zu\n", p.lambda, p.auc_source.median,
                p.auc_target.median, p.ks.median, p.ams.median, p.repeats - p.diverged, p.repeats);
  }
  std::printf("selected lambda: %g\n", scan.selected_lambda);
  return 0;
}

int cmd_scan_fraction(const ScanArgs& a, const std::vector<std::string>& argv) {
  dannctl::Manifest manifest("scan-fraction", argv, DANN_VERSION);
  const std::vector<double> fractions = dannctl::parse_grid(a.fractions);
  const auto mode = dann::experiments::parse_fraction_mode(a.mode);
  const auto settings = scan_settings(a, manifest);
  manifest.note("fractions", fractions);
  manifest.note("mode", dann::experiments::to_string(mode));
  manifest.note("source_fraction", a.source_fraction);
  const auto ed = load_experiment(a, settings.seed);

  const auto scan = dann::experiments::signal_fraction_scan(ed, mode, fractions, settings, a.source_fraction);
  const fs::path out(a.common.out);
  make_dir(out);
  write_json(out / "fraction_scan.json", dann::experiments::to_json(scan));
  {
    auto csv = open_out(out / "fraction_scan.csv");
    dann::experiments::write_fraction_csv(scan, csv);
  }
  manifest.add_output(out / "fraction_scan.json");
  manifest.add_output(out / "fraction_scan.csv");
  manifest.write(out);

  std::printf("%10s %9s %9s %9s %5s\n", "fraction", "auc_tgt", "lo", "hi", "n");
  for (const auto& p : scan.points) {
    std::printf("%10.4g %9.4f %9.4f %9.4f %2zu/%-2zu\n", p.fraction, p.auc_target.median, p.auc_target.lo,
                p.auc_target.hi, p.repeats - p.diverged, p.repeats);
  }
  for (double f : scan.skipped) std::printf("skipped fraction %g\n", f);
  return 0;
}

void add_scan_inputs(CLI::App* cmd, ScanArgs& a) {
  cmd->add_option("--data", a.data, "Events CSV")->required()->check(CLI::ExistingFile);
  cmd->add_option("--dann", a.dann_config, "Network config JSON")->required()->check(CLI::ExistingFile);
  cmd->add_option("--train", a.train_config, "Training config JSON")->required()->check(CLI::ExistingFile);
  cmd->add_option("--repeats", a.repeats, "Training runs per grid point")->capture_default_str();
  cmd->add_option("--test-fraction", a.test_fraction, "Share of each stratum held out for metrics")
      ->capture_default_str()
      ->check(CLI::Range(0.01, 0.99));
  add_common(cmd, a.common, true);
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::string> args(argv, argv + argc);
  CLI::App app{"Domain-adversarial training, evaluation and scans", "dannctl"};
  app.set_version_flag("--version", DANN_VERSION);
  app.require_subcommand(1);

  GenArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Generate a synthetic two-domain dataset");
  gen_cmd->add_option("--config", gen.config, "Synthetic config JSON")->required()->check(CLI::ExistingFile);
  add_common(gen_cmd, gen.common, false);

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "Train one network and evaluate it on a held-out split");
  train_cmd->add_option("--data", tr.data, "Events CSV")->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--dann", tr.dann_config, "Network config JSON")->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--train", tr.train_config, "Training config JSON")->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--test-fraction", tr.test_fraction, "Share of each stratum held out for metrics")
      ->capture_default_str()
      ->check(CLI::Range(0.01, 0.99));
  add_common(train_cmd, tr.common, false);

  EvalArgs ev;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint: metrics, histograms, purity curve");
  eval_cmd->add_option("--checkpoint", ev.checkpoint, "Model JSON")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--data", ev.data, "Events CSV")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--signal-fraction", ev.signal_fraction, "Expected target signal share")
      ->capture_default_str()
      ->check(CLI::Range(1e-9, 1.0 - 1e-9));
  eval_cmd->add_option("--bins", ev.bins, "Response histogram bins")->capture_default_str()->check(CLI::PositiveNumber);
  add_common(eval_cmd, ev.common, false);

  ScanArgs sl;
  auto* scan_cmd = app.add_subcommand("scan-lambda", "Repeated training over a lambda grid");
  add_scan_inputs(scan_cmd, sl);
  scan_cmd->add_option("--grid", sl.grid, "Lambda list and/or log ranges lo:hi:n")->capture_default_str();
  scan_cmd->add_option("--ks-tolerance", sl.ks_tolerance, "Selection tolerance on the median KS")
      ->capture_default_str();

  ScanArgs sf;
  auto* frac_cmd = app.add_subcommand("scan-fraction", "Target AUC versus signal fraction");
  add_scan_inputs(frac_cmd, sf);
  frac_cmd->add_option("--mode", sf.mode, "matched | mismatched-target")->capture_default_str();
  frac_cmd->add_option("--fractions", sf.fractions, "Signal fractions")->capture_default_str();
  frac_cmd->add_option("--source-fraction", sf.source_fraction, "Fixed source share (mismatched-target)")
      ->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitInvalid;
  }

  try {
    if (*gen_cmd) return cmd_gen_data(gen, args);
    if (*train_cmd) return cmd_train(tr, args);
    if (*eval_cmd) return cmd_eval(ev, args);
    if (*scan_cmd) return cmd_scan_lambda(sl, args);
    if (*frac_cmd) return cmd_scan_fraction(sf, args);
  } catch (const dann::NumericalError& e) {
    std::fprintf(stderr, "dannctl: numerical failure: %s\n", e.what());
    return kExitNumerical;
  } catch (const dann::ConfigError& e) {
    std::fprintf(stderr, "dannctl: invalid configuration: %s\n", e.what());
    return kExitInvalid;
  } catch (const dann::DataError& e) {
    std::fprintf(stderr, "dannctl: invalid data: %s\n", e.what());
    return kExitInvalid;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "dannctl: %s\n", e.what());
    return 1;
  }
  return 0;
}

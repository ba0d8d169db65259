#include "dann/training.hpp"

#include "dann/log.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <numeric>
#include <ostream>

namespace dann {

using data::Domain;
using data::Event;
using data::Label;
using nn::Matrix;

void validate(const TrainConfig& c) {
  if (c.batch_size < 2 || c.batch_size % 2 != 0) {
    throw ConfigError("batch_size must be even and at least 2, got " + std::to_string(c.batch_size));
  }
  nn::validate(c.optimizer);
  if (c.stop_window < 1) throw ConfigError("stop_window must be at least 1");
  if (!(c.stop_threshold >= 0.0) || !std::isfinite(c.stop_threshold)) {
    throw ConfigError("stop_threshold must be a finite non-negative number");
  }
  if (c.epoch_bounds.max < 1 || c.epoch_bounds.min > c.epoch_bounds.max) {
    throw ConfigError("epoch_bounds must satisfy 1 <= min <= max");
  }
  if (c.lambda && (!(*c.lambda >= 0.0) || !std::isfinite(*c.lambda))) {
    throw ConfigError("lambda must be a finite non-negative number");
  }
  if (!(c.target_signal_fraction > 0.0 && c.target_signal_fraction < 1.0)) {
    throw ConfigError("target_signal_fraction must lie in (0,1)");
  }
  if (!(c.validation_fraction >= 0.0 && c.validation_fraction < 1.0)) {
    throw ConfigError("validation_fraction must lie in [0,1)");
  }
  if (c.selection == SelectionSplit::Validation && c.validation_fraction == 0.0) {
    throw ConfigError("best-epoch selection on validation data needs validation_fraction > 0");
  }
  if (c.spike_guard.mode != SpikeGuard::Mode::Off) {
    if (c.spike_guard.window < 2) throw ConfigError("spike_guard.window must be at least 2");
    if (!(c.spike_guard.sigmas > 0.0)) throw ConfigError("spike_guard.sigmas must be positive");
    if (c.spike_guard.mode == SpikeGuard::Mode::Rollback && c.spike_guard.rollback_epochs < 1) {
      throw ConfigError("spike_guard.rollback_epochs must be at least 1");
    }
  }
}

namespace {

SpikeGuard::Mode parse_guard_mode(const std::string& s) {
  if (s == "off") return SpikeGuard::Mode::Off;
  if (s == "detect") return SpikeGuard::Mode::Detect;
  if (s == "rollback") return SpikeGuard::Mode::Rollback;
  throw ConfigError("spike_guard.mode must be off, detect or rollback, got '" + s + "'");
}

std::string to_string(SpikeGuard::Mode m) {
  switch (m) {
    case SpikeGuard::Mode::Off: return "off";
    case SpikeGuard::Mode::Detect: return "detect";
    case SpikeGuard::Mode::Rollback: return "rollback";
  }
  return "off";
}

std::string to_string(SelectionSplit s) { return s == SelectionSplit::Validation ? "validation" : "training"; }

std::size_t positive_count(const nlohmann::json& j, const char* key, std::size_t fallback) {
  if (!j.contains(key)) return fallback;
  const long long v = j.at(key).get<long long>();
  if (v < 0) throw ConfigError(std::string(key) + " must be non-negative");
  return static_cast<std::size_t>(v);
}

}  // namespace

TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  try {
    c.batch_size = positive_count(j, "batch_size", c.batch_size);
    c.stop_window = positive_count(j, "stop_window", c.stop_window);
    c.stop_threshold = j.value("stop_threshold", c.stop_threshold);
    if (j.contains("epoch_bounds")) {
      const auto b = j.at("epoch_bounds").get<std::vector<long long>>();
      if (b.size() != 2 || b[0] < 0 || b[1] < 0) throw ConfigError("epoch_bounds must be [min, max]");
      c.epoch_bounds = {static_cast<std::size_t>(b[0]), static_cast<std::size_t>(b[1])};
    }
    c.seed = j.value("seed", c.seed);
    if (j.contains("lambda") && !j.at("lambda").is_null()) c.lambda = j.at("lambda").get<double>();
    if (j.contains("loss_setup") && !j.at("loss_setup").is_null()) {
      c.loss_setup = parse_loss_setup(j.at("loss_setup").get<std::string>());
    }
    c.target_signal_fraction = j.value("target_signal_fraction", c.target_signal_fraction);
    c.validation_fraction = j.value("validation_fraction", c.validation_fraction);
    if (j.contains("selection")) {
      const auto s = j.at("selection").get<std::string>();
      if (s == "validation") {
        c.selection = SelectionSplit::Validation;
      } else if (s == "training") {
        c.selection = SelectionSplit::Training;
      } else {
        throw ConfigError("selection must be 'validation' or 'training', got '" + s + "'");
      }
    }
    if (j.contains("optimizer")) {
      const auto& o = j.at("optimizer");
      const std::string kind = o.value("kind", std::string("rmsprop"));
      if (kind == "rmsprop") {
        nn::RMSProp r;
        r.learning_rate = o.value("learning_rate", r.learning_rate);
        r.rho = o.value("rho", r.rho);
        r.epsilon = o.value("epsilon", r.epsilon);
        c.optimizer = r;
      } else if (kind == "adam") {
        nn::Adam a;
        a.learning_rate = o.value("learning_rate", a.learning_rate);
        a.beta1 = o.value("beta1", a.beta1);
        a.beta2 = o.value("beta2", a.beta2);
        a.epsilon = o.value("epsilon", a.epsilon);
        c.optimizer = a;
      } else {
        throw ConfigError("optimizer.kind must be 'rmsprop' or 'adam', got '" + kind + "'");
      }
    }
    if (j.contains("spike_guard")) {
      const auto& g = j.at("spike_guard");
      c.spike_guard.mode = parse_guard_mode(g.value("mode", std::string("off")));
      c.spike_guard.rollback_epochs = positive_count(g, "rollback_epochs", c.spike_guard.rollback_epochs);
      c.spike_guard.window = positive_count(g, "window", c.spike_guard.window);
      c.spike_guard.sigmas = g.value("sigmas", c.spike_guard.sigmas);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("train config: ") + e.what());
  }
  validate(c);
  return c;
}

nlohmann::json to_json(const TrainConfig& c) {
  nlohmann::json opt;
  if (const auto* r = std::get_if<nn::RMSProp>(&c.optimizer)) {
    opt = {{"kind", "rmsprop"}, {"learning_rate", r->learning_rate}, {"rho", r->rho}, {"epsilon", r->epsilon}};
  } else {
    const auto& a = std::get<nn::Adam>(c.optimizer);
    opt = {{"kind", "adam"},         {"learning_rate", a.learning_rate}, {"beta1", a.beta1},
           {"beta2", a.beta2},       {"epsilon", a.epsilon}};
  }
  nlohmann::json j = {
      {"batch_size", c.batch_size},
      {"optimizer", opt},
      {"stop_window", c.stop_window},
      {"stop_threshold", c.stop_threshold},
      {"epoch_bounds", {c.epoch_bounds.min, c.epoch_bounds.max}},
      {"seed", c.seed},
      {"target_signal_fraction", c.target_signal_fraction},
      {"validation_fraction", c.validation_fraction},
      {"selection", to_string(c.selection)},
      {"spike_guard",
       {{"mode", to_string(c.spike_guard.mode)},
        {"rollback_epochs", c.spike_guard.rollback_epochs},
        {"window", c.spike_guard.window},
        {"sigmas", c.spike_guard.sigmas}}}};
  j["lambda"] = c.lambda ? nlohmann::json(*c.lambda) : nlohmann::json(nullptr);
  j["loss_setup"] = c.loss_setup ? nlohmann::json(to_string(*c.loss_setup)) : nlohmann::json(nullptr);
  return j;
}

double TrainRecord::best_label_loss() const {
  const auto& h = selection_history();
  return best_epoch < h.size() ? h[best_epoch].label : std::nan("");
}

nlohmann::json to_json(const TrainRecord& r) {
  auto curve = [](const std::vector<EpochLosses>& h) {
    nlohmann::json j = {{"label_loss", nlohmann::json::array()},
                        {"domain_loss", nlohmann::json::array()},
                        {"total_loss", nlohmann::json::array()}};
    for (const auto& e : h) {
      j["label_loss"].push_back(e.label);
      j["domain_loss"].push_back(e.domain);
      j["total_loss"].push_back(e.total);
    }
    return j;
  };
  return {{"epochs", r.epochs()},
          {"lambda", r.lambda},
          {"loss_setup", to_string(r.setup)},
          {"selection", to_string(r.selection)},
          {"best_epoch", r.best_epoch},
          {"best_label_loss", r.epochs() ? nlohmann::json(r.best_label_loss()) : nlohmann::json(nullptr)},
          {"spike_epochs", r.spike_epochs},
          {"spike_count", r.spike_epochs.size()},
          {"rollback_epochs", r.rollback_epochs},
          {"train", curve(r.train)},
          {"validation", curve(r.validation)}};
}

void write_record_csv(const TrainRecord& r, std::ostream& out) {
  out << "epoch,label_loss,domain_loss,total_loss,split\n";
  const auto precision = out.precision(17);
  auto rows = [&](const std::vector<EpochLosses>& h, const char* name) {
    for (std::size_t i = 0; i < h.size(); ++i) {
      out << i << ',' << h[i].label << ',' << h[i].domain << ',' << h[i].total << ',' << name << '\n';
    }
  };
  rows(r.train, "train");
  rows(r.validation, "validation");
  out.precision(precision);
}

// ---------------------------------------------------------------------------

std::vector<Batch> make_epoch_batches(std::size_t n_source, std::size_t n_target,
                                      std::size_t batch_size, nn::Rng& rng) {
  if (n_source == 0 || n_target == 0) throw DataError("make_epoch_batches: empty domain");
  if (batch_size < 2 || batch_size % 2 != 0) throw ConfigError("batch_size must be even and at least 2");
  const std::size_t half = batch_size / 2;

  std::vector<std::size_t> source(n_source);
  std::iota(source.begin(), source.end(), std::size_t{0});
  std::shuffle(source.begin(), source.end(), rng);

  std::vector<std::size_t> target(n_target);
  std::iota(target.begin(), target.end(), std::size_t{0});
  std::shuffle(target.begin(), target.end(), rng);
  std::size_t cursor = 0;

  std::vector<Batch> batches;
  batches.reserve((n_source + half - 1) / half);
  for (std::size_t start = 0; start < n_source; start += half) {
    Batch b;
    const std::size_t r = std::min(half, n_source - start);
    b.source.assign(source.begin() + static_cast<std::ptrdiff_t>(start),
                    source.begin() + static_cast<std::ptrdiff_t>(start + r));
    b.target.reserve(r);
    while (b.target.size() < r) {
      if (cursor == n_target) {
        std::shuffle(target.begin(), target.end(), rng);
        cursor = 0;
      }
      b.target.push_back(target[cursor++]);
    }
    batches.push_back(std::move(b));
  }
  return batches;
}

bool should_stop(std::span<const double> history, std::size_t window, double threshold,
                 EpochBounds bounds) {
  const std::size_t n = history.size();
  if (n >= bounds.max) return true;
  if (n < bounds.min || window == 0 || n < 2 * window) return false;
  const auto mean = [&](std::size_t from) {
    double s = 0.0;
    for (std::size_t i = from; i < from + window; ++i) s += history[i];
    return s / static_cast<double>(window);
  };
  const double last = mean(n - window);
  const double previous = mean(n - 2 * window);
  return last >= previous - threshold * std::abs(previous);
}

SpikeAction spike_monitor(std::span<const double> trailing, double current, const SpikeGuard& guard,
                          std::size_t snapshots) {
  if (guard.mode == SpikeGuard::Mode::Off || trailing.size() < guard.window) return SpikeAction::None;
  const auto recent = trailing.subspan(trailing.size() - guard.window);
  const double n = static_cast<double>(recent.size());
  const double mu = std::accumulate(recent.begin(), recent.end(), 0.0) / n;
  double var = 0.0;
  for (double x : recent) var += (x - mu) * (x - mu);
  const double sigma = std::sqrt(var / n);
  if (!(current > mu + guard.sigmas * sigma)) return SpikeAction::None;
  if (guard.mode == SpikeGuard::Mode::Detect) return SpikeAction::Flag;
  if (snapshots < guard.rollback_epochs) {
    log::warn("spike guard: rollback needs " + std::to_string(guard.rollback_epochs) +
              " snapshots, only " + std::to_string(snapshots) + " available; flagging only");
    return SpikeAction::Flag;
  }
  return SpikeAction::Restore;
}

TrainingWeights training_weights(const std::vector<Event>& source, const std::vector<Event>& target,
                                 double target_signal_fraction) {
  TrainingWeights w;
  w.source_label = balance_weights(source, BalanceHead::Label, target_signal_fraction);

  std::vector<Event> both;
  both.reserve(source.size() + target.size());
  both.insert(both.end(), source.begin(), source.end());
  both.insert(both.end(), target.begin(), target.end());
  const std::vector<double> dw = balance_weights(both, BalanceHead::Domain, target_signal_fraction);
  w.source_domain.assign(dw.begin(), dw.begin() + static_cast<std::ptrdiff_t>(source.size()));
  w.target_domain.assign(dw.begin() + static_cast<std::ptrdiff_t>(source.size()), dw.end());

  // Batches draw equal event counts per domain, so equalise the mean weight per event.
  const double ratio = static_cast<double>(source.size()) / static_cast<double>(target.size());
  for (double& x : w.source_domain) x *= ratio;
  return w;
}

namespace {

struct Pool {
  Matrix x;  // standardised
  std::vector<Label> labels;
  std::vector<double> label_weights;
  std::vector<double> domain_weights;
};

Matrix gather(const Matrix& x, std::span<const std::size_t> a, const Matrix& y,
              std::span<const std::size_t> b) {
  Matrix out(static_cast<Eigen::Index>(a.size() + b.size()), x.cols());
  Eigen::Index r = 0;
  for (std::size_t i : a) out.row(r++) = x.row(static_cast<Eigen::Index>(i));
  for (std::size_t i : b) out.row(r++) = y.row(static_cast<Eigen::Index>(i));
  return out;
}

EpochLosses losses_on(const DannNetwork& net, const Matrix& source_x, const Matrix& target_x,
                      const std::vector<Label>& source_labels, const TrainingWeights& w, double lambda) {
  const std::size_t ns = static_cast<std::size_t>(source_x.rows());
  const std::size_t nt = static_cast<std::size_t>(target_x.rows());
  Matrix x(source_x.rows() + target_x.rows(), source_x.cols());
  x.topRows(source_x.rows()) = source_x;
  x.bottomRows(target_x.rows()) = target_x;
  std::vector<Label> labels(source_labels);
  labels.resize(ns + nt, Label::Background);
  std::vector<Domain> domains(ns, Domain::Source);
  domains.resize(ns + nt, Domain::Target);
  std::vector<double> lw(w.source_label);
  lw.resize(ns + nt, 0.0);
  std::vector<double> dw(w.source_domain);
  dw.insert(dw.end(), w.target_domain.begin(), w.target_domain.end());

  const DannOutputs out = dann_forward(net, x);
  EpochLosses l;
  l.label = label_loss(out, labels, domains, lw);
  l.domain = domain_loss(out, domains, dw, net.config.setup);
  l.total = l.label - lambda * l.domain;
  return l;
}

std::vector<Label> labels_of(const std::vector<Event>& events) {
  std::vector<Label> out;
  out.reserve(events.size());
  for (const Event& e : events) out.push_back(e.label);
  return out;
}

struct Snapshot {
  DannNetwork net;
  nn::OptimizerState state;
};

void check_domain(const data::Dataset& d, Domain expected, const char* what) {
  if (d.empty()) throw DataError(std::string("train: no ") + what + " events");
  for (const Event& e : d.events) {
    if (e.domain != expected) {
      throw DataError(std::string("train: event ") + std::to_string(e.id) + " in the " + what +
                      " set is tagged " + data::to_string(e.domain));
    }
  }
}

}  // namespace

EpochLosses evaluate_losses(const DannNetwork& net, const std::vector<Event>& source,
                            const std::vector<Event>& target, double lambda,
                            double target_signal_fraction) {
  const TrainingWeights w = training_weights(source, target, target_signal_fraction);
  return losses_on(net, net.prepare(source), net.prepare(target), labels_of(source), w, lambda);
}

TrainResult train(const data::Dataset& source, const data::Dataset& target,
                  const DannConfig& dann_config, const TrainConfig& config,
                  const EpochObserver& observer) {
  validate(config);
  check_domain(source, Domain::Source, "source");
  check_domain(target, Domain::Target, "target");
  data::validate(source);
  data::validate(target);

  DannConfig arch = dann_config;
  if (config.lambda) arch.lambda = *config.lambda;
  if (config.loss_setup) arch.setup = *config.loss_setup;
  if (arch.setup == LossSetup::B) arch.domain_sizes.back() = 1;
  validate(arch);
  if (source.dim() != arch.input_dim) {
    throw ConfigError("data has " + std::to_string(source.dim()) + " features but input_dim is " +
                      std::to_string(arch.input_dim));
  }
  const double lambda = arch.lambda;

  nn::Rng rng(config.seed);
  TrainResult result;

  // Hold out validation events: stratified on the source, blind on the target.
  std::vector<Event> src_train;
  std::vector<Event> tgt_train;
  if (config.validation_fraction > 0.0) {
    auto [val, rest] = data::split(source, config.validation_fraction, rng());
    result.validation_source = std::move(val.events);
    src_train = std::move(rest.events);
    std::vector<std::size_t> order(target.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    const auto n_val = static_cast<std::size_t>(
        std::llround(config.validation_fraction * static_cast<double>(target.size())));
    std::vector<std::uint8_t> is_val(target.size(), 0);
    for (std::size_t k = 0; k < n_val; ++k) is_val[order[k]] = 1;
    for (std::size_t i = 0; i < target.size(); ++i) {
      (is_val[i] ? result.validation_target : tgt_train).push_back(target.events[i]);
    }
  } else {
    src_train = source.events;
    tgt_train = target.events;
  }
  if (src_train.empty() || tgt_train.empty()) throw DataError("train: no training events left after the validation split");
  const bool has_validation = !result.validation_source.empty() && !result.validation_target.empty();
  if (config.selection == SelectionSplit::Validation && !has_validation) {
    throw DataError("train: validation split is empty");
  }

  data::Dataset src_set;
  src_set.events = src_train;
  src_set.feature_names = source.feature_names;

  DannNetwork net = DannNetwork::create(arch, rng);
  net.standardizer = data::Standardizer::fit(src_set);

  const TrainingWeights tw = training_weights(src_train, tgt_train, config.target_signal_fraction);
  const Matrix xs = net.prepare(src_train);
  const Matrix xt = net.prepare(tgt_train);
  const std::vector<Label> ys = labels_of(src_train);

  TrainingWeights vw;
  Matrix vxs;
  Matrix vxt;
  std::vector<Label> vys;
  if (has_validation) {
    vw = training_weights(result.validation_source, result.validation_target, config.target_signal_fraction);
    vxs = net.prepare(result.validation_source);
    vxt = net.prepare(result.validation_target);
    vys = labels_of(result.validation_source);
  }

  TrainRecord& record = result.record;
  record.selection = config.selection;
  record.lambda = lambda;
  record.setup = arch.setup;

  nn::OptimizerState state;
  std::deque<Snapshot> ring;
  std::vector<double> trailing;  // training label losses of unflagged epochs
  std::vector<double> totals;
  double best = std::numeric_limits<double>::infinity();
  DannNetwork best_net = net;

  std::vector<Label> labels;
  std::vector<Domain> domains;
  std::vector<double> lw;
  std::vector<double> dw;

  for (std::size_t epoch = 0;; ++epoch) {
    const std::vector<Batch> batches = make_epoch_batches(src_train.size(), tgt_train.size(),
                                                          config.batch_size, rng);
    EpochLosses sum;
    for (const Batch& b : batches) {
      const Matrix x = gather(xs, b.source, xt, b.target);
      labels.clear();
      domains.clear();
      lw.clear();
      dw.clear();
      for (std::size_t i : b.source) {
        labels.push_back(ys[i]);
        domains.push_back(Domain::Source);
        lw.push_back(tw.source_label[i]);
        dw.push_back(tw.source_domain[i]);
      }
      for (std::size_t i : b.target) {
        labels.push_back(Label::Background);  // placeholder, never read
        domains.push_back(Domain::Target);
        lw.push_back(0.0);
        dw.push_back(tw.target_domain[i]);
      }
      const DannOutputs out = dann_forward(net, x);
      const double ly = label_loss(out, labels, domains, lw);
      const double ld = domain_loss(out, domains, dw, arch.setup);
      if (!std::isfinite(ly) || !std::isfinite(ld)) {
        record.train.push_back({ly, ld, ly - lambda * ld});
        throw TrainingDiverged("training diverged at epoch " + std::to_string(epoch) +
                                   ": non-finite loss (label " + std::to_string(ly) + ", domain " +
                                   std::to_string(ld) + ")",
                               record, epoch);
      }
      sum.label += ly;
      sum.domain += ld;
      const DannGradients g = dann_backward(net, out, BatchLabels{labels, domains, lw, dw}, lambda);
      const auto slots = parameter_slots(net, g);
      nn::optimizer_step(slots, state, config.optimizer);
    }
    const double nb = static_cast<double>(batches.size());
    EpochLosses epoch_train{sum.label / nb, sum.domain / nb, 0.0};
    epoch_train.total = epoch_train.label - lambda * epoch_train.domain;

    if (!net.finite()) {
      record.train.push_back(epoch_train);
      throw TrainingDiverged("training diverged at epoch " + std::to_string(epoch) +
                                 ": non-finite parameters",
                             record, epoch);
    }
    record.train.push_back(epoch_train);
    if (has_validation) record.validation.push_back(losses_on(net, vxs, vxt, vys, vw, lambda));
    totals.push_back(epoch_train.total);

    const double selected = record.selection_history().back().label;
    if (selected < best) {
      best = selected;
      record.best_epoch = epoch;
      best_net = net;
    }

    const SpikeAction action = spike_monitor(trailing, epoch_train.label, config.spike_guard, ring.size());
    if (action == SpikeAction::None) {
      trailing.push_back(epoch_train.label);
    } else {
      record.spike_epochs.push_back(epoch);
      log::warn("loss spike at epoch " + std::to_string(epoch) + ": label loss " +
                std::to_string(epoch_train.label));
    }
    if (action == SpikeAction::Restore) {
      // ring.back() is the end of the previous epoch; k epochs back is k-1 further.
      const std::size_t k = config.spike_guard.rollback_epochs;
      ring.resize(ring.size() - (k - 1));
      net = ring.back().net;
      state = ring.back().state;
      ring.pop_back();
      record.rollback_epochs.push_back(epoch);
    }
    if (config.spike_guard.mode == SpikeGuard::Mode::Rollback) {
      ring.push_back({net, state});
      while (ring.size() > config.spike_guard.rollback_epochs) ring.pop_front();
    }
    if (observer) observer(EpochView{epoch, action, net, state, record});

    if (should_stop(totals, config.stop_window, config.stop_threshold, config.epoch_bounds)) break;
  }

  result.network = std::move(best_net);
  return result;
}

}  // namespace dann

#include "dann/error.hpp"
#include "dann/synthetic.hpp"
#include "dann/training.hpp"

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

using namespace dann;
using data::Domain;
using data::Label;

namespace {

struct Pools {
  data::Dataset source;
  data::Dataset target;
};

Pools small_pools(std::uint64_t seed = 3) {
  auto c = data::SyntheticConfig::defaults();
  c.counts = {300, 300, 30, 570};
  c.seed = seed;
  const auto d = data::generate_synthetic(c);
  return {d.select(Domain::Source), d.select(Domain::Target)};
}

TrainConfig quick_config(std::size_t epochs = 6) {
  TrainConfig t;
  t.batch_size = 128;
  t.stop_window = 2;
  t.epoch_bounds = {epochs, epochs};
  t.seed = 5;
  t.lambda = 1.0;
  return t;
}

std::vector<double> constant(std::size_t n, double v) { return std::vector<double>(n, v); }

}  // namespace

TEST(Batches, ExactFitGivesOneBatch) {
  nn::Rng rng(1);
  const auto batches = make_epoch_batches(8192, 8192, 16384, rng);
  ASSERT_EQ(batches.size(), 1u);
  auto s = batches[0].source;
  auto t = batches[0].target;
  std::sort(s.begin(), s.end());
  std::sort(t.begin(), t.end());
  for (std::size_t i = 0; i < 8192; ++i) {
    EXPECT_EQ(s[i], i);
    EXPECT_EQ(t[i], i);
  }
}

TEST(Batches, SmallTargetCyclesEvenly) {
  nn::Rng rng(2);
  const auto batches = make_epoch_batches(1000, 100, 200, rng);
  ASSERT_EQ(batches.size(), 10u);
  std::map<std::size_t, int> source_uses;
  std::map<std::size_t, int> target_uses;
  for (const auto& b : batches) {
    EXPECT_EQ(b.source.size(), 100u);
    EXPECT_EQ(b.target.size(), 100u);
    for (auto i : b.source) ++source_uses[i];
    for (auto i : b.target) ++target_uses[i];
  }
  EXPECT_EQ(source_uses.size(), 1000u);
  for (const auto& [i, n] : source_uses) EXPECT_EQ(n, 1);
  EXPECT_EQ(target_uses.size(), 100u);
  for (const auto& [i, n] : target_uses) EXPECT_EQ(n, 10);
}

TEST(Batches, RaggedTailStaysBalanced) {
  nn::Rng rng(3);
  const auto batches = make_epoch_batches(250, 70, 100, rng);
  ASSERT_EQ(batches.size(), 5u);
  EXPECT_EQ(batches.back().source.size(), 50u);
  for (const auto& b : batches) EXPECT_EQ(b.source.size(), b.target.size());
}

TEST(Batches, EpochsAreReshuffled) {
  nn::Rng rng(4);
  const auto a = make_epoch_batches(500, 500, 100, rng);
  const auto b = make_epoch_batches(500, 500, 100, rng);
  EXPECT_NE(a[0].source, b[0].source);
  EXPECT_NE(a[0].target, b[0].target);
  EXPECT_THROW(make_epoch_batches(10, 10, 3, rng), ConfigError);
  EXPECT_THROW(make_epoch_batches(0, 10, 4, rng), DataError);
}

TEST(ShouldStop, FlatHistoryStops) {
  EXPECT_TRUE(should_stop(constant(300, 0.4), 50, 0.0005, {200, 1000}));
}

TEST(ShouldStop, GeometricDecayKeepsGoing) {
  std::vector<double> h;
  for (int i = 0; i < 300; ++i) h.push_back(std::pow(0.99, i));
  // two-window means differ by a factor 0.99^50, far more than 0.05%
  EXPECT_FALSE(should_stop(h, 50, 0.0005, {200, 1000}));
}

TEST(ShouldStop, MinimumBoundHolds) {
  EXPECT_FALSE(should_stop(constant(199, 0.4), 50, 0.0005, {200, 1000}));
  EXPECT_TRUE(should_stop(constant(200, 0.4), 50, 0.0005, {200, 1000}));
}

TEST(ShouldStop, MaximumBoundForcesStop) {
  std::vector<double> h;
  for (int i = 0; i < 1000; ++i) h.push_back(1.0 / (1 + i));
  EXPECT_TRUE(should_stop(h, 50, 0.0005, {200, 1000}));
  EXPECT_FALSE(should_stop(std::span(h).first(999), 50, 0.0005, {200, 1000}));
}

TEST(ShouldStop, NeedsTwoWindows) {
  EXPECT_FALSE(should_stop(constant(99, 0.4), 50, 0.0005, {0, 1000}));
  EXPECT_TRUE(should_stop(constant(100, 0.4), 50, 0.0005, {0, 1000}));
}

TEST(ShouldStop, ThresholdIsRelative) {
  // previous window mean 1.0, last window mean 1 - d
  auto history = [](double d) {
    std::vector<double> h = constant(50, 1.0);
    const auto tail = constant(50, 1.0 - d);
    h.insert(h.end(), tail.begin(), tail.end());
    return h;
  };
  EXPECT_TRUE(should_stop(history(0.0004), 50, 0.0005, {0, 1000}));
  EXPECT_FALSE(should_stop(history(0.0006), 50, 0.0005, {0, 1000}));
  // negative totals (large lambda) use the magnitude
  std::vector<double> neg = history(0.0006);
  for (double& x : neg) x = -x;
  EXPECT_TRUE(should_stop(neg, 50, 0.0005, {0, 1000}));
}

TEST(SpikeMonitor, SmoothDecayNeverFires) {
  SpikeGuard g{SpikeGuard::Mode::Detect, 10, 50, 10.0};
  std::vector<double> trailing;
  for (int e = 0; e < 400; ++e) {
    const double loss = 0.5 + 0.3 * std::exp(-e / 40.0);
    EXPECT_EQ(spike_monitor(trailing, loss, g, 0), SpikeAction::None) << e;
    trailing.push_back(loss);
  }
}

TEST(SpikeMonitor, JumpToFiveIsFlagged) {
  std::vector<double> trailing;
  nn::Rng rng(7);
  std::normal_distribution<double> noise(0.0, 0.005);
  for (int e = 0; e < 80; ++e) trailing.push_back(0.55 + noise(rng));
  SpikeGuard g{SpikeGuard::Mode::Detect, 10, 50, 10.0};
  EXPECT_EQ(spike_monitor(trailing, 5.0, g, 0), SpikeAction::Flag);
  EXPECT_EQ(spike_monitor(trailing, 0.56, g, 0), SpikeAction::None);
  g.mode = SpikeGuard::Mode::Rollback;
  EXPECT_EQ(spike_monitor(trailing, 5.0, g, 10), SpikeAction::Restore);
  EXPECT_EQ(spike_monitor(trailing, 5.0, g, 9), SpikeAction::Flag);  // too little history
  g.mode = SpikeGuard::Mode::Off;
  EXPECT_EQ(spike_monitor(trailing, 5.0, g, 10), SpikeAction::None);
}

TEST(SpikeMonitor, WaitsForAFullWindow) {
  SpikeGuard g{SpikeGuard::Mode::Detect, 10, 50, 10.0};
  EXPECT_EQ(spike_monitor(constant(49, 0.55), 5.0, g, 0), SpikeAction::None);
  EXPECT_EQ(spike_monitor(constant(50, 0.55), 5.0, g, 0), SpikeAction::Flag);
}

TEST(TrainConfig, DefaultsValidationAndJson) {
  const TrainConfig d;
  EXPECT_EQ(d.batch_size, 16384u);
  EXPECT_EQ(d.stop_window, 50u);
  EXPECT_EQ(d.epoch_bounds.min, 200u);
  EXPECT_EQ(d.epoch_bounds.max, 1000u);
  EXPECT_NO_THROW(validate(d));
  const auto back = train_config_from_json(to_json(quick_config()));
  EXPECT_EQ(to_json(back), to_json(quick_config()));

  TrainConfig bad;
  bad.batch_size = 7;
  EXPECT_THROW(validate(bad), ConfigError);
  bad = TrainConfig{};
  bad.epoch_bounds = {10, 5};
  EXPECT_THROW(validate(bad), ConfigError);
  bad = TrainConfig{};
  bad.lambda = -2.0;
  EXPECT_THROW(validate(bad), ConfigError);
  EXPECT_THROW(train_config_from_json(nlohmann::json::parse(R"({"optimizer": {"kind": "sgd"}})")), ConfigError);
  EXPECT_THROW(train_config_from_json(nlohmann::json::parse(R"({"batch_size": "big"})")), ConfigError);
}

TEST(TrainingWeights, EqualMeanWeightPerDomain) {
  const auto p = small_pools();
  const auto w = training_weights(p.source.events, p.target.events, 0.05);
  double src = 0.0;
  double tgt = 0.0;
  double src_sig = 0.0;
  for (std::size_t i = 0; i < w.source_domain.size(); ++i) {
    src += w.source_domain[i];
    if (p.source.events[i].is_signal()) src_sig += w.source_domain[i];
  }
  for (double x : w.target_domain) tgt += x;
  EXPECT_NEAR(src / static_cast<double>(p.source.size()), tgt / static_cast<double>(p.target.size()), 1e-12);
  EXPECT_NEAR(src_sig / src, 0.05, 1e-12);
}

TEST(Train, DeterministicForASeed) {
  const auto p = small_pools();
  const auto a = train(p.source, p.target, DannConfig{}, quick_config());
  const auto b = train(p.source, p.target, DannConfig{}, quick_config());
  EXPECT_TRUE(a.network == b.network);
  EXPECT_EQ(a.record, b.record);
  EXPECT_EQ(a.record.epochs(), 6u);
  auto other = quick_config();
  other.seed = 6;
  EXPECT_FALSE(train(p.source, p.target, DannConfig{}, other).network == a.network);
}

TEST(Train, TargetLabelsAreNeverRead) {
  auto p = small_pools();
  const auto before = train(p.source, p.target, DannConfig{}, quick_config());
  nn::Rng rng(99);
  std::vector<Label> labels;
  for (const auto& e : p.target.events) labels.push_back(e.label);
  std::shuffle(labels.begin(), labels.end(), rng);
  for (std::size_t i = 0; i < labels.size(); ++i) p.target.events[i].label = labels[i];
  for (std::size_t i = 0; i < 50; ++i) p.target.events[i].label = Label::Signal;
  const auto after = train(p.source, p.target, DannConfig{}, quick_config());
  EXPECT_TRUE(before.network == after.network);
  EXPECT_EQ(before.record, after.record);
}

TEST(Train, ReturnsTheBestEpoch) {
  const auto p = small_pools();
  auto cfg = quick_config(12);
  const auto r = train(p.source, p.target, DannConfig{}, cfg);
  const auto& h = r.record.validation;
  ASSERT_EQ(h.size(), 12u);
  double lowest = h[0].label;
  for (const auto& e : h) lowest = std::min(lowest, e.label);
  EXPECT_EQ(h[r.record.best_epoch].label, lowest);
  EXPECT_EQ(r.record.best_label_loss(), lowest);
  const auto again = evaluate_losses(r.network, r.validation_source, r.validation_target, 1.0, 0.05);
  EXPECT_EQ(again.label, lowest);

  cfg.selection = SelectionSplit::Training;
  cfg.validation_fraction = 0.0;
  const auto t = train(p.source, p.target, DannConfig{}, cfg);
  EXPECT_TRUE(t.record.validation.empty());
  double lowest_train = t.record.train[0].label;
  for (const auto& e : t.record.train) lowest_train = std::min(lowest_train, e.label);
  EXPECT_EQ(t.record.best_label_loss(), lowest_train);
}

TEST(Train, ValidationSplitIsStratifiedOnSourceOnly) {
  const auto p = small_pools();
  const auto r = train(p.source, p.target, DannConfig{}, quick_config(1));
  std::size_t sig = 0;
  for (const auto& e : r.validation_source) sig += e.is_signal();
  EXPECT_EQ(r.validation_source.size(), 120u);
  EXPECT_EQ(sig, 60u);
  EXPECT_EQ(r.validation_target.size(), 120u);
}

TEST(Train, RollbackRestoresSnapshotsBitwise) {
  const auto p = small_pools();
  auto cfg = quick_config(40);
  cfg.optimizer = nn::Adam{0.02, 0.9, 0.999, 1e-7};
  cfg.spike_guard = {SpikeGuard::Mode::Rollback, 2, 2, 1e-6};
  std::vector<DannNetwork> seen;
  std::vector<nn::OptimizerState> states;
  std::size_t restores = 0;
  train(p.source, p.target, DannConfig{}, cfg, [&](const EpochView& v) {
    if (v.action == SpikeAction::Restore) {
      ++restores;
      ASSERT_GE(v.epoch, 2u);
      EXPECT_TRUE(v.network == seen[v.epoch - 2]) << "epoch " << v.epoch;
      EXPECT_EQ(v.optimizer, states[v.epoch - 2]) << "epoch " << v.epoch;
    }
    seen.push_back(v.network);
    states.push_back(v.optimizer);
  });
  EXPECT_GT(restores, 0u);
}

TEST(Train, DivergenceCarriesTheRecord) {
  const auto p = small_pools();
  auto cfg = quick_config();
  cfg.optimizer = nn::RMSProp{1e300, 0.9, 1e-7};
  try {
    train(p.source, p.target, DannConfig{}, cfg);
    FAIL() << "expected TrainingDiverged";
  } catch (const TrainingDiverged& e) {
    EXPECT_FALSE(e.record().train.empty());
    EXPECT_EQ(e.record().train.size(), e.epoch() + 1);
  }
}

TEST(Train, RejectsMislabelledDomainsAndWidths) {
  auto p = small_pools();
  EXPECT_THROW(train(p.target, p.source, DannConfig{}, quick_config()), DataError);
  DannConfig wide;
  wide.input_dim = 12;
  EXPECT_THROW(train(p.source, p.target, wide, quick_config()), ConfigError);
}

TEST(TrainRecord, CsvAndJson) {
  TrainRecord r;
  r.train = {{0.5, 0.6, -0.1}, {0.4, 0.6, -0.2}};
  r.validation = {{0.55, 0.6, -0.05}, {0.45, 0.6, -0.15}};
  r.best_epoch = 1;
  std::ostringstream out;
  write_record_csv(r, out);
  EXPECT_EQ(out.str().substr(0, out.str().find('\n')), "epoch,label_loss,domain_loss,total_loss,split");
  EXPECT_NE(out.str().find("1,0.45"), std::string::npos);
  const auto j = to_json(r);
  EXPECT_EQ(j.at("best_epoch"), 1);
  EXPECT_EQ(j.at("epochs"), 2);
  EXPECT_DOUBLE_EQ(j.at("best_label_loss").get<double>(), 0.45);
}

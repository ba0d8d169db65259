#pragma once

// Training loop: 1:1 source/target batches, dynamic stopping on the total
// loss, best-epoch selection on the label loss and an optional loss-spike
// guard with rollback.

#include "dann/data.hpp"
#include "dann/error.hpp"
#include "dann/model.hpp"
#include "dann/optimizer.hpp"

#include <nlohmann/json_fwd.hpp>

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

namespace dann {

struct EpochBounds {
  std::size_t min = 200;
  std::size_t max = 1000;
};

struct SpikeGuard {
  enum class Mode { Off, Detect, Rollback };
  Mode mode = Mode::Off;
  std::size_t rollback_epochs = 10;  // k
  std::size_t window = 50;
  double sigmas = 10.0;
};

// Split whose label loss picks the returned epoch.
enum class SelectionSplit { Validation, Training };

struct TrainConfig {
  std::size_t batch_size = 16384;
  nn::OptimizerKind optimizer = nn::RMSProp{};
  std::size_t stop_window = 50;
  double stop_threshold = 0.0005;
  EpochBounds epoch_bounds;
  std::uint64_t seed = 1;
  std::optional<double> lambda;          // overrides DannConfig::lambda
  std::optional<LossSetup> loss_setup;  // overrides DannConfig::setup
  double target_signal_fraction = 0.05;
  SpikeGuard spike_guard;
  double validation_fraction = 0.2;
  SelectionSplit selection = SelectionSplit::Validation;
};

// Throws ConfigError.
void validate(const TrainConfig& config);
TrainConfig train_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const TrainConfig& config);

struct EpochLosses {
  double label = 0.0;
  double domain = 0.0;
  double total = 0.0;  // label - lambda * domain

  friend bool operator==(const EpochLosses&, const EpochLosses&) = default;
};

struct TrainRecord {
  std::vector<EpochLosses> train;       // batch-averaged
  std::vector<EpochLosses> validation;  // full pass over the held-out split
  SelectionSplit selection = SelectionSplit::Validation;
  std::size_t best_epoch = 0;
  std::vector<std::size_t> spike_epochs;
  std::vector<std::size_t> rollback_epochs;
  double lambda = 0.0;
  LossSetup setup = LossSetup::A;

  std::size_t epochs() const { return train.size(); }
  const std::vector<EpochLosses>& selection_history() const {
    return selection == SelectionSplit::Validation ? validation : train;
  }
  double best_label_loss() const;

  friend bool operator==(const TrainRecord&, const TrainRecord&) = default;
};

nlohmann::json to_json(const TrainRecord& record);
// epoch,label_loss,domain_loss,total_loss,split
void write_record_csv(const TrainRecord& record, std::ostream& out);

// Raised on a non-finite loss or parameter; carries the history so far.
class TrainingDiverged : public NumericalError {
 public:
  TrainingDiverged(const std::string& what, TrainRecord record, std::size_t epoch)
      : NumericalError(what), record_(std::move(record)), epoch_(epoch) {}
  const TrainRecord& record() const { return record_; }
  std::size_t epoch() const { return epoch_; }

 private:
  TrainRecord record_;
  std::size_t epoch_;
};

struct Batch {
  std::vector<std::size_t> source;  // indices into the source pool
  std::vector<std::size_t> target;  // indices into the target pool
};

// One epoch of batches. Every source index appears exactly once; each batch
// holds equal source and target counts (batch_size/2, the last one possibly
// fewer). The target pool is reshuffled whenever it runs out.
std::vector<Batch> make_epoch_batches(std::size_t n_source, std::size_t n_target,
                                      std::size_t batch_size, nn::Rng& rng);

// `history` holds one total loss per completed epoch.
bool should_stop(std::span<const double> history, std::size_t window, double threshold,
                 EpochBounds bounds);

enum class SpikeAction { None, Flag, Restore };

// `trailing` are the label losses of earlier epochs (most recent last),
// `snapshots` the number of rollback snapshots available.
SpikeAction spike_monitor(std::span<const double> trailing, double current,
                          const SpikeGuard& guard, std::size_t snapshots);

// Per-event weights used by train(): label weights balance source signal and
// background; domain weights give the source the target's signal share and
// the same mean weight per event as the target.
struct TrainingWeights {
  std::vector<double> source_label;
  std::vector<double> source_domain;
  std::vector<double> target_domain;
};
TrainingWeights training_weights(const std::vector<data::Event>& source,
                                 const std::vector<data::Event>& target,
                                 double target_signal_fraction);

// Label, domain and total loss of a network over full event sets.
EpochLosses evaluate_losses(const DannNetwork& net, const std::vector<data::Event>& source,
                            const std::vector<data::Event>& target, double lambda,
                            double target_signal_fraction);

struct TrainResult {
  DannNetwork network;  // parameters of the best epoch
  TrainRecord record;
  std::vector<data::Event> validation_source;
  std::vector<data::Event> validation_target;
};

// State at the end of an epoch, after any rollback.
struct EpochView {
  std::size_t epoch;
  SpikeAction action;
  const DannNetwork& network;
  const nn::OptimizerState& optimizer;
  const TrainRecord& record;
};
using EpochObserver = std::function<void(const EpochView&)>;

// `source` must hold source events and `target` target events. Target labels
// are never read.
TrainResult train(const data::Dataset& source, const data::Dataset& target,
                  const DannConfig& dann_config, const TrainConfig& train_config,
                  const EpochObserver& observer = {});

}  // namespace dann

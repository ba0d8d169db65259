#pragma once

// Domain-adversarial network: a shared feature extractor feeding a label
// predictor (signal vs background, trained on source events only) and a
// domain classifier (source vs target) through a gradient reversal layer.
//
// The reversal layer is the identity in the forward pass. In the backward
// pass the gradient reaching the extractor from the domain branch is scaled
// by -lambda, so extractor parameters receive dLy/dtheta_f - lambda * dLd/dtheta_f
// while both heads receive their ordinary gradients.

#include "dann/data.hpp"
#include "dann/nn.hpp"
#include "dann/optimizer.hpp"

#include <nlohmann/json_fwd.hpp>

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace dann {

// A: softmax + cross-entropy on both heads.
// B: softmax + cross-entropy on the label head; a single linear output unit
//    with loss -y (source) / +y (target) on the domain head.
enum class LossSetup { A, B };

std::string to_string(LossSetup setup);
LossSetup parse_loss_setup(const std::string& name);

struct DannConfig {
  std::size_t input_dim = 10;
  std::vector<std::size_t> feature_sizes{20, 16, 13, 10};
  std::vector<std::size_t> label_sizes{2};
  std::vector<std::size_t> domain_sizes{20, 35, 50, 2};
  nn::Activation hidden = nn::Activation::elu();
  double lambda = 0.0;
  LossSetup setup = LossSetup::A;

  // Domain-head widths actually built: set-up B replaces the last width by 1.
  std::vector<std::size_t> built_domain_sizes() const;
};

// Throws ConfigError.
void validate(const DannConfig& config);

DannConfig dann_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const DannConfig& config);

struct DannNetwork {
  DannConfig config;
  data::Standardizer standardizer;
  nn::Stack feature_extractor;
  nn::Stack label_predictor;
  nn::Stack domain_classifier;

  // Xavier weights and zero biases, drawn in extractor, label, domain order.
  static DannNetwork create(const DannConfig& config, nn::Rng& rng);

  // Standardised feature matrix for these events.
  nn::Matrix prepare(const std::vector<data::Event>& events) const;
  std::size_t parameter_count() const;
  bool finite() const;

  friend bool operator==(const DannNetwork& a, const DannNetwork& b);
};

struct DannOutputs {
  nn::ForwardCache extractor;
  nn::ForwardCache label;
  nn::ForwardCache domain;

  const nn::Matrix& features() const { return extractor.output(); }
  // [n x 2], rows (1 - y, y) with y the signal probability.
  const nn::Matrix& label_probs() const { return label.output(); }
  // Set-up A: [n x 2] softmax with column 1 = source. Set-up B: [n x 1] score.
  const nn::Matrix& domain_scores() const { return domain.output(); }
  std::vector<double> signal_probability() const;
};

// `batch` must already be standardised (see DannNetwork::prepare).
DannOutputs dann_forward(const DannNetwork& net, const nn::Matrix& batch);

// Signal probability for raw events.
std::vector<double> predict(const DannNetwork& net, const std::vector<data::Event>& events);

// Per-event supervision of one batch. Label weights of target events are
// ignored (the gate); target labels are never read.
struct BatchLabels {
  std::span<const data::Label> labels;
  std::span<const data::Domain> domains;
  std::span<const double> label_weights;
  std::span<const double> domain_weights;
};

// Weighted mean cross-entropy over source events. Throws DataError
// ("empty source batch") when the source weight is zero.
double label_loss(const DannOutputs& outputs, std::span<const data::Label> labels,
                  std::span<const data::Domain> domains, std::span<const double> weights);

// Weighted mean over all events: cross-entropy with class 1 = source (A), or
// -y for source and +y for target (B). Warns when one domain is missing.
double domain_loss(const DannOutputs& outputs, std::span<const data::Domain> domains,
                   std::span<const double> weights, LossSetup setup);

struct DannGradients {
  std::vector<nn::LayerGrad> feature_extractor;
  std::vector<nn::LayerGrad> label_predictor;
  std::vector<nn::LayerGrad> domain_classifier;
};

// Gradients for one optimiser step with the reversal applied at the
// extractor/domain-classifier boundary.
DannGradients dann_backward(const DannNetwork& net, const DannOutputs& outputs,
                            const BatchLabels& batch, double lambda);

// Plain dLy/dtheta (domain-classifier entries are zero) and dLd/dtheta
// (label-predictor entries are zero), with no reversal anywhere.
DannGradients label_gradients(const DannNetwork& net, const DannOutputs& outputs,
                              const BatchLabels& batch);
DannGradients domain_gradients(const DannNetwork& net, const DannOutputs& outputs,
                               const BatchLabels& batch);

// Parameter/gradient pairs in extractor, label, domain order.
std::vector<nn::ParamSlot> parameter_slots(DannNetwork& net, const DannGradients& grads);

enum class BalanceHead { Label, Domain };

// Label: source signal and source background weight sums become equal, their
// total unchanged; target events get weight 0.
// Domain: source weights rescaled so that the source signal share equals
// target_signal_fraction and the source total equals the target total;
// target weights are kept. Throws DataError naming an empty class.
std::vector<double> balance_weights(const std::vector<data::Event>& events, BalanceHead head,
                                    double target_signal_fraction);

// JSON checkpoint: format tag, version, config, standardiser and every layer
// as row-major weights plus biases. `metadata` is stored verbatim.
inline constexpr int kCheckpointVersion = 1;
nlohmann::json checkpoint_to_json(const DannNetwork& net, const nlohmann::json& metadata);
DannNetwork checkpoint_from_json(const nlohmann::json& j, nlohmann::json* metadata = nullptr);
void save_checkpoint(const DannNetwork& net, const std::filesystem::path& path,
                     const nlohmann::json& metadata);
DannNetwork load_checkpoint(const std::filesystem::path& path, nlohmann::json* metadata = nullptr);

}  // namespace dann

#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace dann::nn {

// Uncentered RMSProp: s <- rho*s + (1-rho)*g^2; theta <- theta - lr*g/(sqrt(s)+eps).
struct RMSProp {
  double learning_rate = 0.001;
  double rho = 0.9;
  double epsilon = 1e-7;
};

// Bias-corrected Adam.
struct Adam {
  double learning_rate = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-7;
};

using OptimizerKind = std::variant<RMSProp, Adam>;

// Throws ConfigError when a hyper-parameter is out of range.
void validate(const OptimizerKind& kind);
std::string name(const OptimizerKind& kind);

// One slot per parameter tensor; accumulators mirror the tensor sizes.
struct OptimizerState {
  std::vector<std::vector<double>> first;   // Adam m
  std::vector<std::vector<double>> second;  // RMSProp s / Adam v
  long step = 0;

  bool empty() const { return second.empty(); }
  friend bool operator==(const OptimizerState&, const OptimizerState&) = default;
};

struct ParamSlot {
  std::span<double> value;
  std::span<const double> grad;
};

// Applies one update to every slot. The state is zero-initialised on the first
// call; later calls must present the same slot layout (std::logic_error otherwise).
void optimizer_step(std::span<const ParamSlot> slots, OptimizerState& state,
                    const OptimizerKind& kind);

}  // namespace dann::nn

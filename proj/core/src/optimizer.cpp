#include "dann/optimizer.hpp"

#include "dann/error.hpp"

#include <cmath>
#include <stdexcept>

namespace dann::nn {
namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};

bool open_unit(double x) { return x > 0.0 && x < 1.0; }

void prepare(std::span<const ParamSlot> slots, OptimizerState& state, bool needs_first) {
  if (state.empty()) {
    state.second.resize(slots.size());
    for (std::size_t i = 0; i < slots.size(); ++i) state.second[i].assign(slots[i].value.size(), 0.0);
    if (needs_first) state.first = state.second;
    state.step = 0;
    return;
  }
  if (state.second.size() != slots.size() || (needs_first && state.first.size() != slots.size())) {
    throw std::logic_error("optimizer state does not match the parameter layout");
  }
  for (std::size_t i = 0; i < slots.size(); ++i) {
    if (state.second[i].size() != slots[i].value.size()) {
      throw std::logic_error("optimizer state does not match the parameter layout");
    }
  }
}

}  // namespace

void validate(const OptimizerKind& kind) {
  std::visit(overloaded{
                 [](const RMSProp& o) {
                   if (!(o.learning_rate > 0.0)) throw ConfigError("rmsprop: learning_rate must be > 0");
                   if (!open_unit(o.rho)) throw ConfigError("rmsprop: rho must lie in (0,1)");
                   if (!(o.epsilon > 0.0)) throw ConfigError("rmsprop: epsilon must be > 0");
                 },
                 [](const Adam& o) {
                   if (!(o.learning_rate > 0.0)) throw ConfigError("adam: learning_rate must be > 0");
                   if (!open_unit(o.beta1) || !open_unit(o.beta2)) {
                     throw ConfigError("adam: beta1 and beta2 must lie in (0,1)");
                   }
                   if (!(o.epsilon > 0.0)) throw ConfigError("adam: epsilon must be > 0");
                 },
             },
             kind);
}

std::string name(const OptimizerKind& kind) {
  return std::holds_alternative<RMSProp>(kind) ? "rmsprop" : "adam";
}

void optimizer_step(std::span<const ParamSlot> slots, OptimizerState& state,
                    const OptimizerKind& kind) {
  for (const ParamSlot& slot : slots) {
    if (slot.value.size() != slot.grad.size()) {
      throw std::logic_error("optimizer_step: parameter and gradient sizes differ");
    }
  }
  std::visit(overloaded{
                 [&](const RMSProp& o) {
                   prepare(slots, state, false);
                   ++state.step;
                   for (std::size_t i = 0; i < slots.size(); ++i) {
                     auto& s = state.second[i];
                     const auto g = slots[i].grad;
                     const auto p = slots[i].value;
                     for (std::size_t j = 0; j < p.size(); ++j) {
                       s[j] = o.rho * s[j] + (1.0 - o.rho) * g[j] * g[j];
                       p[j] -= o.learning_rate * g[j] / (std::sqrt(s[j]) + o.epsilon);
                     }
                   }
                 },
                 [&](const Adam& o) {
                   prepare(slots, state, true);
                   ++state.step;
                   const double t = static_cast<double>(state.step);
                   const double c1 = 1.0 - std::pow(o.beta1, t);
                   const double c2 = 1.0 - std::pow(o.beta2, t);
                   for (std::size_t i = 0; i < slots.size(); ++i) {
                     auto& m = state.first[i];
                     auto& v = state.second[i];
                     const auto g = slots[i].grad;
                     const auto p = slots[i].value;
                     for (std::size_t j = 0; j < p.size(); ++j) {
                       m[j] = o.beta1 * m[j] + (1.0 - o.beta1) * g[j];
                       v[j] = o.beta2 * v[j] + (1.0 - o.beta2) * g[j] * g[j];
                       const double m_hat = m[j] / c1;
                       const double v_hat = v[j] / c2;
                       p[j] -= o.learning_rate * m_hat / (std::sqrt(v_hat) + o.epsilon);
                     }
                   }
                 },
             },
             kind);
}

}  // namespace dann::nn

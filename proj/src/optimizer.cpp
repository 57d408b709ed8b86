#include "sdp/optimizer.hpp"

#include <cmath>

#include "sdp/errors.hpp"

namespace sdp {

std::string to_string(OptimizerKind kind) {
  return kind == OptimizerKind::kSgdNesterov ? "sgd_nesterov" : "adam";
}

OptimizerKind parse_optimizer_kind(std::string_view text) {
  if (text == "sgd_nesterov" || text == "sgd") return OptimizerKind::kSgdNesterov;
  if (text == "adam") return OptimizerKind::kAdam;
  throw ConfigError("optimizer.kind must be 'sgd_nesterov' or 'adam', got '" +
                    std::string(text) + "'");
}

OptimizerState OptimizerState::make(OptimizerKind kind, std::size_t size, double momentum) {
  OptimizerState s;
  s.kind = kind;
  s.momentum = momentum;
  s.velocity.assign(size, 0.0);
  if (kind == OptimizerKind::kAdam) s.second.assign(size, 0.0);
  return s;
}

void opt_update(std::vector<double>& theta, std::span<const double> grad, OptimizerState& state,
                double lr) {
  if (grad.size() != theta.size() || state.velocity.size() != theta.size()) {
    throw ShapeError("opt_update: gradient, state and parameters must have equal length");
  }
  if (!(lr >= 0.0)) throw ConfigError("opt_update: learning rate must be >= 0");
  for (std::size_t j = 0; j < grad.size(); ++j) {
    if (!std::isfinite(grad[j])) {
      throw NumericalError("non-finite aggregated gradient at parameter index " +
                           std::to_string(j));
    }
  }
  ++state.steps;
  const double mu = state.momentum;
  if (state.kind == OptimizerKind::kSgdNesterov) {
    for (std::size_t j = 0; j < theta.size(); ++j) {
      state.velocity[j] = mu * state.velocity[j] + grad[j];
      theta[j] -= lr * (grad[j] + mu * state.velocity[j]);
    }
    return;
  }
  const double t = static_cast<double>(state.steps);
  const double c1 = 1.0 - std::pow(mu, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t j = 0; j < theta.size(); ++j) {
    state.velocity[j] = mu * state.velocity[j] + (1.0 - mu) * grad[j];
    state.second[j] = state.beta2 * state.second[j] + (1.0 - state.beta2) * grad[j] * grad[j];
    theta[j] -= lr * (state.velocity[j] / c1) / (std::sqrt(state.second[j] / c2) + state.eps);
  }
}

}  // namespace sdp

#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace sdp {

enum class OptimizerKind { kSgdNesterov, kAdam };

std::string to_string(OptimizerKind kind);
OptimizerKind parse_optimizer_kind(std::string_view text);

// One global optimizer state aligned with theta.
struct OptimizerState {
  OptimizerKind kind = OptimizerKind::kSgdNesterov;
  double momentum = 0.9;  // SGD momentum, or Adam's first-moment decay
  double beta2 = 0.999;
  double eps = 1e-8;
  std::vector<double> velocity;  // SGD buffer / Adam first moment
  std::vector<double> second;    // Adam second moment
  std::size_t steps = 0;

  static OptimizerState make(OptimizerKind kind, std::size_t size, double momentum = 0.9);
};

// SGD-Nesterov: v <- mu*v + g; theta <- theta - lr*(g + mu*v).
// Throws NumericalError if the gradient is not finite (theta left untouched).
void opt_update(std::vector<double>& theta, std::span<const double> grad, OptimizerState& state,
                double lr);

}  // namespace sdp

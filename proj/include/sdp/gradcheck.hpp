#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "sdp/model.hpp"
#include "sdp/tape.hpp"

namespace sdp {

struct GradCheckResult {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t checked = 0;  // gradient entries compared
  bool passed = false;
};

// |a - n| / max(|a| + |n|, 1e-6)
double gradient_relative_error(double analytic, double numeric);

// Builds a scalar loss from leaves registered as parameters 0..k-1.
using LossBuilder = std::function<Var(Tape&, const std::vector<Var>&)>;

// Central differences with step h against Tape::backward. `per_tensor` > 0
// samples that many entries of each input instead of all of them.
GradCheckResult check_gradients(std::string name, std::vector<Tensor> inputs,
                                const LossBuilder& build, double tolerance, double h = 1e-5,
                                std::size_t per_tensor = 0, std::uint64_t seed = 1);

// Same check for a full (optionally masked) model pass with respect to theta.
GradCheckResult check_model_gradients(std::string name, const GlobalModel& model,
                                      const WorkerMask* mask, const Batch& batch,
                                      double tolerance, std::size_t per_param,
                                      std::uint64_t seed = 1, double h = 1e-5);

// Every tape operator plus full mini-resnet / residual-MLP passes.
std::vector<GradCheckResult> run_grad_check_suite(double tolerance = 1e-4,
                                                  std::uint64_t seed = 7);

}  // namespace sdp

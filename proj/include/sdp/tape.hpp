#pragma once

#include <compare>
#include <cstddef>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "sdp/tensor.hpp"

namespace sdp {

inline constexpr double kGroupNormEps = 1e-5;

// Index of a parameter tensor inside a model's parameter table.
struct ParamId {
  std::size_t index = 0;
  auto operator<=>(const ParamId&) const = default;
};

// Handle to a value recorded on a Tape.
struct Var {
  std::size_t id = 0;
};

enum class TapeMode {
  kTraining,   // parameters require gradients, backward rules are recorded
  kInference,  // parameters are treated as constants
};

// Reverse-mode autodiff tape. One tape per forward pass; nodes are appended
// in execution order, so the node list is already topologically sorted.
class Tape {
 public:
  explicit Tape(TapeMode mode = TapeMode::kTraining) : mode_(mode) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  // Batch data. Counted as an activation root but never differentiated.
  Var input(Tensor value);
  // Non-differentiable, non-activation value.
  Var constant(Tensor value);
  Var parameter(ParamId id, Tensor value);

  const Tensor& value(Var v) const { return nodes_.at(v.id).value; }
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }

  Var matmul(Var a, Var b);
  // x[B,in] * W[out,in]^T + b[out]
  Var linear(Var x, Var weight, Var bias);
  // Direct cross-correlation over x[B,Cin,H,W] with w[Cout,Cin,k,k].
  Var conv2d(Var x, Var weight, Var bias, std::size_t stride, std::size_t pad);
  // Statistics use only channels flagged in `active` (empty = all active);
  // inactive channels produce exact zeros.
  Var group_norm(Var x, std::size_t groups, Var gamma, Var beta,
                 const std::vector<bool>& active, double eps = kGroupNormEps);
  Var relu(Var x);
  Var add(Var a, Var b);
  Var mul(Var a, Var b);
  Var scale(Var x, double factor);
  Var mask(Var x, const Tensor& mask);
  Var global_avg_pool(Var x);
  Var flatten(Var x);
  Var sum(Var x);
  // Mean over the batch of -log softmax(logits)[label].
  Var softmax_cross_entropy(Var logits, std::span<const int> labels);

  // Gradients of a scalar loss with respect to every parameter leaf.
  std::map<ParamId, Tensor> backward(Var loss);

  // Elements held by batch-dependent intermediate values.
  std::size_t activation_elements() const noexcept;
  std::size_t node_count() const noexcept { return nodes_.size(); }

 private:
  using BackwardRule = std::function<void(Tape&, std::size_t)>;

  struct Node {
    Tensor value;
    Tensor grad;
    std::vector<std::size_t> inputs;
    BackwardRule backward;
    std::optional<ParamId> param;
    bool requires_grad = false;
    bool data_dependent = false;
  };

  Var push(Tensor value, std::vector<std::size_t> inputs, BackwardRule rule);
  Tensor& grad_of(std::size_t id);
  const Tensor& out_grad(std::size_t id) const { return nodes_[id].grad; }
  bool wants_grad(std::size_t id) const { return nodes_[id].requires_grad; }

  TapeMode mode_;
  std::vector<Node> nodes_;
};

}  // namespace sdp

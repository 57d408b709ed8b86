#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "sdp/masking.hpp"
#include "sdp/tape.hpp"
#include "sdp/topology.hpp"

namespace sdp {

// stem conv -> GN -> ReLU -> residual blocks (conv-GN-ReLU-conv-GN + x)
// -> global average pool -> linear head
struct MiniResNetSpec {
  std::size_t channels = 26;
  std::size_t blocks = 8;
  std::size_t classes = 10;
  std::size_t norm_groups = 2;
  std::size_t in_channels = 3;
  std::size_t height = 7;
  std::size_t width = 7;
  std::size_t stem_stride = 2;
};

// linear stem -> ReLU -> residual blocks (fc-ReLU-fc + x) -> linear head
struct ResidualMlpSpec {
  std::size_t inputs = 2;
  std::size_t width = 32;
  std::size_t blocks = 4;
  std::size_t classes = 2;
};

// Both builders draw classical fan-out Kaiming weights (every unit active).
GlobalModel build_mini_resnet(const MiniResNetSpec& spec, std::uint64_t seed);
GlobalModel build_residual_mlp(const ResidualMlpSpec& spec, std::uint64_t seed);

// Kaiming-normal weights with variance 2 / fan_out_active, where
// fan_out_active = round(fan_out * mean_i(active output units_i / output units)).
// Biases zero, norm scale one, norm shift zero.
std::vector<double> masked_kaiming_init(const GlobalModel& model, const MaskAssignment& assignment,
                                        std::uint64_t seed);

// Active share of a layer's output units, averaged over workers.
double active_output_fraction(const ModelTopology& topology, const MaskAssignment& assignment,
                              std::size_t layer);

struct Batch {
  Tensor inputs;  // [B, ...input_shape]
  std::vector<int> labels;
};

enum class BlockExecution {
  kStructural,      // dropped blocks are not executed at all
  kMultiplicative,  // dropped blocks run on zeroed parameters, output scaled by z = 0
};

struct ForwardPass {
  Tape tape;
  Var logits;
  Var loss;
};

// Forward on m_i (.) theta. A null mask runs the full model.
ForwardPass masked_forward(const GlobalModel& model, const WorkerMask* mask, const Batch& batch,
                           BlockExecution execution = BlockExecution::kStructural,
                           TapeMode mode = TapeMode::kTraining);

// Runs backward on the pass and scatters the result into a vector aligned
// with theta; parameters absent from the tape get zero.
std::vector<double> flat_gradient(const GlobalModel& model, ForwardPass& pass);

// Fraction of correctly classified samples, unmasked model, evaluated in chunks.
double evaluate_accuracy(const GlobalModel& model, const Tensor& inputs,
                         std::span<const int> labels, std::size_t chunk = 256);

// theta as little-endian float64 (`<stem>.bin`) plus a JSON index (`<stem>.json`).
void save_checkpoint(const GlobalModel& model, const std::filesystem::path& stem);
std::vector<double> load_checkpoint(const ModelTopology& topology,
                                    const std::filesystem::path& stem);

}  // namespace sdp

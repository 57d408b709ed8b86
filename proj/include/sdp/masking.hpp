#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "sdp/tensor.hpp"
#include "sdp/topology.hpp"

namespace sdp {

enum class Strategy { kNeuron, kBlock };

std::string to_string(Strategy s);
Strategy parse_strategy(std::string_view text);

enum class UnitKind { kChannel, kBlock };

// A channel/neuron of a layer (owner = layer index) or a residual block
// (owner = block index, index unused).
struct StructuralUnit {
  UnitKind kind = UnitKind::kChannel;
  std::size_t owner = 0;
  std::size_t index = 0;

  friend bool operator==(const StructuralUnit&, const StructuralUnit&) = default;
};

std::string unit_name(const ModelTopology& topology, const StructuralUnit& unit);
StructuralUnit parse_unit(const ModelTopology& topology, std::string_view name);

// Channel units in layer order; each (layer, norm group) is one contiguous run.
std::vector<StructuralUnit> channel_units(const ModelTopology& topology);
std::vector<std::size_t> channel_unit_groups(const ModelTopology& topology);
std::vector<StructuralUnit> block_units(const ModelTopology& topology);

// unit index -> sorted worker ids
using UnitWorkers = std::vector<std::vector<std::size_t>>;

// Seeded permutation of the units laid out cyclically: the j-th unit of the
// permutation gets workers {(o_j + t) mod N : t < P} with o_j = floor(j*N/K).
UnitWorkers assign_units(std::size_t unit_count, std::size_t workers, std::size_t overlap,
                         std::uint64_t seed);

// Like assign_units, but additionally balances every group (consecutive runs
// of `group_sizes` units): each worker holds floor or ceil of G*P/N units of
// every group of size G, and total loads still differ by at most one.
UnitWorkers assign_grouped_units(std::span<const std::size_t> group_sizes, std::size_t workers,
                                 std::size_t overlap, std::uint64_t seed);

// Per-worker view of the assignment.
struct WorkerMask {
  std::vector<std::uint8_t> params;               // m_i over the flat parameter vector
  std::vector<std::vector<bool>> channel_active;  // per layer; empty if not channel-masked
  std::vector<bool> block_active;                 // per block
  std::vector<Tensor> param_masks;                // per parameter tensor; empty when all ones

  std::size_t active_params() const;
  bool block_on(std::size_t block) const { return block_active.empty() || block_active[block]; }
  // Active flags for a layer's output units, or empty (all active).
  const std::vector<bool>& layer_channels(std::size_t layer) const;
};

// per layer output-unit flags (empty vector for layers that are not maskable)
using ChannelMasks = std::vector<std::vector<bool>>;

std::vector<WorkerMask> induce_channel_param_mask(const ModelTopology& topology,
                                                  const std::vector<ChannelMasks>& per_worker);
std::vector<WorkerMask> induce_block_param_mask(const ModelTopology& topology,
                                                const std::vector<std::vector<bool>>& per_worker);

struct MaskAssignment {
  Strategy strategy = Strategy::kBlock;
  std::size_t workers = 1;
  std::size_t overlap = 1;
  std::uint64_t seed = 0;
  std::vector<StructuralUnit> units;
  UnitWorkers unit_workers;
  std::vector<WorkerMask> masks;
};

MaskAssignment build_assignment(const ModelTopology& topology, Strategy strategy,
                                std::size_t workers, std::size_t overlap, std::uint64_t seed);

// Rebuilds the per-worker parameter masks from an explicit unit map.
MaskAssignment assignment_from_units(const ModelTopology& topology, Strategy strategy,
                                     std::size_t workers, std::size_t overlap,
                                     std::vector<StructuralUnit> units, UnitWorkers unit_workers,
                                     std::uint64_t seed = 0);

// Parameter elements whose mask depends on some structural unit.
std::vector<bool> governed_parameters(const ModelTopology& topology,
                                      const MaskAssignment& assignment);

struct ValidationReport {
  bool dp_equivalent = false;
  std::vector<std::size_t> units_per_worker;
  std::vector<std::size_t> active_params_per_worker;
};

// Throws ValidationError naming the offending units/parameters.
ValidationReport validate(const ModelTopology& topology, const MaskAssignment& assignment);

nlohmann::json to_json(const ModelTopology& topology, const MaskAssignment& assignment);
MaskAssignment assignment_from_json(const ModelTopology& topology, const nlohmann::json& doc);

}  // namespace sdp

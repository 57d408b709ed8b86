#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "sdp/tape.hpp"
#include "sdp/tensor.hpp"

namespace sdp {

enum class Architecture { kMiniResNet, kResidualMlp };

enum class LayerKind { kConv, kLinear, kGroupNorm };

// GroupNorm reuses kWeight/kBias for its scale/shift.
enum class ParamRole { kWeight, kBias };

struct ParamSpec {
  std::string name;
  Shape shape;
  std::size_t offset = 0;  // into the flat parameter vector
  std::size_t size = 0;
  ParamRole role = ParamRole::kWeight;
  std::size_t layer = 0;
};

struct LayerDesc {
  std::string name;
  LayerKind kind = LayerKind::kConv;
  ParamId weight;
  ParamId bias;
  std::size_t in_units = 0;
  std::size_t out_units = 0;
  std::size_t kernel = 1;
  std::size_t stride = 1;
  std::size_t pad = 0;
  std::size_t norm_groups = 0;
  std::optional<std::size_t> block;
  // Output units of this layer are structural channel/neuron units.
  bool out_maskable = false;
  // Layer whose output-unit mask zeroes our input slice W[:, c].
  std::optional<std::size_t> input_mask_from;
  // GroupNorm only: layer whose output-unit mask governs our scale/shift.
  std::optional<std::size_t> affine_mask_from;
};

struct BlockDesc {
  std::string name;
  std::vector<std::size_t> layers;
  bool has_skip = true;
  bool maskable = true;
};

// One batch-dependent value recorded by the forward pass, per sample.
// Sites are listed in forward order and mirror what the tape records when
// dropped blocks are skipped structurally.
struct ActivationSite {
  std::size_t units = 1;
  std::size_t elements_per_unit = 1;
  std::optional<std::size_t> unit_layer;  // elements scale with this layer's active units
  std::optional<std::size_t> block;       // vanishes when this block is dropped
  bool per_batch = false;                 // a scalar for the whole batch (the loss)
};

struct ModelTopology {
  Architecture arch = Architecture::kMiniResNet;
  Shape input_shape;  // per sample
  std::size_t classes = 0;
  std::size_t total_params = 0;
  std::vector<ParamSpec> params;
  std::vector<LayerDesc> layers;
  std::vector<BlockDesc> blocks;
  std::vector<ActivationSite> activations;

  const ParamSpec& param(ParamId id) const { return params.at(id.index); }
  std::optional<std::size_t> find_layer(std::string_view name) const;
  std::optional<ParamId> find_param(std::string_view name) const;

  // Parameters owned by a block's layers, in table order.
  std::vector<ParamId> block_params(std::size_t block) const;

  // Throws TopologyError if ids do not partition the parameter vector, a
  // maskable block lacks a skip, or a mask reference dangles / points forward.
  void check() const;
};

// Shared parameter vector plus its layout.
struct GlobalModel {
  ModelTopology topology;
  std::vector<double> theta;

  std::span<const double> param(ParamId id) const;
  std::span<double> param(ParamId id);
  Tensor param_tensor(ParamId id) const;
};

}  // namespace sdp

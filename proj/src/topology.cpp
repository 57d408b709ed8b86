#include "sdp/topology.hpp"

#include "sdp/errors.hpp"

namespace sdp {

std::optional<std::size_t> ModelTopology::find_layer(std::string_view name) const {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (layers[i].name == name) return i;
  }
  return std::nullopt;
}

std::optional<ParamId> ModelTopology::find_param(std::string_view name) const {
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].name == name) return ParamId{i};
  }
  return std::nullopt;
}

std::vector<ParamId> ModelTopology::block_params(std::size_t block) const {
  std::vector<ParamId> out;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& owner = layers.at(params[i].layer).block;
    if (owner && *owner == block) out.push_back(ParamId{i});
  }
  return out;
}

void ModelTopology::check() const {
  std::size_t expected_offset = 0;
  for (const auto& p : params) {
    if (p.offset != expected_offset || p.size != shape_numel(p.shape)) {
      throw TopologyError("parameter '" + p.name + "' does not tile the parameter vector");
    }
    if (p.layer >= layers.size()) {
      throw TopologyError("parameter '" + p.name + "' refers to a missing layer");
    }
    expected_offset += p.size;
  }
  if (expected_offset != total_params) {
    throw TopologyError("parameter table covers " + std::to_string(expected_offset) +
                        " values, expected " + std::to_string(total_params));
  }
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& l = layers[i];
    for (auto ref : {l.input_mask_from, l.affine_mask_from}) {
      if (!ref) continue;
      if (*ref >= i) {
        throw TopologyError("layer '" + l.name + "' depends on a mask that is not upstream");
      }
      if (!layers[*ref].out_maskable) {
        throw TopologyError("layer '" + l.name + "' depends on non-maskable layer '" +
                            layers[*ref].name + "'");
      }
    }
    if (l.block && *l.block >= blocks.size()) {
      throw TopologyError("layer '" + l.name + "' refers to a missing block");
    }
  }
  for (const auto& b : blocks) {
    if (b.maskable && !b.has_skip) {
      throw TopologyError("block '" + b.name + "' is maskable but has no skip connection");
    }
  }
}

std::span<const double> GlobalModel::param(ParamId id) const {
  const auto& p = topology.param(id);
  return std::span<const double>(theta).subspan(p.offset, p.size);
}

std::span<double> GlobalModel::param(ParamId id) {
  const auto& p = topology.param(id);
  return std::span<double>(theta).subspan(p.offset, p.size);
}

Tensor GlobalModel::param_tensor(ParamId id) const {
  const auto values = param(id);
  return Tensor(topology.param(id).shape, std::vector<double>(values.begin(), values.end()));
}

}  // namespace sdp

#pragma once

// Mask rules restated from parameter names alone, independent of the
// topology's dependency metadata.

#include <cstdint>
#include <string>
#include <vector>

#include "sdp/masking.hpp"

namespace oracle {

inline bool starts_with(const std::string& s, const std::string& p) { return s.rfind(p, 0) == 0; }

// block index encoded in "block<k>.<layer>.<role>", or -1
inline long block_of(const std::string& name) {
  if (!starts_with(name, "block")) return -1;
  return std::stol(name.substr(5, name.find('.') - 5));
}

inline std::string layer_of(const std::string& name) {
  const auto first = name.find('.');
  const auto second = name.find('.', first + 1);
  return name.substr(first + 1, second - first - 1);
}

// Expected m_i for one worker from its per-block channel flags (the
// channels of each block's first layer) or its block flags.
inline std::vector<std::uint8_t> expected_mask(const sdp::ModelTopology& topo, sdp::Strategy strategy,
                                               const std::vector<std::vector<bool>>& block_channels,
                                               const std::vector<bool>& blocks_on) {
  std::vector<std::uint8_t> m(topo.total_params, 1);
  for (const auto& p : topo.params) {
    const long blk = block_of(p.name);
    if (blk < 0) continue;
    if (strategy == sdp::Strategy::kBlock) {
      if (!blocks_on[static_cast<std::size_t>(blk)]) {
        for (std::size_t e = 0; e < p.size; ++e) m[p.offset + e] = 0;
      }
      continue;
    }
    const auto& on = block_channels[static_cast<std::size_t>(blk)];
    const std::string layer = layer_of(p.name);
    const bool weight = p.name.ends_with(".weight");
    if (layer == "conv1" || layer == "fc1" || layer == "norm1") {
      // row c (and bias / affine entry c)
      const std::size_t per_row = p.size / p.shape[0];
      for (std::size_t e = 0; e < p.size; ++e) m[p.offset + e] = on[e / per_row];
    } else if ((layer == "conv2" || layer == "fc2") && weight) {
      // input column c
      const std::size_t cols = p.shape[1];
      const std::size_t inner = p.size / (p.shape[0] * cols);
      for (std::size_t e = 0; e < p.size; ++e) m[p.offset + e] = on[(e / inner) % cols];
    }
  }
  return m;
}

// True where the oracle says a parameter depends on some unit.
inline std::vector<bool> maskable(const sdp::ModelTopology& topo, sdp::Strategy strategy) {
  std::vector<bool> out(topo.total_params, false);
  for (const auto& p : topo.params) {
    if (block_of(p.name) < 0) continue;
    const std::string layer = layer_of(p.name);
    const bool take = strategy == sdp::Strategy::kBlock || layer == "conv1" || layer == "fc1" ||
                      layer == "norm1" ||
                      ((layer == "conv2" || layer == "fc2") && p.name.ends_with(".weight"));
    if (take) {
      for (std::size_t e = 0; e < p.size; ++e) out[p.offset + e] = true;
    }
  }
  return out;
}

}  // namespace oracle

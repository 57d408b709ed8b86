#include "sdp/masking.hpp"

#include <algorithm>
#include <numeric>
#include <random>
#include <set>

#include "sdp/errors.hpp"

namespace sdp {
namespace {

void check_counts(std::size_t workers, std::size_t overlap) {
  if (workers < 1) throw ConfigError("workers (N) must be >= 1");
  if (overlap < 1 || overlap > workers) {
    throw ConfigError("overlap (P) must satisfy 1 <= P <= N; got P=" + std::to_string(overlap) +
                      ", N=" + std::to_string(workers));
  }
}

std::optional<std::size_t> norm_for(const ModelTopology& topo, std::size_t layer) {
  for (std::size_t i = 0; i < topo.layers.size(); ++i) {
    if (topo.layers[i].affine_mask_from == layer) return i;
  }
  return std::nullopt;
}

Tensor mask_tensor(const ParamSpec& p, const std::vector<std::uint8_t>& flat) {
  const auto first = flat.begin() + static_cast<std::ptrdiff_t>(p.offset);
  const auto last = first + static_cast<std::ptrdiff_t>(p.size);
  if (std::all_of(first, last, [](std::uint8_t v) { return v == 1; })) return Tensor();
  return Tensor(p.shape, std::vector<double>(first, last));
}

void fill_param_masks(const ModelTopology& topo, WorkerMask& m) {
  m.param_masks.clear();
  for (const auto& p : topo.params) m.param_masks.push_back(mask_tensor(p, m.params));
}

std::string list_names(const std::vector<std::string>& names) {
  std::string out;
  const std::size_t shown = std::min<std::size_t>(names.size(), 12);
  for (std::size_t i = 0; i < shown; ++i) out += (i ? ", " : "") + names[i];
  if (names.size() > shown) out += ", ... (" + std::to_string(names.size()) + " total)";
  return out;
}

constexpr std::int64_t kAlwaysActive = -1;
constexpr std::int64_t kMultiUnit = -2;

// For every parameter element, the index of the unit governing it.
std::vector<std::int64_t> governing_units(const ModelTopology& topo, Strategy strategy,
                                          const std::vector<StructuralUnit>& units) {
  std::vector<std::int64_t> gov(topo.total_params, kAlwaysActive);
  auto claim = [&](std::size_t element, std::int64_t unit) {
    gov[element] = gov[element] == kAlwaysActive || gov[element] == unit ? unit : kMultiUnit;
  };
  if (strategy == Strategy::kBlock) {
    for (std::size_t u = 0; u < units.size(); ++u) {
      for (ParamId id : topo.block_params(units[u].owner)) {
        const auto& p = topo.param(id);
        for (std::size_t e = 0; e < p.size; ++e) claim(p.offset + e, static_cast<std::int64_t>(u));
      }
    }
    return gov;
  }
  // unit lookup by (layer, channel)
  std::vector<std::vector<std::int64_t>> lookup(topo.layers.size());
  for (std::size_t u = 0; u < units.size(); ++u) {
    auto& row = lookup[units[u].owner];
    if (row.empty()) row.assign(topo.layers[units[u].owner].out_units, kAlwaysActive);
    row[units[u].index] = static_cast<std::int64_t>(u);
  }
  for (std::size_t li = 0; li < topo.layers.size(); ++li) {
    const LayerDesc& l = topo.layers[li];
    const auto& w = topo.param(l.weight);
    const auto& b = topo.param(l.bias);
    if (l.kind == LayerKind::kGroupNorm) {
      if (!l.affine_mask_from || lookup[*l.affine_mask_from].empty()) continue;
      for (std::size_t c = 0; c < l.out_units; ++c) {
        const auto u = lookup[*l.affine_mask_from][c];
        if (u < 0) continue;
        claim(w.offset + c, u);
        claim(b.offset + c, u);
      }
      continue;
    }
    const std::size_t per_pair = w.size / (l.out_units * l.in_units);
    const auto* out_units = lookup[li].empty() ? nullptr : &lookup[li];
    const auto* in_units =
        l.input_mask_from && !lookup[*l.input_mask_from].empty() ? &lookup[*l.input_mask_from] : nullptr;
    for (std::size_t o = 0; o < l.out_units; ++o) {
      if (out_units && (*out_units)[o] >= 0) claim(b.offset + o, (*out_units)[o]);
      for (std::size_t i = 0; i < l.in_units; ++i) {
        const std::size_t base = w.offset + (o * l.in_units + i) * per_pair;
        for (std::size_t e = 0; e < per_pair; ++e) {
          if (out_units && (*out_units)[o] >= 0) claim(base + e, (*out_units)[o]);
          if (in_units && (*in_units)[i] >= 0) claim(base + e, (*in_units)[i]);
        }
      }
    }
  }
  return gov;
}

}  // namespace

std::string to_string(Strategy s) { return s == Strategy::kNeuron ? "neuron" : "block"; }

Strategy parse_strategy(std::string_view text) {
  if (text == "neuron" || text == "channel") return Strategy::kNeuron;
  if (text == "block") return Strategy::kBlock;
  throw ConfigError("strategy must be 'neuron' or 'block', got '" + std::string(text) + "'");
}

std::string unit_name(const ModelTopology& topology, const StructuralUnit& unit) {
  if (unit.kind == UnitKind::kBlock) return topology.blocks.at(unit.owner).name;
  return topology.layers.at(unit.owner).name + "#" + std::to_string(unit.index);
}

StructuralUnit parse_unit(const ModelTopology& topology, std::string_view name) {
  const auto hash = name.find('#');
  if (hash == std::string_view::npos) {
    for (std::size_t b = 0; b < topology.blocks.size(); ++b) {
      if (topology.blocks[b].name == name) return {UnitKind::kBlock, b, 0};
    }
    throw TopologyError("unknown block unit '" + std::string(name) + "'");
  }
  const auto layer = topology.find_layer(name.substr(0, hash));
  if (!layer) throw TopologyError("unit '" + std::string(name) + "' names an unknown layer");
  std::size_t index = 0;
  try {
    index = std::stoul(std::string(name.substr(hash + 1)));
  } catch (const std::exception&) {
    throw TopologyError("unit '" + std::string(name) + "' has a malformed channel index");
  }
  if (!topology.layers[*layer].out_maskable || index >= topology.layers[*layer].out_units) {
    throw TopologyError("unit '" + std::string(name) + "' is not a maskable channel");
  }
  return {UnitKind::kChannel, *layer, index};
}

std::vector<StructuralUnit> channel_units(const ModelTopology& topology) {
  std::vector<StructuralUnit> units;
  for (std::size_t li = 0; li < topology.layers.size(); ++li) {
    if (!topology.layers[li].out_maskable) continue;
    for (std::size_t c = 0; c < topology.layers[li].out_units; ++c) {
      units.push_back({UnitKind::kChannel, li, c});
    }
  }
  return units;
}

std::vector<std::size_t> channel_unit_groups(const ModelTopology& topology) {
  std::vector<std::size_t> groups;
  for (std::size_t li = 0; li < topology.layers.size(); ++li) {
    const LayerDesc& l = topology.layers[li];
    if (!l.out_maskable) continue;
    const auto norm = norm_for(topology, li);
    const std::size_t count = norm ? topology.layers[*norm].norm_groups : 1;
    for (std::size_t g = 0; g < count; ++g) groups.push_back(l.out_units / count);
  }
  return groups;
}

std::vector<StructuralUnit> block_units(const ModelTopology& topology) {
  std::vector<StructuralUnit> units;
  for (std::size_t b = 0; b < topology.blocks.size(); ++b) {
    if (topology.blocks[b].maskable) units.push_back({UnitKind::kBlock, b, 0});
  }
  return units;
}

UnitWorkers assign_units(std::size_t unit_count, std::size_t workers, std::size_t overlap,
                         std::uint64_t seed) {
  check_counts(workers, overlap);
  if (unit_count == 0) throw ConfigError("assign_units: no units to assign");
  std::vector<std::size_t> order(unit_count);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  UnitWorkers out(unit_count);
  for (std::size_t j = 0; j < unit_count; ++j) {
    const std::size_t offset = j * workers / unit_count;
    auto& ws = out[order[j]];
    for (std::size_t t = 0; t < overlap; ++t) ws.push_back((offset + t) % workers);
    std::sort(ws.begin(), ws.end());
  }
  return out;
}

UnitWorkers assign_grouped_units(std::span<const std::size_t> group_sizes, std::size_t workers,
                                 std::size_t overlap, std::uint64_t seed) {
  check_counts(workers, overlap);
  const std::size_t total = std::accumulate(group_sizes.begin(), group_sizes.end(), std::size_t{0});
  if (total == 0) throw ConfigError("assign_grouped_units: no units to assign");
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> load(workers, 0);
  UnitWorkers out(total);
  std::size_t base = 0;
  for (const std::size_t size : group_sizes) {
    if (size == 0) continue;
    const std::size_t slots = size * overlap;
    const std::size_t share = slots / workers;
    const std::size_t extra = slots % workers;
    // The `extra` least-loaded workers (random tie-break) take one more unit.
    std::vector<std::size_t> by_load(workers);
    std::iota(by_load.begin(), by_load.end(), std::size_t{0});
    std::shuffle(by_load.begin(), by_load.end(), rng);
    std::stable_sort(by_load.begin(), by_load.end(),
                     [&](std::size_t a, std::size_t b) { return load[a] < load[b]; });
    std::vector<std::size_t> count(workers, share);
    for (std::size_t e = 0; e < extra; ++e) ++count[by_load[e]];

    // Each worker's slots are consecutive modulo `size`, so they hit distinct
    // units, and every unit receives exactly `overlap` slots.
    std::vector<std::size_t> unit_perm(size);
    std::iota(unit_perm.begin(), unit_perm.end(), std::size_t{0});
    std::shuffle(unit_perm.begin(), unit_perm.end(), rng);
    std::vector<std::size_t> worker_order(workers);
    std::iota(worker_order.begin(), worker_order.end(), std::size_t{0});
    std::shuffle(worker_order.begin(), worker_order.end(), rng);
    std::size_t slot = 0;
    for (const std::size_t w : worker_order) {
      for (std::size_t c = 0; c < count[w]; ++c, ++slot) {
        out[base + unit_perm[slot % size]].push_back(w);
      }
      load[w] += count[w];
    }
    for (std::size_t u = 0; u < size; ++u) std::sort(out[base + u].begin(), out[base + u].end());
    base += size;
  }
  return out;
}

std::size_t WorkerMask::active_params() const {
  return static_cast<std::size_t>(std::count(params.begin(), params.end(), std::uint8_t{1}));
}

const std::vector<bool>& WorkerMask::layer_channels(std::size_t layer) const {
  static const std::vector<bool> kAll;
  if (layer >= channel_active.size()) return kAll;
  return channel_active[layer];
}

std::vector<WorkerMask> induce_channel_param_mask(const ModelTopology& topology,
                                                  const std::vector<ChannelMasks>& per_worker) {
  std::vector<WorkerMask> out;
  out.reserve(per_worker.size());
  for (const auto& masks : per_worker) {
    if (masks.size() != topology.layers.size()) {
      throw TopologyError("channel masks cover " + std::to_string(masks.size()) +
                          " layers, topology has " + std::to_string(topology.layers.size()));
    }
    auto flags_of = [&](std::size_t li) -> const std::vector<bool>* {
      const auto& f = masks[li];
      if (f.empty()) return nullptr;
      if (!topology.layers[li].out_maskable || f.size() != topology.layers[li].out_units) {
        throw TopologyError("mask for layer '" + topology.layers[li].name +
                            "' does not match its maskable output units");
      }
      return &f;
    };
    WorkerMask m;
    m.params.assign(topology.total_params, 1);
    m.block_active.assign(topology.blocks.size(), true);
    m.channel_active = masks;
    for (std::size_t li = 0; li < topology.layers.size(); ++li) {
      const LayerDesc& l = topology.layers[li];
      const auto& w = topology.param(l.weight);
      const auto& b = topology.param(l.bias);
      if (l.kind == LayerKind::kGroupNorm) {
        if (!l.affine_mask_from) continue;
        if (*l.affine_mask_from >= topology.layers.size()) {
          throw TopologyError("layer '" + l.name + "' references a missing layer");
        }
        const auto* f = flags_of(*l.affine_mask_from);
        if (!f) continue;
        for (std::size_t c = 0; c < l.out_units; ++c) {
          if (!(*f)[c]) m.params[w.offset + c] = m.params[b.offset + c] = 0;
        }
        continue;
      }
      if (l.input_mask_from && *l.input_mask_from >= topology.layers.size()) {
        throw TopologyError("layer '" + l.name + "' references a missing layer");
      }
      const auto* rows = flags_of(li);
      const auto* cols = l.input_mask_from ? flags_of(*l.input_mask_from) : nullptr;
      if (!rows && !cols) continue;
      const std::size_t per_pair = w.size / (l.out_units * l.in_units);
      for (std::size_t o = 0; o < l.out_units; ++o) {
        const bool row_on = !rows || (*rows)[o];
        if (!row_on) m.params[b.offset + o] = 0;
        for (std::size_t i = 0; i < l.in_units; ++i) {
          if (row_on && (!cols || (*cols)[i])) continue;
          const std::size_t base = w.offset + (o * l.in_units + i) * per_pair;
          std::fill_n(m.params.begin() + static_cast<std::ptrdiff_t>(base), per_pair, 0);
        }
      }
    }
    fill_param_masks(topology, m);
    out.push_back(std::move(m));
  }
  return out;
}

std::vector<WorkerMask> induce_block_param_mask(const ModelTopology& topology,
                                                const std::vector<std::vector<bool>>& per_worker) {
  std::vector<WorkerMask> out;
  out.reserve(per_worker.size());
  const bool any_maskable = std::any_of(topology.blocks.begin(), topology.blocks.end(),
                                        [](const BlockDesc& b) { return b.maskable; });
  for (std::size_t wi = 0; wi < per_worker.size(); ++wi) {
    const auto& z = per_worker[wi];
    if (z.size() != topology.blocks.size()) {
      throw TopologyError("block mask has " + std::to_string(z.size()) + " entries, topology has " +
                          std::to_string(topology.blocks.size()) + " blocks");
    }
    WorkerMask m;
    m.params.assign(topology.total_params, 1);
    m.block_active = z;
    m.channel_active.assign(topology.layers.size(), {});
    bool kept_any = false;
    for (std::size_t b = 0; b < z.size(); ++b) {
      const BlockDesc& blk = topology.blocks[b];
      if (z[b]) {
        kept_any = kept_any || blk.maskable;
        continue;
      }
      if (!blk.has_skip || !blk.maskable) {
        throw ConfigError("block '" + blk.name + "' has no identity skip and cannot be masked");
      }
      for (ParamId id : topology.block_params(b)) {
        const auto& p = topology.param(id);
        std::fill_n(m.params.begin() + static_cast<std::ptrdiff_t>(p.offset), p.size, 0);
      }
    }
    if (any_maskable && !kept_any) {
      throw ConfigError("worker " + std::to_string(wi) + " would drop every residual block");
    }
    fill_param_masks(topology, m);
    out.push_back(std::move(m));
  }
  return out;
}

MaskAssignment assignment_from_units(const ModelTopology& topology, Strategy strategy,
                                     std::size_t workers, std::size_t overlap,
                                     std::vector<StructuralUnit> units, UnitWorkers unit_workers,
                                     std::uint64_t seed) {
  if (units.size() != unit_workers.size()) {
    throw ValidationError("unit map lists " + std::to_string(units.size()) + " units but " +
                          std::to_string(unit_workers.size()) + " worker sets");
  }
  MaskAssignment a;
  a.strategy = strategy;
  a.workers = workers;
  a.overlap = overlap;
  a.seed = seed;
  for (std::size_t u = 0; u < units.size(); ++u) {
    for (auto w : unit_workers[u]) {
      if (w >= workers) {
        throw ValidationError("unit " + unit_name(topology, units[u]) + " names worker " +
                              std::to_string(w) + " but N=" + std::to_string(workers));
      }
    }
  }
  if (strategy == Strategy::kBlock) {
    std::vector<std::vector<bool>> z(workers, std::vector<bool>(topology.blocks.size(), true));
    for (const auto& u : units) {
      if (u.kind != UnitKind::kBlock) throw ValidationError("channel unit in a block assignment");
      for (auto& zw : z) zw[u.owner] = false;
    }
    for (std::size_t u = 0; u < units.size(); ++u) {
      for (auto w : unit_workers[u]) z[w][units[u].owner] = true;
    }
    a.masks = induce_block_param_mask(topology, z);
  } else {
    std::vector<ChannelMasks> cm(workers, ChannelMasks(topology.layers.size()));
    for (const auto& u : units) {
      if (u.kind != UnitKind::kChannel) throw ValidationError("block unit in a neuron assignment");
      for (auto& w : cm) w[u.owner].assign(topology.layers[u.owner].out_units, true);
    }
    for (const auto& u : units) {
      for (auto& w : cm) w[u.owner][u.index] = false;
    }
    for (std::size_t u = 0; u < units.size(); ++u) {
      for (auto w : unit_workers[u]) cm[w][units[u].owner][units[u].index] = true;
    }
    a.masks = induce_channel_param_mask(topology, cm);
  }
  a.units = std::move(units);
  a.unit_workers = std::move(unit_workers);
  return a;
}

MaskAssignment build_assignment(const ModelTopology& topology, Strategy strategy,
                                std::size_t workers, std::size_t overlap, std::uint64_t seed) {
  check_counts(workers, overlap);
  if (strategy == Strategy::kBlock) {
    auto units = block_units(topology);
    if (units.empty()) throw ConfigError("model has no maskable residual blocks");
    auto uw = assign_units(units.size(), workers, overlap, seed);
    return assignment_from_units(topology, strategy, workers, overlap, std::move(units),
                                 std::move(uw), seed);
  }
  auto units = channel_units(topology);
  if (units.empty()) throw ConfigError("model has no maskable channels");
  const auto groups = channel_unit_groups(topology);
  auto uw = assign_grouped_units(groups, workers, overlap, seed);
  return assignment_from_units(topology, strategy, workers, overlap, std::move(units),
                               std::move(uw), seed);
}

std::vector<bool> governed_parameters(const ModelTopology& topology,
                                      const MaskAssignment& assignment) {
  const auto gov = governing_units(topology, assignment.strategy, assignment.units);
  std::vector<bool> out(gov.size());
  for (std::size_t j = 0; j < gov.size(); ++j) out[j] = gov[j] != kAlwaysActive;
  return out;
}

ValidationReport validate(const ModelTopology& topology, const MaskAssignment& a) {
  const std::size_t n = a.workers;
  if (n < 1 || a.overlap < 1 || a.overlap > n) {
    throw ValidationError("overlap P=" + std::to_string(a.overlap) + " outside [1, N=" +
                          std::to_string(n) + "]");
  }
  if (a.masks.size() != n) {
    throw ValidationError("assignment holds " + std::to_string(a.masks.size()) +
                          " worker masks for N=" + std::to_string(n));
  }
  std::vector<std::string> problems;

  // 1. every unit on exactly P distinct workers, and every maskable unit listed once
  std::vector<std::string> bad_units;
  std::vector<std::size_t> per_worker(n, 0);
  for (std::size_t u = 0; u < a.units.size(); ++u) {
    const auto& ws = a.unit_workers.at(u);
    const std::set<std::size_t> distinct(ws.begin(), ws.end());
    if (distinct.size() != ws.size() || ws.size() != a.overlap ||
        (!distinct.empty() && *distinct.rbegin() >= n)) {
      bad_units.push_back(unit_name(topology, a.units[u]) + " (on " + std::to_string(ws.size()) +
                          " workers)");
    }
    for (auto w : distinct) {
      if (w < n) ++per_worker[w];
    }
  }
  if (!bad_units.empty()) {
    problems.push_back("units not on exactly P=" + std::to_string(a.overlap) +
                       " workers: " + list_names(bad_units));
  }
  const auto expected_units =
      a.strategy == Strategy::kBlock ? block_units(topology) : channel_units(topology);
  for (const auto& u : expected_units) {
    const auto hits = std::count(a.units.begin(), a.units.end(), u);
    if (hits != 1) {
      problems.push_back("unit " + unit_name(topology, u) + " listed " + std::to_string(hits) +
                         " times");
    }
  }
  if (a.units.size() != expected_units.size()) {
    problems.push_back("assignment lists " + std::to_string(a.units.size()) + " units, expected " +
                       std::to_string(expected_units.size()));
  }

  // 2. load balance
  const auto [lo, hi] = std::minmax_element(per_worker.begin(), per_worker.end());
  if (*hi - *lo > 1) {
    problems.push_back("unbalanced load: workers hold between " + std::to_string(*lo) + " and " +
                       std::to_string(*hi) + " units");
  }

  // 3. parameter coverage: P for unit-governed parameters, N for the rest
  const auto gov = governing_units(topology, a.strategy, a.units);
  std::vector<std::string> bad_params;
  for (std::size_t j = 0; j < topology.total_params; ++j) {
    std::size_t total = 0;
    for (const auto& m : a.masks) total += m.params.at(j);
    const bool ok = gov[j] == kAlwaysActive   ? total == n
                    : gov[j] == kMultiUnit ? total >= 1
                                           : total == a.overlap;
    if (!ok) {
      for (const auto& p : topology.params) {
        if (j >= p.offset && j < p.offset + p.size) {
          bad_params.push_back(p.name + "[" + std::to_string(j - p.offset) + "] sum=" +
                               std::to_string(total));
          break;
        }
      }
    }
  }
  if (!bad_params.empty()) {
    problems.push_back("parameter coverage violated: " + list_names(bad_params));
  }

  // 4. structural sanity per worker
  for (std::size_t w = 0; w < n; ++w) {
    const WorkerMask& m = a.masks[w];
    for (std::size_t li = 0; li < topology.layers.size(); ++li) {
      const auto& flags = m.layer_channels(li);
      if (flags.empty()) continue;
      if (std::none_of(flags.begin(), flags.end(), [](bool v) { return v; })) {
        problems.push_back("worker " + std::to_string(w) + " masks every output unit of '" +
                           topology.layers[li].name + "'");
      }
      const auto norm = norm_for(topology, li);
      if (!norm) continue;
      const std::size_t groups = topology.layers[*norm].norm_groups;
      const std::size_t size = flags.size() / groups;
      for (std::size_t g = 0; g < groups; ++g) {
        const auto first = flags.begin() + static_cast<std::ptrdiff_t>(g * size);
        if (std::none_of(first, first + static_cast<std::ptrdiff_t>(size), [](bool v) { return v; })) {
          problems.push_back("worker " + std::to_string(w) + " leaves norm group " +
                             std::to_string(g) + " of '" + topology.layers[*norm].name +
                             "' without active channels");
        }
      }
    }
    if (a.strategy == Strategy::kBlock && !expected_units.empty() && per_worker[w] == 0) {
      problems.push_back("worker " + std::to_string(w) + " keeps no residual block");
    }
  }

  // 5. masks agree with the unit map
  if (problems.empty()) {
    const MaskAssignment rebuilt = assignment_from_units(topology, a.strategy, n, a.overlap,
                                                         a.units, a.unit_workers, a.seed);
    for (std::size_t w = 0; w < n; ++w) {
      if (rebuilt.masks[w].params != a.masks[w].params) {
        problems.push_back("parameter mask of worker " + std::to_string(w) +
                           " disagrees with the unit map");
      }
    }
  }

  if (!problems.empty()) {
    std::string msg = "mask validation failed:";
    for (const auto& p : problems) msg += "\n  - " + p;
    throw ValidationError(msg);
  }

  ValidationReport report;
  report.units_per_worker = per_worker;
  for (const auto& m : a.masks) report.active_params_per_worker.push_back(m.active_params());
  report.dp_equivalent =
      a.overlap == n && std::all_of(a.masks.begin(), a.masks.end(), [&](const WorkerMask& m) {
        return m.active_params() == topology.total_params;
      });
  return report;
}

nlohmann::json to_json(const ModelTopology& topology, const MaskAssignment& a) {
  nlohmann::json doc;
  doc["strategy"] = to_string(a.strategy);
  doc["workers"] = a.workers;
  doc["overlap"] = a.overlap;
  doc["seed"] = a.seed;
  doc["units"] = nlohmann::json::array();
  for (std::size_t u = 0; u < a.units.size(); ++u) {
    doc["units"].push_back({{"unit", unit_name(topology, a.units[u])}, {"workers", a.unit_workers[u]}});
  }
  return doc;
}

MaskAssignment assignment_from_json(const ModelTopology& topology, const nlohmann::json& doc) {
  try {
    const Strategy strategy = parse_strategy(doc.at("strategy").get<std::string>());
    std::vector<StructuralUnit> units;
    UnitWorkers uw;
    for (const auto& entry : doc.at("units")) {
      units.push_back(parse_unit(topology, entry.at("unit").get<std::string>()));
      uw.push_back(entry.at("workers").get<std::vector<std::size_t>>());
    }
    return assignment_from_units(topology, strategy, doc.at("workers").get<std::size_t>(),
                                 doc.at("overlap").get<std::size_t>(), std::move(units),
                                 std::move(uw), doc.value("seed", std::uint64_t{0}));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed mask document: ") + e.what());
  }
}

}  // namespace sdp

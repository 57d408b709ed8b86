#include "sdp/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "sdp/engine.hpp"
#include "sdp/errors.hpp"

namespace sdp {

std::optional<double> cosine_similarity(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError("cosine_similarity: length mismatch");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    dot += a[k] * b[k];
    na += a[k] * a[k];
    nb += b[k] * b[k];
  }
  if (na == 0.0 || nb == 0.0) return std::nullopt;
  return std::clamp(dot / std::sqrt(na * nb), -1.0, 1.0);
}

std::vector<AlignmentSample> alignment_from_gradients(const ModelTopology& topology,
                                                      const WorkerMask& mask,
                                                      std::span<const double> masked_grad,
                                                      std::span<const double> unmasked_grad,
                                                      std::span<const ParamId> layers) {
  if (masked_grad.size() != topology.total_params || unmasked_grad.size() != topology.total_params ||
      mask.params.size() != topology.total_params) {
    throw ShapeError("alignment: gradients and mask must span the parameter vector");
  }
  std::vector<AlignmentSample> out;
  for (ParamId id : layers) {
    const ParamSpec& p = topology.param(id);
    std::vector<double> a, b;
    for (std::size_t j = p.offset; j < p.offset + p.size; ++j) {
      if (!mask.params[j]) continue;
      a.push_back(masked_grad[j]);
      b.push_back(unmasked_grad[j]);
    }
    AlignmentSample s;
    s.layer = p.name;
    if (a.empty()) {
      s.reason = "parameter inactive in this subnetwork";
    } else {
      s.cosine = cosine_similarity(a, b);
      if (!s.cosine) s.reason = "zero-norm restricted gradient";
    }
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<AlignmentSample> gradient_alignment(const GlobalModel& model, const WorkerMask& mask,
                                                const Batch& batch,
                                                std::span<const ParamId> layers) {
  std::vector<ParamId> selected(layers.begin(), layers.end());
  if (selected.empty()) {
    for (const auto& l : model.topology.layers) {
      if (l.kind != LayerKind::kGroupNorm) selected.push_back(l.weight);
    }
  }
  auto masked = masked_forward(model, &mask, batch);
  const auto g_mask = flat_gradient(model, masked);
  auto full = masked_forward(model, nullptr, batch);
  const auto g_full = flat_gradient(model, full);
  return alignment_from_gradients(model.topology, mask, g_mask, g_full, selected);
}

std::size_t activation_elements(const ModelTopology& topology, const WorkerMask* mask) {
  std::size_t total = 0;
  for (const auto& site : topology.activations) {
    if (site.per_batch) continue;
    if (mask && site.block && !mask->block_on(*site.block)) continue;
    std::size_t units = site.units;
    if (mask && site.unit_layer) {
      const auto& flags = mask->layer_channels(*site.unit_layer);
      if (!flags.empty()) units = static_cast<std::size_t>(std::count(flags.begin(), flags.end(), true));
    }
    total += units * site.elements_per_unit;
  }
  return total;
}

MemoryReport memory_report(const ModelTopology& topology, const MaskAssignment& assignment,
                           std::size_t optimizer_slots) {
  MemoryReport r;
  r.total_params = topology.total_params;
  const auto governed = governed_parameters(topology, assignment);
  r.maskable_params = static_cast<std::size_t>(std::count(governed.begin(), governed.end(), true));
  r.fixed_params = r.total_params - r.maskable_params;
  r.full_activation_elements = activation_elements(topology, nullptr);
  r.optimizer_slots = optimizer_slots;
  for (const auto& m : assignment.masks) {
    WorkerMemory w;
    w.active_params = m.active_params();
    w.inactive_params = r.total_params - w.active_params;
    w.gradient_elements = w.active_params;
    w.optimizer_elements = w.active_params * optimizer_slots;
    w.activation_elements = activation_elements(topology, &m);
    w.active_fraction = static_cast<double>(w.active_params) / static_cast<double>(r.total_params);
    w.param_savings = 1.0 - w.active_fraction;
    w.activation_savings = 1.0 - static_cast<double>(w.activation_elements) /
                                     static_cast<double>(std::max<std::size_t>(r.full_activation_elements, 1));
    r.workers.push_back(w);
  }
  // exact mean: integer total divided once
  std::size_t active_sum = 0, act_sum = 0;
  for (const auto& w : r.workers) {
    active_sum += w.active_params;
    act_sum += w.activation_elements;
  }
  const double n = static_cast<double>(std::max<std::size_t>(r.workers.size(), 1));
  r.mean_active_fraction =
      static_cast<double>(active_sum) / (n * static_cast<double>(r.total_params));
  r.mean_activation_fraction =
      static_cast<double>(act_sum) /
      (n * static_cast<double>(std::max<std::size_t>(r.full_activation_elements, 1)));
  return r;
}

nlohmann::json to_json(const MemoryReport& r) {
  nlohmann::json workers = nlohmann::json::array();
  for (std::size_t i = 0; i < r.workers.size(); ++i) {
    const auto& w = r.workers[i];
    workers.push_back({{"worker", i},
                       {"active_params", w.active_params},
                       {"inactive_params", w.inactive_params},
                       {"gradient_elements", w.gradient_elements},
                       {"optimizer_elements", w.optimizer_elements},
                       {"activation_elements", w.activation_elements},
                       {"active_fraction", w.active_fraction},
                       {"param_savings", w.param_savings},
                       {"activation_savings", w.activation_savings}});
  }
  return {{"total_params", r.total_params},
          {"maskable_params", r.maskable_params},
          {"fixed_params", r.fixed_params},
          {"full_activation_elements", r.full_activation_elements},
          {"optimizer_slots", r.optimizer_slots},
          {"mean_active_fraction", r.mean_active_fraction},
          {"mean_activation_fraction", r.mean_activation_fraction},
          {"workers", workers}};
}

std::optional<double> AlignmentSeries::run_mean() const {
  std::map<std::size_t, std::pair<double, std::size_t>> per_step;
  for (const auto& s : samples) {
    if (!s.cosine) continue;
    auto& [sum, count] = per_step[s.step];
    sum += *s.cosine;
    ++count;
  }
  if (per_step.empty()) return std::nullopt;
  double total = 0.0;
  for (const auto& [step, acc] : per_step) total += acc.first / static_cast<double>(acc.second);
  return total / static_cast<double>(per_step.size());
}

std::vector<AlignmentSeries> alignment_sweep(const ExperimentConfig& config,
                                             std::span<const std::size_t> overlaps,
                                             std::span<const Strategy> strategies) {
  config.check();
  const Dataset data = load_dataset(config.dataset);
  std::vector<AlignmentSeries> out;
  for (std::size_t p : overlaps) {
    for (Strategy s : strategies) {
      ExperimentConfig c = config;
      c.overlap = p;
      c.strategy = s;
      if (c.alignment_every == 0) c.alignment_every = 10;
      if (c.alignment_layer.empty()) c.alignment_layer = default_alignment_layer(c);
      const RunResult run = run_experiment(c, &data);
      out.push_back(AlignmentSeries{s, p, c.alignment_layer, run.alignment});
    }
  }
  return out;
}

std::string alignment_series_csv(std::span<const AlignmentSeries> series) {
  std::string out = "step,worker,layer,strategy,overlap,cosine\n";
  for (const auto& s : series) {
    const std::string part = alignment_csv(s.samples, s.strategy, s.overlap);
    out += part.substr(part.find('\n') + 1);
  }
  return out;
}

}  // namespace sdp

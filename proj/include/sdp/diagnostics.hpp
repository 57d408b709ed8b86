#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "sdp/masking.hpp"
#include "sdp/model.hpp"

namespace sdp {

struct ExperimentConfig;

struct AlignmentSample {
  std::size_t step = 0;
  std::size_t worker = 0;
  std::string layer;
  std::optional<double> cosine;  // absent when either restricted gradient has zero norm
  std::string reason;            // why the value is absent
};

// Cosine similarity; nullopt if either vector has zero norm.
std::optional<double> cosine_similarity(std::span<const double> a, std::span<const double> b);

// Cosine between the masked and unmasked gradients of each listed parameter,
// both restricted to the support of the worker's mask.
std::vector<AlignmentSample> alignment_from_gradients(const ModelTopology& topology,
                                                      const WorkerMask& mask,
                                                      std::span<const double> masked_grad,
                                                      std::span<const double> unmasked_grad,
                                                      std::span<const ParamId> layers);

// Computes both gradients on the same batch and the current theta. An empty
// `layers` list selects every weight parameter.
std::vector<AlignmentSample> gradient_alignment(const GlobalModel& model, const WorkerMask& mask,
                                                const Batch& batch,
                                                std::span<const ParamId> layers = {});

struct WorkerMemory {
  std::size_t active_params = 0;
  std::size_t inactive_params = 0;
  std::size_t gradient_elements = 0;
  std::size_t optimizer_elements = 0;
  std::size_t activation_elements = 0;  // per sample
  double active_fraction = 0.0;
  double param_savings = 0.0;  // 1 - active_fraction; also gradients and optimizer state
  double activation_savings = 0.0;
};

struct MemoryReport {
  std::size_t total_params = 0;
  std::size_t maskable_params = 0;
  std::size_t fixed_params = 0;
  std::size_t full_activation_elements = 0;  // per sample, unmasked model
  std::size_t optimizer_slots = 1;           // state elements per parameter
  std::vector<WorkerMemory> workers;
  double mean_active_fraction = 0.0;
  double mean_activation_fraction = 0.0;
};

MemoryReport memory_report(const ModelTopology& topology, const MaskAssignment& assignment,
                           std::size_t optimizer_slots = 1);

// Analytic per-sample activation count for one worker (null = full model).
std::size_t activation_elements(const ModelTopology& topology, const WorkerMask* mask);

nlohmann::json to_json(const MemoryReport& report);

struct AlignmentSeries {
  Strategy strategy = Strategy::kBlock;
  std::size_t overlap = 0;
  std::string layer;
  std::vector<AlignmentSample> samples;

  // Mean over steps of the per-step worker mean; nullopt if nothing defined.
  std::optional<double> run_mean() const;
};

// Short training runs per (overlap, strategy), logging alignment every
// `config.alignment_every` steps (defaulting to 10 when unset).
std::vector<AlignmentSeries> alignment_sweep(const ExperimentConfig& config,
                                             std::span<const std::size_t> overlaps,
                                             std::span<const Strategy> strategies);

std::string alignment_series_csv(std::span<const AlignmentSeries> series);

}  // namespace sdp

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include <json.hpp>

#include "sdp/dataset.hpp"
#include "sdp/masking.hpp"
#include "sdp/model.hpp"
#include "sdp/optimizer.hpp"
#include "sdp/schedule.hpp"

namespace sdp {

// Declarative description of one training run. See README for the keys of
// the JSON form.
struct ExperimentConfig {
  Architecture arch = Architecture::kMiniResNet;
  MiniResNetSpec resnet;
  ResidualMlpSpec mlp;
  DatasetSpec dataset;

  std::size_t workers = 8;
  std::size_t overlap = 8;
  Strategy strategy = Strategy::kBlock;
  std::size_t batch_per_worker = 8;
  std::size_t epochs_full = 6;
  bool flop_match = true;
  // Hard cap on the step count; used for smoke runs.
  std::optional<std::size_t> max_steps;

  ScheduleSpec schedule;
  OptimizerKind optimizer = OptimizerKind::kSgdNesterov;
  double momentum = 0.9;
  bool masked_init = true;
  BlockExecution execution = BlockExecution::kStructural;

  std::uint64_t seed = 0;
  std::size_t threads = 1;
  double eval_every_epochs = 1.0;
  std::size_t alignment_every = 0;  // 0 disables alignment logging
  std::string alignment_layer;      // parameter name; empty = middle block's second layer

  // Throws ConfigError naming the offending field.
  void check() const;
};

ExperimentConfig config_from_json(const nlohmann::json& doc);
nlohmann::json to_json(const ExperimentConfig& config);
ExperimentConfig load_config(const std::filesystem::path& path);

// Parameter monitored for alignment when none is configured.
std::string default_alignment_layer(const ExperimentConfig& config);

}  // namespace sdp

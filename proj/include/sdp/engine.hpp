#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "sdp/config.hpp"
#include "sdp/dataset.hpp"
#include "sdp/diagnostics.hpp"
#include "sdp/masking.hpp"
#include "sdp/model.hpp"
#include "sdp/optimizer.hpp"
#include "sdp/schedule.hpp"

namespace sdp {

struct AggregatedGradient {
  std::vector<double> values;       // g_bar
  std::vector<std::uint32_t> divisor;  // sum_i m_i per parameter
};

// g_bar_j = sum_i m_ij g_ij / sum_i m_ij, summed in ascending worker order.
// Throws ProtocolError if some parameter has no worker.
AggregatedGradient aggregate(std::span<const std::vector<double>> grads,
                             std::span<const WorkerMask> masks);

// Independent mini-batch stream of one worker: a private shuffle of the
// training set, reshuffled whenever it is exhausted.
class BatchSampler {
 public:
  BatchSampler(std::uint64_t run_seed, std::size_t worker, std::size_t dataset_size);

  std::vector<std::size_t> next(std::size_t batch);

 private:
  std::mt19937_64 rng_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
};

Batch gather_batch(const Tensor& xs, std::span<const int> ys, std::span<const std::size_t> rows);

struct WorkerReport {
  std::size_t worker = 0;
  double loss = 0.0;
  std::size_t active_params = 0;
  std::vector<double> gradient;  // g_i, aligned with theta
  Batch batch;
};

struct TrainingPlan {
  std::size_t batch_per_worker = 8;
  std::size_t total_steps = 0;
  std::size_t steps_per_epoch = 1;
  ScheduleSpec schedule;
  OptimizerKind optimizer = OptimizerKind::kSgdNesterov;
  double momentum = 0.9;
  std::size_t threads = 1;
  std::uint64_t seed = 0;
  BlockExecution execution = BlockExecution::kStructural;
};

struct StepOutcome {
  std::size_t step = 0;  // index of the step just taken (0-based)
  double lr = 0.0;
  double loss_mean = 0.0;
};

// Synchronous subnetwork data-parallel training over one canonical theta.
// Workers fan out over a read-only snapshot; aggregation and the update run
// single-threaded in worker-id order, so results do not depend on threads.
class Trainer {
 public:
  Trainer(GlobalModel model, MaskAssignment assignment, const Dataset& data, TrainingPlan plan);

  using ReportHook = std::function<void(const std::vector<WorkerReport>&)>;

  // One synchronous step. `before_update` sees the workers' reports while
  // theta still holds the values they were computed against.
  StepOutcome step(const ReportHook& before_update = {});

  const GlobalModel& model() const { return model_; }
  const MaskAssignment& assignment() const { return assignment_; }
  const OptimizerState& optimizer() const { return optimizer_; }
  const std::vector<WorkerReport>& last_reports() const { return reports_; }
  std::size_t steps_done() const { return steps_done_; }
  const TrainingPlan& plan() const { return plan_; }

  // Draws every worker's next batch and computes its masked gradient against
  // the current theta; theta and the optimizer are left untouched.
  std::vector<WorkerReport> compute_reports();

  double evaluate() const;

  // Unmasked gradient of the same batches, parallelized like the workers.
  std::vector<std::vector<double>> unmasked_gradients(const std::vector<WorkerReport>& reports) const;

 private:
  GlobalModel model_;
  MaskAssignment assignment_;
  const Dataset& data_;
  TrainingPlan plan_;
  OptimizerState optimizer_;
  std::vector<BatchSampler> samplers_;
  std::vector<WorkerReport> reports_;
  std::size_t steps_done_ = 0;
};

struct MetricsRecord {
  std::size_t step = 0;
  double epoch = 0.0;
  std::optional<double> lr;
  std::optional<double> train_loss_mean;
  std::optional<double> eval_acc;
  double active_params_mean = 0.0;
  std::optional<double> alignment_mean;
};

inline constexpr const char* kMetricsHeader =
    "step,epoch,lr,train_loss_mean,eval_acc,active_params_mean,alignment_block_or_neuron_mean";

struct RunResult {
  ExperimentConfig config;
  std::size_t epochs = 0;
  std::size_t total_steps = 0;
  std::size_t steps_per_epoch = 0;
  MaskAssignment assignment;
  GlobalModel model;
  std::vector<MetricsRecord> metrics;
  std::vector<AlignmentSample> alignment;
  double final_eval_acc = 0.0;
  double wall_seconds = 0.0;
};

// Runs the full protocol. A preloaded dataset skips load_dataset().
RunResult run_experiment(const ExperimentConfig& config, const Dataset* preloaded = nullptr);

// Model matching the config (input shape and classes taken from the data).
GlobalModel build_model(const ExperimentConfig& config, const Dataset& data);

std::string metrics_csv(std::span<const MetricsRecord> rows);
std::string alignment_csv(std::span<const AlignmentSample> rows, Strategy strategy,
                          std::size_t overlap);
nlohmann::json run_summary(const RunResult& result);

// Writes config.json, seed.txt, masks.json, metrics.csv, summary.json,
// alignment.csv (if any) and the final checkpoint into `dir`.
void write_run_directory(const RunResult& result, const std::filesystem::path& dir);

}  // namespace sdp

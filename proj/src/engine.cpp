#include "sdp/engine.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <thread>

#include "sdp/errors.hpp"

namespace sdp {
namespace {

// Runs fn(i) for i < count on up to `threads` threads; i is processed by
// thread i % threads. Exceptions are rethrown for the lowest failing index.
template <typename Fn>
void parallel_for(std::size_t count, std::size_t threads, Fn&& fn) {
  threads = std::clamp<std::size_t>(threads, 1, std::max<std::size_t>(count, 1));
  if (threads == 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(count);
  {
    std::vector<std::jthread> pool;
    pool.reserve(threads);
    for (std::size_t t = 0; t < threads; ++t) {
      pool.emplace_back([&, t] {
        for (std::size_t i = t; i < count; i += threads) {
          try {
            fn(i);
          } catch (...) {
            errors[i] = std::current_exception();
          }
        }
      });
    }
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

std::string fmt(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string fmt(const std::optional<double>& v) { return v ? fmt(*v) : std::string(); }

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw DataError("short write to '" + path.string() + "'");
}

std::size_t steps_per_epoch(const ExperimentConfig& c, const Dataset& data) {
  const std::size_t per_step = c.workers * c.batch_per_worker;
  const std::size_t spe = data.train_size() / per_step;
  if (spe == 0) {
    throw ConfigError("training set of " + std::to_string(data.train_size()) +
                      " samples is smaller than one step (workers * batch_per_worker = " +
                      std::to_string(per_step) + ")");
  }
  return spe;
}

}  // namespace

AggregatedGradient aggregate(std::span<const std::vector<double>> grads,
                             std::span<const WorkerMask> masks) {
  if (grads.size() != masks.size() || grads.empty()) {
    throw ShapeError("aggregate: need one gradient per worker mask");
  }
  const std::size_t size = grads.front().size();
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (grads[i].size() != size || masks[i].params.size() != size) {
      throw ShapeError("aggregate: worker " + std::to_string(i) + " has mismatched length");
    }
  }
  AggregatedGradient out;
  out.values.assign(size, 0.0);
  out.divisor.assign(size, 0);
  for (std::size_t i = 0; i < grads.size(); ++i) {
    const auto& g = grads[i];
    const auto& m = masks[i].params;
    for (std::size_t j = 0; j < size; ++j) {
      if (m[j]) {
        out.values[j] += g[j];
        ++out.divisor[j];
      }
    }
  }
  for (std::size_t j = 0; j < size; ++j) {
    if (out.divisor[j] == 0) {
      throw ProtocolError("parameter index " + std::to_string(j) + " is held by no worker");
    }
    out.values[j] /= static_cast<double>(out.divisor[j]);
  }
  return out;
}

BatchSampler::BatchSampler(std::uint64_t run_seed, std::size_t worker, std::size_t dataset_size)
    : order_(dataset_size) {
  if (dataset_size == 0) throw DataError("cannot sample from an empty training set");
  std::seed_seq seq{static_cast<std::uint32_t>(run_seed), static_cast<std::uint32_t>(run_seed >> 32),
                    static_cast<std::uint32_t>(worker), 0x5a17u};
  rng_.seed(seq);
  std::iota(order_.begin(), order_.end(), std::size_t{0});
  std::shuffle(order_.begin(), order_.end(), rng_);
}

std::vector<std::size_t> BatchSampler::next(std::size_t batch) {
  if (batch == 0 || batch > order_.size()) {
    throw ConfigError("batch of " + std::to_string(batch) + " does not fit a training set of " +
                      std::to_string(order_.size()));
  }
  if (cursor_ + batch > order_.size()) {
    std::shuffle(order_.begin(), order_.end(), rng_);
    cursor_ = 0;
  }
  std::vector<std::size_t> rows(order_.begin() + static_cast<std::ptrdiff_t>(cursor_),
                                order_.begin() + static_cast<std::ptrdiff_t>(cursor_ + batch));
  cursor_ += batch;
  return rows;
}

Batch gather_batch(const Tensor& xs, std::span<const int> ys, std::span<const std::size_t> rows) {
  if (xs.rank() < 1 || xs.dim(0) != ys.size()) {
    throw ShapeError("gather_batch: inputs and labels disagree on the sample count");
  }
  Shape shape = xs.shape();
  const std::size_t per_sample = xs.size() / shape[0];
  shape[0] = rows.size();
  std::vector<double> values;
  values.reserve(rows.size() * per_sample);
  std::vector<int> labels;
  labels.reserve(rows.size());
  const auto data = xs.data();
  for (auto r : rows) {
    if (r >= ys.size()) throw ShapeError("gather_batch: row " + std::to_string(r) + " out of range");
    const auto first = data.begin() + static_cast<std::ptrdiff_t>(r * per_sample);
    values.insert(values.end(), first, first + static_cast<std::ptrdiff_t>(per_sample));
    labels.push_back(ys[r]);
  }
  return Batch{Tensor(shape, std::move(values)), std::move(labels)};
}

Trainer::Trainer(GlobalModel model, MaskAssignment assignment, const Dataset& data,
                 TrainingPlan plan)
    : model_(std::move(model)),
      assignment_(std::move(assignment)),
      data_(data),
      plan_(std::move(plan)),
      optimizer_(OptimizerState::make(plan_.optimizer, model_.theta.size(), plan_.momentum)) {
  if (assignment_.masks.size() != assignment_.workers || assignment_.masks.empty()) {
    throw ConfigError("assignment must hold one mask per worker");
  }
  for (const auto& m : assignment_.masks) {
    if (m.params.size() != model_.theta.size()) {
      throw ShapeError("worker mask length does not match the parameter vector");
    }
  }
  plan_.schedule.check();
  for (std::size_t w = 0; w < assignment_.workers; ++w) {
    samplers_.emplace_back(plan_.seed, w, data_.train_size());
  }
}

std::vector<WorkerReport> Trainer::compute_reports() {
  const std::size_t n = assignment_.workers;
  std::vector<WorkerReport> reports(n);
  for (std::size_t w = 0; w < n; ++w) {
    reports[w].worker = w;
    reports[w].batch =
        gather_batch(data_.train_x, data_.train_y, samplers_[w].next(plan_.batch_per_worker));
  }
  parallel_for(n, plan_.threads, [&](std::size_t w) {
    const WorkerMask& mask = assignment_.masks[w];
    auto pass = masked_forward(model_, &mask, reports[w].batch, plan_.execution);
    reports[w].loss = pass.tape.value(pass.loss).item();
    reports[w].gradient = flat_gradient(model_, pass);
    reports[w].active_params = mask.active_params();
  });
  return reports;
}

std::vector<std::vector<double>> Trainer::unmasked_gradients(
    const std::vector<WorkerReport>& reports) const {
  std::vector<std::vector<double>> out(reports.size());
  parallel_for(reports.size(), plan_.threads, [&](std::size_t w) {
    auto pass = masked_forward(model_, nullptr, reports[w].batch, plan_.execution);
    out[w] = flat_gradient(model_, pass);
  });
  return out;
}

StepOutcome Trainer::step(const ReportHook& before_update) {
  if (steps_done_ >= plan_.total_steps) {
    throw UsageError("training plan of " + std::to_string(plan_.total_steps) +
                     " steps is already complete");
  }
  reports_ = compute_reports();
  double loss_sum = 0.0;
  for (const auto& r : reports_) {
    if (!std::isfinite(r.loss)) {
      throw NumericalError("non-finite loss at step " + std::to_string(steps_done_) +
                           " on worker " + std::to_string(r.worker));
    }
    loss_sum += r.loss;
  }
  if (before_update) before_update(reports_);

  std::vector<std::vector<double>> grads;
  grads.reserve(reports_.size());
  for (auto& r : reports_) grads.push_back(std::move(r.gradient));
  const auto agg = aggregate(grads, assignment_.masks);
  for (std::size_t w = 0; w < reports_.size(); ++w) reports_[w].gradient = std::move(grads[w]);

  const double lr = lr_at(plan_.schedule, steps_done_, plan_.total_steps);
  try {
    opt_update(model_.theta, agg.values, optimizer_, lr);
  } catch (const NumericalError& e) {
    throw NumericalError("step " + std::to_string(steps_done_) + ": " + e.what());
  }
  StepOutcome out{steps_done_, lr, loss_sum / static_cast<double>(reports_.size())};
  ++steps_done_;
  return out;
}

double Trainer::evaluate() const { return evaluate_accuracy(model_, data_.test_x, data_.test_y); }

GlobalModel build_model(const ExperimentConfig& config, const Dataset& data) {
  if (config.arch == Architecture::kMiniResNet) {
    if (data.sample_shape.size() != 3) {
      throw ConfigError("field 'model.arch': mini_resnet needs [channels, height, width] samples");
    }
    MiniResNetSpec spec = config.resnet;
    spec.in_channels = data.sample_shape[0];
    spec.height = data.sample_shape[1];
    spec.width = data.sample_shape[2];
    spec.classes = data.classes;
    return build_mini_resnet(spec, config.seed);
  }
  if (data.sample_shape.size() != 1) {
    throw ConfigError("field 'model.arch': residual_mlp needs flat feature vectors");
  }
  ResidualMlpSpec spec = config.mlp;
  spec.inputs = data.sample_shape[0];
  spec.classes = data.classes;
  return build_residual_mlp(spec, config.seed);
}

RunResult run_experiment(const ExperimentConfig& config, const Dataset* preloaded) {
  const auto started = std::chrono::steady_clock::now();
  config.check();
  Dataset owned;
  if (!preloaded) owned = load_dataset(config.dataset);
  const Dataset& data = preloaded ? *preloaded : owned;

  GlobalModel model = build_model(config, data);
  MaskAssignment assignment =
      build_assignment(model.topology, config.strategy, config.workers, config.overlap, config.seed);
  validate(model.topology, assignment);
  if (config.masked_init) model.theta = masked_kaiming_init(model, assignment, config.seed);

  RunResult result;
  result.config = config;
  result.epochs = config.flop_match
                      ? flop_matched_epochs(config.epochs_full, config.workers, config.overlap)
                      : config.epochs_full;
  result.steps_per_epoch = steps_per_epoch(config, data);
  result.total_steps = result.epochs * result.steps_per_epoch;
  if (config.max_steps) result.total_steps = std::min(result.total_steps, *config.max_steps);

  std::optional<ParamId> monitored;
  if (config.alignment_every > 0) {
    const std::string name =
        config.alignment_layer.empty() ? default_alignment_layer(config) : config.alignment_layer;
    monitored = model.topology.find_param(name);
    if (!monitored) throw ConfigError("field 'alignment.layer': unknown parameter '" + name + "'");
  }

  TrainingPlan plan{config.batch_per_worker, result.total_steps, result.steps_per_epoch,
                    config.schedule,         config.optimizer,   config.momentum,
                    config.threads,          config.seed,        config.execution};
  Trainer trainer(std::move(model), std::move(assignment), data, plan);

  double active_mean = 0.0;
  for (const auto& m : trainer.assignment().masks) active_mean += static_cast<double>(m.active_params());
  active_mean /= static_cast<double>(config.workers);

  const auto eval_every = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::llround(config.eval_every_epochs *
                                               static_cast<double>(result.steps_per_epoch))));
  result.metrics.push_back(
      MetricsRecord{0, 0.0, std::nullopt, std::nullopt, trainer.evaluate(), active_mean, std::nullopt});

  for (std::size_t t = 0; t < result.total_steps; ++t) {
    std::optional<double> alignment_mean;
    Trainer::ReportHook hook;
    if (monitored && t % config.alignment_every == 0) {
      hook = [&](const std::vector<WorkerReport>& reports) {
        const auto unmasked = trainer.unmasked_gradients(reports);
        const ParamId layers[] = {*monitored};
        double sum = 0.0;
        std::size_t defined = 0;
        for (std::size_t w = 0; w < reports.size(); ++w) {
          for (auto& s : alignment_from_gradients(trainer.model().topology,
                                                  trainer.assignment().masks[w],
                                                  reports[w].gradient, unmasked[w], layers)) {
            s.step = t;
            s.worker = w;
            if (s.cosine) {
              sum += *s.cosine;
              ++defined;
            }
            result.alignment.push_back(std::move(s));
          }
        }
        if (defined) alignment_mean = sum / static_cast<double>(defined);
      };
    }
    const auto outcome = trainer.step(hook);
    const std::size_t done = t + 1;
    MetricsRecord row;
    row.step = done;
    row.epoch = static_cast<double>(done) / static_cast<double>(result.steps_per_epoch);
    row.lr = outcome.lr;
    row.train_loss_mean = outcome.loss_mean;
    if (done % eval_every == 0 || done == result.total_steps) row.eval_acc = trainer.evaluate();
    row.active_params_mean = active_mean;
    row.alignment_mean = alignment_mean;
    result.metrics.push_back(row);
  }

  result.final_eval_acc = *result.metrics.back().eval_acc;
  result.assignment = trainer.assignment();
  result.model = trainer.model();
  result.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return result;
}

std::string metrics_csv(std::span<const MetricsRecord> rows) {
  std::string out = std::string(kMetricsHeader) + "\n";
  for (const auto& r : rows) {
    out += std::to_string(r.step) + "," + fmt(r.epoch) + "," + fmt(r.lr) + "," +
           fmt(r.train_loss_mean) + "," + fmt(r.eval_acc) + "," + fmt(r.active_params_mean) +
           "," + fmt(r.alignment_mean) + "\n";
  }
  return out;
}

std::string alignment_csv(std::span<const AlignmentSample> rows, Strategy strategy,
                          std::size_t overlap) {
  std::string out = "step,worker,layer,strategy,overlap,cosine\n";
  for (const auto& s : rows) {
    out += std::to_string(s.step) + "," + std::to_string(s.worker) + "," + s.layer + "," +
           to_string(strategy) + "," + std::to_string(overlap) + "," + fmt(s.cosine) + "\n";
  }
  return out;
}

nlohmann::json run_summary(const RunResult& r) {
  using nlohmann::json;
  json summary = {
      {"config", to_json(r.config)},
      {"epochs", r.epochs},
      {"steps_per_epoch", r.steps_per_epoch},
      {"total_steps", r.total_steps},
      {"total_params", r.model.topology.total_params},
      {"final_eval_acc", r.final_eval_acc},
      {"wall_seconds", r.wall_seconds},
      {"memory", to_json(memory_report(r.model.topology, r.assignment))},
  };
  double best = 0.0;
  for (const auto& m : r.metrics) {
    if (m.eval_acc) best = std::max(best, *m.eval_acc);
  }
  summary["best_eval_acc"] = best;
  if (r.metrics.size() > 1) summary["final_train_loss"] = *r.metrics.back().train_loss_mean;
  if (!r.alignment.empty()) {
    AlignmentSeries series{r.config.strategy, r.config.overlap, r.alignment.front().layer,
                           r.alignment};
    const auto mean = series.run_mean();
    summary["alignment_run_mean"] = mean ? json(*mean) : json(nullptr);
    // per-worker run means give the spread across subnetworks
    std::vector<double> sums(r.config.workers, 0.0);
    std::vector<std::size_t> counts(r.config.workers, 0);
    for (const auto& s : r.alignment) {
      if (!s.cosine) continue;
      sums[s.worker] += *s.cosine;
      ++counts[s.worker];
    }
    std::vector<double> per_worker;
    for (std::size_t w = 0; w < sums.size(); ++w) {
      if (counts[w]) per_worker.push_back(sums[w] / static_cast<double>(counts[w]));
    }
    if (!per_worker.empty()) {
      summary["alignment_worker_min"] = *std::min_element(per_worker.begin(), per_worker.end());
      summary["alignment_worker_max"] = *std::max_element(per_worker.begin(), per_worker.end());
    }
  }
  return summary;
}

void write_run_directory(const RunResult& result, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw DataError("cannot create run directory '" + dir.string() + "': " + ec.message());
  write_text(dir / "config.json", to_json(result.config).dump(2) + "\n");
  write_text(dir / "seed.txt", std::to_string(result.config.seed) + "\n");
  write_text(dir / "masks.json", to_json(result.model.topology, result.assignment).dump(1) + "\n");
  write_text(dir / "metrics.csv", metrics_csv(result.metrics));
  write_text(dir / "summary.json", run_summary(result).dump(2) + "\n");
  if (!result.alignment.empty()) {
    write_text(dir / "alignment.csv",
               alignment_csv(result.alignment, result.config.strategy, result.config.overlap));
  }
  save_checkpoint(result.model, dir / "theta");
}

}  // namespace sdp

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include "oracles.hpp"
#include "sdp/engine.hpp"
#include "sdp/errors.hpp"
#include "test_support.hpp"

using namespace sdp;
using testing_support::tiny_mlp_config;
using testing_support::tiny_resnet_config;

namespace {

WorkerMask flat_mask(std::vector<std::uint8_t> bits) {
  WorkerMask m;
  m.params = std::move(bits);
  return m;
}

std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_SUITE("engine") {

TEST_CASE("aggregate examples") {
  {
    const std::vector<std::vector<double>> g{{1, 2}, {3, 4}, {5, 6}, {7, 9}};
    const std::vector<WorkerMask> m(4, flat_mask({1, 1}));
    const auto a = aggregate(g, m);
    CHECK(a.values == std::vector<double>{4.0, 5.25});
    CHECK(a.divisor == std::vector<std::uint32_t>{4, 4});
  }
  {
    const std::vector<std::vector<double>> g{{2, 0}, {0, 4}};
    const std::vector<WorkerMask> m{flat_mask({1, 0}), flat_mask({0, 1})};
    CHECK(aggregate(g, m).values == std::vector<double>{2, 4});
  }
  const std::vector<std::vector<double>> g{{1, 1}, {1, 1}};
  const std::vector<WorkerMask> m{flat_mask({1, 0}), flat_mask({1, 0})};
  CHECK_THROWS_AS(aggregate(g, m), ProtocolError);
}

TEST_CASE("aggregate equals the per-parameter loop bitwise") {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> normal;
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t d = 40;
    const auto uw = assign_units(d, 5, 3, rng());
    std::vector<std::vector<std::uint8_t>> bits(5, std::vector<std::uint8_t>(d, 0));
    for (std::size_t j = 0; j < d; ++j)
      for (auto w : uw[j]) bits[w][j] = 1;
    std::vector<std::vector<double>> g(5, std::vector<double>(d));
    std::vector<WorkerMask> masks;
    for (std::size_t i = 0; i < 5; ++i) {
      for (std::size_t j = 0; j < d; ++j) g[i][j] = bits[i][j] ? normal(rng) : 0.0;
      masks.push_back(flat_mask(bits[i]));
    }
    CHECK(aggregate(g, masks).values == oracle::masked_mean(g, bits));
  }
}

TEST_CASE("Nesterov update") {
  {
    std::vector<double> theta{1.0, -2.0};
    auto s = OptimizerState::make(OptimizerKind::kSgdNesterov, 2);
    opt_update(theta, std::vector<double>{0.5, 1.5}, s, 0.0);
    CHECK(theta == std::vector<double>{1.0, -2.0});
    CHECK(s.velocity == std::vector<double>{0.5, 1.5});
  }
  {
    std::vector<double> theta{1.0};
    auto s = OptimizerState::make(OptimizerKind::kSgdNesterov, 1, 0.0);
    opt_update(theta, std::vector<double>{0.5}, s, 0.1);
    CHECK(theta[0] == doctest::Approx(1.0 - 0.1 * 0.5).epsilon(1e-15));
  }
  // L = 1.5 theta^2, two steps by hand
  std::vector<double> theta{2.0};
  auto s = OptimizerState::make(OptimizerKind::kSgdNesterov, 1, 0.9);
  double th = 2.0, v = 0.0;
  for (int k = 0; k < 2; ++k) {
    const double g = 3.0 * th;
    v = 0.9 * v + g;
    th = th - 0.05 * (g + 0.9 * v);
    opt_update(theta, std::vector<double>{3.0 * theta[0]}, s, 0.05);
  }
  CHECK(theta[0] == doctest::Approx(th).epsilon(1e-15));
  // theta_1 = 1.43, v_1 = 6; g_2 = 4.29, v_2 = 9.69
  CHECK(th == doctest::Approx(1.43 - 0.05 * (4.29 + 0.9 * 9.69)).epsilon(1e-12));

  std::vector<double> bad{1.0, 2.0};
  auto st = OptimizerState::make(OptimizerKind::kSgdNesterov, 2);
  CHECK_THROWS_AS(opt_update(bad, std::vector<double>{1.0, std::nan("")}, st, 0.1), NumericalError);
  CHECK(bad == std::vector<double>{1.0, 2.0});
}

TEST_CASE("Adam first step moves by lr in the gradient's direction") {
  std::vector<double> theta{1.0, 1.0};
  auto s = OptimizerState::make(OptimizerKind::kAdam, 2, 0.9);
  opt_update(theta, std::vector<double>{2.0, -0.5}, s, 0.01);
  CHECK(theta[0] == doctest::Approx(0.99).epsilon(1e-6));
  CHECK(theta[1] == doctest::Approx(1.01).epsilon(1e-6));
}

TEST_CASE("learning-rate schedule") {
  ScheduleSpec cos;
  const std::size_t total = 1000;
  CHECK(lr_at(cos, 0, total) == 0.0);
  CHECK(lr_at(cos, 50, total) == doctest::Approx(0.2).epsilon(1e-15));
  CHECK(std::abs(lr_at(cos, total - 1, total) - 0.002) < 1e-9);
  for (std::size_t t = 0; t < total; t += 37) {
    CHECK(lr_at(cos, t, total) == doctest::Approx(oracle::cosine_lr(0.2, 0.002, 0.05, t, total)).epsilon(1e-13));
  }
  CHECK_THROWS_AS(lr_at(cos, total, total), UsageError);

  ScheduleSpec ms;
  ms.kind = ScheduleKind::kMultistep;
  ms.warmup_fraction = 0.0;
  CHECK(lr_at(ms, 600, 1000) == doctest::Approx(0.02).epsilon(1e-15));
  CHECK(lr_at(ms, 499, 1000) == 0.2);
  CHECK(lr_at(ms, 800, 1000) == doctest::Approx(0.002).epsilon(1e-14));

  ScheduleSpec broken;
  broken.eta_min = 0.5;
  CHECK_THROWS_AS(broken.check(), ConfigError);
  broken = ms;
  broken.milestones = {0.75, 0.5};
  CHECK_THROWS_AS(broken.check(), ConfigError);
}

TEST_CASE("FLOP-matched epochs") {
  CHECK(flop_matched_epochs(200, 8, 4) == 400);
  CHECK(flop_matched_epochs(200, 8, 3) == 534);
  CHECK(flop_matched_epochs(7, 8, 8) == 7);
  CHECK_THROWS_AS(flop_matched_epochs(200, 8, 0), ConfigError);
  CHECK_THROWS_AS(flop_matched_epochs(200, 8, 9), ConfigError);
}

TEST_CASE("batch samplers are deterministic, independent and epoch-complete") {
  BatchSampler a(7, 0, 40), b(7, 0, 40), c(7, 1, 40);
  std::set<std::size_t> seen;
  bool differs = false;
  for (int k = 0; k < 5; ++k) {
    const auto x = a.next(8);
    CHECK(x == b.next(8));
    differs = differs || x != c.next(8);
    seen.insert(x.begin(), x.end());
  }
  CHECK(seen.size() == 40);
  CHECK(differs);
  CHECK_THROWS_AS(a.next(41), ConfigError);
}

TEST_CASE("all-ones masks reproduce a single-loop data-parallel reference") {
  auto config = tiny_mlp_config();
  const Dataset data = load_dataset(config.dataset);
  GlobalModel model = build_model(config, data);
  const auto a = build_assignment(model.topology, Strategy::kNeuron, 4, 4, 0);
  const std::size_t steps = 40;
  TrainingPlan plan{8, steps, 16, config.schedule, OptimizerKind::kSgdNesterov, 0.9, 1, 9,
                    BlockExecution::kStructural};
  Trainer trainer(model, a, data, plan);

  // reference: same batches, one concatenated batch, hand-written Nesterov
  std::vector<BatchSampler> samplers;
  for (std::size_t w = 0; w < 4; ++w) samplers.emplace_back(9, w, data.train_size());
  std::vector<double> theta = model.theta, vel(theta.size(), 0.0);
  for (std::size_t t = 0; t < steps; ++t) {
    std::vector<std::size_t> rows;
    for (auto& s : samplers) {
      const auto r = s.next(8);
      rows.insert(rows.end(), r.begin(), r.end());
    }
    GlobalModel snapshot{model.topology, theta};
    auto pass = masked_forward(snapshot, nullptr, gather_batch(data.train_x, data.train_y, rows));
    const auto g = flat_gradient(snapshot, pass);
    const double lr = oracle::cosine_lr(0.01, 0.0001, 0.05, t, steps);
    for (std::size_t j = 0; j < theta.size(); ++j) {
      vel[j] = 0.9 * vel[j] + g[j];
      theta[j] -= lr * (g[j] + 0.9 * vel[j]);
    }
    trainer.step();
  }
  double worst = 0.0;
  for (std::size_t j = 0; j < theta.size(); ++j) worst = std::max(worst, std::abs(theta[j] - trainer.model().theta[j]));
  CHECK(worst < 1e-10);
}

TEST_CASE("disjoint masks: the aggregate is the owning worker's gradient") {
  auto config = tiny_mlp_config();
  const Dataset data = load_dataset(config.dataset);
  const GlobalModel model = build_model(config, data);
  const auto a = build_assignment(model.topology, Strategy::kBlock, 4, 1, 3);
  TrainingPlan plan{8, 1, 16, config.schedule, OptimizerKind::kSgdNesterov, 0.9, 1, 1,
                    BlockExecution::kStructural};
  Trainer trainer(model, a, data, plan);
  const auto reports = trainer.compute_reports();
  std::vector<std::vector<double>> g;
  for (const auto& r : reports) g.push_back(r.gradient);
  const auto agg = aggregate(g, a.masks);
  const auto governed = governed_parameters(model.topology, a);
  for (std::size_t j = 0; j < g[0].size(); ++j) {
    if (!governed[j]) continue;
    std::size_t owner = 4;
    for (std::size_t w = 0; w < 4; ++w)
      if (a.masks[w].params[j]) owner = w;
    REQUIRE(owner < 4);
    CHECK(agg.values[j] == g[owner][j]);
  }
}

TEST_CASE("masked gradients vanish off the mask after training") {
  for (auto s : {Strategy::kBlock, Strategy::kNeuron}) {
    auto config = tiny_resnet_config();
    const Dataset data = load_dataset(config.dataset);
    GlobalModel model = build_model(config, data);
    const auto a = build_assignment(model.topology, s, 4, 2, 1);
    TrainingPlan plan{4, 11, 16, config.schedule, OptimizerKind::kSgdNesterov, 0.9, 1, 1,
                      BlockExecution::kStructural};
    Trainer trainer(model, a, data, plan);
    for (int k = 0; k < 10; ++k) trainer.step();
    for (const auto& r : trainer.compute_reports()) {
      const auto& m = a.masks[r.worker].params;
      for (std::size_t j = 0; j < m.size(); ++j)
        if (!m[j]) REQUIRE(r.gradient[j] == 0.0);
    }
  }
}

TEST_CASE("threaded steps match the reference mode bitwise") {
  auto config = tiny_resnet_config();
  config.overlap = 2;
  config.max_steps = 12;
  const Dataset data = load_dataset(config.dataset);
  const auto one = run_experiment(config, &data);
  config.threads = 3;
  const auto many = run_experiment(config, &data);
  CHECK(one.model.theta == many.model.theta);
  CHECK(metrics_csv(one.metrics) == metrics_csv(many.metrics));
}

TEST_CASE("evaluation ignores the masks") {
  auto config = tiny_mlp_config();
  const Dataset data = load_dataset(config.dataset);
  const GlobalModel model = build_model(config, data);
  TrainingPlan plan{8, 1, 16, config.schedule, OptimizerKind::kSgdNesterov, 0.9, 1, 1,
                    BlockExecution::kStructural};
  const Trainer a(model, build_assignment(model.topology, Strategy::kBlock, 4, 2, 1), data, plan);
  const Trainer b(model, build_assignment(model.topology, Strategy::kNeuron, 4, 1, 2), data, plan);
  CHECK(a.evaluate() == b.evaluate());
  CHECK(a.evaluate() == evaluate_accuracy(model, data.test_x, data.test_y));
}

TEST_CASE("run: zero steps, determinism, metrics layout") {
  auto config = tiny_mlp_config();
  config.max_steps = 0;
  const auto empty = run_experiment(config);
  REQUIRE(empty.metrics.size() == 1);
  CHECK(empty.metrics[0].eval_acc.has_value());
  CHECK_FALSE(empty.metrics[0].lr.has_value());

  config = tiny_mlp_config();
  config.overlap = 2;
  config.alignment_every = 5;
  const auto r1 = run_experiment(config);
  const auto r2 = run_experiment(config);
  const auto csv = metrics_csv(r1.metrics);
  CHECK(csv == metrics_csv(r2.metrics));
  CHECK(csv.rfind(std::string(kMetricsHeader) + "\n", 0) == 0);
  CHECK(r1.epochs == 4);  // ceil(2 * 4 / 2)
  CHECK(r1.steps_per_epoch == 16);
  CHECK(r1.metrics.size() == r1.total_steps + 1);
  CHECK(r1.metrics.back().eval_acc.has_value());
  CHECK(r1.metrics[1].alignment_mean.has_value());
  CHECK_FALSE(r1.metrics[2].alignment_mean.has_value());
}

TEST_CASE("full-overlap training learns the blobs") {
  auto config = tiny_mlp_config();
  config.epochs_full = 4;
  const auto r = run_experiment(config);
  CHECK(r.final_eval_acc > 0.7);
  CHECK(r.metrics.back().train_loss_mean.value() < r.metrics[1].train_loss_mean.value());
}

TEST_CASE("run rejects bad configurations and bad numbers") {
  auto config = tiny_mlp_config();
  config.overlap = 5;
  try {
    run_experiment(config);
    FAIL("expected a configuration error");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("overlap") != std::string::npos);
  }

  config = tiny_mlp_config();
  Dataset data = load_dataset(config.dataset);
  for (auto& v : data.train_x.data()) v = std::nan("");
  try {
    run_experiment(config, &data);
    FAIL("expected a numerical error");
  } catch (const NumericalError& e) {
    CHECK(std::string(e.what()).find("step 0") != std::string::npos);
  }
}

TEST_CASE("run directories reproduce their metrics") {
  auto config = tiny_mlp_config();
  config.overlap = 3;
  config.strategy = Strategy::kNeuron;
  const auto dir = std::filesystem::temp_directory_path() / "sdp_run_dir_test";
  std::filesystem::remove_all(dir);
  write_run_directory(run_experiment(config), dir);
  for (auto f : {"config.json", "seed.txt", "masks.json", "metrics.csv", "summary.json", "theta.bin", "theta.json"}) {
    CHECK(std::filesystem::exists(dir / f));
  }
  const auto again = run_experiment(load_config(dir / "config.json"));
  CHECK(metrics_csv(again.metrics) == read_file(dir / "metrics.csv"));
  const auto summary = nlohmann::json::parse(read_file(dir / "summary.json"));
  CHECK(summary["total_steps"] == again.total_steps);
  std::filesystem::remove_all(dir);
}

}  // TEST_SUITE

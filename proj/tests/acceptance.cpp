// Prints one PASS/FAIL line per acceptance criterion; exit status 1 if any fails.
#include <bit>
#include <cstdlib>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>

#include "mask_oracle.hpp"
#include "oracles.hpp"
#include "sdp/cli.hpp"
#include "sdp/config.hpp"
#include "sdp/diagnostics.hpp"
#include "sdp/engine.hpp"
#include "sdp/errors.hpp"
#include "sdp/gradcheck.hpp"

using namespace sdp;
namespace fs = std::filesystem;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string num(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", digits, v);
  return buf;
}

ExperimentConfig desk_config() { return load_config(fs::path(SDP_SOURCE_DIR) / "configs" / "desk.json"); }

double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double worst = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) worst = std::max(worst, std::abs(a[j] - b[j]));
  return worst;
}

Verdict dp_equivalence() {
  ExperimentConfig c = desk_config();
  const Dataset data = load_dataset(c.dataset);
  const GlobalModel model = build_model(c, data);
  const std::size_t steps = 100, n = c.workers, b = c.batch_per_worker;
  const auto a = build_assignment(model.topology, c.strategy, n, n, c.seed);
  const TrainingPlan plan{b, steps, 1, c.schedule, c.optimizer, c.momentum, 1, c.seed, c.execution};
  Trainer trainer(model, a, data, plan);

  // single loop: one global batch, plain gradient, hand-written Nesterov
  std::vector<BatchSampler> samplers;
  for (std::size_t w = 0; w < n; ++w) samplers.emplace_back(c.seed, w, data.train_size());
  std::vector<double> theta = model.theta, vel(theta.size(), 0.0);
  for (std::size_t t = 0; t < steps; ++t) {
    std::vector<std::size_t> rows;
    for (auto& s : samplers) {
      const auto r = s.next(b);
      rows.insert(rows.end(), r.begin(), r.end());
    }
    const GlobalModel snapshot{model.topology, theta};
    auto pass = masked_forward(snapshot, nullptr, gather_batch(data.train_x, data.train_y, rows));
    const auto g = flat_gradient(snapshot, pass);
    const double lr = oracle::cosine_lr(c.schedule.eta_max, c.schedule.eta_min,
                                        c.schedule.warmup_fraction, t, steps);
    for (std::size_t j = 0; j < theta.size(); ++j) {
      vel[j] = c.momentum * vel[j] + g[j];
      theta[j] -= lr * (g[j] + c.momentum * vel[j]);
    }
    trainer.step();
  }
  const double d = max_abs_diff(theta, trainer.model().theta);
  return {d < 1e-6, "N=8 P=8 steps=100 max|dtheta|=" + num(d)};
}

Verdict mask_coverage() {
  std::mt19937_64 rng(2024);
  auto pick = [&](std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
  };
  std::size_t accepted = 0, rejected = 0, violations = 0;
  while (accepted < 100) {
    const std::size_t n = pick(1, 10), p = pick(1, n);
    const auto strategy = pick(0, 1) ? Strategy::kBlock : Strategy::kNeuron;
    GlobalModel m;
    if (pick(0, 1)) {
      m = build_residual_mlp({pick(1, 4), pick(1, 12), pick(1, 10), pick(2, 5)}, rng());
    } else {
      MiniResNetSpec spec;
      spec.channels = 2 * pick(1, 6);
      spec.blocks = pick(1, 10);
      spec.height = spec.width = 5;
      m = build_mini_resnet(spec, rng());
    }
    MaskAssignment a;
    try {
      a = build_assignment(m.topology, strategy, n, p, rng());
    } catch (const ConfigError&) {
      ++rejected;  // e.g. fewer blocks than needed to give every worker one
      continue;
    }
    const auto governed = oracle::maskable(m.topology, strategy);
    for (std::size_t j = 0; j < m.topology.total_params; ++j) {
      std::size_t sum = 0;
      for (const auto& w : a.masks) sum += w.params[j];
      if (sum != (governed[j] ? p : n)) ++violations;
    }
    ++accepted;
  }
  return {violations == 0, "configs=100 rejected_infeasible=" + std::to_string(rejected) +
                               " violations=" + std::to_string(violations)};
}

Verdict aggregation_oracle() {
  std::mt19937_64 rng(99);
  std::normal_distribution<double> normal;
  std::size_t mismatches = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 1 + rng() % 9, d = 1 + rng() % 64;
    std::vector<std::vector<std::uint8_t>> bits(n, std::vector<std::uint8_t>(d, 0));
    for (std::size_t j = 0; j < d; ++j) {
      bits[rng() % n][j] = 1;
      for (std::size_t i = 0; i < n; ++i)
        if (rng() % 2) bits[i][j] = 1;
    }
    std::vector<std::vector<double>> g(n, std::vector<double>(d));
    std::vector<WorkerMask> masks(n);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < d; ++j) g[i][j] = bits[i][j] ? normal(rng) * std::exp(3 * normal(rng)) : 0.0;
      masks[i].params = bits[i];
    }
    const auto got = aggregate(g, masks).values;
    const auto want = oracle::masked_mean(g, bits);
    for (std::size_t j = 0; j < d; ++j)
      if (std::bit_cast<std::uint64_t>(got[j]) != std::bit_cast<std::uint64_t>(want[j])) ++mismatches;
  }
  return {mismatches == 0, "instances=1000 bitwise_mismatches=" + std::to_string(mismatches)};
}

Verdict gradient_correctness() {
  double worst = 0.0;
  std::size_t failed = 0, checks = 0;
  bool has_resnet = false;
  for (const auto& r : run_grad_check_suite(1e-4, 7)) {
    worst = std::max(worst, r.max_rel_error);
    failed += r.passed ? 0 : 1;
    ++checks;
    has_resnet = has_resnet || r.name.find("mini-resnet") != std::string::npos;
  }
  return {failed == 0 && has_resnet, "checks=" + std::to_string(checks) + " failed=" +
                                         std::to_string(failed) + " max_rel_error=" + num(worst)};
}

Verdict masked_gradient_nullity() {
  ExperimentConfig c = desk_config();
  const Dataset data = load_dataset(c.dataset);
  std::size_t nonzero = 0, checked = 0;
  for (auto s : {Strategy::kBlock, Strategy::kNeuron}) {
    GlobalModel model = build_model(c, data);
    const auto a = build_assignment(model.topology, s, c.workers, c.workers / 2, c.seed);
    model.theta = masked_kaiming_init(model, a, c.seed);
    const TrainingPlan plan{c.batch_per_worker, 11, 1, c.schedule, c.optimizer, c.momentum, 1, c.seed, c.execution};
    Trainer trainer(model, a, data, plan);
    auto inspect = [&](const std::vector<WorkerReport>& reports) {
      for (const auto& r : reports) {
        const auto& m = a.masks[r.worker].params;
        for (std::size_t j = 0; j < m.size(); ++j) {
          if (m[j]) continue;
          ++checked;
          if (r.gradient[j] != 0.0) ++nonzero;
        }
      }
    };
    for (int k = 0; k < 10; ++k) trainer.step(inspect);
    inspect(trainer.compute_reports());
  }
  return {nonzero == 0 && checked > 0, "P/N=0.5 steps=10 strategies=block,neuron masked_entries_checked=" +
                                           std::to_string(checked) + " nonzero=" + std::to_string(nonzero)};
}

Verdict structural_skip() {
  ExperimentConfig c = desk_config();
  const Dataset data = load_dataset(c.dataset);
  const GlobalModel model = build_model(c, data);
  BatchSampler sampler(5, 0, data.train_size());
  const Batch batch = gather_batch(data.train_x, data.train_y, sampler.next(16));
  double worst = 0.0;
  bool fewer = true;
  std::size_t compared = 0;
  for (std::size_t p : {1, 3, 4, 6, 7}) {
    for (const auto& m : build_assignment(model.topology, Strategy::kBlock, 8, p, 3).masks) {
      auto skip = masked_forward(model, &m, batch, BlockExecution::kStructural);
      auto mult = masked_forward(model, &m, batch, BlockExecution::kMultiplicative);
      worst = std::max(worst, std::abs(skip.tape.value(skip.loss).item() - mult.tape.value(mult.loss).item()));
      fewer = fewer && skip.tape.activation_elements() < mult.tape.activation_elements();
      ++compared;
    }
  }
  return {worst < 1e-12 && fewer, "masks=" + std::to_string(compared) + " max|dloss|=" + num(worst) +
                                      " skip_records_fewer=" + (fewer ? "yes" : "no")};
}

Verdict flop_matching() {
  bool ok = flop_matched_epochs(200, 8, 4) == 400;
  for (std::size_t e : {1, 6, 200, 333})
    for (std::size_t n : {1, 3, 8, 16}) ok = ok && flop_matched_epochs(e, n, n) == e;
  return {ok, "E(200,8,4)=" + std::to_string(flop_matched_epochs(200, 8, 4)) + " E(E,N,N)=E"};
}

Verdict no_loss_claim() {
  ExperimentConfig base = desk_config();
  const Dataset data = load_dataset(base.dataset);
  double mean[3] = {0, 0, 0};
  const std::size_t overlaps[3] = {8, 6, 4};
  std::string per_seed;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    for (int k = 0; k < 3; ++k) {
      ExperimentConfig c = base;
      c.seed = seed;
      c.overlap = overlaps[k];
      c.strategy = Strategy::kBlock;
      const double acc = 100.0 * run_experiment(c, &data).final_eval_acc;
      mean[k] += acc / 3.0;
      per_seed += " s" + std::to_string(seed) + "P" + std::to_string(overlaps[k]) + "=" + num(acc, 4);
    }
  }
  const double gap75 = mean[0] - mean[1], gap50 = mean[0] - mean[2];
  const bool ok = std::abs(gap75) <= 2.0 && std::abs(gap50) <= 2.0;
  return {ok, "mean_acc% P/N=1:" + num(mean[0]) + " 0.75:" + num(mean[1]) + " 0.5:" + num(mean[2]) +
                  " gap0.75=" + num(gap75, 3) + " gap0.5=" + num(gap50, 3) + " |" + per_seed};
}

Verdict alignment_ordering() {
  ExperimentConfig base = desk_config();
  base.max_steps = 300;
  base.alignment_every = 10;
  const std::vector<std::size_t> overlaps{3, 6};
  const std::vector<Strategy> strategies{Strategy::kBlock, Strategy::kNeuron};
  double block3 = 0, neuron3 = 0, block6 = 0, neuron6 = 0;
  bool defined = true;
  std::string per_seed;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    ExperimentConfig c = base;
    c.seed = seed;
    for (const auto& s : alignment_sweep(c, overlaps, strategies)) {
      const auto m = s.run_mean();
      defined = defined && m.has_value();
      const double v = m.value_or(std::nan(""));
      const bool block = s.strategy == Strategy::kBlock;
      (s.overlap == 3 ? (block ? block3 : neuron3) : (block ? block6 : neuron6)) += v / 3.0;
      per_seed += " s" + std::to_string(seed) + (block ? "B" : "N") + std::to_string(s.overlap) + "=" + num(v, 3);
    }
  }
  const bool ok = defined && block3 > neuron3 && block6 > 0.0 && neuron6 > 0.0;
  return {ok, "layer=" + default_alignment_layer(base) + " P/N=0.375 block=" + num(block3) +
                  " neuron=" + num(neuron3) + " P/N=0.75 block=" + num(block6) + " neuron=" +
                  num(neuron6) + " |" + per_seed};
}

ModelTopology equal_block_toy(std::size_t blocks) {
  ModelTopology t;
  t.arch = Architecture::kResidualMlp;
  t.input_shape = {4};
  t.classes = 4;
  for (std::size_t k = 0; k < blocks; ++k) {
    LayerDesc l;
    l.name = "block" + std::to_string(k) + ".fc";
    l.kind = LayerKind::kLinear;
    l.in_units = l.out_units = 4;
    l.block = k;
    l.weight = ParamId{t.params.size()};
    t.params.push_back({l.name + ".weight", {4, 4}, t.total_params, 16, ParamRole::kWeight, k});
    t.total_params += 16;
    l.bias = ParamId{t.params.size()};
    t.params.push_back({l.name + ".bias", {4}, t.total_params, 4, ParamRole::kBias, k});
    t.total_params += 4;
    t.layers.push_back(l);
    t.blocks.push_back({"block" + std::to_string(k), {k}, true, true});
    t.activations.push_back({4, 1, std::nullopt, k, false});
  }
  t.check();
  return t;
}

Verdict memory_accounting() {
  bool ok = true;
  double worst = 0.0;
  const auto toy = equal_block_toy(8);
  for (std::size_t p = 1; p <= 8; ++p) {
    const auto r = memory_report(toy, build_assignment(toy, Strategy::kBlock, 8, p, p));
    const double want = static_cast<double>(p) / 8.0;
    ok = ok && r.mean_active_fraction == want;
    for (const auto& w : r.workers) ok = ok && w.active_fraction == want;
  }
  const double toy_625 = memory_report(toy, build_assignment(toy, Strategy::kBlock, 8, 5, 1)).mean_active_fraction;
  ok = ok && toy_625 == 0.625 && std::abs(7.0 / 11.2 - toy_625) < 1e-15;

  const GlobalModel m = build_mini_resnet({}, 0);
  for (auto s : {Strategy::kBlock, Strategy::kNeuron}) {
    for (std::size_t p = 1; p <= 8; ++p) {
      const auto r = memory_report(m.topology, build_assignment(m.topology, s, 8, p, 0));
      const double closed = (static_cast<double>(r.maskable_params) * static_cast<double>(p) / 8.0 +
                             static_cast<double>(r.fixed_params)) /
                            static_cast<double>(r.total_params);
      worst = std::max(worst, std::abs(r.mean_active_fraction - closed));
    }
  }
  ok = ok && worst < 1e-15;
  return {ok, "toy P/N exact, P/N=0.625 -> " + num(toy_625, 6) + " (7.0/11.2=" + num(7.0 / 11.2, 6) +
                  "), mini-resnet max|fraction-closed_form|=" + num(worst)};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

Verdict determinism() {
  const fs::path dir = fs::temp_directory_path() / "sdp_acceptance_determinism";
  fs::remove_all(dir);
  fs::create_directories(dir);
  auto doc = to_json(desk_config());
  doc["max_steps"] = 60;
  doc["alignment"] = {{"every", 20}};
  std::ofstream(dir / "config.json") << doc.dump(2);

  std::ostringstream sink;
  for (const char* name : {"a", "b"}) {
    const std::string cfg = (dir / "config.json").string(), out = (dir / name).string();
    const char* argv[] = {"sdp", "run", cfg.c_str(), "--out", out.c_str(), "--threads", "1"};
    if (run_cli(7, argv, sink, sink) != 0) return {false, "run failed: " + sink.str()};
  }
  const bool same_csv = slurp(dir / "a" / "metrics.csv") == slurp(dir / "b" / "metrics.csv");
  const bool same_ckpt = slurp(dir / "a" / "theta.bin") == slurp(dir / "b" / "theta.bin");

  ExperimentConfig c = load_config(dir / "config.json");
  const Dataset data = load_dataset(c.dataset);
  c.strategy = Strategy::kNeuron;
  c.overlap = 4;
  const auto one = run_experiment(c, &data);
  c.threads = 4;
  const auto many = run_experiment(c, &data);
  const double d = max_abs_diff(one.model.theta, many.model.theta);
  fs::remove_all(dir);
  return {same_csv && same_ckpt && d < 1e-9, std::string("metrics_bitwise=") + (same_csv ? "yes" : "no") +
                                                 " checkpoint_bitwise=" + (same_ckpt ? "yes" : "no") +
                                                 " threads1_vs_4 max|dtheta|=" + num(d)};
}

}  // namespace

// Optional arguments select criteria by number, e.g. `acceptance 1 7`.
int main(int argc, char** argv) {
  std::vector<bool> selected(12, argc == 1);
  for (int i = 1; i < argc; ++i) {
    const int k = std::atoi(argv[i]);
    if (k >= 1 && k <= 11) selected[static_cast<std::size_t>(k)] = true;
  }
  const std::vector<std::pair<const char*, std::function<Verdict()>>> criteria{
      {"dp-equivalence", dp_equivalence},
      {"mask-coverage", mask_coverage},
      {"aggregation-oracle", aggregation_oracle},
      {"gradient-correctness", gradient_correctness},
      {"masked-gradient-nullity", masked_gradient_nullity},
      {"structural-skip-equivalence", structural_skip},
      {"flop-matching", flop_matching},
      {"no-loss-at-desk-scale", no_loss_claim},
      {"alignment-ordering", alignment_ordering},
      {"memory-accounting", memory_accounting},
      {"determinism", determinism},
  };
  bool all = true;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    if (!selected[i + 1]) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = criteria[i].second();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    all = all && v.pass;
    std::cout << (v.pass ? "PASS " : "FAIL ") << (i + 1) << " " << criteria[i].first << ": " << v.detail
              << " (" << num(secs, 3) << " s)" << std::endl;
  }
  return all ? 0 : 1;
}

#include "sdp/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

#include "sdp/config.hpp"
#include "sdp/diagnostics.hpp"
#include "sdp/engine.hpp"
#include "sdp/errors.hpp"
#include "sdp/gradcheck.hpp"

namespace sdp {
namespace {

namespace fs = std::filesystem;

struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> threads;
  std::optional<std::string> strategy;
};

ExperimentConfig load_with(const std::string& path, const Overrides& o) {
  ExperimentConfig c = load_config(path);
  if (o.seed) c.seed = *o.seed;
  if (o.threads) c.threads = *o.threads;
  if (o.strategy) c.strategy = parse_strategy(*o.strategy);
  c.check();
  return c;
}

std::vector<Strategy> strategies_for(const Overrides& o) {
  if (o.strategy) return {parse_strategy(*o.strategy)};
  return {Strategy::kNeuron, Strategy::kBlock};
}

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out || !(out << text)) throw DataError("cannot write '" + path.string() + "'");
}

void make_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError("cannot create '" + dir.string() + "': " + ec.message());
}

int cmd_run(const std::string& config_path, const Overrides& o, const std::string& out_dir,
            std::ostream& out) {
  const ExperimentConfig c = load_with(config_path, o);
  const RunResult r = run_experiment(c);
  if (!out_dir.empty()) {
    write_run_directory(r, out_dir);
    out << "wrote " << out_dir << "\n";
  } else {
    out << metrics_csv(r.metrics);
  }
  out << "strategy=" << to_string(c.strategy) << " N=" << c.workers << " P=" << c.overlap
      << " epochs=" << r.epochs << " steps=" << r.total_steps
      << " final_eval_acc=" << fixed(r.final_eval_acc, 4) << "\n";
  return 0;
}

int cmd_sweep(const std::string& config_path, const Overrides& o, std::vector<std::size_t> overlaps,
              std::size_t repeats, const std::string& out_dir, std::ostream& out) {
  const ExperimentConfig base = load_with(config_path, o);
  if (overlaps.empty()) overlaps = {base.workers};
  for (auto p : overlaps) {
    if (p < 1 || p > base.workers) {
      throw ConfigError("--overlaps: P=" + std::to_string(p) + " outside [1, N=" +
                        std::to_string(base.workers) + "]");
    }
  }
  const auto strategies = strategies_for(o);
  const Dataset data = load_dataset(base.dataset);
  if (!out_dir.empty()) make_dir(out_dir);

  // accuracy per (strategy, P), one entry per repeat
  std::map<std::pair<int, std::size_t>, std::vector<double>> acc;
  std::string rows = "strategy,workers,overlap,ratio,seed,epochs,total_steps,final_eval_acc\n";
  for (std::size_t p : overlaps) {
    for (std::size_t k = 0; k < repeats; ++k) {
      std::optional<RunResult> dp;  // P = N is the same run for every strategy
      for (Strategy s : strategies) {
        ExperimentConfig c = base;
        c.overlap = p;
        c.strategy = s;
        c.seed = base.seed + k;
        RunResult r = dp ? *dp : run_experiment(c, &data);
        if (p == base.workers && !dp) dp = r;
        r.config.strategy = s;
        acc[{static_cast<int>(s), p}].push_back(r.final_eval_acc);
        rows += to_string(s) + "," + std::to_string(c.workers) + "," + std::to_string(p) + "," +
                fixed(static_cast<double>(p) / static_cast<double>(c.workers), 3) + "," +
                std::to_string(c.seed) + "," + std::to_string(r.epochs) + "," +
                std::to_string(r.total_steps) + "," + fixed(r.final_eval_acc, 6) + "\n";
        out << to_string(s) << " P=" << p << " seed=" << c.seed << " epochs=" << r.epochs
            << " acc=" << fixed(r.final_eval_acc, 4) << "\n";
        if (!out_dir.empty()) {
          write_run_directory(r, fs::path(out_dir) / (to_string(s) + "_P" + std::to_string(p) +
                                                      "_seed" + std::to_string(c.seed)));
        }
      }
    }
  }

  std::string table = "| strategy |";
  std::string rule = "|---|";
  for (auto p : overlaps) {
    table += " P/N=" + fixed(static_cast<double>(p) / static_cast<double>(base.workers), 3) + " |";
    rule += "---|";
  }
  table += "\n" + rule + "\n";
  for (Strategy s : strategies) {
    table += "| " + to_string(s) + " |";
    for (auto p : overlaps) {
      const auto& v = acc[{static_cast<int>(s), p}];
      double mean = 0.0;
      for (double a : v) mean += a;
      mean /= static_cast<double>(v.size());
      double var = 0.0;
      for (double a : v) var += (a - mean) * (a - mean);
      table += " " + fixed(100.0 * mean, 2);
      if (v.size() > 1) {
        table += " ± " + fixed(100.0 * std::sqrt(var / static_cast<double>(v.size() - 1)), 2);
      }
      table += " |";
    }
    table += "\n";
  }
  out << "\nfinal test accuracy (%)\n" << table;
  if (!out_dir.empty()) {
    write_file(fs::path(out_dir) / "results.csv", rows);
    write_file(fs::path(out_dir) / "table.md", table);
  }
  return 0;
}

int cmd_grad_check(double tolerance, std::uint64_t seed, std::ostream& out) {
  bool ok = true;
  for (const auto& r : run_grad_check_suite(tolerance, seed)) {
    out << (r.passed ? "PASS " : "FAIL ") << r.name << "  entries=" << r.checked
        << "  max_rel_error=" << r.max_rel_error << "\n";
    ok = ok && r.passed;
  }
  out << (ok ? "gradient check passed\n" : "gradient check FAILED\n");
  return ok ? 0 : exit_code_for(ErrorKind::kNumerical);
}

int cmd_validate(const std::string& config_path, const Overrides& o, const std::string& out_dir,
                 std::ostream& out) {
  const ExperimentConfig c = load_with(config_path, o);
  const Dataset data = load_dataset(c.dataset);
  const GlobalModel model = build_model(c, data);
  const auto a = build_assignment(model.topology, c.strategy, c.workers, c.overlap, c.seed);
  const auto report = validate(model.topology, a);
  const auto memory = memory_report(model.topology, a);
  out << "assignment valid: strategy=" << to_string(c.strategy) << " N=" << c.workers
      << " P=" << c.overlap << " units=" << a.units.size()
      << " dp_equivalent=" << (report.dp_equivalent ? "yes" : "no") << "\n";
  for (std::size_t w = 0; w < c.workers; ++w) {
    out << "  worker " << w << ": units=" << report.units_per_worker[w]
        << " active_params=" << report.active_params_per_worker[w] << "/"
        << model.topology.total_params << " activation_elements="
        << memory.workers[w].activation_elements << "/" << memory.full_activation_elements << "\n";
  }
  out << "mean active fraction " << memory.mean_active_fraction << "\n";
  if (!out_dir.empty()) {
    make_dir(out_dir);
    write_file(fs::path(out_dir) / "masks.json", to_json(model.topology, a).dump(1) + "\n");
    write_file(fs::path(out_dir) / "memory.json", to_json(memory).dump(2) + "\n");
  }
  return 0;
}

int cmd_align(const std::string& config_path, const Overrides& o, std::vector<std::size_t> overlaps,
              const std::string& out_dir, std::ostream& out) {
  const ExperimentConfig c = load_with(config_path, o);
  if (overlaps.empty()) overlaps = {c.overlap};
  const auto strategies = strategies_for(o);
  const auto series = alignment_sweep(c, overlaps, strategies);
  out << "strategy,overlap,layer,run_mean,worker_min,worker_max\n";
  for (const auto& s : series) {
    std::map<std::size_t, std::pair<double, std::size_t>> per_worker;
    for (const auto& a : s.samples) {
      if (!a.cosine) continue;
      per_worker[a.worker].first += *a.cosine;
      ++per_worker[a.worker].second;
    }
    std::optional<double> lo, hi;
    for (const auto& [w, acc] : per_worker) {
      const double m = acc.first / static_cast<double>(acc.second);
      lo = lo ? std::min(*lo, m) : m;
      hi = hi ? std::max(*hi, m) : m;
    }
    const auto mean = s.run_mean();
    out << to_string(s.strategy) << "," << s.overlap << "," << s.layer << ","
        << (mean ? fixed(*mean, 6) : "") << "," << (lo ? fixed(*lo, 6) : "") << ","
        << (hi ? fixed(*hi, 6) : "") << "\n";
  }
  if (!out_dir.empty()) {
    make_dir(out_dir);
    write_file(fs::path(out_dir) / "alignment.csv", alignment_series_csv(series));
  }
  return 0;
}

struct MetricsSummary {
  std::size_t steps = 0;
  std::optional<double> final_acc, best_acc, final_loss, alignment_mean;
};

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> cells;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

MetricsSummary summarize_metrics(const fs::path& csv) {
  std::ifstream in(csv);
  if (!in) throw DataError("cannot read '" + csv.string() + "'");
  std::string line;
  if (!std::getline(in, line) || line != kMetricsHeader) {
    throw DataError("'" + csv.string() + "' does not start with the metrics header");
  }
  MetricsSummary s;
  double align_sum = 0.0;
  std::size_t align_n = 0, row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    const auto cells = split(line);
    if (cells.size() != 7) {
      throw DataError("'" + csv.string() + "' row " + std::to_string(row) + " has " +
                      std::to_string(cells.size()) + " fields, expected 7");
    }
    try {
      s.steps = std::stoul(cells[0]);
      if (!cells[3].empty()) s.final_loss = std::stod(cells[3]);
      if (!cells[4].empty()) {
        const double a = std::stod(cells[4]);
        s.final_acc = a;
        s.best_acc = std::max(s.best_acc.value_or(a), a);
      }
      if (!cells[6].empty()) {
        align_sum += std::stod(cells[6]);
        ++align_n;
      }
    } catch (const std::logic_error&) {
      throw DataError("'" + csv.string() + "' row " + std::to_string(row) + " is not numeric");
    }
  }
  if (align_n) s.alignment_mean = align_sum / static_cast<double>(align_n);
  return s;
}

int cmd_report(const std::string& dir, const std::string& out_dir, std::ostream& out) {
  std::vector<fs::path> runs;
  if (fs::exists(fs::path(dir) / "metrics.csv")) {
    runs.push_back(dir);
  } else if (fs::is_directory(dir)) {
    for (const auto& entry : fs::directory_iterator(dir)) {
      if (entry.is_directory() && fs::exists(entry.path() / "metrics.csv")) runs.push_back(entry.path());
    }
    std::sort(runs.begin(), runs.end());
  }
  if (runs.empty()) throw DataError("no metrics.csv found under '" + dir + "'");
  nlohmann::json doc = nlohmann::json::array();
  out << "run,steps,final_eval_acc,best_eval_acc,final_train_loss,alignment_mean\n";
  auto opt = [](const std::optional<double>& v) {
    return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
  };
  for (const auto& run : runs) {
    const auto s = summarize_metrics(run / "metrics.csv");
    const std::string name = run.filename().empty() ? run.string() : run.filename().string();
    out << name << "," << s.steps << "," << (s.final_acc ? fixed(*s.final_acc, 4) : "") << ","
        << (s.best_acc ? fixed(*s.best_acc, 4) : "") << ","
        << (s.final_loss ? fixed(*s.final_loss, 4) : "") << ","
        << (s.alignment_mean ? fixed(*s.alignment_mean, 4) : "") << "\n";
    doc.push_back({{"run", name},
                   {"steps", s.steps},
                   {"final_eval_acc", opt(s.final_acc)},
                   {"best_eval_acc", opt(s.best_acc)},
                   {"final_train_loss", opt(s.final_loss)},
                   {"alignment_mean", opt(s.alignment_mean)}});
  }
  if (!out_dir.empty()) {
    make_dir(out_dir);
    write_file(fs::path(out_dir) / "report.json", doc.dump(2) + "\n");
  }
  return 0;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Subnetwork data-parallel training simulator"};
  app.require_subcommand(1);
  Overrides o;
  std::string config_path, out_dir, run_dir;
  std::vector<std::size_t> overlaps;
  std::size_t repeats = 1;
  double tolerance = 1e-4;
  std::uint64_t check_seed = 7;

  auto add_common = [&](CLI::App* sub, bool with_strategy) {
    sub->add_option("--seed", o.seed, "Override the run seed");
    sub->add_option("--threads", o.threads, "Worker threads (1 = reference mode)")
        ->check(CLI::PositiveNumber);
    sub->add_option("--out", out_dir, "Output directory");
    if (with_strategy) {
      sub->add_option("--strategy", o.strategy, "Masking strategy")
          ->check(CLI::IsMember({"neuron", "channel", "block"}));
    }
  };

  auto* run = app.add_subcommand("run", "Train one configuration");
  run->add_option("config", config_path, "JSON config file")->required();
  add_common(run, true);

  auto* sweep = app.add_subcommand("sweep", "FLOP-matched overlap grid, results table");
  sweep->add_option("config", config_path, "JSON config file")->required();
  sweep->add_option("--overlaps", overlaps, "Overlap values P, e.g. 8,7,6")->delimiter(',');
  sweep->add_option("--repeats", repeats, "Seeds per cell (seed, seed+1, ...)")
      ->check(CLI::PositiveNumber);
  add_common(sweep, true);

  auto* grad = app.add_subcommand("grad-check", "Finite-difference gradient suite");
  grad->add_option("--tolerance", tolerance, "Max relative error");
  grad->add_option("--seed", check_seed, "Seed for the random test tensors");

  auto* val = app.add_subcommand("validate-masks", "Build and check the mask assignment");
  val->add_option("config", config_path, "JSON config file")->required();
  add_common(val, true);

  auto* align = app.add_subcommand("align", "Gradient-alignment runs per overlap and strategy");
  align->add_option("config", config_path, "JSON config file")->required();
  align->add_option("--overlaps", overlaps, "Overlap values P")->delimiter(',');
  add_common(align, true);

  auto* report = app.add_subcommand("report", "Summarize metrics of a run or sweep directory");
  report->add_option("run-dir", run_dir, "Run directory or sweep directory")->required()
      ->check(CLI::ExistingDirectory);
  report->add_option("--out", out_dir, "Directory for report.json");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return exit_code_for(ErrorKind::kUsage);
  }

  try {
    if (*run) return cmd_run(config_path, o, out_dir, out);
    if (*sweep) return cmd_sweep(config_path, o, overlaps, repeats, out_dir, out);
    if (*grad) return cmd_grad_check(tolerance, check_seed, out);
    if (*val) return cmd_validate(config_path, o, out_dir, out);
    if (*align) return cmd_align(config_path, o, overlaps, out_dir, out);
    if (*report) return cmd_report(run_dir, out_dir, out);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return exit_code_for(e.kind());
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}

}  // namespace sdp

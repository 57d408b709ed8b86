#include "sdp/config.hpp"

#include <fstream>
#include <set>

#include "sdp/errors.hpp"

namespace sdp {
namespace {

using nlohmann::json;

void reject_unknown(const json& obj, std::string_view where, std::set<std::string> allowed) {
  if (!obj.is_object()) throw ConfigError(std::string(where) + " must be a JSON object");
  for (const auto& [key, value] : obj.items()) {
    if (!allowed.contains(key)) {
      throw ConfigError("unknown key '" + (where.empty() ? key : std::string(where) + "." + key) + "'");
    }
  }
}

template <typename T>
void read(const json& obj, const char* key, std::string_view where, T& out) {
  const auto it = obj.find(key);
  if (it == obj.end()) return;
  const std::string field = where.empty() ? key : std::string(where) + "." + key;
  try {
    if constexpr (std::is_same_v<T, std::size_t> || std::is_same_v<T, std::uint64_t>) {
      if (!it->is_number_unsigned() && !(it->is_number_integer() && it->get<std::int64_t>() >= 0)) {
        throw ConfigError("field '" + field + "' must be a non-negative integer");
      }
    } else if constexpr (std::is_same_v<T, double>) {
      if (!it->is_number()) throw ConfigError("field '" + field + "' must be a number");
    } else if constexpr (std::is_same_v<T, bool>) {
      if (!it->is_boolean()) throw ConfigError("field '" + field + "' must be true or false");
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!it->is_string()) throw ConfigError("field '" + field + "' must be a string");
    }
    out = it->get<T>();
  } catch (const json::exception& e) {
    throw ConfigError("field '" + field + "': " + e.what());
  }
}

std::string read_string(const json& obj, const char* key, std::string_view where,
                        std::string fallback) {
  read(obj, key, where, fallback);
  return fallback;
}

Architecture parse_arch(std::string_view text) {
  if (text == "mini_resnet") return Architecture::kMiniResNet;
  if (text == "residual_mlp") return Architecture::kResidualMlp;
  throw ConfigError("model.arch must be 'mini_resnet' or 'residual_mlp', got '" +
                    std::string(text) + "'");
}

std::string arch_name(Architecture a) {
  return a == Architecture::kMiniResNet ? "mini_resnet" : "residual_mlp";
}

BlockExecution parse_execution(std::string_view text) {
  if (text == "structural") return BlockExecution::kStructural;
  if (text == "multiplicative") return BlockExecution::kMultiplicative;
  throw ConfigError("block_execution must be 'structural' or 'multiplicative', got '" +
                    std::string(text) + "'");
}

}  // namespace

void ExperimentConfig::check() const {
  if (workers < 1) throw ConfigError("field 'workers' (N) must be >= 1");
  if (overlap < 1) throw ConfigError("field 'overlap' (P) must be >= 1");
  if (overlap > workers) {
    throw ConfigError("field 'overlap' (P=" + std::to_string(overlap) +
                      ") exceeds field 'workers' (N=" + std::to_string(workers) + ")");
  }
  if (batch_per_worker < 1) throw ConfigError("field 'batch_per_worker' must be >= 1");
  if (epochs_full < 1) throw ConfigError("field 'epochs_full' must be >= 1");
  if (threads < 1) throw ConfigError("field 'threads' must be >= 1");
  if (!(eval_every_epochs > 0.0)) throw ConfigError("field 'eval_every_epochs' must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) {
    throw ConfigError("field 'optimizer.momentum' must lie in [0, 1)");
  }
  if (arch == Architecture::kMiniResNet) {
    if (resnet.blocks < 1) throw ConfigError("field 'model.blocks' must be >= 1");
    if (resnet.channels < 1) throw ConfigError("field 'model.channels' must be >= 1");
    if (resnet.norm_groups < 1 || resnet.channels % resnet.norm_groups != 0) {
      throw ConfigError("field 'model.norm_groups' must divide model.channels");
    }
    if (dataset.kind == DatasetKind::kBlobs || dataset.kind == DatasetKind::kSpirals) {
      throw ConfigError("field 'dataset.kind': mini_resnet needs an image dataset");
    }
  } else {
    if (mlp.blocks < 1) throw ConfigError("field 'model.blocks' must be >= 1");
    if (mlp.width < 1) throw ConfigError("field 'model.width' must be >= 1");
    if (dataset.kind == DatasetKind::kImages || dataset.kind == DatasetKind::kImageFile) {
      throw ConfigError("field 'dataset.kind': residual_mlp needs a point dataset");
    }
  }
  if (dataset.kind == DatasetKind::kImageFile && dataset.path.empty()) {
    throw ConfigError("field 'dataset.path' is required for binary-image-file");
  }
  schedule.check();
}

ExperimentConfig config_from_json(const json& doc) {
  ExperimentConfig c;
  reject_unknown(doc, "",
                 {"model", "dataset", "workers", "overlap", "strategy", "batch_per_worker",
                  "epochs_full", "flop_match", "max_steps", "schedule", "optimizer", "masked_init",
                  "block_execution", "seed", "threads", "eval_every_epochs", "alignment"});
  if (const auto it = doc.find("model"); it != doc.end()) {
    const json& m = *it;
    reject_unknown(m, "model", {"arch", "channels", "blocks", "norm_groups", "stem_stride", "width"});
    c.arch = parse_arch(read_string(m, "arch", "model", "mini_resnet"));
    read(m, "channels", "model", c.resnet.channels);
    read(m, "norm_groups", "model", c.resnet.norm_groups);
    read(m, "stem_stride", "model", c.resnet.stem_stride);
    read(m, "width", "model", c.mlp.width);
    std::size_t blocks = c.arch == Architecture::kMiniResNet ? c.resnet.blocks : c.mlp.blocks;
    read(m, "blocks", "model", blocks);
    (c.arch == Architecture::kMiniResNet ? c.resnet.blocks : c.mlp.blocks) = blocks;
  }
  if (c.arch == Architecture::kResidualMlp) c.dataset.kind = DatasetKind::kBlobs;
  if (const auto it = doc.find("dataset"); it != doc.end()) {
    const json& d = *it;
    reject_unknown(d, "dataset",
                   {"kind", "path", "test_path", "test_fraction", "train", "test", "classes",
                    "features", "channels", "height", "width", "noise", "seed"});
    if (d.contains("kind")) c.dataset.kind = parse_dataset_kind(read_string(d, "kind", "dataset", ""));
    c.dataset.path = read_string(d, "path", "dataset", "");
    c.dataset.test_path = read_string(d, "test_path", "dataset", "");
    read(d, "test_fraction", "dataset", c.dataset.test_fraction);
    read(d, "train", "dataset", c.dataset.train);
    read(d, "test", "dataset", c.dataset.test);
    read(d, "classes", "dataset", c.dataset.classes);
    read(d, "features", "dataset", c.dataset.features);
    read(d, "channels", "dataset", c.dataset.channels);
    read(d, "height", "dataset", c.dataset.height);
    read(d, "width", "dataset", c.dataset.width);
    read(d, "noise", "dataset", c.dataset.noise);
    read(d, "seed", "dataset", c.dataset.seed);
  }
  read(doc, "workers", "", c.workers);
  read(doc, "overlap", "", c.overlap);
  if (doc.contains("strategy")) c.strategy = parse_strategy(read_string(doc, "strategy", "", ""));
  read(doc, "batch_per_worker", "", c.batch_per_worker);
  read(doc, "epochs_full", "", c.epochs_full);
  read(doc, "flop_match", "", c.flop_match);
  if (const auto it = doc.find("max_steps"); it != doc.end() && !it->is_null()) {
    std::size_t cap = 0;
    read(doc, "max_steps", "", cap);
    c.max_steps = cap;
  }
  if (const auto it = doc.find("schedule"); it != doc.end()) {
    const json& s = *it;
    reject_unknown(s, "schedule",
                   {"kind", "eta_max", "eta_min", "warmup_fraction", "milestones", "decay"});
    if (s.contains("kind")) c.schedule.kind = parse_schedule_kind(read_string(s, "kind", "schedule", ""));
    read(s, "eta_max", "schedule", c.schedule.eta_max);
    read(s, "eta_min", "schedule", c.schedule.eta_min);
    read(s, "warmup_fraction", "schedule", c.schedule.warmup_fraction);
    read(s, "decay", "schedule", c.schedule.decay);
    if (const auto ms = s.find("milestones"); ms != s.end()) {
      if (!ms->is_array()) throw ConfigError("field 'schedule.milestones' must be an array");
      c.schedule.milestones.clear();
      for (const auto& v : *ms) {
        if (!v.is_number()) throw ConfigError("field 'schedule.milestones' must hold numbers");
        c.schedule.milestones.push_back(v.get<double>());
      }
    }
  }
  if (const auto it = doc.find("optimizer"); it != doc.end()) {
    reject_unknown(*it, "optimizer", {"kind", "momentum"});
    if (it->contains("kind")) c.optimizer = parse_optimizer_kind(read_string(*it, "kind", "optimizer", ""));
    read(*it, "momentum", "optimizer", c.momentum);
  }
  read(doc, "masked_init", "", c.masked_init);
  if (doc.contains("block_execution")) {
    c.execution = parse_execution(read_string(doc, "block_execution", "", ""));
  }
  read(doc, "seed", "", c.seed);
  read(doc, "threads", "", c.threads);
  read(doc, "eval_every_epochs", "", c.eval_every_epochs);
  if (const auto it = doc.find("alignment"); it != doc.end()) {
    reject_unknown(*it, "alignment", {"every", "layer"});
    read(*it, "every", "alignment", c.alignment_every);
    read(*it, "layer", "alignment", c.alignment_layer);
  }
  return c;
}

json to_json(const ExperimentConfig& c) {
  json model = {{"arch", arch_name(c.arch)}};
  if (c.arch == Architecture::kMiniResNet) {
    model["channels"] = c.resnet.channels;
    model["blocks"] = c.resnet.blocks;
    model["norm_groups"] = c.resnet.norm_groups;
    model["stem_stride"] = c.resnet.stem_stride;
  } else {
    model["width"] = c.mlp.width;
    model["blocks"] = c.mlp.blocks;
  }
  json dataset = {{"kind", to_string(c.dataset.kind)},
                  {"train", c.dataset.train},
                  {"test", c.dataset.test},
                  {"classes", c.dataset.classes},
                  {"features", c.dataset.features},
                  {"channels", c.dataset.channels},
                  {"height", c.dataset.height},
                  {"width", c.dataset.width},
                  {"noise", c.dataset.noise},
                  {"seed", c.dataset.seed},
                  {"test_fraction", c.dataset.test_fraction}};
  if (!c.dataset.path.empty()) dataset["path"] = c.dataset.path.string();
  if (!c.dataset.test_path.empty()) dataset["test_path"] = c.dataset.test_path.string();
  return json{
      {"model", model},
      {"dataset", dataset},
      {"workers", c.workers},
      {"overlap", c.overlap},
      {"strategy", to_string(c.strategy)},
      {"batch_per_worker", c.batch_per_worker},
      {"epochs_full", c.epochs_full},
      {"flop_match", c.flop_match},
      {"max_steps", c.max_steps ? json(*c.max_steps) : json(nullptr)},
      {"schedule",
       {{"kind", to_string(c.schedule.kind)},
        {"eta_max", c.schedule.eta_max},
        {"eta_min", c.schedule.eta_min},
        {"warmup_fraction", c.schedule.warmup_fraction},
        {"milestones", c.schedule.milestones},
        {"decay", c.schedule.decay}}},
      {"optimizer", {{"kind", to_string(c.optimizer)}, {"momentum", c.momentum}}},
      {"masked_init", c.masked_init},
      {"block_execution",
       c.execution == BlockExecution::kStructural ? "structural" : "multiplicative"},
      {"seed", c.seed},
      {"threads", c.threads},
      {"eval_every_epochs", c.eval_every_epochs},
      {"alignment", {{"every", c.alignment_every}, {"layer", c.alignment_layer}}},
  };
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path.string() + "'");
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config file '" + path.string() + "' is not valid JSON: " + e.what());
  }
  auto config = config_from_json(doc);
  // relative data paths resolve against the config file's directory
  const auto base = path.parent_path();
  for (auto* p : {&config.dataset.path, &config.dataset.test_path}) {
    if (!p->empty() && p->is_relative()) *p = std::filesystem::absolute(base / *p);
  }
  return config;
}

std::string default_alignment_layer(const ExperimentConfig& config) {
  if (config.arch == Architecture::kMiniResNet) {
    return "block" + std::to_string(config.resnet.blocks / 2 - (config.resnet.blocks > 1 ? 1 : 0)) +
           ".conv2.weight";
  }
  return "block" + std::to_string(config.mlp.blocks / 2 - (config.mlp.blocks > 1 ? 1 : 0)) +
         ".fc2.weight";
}

}  // namespace sdp

#include "sdp/model.hpp"

#include <bit>
#include <cmath>
#include <fstream>
#include <random>

#include <json.hpp>

#include "sdp/errors.hpp"

namespace sdp {
namespace {

class TopologyBuilder {
 public:
  explicit TopologyBuilder(Architecture arch) { topo_.arch = arch; }

  std::size_t layer(LayerDesc desc, const Shape& weight_shape, const Shape& bias_shape) {
    const std::size_t index = topo_.layers.size();
    desc.weight = add_param(desc.name + ".weight", weight_shape, ParamRole::kWeight, index);
    desc.bias = add_param(desc.name + ".bias", bias_shape, ParamRole::kBias, index);
    topo_.layers.push_back(std::move(desc));
    return index;
  }

  std::size_t block(std::string name) {
    topo_.blocks.push_back(BlockDesc{std::move(name), {}, true, true});
    return topo_.blocks.size() - 1;
  }

  void site(std::size_t units, std::size_t per_unit, std::optional<std::size_t> unit_layer,
            std::optional<std::size_t> block) {
    topo_.activations.push_back(ActivationSite{units, per_unit, unit_layer, block, false});
  }

  ModelTopology finish(Shape input_shape, std::size_t classes) {
    topo_.activations.push_back(ActivationSite{1, 1, std::nullopt, std::nullopt, true});
    topo_.input_shape = std::move(input_shape);
    topo_.classes = classes;
    for (std::size_t i = 0; i < topo_.layers.size(); ++i) {
      if (const auto b = topo_.layers[i].block) topo_.blocks[*b].layers.push_back(i);
    }
    topo_.check();
    return std::move(topo_);
  }

 private:
  ParamId add_param(std::string name, Shape shape, ParamRole role, std::size_t layer) {
    const std::size_t size = shape_numel(shape);
    topo_.params.push_back(ParamSpec{std::move(name), std::move(shape), topo_.total_params, size,
                                     role, layer});
    topo_.total_params += size;
    return ParamId{topo_.params.size() - 1};
  }

  ModelTopology topo_;
};

std::size_t fan_out(const LayerDesc& l) {
  return l.kind == LayerKind::kConv ? l.out_units * l.kernel * l.kernel : l.out_units;
}

std::vector<double> kaiming_theta(const ModelTopology& topo,
                                  const std::vector<double>& active_fraction,
                                  std::uint64_t seed) {
  std::vector<double> theta(topo.total_params, 0.0);
  for (std::size_t li = 0; li < topo.layers.size(); ++li) {
    const LayerDesc& l = topo.layers[li];
    const ParamSpec& w = topo.param(l.weight);
    if (l.kind == LayerKind::kGroupNorm) {
      std::fill_n(theta.begin() + static_cast<std::ptrdiff_t>(w.offset), w.size, 1.0);
      continue;
    }
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(li)};
    std::mt19937_64 rng(seq);
    if (li + 1 == topo.layers.size()) {
      // classifier: the usual linear-layer default, U(-1/sqrt(fan_in), 1/sqrt(fan_in))
      const double bound = 1.0 / std::sqrt(static_cast<double>(l.in_units));
      std::uniform_real_distribution<double> uniform(-bound, bound);
      for (std::size_t i = 0; i < w.size; ++i) theta[w.offset + i] = uniform(rng);
      continue;
    }
    const double active = std::round(static_cast<double>(fan_out(l)) * active_fraction[li]);
    const double stddev = std::sqrt(2.0 / std::max(active, 1.0));
    std::normal_distribution<double> normal(0.0, stddev);
    for (std::size_t i = 0; i < w.size; ++i) theta[w.offset + i] = normal(rng);
  }
  return theta;
}

std::size_t conv_out(std::size_t in, std::size_t k, std::size_t stride, std::size_t pad) {
  const long span = static_cast<long>(in + 2 * pad) - static_cast<long>(k);
  if (span < 0 || span % static_cast<long>(stride) != 0) {
    throw ConfigError("input extent " + std::to_string(in) + " is incompatible with stride " +
                      std::to_string(stride));
  }
  return static_cast<std::size_t>(span) / stride + 1;
}

}  // namespace

GlobalModel build_mini_resnet(const MiniResNetSpec& spec, std::uint64_t seed) {
  if (spec.blocks < 1) throw ConfigError("mini_resnet: blocks must be >= 1");
  if (spec.channels < 1 || spec.classes < 2) {
    throw ConfigError("mini_resnet: need channels >= 1 and classes >= 2");
  }
  if (spec.norm_groups < 1 || spec.channels % spec.norm_groups != 0) {
    throw ConfigError("mini_resnet: norm_groups " + std::to_string(spec.norm_groups) +
                      " must divide channels " + std::to_string(spec.channels));
  }
  const std::size_t c = spec.channels;
  const std::size_t area = conv_out(spec.height, 3, spec.stem_stride, 1) *
                           conv_out(spec.width, 3, spec.stem_stride, 1);

  TopologyBuilder b(Architecture::kMiniResNet);
  auto conv = [&](std::string name, std::size_t in, std::size_t stride,
                  std::optional<std::size_t> block) {
    LayerDesc d;
    d.name = std::move(name);
    d.kind = LayerKind::kConv;
    d.in_units = in;
    d.out_units = c;
    d.kernel = 3;
    d.stride = stride;
    d.pad = 1;
    d.block = block;
    return d;
  };
  auto norm = [&](std::string name, std::optional<std::size_t> block) {
    LayerDesc d;
    d.name = std::move(name);
    d.kind = LayerKind::kGroupNorm;
    d.in_units = c;
    d.out_units = c;
    d.norm_groups = spec.norm_groups;
    d.block = block;
    return d;
  };

  const std::size_t stem = b.layer(conv("stem.conv", spec.in_channels, spec.stem_stride, {}),
                                   {c, spec.in_channels, 3, 3}, {c});
  b.layer(norm("stem.norm", {}), {c}, {c});
  b.site(c, area, {}, {});
  b.site(c, area, {}, {});
  b.site(c, area, {}, {});
  (void)stem;

  for (std::size_t k = 0; k < spec.blocks; ++k) {
    const std::string prefix = "block" + std::to_string(k);
    const std::size_t blk = b.block(prefix);
    LayerDesc c1 = conv(prefix + ".conv1", c, 1, blk);
    c1.out_maskable = true;
    const std::size_t conv1 = b.layer(std::move(c1), {c, c, 3, 3}, {c});
    LayerDesc n1 = norm(prefix + ".norm1", blk);
    n1.affine_mask_from = conv1;
    b.layer(std::move(n1), {c}, {c});
    LayerDesc c2 = conv(prefix + ".conv2", c, 1, blk);
    c2.input_mask_from = conv1;
    b.layer(std::move(c2), {c, c, 3, 3}, {c});
    b.layer(norm(prefix + ".norm2", blk), {c}, {c});
    b.site(c, area, conv1, blk);  // conv1
    b.site(c, area, conv1, blk);  // norm1
    b.site(c, area, conv1, blk);  // relu
    b.site(c, area, {}, blk);     // conv2
    b.site(c, area, {}, blk);     // norm2
    b.site(c, area, {}, blk);     // residual add
    b.site(c, area, {}, blk);     // post-add relu
  }

  LayerDesc head;
  head.name = "head";
  head.kind = LayerKind::kLinear;
  head.in_units = c;
  head.out_units = spec.classes;
  b.layer(std::move(head), {spec.classes, c}, {spec.classes});
  b.site(c, 1, {}, {});             // pooled features
  b.site(spec.classes, 1, {}, {});  // logits

  GlobalModel model;
  model.topology = b.finish({spec.in_channels, spec.height, spec.width}, spec.classes);
  model.theta = kaiming_theta(model.topology,
                              std::vector<double>(model.topology.layers.size(), 1.0), seed);
  return model;
}

GlobalModel build_residual_mlp(const ResidualMlpSpec& spec, std::uint64_t seed) {
  if (spec.blocks < 1) throw ConfigError("residual_mlp: blocks must be >= 1");
  if (spec.width < 1 || spec.inputs < 1 || spec.classes < 2) {
    throw ConfigError("residual_mlp: need width >= 1, inputs >= 1 and classes >= 2");
  }
  const std::size_t w = spec.width;
  TopologyBuilder b(Architecture::kResidualMlp);
  auto linear = [](std::string name, std::size_t in, std::size_t out,
                   std::optional<std::size_t> block) {
    LayerDesc d;
    d.name = std::move(name);
    d.kind = LayerKind::kLinear;
    d.in_units = in;
    d.out_units = out;
    d.block = block;
    return d;
  };
  b.layer(linear("stem", spec.inputs, w, {}), {w, spec.inputs}, {w});
  b.site(w, 1, {}, {});
  b.site(w, 1, {}, {});
  for (std::size_t k = 0; k < spec.blocks; ++k) {
    const std::string prefix = "block" + std::to_string(k);
    const std::size_t blk = b.block(prefix);
    LayerDesc f1 = linear(prefix + ".fc1", w, w, blk);
    f1.out_maskable = true;
    const std::size_t fc1 = b.layer(std::move(f1), {w, w}, {w});
    LayerDesc f2 = linear(prefix + ".fc2", w, w, blk);
    f2.input_mask_from = fc1;
    b.layer(std::move(f2), {w, w}, {w});
    b.site(w, 1, fc1, blk);  // fc1
    b.site(w, 1, fc1, blk);  // relu
    b.site(w, 1, {}, blk);   // fc2
    b.site(w, 1, {}, blk);   // residual add
  }
  b.layer(linear("head", w, spec.classes, {}), {spec.classes, w}, {spec.classes});
  b.site(spec.classes, 1, {}, {});

  GlobalModel model;
  model.topology = b.finish({spec.inputs}, spec.classes);
  model.theta = kaiming_theta(model.topology,
                              std::vector<double>(model.topology.layers.size(), 1.0), seed);
  return model;
}

double active_output_fraction(const ModelTopology& topology, const MaskAssignment& assignment,
                              std::size_t layer) {
  const LayerDesc& l = topology.layers.at(layer);
  if (assignment.masks.empty()) return 1.0;
  double total = 0.0;
  for (const auto& m : assignment.masks) {
    if (l.block && !m.block_on(*l.block)) continue;
    const auto& flags = m.layer_channels(layer);
    if (flags.empty()) {
      total += 1.0;
    } else {
      const auto on = static_cast<double>(std::count(flags.begin(), flags.end(), true));
      total += on / static_cast<double>(flags.size());
    }
  }
  return total / static_cast<double>(assignment.masks.size());
}

std::vector<double> masked_kaiming_init(const GlobalModel& model, const MaskAssignment& assignment,
                                        std::uint64_t seed) {
  const auto& topo = model.topology;
  std::vector<double> fraction(topo.layers.size(), 1.0);
  for (std::size_t li = 0; li < topo.layers.size(); ++li) {
    fraction[li] = active_output_fraction(topo, assignment, li);
  }
  return kaiming_theta(topo, fraction, seed);
}

ForwardPass masked_forward(const GlobalModel& model, const WorkerMask* mask, const Batch& batch,
                           BlockExecution execution, TapeMode mode) {
  const ModelTopology& topo = model.topology;
  const Tensor& x = batch.inputs;
  if (x.rank() != topo.input_shape.size() + 1 ||
      !std::equal(topo.input_shape.begin(), topo.input_shape.end(), x.shape().begin() + 1)) {
    throw InputError("batch of shape " + shape_str(x.shape()) + " does not match model input " +
                     shape_str(topo.input_shape));
  }
  if (batch.labels.size() != x.dim(0)) {
    throw InputError("batch has " + std::to_string(x.dim(0)) + " samples but " +
                     std::to_string(batch.labels.size()) + " labels");
  }
  if (mask && mask->params.size() != topo.total_params) {
    throw InputError("worker mask does not match the model's parameter count");
  }

  ForwardPass pass{Tape(mode), {}, {}};
  Tape& tape = pass.tape;
  auto param = [&](ParamId id) {
    Var v = tape.parameter(id, model.param_tensor(id));
    if (mask && !mask->param_masks[id.index].empty()) v = tape.mask(v, mask->param_masks[id.index]);
    return v;
  };
  static const std::vector<bool> kAllActive;
  auto channels_for = [&](const LayerDesc& l) -> const std::vector<bool>& {
    if (!mask || !l.affine_mask_from) return kAllActive;
    return mask->layer_channels(*l.affine_mask_from);
  };
  auto run_layer = [&](std::size_t li, Var in) {
    const LayerDesc& l = topo.layers[li];
    switch (l.kind) {
      case LayerKind::kConv:
        return tape.conv2d(in, param(l.weight), param(l.bias), l.stride, l.pad);
      case LayerKind::kLinear:
        return tape.linear(in, param(l.weight), param(l.bias));
      case LayerKind::kGroupNorm:
        return tape.group_norm(in, l.norm_groups, param(l.weight), param(l.bias), channels_for(l));
    }
    throw TopologyError("unknown layer kind");
  };

  Var h = tape.input(x);
  std::size_t li = 0;
  if (topo.arch == Architecture::kMiniResNet) {
    h = tape.relu(run_layer(1, run_layer(0, h)));
    li = 2;
  } else {
    h = tape.relu(run_layer(0, h));
    li = 1;
  }
  for (std::size_t k = 0; k < topo.blocks.size(); ++k) {
    const auto& block_layers = topo.blocks[k].layers;
    const bool on = !mask || mask->block_on(k);
    li = block_layers.back() + 1;
    if (!on && execution == BlockExecution::kStructural) continue;
    Var r = h;
    if (topo.arch == Architecture::kMiniResNet) {
      r = run_layer(block_layers[1], run_layer(block_layers[0], r));
      r = tape.relu(r);
      r = run_layer(block_layers[3], run_layer(block_layers[2], r));
    } else {
      r = tape.relu(run_layer(block_layers[0], r));
      r = run_layer(block_layers[1], r);
    }
    if (!on) r = tape.scale(r, 0.0);
    h = tape.add(h, r);
    if (topo.arch == Architecture::kMiniResNet) h = tape.relu(h);
  }
  if (topo.arch == Architecture::kMiniResNet) h = tape.global_avg_pool(h);
  pass.logits = run_layer(li, h);
  pass.loss = tape.softmax_cross_entropy(pass.logits, batch.labels);
  return pass;
}

std::vector<double> flat_gradient(const GlobalModel& model, ForwardPass& pass) {
  std::vector<double> flat(model.topology.total_params, 0.0);
  for (auto& [id, grad] : pass.tape.backward(pass.loss)) {
    const auto& p = model.topology.param(id);
    std::copy(grad.data().begin(), grad.data().end(),
              flat.begin() + static_cast<std::ptrdiff_t>(p.offset));
  }
  return flat;
}

double evaluate_accuracy(const GlobalModel& model, const Tensor& inputs,
                         std::span<const int> labels, std::size_t chunk) {
  const std::size_t n = inputs.dim(0);
  if (labels.size() != n) throw InputError("evaluate_accuracy: label count mismatch");
  if (n == 0) return 0.0;
  const std::size_t per_sample = inputs.size() / n;
  std::size_t correct = 0;
  for (std::size_t start = 0; start < n; start += chunk) {
    const std::size_t len = std::min(chunk, n - start);
    Shape shape = inputs.shape();
    shape[0] = len;
    Batch batch{Tensor(shape, std::vector<double>(inputs.data().begin() + static_cast<std::ptrdiff_t>(start * per_sample),
                                                  inputs.data().begin() + static_cast<std::ptrdiff_t>((start + len) * per_sample))),
                std::vector<int>(labels.begin() + static_cast<std::ptrdiff_t>(start),
                                 labels.begin() + static_cast<std::ptrdiff_t>(start + len))};
    ForwardPass pass =
        masked_forward(model, nullptr, batch, BlockExecution::kStructural, TapeMode::kInference);
    const Tensor& logits = pass.tape.value(pass.logits);
    const std::size_t classes = logits.dim(1);
    for (std::size_t s = 0; s < len; ++s) {
      const auto row = logits.data().subspan(s * classes, classes);
      const auto best = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
      if (best == batch.labels[s]) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(n);
}

void save_checkpoint(const GlobalModel& model, const std::filesystem::path& stem) {
  auto bin_path = stem;
  bin_path += ".bin";
  std::ofstream bin(bin_path, std::ios::binary);
  if (!bin) throw DataError("cannot open " + bin_path.string() + " for writing");
  for (double v : model.theta) {
    auto bits = std::bit_cast<std::uint64_t>(v);
    if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap64(bits);
    bin.write(reinterpret_cast<const char*>(&bits), sizeof bits);
  }
  nlohmann::json index;
  index["format"] = "float64-le";
  index["total"] = model.topology.total_params;
  for (const auto& p : model.topology.params) {
    index["params"].push_back({{"name", p.name}, {"offset", p.offset}, {"shape", p.shape}});
  }
  auto json_path = stem;
  json_path += ".json";
  std::ofstream(json_path) << index.dump(2) << "\n";
}

std::vector<double> load_checkpoint(const ModelTopology& topology,
                                    const std::filesystem::path& stem) {
  auto json_path = stem;
  json_path += ".json";
  std::ifstream js(json_path);
  if (!js) throw DataError("missing checkpoint index " + json_path.string());
  nlohmann::json index;
  try {
    index = nlohmann::json::parse(js);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("corrupt checkpoint index " + json_path.string() + ": " + e.what());
  }
  if (index.value("total", std::size_t{0}) != topology.total_params ||
      index["params"].size() != topology.params.size()) {
    throw DataError("checkpoint " + json_path.string() + " does not match the model layout");
  }
  for (std::size_t i = 0; i < topology.params.size(); ++i) {
    const auto& entry = index["params"][i];
    const auto& p = topology.params[i];
    if (entry["name"] != p.name || entry["offset"] != p.offset ||
        entry["shape"].get<Shape>() != p.shape) {
      throw DataError("checkpoint parameter " + std::to_string(i) + " does not match '" +
                      p.name + "'");
    }
  }
  auto bin_path = stem;
  bin_path += ".bin";
  std::ifstream bin(bin_path, std::ios::binary);
  if (!bin) throw DataError("missing checkpoint data " + bin_path.string());
  std::vector<double> theta(topology.total_params);
  for (auto& v : theta) {
    std::uint64_t bits = 0;
    if (!bin.read(reinterpret_cast<char*>(&bits), sizeof bits)) {
      throw DataError("checkpoint data " + bin_path.string() + " is truncated");
    }
    if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap64(bits);
    v = std::bit_cast<double>(bits);
  }
  if (bin.peek() != std::char_traits<char>::eof()) {
    throw DataError("checkpoint data " + bin_path.string() + " has trailing bytes");
  }
  return theta;
}

}  // namespace sdp

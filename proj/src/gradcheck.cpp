#include "sdp/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "sdp/masking.hpp"

namespace sdp {
namespace {

Tensor random_tensor(Shape shape, std::mt19937_64& rng, double spread = 1.0) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> normal(0.0, spread);
  for (auto& v : t.data()) v = normal(rng);
  return t;
}

// Keeps values away from the ReLU kink so differences stay smooth.
Tensor away_from_zero(Tensor t) {
  for (auto& v : t.data()) {
    if (std::abs(v) < 0.05) v = v < 0 ? -0.05 - v : 0.05 + v;
  }
  return t;
}

std::vector<std::size_t> pick_entries(std::size_t size, std::size_t count, std::mt19937_64& rng) {
  std::vector<std::size_t> idx(size);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  if (count == 0 || count >= size) return idx;
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(count);
  std::sort(idx.begin(), idx.end());
  return idx;
}

double evaluate(const std::vector<Tensor>& inputs, const LossBuilder& build) {
  Tape tape;
  std::vector<Var> vars;
  for (std::size_t k = 0; k < inputs.size(); ++k) vars.push_back(tape.parameter(ParamId{k}, inputs[k]));
  return tape.value(build(tape, vars)).item();
}

// Weighted sum of an output so that every entry gets a distinct upstream gradient.
Var probe(Tape& tape, Var out, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const Tensor weights = random_tensor(tape.value(out).shape(), rng);
  return tape.sum(tape.mul(out, tape.constant(weights)));
}

}  // namespace

double gradient_relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max(std::abs(analytic) + std::abs(numeric), 1e-6);
}

GradCheckResult check_gradients(std::string name, std::vector<Tensor> inputs,
                                const LossBuilder& build, double tolerance, double h,
                                std::size_t per_tensor, std::uint64_t seed) {
  Tape tape;
  std::vector<Var> vars;
  for (std::size_t k = 0; k < inputs.size(); ++k) vars.push_back(tape.parameter(ParamId{k}, inputs[k]));
  const auto grads = tape.backward(build(tape, vars));

  GradCheckResult r{std::move(name), 0.0, 0, true};
  std::mt19937_64 rng(seed);
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const auto it = grads.find(ParamId{k});
    for (std::size_t e : pick_entries(inputs[k].size(), per_tensor, rng)) {
      const double saved = inputs[k][e];
      inputs[k][e] = saved + h;
      const double up = evaluate(inputs, build);
      inputs[k][e] = saved - h;
      const double down = evaluate(inputs, build);
      inputs[k][e] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double analytic = it == grads.end() ? 0.0 : it->second[e];
      r.max_rel_error = std::max(r.max_rel_error, gradient_relative_error(analytic, numeric));
      ++r.checked;
    }
  }
  r.passed = r.max_rel_error < tolerance;
  return r;
}

GradCheckResult check_model_gradients(std::string name, const GlobalModel& model,
                                      const WorkerMask* mask, const Batch& batch,
                                      double tolerance, std::size_t per_param,
                                      std::uint64_t seed, double h) {
  GlobalModel probe_model = model;
  auto pass = masked_forward(probe_model, mask, batch);
  const auto analytic = flat_gradient(probe_model, pass);
  auto loss_at = [&] {
    auto again = masked_forward(probe_model, mask, batch);
    return again.tape.value(again.loss).item();
  };

  GradCheckResult r{std::move(name), 0.0, 0, true};
  std::mt19937_64 rng(seed);
  for (const auto& p : model.topology.params) {
    for (std::size_t e : pick_entries(p.size, per_param, rng)) {
      double& slot = probe_model.theta[p.offset + e];
      const double saved = slot;
      slot = saved + h;
      const double up = loss_at();
      slot = saved - h;
      const double down = loss_at();
      slot = saved;
      const double numeric = (up - down) / (2.0 * h);
      r.max_rel_error =
          std::max(r.max_rel_error, gradient_relative_error(analytic[p.offset + e], numeric));
      ++r.checked;
    }
  }
  r.passed = r.max_rel_error < tolerance;
  return r;
}

std::vector<GradCheckResult> run_grad_check_suite(double tolerance, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<GradCheckResult> out;
  auto op = [&](std::string name, std::vector<Tensor> inputs, LossBuilder build) {
    out.push_back(check_gradients(std::move(name), std::move(inputs), build, tolerance));
  };
  const std::uint64_t ps = seed + 1;

  op("matmul", {random_tensor({3, 4}, rng), random_tensor({4, 5}, rng)},
     [=](Tape& t, const std::vector<Var>& v) { return probe(t, t.matmul(v[0], v[1]), ps); });
  op("linear", {random_tensor({3, 4}, rng), random_tensor({5, 4}, rng), random_tensor({5}, rng)},
     [=](Tape& t, const std::vector<Var>& v) { return probe(t, t.linear(v[0], v[1], v[2]), ps); });
  op("conv2d stride1 pad1",
     {random_tensor({2, 3, 5, 5}, rng), random_tensor({4, 3, 3, 3}, rng), random_tensor({4}, rng)},
     [=](Tape& t, const std::vector<Var>& v) {
       return probe(t, t.conv2d(v[0], v[1], v[2], 1, 1), ps);
     });
  op("conv2d stride2 pad1",
     {random_tensor({2, 2, 7, 7}, rng), random_tensor({3, 2, 3, 3}, rng), random_tensor({3}, rng)},
     [=](Tape& t, const std::vector<Var>& v) {
       return probe(t, t.conv2d(v[0], v[1], v[2], 2, 1), ps);
     });
  op("group_norm",
     {random_tensor({2, 6, 3, 3}, rng), random_tensor({6}, rng), random_tensor({6}, rng)},
     [=](Tape& t, const std::vector<Var>& v) {
       return probe(t, t.group_norm(v[0], 2, v[1], v[2], {}), ps);
     });
  op("group_norm partial channels",
     {random_tensor({2, 6, 3, 3}, rng), random_tensor({6}, rng), random_tensor({6}, rng)},
     [=](Tape& t, const std::vector<Var>& v) {
       return probe(t, t.group_norm(v[0], 2, v[1], v[2], {true, false, true, false, true, true}),
                    ps);
     });
  op("relu", {away_from_zero(random_tensor({3, 7}, rng))},
     [=](Tape& t, const std::vector<Var>& v) { return probe(t, t.relu(v[0]), ps); });
  op("add", {random_tensor({2, 5}, rng), random_tensor({2, 5}, rng)},
     [=](Tape& t, const std::vector<Var>& v) { return probe(t, t.add(v[0], v[1]), ps); });
  op("mul", {random_tensor({2, 5}, rng), random_tensor({2, 5}, rng)},
     [=](Tape& t, const std::vector<Var>& v) { return probe(t, t.mul(v[0], v[1]), ps); });
  op("scale", {random_tensor({2, 5}, rng)},
     [=](Tape& t, const std::vector<Var>& v) { return probe(t, t.scale(v[0], -1.7), ps); });
  {
    Tensor m({2, 5});
    for (std::size_t i = 0; i < m.size(); ++i) m[i] = (i % 3 == 0) ? 0.0 : 1.0;
    op("mask", {random_tensor({2, 5}, rng)},
       [=](Tape& t, const std::vector<Var>& v) { return probe(t, t.mask(v[0], m), ps); });
  }
  op("global_avg_pool", {random_tensor({2, 3, 4, 4}, rng)},
     [=](Tape& t, const std::vector<Var>& v) { return probe(t, t.global_avg_pool(v[0]), ps); });
  op("flatten", {random_tensor({2, 3, 2, 2}, rng)},
     [=](Tape& t, const std::vector<Var>& v) { return probe(t, t.flatten(v[0]), ps); });
  op("sum", {random_tensor({3, 4}, rng)},
     [](Tape& t, const std::vector<Var>& v) { return t.sum(v[0]); });
  {
    const std::vector<int> labels{0, 3, 1, 2, 3};
    op("softmax_cross_entropy", {random_tensor({5, 4}, rng, 2.0)},
       [=](Tape& t, const std::vector<Var>& v) { return t.softmax_cross_entropy(v[0], labels); });
  }
  {
    // three-layer CNN composed from the primitives
    const std::vector<int> labels{1, 0, 2};
    op("mini cnn",
       {random_tensor({3, 2, 5, 5}, rng), random_tensor({4, 2, 3, 3}, rng, 0.5),
        random_tensor({4}, rng, 0.1), random_tensor({4}, rng), random_tensor({4}, rng),
        random_tensor({4, 4, 3, 3}, rng, 0.5), random_tensor({4}, rng, 0.1),
        random_tensor({3, 4}, rng), random_tensor({3}, rng)},
       [=](Tape& t, const std::vector<Var>& v) {
         Var h = t.relu(t.group_norm(t.conv2d(v[0], v[1], v[2], 1, 1), 2, v[3], v[4], {}));
         h = t.add(h, t.conv2d(h, v[5], v[6], 1, 1));
         return t.softmax_cross_entropy(t.linear(t.global_avg_pool(h), v[7], v[8]), labels);
       });
  }

  // full models, unmasked and masked
  const MiniResNetSpec spec;
  const GlobalModel resnet = build_mini_resnet(spec, seed);
  Batch batch{random_tensor({2, spec.in_channels, spec.height, spec.width}, rng), {3, 7}};
  out.push_back(check_model_gradients("mini-resnet", resnet, nullptr, batch, tolerance, 6, seed));
  const auto blocks = build_assignment(resnet.topology, Strategy::kBlock, 4, 2, seed);
  out.push_back(check_model_gradients("mini-resnet block-masked", resnet, &blocks.masks[0], batch,
                                      tolerance, 6, seed));
  const auto channels = build_assignment(resnet.topology, Strategy::kNeuron, 4, 2, seed);
  out.push_back(check_model_gradients("mini-resnet channel-masked", resnet, &channels.masks[0],
                                      batch, tolerance, 6, seed));

  const GlobalModel mlp = build_residual_mlp(ResidualMlpSpec{}, seed);
  Batch points{random_tensor({4, 2}, rng), {0, 1, 1, 0}};
  out.push_back(check_model_gradients("residual-mlp", mlp, nullptr, points, tolerance, 0, seed));
  return out;
}

}  // namespace sdp

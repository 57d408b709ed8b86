#include "sdp/tape.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <limits>

#include "sdp/errors.hpp"

namespace sdp {
namespace {

void require_rank(const Tensor& t, std::size_t rank, const char* op, const char* arg) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(op) + ": " + arg + " must have rank " +
                     std::to_string(rank) + ", got " + shape_str(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                     " vs " + shape_str(b.shape()));
  }
}

#ifndef NDEBUG
void debug_check_finite(const Tensor& t, const char* op) {
  if (!t.all_finite()) throw NumericalError(std::string(op) + " produced a non-finite value");
}
#else
void debug_check_finite(const Tensor&, const char*) {}
#endif

// Geometry of one conv2d call; the patch buffer holds the receptive field of a
// single output position laid out as [ci][ky][kx].
struct ConvGeometry {
  std::size_t batch, in_ch, height, width, out_ch, kernel, stride, pad, out_h, out_w;

  std::size_t patch_len() const { return in_ch * kernel * kernel; }

  void gather(const double* x, std::size_t b, std::size_t oy, std::size_t ox,
              double* patch) const {
    const double* xb = x + b * in_ch * height * width;
    std::size_t p = 0;
    for (std::size_t ci = 0; ci < in_ch; ++ci) {
      const double* plane = xb + ci * height * width;
      for (std::size_t ky = 0; ky < kernel; ++ky) {
        const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(pad);
        const bool row_ok = iy >= 0 && iy < static_cast<long>(height);
        for (std::size_t kx = 0; kx < kernel; ++kx, ++p) {
          const long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(pad);
          patch[p] = (row_ok && ix >= 0 && ix < static_cast<long>(width))
                         ? plane[iy * static_cast<long>(width) + ix]
                         : 0.0;
        }
      }
    }
  }

  void scatter_add(double* gx, std::size_t b, std::size_t oy, std::size_t ox,
                   const double* patch) const {
    double* gb = gx + b * in_ch * height * width;
    std::size_t p = 0;
    for (std::size_t ci = 0; ci < in_ch; ++ci) {
      double* plane = gb + ci * height * width;
      for (std::size_t ky = 0; ky < kernel; ++ky) {
        const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(pad);
        const bool row_ok = iy >= 0 && iy < static_cast<long>(height);
        for (std::size_t kx = 0; kx < kernel; ++kx, ++p) {
          const long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(pad);
          if (row_ok && ix >= 0 && ix < static_cast<long>(width)) {
            plane[iy * static_cast<long>(width) + ix] += patch[p];
          }
        }
      }
    }
  }
};

// Vectorized reduction; lane order is fixed per build, so results are reproducible.
double dot(const double* a, const double* b, std::size_t n) {
  double s = 0.0;
#pragma omp simd reduction(+ : s)
  for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

}  // namespace

Var Tape::push(Tensor value, std::vector<std::size_t> inputs, BackwardRule rule) {
  Node node;
  node.value = std::move(value);
  for (auto id : inputs) {
    node.requires_grad = node.requires_grad || nodes_[id].requires_grad;
    node.data_dependent = node.data_dependent || nodes_[id].data_dependent;
  }
  if (node.requires_grad) node.backward = std::move(rule);
  node.inputs = std::move(inputs);
  nodes_.push_back(std::move(node));
  return Var{nodes_.size() - 1};
}

Tensor& Tape::grad_of(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.empty()) n.grad = Tensor(n.value.shape());
  return n.grad;
}

Var Tape::input(Tensor value) {
  Node node;
  node.value = std::move(value);
  node.data_dependent = true;
  nodes_.push_back(std::move(node));
  return Var{nodes_.size() - 1};
}

Var Tape::constant(Tensor value) {
  Node node;
  node.value = std::move(value);
  nodes_.push_back(std::move(node));
  return Var{nodes_.size() - 1};
}

Var Tape::parameter(ParamId id, Tensor value) {
  Node node;
  node.value = std::move(value);
  if (mode_ == TapeMode::kTraining) {
    node.param = id;
    node.requires_grad = true;
  }
  nodes_.push_back(std::move(node));
  return Var{nodes_.size() - 1};
}

Var Tape::matmul(Var av, Var bv) {
  const Tensor& a = value(av);
  const Tensor& b = value(bv);
  require_rank(a, 2, "matmul", "a");
  require_rank(b, 2, "matmul", "b");
  if (a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: inner dimensions disagree for " + shape_str(a.shape()) +
                     " x " + shape_str(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor out({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      axpy(a[i * k + p], &b.data()[p * n], &out.data()[i * n], n);
    }
  }
  return push(std::move(out), {av.id, bv.id}, [m, k, n](Tape& t, std::size_t self) {
    const std::size_t ai = t.nodes_[self].inputs[0];
    const std::size_t bi = t.nodes_[self].inputs[1];
    const Tensor& g = t.out_grad(self);
    if (t.wants_grad(ai)) {
      const Tensor& b = t.nodes_[bi].value;
      Tensor& ga = t.grad_of(ai);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p)
          ga[i * k + p] += dot(&g.data()[i * n], &b.data()[p * n], n);
    }
    if (t.wants_grad(bi)) {
      const Tensor& a = t.nodes_[ai].value;
      Tensor& gb = t.grad_of(bi);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p)
          axpy(a[i * k + p], &g.data()[i * n], &gb.data()[p * n], n);
    }
  });
}

Var Tape::linear(Var xv, Var wv, Var bv) {
  const Tensor& x = value(xv);
  const Tensor& w = value(wv);
  const Tensor& b = value(bv);
  require_rank(x, 2, "linear", "x");
  require_rank(w, 2, "linear", "weight");
  if (x.dim(1) != w.dim(1) || b.size() != w.dim(0)) {
    throw ShapeError("linear: incompatible shapes x" + shape_str(x.shape()) + " weight" +
                     shape_str(w.shape()) + " bias" + shape_str(b.shape()));
  }
  const std::size_t batch = x.dim(0), in = x.dim(1), out_f = w.dim(0);
  Tensor out({batch, out_f});
  for (std::size_t s = 0; s < batch; ++s) {
    const double* xs = &x.data()[s * in];
    for (std::size_t o = 0; o < out_f; ++o) {
      out[s * out_f + o] = b[o] + dot(&w.data()[o * in], xs, in);
    }
  }
  debug_check_finite(out, "linear");
  return push(std::move(out), {xv.id, wv.id, bv.id},
              [batch, in, out_f](Tape& t, std::size_t self) {
                const auto& ins = t.nodes_[self].inputs;
                const Tensor& g = t.out_grad(self);
                const Tensor& x = t.nodes_[ins[0]].value;
                const Tensor& w = t.nodes_[ins[1]].value;
                if (t.wants_grad(ins[0])) {
                  Tensor& gx = t.grad_of(ins[0]);
                  for (std::size_t s = 0; s < batch; ++s)
                    for (std::size_t o = 0; o < out_f; ++o)
                      axpy(g[s * out_f + o], &w.data()[o * in], &gx.data()[s * in], in);
                }
                if (t.wants_grad(ins[1])) {
                  Tensor& gw = t.grad_of(ins[1]);
                  for (std::size_t s = 0; s < batch; ++s)
                    for (std::size_t o = 0; o < out_f; ++o)
                      axpy(g[s * out_f + o], &x.data()[s * in], &gw.data()[o * in], in);
                }
                if (t.wants_grad(ins[2])) {
                  Tensor& gb = t.grad_of(ins[2]);
                  for (std::size_t s = 0; s < batch; ++s)
                    for (std::size_t o = 0; o < out_f; ++o) gb[o] += g[s * out_f + o];
                }
              });
}

Var Tape::conv2d(Var xv, Var wv, Var bv, std::size_t stride, std::size_t pad) {
  const Tensor& x = value(xv);
  const Tensor& w = value(wv);
  const Tensor& b = value(bv);
  require_rank(x, 4, "conv2d", "x");
  require_rank(w, 4, "conv2d", "weight");
  if (w.dim(1) != x.dim(1) || w.dim(2) != w.dim(3) || b.size() != w.dim(0)) {
    throw ShapeError("conv2d: incompatible shapes x" + shape_str(x.shape()) + " weight" +
                     shape_str(w.shape()) + " bias" + shape_str(b.shape()));
  }
  if (stride == 0) throw ConfigError("conv2d: stride must be positive");
  const std::size_t k = w.dim(2);
  const auto out_extent = [&](std::size_t in) -> std::size_t {
    const long span = static_cast<long>(in + 2 * pad) - static_cast<long>(k);
    if (span < 0 || span % static_cast<long>(stride) != 0) {
      throw ConfigError("conv2d: output size (" + std::to_string(in) + " + 2*" +
                        std::to_string(pad) + " - " + std::to_string(k) + ")/" +
                        std::to_string(stride) + " + 1 is not a positive integer");
    }
    return static_cast<std::size_t>(span) / stride + 1;
  };
  const ConvGeometry geo{x.dim(0), x.dim(1), x.dim(2), x.dim(3), w.dim(0), k,
                         stride,   pad,      out_extent(x.dim(2)), out_extent(x.dim(3))};

  const std::size_t plen = geo.patch_len();
  const std::size_t positions = geo.out_h * geo.out_w;
  Tensor out({geo.batch, geo.out_ch, geo.out_h, geo.out_w});
  std::vector<double> patch(plen);
  for (std::size_t s = 0; s < geo.batch; ++s) {
    for (std::size_t oy = 0; oy < geo.out_h; ++oy) {
      for (std::size_t ox = 0; ox < geo.out_w; ++ox) {
        geo.gather(x.data().data(), s, oy, ox, patch.data());
        const std::size_t pos = oy * geo.out_w + ox;
        for (std::size_t co = 0; co < geo.out_ch; ++co) {
          out[(s * geo.out_ch + co) * positions + pos] =
              b[co] + dot(&w.data()[co * plen], patch.data(), plen);
        }
      }
    }
  }
  debug_check_finite(out, "conv2d");
  return push(std::move(out), {xv.id, wv.id, bv.id}, [geo](Tape& t, std::size_t self) {
    const auto& ins = t.nodes_[self].inputs;
    const Tensor& g = t.out_grad(self);
    const Tensor& x = t.nodes_[ins[0]].value;
    const Tensor& w = t.nodes_[ins[1]].value;
    const bool need_x = t.wants_grad(ins[0]);
    const bool need_w = t.wants_grad(ins[1]);
    const std::size_t plen = geo.patch_len();
    const std::size_t positions = geo.out_h * geo.out_w;
    if (t.wants_grad(ins[2])) {
      Tensor& gb = t.grad_of(ins[2]);
      for (std::size_t s = 0; s < geo.batch; ++s)
        for (std::size_t co = 0; co < geo.out_ch; ++co)
          for (std::size_t pos = 0; pos < positions; ++pos)
            gb[co] += g[(s * geo.out_ch + co) * positions + pos];
    }
    if (!need_x && !need_w) return;
    // Rows r = (sample, position). gout_t is [Cout][R].
    const std::size_t rows = geo.batch * positions;
    std::vector<double> gout_t(geo.out_ch * rows);
    for (std::size_t s = 0; s < geo.batch; ++s)
      for (std::size_t co = 0; co < geo.out_ch; ++co)
        for (std::size_t pos = 0; pos < positions; ++pos)
          gout_t[co * rows + s * positions + pos] = g[(s * geo.out_ch + co) * positions + pos];
    std::vector<double> patch(plen);
    if (need_w) {
      // patches_t is [L][R]; each weight gradient entry is one dot over R.
      std::vector<double> patches_t(plen * rows);
      for (std::size_t s = 0; s < geo.batch; ++s)
        for (std::size_t pos = 0; pos < positions; ++pos) {
          geo.gather(x.data().data(), s, pos / geo.out_w, pos % geo.out_w, patch.data());
          const std::size_t r = s * positions + pos;
          for (std::size_t l = 0; l < plen; ++l) patches_t[l * rows + r] = patch[l];
        }
      Tensor& gw = t.grad_of(ins[1]);
      for (std::size_t co = 0; co < geo.out_ch; ++co)
        for (std::size_t l = 0; l < plen; ++l)
          gw[co * plen + l] += dot(&gout_t[co * rows], &patches_t[l * rows], rows);
    }
    if (need_x) {
      Tensor& gx = t.grad_of(ins[0]);
      for (std::size_t s = 0; s < geo.batch; ++s)
        for (std::size_t pos = 0; pos < positions; ++pos) {
          const std::size_t r = s * positions + pos;
          std::fill(patch.begin(), patch.end(), 0.0);
          for (std::size_t co = 0; co < geo.out_ch; ++co) {
            const double go = gout_t[co * rows + r];
            if (go != 0.0) axpy(go, &w.data()[co * plen], patch.data(), plen);
          }
          geo.scatter_add(gx.data().data(), s, pos / geo.out_w, pos % geo.out_w, patch.data());
        }
    }
  });
}

Var Tape::group_norm(Var xv, std::size_t groups, Var gv, Var bv,
                     const std::vector<bool>& active_in, double eps) {
  const Tensor& x = value(xv);
  const Tensor& gamma = value(gv);
  const Tensor& beta = value(bv);
  require_rank(x, 4, "group_norm", "x");
  const std::size_t batch = x.dim(0), channels = x.dim(1);
  const std::size_t hw = x.dim(2) * x.dim(3);
  if (groups == 0 || channels % groups != 0) {
    throw ConfigError("group_norm: " + std::to_string(groups) + " groups do not divide " +
                      std::to_string(channels) + " channels");
  }
  if (gamma.size() != channels || beta.size() != channels) {
    throw ShapeError("group_norm: affine parameters must have " + std::to_string(channels) +
                     " entries");
  }
  std::vector<bool> active = active_in.empty() ? std::vector<bool>(channels, true) : active_in;
  if (active.size() != channels) {
    throw ShapeError("group_norm: active flags cover " + std::to_string(active.size()) +
                     " channels, expected " + std::to_string(channels));
  }
  const std::size_t per_group = channels / groups;

  Tensor out(x.shape());
  Tensor xhat(x.shape());
  // inv_std per (sample, group); zero when the group has no active channel.
  std::vector<double> inv_std(batch * groups, 0.0);
  for (std::size_t s = 0; s < batch; ++s) {
    for (std::size_t gi = 0; gi < groups; ++gi) {
      std::size_t count = 0;
      double mean = 0.0;
      for (std::size_t c = gi * per_group; c < (gi + 1) * per_group; ++c) {
        if (!active[c]) continue;
        const double* xc = &x.data()[(s * channels + c) * hw];
        for (std::size_t p = 0; p < hw; ++p) mean += xc[p];
        count += hw;
      }
      if (count == 0) continue;
      mean /= static_cast<double>(count);
      double var = 0.0;
      for (std::size_t c = gi * per_group; c < (gi + 1) * per_group; ++c) {
        if (!active[c]) continue;
        const double* xc = &x.data()[(s * channels + c) * hw];
        for (std::size_t p = 0; p < hw; ++p) var += (xc[p] - mean) * (xc[p] - mean);
      }
      var /= static_cast<double>(count);
      const double is = 1.0 / std::sqrt(var + eps);
      inv_std[s * groups + gi] = is;
      for (std::size_t c = gi * per_group; c < (gi + 1) * per_group; ++c) {
        if (!active[c]) continue;
        const std::size_t base = (s * channels + c) * hw;
        for (std::size_t p = 0; p < hw; ++p) {
          const double xh = (x[base + p] - mean) * is;
          xhat[base + p] = xh;
          out[base + p] = gamma[c] * xh + beta[c];
        }
      }
    }
  }
  debug_check_finite(out, "group_norm");
  return push(std::move(out), {xv.id, gv.id, bv.id},
              [=, xhat = std::move(xhat), inv_std = std::move(inv_std),
               active = std::move(active)](Tape& t, std::size_t self) {
                const auto& ins = t.nodes_[self].inputs;
                const Tensor& g = t.out_grad(self);
                const Tensor& gamma = t.nodes_[ins[1]].value;
                if (t.wants_grad(ins[1]) || t.wants_grad(ins[2])) {
                  Tensor* gg = t.wants_grad(ins[1]) ? &t.grad_of(ins[1]) : nullptr;
                  Tensor* gb = t.wants_grad(ins[2]) ? &t.grad_of(ins[2]) : nullptr;
                  for (std::size_t s = 0; s < batch; ++s)
                    for (std::size_t c = 0; c < channels; ++c) {
                      if (!active[c]) continue;
                      const std::size_t base = (s * channels + c) * hw;
                      for (std::size_t p = 0; p < hw; ++p) {
                        if (gg) (*gg)[c] += g[base + p] * xhat[base + p];
                        if (gb) (*gb)[c] += g[base + p];
                      }
                    }
                }
                if (!t.wants_grad(ins[0])) return;
                Tensor& gx = t.grad_of(ins[0]);
                for (std::size_t s = 0; s < batch; ++s) {
                  for (std::size_t gi = 0; gi < groups; ++gi) {
                    const double is = inv_std[s * groups + gi];
                    double sum_d = 0.0, sum_dx = 0.0;
                    std::size_t count = 0;
                    for (std::size_t c = gi * per_group; c < (gi + 1) * per_group; ++c) {
                      if (!active[c]) continue;
                      const std::size_t base = (s * channels + c) * hw;
                      for (std::size_t p = 0; p < hw; ++p) {
                        const double d = g[base + p] * gamma[c];
                        sum_d += d;
                        sum_dx += d * xhat[base + p];
                      }
                      count += hw;
                    }
                    if (count == 0) continue;
                    const double n = static_cast<double>(count);
                    for (std::size_t c = gi * per_group; c < (gi + 1) * per_group; ++c) {
                      if (!active[c]) continue;
                      const std::size_t base = (s * channels + c) * hw;
                      for (std::size_t p = 0; p < hw; ++p) {
                        const double d = g[base + p] * gamma[c];
                        gx[base + p] += is * (d - sum_d / n - xhat[base + p] * sum_dx / n);
                      }
                    }
                  }
                }
              });
}

Var Tape::relu(Var xv) {
  const Tensor& x = value(xv);
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
  return push(std::move(out), {xv.id}, [](Tape& t, std::size_t self) {
    const std::size_t xi = t.nodes_[self].inputs[0];
    const Tensor& x = t.nodes_[xi].value;
    const Tensor& g = t.out_grad(self);
    Tensor& gx = t.grad_of(xi);
    for (std::size_t i = 0; i < x.size(); ++i)
      if (x[i] > 0.0) gx[i] += g[i];
  });
}

Var Tape::add(Var av, Var bv) {
  const Tensor& a = value(av);
  const Tensor& b = value(bv);
  require_same_shape(a, b, "add");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
  return push(std::move(out), {av.id, bv.id}, [](Tape& t, std::size_t self) {
    const Tensor& g = t.out_grad(self);
    for (std::size_t k = 0; k < 2; ++k) {
      const std::size_t in = t.nodes_[self].inputs[k];
      if (!t.wants_grad(in)) continue;
      Tensor& gi = t.grad_of(in);
      for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
    }
  });
}

Var Tape::mul(Var av, Var bv) {
  const Tensor& a = value(av);
  const Tensor& b = value(bv);
  require_same_shape(a, b, "mul");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * b[i];
  return push(std::move(out), {av.id, bv.id}, [](Tape& t, std::size_t self) {
    const auto& ins = t.nodes_[self].inputs;
    const Tensor& g = t.out_grad(self);
    for (std::size_t k = 0; k < 2; ++k) {
      if (!t.wants_grad(ins[k])) continue;
      const Tensor& other = t.nodes_[ins[1 - k]].value;
      Tensor& gi = t.grad_of(ins[k]);
      for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i] * other[i];
    }
  });
}

Var Tape::scale(Var xv, double factor) {
  const Tensor& x = value(xv);
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = factor * x[i];
  return push(std::move(out), {xv.id}, [factor](Tape& t, std::size_t self) {
    const std::size_t xi = t.nodes_[self].inputs[0];
    const Tensor& g = t.out_grad(self);
    Tensor& gx = t.grad_of(xi);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += factor * g[i];
  });
}

Var Tape::mask(Var xv, const Tensor& m) {
  const Tensor& x = value(xv);
  require_same_shape(x, m, "mask");
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = m[i] * x[i];
  return push(std::move(out), {xv.id}, [m](Tape& t, std::size_t self) {
    const std::size_t xi = t.nodes_[self].inputs[0];
    const Tensor& g = t.out_grad(self);
    Tensor& gx = t.grad_of(xi);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += m[i] * g[i];
  });
}

Var Tape::global_avg_pool(Var xv) {
  const Tensor& x = value(xv);
  require_rank(x, 4, "global_avg_pool", "x");
  const std::size_t rows = x.dim(0) * x.dim(1);
  const std::size_t hw = x.dim(2) * x.dim(3);
  Tensor out({x.dim(0), x.dim(1)});
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t p = 0; p < hw; ++p) s += x[r * hw + p];
    out[r] = s / static_cast<double>(hw);
  }
  return push(std::move(out), {xv.id}, [rows, hw](Tape& t, std::size_t self) {
    const std::size_t xi = t.nodes_[self].inputs[0];
    const Tensor& g = t.out_grad(self);
    Tensor& gx = t.grad_of(xi);
    const double inv = 1.0 / static_cast<double>(hw);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t p = 0; p < hw; ++p) gx[r * hw + p] += g[r] * inv;
  });
}

Var Tape::flatten(Var xv) {
  const Tensor& x = value(xv);
  if (x.rank() < 1) throw ShapeError("flatten: rank-0 tensor");
  const std::size_t batch = x.dim(0);
  Tensor out({batch, x.size() / batch}, x.values());
  return push(std::move(out), {xv.id}, [](Tape& t, std::size_t self) {
    const std::size_t xi = t.nodes_[self].inputs[0];
    const Tensor& g = t.out_grad(self);
    Tensor& gx = t.grad_of(xi);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
}

Var Tape::sum(Var xv) {
  const Tensor& x = value(xv);
  double s = 0.0;
  for (double v : x.data()) s += v;
  return push(Tensor::scalar(s), {xv.id}, [](Tape& t, std::size_t self) {
    const std::size_t xi = t.nodes_[self].inputs[0];
    const double g = t.out_grad(self)[0];
    Tensor& gx = t.grad_of(xi);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g;
  });
}

Var Tape::softmax_cross_entropy(Var lv, std::span<const int> labels) {
  const Tensor& logits = value(lv);
  require_rank(logits, 2, "softmax_cross_entropy", "logits");
  const std::size_t batch = logits.dim(0), classes = logits.dim(1);
  if (labels.size() != batch) {
    throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) +
                     " labels for batch of " + std::to_string(batch));
  }
  Tensor probs(logits.shape());
  double loss = 0.0;
  for (std::size_t s = 0; s < batch; ++s) {
    const int label = labels[s];
    if (label < 0 || static_cast<std::size_t>(label) >= classes) {
      throw InputError("softmax_cross_entropy: label " + std::to_string(label) +
                       " outside [0, " + std::to_string(classes) + ")");
    }
    const double* row = &logits.data()[s * classes];
    const double mx = *std::max_element(row, row + classes);
    double z = 0.0;
    for (std::size_t c = 0; c < classes; ++c) z += std::exp(row[c] - mx);
    const double lse = mx + std::log(z);
    for (std::size_t c = 0; c < classes; ++c) probs[s * classes + c] = std::exp(row[c] - lse);
    loss += lse - row[label];
  }
  loss /= static_cast<double>(batch);
  std::vector<int> label_copy(labels.begin(), labels.end());
  return push(Tensor::scalar(loss), {lv.id},
              [batch, classes, probs = std::move(probs),
               label_copy = std::move(label_copy)](Tape& t, std::size_t self) {
                const std::size_t li = t.nodes_[self].inputs[0];
                const double g = t.out_grad(self)[0] / static_cast<double>(batch);
                Tensor& gl = t.grad_of(li);
                for (std::size_t s = 0; s < batch; ++s) {
                  for (std::size_t c = 0; c < classes; ++c) {
                    const double onehot = static_cast<int>(c) == label_copy[s] ? 1.0 : 0.0;
                    gl[s * classes + c] += g * (probs[s * classes + c] - onehot);
                  }
                }
              });
}

std::map<ParamId, Tensor> Tape::backward(Var loss) {
  if (loss.id >= nodes_.size()) throw UsageError("backward: loss is not on this tape");
  if (nodes_[loss.id].value.size() != 1) {
    throw UsageError("backward: loss must be scalar, got shape " +
                     shape_str(nodes_[loss.id].value.shape()));
  }
  for (auto& n : nodes_) n.grad = Tensor();
  std::map<ParamId, Tensor> grads;
  if (!nodes_[loss.id].requires_grad) return grads;
  grad_of(loss.id)[0] = 1.0;
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || n.grad.empty()) continue;
    if (n.backward) n.backward(*this, i);
  }
  for (auto& n : nodes_) {
    if (!n.param) continue;
    Tensor g = n.grad.empty() ? Tensor(n.value.shape()) : std::move(n.grad);
    auto [it, inserted] = grads.emplace(*n.param, std::move(g));
    if (!inserted) {
      throw UsageError("backward: parameter " + std::to_string(n.param->index) +
                       " registered twice on one tape");
    }
  }
  return grads;
}

std::size_t Tape::activation_elements() const noexcept {
  std::size_t total = 0;
  for (const auto& n : nodes_) {
    if (n.data_dependent && !n.inputs.empty()) total += n.value.size();
  }
  return total;
}

}  // namespace sdp

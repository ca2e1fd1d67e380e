#include "pottsmg/tape.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <random>
#include <string>

#include "pottsmg/errors.hpp"
#include "pottsmg/kernels.hpp"
#include "pottsmg/potts.hpp"

namespace pmg::ad {

namespace {

template <typename Fn>
void for_each_sample(int batch, Fn&& fn) {
#pragma omp parallel for schedule(static) if (batch > 1)
  for (int b = 0; b < batch; ++b) fn(b);
}

kernels::Grid grid_of(const Shape& s) { return {s.rows, s.cols}; }

void require_same_shape(const Tape& t, Var a, Var b, const char* op) {
  if (!(t.shape(a) == t.shape(b))) throw ShapeError(std::string(op) + ": operand shapes differ");
}

void require_scalar(const Tape& t, Var v, const char* op) {
  if (t.shape(v).size() != 1) throw ShapeError(std::string(op) + ": expected a single-value node");
}

// Sums per-sample partial buffers (batch x n) into out in ascending sample order.
void reduce_partials(const std::vector<double>& partial, int batch, std::span<double> out) {
  const size_t n = out.size();
  for (int b = 0; b < batch; ++b) {
    for (size_t i = 0; i < n; ++i) out[i] += partial[b * n + i];
  }
}

}  // namespace

// ---------------------------------------------------------------------------

Var Tape::constant(Shape shape, std::vector<double> values) {
  if (static_cast<int>(values.size()) != shape.size()) throw ShapeError("constant: value count mismatch");
  Node n;
  n.shape = shape;
  n.value = std::move(values);
  nodes_.push_back(std::move(n));
  return static_cast<Var>(nodes_.size() - 1);
}

Var Tape::parameter(int param_index, std::span<const double> values) {
  Node n;
  n.shape = {1, 1, static_cast<int>(values.size())};
  n.value.assign(values.begin(), values.end());
  n.param = param_index;
  nodes_.push_back(std::move(n));
  return static_cast<Var>(nodes_.size() - 1);
}

Var Tape::record(Shape shape, std::vector<Var> inputs, std::function<void(Tape&, Var)> forward,
                 std::function<void(Tape&, Var)> backward) {
  Node n;
  n.shape = shape;
  n.value.assign(static_cast<size_t>(shape.size()), 0.0);
  n.inputs = std::move(inputs);
  n.forward = std::move(forward);
  n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  const Var self = static_cast<Var>(nodes_.size() - 1);
  nodes_[self].forward(*this, self);
  return self;
}

std::span<double> Tape::grad(Var v) {
  Node& n = nodes_.at(v);
  if (n.grad.empty()) n.grad.assign(n.value.size(), 0.0);
  return n.grad;
}

void Tape::backward(Var root, double seed) {
  if (nodes_.at(root).value.size() != 1) {
    throw UsageError("backward: the root must be a scalar, got " + std::to_string(nodes_[root].value.size()) +
                     " values");
  }
  grad(root)[0] += seed;
  for (Var v = root; v >= 0; --v) {
    Node& n = nodes_[v];
    if (n.grad.empty() || !n.backward) continue;
    n.backward(*this, v);
  }
}

bool Tape::replay() {
  bool identical = true;
  for (Var v = 0; v < size(); ++v) {
    Node& n = nodes_[v];
    if (!n.forward) continue;
    const std::vector<double> before = n.value;
    std::fill(n.value.begin(), n.value.end(), 0.0);
    n.forward(*this, v);
    if (std::memcmp(before.data(), nodes_[v].value.data(), before.size() * sizeof(double)) != 0) {
      identical = false;
    }
  }
  return identical;
}

void Tape::zero_grad() {
  for (Node& n : nodes_) n.grad.clear();
}

// ---------------------------------------------------------------------------

Var conv_sum(Tape& t, std::span<const Var> xs, std::span<const Var> ks) {
  return linear_stage(t, xs, ks, kNone, kNone, 0.0, 1.0);
}

Var conv(Tape& t, Var x, Var k) {
  const Var xs[1] = {x};
  const Var ks[1] = {k};
  return conv_sum(t, xs, ks);
}

Var linear_stage(Tape& t, std::span<const Var> xs, std::span<const Var> ks, Var bias_field, Var bias_scalar,
                 double mean_coeff, double step) {
  if (xs.empty()) throw ShapeError("linear_stage: no inputs");
  if (xs.size() != ks.size()) {
    throw ShapeError("linear_stage: " + std::to_string(xs.size()) + " inputs but " + std::to_string(ks.size()) +
                     " kernels");
  }
  const Shape shape = t.shape(xs[0]);
  for (Var x : xs) require_same_shape(t, x, xs[0], "linear_stage");
  std::vector<int> radii;
  for (Var k : ks) radii.push_back(kernels::radius_from_taps(t.value(k).size()));
  if (bias_field != kNone) require_same_shape(t, bias_field, xs[0], "linear_stage bias");
  if (bias_scalar != kNone) require_scalar(t, bias_scalar, "linear_stage bias");

  const int count = static_cast<int>(xs.size());
  std::vector<Var> inputs(xs.begin(), xs.end());
  inputs.insert(inputs.end(), ks.begin(), ks.end());
  inputs.push_back(bias_field);
  inputs.push_back(bias_scalar);

  auto forward = [count, radii, mean_coeff, step](Tape& tp, Var self) {
    const auto& in = tp.node(self).inputs;
    const Shape s = tp.shape(self);
    const int plane = s.plane();
    const Var bf = in[2 * count];
    const Var bs = in[2 * count + 1];
    const double scalar = bs != kNone ? tp.value(bs)[0] : 0.0;
    std::span<double> out = tp.mutable_value(self);
    for_each_sample(s.batch, [&](int b) {
      std::vector<double> conv_acc(plane, 0.0);
      std::vector<double> mean_acc(plane, 0.0);
      for (int q = 0; q < count; ++q) {
        auto x = tp.value(in[q]).subspan(static_cast<size_t>(b) * plane, plane);
        kernels::conv2d_accumulate(x, grid_of(s), tp.value(in[count + q]), radii[q], conv_acc);
        for (int i = 0; i < plane; ++i) mean_acc[i] += x[i];
      }
      double* o = out.data() + static_cast<size_t>(b) * plane;
      const double* bias = bf != kNone ? tp.value(bf).data() + static_cast<size_t>(b) * plane : nullptr;
      for (int i = 0; i < plane; ++i) {
        double drive = conv_acc[i];
        if (bias) drive += bias[i];
        drive += scalar;
        o[i] = mean_coeff * mean_acc[i] + step * drive;
      }
    });
  };

  auto backward = [count, radii, mean_coeff, step](Tape& tp, Var self) {
    const auto in = tp.node(self).inputs;
    const Shape s = tp.shape(self);
    const int plane = s.plane();
    std::vector<std::span<double>> gx(count);
    for (int q = 0; q < count; ++q) gx[q] = tp.grad(in[q]);
    std::vector<std::span<double>> gk(count);
    std::vector<std::vector<double>> partial_k(count);
    for (int q = 0; q < count; ++q) {
      gk[q] = tp.grad(in[count + q]);
      partial_k[q].assign(static_cast<size_t>(s.batch) * gk[q].size(), 0.0);
    }
    const Var bf = in[2 * count];
    const Var bs = in[2 * count + 1];
    std::span<double> gbf = bf != kNone ? tp.grad(bf) : std::span<double>();
    std::vector<double> partial_bs(s.batch, 0.0);
    std::span<const double> g = tp.node(self).grad;
    // Inputs may repeat (the same node feeding two slots); each sample's
    // slice is then touched by one thread only, so the loop stays race-free.
    for_each_sample(s.batch, [&](int b) {
      const size_t off = static_cast<size_t>(b) * plane;
      auto gb = g.subspan(off, plane);
      std::vector<double> scaled(plane);
      double total = 0.0;
      for (int i = 0; i < plane; ++i) {
        scaled[i] = step * gb[i];
        total += gb[i];
      }
      for (int q = 0; q < count; ++q) {
        auto gxq = gx[q].subspan(off, plane);
        for (int i = 0; i < plane; ++i) gxq[i] += mean_coeff * gb[i];
        kernels::conv2d_adjoint_input(scaled, grid_of(s), tp.value(in[count + q]), radii[q], gxq);
        const size_t taps = gk[q].size();
        kernels::conv2d_adjoint_kernel(scaled, tp.value(in[q]).subspan(off, plane), grid_of(s), radii[q],
                                       std::span<double>(partial_k[q]).subspan(b * taps, taps));
      }
      if (!gbf.empty()) {
        auto gbb = gbf.subspan(off, plane);
        for (int i = 0; i < plane; ++i) gbb[i] += scaled[i];
      }
      partial_bs[b] = step * total;
    });
    for (int q = 0; q < count; ++q) reduce_partials(partial_k[q], s.batch, gk[q]);
    if (bs != kNone) {
      auto g_scalar = tp.grad(bs);
      for (int b = 0; b < s.batch; ++b) g_scalar[0] += partial_bs[b];
    }
  };

  return t.record(shape, std::move(inputs), forward, backward);
}

Var weighted_sum(Tape& t, std::span<const Var> xs, std::span<const double> coeffs) {
  if (xs.empty() || xs.size() != coeffs.size()) throw ShapeError("weighted_sum: operand/coefficient mismatch");
  for (Var x : xs) require_same_shape(t, x, xs[0], "weighted_sum");
  std::vector<double> c(coeffs.begin(), coeffs.end());
  auto forward = [c](Tape& tp, Var self) {
    const auto& in = tp.node(self).inputs;
    std::span<double> out = tp.mutable_value(self);
    for (size_t q = 0; q < in.size(); ++q) {
      auto x = tp.value(in[q]);
      for (size_t i = 0; i < out.size(); ++i) out[i] += c[q] * x[i];
    }
  };
  auto backward = [c](Tape& tp, Var self) {
    const auto in = tp.node(self).inputs;
    for (size_t q = 0; q < in.size(); ++q) {
      auto gx = tp.grad(in[q]);
      auto g = std::span<const double>(tp.node(self).grad);
      for (size_t i = 0; i < gx.size(); ++i) gx[i] += c[q] * g[i];
    }
  };
  return t.record(t.shape(xs[0]), std::vector<Var>(xs.begin(), xs.end()), forward, backward);
}

Var add(Tape& t, Var a, Var b) {
  const Var xs[2] = {a, b};
  const double c[2] = {1.0, 1.0};
  return weighted_sum(t, xs, c);
}

Var scale(Tape& t, Var a, double s) {
  const Var xs[1] = {a};
  const double c[1] = {s};
  return weighted_sum(t, xs, c);
}

Var average(Tape& t, std::span<const Var> xs) {
  std::vector<double> c(xs.size(), 1.0 / static_cast<double>(xs.size()));
  return weighted_sum(t, xs, c);
}

Var add_scalar(Tape& t, Var x, Var b) {
  require_scalar(t, b, "add_scalar");
  auto forward = [](Tape& tp, Var self) {
    const auto& in = tp.node(self).inputs;
    auto x = tp.value(in[0]);
    const double s = tp.value(in[1])[0];
    std::span<double> out = tp.mutable_value(self);
    for (size_t i = 0; i < out.size(); ++i) out[i] = x[i] + s;
  };
  auto backward = [](Tape& tp, Var self) {
    const auto in = tp.node(self).inputs;
    auto gx = tp.grad(in[0]);
    auto g = std::span<const double>(tp.node(self).grad);
    double total = 0.0;
    for (size_t i = 0; i < gx.size(); ++i) {
      gx[i] += g[i];
      total += g[i];
    }
    tp.grad(in[1])[0] += total;
  };
  return t.record(t.shape(x), {x, b}, forward, backward);
}

Var lerp(Tape& t, Var w, Var a, Var b) {
  require_scalar(t, w, "lerp");
  require_same_shape(t, a, b, "lerp");
  auto forward = [](Tape& tp, Var self) {
    const auto& in = tp.node(self).inputs;
    const double wv = tp.value(in[0])[0];
    auto a = tp.value(in[1]);
    auto b = tp.value(in[2]);
    std::span<double> out = tp.mutable_value(self);
    for (size_t i = 0; i < out.size(); ++i) out[i] = wv * a[i] + (1.0 - wv) * b[i];
  };
  auto backward = [](Tape& tp, Var self) {
    const auto in = tp.node(self).inputs;
    const double wv = tp.value(in[0])[0];
    auto a = tp.value(in[1]);
    auto b = tp.value(in[2]);
    auto ga = tp.grad(in[1]);
    auto gb = tp.grad(in[2]);
    auto g = std::span<const double>(tp.node(self).grad);
    double gw = 0.0;
    for (size_t i = 0; i < g.size(); ++i) {
      ga[i] += wv * g[i];
      gb[i] += (1.0 - wv) * g[i];
      gw += g[i] * (a[i] - b[i]);
    }
    tp.grad(in[0])[0] += gw;
  };
  return t.record(t.shape(a), {w, a, b}, forward, backward);
}

Var sigmoid(Tape& t, Var x) {
  auto forward = [](Tape& tp, Var self) {
    auto x = tp.value(tp.node(self).inputs[0]);
    std::span<double> out = tp.mutable_value(self);
    for (size_t i = 0; i < out.size(); ++i) out[i] = clamp_open_unit(pmg::sigmoid(x[i]));
  };
  auto backward = [](Tape& tp, Var self) {
    const Var in = tp.node(self).inputs[0];
    auto p = tp.value(self);
    auto g = std::span<const double>(tp.node(self).grad);
    auto gx = tp.grad(in);
    for (size_t i = 0; i < gx.size(); ++i) gx[i] += g[i] * p[i] * (1.0 - p[i]);
  };
  return t.record(t.shape(x), {x}, forward, backward);
}

// ---------------------------------------------------------------------------

Var activation_logit(Tape& t, Var u_bar, const ActivationSpec& spec) {
  if (spec.iterations < 1) throw ParameterError("activation needs at least one iteration");
  if (!(spec.c1 > 0.0)) throw ParameterError("activation C1 must be > 0");
  const Shape shape = t.shape(u_bar);
  // iterates[k] holds p^k for k = 0..iterations-1 (p^0 = u_bar).
  auto iterates = std::make_shared<std::vector<std::vector<double>>>();
  const double inv_eps = 1.0 / spec.epsilon;
  const double inv_c1dt = 1.0 / (spec.c1 * spec.dt);
  const double c2 = spec.c2;
  const int iters = spec.iterations;
  const Kernel gauss = spec.gaussian;

  auto forward = [=](Tape& tp, Var self) {
    auto ub = tp.value(tp.node(self).inputs[0]);
    const Shape s = tp.shape(self);
    const int plane = s.plane();
    iterates->assign(iters, std::vector<double>(ub.size()));
    (*iterates)[0].assign(ub.begin(), ub.end());
    std::span<double> out = tp.mutable_value(self);
    for_each_sample(s.batch, [&](int b) {
      const size_t off = static_cast<size_t>(b) * plane;
      std::vector<double> length(plane);
      std::vector<double> flipped(plane);
      for (int k = 0; k < iters; ++k) {
        const double* p = (*iterates)[k].data() + off;
        if (c2 != 0.0) {
          for (int i = 0; i < plane; ++i) flipped[i] = 1.0 - 2.0 * p[i];
          std::fill(length.begin(), length.end(), 0.0);
          kernels::conv2d_accumulate(flipped, grid_of(s), gauss.weights, gauss.radius, length);
        }
        double* dst = k + 1 < iters ? (*iterates)[k + 1].data() + off : out.data() + off;
        for (int i = 0; i < plane; ++i) {
          double z = (p[i] - ub[off + i]) * inv_c1dt;
          if (c2 != 0.0) z += c2 * length[i];
          const double x = -inv_eps * z;
          dst[i] = k + 1 < iters ? clamp_open_unit(pmg::sigmoid(x)) : x;
        }
      }
    });
  };

  auto backward = [=](Tape& tp, Var self) {
    const Var in = tp.node(self).inputs[0];
    const Shape s = tp.shape(self);
    const int plane = s.plane();
    auto g_ubar = tp.grad(in);
    auto g_out = std::span<const double>(tp.node(self).grad);
    const double a = inv_eps * inv_c1dt;
    for_each_sample(s.batch, [&](int b) {
      const size_t off = static_cast<size_t>(b) * plane;
      std::vector<double> gx(g_out.begin() + off, g_out.begin() + off + plane);
      std::vector<double> gp(plane);
      for (int k = iters - 1; k >= 0; --k) {
        for (int i = 0; i < plane; ++i) {
          g_ubar[off + i] += a * gx[i];
          gp[i] = -a * gx[i];
        }
        if (c2 != 0.0) {
          std::vector<double> back(plane, 0.0);
          kernels::conv2d_adjoint_input(gx, grid_of(s), gauss.weights, gauss.radius, back);
          for (int i = 0; i < plane; ++i) gp[i] += 2.0 * c2 * inv_eps * back[i];
        }
        if (k == 0) {
          for (int i = 0; i < plane; ++i) g_ubar[off + i] += gp[i];
        } else {
          const double* p = (*iterates)[k].data() + off;
          for (int i = 0; i < plane; ++i) gx[i] = gp[i] * p[i] * (1.0 - p[i]);
        }
      }
    });
  };

  return t.record(shape, {u_bar}, forward, backward);
}

Var activation(Tape& t, Var u_bar, const ActivationSpec& spec) {
  return sigmoid(t, activation_logit(t, u_bar, spec));
}

// ---------------------------------------------------------------------------

Var max_pool(Tape& t, Var x) {
  const Shape in = t.shape(x);
  if (in.rows % 2 != 0 || in.cols % 2 != 0) throw ShapeError("max_pool: odd grid");
  const Shape out{in.batch, in.rows / 2, in.cols / 2};
  auto argmax = std::make_shared<std::vector<int>>(static_cast<size_t>(out.size()));
  auto forward = [argmax, in, out](Tape& tp, Var self) {
    auto x = tp.value(tp.node(self).inputs[0]);
    auto y = tp.mutable_value(self);
    for_each_sample(in.batch, [&](int b) {
      kernels::max_pool(x.subspan(static_cast<size_t>(b) * in.plane(), in.plane()), grid_of(in),
                        y.subspan(static_cast<size_t>(b) * out.plane(), out.plane()),
                        std::span<int>(*argmax).subspan(static_cast<size_t>(b) * out.plane(), out.plane()));
    });
  };
  auto backward = [argmax, in, out](Tape& tp, Var self) {
    auto gx = tp.grad(tp.node(self).inputs[0]);
    auto g = std::span<const double>(tp.node(self).grad);
    for_each_sample(in.batch, [&](int b) {
      for (int i = 0; i < out.plane(); ++i) {
        const size_t o = static_cast<size_t>(b) * out.plane() + i;
        gx[static_cast<size_t>(b) * in.plane() + (*argmax)[o]] += g[o];
      }
    });
  };
  return t.record(out, {x}, forward, backward);
}

Var avg_pool(Tape& t, Var x) {
  const Shape in = t.shape(x);
  if (in.rows % 2 != 0 || in.cols % 2 != 0) throw ShapeError("avg_pool: odd grid");
  const Shape out{in.batch, in.rows / 2, in.cols / 2};
  auto forward = [in, out](Tape& tp, Var self) {
    auto x = tp.value(tp.node(self).inputs[0]);
    auto y = tp.mutable_value(self);
    for_each_sample(in.batch, [&](int b) {
      kernels::avg_pool(x.subspan(static_cast<size_t>(b) * in.plane(), in.plane()), grid_of(in),
                        y.subspan(static_cast<size_t>(b) * out.plane(), out.plane()));
    });
  };
  auto backward = [in, out](Tape& tp, Var self) {
    auto gx = tp.grad(tp.node(self).inputs[0]);
    auto g = std::span<const double>(tp.node(self).grad);
    for_each_sample(in.batch, [&](int b) {
      for (int r = 0; r < in.rows; ++r) {
        for (int c = 0; c < in.cols; ++c) {
          gx[static_cast<size_t>(b) * in.plane() + r * in.cols + c] +=
              0.25 * g[static_cast<size_t>(b) * out.plane() + (r / 2) * out.cols + c / 2];
        }
      }
    });
  };
  return t.record(out, {x}, forward, backward);
}

Var upsample(Tape& t, Var x) {
  const Shape in = t.shape(x);
  const Shape out{in.batch, in.rows * 2, in.cols * 2};
  auto forward = [in, out](Tape& tp, Var self) {
    auto x = tp.value(tp.node(self).inputs[0]);
    auto y = tp.mutable_value(self);
    for_each_sample(in.batch, [&](int b) {
      kernels::upsample_replicate(x.subspan(static_cast<size_t>(b) * in.plane(), in.plane()), grid_of(in),
                                  y.subspan(static_cast<size_t>(b) * out.plane(), out.plane()));
    });
  };
  auto backward = [in, out](Tape& tp, Var self) {
    auto gx = tp.grad(tp.node(self).inputs[0]);
    auto g = std::span<const double>(tp.node(self).grad);
    for_each_sample(in.batch, [&](int b) {
      kernels::upsample_adjoint(g.subspan(static_cast<size_t>(b) * out.plane(), out.plane()), grid_of(in),
                                gx.subspan(static_cast<size_t>(b) * in.plane(), in.plane()));
    });
  };
  return t.record(out, {x}, forward, backward);
}

// ---------------------------------------------------------------------------

Var batch_norm(Tape& t, Var x, Var gamma, Var beta, std::span<double> running, const BatchNormOptions& opt) {
  require_scalar(t, gamma, "batch_norm gamma");
  require_scalar(t, beta, "batch_norm beta");
  if (!running.empty() && running.size() != 2) throw ShapeError("batch_norm: running stats need (mean, var)");
  if (!opt.training && running.empty()) throw UsageError("batch_norm: eval mode needs running statistics");
  // stats = (mean, inverse std) used by backward.
  auto stats = std::make_shared<std::array<double, 2>>();
  const bool training = opt.training;
  const double eps = opt.eps;
  std::vector<double> frozen;
  if (!training) frozen.assign(running.begin(), running.end());

  auto forward = [stats, training, eps, frozen](Tape& tp, Var self) {
    const auto& in = tp.node(self).inputs;
    auto xv = tp.value(in[0]);
    const double g = tp.value(in[1])[0];
    const double bta = tp.value(in[2])[0];
    const auto n = static_cast<double>(xv.size());
    double mu = 0.0;
    double var = 0.0;
    if (training) {
      for (double v : xv) mu += v;
      mu /= n;
      for (double v : xv) var += (v - mu) * (v - mu);
      var /= n;
    } else {
      mu = frozen[0];
      var = frozen[1];
    }
    const double inv_std = 1.0 / std::sqrt(var + eps);
    (*stats)[0] = mu;
    (*stats)[1] = inv_std;
    auto out = tp.mutable_value(self);
    for (size_t i = 0; i < out.size(); ++i) out[i] = g * ((xv[i] - mu) * inv_std) + bta;
  };
  auto backward = [stats, training](Tape& tp, Var self) {
    const auto in = tp.node(self).inputs;
    auto xv = tp.value(in[0]);
    const double g = tp.value(in[1])[0];
    auto go = std::span<const double>(tp.node(self).grad);
    const double mu = (*stats)[0];
    const double inv_std = (*stats)[1];
    const auto n = static_cast<double>(xv.size());
    double sum_g = 0.0;
    double sum_gx = 0.0;
    for (size_t i = 0; i < xv.size(); ++i) {
      const double xhat = (xv[i] - mu) * inv_std;
      sum_g += go[i];
      sum_gx += go[i] * xhat;
    }
    tp.grad(in[1])[0] += sum_gx;
    tp.grad(in[2])[0] += sum_g;
    auto gx = tp.grad(in[0]);
    if (training) {
      const double mean_g = sum_g / n;
      const double mean_gx = sum_gx / n;
      for (size_t i = 0; i < xv.size(); ++i) {
        const double xhat = (xv[i] - mu) * inv_std;
        gx[i] += g * inv_std * (go[i] - mean_g - xhat * mean_gx);
      }
    } else {
      for (size_t i = 0; i < xv.size(); ++i) gx[i] += g * inv_std * go[i];
    }
  };
  const Var out = t.record(t.shape(x), {x, gamma, beta}, forward, backward);
  if (training && !running.empty()) {
    auto xv = t.value(x);
    const auto n = static_cast<double>(xv.size());
    const double mu = (*stats)[0];
    double var = 0.0;
    for (double v : xv) var += (v - mu) * (v - mu);
    const double unbiased = n > 1 ? var / (n - 1.0) : 0.0;
    running[0] = (1.0 - opt.momentum) * running[0] + opt.momentum * mu;
    running[1] = (1.0 - opt.momentum) * running[1] + opt.momentum * unbiased;
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace {

constexpr double kProbFloor = 1e-7;

void require_target(const Tape& t, Var v, std::span<const double> target, const char* op) {
  if (target.size() != static_cast<size_t>(t.shape(v).size())) {
    throw ShapeError(std::string(op) + ": target size mismatch");
  }
}

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

}  // namespace

Var cross_entropy(Tape& t, Var p, std::span<const double> target) {
  require_target(t, p, target, "cross_entropy");
  std::vector<double> tv(target.begin(), target.end());
  auto forward = [tv](Tape& tp, Var self) {
    auto pv = tp.value(tp.node(self).inputs[0]);
    double total = 0.0;
    for (size_t i = 0; i < pv.size(); ++i) {
      const double q = std::clamp(pv[i], kProbFloor, 1.0 - kProbFloor);
      total -= tv[i] * std::log(q) + (1.0 - tv[i]) * std::log(1.0 - q);
    }
    tp.mutable_value(self)[0] = total / static_cast<double>(pv.size());
  };
  auto backward = [tv](Tape& tp, Var self) {
    const Var in = tp.node(self).inputs[0];
    auto pv = tp.value(in);
    auto gp = tp.grad(in);
    const double g = tp.node(self).grad[0] / static_cast<double>(pv.size());
    for (size_t i = 0; i < pv.size(); ++i) {
      if (pv[i] < kProbFloor || pv[i] > 1.0 - kProbFloor) continue;
      gp[i] += g * (-tv[i] / pv[i] + (1.0 - tv[i]) / (1.0 - pv[i]));
    }
  };
  return t.record({1, 1, 1}, {p}, forward, backward);
}

Var cross_entropy_logits(Tape& t, Var x, std::span<const double> target) {
  require_target(t, x, target, "cross_entropy_logits");
  std::vector<double> tv(target.begin(), target.end());
  auto forward = [tv](Tape& tp, Var self) {
    auto xv = tp.value(tp.node(self).inputs[0]);
    double total = 0.0;
    for (size_t i = 0; i < xv.size(); ++i) total += softplus(xv[i]) - tv[i] * xv[i];
    tp.mutable_value(self)[0] = total / static_cast<double>(xv.size());
  };
  auto backward = [tv](Tape& tp, Var self) {
    const Var in = tp.node(self).inputs[0];
    auto xv = tp.value(in);
    auto gx = tp.grad(in);
    const double g = tp.node(self).grad[0] / static_cast<double>(xv.size());
    for (size_t i = 0; i < xv.size(); ++i) gx[i] += g * (pmg::sigmoid(xv[i]) - tv[i]);
  };
  return t.record({1, 1, 1}, {x}, forward, backward);
}

Var sum(Tape& t, Var x) {
  auto forward = [](Tape& tp, Var self) {
    auto xv = tp.value(tp.node(self).inputs[0]);
    double total = 0.0;
    for (double v : xv) total += v;
    tp.mutable_value(self)[0] = total;
  };
  auto backward = [](Tape& tp, Var self) {
    const Var in = tp.node(self).inputs[0];
    auto gx = tp.grad(in);
    const double g = tp.node(self).grad[0];
    for (double& v : gx) v += g;
  };
  return t.record({1, 1, 1}, {x}, forward, backward);
}

Var mean(Tape& t, Var x) { return scale(t, sum(t, x), 1.0 / static_cast<double>(t.shape(x).size())); }

// ---------------------------------------------------------------------------

FdCheckResult fd_check(const std::function<double(std::span<const double>)>& loss, std::span<const double> theta,
                       std::span<const double> analytic, double step, int samples, std::uint64_t seed) {
  if (!(step >= 1e-7 && step <= 1e-3)) {
    throw UsageError("fd_check: step " + std::to_string(step) + " outside [1e-7, 1e-3]");
  }
  if (theta.size() != analytic.size()) throw UsageError("fd_check: gradient size mismatch");
  if (theta.empty() || samples < 1) return {};
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<size_t> pick(0, theta.size() - 1);
  std::vector<double> work(theta.begin(), theta.end());
  FdCheckResult result;
  for (int s = 0; s < samples; ++s) {
    const size_t i = pick(rng);
    const double saved = work[i];
    work[i] = saved + step;
    const double up = loss(work);
    work[i] = saved - step;
    const double down = loss(work);
    work[i] = saved;
    const double fd = (up - down) / (2.0 * step);
    const double err = std::abs(fd - analytic[i]) / std::max(std::abs(analytic[i]), 1e-8);
    result.max_relative_error = std::max(result.max_relative_error, err);
    ++result.samples;
  }
  return result;
}

}  // namespace pmg::ad

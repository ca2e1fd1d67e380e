#include "pottsmg/mgnet.hpp"

#include <algorithm>
#include <string>

#include "pottsmg/errors.hpp"
#include "pottsmg/kernels.hpp"

namespace pmg {

void check_image(const Image& f) {
  if (f.channels.size() != 3) {
    throw InputError("expected a 3-channel image, got " + std::to_string(f.channels.size()) + " channels");
  }
  for (const Field& c : f.channels) {
    if (c.rows != f.rows() || c.cols != f.cols() || c.level != 1) {
      throw InputError("image channels differ in size or level");
    }
  }
}

double kappa(const NetConfig& cfg) {
  double total = 1.0;
  for (int j = 1; j <= cfg.levels; ++j) {
    total += cfg.L(j) * cfg.c(j) / ((1 << (j - 1)) * static_cast<double>(cfg.c(j)));
  }
  for (int j = 1; j <= cfg.levels - 1; ++j) {
    total += cfg.L(j) * cfg.c(j) / ((1 << j) * static_cast<double>(cfg.c(j)));
  }
  return total;
}

double left_gamma(const NetConfig& cfg, int j) {
  if (cfg.variant == Variant::SegNet) return cfg.c(j);
  return static_cast<double>(1 << (j - 1)) * cfg.c(j);
}

double right_gamma(const NetConfig& cfg, int j) {
  switch (cfg.variant) {
    case Variant::SegNet: return cfg.c(j);
    case Variant::UNetSkip: return static_cast<double>(1 << (j - 1)) * cfg.c(j);
    case Variant::PottsMG: break;
  }
  return static_cast<double>(1 << j) * cfg.c(j);
}

PottsParams potts_params(const NetConfig& cfg) {
  PottsParams p;
  p.epsilon = cfg.epsilon;
  p.eta = cfg.eta;
  p.sigma = cfg.sigma;
  p.dt = cfg.dt;
  p.gaussian_radius = cfg.gaussian_radius;
  return p;
}

double activation_c1(const NetConfig& cfg) { return cfg.kappa_c1 ? 1.0 / kappa(cfg) : 1.0; }

Field block_linear(const std::vector<Field>& inputs, const std::vector<Kernel>& kernels, const Bias& bias,
                   double gamma, double dt) {
  if (inputs.empty()) throw ShapeError("block: no inputs");
  if (inputs.size() != kernels.size()) {
    throw ShapeError("block: " + std::to_string(inputs.size()) + " inputs but " + std::to_string(kernels.size()) +
                     " kernels");
  }
  const Field& first = inputs[0];
  for (const Field& x : inputs) {
    if (x.level != first.level || x.rows != first.rows || x.cols != first.cols) {
      throw ShapeError("block: inputs live on different levels");
    }
  }
  if (bias.field && (bias.field->rows != first.rows || bias.field->cols != first.cols)) {
    throw ShapeError("block: bias field does not match the input level");
  }
  Field mean_acc = Field::like(first);
  Field drive = Field::like(first);
  for (size_t s = 0; s < inputs.size(); ++s) {
    const Field conv = conv2d(inputs[s], kernels[s]);
    for (int i = 0; i < first.size(); ++i) {
      mean_acc.values[i] += inputs[s].values[i];
      drive.values[i] += conv.values[i];
    }
  }
  const double inv_c = 1.0 / static_cast<double>(inputs.size());
  const double step = gamma * dt;
  Field out = Field::like(first);
  for (int i = 0; i < first.size(); ++i) {
    double d = drive.values[i];
    if (bias.field) d += bias.field->values[i];
    d += bias.scalar;
    out.values[i] = inv_c * mean_acc.values[i] + step * d;
  }
  return out;
}

Field block_step(const std::vector<Field>& inputs, const std::vector<Kernel>& kernels, const Bias& bias,
                 double gamma, const NetConfig& cfg) {
  const Field u_bar = block_linear(inputs, kernels, bias, gamma, cfg.dt);
  return activation_fixed_point(u_bar, activation_c1(cfg), 0.0, potts_params(cfg), cfg.act_iters);
}

namespace {

Kernel kernel_of(const ControlParams& theta, int index) {
  const auto& w = theta.tensors()[index].data;
  return Kernel(kernels::radius_from_taps(w.size()), w);
}

}  // namespace

Bias bias_eval(const ControlParams& theta, const Image& f, int n, int j, int l, int k, bool right) {
  check_image(f);
  const NetConfig& cfg = theta.config();
  if (j < 1 || j > cfg.levels || (right && j == cfg.levels) || l < 1 || l > cfg.L(j) || k < 1 || k > cfg.c(j)) {
    throw LevelError("bias_eval: substep (" + std::to_string(j) + "," + std::to_string(l) + "," +
                     std::to_string(k) + ") out of range");
  }
  const BlockLayout& b = theta.block(n);
  Bias out;
  if (l > 1) {
    const int idx = right ? b.right_bias_scalars[j - 1][l - 1][k - 1] : b.left_bias_scalars[j - 1][l - 1][k - 1];
    out.scalar = theta.tensors()[idx].data[0];
    return out;
  }
  const Hierarchy hier = build_hierarchy(f.rows(), f.cols(), cfg.levels);
  const auto& idx = right ? b.right_bias_kernels[j - 1][k - 1] : b.left_bias_kernels[j - 1][k - 1];
  Field acc(j, hier.level(j).rows, hier.level(j).cols);
  for (int s = 0; s < 3; ++s) {
    Field fs = f.channels[s];
    while (fs.level < j) fs = downsample(hier, fs, PoolMode::Average);
    const Field c = conv2d(fs, kernel_of(theta, idx[s]));
    for (int i = 0; i < acc.size(); ++i) acc.values[i] += c.values[i];
  }
  out.field = std::move(acc);
  return out;
}

BatchInput make_batch(const std::vector<const Image*>& images) {
  BatchInput in;
  if (images.empty()) throw InputError("empty batch");
  for (const Image* img : images) check_image(*img);
  in.batch = static_cast<int>(images.size());
  in.rows = images[0]->rows();
  in.cols = images[0]->cols();
  in.channels.assign(3, {});
  for (int s = 0; s < 3; ++s) in.channels[s].reserve(static_cast<size_t>(in.batch) * in.rows * in.cols);
  for (const Image* img : images) {
    if (img->rows() != in.rows || img->cols() != in.cols) throw InputError("batch images differ in size");
    for (int s = 0; s < 3; ++s) {
      const auto& v = img->channels[s].values;
      in.channels[s].insert(in.channels[s].end(), v.begin(), v.end());
    }
  }
  return in;
}

// ---------------------------------------------------------------------------

namespace {

using ad::Var;
using ad::kNone;

class Recorder {
 public:
  Recorder(ad::Tape& tape, const ControlParams& theta, const ForwardOptions& opt)
      : t_(tape), theta_(theta), cfg_(theta.config()), opt_(opt), leaves_(theta.tensors().size(), kNone) {
    inner_.epsilon = cfg_.epsilon;
    inner_.dt = cfg_.dt;
    inner_.c1 = activation_c1(cfg_);
    inner_.c2 = 0.0;
    inner_.iterations = cfg_.act_iters;
    final_ = inner_;
    final_.c2 = cfg_.eta;
    final_.gaussian = make_gaussian(cfg_.sigma, cfg_.gaussian_radius);
  }

  TapeForward run(const BatchInput& in) {
    cfg_.validate_image(in.rows, in.cols);
    if (in.channels.size() != 3) throw InputError("expected 3 input channels");
    // Image pyramid, average-pooled, as constants.
    pyramid_.assign(cfg_.levels + 1, {});
    for (int s = 0; s < 3; ++s) {
      pyramid_[1].push_back(t_.constant({in.batch, in.rows, in.cols}, in.channels[s]));
    }
    for (int j = 2; j <= cfg_.levels; ++j) {
      for (int s = 0; s < 3; ++s) pyramid_[j].push_back(ad::avg_pool(t_, pyramid_[j - 1][s]));
    }
    std::vector<Var> w0;
    for (int idx : theta_.init_kernels()) w0.push_back(leaf(idx));
    TapeForward out;
    Var u = ad::conv_sum(t_, pyramid_[1], w0);
    for (int n = 0; n < cfg_.time_steps; ++n) {
      const auto [prob, logit] = vcycle(n, u);
      u = prob;
      out.logit = logit;
    }
    out.output = u;
    out.leaves = leaves_;
    return out;
  }

 private:
  Var leaf(int idx) {
    if (leaves_[idx] == kNone) leaves_[idx] = t_.parameter(idx, theta_.tensors()[idx].data);
    return leaves_[idx];
  }

  std::vector<Var> leaves(const std::vector<int>& idx) {
    std::vector<Var> out;
    out.reserve(idx.size());
    for (int i : idx) out.push_back(leaf(i));
    return out;
  }

  std::string where(int n, int j, int l, int k) const {
    return "(n=" + std::to_string(n) + ", j=" + std::to_string(j) + ", l=" + std::to_string(l) +
           ", k=" + std::to_string(k) + ")";
  }

  Var substep(int n, Branch branch, int j, int l, int k, const std::vector<Var>& inputs,
              const std::vector<int>& kernel_idx, double gamma, const BlockLayout& b) {
    if (inputs.size() != kernel_idx.size()) {
      throw ShapeError("substep " + where(n, j, l, k) + ": fan-in " + std::to_string(inputs.size()) + " but " +
                       std::to_string(kernel_idx.size()) + " kernels");
    }
    const bool right = branch == Branch::Right;
    Var bias_field = kNone;
    Var bias_scalar = kNone;
    if (l == 1) {
      const auto& idx = right ? b.right_bias_kernels[j - 1][k - 1] : b.left_bias_kernels[j - 1][k - 1];
      bias_field = ad::conv_sum(t_, pyramid_[j], leaves(idx));
    } else {
      bias_scalar = leaf(right ? b.right_bias_scalars[j - 1][l - 1][k - 1] : b.left_bias_scalars[j - 1][l - 1][k - 1]);
    }
    const std::vector<Var> ks = leaves(kernel_idx);
    const Var linear = ad::linear_stage(t_, inputs, ks, bias_field, bias_scalar,
                                        1.0 / static_cast<double>(inputs.size()), gamma * cfg_.dt);
    if (opt_.trace) {
      opt_.trace->push_back({n, j, l, k, branch, gamma, static_cast<int>(inputs.size()), inputs, ks, bias_field,
                             bias_scalar, linear});
    }
    Var x = linear;
    if (cfg_.batchnorm) {
      const BatchNormSlot& slot = right ? b.right_bn[j - 1][l - 1][k - 1] : b.left_bn[j - 1][l - 1][k - 1];
      x = batch_norm(x, slot);
    }
    return ad::activation(t_, x, inner_);
  }

  Var batch_norm(Var x, const BatchNormSlot& slot) {
    ad::BatchNormOptions bn;
    bn.training = opt_.training;
    std::span<double> running;
    std::vector<double> scratch;
    if (opt_.training) {
      if (opt_.running_sink) running = opt_.running_sink->tensors()[slot.running].data;
    } else {
      scratch = theta_.tensors()[slot.running].data;
      running = scratch;
    }
    return ad::batch_norm(t_, x, leaf(slot.gamma), leaf(slot.beta), running, bn);
  }

  std::vector<Var> pool_all(const std::vector<Var>& xs) {
    std::vector<Var> out;
    for (Var x : xs) out.push_back(cfg_.pool == PoolMode::Max ? ad::max_pool(t_, x) : ad::avg_pool(t_, x));
    return out;
  }

  std::vector<Var> upsample_all(const std::vector<Var>& xs) {
    std::vector<Var> out;
    for (Var x : xs) out.push_back(ad::upsample(t_, x));
    return out;
  }

  std::pair<Var, Var> vcycle(int n, Var u) {
    const BlockLayout& b = theta_.block(n);
    const int J = cfg_.levels;
    std::vector<std::vector<Var>> left(J + 1);
    std::vector<Var> cur{u};
    for (int j = 1; j <= J; ++j) {
      if (j > 1) cur = pool_all(cur);
      const double gamma = left_gamma(cfg_, j);
      for (int l = 1; l <= cfg_.L(j); ++l) {
        std::vector<Var> next;
        for (int k = 1; k <= cfg_.c(j); ++k) {
          next.push_back(substep(n, Branch::Left, j, l, k, cur, b.left_kernels[j - 1][l - 1][k - 1], gamma, b));
        }
        cur = std::move(next);
      }
      left[j] = cur;
    }

    // `rel` holds the per-k states handed to the next finer level.
    std::vector<Var> rel = left[J];
    for (int j = J - 1; j >= 1; --j) {
      std::vector<Var> up = upsample_all(rel);
      if (cfg_.variant == Variant::UNetSkip) cur = merge_skip(b.skip[j - 1], up, left[j]);
      else cur = std::move(up);
      const double gamma = right_gamma(cfg_, j);
      for (int l = 1; l <= cfg_.L(j); ++l) {
        std::vector<Var> next;
        for (int k = 1; k <= cfg_.c(j); ++k) {
          next.push_back(substep(n, Branch::Right, j, l, k, cur, b.right_kernels[j - 1][l - 1][k - 1], gamma, b));
        }
        cur = std::move(next);
      }
      if (cfg_.variant == Variant::PottsMG) {
        const Var w = leaf(b.skip[j - 1]);
        rel.clear();
        for (int k = 0; k < cfg_.c(j); ++k) rel.push_back(ad::lerp(t_, w, cur[k], left[j][k]));
      } else {
        rel = cur;
      }
    }

    if (b.final_kernels.size() != rel.size()) {
      throw ShapeError("final step (n=" + std::to_string(n) + "): fan-in " + std::to_string(rel.size()) + " but " +
                       std::to_string(b.final_kernels.size()) + " kernels");
    }
    const std::vector<Var> ks = leaves(b.final_kernels);
    const Var bias = leaf(b.final_bias);
    const Var linear =
        ad::linear_stage(t_, rel, ks, kNone, bias, 1.0 / static_cast<double>(rel.size()), cfg_.dt);
    if (opt_.trace) {
      opt_.trace->push_back({n, 0, 0, 0, Branch::Final, 1.0, static_cast<int>(rel.size()), rel, ks, kNone, bias,
                             linear});
    }
    const Var logit = ad::activation_logit(t_, linear, final_);
    return {ad::sigmoid(t_, logit), logit};
  }

  // Skip merge before a decoder level: per channel, w * up_k + (1 - w) * v_k,
  // with the mean of the shorter list standing in for missing channels.
  std::vector<Var> merge_skip(int skip_idx, const std::vector<Var>& up, const std::vector<Var>& v) {
    const Var w = leaf(skip_idx);
    const int cu = static_cast<int>(up.size());
    const int cv = static_cast<int>(v.size());
    const Var up_mean = cv > cu ? ad::average(t_, up) : kNone;
    const Var v_mean = cu > cv ? ad::average(t_, v) : kNone;
    std::vector<Var> out;
    for (int k = 0; k < std::max(cu, cv); ++k) {
      const Var a = k < cu ? up[k] : up_mean;
      const Var c = k < cv ? v[k] : v_mean;
      out.push_back(ad::lerp(t_, w, a, c));
    }
    return out;
  }

  ad::Tape& t_;
  const ControlParams& theta_;
  const NetConfig& cfg_;
  const ForwardOptions& opt_;
  std::vector<Var> leaves_;
  std::vector<std::vector<Var>> pyramid_;
  ad::ActivationSpec inner_;
  ad::ActivationSpec final_;
};

}  // namespace

TapeForward record_forward(ad::Tape& tape, const ControlParams& theta, const BatchInput& batch,
                           const ForwardOptions& opt) {
  Recorder rec(tape, theta, opt);
  return rec.run(batch);
}

Gradients collect_gradients(ad::Tape& tape, const TapeForward& fw, const ControlParams& theta) {
  Gradients g = zero_gradients(theta);
  for (size_t i = 0; i < fw.leaves.size(); ++i) {
    const Var v = fw.leaves[i];
    if (v == kNone || !tape.has_grad(v)) continue;
    auto src = tape.grad(v);
    std::copy(src.begin(), src.end(), g[i].begin());
  }
  return g;
}

Field forward(const Image& f, const ControlParams& theta) {
  check_image(f);
  ad::Tape tape;
  const BatchInput in = make_batch({&f});
  const TapeForward fw = record_forward(tape, theta, in);
  auto v = tape.value(fw.output);
  return Field(1, f.rows(), f.cols(), std::vector<double>(v.begin(), v.end()));
}

}  // namespace pmg

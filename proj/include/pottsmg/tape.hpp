#pragma once

// Reverse-mode gradient tape over batched grid fields.
//
// Every node holds a (batch, rows, cols) array; one node is one channel of
// one layer for every sample of a minibatch, so batch-coupled operations
// (batch normalization) and per-sample operations share one graph. Kernels
// and scalars enter as parameter leaves of shape (1, 1, n) tagged with the
// index of the parameter tensor they mirror.
//
// Ops run their forward pass when recorded. Each node keeps a forward
// closure so the whole tape can be replayed, and a backward closure that
// accumulates into its inputs' gradients. Batch loops are OpenMP-parallel;
// reductions over the batch are done in ascending sample order.

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "pottsmg/stencil.hpp"

namespace pmg::ad {

struct Shape {
  int batch = 1;
  int rows = 1;
  int cols = 1;

  int plane() const { return rows * cols; }
  int size() const { return batch * rows * cols; }
  bool operator==(const Shape&) const = default;
};

using Var = int;
constexpr Var kNone = -1;

class Tape {
 public:
  struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;
    std::vector<Var> inputs;
    std::function<void(Tape&, Var)> forward;
    std::function<void(Tape&, Var)> backward;
    int param = -1;
  };

  Var constant(Shape shape, std::vector<double> values);
  Var parameter(int param_index, std::span<const double> values);

  // Appends an op node and runs its forward closure once.
  Var record(Shape shape, std::vector<Var> inputs, std::function<void(Tape&, Var)> forward,
             std::function<void(Tape&, Var)> backward);

  const Node& node(Var v) const { return nodes_.at(v); }
  Node& node(Var v) { return nodes_.at(v); }
  const Shape& shape(Var v) const { return nodes_.at(v).shape; }
  std::span<const double> value(Var v) const { return nodes_.at(v).value; }
  std::span<double> mutable_value(Var v) { return nodes_.at(v).value; }
  // Gradient buffer, allocated (zero) on first access.
  std::span<double> grad(Var v);
  bool has_grad(Var v) const { return !nodes_.at(v).grad.empty(); }

  int size() const { return static_cast<int>(nodes_.size()); }

  /// Propagates d(root)/d(node) for every node. Throws UsageError unless
  /// the root holds exactly one value.
  void backward(Var root, double seed = 1.0);

  /// Recomputes every op node from its inputs in recording order. Returns
  /// true when every recomputed value is bit-identical to the recorded one.
  bool replay();

  void zero_grad();

 private:
  std::vector<Node> nodes_;
};

// ---- ops -------------------------------------------------------------------

/// sum_s k_s * x_s (zero-padded true convolution). Kernels are parameter or
/// constant nodes holding (2r+1)^2 weights.
Var conv_sum(Tape& t, std::span<const Var> xs, std::span<const Var> ks);
Var conv(Tape& t, Var x, Var k);

/// Linear stage of a substep:
///   out = mean_coeff * sum_s x_s + step * (sum_s k_s * x_s + bias_field + bias_scalar)
/// bias_field and bias_scalar may be kNone.
Var linear_stage(Tape& t, std::span<const Var> xs, std::span<const Var> ks, Var bias_field, Var bias_scalar,
                 double mean_coeff, double step);

Var add(Tape& t, Var a, Var b);
Var scale(Tape& t, Var a, double s);
Var weighted_sum(Tape& t, std::span<const Var> xs, std::span<const double> coeffs);
Var average(Tape& t, std::span<const Var> xs);
/// x + b with b a (1,1,1) node broadcast over every entry.
Var add_scalar(Tape& t, Var x, Var b);
/// w * a + (1 - w) * b with w a (1,1,1) node.
Var lerp(Tape& t, Var w, Var a, Var b);

Var sigmoid(Tape& t, Var x);

struct ActivationSpec {
  double epsilon = 2.0;
  double dt = 0.5;
  double c1 = 1.0;
  double c2 = 0.0;
  int iterations = 2;
  Kernel gaussian;  // used when c2 != 0
};

/// Unrolled fixed-point activation. Returns the argument x of the last
/// sigmoid, so that p_iters = sigmoid(x); each intermediate iterate is
/// clamped into (0,1) exactly as activation_fixed_point does.
Var activation_logit(Tape& t, Var u_bar, const ActivationSpec& spec);
/// sigmoid(activation_logit(...)).
Var activation(Tape& t, Var u_bar, const ActivationSpec& spec);

Var max_pool(Tape& t, Var x);
Var avg_pool(Tape& t, Var x);
Var upsample(Tape& t, Var x);

struct BatchNormOptions {
  bool training = true;
  double momentum = 0.1;
  double eps = 1e-5;
};

/// Per-node normalization over (batch, rows, cols), then gamma * xhat + beta.
/// In training mode `running` (mean, var) is updated with the batch
/// statistics when non-empty; in eval mode it supplies the statistics.
Var batch_norm(Tape& t, Var x, Var gamma, Var beta, std::span<double> running, const BatchNormOptions& opt);

/// Mean over all entries of -[t ln p + (1-t) ln(1-p)], p clamped to [1e-7, 1-1e-7].
Var cross_entropy(Tape& t, Var p, std::span<const double> target);
/// Same loss computed from the sigmoid argument: mean of softplus(x) - t x.
/// Agrees with cross_entropy(sigmoid(x)) wherever the clamp is inactive.
Var cross_entropy_logits(Tape& t, Var x, std::span<const double> target);

Var sum(Tape& t, Var x);
Var mean(Tape& t, Var x);

// ---- gradient checking -----------------------------------------------------

struct FdCheckResult {
  double max_relative_error = 0.0;
  int samples = 0;
};

/// Central-difference check of `analytic` (the tape gradient, flattened in
/// the same order as `theta`) against loss(theta +- step e_i) on `samples`
/// randomly chosen coordinates. Relative error uses max(|g|, 1e-8) as the
/// denominator. Throws UsageError if step is outside [1e-7, 1e-3].
FdCheckResult fd_check(const std::function<double(std::span<const double>)>& loss, std::span<const double> theta,
                       std::span<const double> analytic, double step, int samples, std::uint64_t seed);

}  // namespace pmg::ad

#pragma once

// Network configuration and the learnable control parameters.
//
// ControlParams keeps every tensor in one flat list whose order is the
// canonical checkpoint order:
//
//   for each parameter block n (one per time step, or one when tied):
//     left kernels  A[j][l][k][s]      j, l, k, s ascending
//     right kernels At[j][l][k][s]     j = 1..J-1 ascending
//     final kernels A*[s]
//     left biases   (l = 1: B[j][1][k][s=1..3] kernels, l > 1: beta[j][l][k])
//     right biases  (same pattern)
//     final bias    b*
//     skip weights  omega[j], j = 1..J-1
//   init kernels W0[s], s = 1..3
//   for each block n: batch-norm (gamma, beta, running mean/var) per
//     left substep (j, l, k), then per right substep (j, l, k)
//
// Indices into the layout tables are 0-based (j - 1, l - 1, k - 1, s - 1).

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "pottsmg/mesh.hpp"

namespace pmg {

enum class Variant { PottsMG, UNetSkip, SegNet };

std::string to_string(Variant v);
Variant parse_variant(const std::string& s);

struct NetConfig {
  int levels = 5;                               // J
  std::vector<int> substeps{3, 3, 3, 5, 5};     // L_j
  std::vector<int> widths{32, 32, 64, 128, 256};  // c_j
  int time_steps = 4;                           // N
  double dt = 0.5;
  double epsilon = 2.0;
  double eta = 80.0;
  double sigma = 0.5;
  int gaussian_radius = 2;
  Variant variant = Variant::PottsMG;
  int act_iters = 2;
  bool batchnorm = true;
  PoolMode pool = PoolMode::Max;
  int radius_init = 1;
  int radius_coarse = 1;
  int radius_default = 2;
  bool tie_weights = false;
  // C1 = 1/kappa for every activation when set; C1 = 1 otherwise.
  bool kappa_c1 = false;

  void validate() const;
  void validate_image(int rows, int cols) const;

  int L(int j) const { return substeps[j - 1]; }
  int c(int j) const { return widths[j - 1]; }
  // c_0 = 1 (the single incoming state).
  int c_or_one(int j) const { return j == 0 ? 1 : widths[j - 1]; }
  int radius(int j) const { return j == levels ? radius_coarse : radius_default; }
  int blocks() const { return tie_weights ? 1 : time_steps; }

  /// Fan-in of left substep (j, l): c_{j-1} at l = 1, c_j otherwise.
  int left_fan_in(int j, int l) const;
  /// Fan-in of right substep (j, l): c_{j+1} at l = 1 (max(c_j, c_{j+1}) for
  /// UNetSkip, whose merged skip state has that many channels), c_j otherwise.
  int right_fan_in(int j, int l) const;
};

struct Tensor {
  std::string name;
  std::vector<double> data;
  bool trainable = true;
};

struct BatchNormSlot {
  int gamma = -1;
  int beta = -1;
  int running = -1;  // (mean, var), not trainable
};

struct BlockLayout {
  // [j][l][k][s]
  std::vector<std::vector<std::vector<std::vector<int>>>> left_kernels;
  std::vector<std::vector<std::vector<std::vector<int>>>> right_kernels;
  std::vector<int> final_kernels;
  // [j][k][s] for l = 1
  std::vector<std::vector<std::vector<int>>> left_bias_kernels;
  std::vector<std::vector<std::vector<int>>> right_bias_kernels;
  // [j][l][k] for l > 1 (entry l = 0 unused, -1)
  std::vector<std::vector<std::vector<int>>> left_bias_scalars;
  std::vector<std::vector<std::vector<int>>> right_bias_scalars;
  int final_bias = -1;
  std::vector<int> skip;  // [j] for j = 1..J-1
  // [j][l][k]
  std::vector<std::vector<std::vector<BatchNormSlot>>> left_bn;
  std::vector<std::vector<std::vector<BatchNormSlot>>> right_bn;
};

class ControlParams {
 public:
  ControlParams() = default;
  /// Allocates every tensor for `cfg`, zero-filled except skip weights (1/2),
  /// batch-norm scales (1) and running variances (1).
  explicit ControlParams(const NetConfig& cfg);

  const NetConfig& config() const { return cfg_; }
  std::vector<Tensor>& tensors() { return tensors_; }
  const std::vector<Tensor>& tensors() const { return tensors_; }
  const BlockLayout& block(int n) const { return blocks_.at(cfg_.tie_weights ? 0 : n); }
  const std::vector<int>& init_kernels() const { return init_kernels_; }

  std::size_t scalar_count() const;
  std::vector<double> flatten() const;
  void unflatten(std::span<const double> flat);
  // Trainable-only views for optimizers and gradient checks.
  std::size_t trainable_count() const;
  std::vector<double> flatten_trainable() const;
  void unflatten_trainable(std::span<const double> flat);

  /// Random initialization: kernels ~ N(0, 1/(fan_in * taps)), biases 0.
  void initialize(std::uint64_t seed);

  /// FNV-1a over the raw bytes of every tensor (order-sensitive).
  std::uint64_t hash() const;

  bool all_finite() const;

 private:
  int add(std::string name, std::size_t size, double fill, bool trainable = true);

  NetConfig cfg_;
  std::vector<Tensor> tensors_;
  std::vector<BlockLayout> blocks_;
  std::vector<int> init_kernels_;
};

/// Per-tensor gradients aligned with ControlParams::tensors().
using Gradients = std::vector<std::vector<double>>;
Gradients zero_gradients(const ControlParams& params);
/// Trainable entries of `g`, in the order of ControlParams::flatten_trainable.
std::vector<double> flatten_trainable(const Gradients& g, const ControlParams& params);

}  // namespace pmg

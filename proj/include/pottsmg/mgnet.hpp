#pragma once

// The multigrid control network: one V-cycle per time step, built from
// substeps of the form
//
//   u_bar = (1/c) sum_s x_s + gamma dt (sum_s A_s * x_s + b)
//   u     = activation(batch_norm(u_bar))
//
// The tape forward records a whole minibatch at once; the Field forward is
// the single-image inference path on top of it.

#include <functional>
#include <optional>
#include <vector>

#include "pottsmg/mesh.hpp"
#include "pottsmg/params.hpp"
#include "pottsmg/potts.hpp"
#include "pottsmg/stencil.hpp"
#include "pottsmg/tape.hpp"

namespace pmg {

/// Three-channel image at level 1.
struct Image {
  std::vector<Field> channels;

  int rows() const { return channels.empty() ? 0 : channels[0].rows; }
  int cols() const { return channels.empty() ? 0 : channels[0].cols; }
};

/// Throws InputError unless the image has 3 equally sized level-1 channels.
void check_image(const Image& f);

/// Sum over all substeps of 1 / (time-scale factor), plus 1 for the final step.
double kappa(const NetConfig& cfg);

/// Time-scale factor of a left (encoder) or right (decoder) substep at level j.
double left_gamma(const NetConfig& cfg, int j);
double right_gamma(const NetConfig& cfg, int j);

PottsParams potts_params(const NetConfig& cfg);

/// C1 of the activation: 1, or 1/kappa when cfg.kappa_c1 is set.
double activation_c1(const NetConfig& cfg);

/// Substep bias: a field at the input level, a scalar, or both (summed).
struct Bias {
  std::optional<Field> field;
  double scalar = 0.0;
};

/// Linear stage of a substep on plain fields. Throws ShapeError when the
/// inputs do not share a level or the kernel count differs from the input count.
Field block_linear(const std::vector<Field>& inputs, const std::vector<Kernel>& kernels, const Bias& bias,
                   double gamma, double dt);

/// block_linear followed by the activation with C2 = 0 (no batch norm).
Field block_step(const std::vector<Field>& inputs, const std::vector<Kernel>& kernels, const Bias& bias,
                 double gamma, const NetConfig& cfg);

/// Bias of substep (j, l, k): sum_s B_{k,s} * f_s at level j when l = 1,
/// the scalar beta otherwise. `right` selects the decoder biases.
Bias bias_eval(const ControlParams& theta, const Image& f, int n, int j, int l, int k, bool right);

enum class Branch { Left, Right, Final };

/// One record per substep, in execution order.
struct SubstepTrace {
  int n = 0;
  int j = 0;
  int l = 0;
  int k = 0;
  Branch branch = Branch::Left;
  double gamma = 1.0;
  int fan_in = 0;
  std::vector<ad::Var> inputs;
  std::vector<ad::Var> kernels;
  ad::Var bias_field = ad::kNone;
  ad::Var bias_scalar = ad::kNone;
  ad::Var linear = ad::kNone;  // u_bar
};

struct ForwardOptions {
  bool training = false;  // batch-norm statistics from the batch
  // Receives the running-statistics update in training mode (may be null).
  ControlParams* running_sink = nullptr;
  std::vector<SubstepTrace>* trace = nullptr;
};

/// Batched images as tape constants: channel s holds shape (B, rows, cols).
struct BatchInput {
  int batch = 0;
  int rows = 0;
  int cols = 0;
  std::vector<std::vector<double>> channels;  // 3 x (B * rows * cols)
};
BatchInput make_batch(const std::vector<const Image*>& images);

struct TapeForward {
  ad::Var output = ad::kNone;  // probabilities in (0,1); U^0 when N = 0
  ad::Var logit = ad::kNone;   // argument of the last sigmoid (kNone when N = 0)
  std::vector<ad::Var> leaves; // per parameter tensor, kNone when unused
};

/// Records U^0 and N V-cycles on `tape`. Throws ShapeError naming (n, j, l, k)
/// when a substep's fan-in disagrees with its kernel table.
TapeForward record_forward(ad::Tape& tape, const ControlParams& theta, const BatchInput& batch,
                           const ForwardOptions& opt = {});

/// Reads the gradient of every parameter leaf into a Gradients table
/// (zeros for untouched tensors).
Gradients collect_gradients(ad::Tape& tape, const TapeForward& fw, const ControlParams& theta);

/// Inference on one image (batch norm in eval mode).
Field forward(const Image& f, const ControlParams& theta);

}  // namespace pmg

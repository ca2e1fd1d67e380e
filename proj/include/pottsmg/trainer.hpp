#pragma once

// Loss, metrics, noise injection, optimizers and the progressive-noise
// training loop.

#include <cstdint>
#include <iosfwd>
#include <random>
#include <string>
#include <vector>

#include "pottsmg/dataio.hpp"
#include "pottsmg/params.hpp"

namespace pmg {

enum class NoiseSetting { PerPixelUniform = 1, Constant = 2 };
enum class OptimizerKind { Adam, Sgd };

struct TrainConfig {
  std::vector<double> schedule{0.0, 0.3, 0.5, 0.8, 1.0};
  int epochs = 50;  // per stage
  int batch = 16;
  double lr = 1e-3;
  OptimizerKind optimizer = OptimizerKind::Adam;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  NoiseSetting setting = NoiseSetting::PerPixelUniform;
  std::uint64_t seed = 1;

  void validate() const;
};

/// Mean of -[t ln p + (1-t) ln(1-p)], p clamped to [1e-7, 1-1e-7].
double cross_entropy(const Field& pred, const Field& target);

struct Metrics {
  double accuracy = 0.0;
  double dice = 0.0;
};
/// pred binarized at 0.5 (p > 0.5 is foreground); dice is 1 when both sets are empty.
Metrics metrics(const Field& pred, const Field& target);

/// Adds zero-mean Gaussian noise to every pixel of every channel. Setting 1
/// draws a per-pixel standard deviation from U[0, sd]; setting 2 uses sd.
/// No clamping. sd = 0 returns the image unchanged.
Image add_noise(const Image& img, double sd, NoiseSetting setting, std::mt19937_64& rng);

/// Per-(stage, epoch, sample) stream seeds.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0, std::uint64_t c = 0);

struct LossGrad {
  double loss = 0.0;
  Gradients grad;
  std::vector<Field> outputs;
};

/// Cross-entropy (computed from the last sigmoid argument) and its gradient
/// for one minibatch. `training` selects batch statistics for batch norm;
/// running statistics are written to `running_sink` when non-null.
LossGrad loss_and_gradient(const ControlParams& theta, const std::vector<const Image*>& images,
                           const std::vector<const Field*>& masks, bool training,
                           ControlParams* running_sink = nullptr);

class Optimizer {
 public:
  Optimizer(const TrainConfig& cfg, const ControlParams& theta);
  /// Updates every trainable tensor; throws TrainingError if one turns non-finite.
  void step(ControlParams& theta, const Gradients& g);

 private:
  TrainConfig cfg_;
  long t_ = 0;
  Gradients m_;
  Gradients v_;
};

struct EpochLog {
  double stage_sd = 0.0;
  int epoch = 0;  // 1-based within the stage
  double loss = 0.0;
  double accuracy = 0.0;
  double dice = 0.0;
};

struct TrainResult {
  ControlParams theta;
  std::vector<EpochLog> log;
  // Parameter hash at the start and end of each stage.
  std::vector<std::uint64_t> stage_start_hash;
  std::vector<std::uint64_t> stage_end_hash;
};

/// Progressive training: for each SD of the schedule, `epochs` epochs of
/// shuffled minibatches with freshly drawn noise; parameters carry over
/// between stages. Throws TrainingError (with stage and epoch) on a
/// non-finite loss.
TrainResult train(ControlParams theta, const std::vector<Sample>& data, const TrainConfig& tcfg,
                  std::ostream* progress = nullptr);

void write_log_csv(const std::vector<EpochLog>& log, std::ostream& out);

struct EvalRow {
  double sd = 0.0;
  double loss = 0.0;
  double accuracy = 0.0;
  double dice = 0.0;
};

/// Mean loss/accuracy/dice over `data` with noise of level sd (batch norm in
/// eval mode). Noise is drawn from derive_seed(seed, sample index).
EvalRow evaluate(const ControlParams& theta, const std::vector<Sample>& data, double sd, NoiseSetting setting,
                 std::uint64_t seed, int batch = 16);

/// The small network used for gradient checks: J=2, c={2,2}, L={1,1}, N=1.
NetConfig tiny_config();

struct GradCheckReport {
  double max_relative_error = 0.0;
  int samples = 0;
  double loss = 0.0;
};

/// Central-difference check of loss_and_gradient (batch-norm in training
/// mode) on random size x size images and masks, over `samples` randomly
/// chosen trainable scalars.
GradCheckReport grad_check(const NetConfig& cfg, int size, int batch, int samples, double step,
                           std::uint64_t seed);

}  // namespace pmg

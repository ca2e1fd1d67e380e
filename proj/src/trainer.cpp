#include "pottsmg/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <string>

#include "pottsmg/errors.hpp"
#include "pottsmg/mgnet.hpp"
#include "pottsmg/tape.hpp"

namespace pmg {

void TrainConfig::validate() const {
  if (schedule.empty()) throw ConfigError("train.schedule must list at least one SD");
  for (size_t i = 0; i < schedule.size(); ++i) {
    if (!(schedule[i] >= 0.0)) throw ConfigError("train.schedule entries must be >= 0");
    if (i > 0 && schedule[i] < schedule[i - 1]) throw ConfigError("train.schedule must be non-decreasing");
  }
  if (epochs < 1) throw ConfigError("train.epochs must be >= 1");
  if (batch < 1) throw ConfigError("train.batch must be >= 1");
  if (!(lr >= 0.0)) throw ConfigError("train.lr must be >= 0");
}

double cross_entropy(const Field& pred, const Field& target) {
  if (pred.size() != target.size()) throw ShapeError("cross_entropy: size mismatch");
  double total = 0.0;
  for (int i = 0; i < pred.size(); ++i) {
    const double p = std::clamp(pred.values[i], 1e-7, 1.0 - 1e-7);
    const double t = target.values[i];
    total -= t * std::log(p) + (1.0 - t) * std::log(1.0 - p);
  }
  return total / pred.size();
}

Metrics metrics(const Field& pred, const Field& target) {
  if (pred.size() != target.size()) throw ShapeError("metrics: size mismatch");
  long match = 0;
  long p_count = 0;
  long t_count = 0;
  long both = 0;
  for (int i = 0; i < pred.size(); ++i) {
    const bool p = pred.values[i] > 0.5;
    const bool t = target.values[i] > 0.5;
    match += p == t;
    p_count += p;
    t_count += t;
    both += p && t;
  }
  Metrics m;
  m.accuracy = pred.size() ? static_cast<double>(match) / pred.size() : 1.0;
  m.dice = p_count + t_count == 0 ? 1.0 : 2.0 * both / static_cast<double>(p_count + t_count);
  return m;
}

Image add_noise(const Image& img, double sd, NoiseSetting setting, std::mt19937_64& rng) {
  if (!(sd >= 0.0)) throw ParameterError("noise SD must be >= 0");
  Image out = img;
  if (sd == 0.0) return out;
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, sd);
  const int n = img.rows() * img.cols();
  for (int i = 0; i < n; ++i) {
    const double s = setting == NoiseSetting::PerPixelUniform ? unit(rng) : sd;
    for (auto& ch : out.channels) ch.values[i] += s * normal(rng);
  }
  return out;
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b, std::uint64_t c) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(b), static_cast<std::uint32_t>(c)};
  std::uint32_t out[2];
  seq.generate(out, out + 2);
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

LossGrad loss_and_gradient(const ControlParams& theta, const std::vector<const Image*>& images,
                           const std::vector<const Field*>& masks, bool training, ControlParams* running_sink) {
  if (images.size() != masks.size()) throw ShapeError("loss_and_gradient: image/mask count mismatch");
  if (theta.config().time_steps < 1) throw ConfigError("training needs net.N >= 1");
  ad::Tape tape;
  ForwardOptions opt;
  opt.training = training;
  opt.running_sink = running_sink;
  const BatchInput in = make_batch(images);
  const TapeForward fw = record_forward(tape, theta, in, opt);
  std::vector<double> target;
  target.reserve(static_cast<size_t>(in.batch) * in.rows * in.cols);
  for (const Field* m : masks) {
    if (m->rows != in.rows || m->cols != in.cols) throw ShapeError("mask size differs from image");
    target.insert(target.end(), m->values.begin(), m->values.end());
  }
  const ad::Var loss = ad::cross_entropy_logits(tape, fw.logit, target);
  tape.backward(loss);
  LossGrad out;
  out.loss = tape.value(loss)[0];
  out.grad = collect_gradients(tape, fw, theta);
  const auto p = tape.value(fw.output);
  const int plane = in.rows * in.cols;
  for (int b = 0; b < in.batch; ++b) {
    out.outputs.emplace_back(1, in.rows, in.cols,
                             std::vector<double>(p.begin() + static_cast<size_t>(b) * plane,
                                                 p.begin() + static_cast<size_t>(b + 1) * plane));
  }
  return out;
}

Optimizer::Optimizer(const TrainConfig& cfg, const ControlParams& theta)
    : cfg_(cfg), m_(zero_gradients(theta)), v_(zero_gradients(theta)) {}

void Optimizer::step(ControlParams& theta, const Gradients& g) {
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  auto& tensors = theta.tensors();
  for (size_t i = 0; i < tensors.size(); ++i) {
    Tensor& t = tensors[i];
    if (!t.trainable) continue;
    for (size_t q = 0; q < t.data.size(); ++q) {
      const double gq = g[i][q];
      if (cfg_.optimizer == OptimizerKind::Sgd) {
        t.data[q] -= cfg_.lr * gq;
      } else {
        m_[i][q] = cfg_.beta1 * m_[i][q] + (1.0 - cfg_.beta1) * gq;
        v_[i][q] = cfg_.beta2 * v_[i][q] + (1.0 - cfg_.beta2) * gq * gq;
        const double mh = m_[i][q] / bc1;
        const double vh = v_[i][q] / bc2;
        t.data[q] -= cfg_.lr * mh / (std::sqrt(vh) + cfg_.adam_eps);
      }
      if (!std::isfinite(t.data[q])) throw TrainingError("parameter " + t.name + " became non-finite");
    }
  }
}

TrainResult train(ControlParams theta, const std::vector<Sample>& data, const TrainConfig& tcfg,
                  std::ostream* progress) {
  tcfg.validate();
  if (data.empty()) throw InputError("training set is empty");
  TrainResult res;
  const int count = static_cast<int>(data.size());
  for (size_t stage = 0; stage < tcfg.schedule.size(); ++stage) {
    const double sd = tcfg.schedule[stage];
    res.stage_start_hash.push_back(theta.hash());
    Optimizer opt(tcfg, theta);
    for (int epoch = 1; epoch <= tcfg.epochs; ++epoch) {
      std::vector<Image> noisy(count);
#pragma omp parallel for schedule(static)
      for (int i = 0; i < count; ++i) {
        std::mt19937_64 rng(derive_seed(tcfg.seed, stage + 1, static_cast<std::uint64_t>(epoch), i + 1));
        noisy[i] = add_noise(data[i].image, sd, tcfg.setting, rng);
      }
      std::vector<int> order(count);
      std::iota(order.begin(), order.end(), 0);
      std::mt19937_64 shuffle_rng(derive_seed(tcfg.seed, stage + 1, static_cast<std::uint64_t>(epoch), 0));
      std::shuffle(order.begin(), order.end(), shuffle_rng);

      double loss_sum = 0.0;
      double acc_sum = 0.0;
      double dice_sum = 0.0;
      for (int start = 0; start < count; start += tcfg.batch) {
        const int end = std::min(count, start + tcfg.batch);
        std::vector<const Image*> imgs;
        std::vector<const Field*> masks;
        for (int q = start; q < end; ++q) {
          imgs.push_back(&noisy[order[q]]);
          masks.push_back(&data[order[q]].mask);
        }
        const LossGrad lg = loss_and_gradient(theta, imgs, masks, true, &theta);
        if (!std::isfinite(lg.loss)) {
          throw TrainingError("non-finite loss at stage " + std::to_string(stage + 1) + " (sd=" +
                              std::to_string(sd) + "), epoch " + std::to_string(epoch));
        }
        try {
          opt.step(theta, lg.grad);
        } catch (const TrainingError& e) {
          throw TrainingError(std::string(e.what()) + " at stage " + std::to_string(stage + 1) + " (sd=" +
                              std::to_string(sd) + "), epoch " + std::to_string(epoch));
        }
        loss_sum += lg.loss * (end - start);
        for (int q = 0; q < end - start; ++q) {
          const Metrics m = metrics(lg.outputs[q], *masks[q]);
          acc_sum += m.accuracy;
          dice_sum += m.dice;
        }
      }
      res.log.push_back({sd, epoch, loss_sum / count, acc_sum / count, dice_sum / count});
      if (progress) {
        const EpochLog& e = res.log.back();
        *progress << "stage sd=" << sd << " epoch " << epoch << " loss " << e.loss << " acc " << e.accuracy
                  << " dice " << e.dice << "\n";
        progress->flush();
      }
    }
    res.stage_end_hash.push_back(theta.hash());
  }
  res.theta = std::move(theta);
  return res;
}

void write_log_csv(const std::vector<EpochLog>& log, std::ostream& out) {
  out << "stage_sd,epoch,loss,accuracy,dice\n";
  char line[256];
  for (const EpochLog& e : log) {
    std::snprintf(line, sizeof(line), "%.17g,%d,%.17g,%.17g,%.17g\n", e.stage_sd, e.epoch, e.loss, e.accuracy,
                  e.dice);
    out << line;
  }
}

EvalRow evaluate(const ControlParams& theta, const std::vector<Sample>& data, double sd, NoiseSetting setting,
                 std::uint64_t seed, int batch) {
  if (data.empty()) throw InputError("evaluation set is empty");
  const int count = static_cast<int>(data.size());
  std::vector<Image> noisy(count);
  for (int i = 0; i < count; ++i) {
    std::mt19937_64 rng(derive_seed(seed, static_cast<std::uint64_t>(i) + 1));
    noisy[i] = add_noise(data[i].image, sd, setting, rng);
  }
  EvalRow row;
  row.sd = sd;
  for (int start = 0; start < count; start += batch) {
    const int end = std::min(count, start + batch);
    std::vector<const Image*> imgs;
    for (int q = start; q < end; ++q) imgs.push_back(&noisy[q]);
    ad::Tape tape;
    const BatchInput in = make_batch(imgs);
    const TapeForward fw = record_forward(tape, theta, in);
    const auto p = tape.value(fw.output);
    const int plane = in.rows * in.cols;
    for (int q = start; q < end; ++q) {
      const size_t off = static_cast<size_t>(q - start) * plane;
      const Field pred(1, in.rows, in.cols, std::vector<double>(p.begin() + off, p.begin() + off + plane));
      const Metrics m = metrics(pred, data[q].mask);
      row.loss += cross_entropy(pred, data[q].mask);
      row.accuracy += m.accuracy;
      row.dice += m.dice;
    }
  }
  row.loss /= count;
  row.accuracy /= count;
  row.dice /= count;
  return row;
}

NetConfig tiny_config() {
  NetConfig cfg;
  cfg.levels = 2;
  cfg.widths = {2, 2};
  cfg.substeps = {1, 1};
  cfg.time_steps = 1;
  return cfg;
}

GradCheckReport grad_check(const NetConfig& cfg, int size, int batch, int samples, double step,
                           std::uint64_t seed) {
  ControlParams theta(cfg);
  theta.initialize(seed);
  std::mt19937_64 rng(derive_seed(seed, 99));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  // Nonzero biases, skip weights and batch-norm affine terms, so every
  // tensor class is exercised away from its initial value.
  for (Tensor& t : theta.tensors()) {
    if (!t.trainable) continue;
    if (t.data.size() == 1) t.data[0] += 0.2 * (unit(rng) - 0.5);
  }
  std::vector<Image> images(batch);
  std::vector<Field> masks(batch);
  for (int b = 0; b < batch; ++b) {
    images[b].channels.assign(3, Field(1, size, size));
    for (auto& ch : images[b].channels) {
      for (double& v : ch.values) v = unit(rng);
    }
    masks[b] = Field(1, size, size);
    for (double& v : masks[b].values) v = unit(rng) < 0.5 ? 1.0 : 0.0;
  }
  std::vector<const Image*> ip;
  std::vector<const Field*> mp;
  for (int b = 0; b < batch; ++b) {
    ip.push_back(&images[b]);
    mp.push_back(&masks[b]);
  }
  const LossGrad base = loss_and_gradient(theta, ip, mp, true);
  const std::vector<double> x0 = theta.flatten_trainable();
  const std::vector<double> g0 = flatten_trainable(base.grad, theta);
  ControlParams work = theta;
  auto loss = [&](std::span<const double> x) {
    work.unflatten_trainable(x);
    ad::Tape tape;
    const TapeForward fw = record_forward(tape, work, make_batch(ip), {true, nullptr, nullptr});
    std::vector<double> target;
    for (const Field* m : mp) target.insert(target.end(), m->values.begin(), m->values.end());
    return tape.value(ad::cross_entropy_logits(tape, fw.logit, target))[0];
  };
  const ad::FdCheckResult r = ad::fd_check(loss, x0, g0, step, samples, derive_seed(seed, 7));
  return {r.max_relative_error, r.samples, base.loss};
}

}  // namespace pmg

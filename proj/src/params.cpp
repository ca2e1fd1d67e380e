#include "pottsmg/params.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <random>
#include <span>

#include "pottsmg/errors.hpp"
#include "pottsmg/kernels.hpp"

namespace pmg {

std::string to_string(Variant v) {
  switch (v) {
    case Variant::PottsMG: return "pottsmg";
    case Variant::UNetSkip: return "unet";
    case Variant::SegNet: return "segnet";
  }
  return "pottsmg";
}

Variant parse_variant(const std::string& s) {
  if (s == "pottsmg" || s == "PottsMG") return Variant::PottsMG;
  if (s == "unet" || s == "UNetSkip") return Variant::UNetSkip;
  if (s == "segnet" || s == "SegNet") return Variant::SegNet;
  throw ConfigError("unknown variant '" + s + "' (expected pottsmg, unet or segnet)");
}

void NetConfig::validate() const {
  if (levels < 1) throw ConfigError("net.J must be >= 1");
  if (static_cast<int>(substeps.size()) != levels) throw ConfigError("net.L must list J substep counts");
  if (static_cast<int>(widths.size()) != levels) throw ConfigError("net.c must list J widths");
  for (int v : substeps) {
    if (v < 1) throw ConfigError("net.L entries must be >= 1");
  }
  for (int v : widths) {
    if (v < 1) throw ConfigError("net.c entries must be >= 1");
  }
  if (time_steps < 0) throw ConfigError("net.N must be >= 0");
  if (!(dt > 0.0)) throw ConfigError("net.dt must be > 0");
  if (!(epsilon > 0.0)) throw ConfigError("net.epsilon must be > 0");
  if (!(eta >= 0.0)) throw ConfigError("net.eta must be >= 0");
  if (!(sigma > 0.0)) throw ConfigError("net.sigma must be > 0");
  if (gaussian_radius < 1) throw ConfigError("net.gaussian_radius must be >= 1");
  if (act_iters < 1) throw ConfigError("net.act_iters must be >= 1");
  if (radius_init < 0 || radius_coarse < 0 || radius_default < 0) throw ConfigError("kernel radii must be >= 0");
}

void NetConfig::validate_image(int rows, int cols) const {
  validate();
  const int factor = 1 << (levels - 1);
  if (rows % factor != 0 || cols % factor != 0) {
    throw ShapeError("image " + std::to_string(rows) + "x" + std::to_string(cols) +
                     " is not divisible by 2^(J-1)=" + std::to_string(factor));
  }
}

int NetConfig::left_fan_in(int j, int l) const { return l == 1 ? c_or_one(j - 1) : c(j); }

int NetConfig::right_fan_in(int j, int l) const {
  if (l > 1) return c(j);
  if (variant == Variant::UNetSkip) return std::max(c(j), c(j + 1));
  return c(j + 1);
}

// ---------------------------------------------------------------------------

int ControlParams::add(std::string name, std::size_t size, double fill, bool trainable) {
  tensors_.push_back({std::move(name), std::vector<double>(size, fill), trainable});
  return static_cast<int>(tensors_.size() - 1);
}

ControlParams::ControlParams(const NetConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  const int J = cfg.levels;
  const auto taps = [](int r) { return static_cast<std::size_t>(kernels::kernel_taps(r)); };
  auto tag = [](const std::string& prefix, int j, int l, int k, int s) {
    std::string out = prefix + ".j" + std::to_string(j);
    if (l > 0) out += ".l" + std::to_string(l);
    if (k > 0) out += ".k" + std::to_string(k);
    if (s > 0) out += ".s" + std::to_string(s);
    return out;
  };

  blocks_.resize(cfg.blocks());
  for (int n = 0; n < cfg.blocks(); ++n) {
    BlockLayout& b = blocks_[n];
    const std::string pre = "n" + std::to_string(n);
    b.left_kernels.resize(J);
    for (int j = 1; j <= J; ++j) {
      b.left_kernels[j - 1].resize(cfg.L(j));
      for (int l = 1; l <= cfg.L(j); ++l) {
        b.left_kernels[j - 1][l - 1].resize(cfg.c(j));
        for (int k = 1; k <= cfg.c(j); ++k) {
          for (int s = 1; s <= cfg.left_fan_in(j, l); ++s) {
            b.left_kernels[j - 1][l - 1][k - 1].push_back(add(tag(pre + ".A", j, l, k, s), taps(cfg.radius(j)), 0.0));
          }
        }
      }
    }
    b.right_kernels.resize(J - 1);
    for (int j = 1; j <= J - 1; ++j) {
      b.right_kernels[j - 1].resize(cfg.L(j));
      for (int l = 1; l <= cfg.L(j); ++l) {
        b.right_kernels[j - 1][l - 1].resize(cfg.c(j));
        for (int k = 1; k <= cfg.c(j); ++k) {
          for (int s = 1; s <= cfg.right_fan_in(j, l); ++s) {
            b.right_kernels[j - 1][l - 1][k - 1].push_back(
                add(tag(pre + ".At", j, l, k, s), taps(cfg.radius(j)), 0.0));
          }
        }
      }
    }
    for (int s = 1; s <= cfg.c(1); ++s) {
      b.final_kernels.push_back(add(pre + ".Astar.s" + std::to_string(s), taps(cfg.radius(1)), 0.0));
    }

    auto biases = [&](const std::string& name, int levels_in_branch,
                      std::vector<std::vector<std::vector<int>>>& kernels_out,
                      std::vector<std::vector<std::vector<int>>>& scalars_out) {
      kernels_out.resize(levels_in_branch);
      scalars_out.resize(levels_in_branch);
      for (int j = 1; j <= levels_in_branch; ++j) {
        kernels_out[j - 1].resize(cfg.c(j));
        scalars_out[j - 1].assign(cfg.L(j), std::vector<int>(cfg.c(j), -1));
        for (int l = 1; l <= cfg.L(j); ++l) {
          for (int k = 1; k <= cfg.c(j); ++k) {
            if (l == 1) {
              for (int s = 1; s <= 3; ++s) {
                kernels_out[j - 1][k - 1].push_back(add(tag(pre + "." + name, j, l, k, s), taps(cfg.radius(j)), 0.0));
              }
            } else {
              scalars_out[j - 1][l - 1][k - 1] = add(tag(pre + "." + name, j, l, k, 0), 1, 0.0);
            }
          }
        }
      }
    };
    biases("B", J, b.left_bias_kernels, b.left_bias_scalars);
    biases("Bt", J - 1, b.right_bias_kernels, b.right_bias_scalars);
    b.final_bias = add(pre + ".bstar", 1, 0.0);
    for (int j = 1; j <= J - 1; ++j) b.skip.push_back(add(pre + ".omega.j" + std::to_string(j), 1, 0.5));
  }

  for (int s = 1; s <= 3; ++s) init_kernels_.push_back(add("W0.s" + std::to_string(s), taps(cfg.radius_init), 0.0));

  for (int n = 0; n < cfg.blocks(); ++n) {
    BlockLayout& b = blocks_[n];
    const std::string pre = "n" + std::to_string(n);
    auto bn = [&](const std::string& name, int levels_in_branch,
                  std::vector<std::vector<std::vector<BatchNormSlot>>>& out) {
      out.resize(levels_in_branch);
      for (int j = 1; j <= levels_in_branch; ++j) {
        out[j - 1].resize(cfg.L(j));
        for (int l = 1; l <= cfg.L(j); ++l) {
          for (int k = 1; k <= cfg.c(j); ++k) {
            const std::string base = tag(pre + "." + name, j, l, k, 0);
            BatchNormSlot slot;
            slot.gamma = add(base + ".gamma", 1, 1.0);
            slot.beta = add(base + ".beta", 1, 0.0);
            slot.running = add(base + ".running", 2, 0.0, false);
            tensors_[slot.running].data[1] = 1.0;
            out[j - 1][l - 1].push_back(slot);
          }
        }
      }
    };
    bn("bn.left", J, b.left_bn);
    bn("bn.right", J - 1, b.right_bn);
  }
}

std::size_t ControlParams::scalar_count() const {
  std::size_t n = 0;
  for (const Tensor& t : tensors_) n += t.data.size();
  return n;
}

std::size_t ControlParams::trainable_count() const {
  std::size_t n = 0;
  for (const Tensor& t : tensors_) {
    if (t.trainable) n += t.data.size();
  }
  return n;
}

std::vector<double> ControlParams::flatten() const {
  std::vector<double> out;
  out.reserve(scalar_count());
  for (const Tensor& t : tensors_) out.insert(out.end(), t.data.begin(), t.data.end());
  return out;
}

void ControlParams::unflatten(std::span<const double> flat) {
  if (flat.size() != scalar_count()) throw ShapeError("unflatten: parameter count mismatch");
  std::size_t pos = 0;
  for (Tensor& t : tensors_) {
    std::copy_n(flat.begin() + pos, t.data.size(), t.data.begin());
    pos += t.data.size();
  }
}

std::vector<double> ControlParams::flatten_trainable() const {
  std::vector<double> out;
  out.reserve(trainable_count());
  for (const Tensor& t : tensors_) {
    if (t.trainable) out.insert(out.end(), t.data.begin(), t.data.end());
  }
  return out;
}

void ControlParams::unflatten_trainable(std::span<const double> flat) {
  if (flat.size() != trainable_count()) throw ShapeError("unflatten_trainable: parameter count mismatch");
  std::size_t pos = 0;
  for (Tensor& t : tensors_) {
    if (!t.trainable) continue;
    std::copy_n(flat.begin() + pos, t.data.size(), t.data.begin());
    pos += t.data.size();
  }
}

void ControlParams::initialize(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto fill = [&](int index, int fan_in) {
    Tensor& t = tensors_[index];
    const double sd = 1.0 / std::sqrt(static_cast<double>(fan_in) * static_cast<double>(t.data.size()));
    for (double& v : t.data) v = sd * normal(rng);
  };
  const NetConfig& cfg = cfg_;
  for (int n = 0; n < cfg.blocks(); ++n) {
    const BlockLayout& b = blocks_[n];
    for (int j = 1; j <= cfg.levels; ++j) {
      for (int l = 1; l <= cfg.L(j); ++l) {
        for (const auto& row : b.left_kernels[j - 1][l - 1]) {
          for (int idx : row) fill(idx, cfg.left_fan_in(j, l));
        }
      }
    }
    for (int j = 1; j <= cfg.levels - 1; ++j) {
      for (int l = 1; l <= cfg.L(j); ++l) {
        for (const auto& row : b.right_kernels[j - 1][l - 1]) {
          for (int idx : row) fill(idx, cfg.right_fan_in(j, l));
        }
      }
    }
    for (int idx : b.final_kernels) fill(idx, cfg.c(1));
  }
  for (int idx : init_kernels_) fill(idx, 3);
}

std::uint64_t ControlParams::hash() const {
  std::uint64_t h = 1469598103934665603ULL;
  for (const Tensor& t : tensors_) {
    const auto* bytes = reinterpret_cast<const unsigned char*>(t.data.data());
    for (std::size_t i = 0; i < t.data.size() * sizeof(double); ++i) {
      h ^= bytes[i];
      h *= 1099511628211ULL;
    }
  }
  return h;
}

bool ControlParams::all_finite() const {
  for (const Tensor& t : tensors_) {
    for (double v : t.data) {
      if (!std::isfinite(v)) return false;
    }
  }
  return true;
}

Gradients zero_gradients(const ControlParams& params) {
  Gradients g;
  g.reserve(params.tensors().size());
  for (const Tensor& t : params.tensors()) g.emplace_back(t.data.size(), 0.0);
  return g;
}

std::vector<double> flatten_trainable(const Gradients& g, const ControlParams& params) {
  if (g.size() != params.tensors().size()) throw ShapeError("gradient table does not match the parameters");
  std::vector<double> out;
  out.reserve(params.trainable_count());
  for (size_t i = 0; i < g.size(); ++i) {
    if (params.tensors()[i].trainable) out.insert(out.end(), g[i].begin(), g[i].end());
  }
  return out;
}

}  // namespace pmg

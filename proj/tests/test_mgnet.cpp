#include <doctest.h>

#include <cmath>
#include <random>

#include "pottsmg/errors.hpp"
#include "pottsmg/mgnet.hpp"

using namespace pmg;

namespace {

Field random_field(int level, int rows, int cols, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Field f(level, rows, cols);
  for (double& v : f.values) v = u(rng);
  return f;
}

Kernel random_kernel(int r, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 0.3);
  Kernel k(r);
  for (double& w : k.weights) w = n(rng);
  return k;
}

Image random_image(int rows, int cols, unsigned seed) {
  std::mt19937_64 rng(seed);
  Image img;
  for (int s = 0; s < 3; ++s) img.channels.push_back(random_field(1, rows, cols, rng, 0.0, 1.0));
  return img;
}

NetConfig small_config(Variant v = Variant::PottsMG) {
  NetConfig cfg;
  cfg.levels = 3;
  cfg.substeps = {2, 1, 2};
  cfg.widths = {2, 3, 2};
  cfg.time_steps = 2;
  cfg.variant = v;
  cfg.radius_default = 2;
  return cfg;
}

// Randomizes every tensor, including batch-norm affine terms, running
// statistics and skip weights, so no stage of the forward is trivial.
ControlParams random_params(const NetConfig& cfg, unsigned seed) {
  ControlParams theta(cfg);
  theta.initialize(seed);
  std::mt19937_64 rng(seed + 1000);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (Tensor& t : theta.tensors()) {
    const std::string& n = t.name;
    if (n.find(".bn.") != std::string::npos || n.find("omega") != std::string::npos ||
        n.find(".B") != std::string::npos || n.find("bstar") != std::string::npos) {
      for (double& v : t.data) v = 0.2 + 0.6 * u(rng);
    }
  }
  return theta;
}

Kernel kernel_at(const ControlParams& theta, int idx) {
  const auto& w = theta.tensors()[idx].data;
  const int r = static_cast<int>(std::lround((std::sqrt(static_cast<double>(w.size())) - 1) / 2));
  return Kernel(r, w);
}

std::vector<Kernel> kernels_at(const ControlParams& theta, const std::vector<int>& idx) {
  std::vector<Kernel> out;
  for (int i : idx) out.push_back(kernel_at(theta, i));
  return out;
}

Field lerp(double w, const Field& a, const Field& b) {
  Field out = Field::like(a);
  for (int i = 0; i < a.size(); ++i) out.values[i] = w * a.values[i] + (1 - w) * b.values[i];
  return out;
}

Field mean_of(const std::vector<Field>& xs) {
  Field out = Field::like(xs[0]);
  for (const Field& x : xs)
    for (int i = 0; i < x.size(); ++i) out.values[i] += x.values[i];
  for (double& v : out.values) v /= static_cast<double>(xs.size());
  return out;
}

// Single-image forward written against the Field API (eval-mode batch norm).
Field reference_forward(const Image& f, const ControlParams& theta) {
  const NetConfig& cfg = theta.config();
  const Hierarchy hier = build_hierarchy(f.rows(), f.cols(), cfg.levels);
  const PottsParams pp = potts_params(cfg);
  const double c1 = activation_c1(cfg);
  Field u = Field::like(f.channels[0]);
  for (int s = 0; s < 3; ++s) {
    const Field c = conv2d(f.channels[s], kernel_at(theta, theta.init_kernels()[s]));
    for (int i = 0; i < u.size(); ++i) u.values[i] += c.values[i];
  }
  auto bn = [&](Field x, const BatchNormSlot& slot) {
    if (!cfg.batchnorm) return x;
    const auto& run = theta.tensors()[slot.running].data;
    const double g = theta.tensors()[slot.gamma].data[0], b = theta.tensors()[slot.beta].data[0];
    for (double& v : x.values) v = g * (v - run[0]) / std::sqrt(run[1] + 1e-5) + b;
    return x;
  };
  for (int n = 0; n < cfg.time_steps; ++n) {
    const BlockLayout& b = theta.block(n);
    const int J = cfg.levels;
    std::vector<std::vector<Field>> left(J + 1);
    std::vector<Field> cur{u};
    for (int j = 1; j <= J; ++j) {
      if (j > 1)
        for (Field& x : cur) x = downsample(hier, x, cfg.pool);
      for (int l = 1; l <= cfg.L(j); ++l) {
        std::vector<Field> next;
        for (int k = 1; k <= cfg.c(j); ++k) {
          const Field lin = block_linear(cur, kernels_at(theta, b.left_kernels[j - 1][l - 1][k - 1]),
                                         bias_eval(theta, f, n, j, l, k, false), left_gamma(cfg, j), cfg.dt);
          next.push_back(activation_fixed_point(bn(lin, b.left_bn[j - 1][l - 1][k - 1]), c1, 0.0, pp, cfg.act_iters));
        }
        cur = std::move(next);
      }
      left[j] = cur;
    }
    std::vector<Field> rel = left[J];
    for (int j = J - 1; j >= 1; --j) {
      std::vector<Field> up;
      for (const Field& x : rel) up.push_back(upsample(hier, x));
      const double w = theta.tensors()[b.skip[j - 1]].data[0];
      if (cfg.variant == Variant::UNetSkip) {
        const std::vector<Field>& v = left[j];
        const size_t width = std::max(up.size(), v.size());
        const Field up_mean = mean_of(up), v_mean = mean_of(v);
        cur.clear();
        for (size_t k = 0; k < width; ++k) {
          cur.push_back(lerp(w, k < up.size() ? up[k] : up_mean, k < v.size() ? v[k] : v_mean));
        }
      } else {
        cur = up;
      }
      for (int l = 1; l <= cfg.L(j); ++l) {
        std::vector<Field> next;
        for (int k = 1; k <= cfg.c(j); ++k) {
          const Field lin = block_linear(cur, kernels_at(theta, b.right_kernels[j - 1][l - 1][k - 1]),
                                         bias_eval(theta, f, n, j, l, k, true), right_gamma(cfg, j), cfg.dt);
          next.push_back(activation_fixed_point(bn(lin, b.right_bn[j - 1][l - 1][k - 1]), c1, 0.0, pp, cfg.act_iters));
        }
        cur = std::move(next);
      }
      rel.clear();
      for (int k = 0; k < cfg.c(j); ++k) {
        rel.push_back(cfg.variant == Variant::PottsMG ? lerp(w, cur[k], left[j][k]) : cur[k]);
      }
    }
    Bias fb;
    fb.scalar = theta.tensors()[b.final_bias].data[0];
    const Field lin = block_linear(rel, kernels_at(theta, b.final_kernels), fb, 1.0, cfg.dt);
    u = activation_fixed_point(lin, c1, cfg.eta, pp, cfg.act_iters);
  }
  return u;
}

std::vector<SubstepTrace> trace_of(const ControlParams& theta, const Image& img, ad::Tape& tape) {
  std::vector<SubstepTrace> trace;
  ForwardOptions opt;
  opt.trace = &trace;
  record_forward(tape, theta, make_batch({&img}), opt);
  return trace;
}

}  // namespace

TEST_CASE("kappa examples") {
  NetConfig a;
  a.levels = 1;
  a.substeps = {1};
  a.widths = {1};
  CHECK(kappa(a) == doctest::Approx(2.0).epsilon(1e-15));
  NetConfig b;
  b.levels = 2;
  b.substeps = {1, 1};
  b.widths = {1, 1};
  CHECK(kappa(b) == doctest::Approx(3.0).epsilon(1e-15));
  NetConfig c = small_config();
  const double k0 = kappa(c);
  for (int j = 0; j < c.levels; ++j) {
    NetConfig d = c;
    d.substeps[j] += 1;
    CHECK(kappa(d) > k0);
  }
}

TEST_CASE("block step with zero kernels and bias") {
  NetConfig cfg;
  std::mt19937_64 rng(1);
  const Field u = random_field(1, 6, 6, rng, -2.0, 3.0);
  const Field out = block_step({u}, {Kernel(2)}, Bias{}, 7.0, cfg);
  for (int i = 0; i < u.size(); ++i) {
    const double want = 1.0 / (1.0 + std::exp((0.5 - u.values[i]) / (cfg.epsilon * cfg.dt)));
    CHECK(out.values[i] == doctest::Approx(want).epsilon(1e-14));
  }
}

TEST_CASE("block step output is inside the unit interval") {
  NetConfig cfg;
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 5; ++trial) {
    std::vector<Field> xs;
    std::vector<Kernel> ks;
    for (int s = 0; s < 3; ++s) {
      xs.push_back(random_field(2, 5, 7, rng, -50.0, 50.0));
      ks.push_back(random_kernel(1, rng));
    }
    Bias b;
    b.scalar = 3.0;
    for (double v : block_step(xs, ks, b, 64.0, cfg).values) {
      CHECK(v > 0.0);
      CHECK(v < 1.0);
    }
  }
}

TEST_CASE("block linear rejects mismatched inputs") {
  std::mt19937_64 rng(3);
  const Field a = random_field(1, 4, 4, rng);
  const Field b = random_field(2, 2, 2, rng);
  CHECK_THROWS_AS(block_linear({a, b}, {Kernel(1), Kernel(1)}, Bias{}, 1.0, 0.5), ShapeError);
  CHECK_THROWS_AS(block_linear({a}, {Kernel(1), Kernel(1)}, Bias{}, 1.0, 0.5), ShapeError);
}

TEST_CASE("block equals a conv-net layer with identity-shifted kernels") {
  std::mt19937_64 rng(4);
  std::uniform_int_distribution<int> width(1, 4);
  for (int trial = 0; trial < 20; ++trial) {
    const int c = width(rng);
    const double gamma = 1.0 + 10.0 * std::uniform_real_distribution<double>(0, 1)(rng);
    const double dt = 0.5;
    std::vector<Field> xs;
    std::vector<Kernel> a_hat, w;
    for (int s = 0; s < c; ++s) {
      xs.push_back(random_field(1, 9, 7, rng));
      a_hat.push_back(random_kernel(2, rng));
      w.push_back((1.0 / c) * make_identity(0) + gamma * dt * a_hat.back());
    }
    Bias b;
    b.field = random_field(1, 9, 7, rng);
    const Field block = block_linear(xs, a_hat, b, gamma, dt);
    Field net = Field::like(xs[0]);
    for (int s = 0; s < c; ++s) {
      const Field y = conv2d(xs[s], w[s]);
      for (int i = 0; i < net.size(); ++i) net.values[i] += y.values[i];
    }
    for (int i = 0; i < net.size(); ++i) net.values[i] += gamma * dt * b.field->values[i];
    for (int i = 0; i < net.size(); ++i) CHECK(std::abs(net.values[i] - block.values[i]) <= 1e-12);
  }
}

TEST_CASE("every recorded substep matches the conv-net form") {
  for (Variant v : {Variant::PottsMG, Variant::UNetSkip, Variant::SegNet}) {
    const ControlParams theta = random_params(small_config(v), 5);
    const Image img = random_image(8, 12, 6);
    ad::Tape tape;
    const auto trace = trace_of(theta, img, tape);
    for (const SubstepTrace& s : trace) {
      const auto sh = tape.shape(s.linear);
      Field net(1, sh.rows, sh.cols);
      for (size_t q = 0; q < s.inputs.size(); ++q) {
        const auto x = tape.value(s.inputs[q]);
        const auto kw = tape.value(s.kernels[q]);
        const Kernel a(static_cast<int>(std::lround((std::sqrt(double(kw.size())) - 1) / 2)),
                       std::vector<double>(kw.begin(), kw.end()));
        const Kernel w = (1.0 / s.fan_in) * make_identity(0) + s.gamma * theta.config().dt * a;
        const Field y = conv2d(Field(1, sh.rows, sh.cols, std::vector<double>(x.begin(), x.end())), w);
        for (int i = 0; i < net.size(); ++i) net.values[i] += y.values[i];
      }
      const double step = s.gamma * theta.config().dt;
      if (s.bias_field != ad::kNone) {
        const auto bf = tape.value(s.bias_field);
        for (int i = 0; i < net.size(); ++i) net.values[i] += step * bf[i];
      }
      if (s.bias_scalar != ad::kNone) {
        for (double& x : net.values) x += step * tape.value(s.bias_scalar)[0];
      }
      const auto lin = tape.value(s.linear);
      double worst = 0.0;
      for (int i = 0; i < net.size(); ++i) worst = std::max(worst, std::abs(net.values[i] - lin[i]));
      CHECK(worst <= 1e-12);
    }
  }
}

TEST_CASE("tape forward equals the field-level reference forward") {
  for (Variant v : {Variant::PottsMG, Variant::UNetSkip, Variant::SegNet}) {
    for (PoolMode pool : {PoolMode::Max, PoolMode::Average}) {
      NetConfig cfg = small_config(v);
      cfg.pool = pool;
      const ControlParams theta = random_params(cfg, 7);
      const Image img = random_image(16, 8, 8);
      const Field got = forward(img, theta);
      const Field want = reference_forward(img, theta);
      REQUIRE(got.size() == want.size());
      double worst = 0.0;
      for (int i = 0; i < got.size(); ++i) worst = std::max(worst, std::abs(got.values[i] - want.values[i]));
      CHECK(worst <= 1e-12);
    }
  }
  NetConfig plain = small_config();
  plain.batchnorm = false;
  plain.kappa_c1 = true;
  const ControlParams theta = random_params(plain, 9);
  const Image img = random_image(8, 8, 10);
  const Field got = forward(img, theta);
  const Field want = reference_forward(img, theta);
  for (int i = 0; i < got.size(); ++i) CHECK(std::abs(got.values[i] - want.values[i]) <= 1e-12);
}

TEST_CASE("one substep per level and branch when every L_j is 1") {
  NetConfig cfg;
  cfg.levels = 3;
  cfg.substeps = {1, 1, 1};
  cfg.widths = {2, 3, 4};
  cfg.time_steps = 2;
  const ControlParams theta = random_params(cfg, 11);
  const Image img = random_image(8, 8, 12);
  ad::Tape tape;
  const auto trace = trace_of(theta, img, tape);
  int left = 0, right = 0, fin = 0;
  for (const auto& s : trace) {
    CHECK(s.l <= 1);
    if (s.branch == Branch::Left) ++left;
    if (s.branch == Branch::Right) ++right;
    if (s.branch == Branch::Final) ++fin;
  }
  CHECK(left == 2 * (2 + 3 + 4));
  CHECK(right == 2 * (2 + 3));
  CHECK(fin == 2);
  // Execution order per time step: encoder levels ascending, decoder descending.
  std::vector<std::pair<int, Branch>> order;
  for (const auto& s : trace) {
    if (s.n != 0) continue;
    if (order.empty() || order.back() != std::pair{s.j, s.branch}) order.emplace_back(s.j, s.branch);
  }
  const std::vector<std::pair<int, Branch>> want{{1, Branch::Left},  {2, Branch::Left},  {3, Branch::Left},
                                                 {2, Branch::Right}, {1, Branch::Right}, {0, Branch::Final}};
  CHECK(order == want);
}

TEST_CASE("substep fan-in follows the channel rule") {
  for (Variant v : {Variant::PottsMG, Variant::UNetSkip, Variant::SegNet}) {
    const NetConfig cfg = small_config(v);
    const ControlParams theta = random_params(cfg, 13);
    const Image img = random_image(8, 8, 14);
    ad::Tape tape;
    for (const auto& s : trace_of(theta, img, tape)) {
      if (s.branch == Branch::Left) CHECK(s.fan_in == cfg.left_fan_in(s.j, s.l));
      if (s.branch == Branch::Right) CHECK(s.fan_in == cfg.right_fan_in(s.j, s.l));
      if (s.branch == Branch::Final) CHECK(s.fan_in == cfg.c(1));
      CHECK(static_cast<int>(s.inputs.size()) == s.fan_in);
    }
  }
}

TEST_CASE("time-scale factors add up to kappa") {
  const NetConfig cfg = small_config();
  const ControlParams theta = random_params(cfg, 15);
  const Image img = random_image(8, 8, 16);
  ad::Tape tape;
  double total = 0.0;
  for (const auto& s : trace_of(theta, img, tape)) {
    if (s.n == 0) total += 1.0 / s.gamma;
  }
  CHECK(total == doctest::Approx(kappa(cfg)).epsilon(1e-12));
}

TEST_CASE("output shape and level sizes for J = 2 on 16x16") {
  NetConfig cfg;
  cfg.levels = 2;
  cfg.substeps = {1, 1};
  cfg.widths = {2, 2};
  cfg.time_steps = 1;
  const ControlParams theta = random_params(cfg, 17);
  const Image img = random_image(16, 16, 18);
  const Field out = forward(img, theta);
  CHECK(out.rows == 16);
  CHECK(out.cols == 16);
  ad::Tape tape;
  for (const auto& s : trace_of(theta, img, tape)) {
    const auto sh = tape.shape(s.linear);
    const int side = s.j == 2 ? 8 : 16;
    CHECK(sh.rows == side);
    CHECK(sh.cols == side);
  }
}

TEST_CASE("outputs are strictly inside the unit interval for every variant") {
  for (Variant v : {Variant::PottsMG, Variant::UNetSkip, Variant::SegNet}) {
    NetConfig cfg = small_config(v);
    cfg.time_steps = 4;
    ControlParams theta = random_params(cfg, 19);
    for (Tensor& t : theta.tensors())
      if (t.trainable)
        for (double& x : t.data) x *= 5.0;
    const Image img = random_image(8, 8, 20);
    for (double p : forward(img, theta).values) {
      CHECK(p > 0.0);
      CHECK(p < 1.0);
    }
  }
}

TEST_CASE("no time steps returns the initialization layer") {
  NetConfig cfg = small_config();
  cfg.time_steps = 0;
  const ControlParams theta = random_params(cfg, 21);
  const Image img = random_image(8, 8, 22);
  const Field out = forward(img, theta);
  Field want = Field::like(img.channels[0]);
  for (int s = 0; s < 3; ++s) {
    const Field c = conv2d(img.channels[s], kernel_at(theta, theta.init_kernels()[s]));
    for (int i = 0; i < want.size(); ++i) want.values[i] += c.values[i];
  }
  for (int i = 0; i < want.size(); ++i) CHECK(out.values[i] == doctest::Approx(want.values[i]).epsilon(1e-14));
}

TEST_CASE("forward is deterministic") {
  const ControlParams theta = random_params(small_config(), 23);
  const Image img = random_image(8, 8, 24);
  CHECK(forward(img, theta).values == forward(img, theta).values);
  ad::Tape tape;
  record_forward(tape, theta, make_batch({&img}));
  CHECK(tape.replay());
}

TEST_CASE("batched forward equals per-image forward in eval mode") {
  const ControlParams theta = random_params(small_config(), 25);
  const Image a = random_image(8, 8, 26), b = random_image(8, 8, 27);
  ad::Tape tape;
  const TapeForward fw = record_forward(tape, theta, make_batch({&a, &b}));
  const auto v = tape.value(fw.output);
  const Field fa = forward(a, theta), fb = forward(b, theta);
  for (int i = 0; i < 64; ++i) {
    CHECK(v[i] == fa.values[i]);
    CHECK(v[64 + i] == fb.values[i]);
  }
}

TEST_CASE("UNet skip and PottsMG agree on a single level") {
  NetConfig cfg;
  cfg.levels = 1;
  cfg.substeps = {1};
  cfg.widths = {1};
  cfg.time_steps = 2;
  NetConfig ucfg = cfg;
  ucfg.variant = Variant::UNetSkip;
  const ControlParams p = random_params(cfg, 29);
  ControlParams u(ucfg);
  u.unflatten(p.flatten());
  const Image img = random_image(8, 8, 30);
  const Field a = forward(img, p), b = forward(img, u);
  for (int i = 0; i < a.size(); ++i) CHECK(std::abs(a.values[i] - b.values[i]) <= 1e-10);
}

TEST_CASE("UNet skip and PottsMG differ only in the decoder") {
  NetConfig cfg;
  cfg.levels = 2;
  cfg.substeps = {1, 1};
  cfg.widths = {1, 1};
  cfg.time_steps = 1;
  NetConfig ucfg = cfg;
  ucfg.variant = Variant::UNetSkip;
  const ControlParams p = random_params(cfg, 31);
  ControlParams u(ucfg);
  u.unflatten(p.flatten());
  const Image img = random_image(8, 8, 32);
  ad::Tape tp, tu;
  const auto a = trace_of(p, img, tp);
  const auto b = trace_of(u, img, tu);
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i) {
    if (a[i].branch != Branch::Left) continue;
    const auto x = tp.value(a[i].linear);
    const auto y = tu.value(b[i].linear);
    for (size_t q = 0; q < x.size(); ++q) CHECK(x[q] == y[q]);
  }
}

TEST_CASE("bias evaluation") {
  const NetConfig cfg = small_config();
  ControlParams theta(cfg);
  const Image img = random_image(8, 8, 33);
  const Bias zero = bias_eval(theta, img, 0, 2, 1, 1, false);
  REQUIRE(zero.field);
  CHECK(zero.field->rows == 4);
  for (double v : zero.field->values) CHECK(v == 0.0);

  theta = random_params(cfg, 34);
  const Bias b = bias_eval(theta, img, 0, 1, 2, 2, false);
  CHECK_FALSE(b.field);
  const int idx = theta.block(0).left_bias_scalars[0][1][1];
  CHECK(b.scalar == theta.tensors()[idx].data[0]);
  CHECK(bias_eval(theta, random_image(8, 8, 35), 0, 1, 2, 2, false).scalar == b.scalar);

  Image flat;
  for (int s = 0; s < 3; ++s) flat.channels.emplace_back(1, 16, 16, 0.4);
  const Bias c = bias_eval(theta, flat, 1, 1, 1, 1, true);
  double want = 0.0;
  for (int i : theta.block(1).right_bias_kernels[0][0]) want += 0.4 * kernel_at(theta, i).sum();
  // Away from the zero-padded border the convolution of a constant is constant.
  for (int r = 2; r < 14; ++r)
    for (int col = 2; col < 14; ++col) CHECK(c.field->at(r, col) == doctest::Approx(want).epsilon(1e-13));
  CHECK_THROWS_AS(bias_eval(theta, img, 0, 3, 1, 1, true), LevelError);
}

TEST_CASE("input validation") {
  const ControlParams theta = random_params(small_config(), 36);
  Image two;
  two.channels.assign(2, Field(1, 8, 8));
  CHECK_THROWS_AS(forward(two, theta), InputError);
  CHECK_THROWS_AS(forward(random_image(6, 8, 37), theta), ShapeError);
}

#include <doctest.h>

#include <cmath>

#include "pottsmg/errors.hpp"
#include "pottsmg/split.hpp"

using namespace pmg;
using namespace pmg::split;

namespace {

Mat scalar(double s) { return Mat::Constant(1, 1, s); }

Substep flat_substep(ExplicitOp a, ImplicitOp s, Forcing f) {
  Substep out;
  out.A = {{std::move(a)}};
  out.S = {std::move(s)};
  out.f = {std::move(f)};
  return out;
}

SchemeSpec scalar_flat(int M, double a, double s, double f = 0.0) {
  SchemeSpec spec;
  spec.dim = 1;
  for (int m = 0; m < M; ++m) {
    spec.substeps.push_back(flat_substep(matrix_explicit(scalar(a)), matrix_implicit(scalar(s)),
                                         constant_forcing(Vec::Constant(1, f))));
  }
  spec.constant_coefficients = true;
  spec.generator = scalar(M * (a + s));
  spec.forcing = Vec::Constant(1, M * f);
  return spec;
}

// Same operators as a random hybrid instance but every width forced to one.
SchemeSpec random_width_one(std::uint64_t seed, int M, int dim) {
  SchemeSpec spec;
  spec.dim = dim;
  for (int m = 0; m < M; ++m) {
    const Mat a = 0.3 * random_spd(dim, seed * 10 + m);
    const Mat s = 0.3 * random_spd(dim, seed * 10 + m + 5);
    Vec f(dim);
    for (int i = 0; i < dim; ++i) f(i) = std::sin(seed + m + i);
    spec.substeps.push_back(flat_substep(matrix_explicit(a), matrix_implicit(s), constant_forcing(f)));
  }
  return spec;
}

SchemeSpec zero_general(int dim, int J, int width) {
  SchemeSpec spec;
  spec.dim = dim;
  int incoming = 1;
  for (int j = 1; j <= 2 * J - 1; ++j) {
    Substep s;
    s.width = width;
    s.fan_in = incoming;
    for (int k = 0; k < width; ++k) {
      s.A.push_back(std::vector<ExplicitOp>(incoming, zero_explicit(dim)));
      s.S.push_back(zero_implicit(dim));
      s.f.push_back(zero_forcing(dim));
    }
    spec.parts.push_back({s});
    incoming = width;
  }
  FinalStep fin;
  fin.A = std::vector<ExplicitOp>(width, zero_explicit(dim));
  fin.S = zero_implicit(dim);
  fin.f = zero_forcing(dim);
  spec.final_step = fin;
  return spec;
}

Vec test_state(int dim) {
  Vec u(dim);
  for (int i = 0; i < dim; ++i) u(i) = 0.3 + 0.7 * std::cos(1.7 * i);
  return u;
}

}  // namespace

TEST_CASE("zero systems are the identity for every stepper") {
  const Vec u = test_state(3);
  SchemeSpec flat;
  flat.dim = 3;
  for (int m = 0; m < 3; ++m) flat.substeps.push_back(flat_substep(zero_explicit(3), zero_implicit(3), zero_forcing(3)));
  CHECK(parallel_step(u, flat, 0.1, 0.0) == u);
  CHECK(sequential_step(u, flat, 0.1, 0.0) == u);
  CHECK(hybrid_step(u, flat, 0.1, 0.0) == u);
  for (int J : {1, 2, 3}) CHECK(general_hybrid_step(u, zero_general(3, J, 2), 0.1, 0.0) == u);
}

TEST_CASE("parallel and sequential steps on a scalar implicit system") {
  const double dt = 0.1, s = 1.7, u0 = 0.9;
  const Vec u = Vec::Constant(1, u0);
  const SchemeSpec spec = scalar_flat(2, 0.0, s);
  CHECK(parallel_step(u, spec, dt, 0.0)(0) == doctest::Approx(u0 / (1 + 2 * dt * s)).epsilon(1e-15));
  CHECK(sequential_step(u, spec, dt, 0.0)(0) ==
        doctest::Approx(u0 / ((1 + dt * s) * (1 + dt * s))).epsilon(1e-15));
  const SchemeSpec one = scalar_flat(1, 0.4, s, 0.2);
  const double semi = (u0 - dt * (0.4 * u0 + 0.2)) / (1 + dt * s);
  CHECK(parallel_step(u, one, dt, 0.0)(0) == doctest::Approx(semi).epsilon(1e-15));
  CHECK(sequential_step(u, one, dt, 0.0)(0) == parallel_step(u, one, dt, 0.0)(0));
}

TEST_CASE("hybrid step examples") {
  const Vec u = Vec::Constant(1, 1.0);
  CHECK(hybrid_step(u, scalar_flat(1, 1.0, 1.0), 0.1, 0.0)(0) == doctest::Approx(0.9 / 1.1).epsilon(1e-15));
  const SchemeSpec euler = scalar_flat(1, 1.3, 0.0, 0.25);
  CHECK(hybrid_step(u, euler, 0.1, 0.0)(0) == doctest::Approx(1.0 - 0.1 * (1.3 + 0.25)).epsilon(1e-15));
}

TEST_CASE("hybrid with unit widths equals sequential") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const SchemeSpec spec = random_width_one(seed, 3, 4);
    Vec a = test_state(4), b = test_state(4);
    for (int n = 0; n < 10; ++n) {
      a = hybrid_step(a, spec, 0.05, n * 0.05);
      b = sequential_step(b, spec, 0.05, n * 0.05);
    }
    CHECK((a - b).cwiseAbs().maxCoeff() <= 1e-12);
  }
}

TEST_CASE("steppers commute with scaling of state and forcing") {
  const double alpha = -2.5;
  InstanceOptions opt;
  const SchemeSpec h = random_hybrid_instance(3, opt);
  const SchemeSpec g = random_general_instance(3, 2, opt);
  auto scaled = [&](const SchemeSpec& spec) {
    SchemeSpec out = spec;
    auto scale_f = [alpha](Forcing f) { return Forcing([f, alpha](double t) { return (alpha * f(t)).eval(); }); };
    for (auto& s : out.substeps)
      for (auto& f : s.f) f = scale_f(f);
    for (auto& part : out.parts)
      for (auto& s : part)
        for (auto& f : s.f) f = scale_f(f);
    if (out.final_step) out.final_step->f = scale_f(out.final_step->f);
    return out;
  };
  const Vec u = test_state(opt.dim);
  const Vec hu = hybrid_step(u, h, 0.1, 0.0);
  const Vec hs = hybrid_step(alpha * u, scaled(h), 0.1, 0.0);
  CHECK((hs - alpha * hu).cwiseAbs().maxCoeff() <= 1e-12);
  const Vec gu = general_hybrid_step(u, g, 0.1, 0.0);
  const Vec gs = general_hybrid_step(alpha * u, scaled(g), 0.1, 0.0);
  CHECK((gs - alpha * gu).cwiseAbs().maxCoeff() <= 1e-12);
  const SchemeSpec f = random_width_one(4, 2, 4);
  CHECK((sequential_step(alpha * u, scaled(f), 0.1, 0.0) - alpha * sequential_step(u, f, 0.1, 0.0))
            .cwiseAbs()
            .maxCoeff() <= 1e-12);
  CHECK((parallel_step(alpha * u, scaled(f), 0.1, 0.0) - alpha * parallel_step(u, f, 0.1, 0.0))
            .cwiseAbs()
            .maxCoeff() <= 1e-12);
}

TEST_CASE("relaxation averages mirrored states") {
  const Vec a = test_state(3);
  const Vec b = Vec::Constant(3, 2.0);
  CHECK((relax(a, b) - 0.5 * (a + b)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("general scheme with one level and zero final step equals hybrid") {
  InstanceOptions opt;
  const SchemeSpec g = random_general_instance(7, 1, opt);
  SchemeSpec collapsed = g;
  collapsed.final_step->A = std::vector<ExplicitOp>(opt.width, zero_explicit(opt.dim));
  collapsed.final_step->S = zero_implicit(opt.dim);
  collapsed.final_step->f = zero_forcing(opt.dim);
  SchemeSpec flat;
  flat.dim = opt.dim;
  flat.substeps = g.parts[0];
  const Vec u = test_state(opt.dim);
  CHECK((general_hybrid_step(u, collapsed, 0.1, 0.0) - hybrid_step(u, flat, 0.1, 0.0)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("explicit Euler on u' = -u converges with order one") {
  const SchemeSpec spec = scalar_flat(1, 1.0, 0.0);
  const Vec u0 = Vec::Constant(1, 1.0);
  CHECK(exact_linear_solution(spec.generator, spec.forcing, u0, 1.0)(0) == doctest::Approx(std::exp(-1.0)).epsilon(1e-13));
  const OrderResult r = observed_order(hybrid_step, spec, u0, 1.0, {0.1, 0.05, 0.025});
  CHECK(r.order >= 0.8);
  CHECK(r.order <= 1.2);
}

TEST_CASE("random hybrid and general instances converge with order one") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    InstanceOptions opt;
    const Vec u0 = test_state(opt.dim);
    const OrderResult h = observed_order(hybrid_step, random_hybrid_instance(seed, opt), u0, 1.0, {0.1, 0.05, 0.025, 0.0125});
    CHECK(h.order >= 0.8);
    CHECK(h.order <= 1.2);
    opt.time_dependent = true;
    const OrderResult g =
        observed_order(general_hybrid_step, random_general_instance(seed, 2, opt), u0, 1.0, {0.1, 0.05, 0.025, 0.0125});
    CHECK(g.order >= 0.8);
    CHECK(g.order <= 1.2);
  }
}

TEST_CASE("larger random instances keep order one") {
  InstanceOptions opt;
  opt.dim = 6;
  opt.substeps = 3;
  opt.width = 3;
  const Vec u0 = test_state(opt.dim);
  for (std::uint64_t seed = 11; seed <= 13; ++seed) {
    CHECK(observed_order(hybrid_step, random_hybrid_instance(seed, opt), u0, 1.0, {0.1, 0.05, 0.025, 0.0125}).order >= 0.8);
  }
}

TEST_CASE("order is undefined for exact schemes") {
  const SchemeSpec spec = scalar_flat(1, 0.0, 0.0);
  CHECK_THROWS_AS(observed_order(hybrid_step, spec, Vec::Constant(1, 1.0), 1.0, {0.1, 0.05}), OrderUndefinedError);
  CHECK_THROWS_AS(observed_order(hybrid_step, spec, Vec::Constant(1, 1.0), 1.0, {0.1, 0.03}), UsageError);
}

TEST_CASE("matrix exponential") {
  Mat d = Mat::Zero(3, 3);
  d.diagonal() << -1.0, 0.5, 3.0;
  const Mat e = expm(d);
  CHECK(e(0, 0) == doctest::Approx(std::exp(-1.0)).epsilon(1e-13));
  CHECK(e(1, 1) == doctest::Approx(std::exp(0.5)).epsilon(1e-13));
  CHECK(e(2, 2) == doctest::Approx(std::exp(3.0)).epsilon(1e-13));
  Mat rot(2, 2);
  rot << 0.0, -2.0, 2.0, 0.0;
  const Mat r = expm(rot);
  CHECK(r(0, 0) == doctest::Approx(std::cos(2.0)).epsilon(1e-13));
  CHECK(r(1, 0) == doctest::Approx(std::sin(2.0)).epsilon(1e-13));
}

TEST_CASE("random SPD matrices have eigenvalues in range") {
  const Mat m = random_spd(5, 42);
  Eigen::SelfAdjointEigenSolver<Mat> es(m);
  CHECK(es.eigenvalues().minCoeff() >= 0.5 - 1e-12);
  CHECK(es.eigenvalues().maxCoeff() <= 2.0 + 1e-12);
}

TEST_CASE("spec validation") {
  InstanceOptions opt;
  SchemeSpec bad = random_hybrid_instance(1, opt);
  bad.substeps[0].fan_in = 2;  // first substep sees a single state
  CHECK_THROWS_AS(hybrid_step(test_state(opt.dim), bad, 0.1, 0.0), SpecError);
  SchemeSpec g = random_general_instance(1, 2, opt);
  g.parts[2].back().width = 1;
  CHECK_THROWS_AS(general_hybrid_step(test_state(opt.dim), g, 0.1, 0.0), SpecError);
  const SchemeSpec wide = random_hybrid_instance(1, opt);
  CHECK_THROWS_AS(parallel_step(test_state(opt.dim), wide, 0.1, 0.0), SpecError);
  SchemeSpec sing = scalar_flat(1, 0.0, -10.0);
  CHECK_THROWS_AS(sequential_step(Vec::Constant(1, 1.0), sing, 0.1, 0.0), LinearSolveError);
}

TEST_CASE("entropy resolvent matches the activation fixed point") {
  const ImplicitOp op = entropy_implicit(2.0, 300);
  const Vec rhs = test_state(4);
  const Vec x = op.resolve(0.0, 0.5, rhs);
  // x + 0.5 * eps * logit(x) = rhs
  const Vec back = x + 0.5 * op.apply(0.0, x);
  CHECK((back - rhs).cwiseAbs().maxCoeff() <= 1e-8);
}

#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "oracles.hpp"
#include "pottsmg/errors.hpp"
#include "pottsmg/potts.hpp"

using namespace pmg;

namespace {

Field random_unit_field(int n, unsigned seed, double lo = 0.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  Field f(1, n, n);
  for (double& v : f.values) v = u(rng);
  return f;
}

Field disk(int n, double radius) {
  Field f(1, n, n);
  const double c = n / 2.0;
  for (int r = 0; r < n; ++r)
    for (int col = 0; col < n; ++col) {
      const double dr = r + 0.5 - c, dc = col + 0.5 - c;
      f.at(r, col) = dr * dr + dc * dc <= radius * radius ? 1.0 : 0.0;
    }
  return f;
}

PottsParams params(double eps, double eta) {
  PottsParams p;
  p.epsilon = eps;
  p.eta = eta;
  return p;
}

// Root of (p - u)/(c1 dt) + eps ln(p/(1-p)) = 0 by bisection.
double bisect_root(double u, double c1dt, double eps) {
  double lo = 1e-300, hi = 1.0 - 1e-16;
  for (int i = 0; i < 300; ++i) {
    const double m = 0.5 * (lo + hi);
    const double f = (m - u) / c1dt + eps * std::log(m / (1 - m));
    (f > 0 ? hi : lo) = m;
  }
  return 0.5 * (lo + hi);
}

}  // namespace

TEST_CASE("td perimeter of empty and full regions is exactly zero") {
  CHECK(td_perimeter(Field(1, 16, 16, 0.0), 2.0) == 0.0);
  CHECK(td_perimeter(Field(1, 16, 16, 1.0), 2.0) == 0.0);
}

TEST_CASE("td perimeter of a disk approximates its circumference") {
  const double est = td_perimeter(disk(128, 16.0), 2.0);
  const double exact = 2.0 * std::numbers::pi * 16.0;
  CHECK(std::abs(est - exact) / exact <= 0.10);
}

TEST_CASE("td perimeter is invariant under region swap") {
  const Field u = random_unit_field(12, 3);
  Field w = Field::like(u);
  for (int i = 0; i < u.size(); ++i) w.values[i] = 1.0 - u.values[i];
  CHECK(td_perimeter(u, 1.0) == doctest::Approx(td_perimeter(w, 1.0)).epsilon(1e-12));
  Field bad = u;
  bad.values[5] = 1.5;
  CHECK_THROWS_AS(td_perimeter(bad, 1.0), DomainError);
}

TEST_CASE("potts energy examples") {
  const PottsParams p = params(1.7, 0.0);
  const Field half(1, 5, 6, 0.5);
  CHECK(potts_energy(half, Field(1, 5, 6, 0.0), p) == doctest::Approx(-std::log(2.0) * 1.7 * 30).epsilon(1e-12));
  Field binary(1, 4, 4, 0.0);
  binary.values[3] = 1.0;
  CHECK(potts_energy(binary, Field(1, 4, 4, 0.0), params(3.0, 0.0)) == 0.0);
  PottsParams none = params(0.0, 0.0);
  const Field g(1, 4, 4, 0.25);
  CHECK(potts_energy(Field(1, 4, 4, 0.0), g, none) == 0.0);
  CHECK(potts_energy(Field(1, 4, 4, 0.3), g, none) > 0.0);
}

TEST_CASE("potts energy descends along projected gradient descent") {
  const PottsParams p = params(0.5, 1.0);
  const Field g = random_unit_field(4, 11, -1.0, 1.0);
  Field v(1, 4, 4, 0.5);
  double prev = potts_energy(v, g, p);
  for (int it = 0; it < 50; ++it) {
    const Field r = el_residual(v, g, p);
    for (int i = 0; i < v.size(); ++i) v.values[i] = std::clamp(v.values[i] - 0.02 * r.values[i], 1e-6, 1 - 1e-6);
    const double e = potts_energy(v, g, p);
    CHECK(e <= prev + 1e-12);
    prev = e;
  }
}

TEST_CASE("el residual examples") {
  const PottsParams p = params(0.7, 2.0);
  const Field half(1, 6, 6, 0.5);
  const Field zero(1, 6, 6, 0.0);
  for (double r : el_residual(half, zero, p).values) CHECK(r == 0.0);
  const Field g = random_unit_field(6, 5, -2.0, 2.0);
  const Field res = el_residual(half, g, p);
  for (int i = 0; i < g.size(); ++i) CHECK(res.values[i] == doctest::Approx(g.values[i]).epsilon(1e-15));

  const PottsParams q = params(0.7, 0.0);
  Field u = Field::like(g);
  for (int i = 0; i < g.size(); ++i) u.values[i] = sigmoid(-g.values[i] / q.epsilon);
  for (double r : el_residual(u, g, q).values) CHECK(std::abs(r) <= 1e-12);

  Field edge = half;
  edge.values[0] = 0.0;
  CHECK_THROWS_AS(el_residual(edge, zero, p), DomainError);
  edge.values[0] = 1.0;
  CHECK_THROWS_AS(el_residual(edge, zero, p), DomainError);
}

TEST_CASE("el residual is the gradient of the energy") {
  const PottsParams p = params(0.9, 1.5);
  const Field g = random_unit_field(5, 21, -1.0, 1.0);
  const Field v = random_unit_field(5, 22, 0.1, 0.9);
  const Field r = el_residual(v, g, p);
  const double h = 1e-6;
  for (int i = 0; i < v.size(); i += 3) {
    Field a = v, b = v;
    a.values[i] += h;
    b.values[i] -= h;
    const double fd = (potts_energy(a, g, p) - potts_energy(b, g, p)) / (2 * h);
    CHECK(fd == doctest::Approx(r.values[i]).epsilon(1e-6));
  }
}

TEST_CASE("sigmoid") {
  CHECK(sigmoid(0.0) == 0.5);
  for (double x : {-30.0, -2.5, 0.1, 4.0, 17.0}) CHECK(sigmoid(x) == doctest::Approx(1 - sigmoid(-x)).epsilon(1e-15));
  const double big = sigmoid(500.0);
  CHECK(big > 0.0);
  CHECK(big <= 1.0);
  CHECK(std::isfinite(sigmoid(-800.0)));
  CHECK(clamp_open_unit(sigmoid(500.0)) < 1.0);
  CHECK(clamp_open_unit(sigmoid(-800.0)) > 0.0);
}

TEST_CASE("activation: one iteration without the length term gives one half") {
  PottsParams p;
  for (unsigned seed = 1; seed <= 5; ++seed) {
    const Field u = random_unit_field(8, seed, -5.0, 5.0);
    for (double c1 : {1.0, 0.25, 3.0}) {
      const Field out = activation_fixed_point(u, c1, 0.0, p, 1);
      for (double v : out.values) CHECK(std::abs(v - 0.5) <= 1e-15);
    }
  }
}

TEST_CASE("activation: two iterations without the length term") {
  PottsParams p;
  p.epsilon = 1.3;
  p.dt = 0.4;
  const double c1 = 0.7;
  const Field u = random_unit_field(6, 9, -2.0, 2.0);
  const Field out = activation_fixed_point(u, c1, 0.0, p, 2);
  for (int i = 0; i < u.size(); ++i) {
    const double want = 1.0 / (1.0 + std::exp((0.5 - u.values[i]) / (p.epsilon * c1 * p.dt)));
    CHECK(out.values[i] == doctest::Approx(want).epsilon(1e-14));
  }
  const Field half(1, 4, 4, 0.5);
  for (int iters : {1, 2, 7}) {
    for (double v : activation_fixed_point(half, 1.0, 0.0, p, iters).values) CHECK(v == 0.5);
  }
}

TEST_CASE("activation converges to the entropy resolvent root") {
  PottsParams p;
  p.epsilon = 2.0;
  p.dt = 0.5;
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> d(-3.0, 3.0);
  for (int i = 0; i < 10; ++i) {
    const double u = d(rng);
    const Field out = activation_fixed_point(Field(1, 1, 1, u), 1.0, 0.0, p, 200);
    CHECK(std::abs(out.values[0] - bisect_root(u, p.dt, p.epsilon)) <= 1e-8);
  }
}

TEST_CASE("activation output stays strictly inside the unit interval") {
  PottsParams p;
  p.eta = 80.0;
  for (unsigned seed = 1; seed <= 3; ++seed) {
    const Field u = random_unit_field(10, seed, -1e3, 1e3);
    for (int iters : {1, 2, 5}) {
      for (double c2 : {0.0, 80.0}) {
        for (double v : activation_fixed_point(u, 1.0, c2, p, iters).values) {
          CHECK(v > 0.0);
          CHECK(v < 1.0);
        }
      }
    }
  }
  CHECK_THROWS_AS(activation_fixed_point(Field(1, 2, 2), 1.0, 0.0, p, 0), ParameterError);
}

TEST_CASE("energy minimizers sharpen as the entropy weight shrinks") {
  oracle::PottsMinimizer m;
  m.n = 4;
  m.eta = 1.0;
  m.r = 2;
  m.gk = oracle::gaussian(0.5, 2);
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> d(-1.0, 1.0);
  m.g.resize(16);
  for (double& x : m.g) x = d(rng);
  double prev = 1.0;
  for (double eps : {1.0, 0.1, 0.01}) {
    m.eps = eps;
    int sweeps = 0;
    const auto t = m.solve_logits(1e-10, 10000, &sweeps);
    CHECK(sweeps < 10000);
    const double dist = oracle::distance_to_binary(t);
    CHECK(dist < prev);
    prev = dist;

    // The library residual vanishes at the oracle's stationary point.
    PottsParams p = params(eps, 1.0);
    Field v(1, 4, 4), g(1, 4, 4, m.g);
    for (int i = 0; i < 16; ++i) v.values[i] = oracle::logistic(t[i]);
    bool interior = true;
    for (double x : v.values) interior = interior && x > 0.0 && x < 1.0;
    if (interior) {
      for (double r : el_residual(v, g, p).values) CHECK(std::abs(r) <= 1e-8);
    }
  }
}

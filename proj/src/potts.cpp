#include "pottsmg/potts.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "pottsmg/errors.hpp"

namespace pmg {

void PottsParams::validate() const {
  if (!(epsilon > 0.0)) throw ParameterError("epsilon must be > 0");
  if (!(eta >= 0.0)) throw ParameterError("eta must be >= 0");
  if (!(sigma > 0.0)) throw ParameterError("sigma must be > 0");
  if (!(dt > 0.0)) throw ParameterError("dt must be > 0");
  if (gaussian_radius < 1) throw ParameterError("Gaussian radius must be >= 1");
}

int default_gaussian_radius(double sigma) { return std::max(1, static_cast<int>(std::ceil(4.0 * sigma))); }

namespace {

void require_unit_interval(const Field& u, const char* what) {
  for (double v : u.values) {
    if (!(v >= 0.0 && v <= 1.0)) {
      throw DomainError(std::string(what) + ": value " + std::to_string(v) + " outside [0,1]");
    }
  }
}

void require_same_shape(const Field& a, const Field& b, const char* what) {
  if (a.rows != b.rows || a.cols != b.cols) throw ShapeError(std::string(what) + ": field shapes differ");
}

double xlogx(double x) { return x > 0.0 ? x * std::log(x) : 0.0; }

Field one_minus(const Field& u, double scale = 1.0) {
  Field out = Field::like(u);
  for (int i = 0; i < u.size(); ++i) out.values[i] = 1.0 - scale * u.values[i];
  return out;
}

}  // namespace

double td_perimeter(const Field& u, double sigma, int gaussian_radius, double h) {
  require_unit_interval(u, "td_perimeter");
  const Kernel g = make_gaussian(sigma, gaussian_radius);
  const Field outside = one_minus(u);
  const Field g_outside = conv2d(outside, g);
  const Field g_inside = conv2d(u, g);
  double total = 0.0;
  for (int i = 0; i < u.size(); ++i) {
    total += u.values[i] * g_outside.values[i] + outside.values[i] * g_inside.values[i];
  }
  return 0.5 * std::sqrt(std::numbers::pi / sigma) * h * h * total;
}

double td_perimeter(const Field& u, double sigma, double h) {
  return td_perimeter(u, sigma, default_gaussian_radius(sigma), h);
}

double potts_energy(const Field& v, const Field& g, const PottsParams& p, double h) {
  require_same_shape(v, g, "potts_energy");
  if (!v.all_finite() || !g.all_finite()) throw NumericInputError("potts_energy: non-finite input");
  double total = 0.0;
  Field length_term;
  if (p.eta != 0.0) length_term = conv2d(one_minus(v), p.gaussian());
  for (int i = 0; i < v.size(); ++i) {
    const double x = v.values[i];
    double e = x * g.values[i] + p.epsilon * (xlogx(x) + xlogx(1.0 - x));
    if (p.eta != 0.0) e += p.eta * x * length_term.values[i];
    total += e;
  }
  return h * h * total;
}

Field el_residual(const Field& u, const Field& g, const PottsParams& p) {
  require_same_shape(u, g, "el_residual");
  for (double v : u.values) {
    if (!(v > 0.0 && v < 1.0)) {
      throw DomainError("el_residual: value " + std::to_string(v) + " not strictly inside (0,1)");
    }
  }
  Field out = Field::like(u);
  Field length;
  if (p.eta != 0.0) length = conv2d(one_minus(u, 2.0), p.gaussian());
  for (int i = 0; i < u.size(); ++i) {
    const double x = u.values[i];
    double r = p.epsilon * std::log(x / (1.0 - x)) + g.values[i];
    if (p.eta != 0.0) r += p.eta * length.values[i];
    out.values[i] = r;
  }
  return out;
}

double clamp_open_unit(double p) {
  constexpr double lo = std::numeric_limits<double>::min();
  constexpr double hi = 1.0 - std::numeric_limits<double>::epsilon() / 2.0;
  return std::clamp(p, lo, hi);
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

std::vector<double> sigmoid(std::span<const double> x) {
  std::vector<double> out(x.size());
  for (size_t i = 0; i < x.size(); ++i) out[i] = sigmoid(x[i]);
  return out;
}

Field activation_fixed_point(const Field& u_bar, double c1, double c2, const PottsParams& p, int iters) {
  if (iters < 1) throw ParameterError("activation needs at least one iteration");
  if (!(c1 > 0.0)) throw ParameterError("activation C1 must be > 0");
  if (!(c2 >= 0.0)) throw ParameterError("activation C2 must be >= 0");
  if (!u_bar.all_finite()) throw NumericInputError("activation: non-finite input");
  const double inv_eps = 1.0 / p.epsilon;
  const double inv_c1dt = 1.0 / (c1 * p.dt);
  const Kernel g = c2 != 0.0 ? p.gaussian() : Kernel();
  Field cur = u_bar;
  Field next = Field::like(u_bar);
  for (int it = 0; it < iters; ++it) {
    Field length;
    if (c2 != 0.0) length = conv2d(one_minus(cur, 2.0), g);
    for (int i = 0; i < cur.size(); ++i) {
      double z = (cur.values[i] - u_bar.values[i]) * inv_c1dt;
      if (c2 != 0.0) z += c2 * length.values[i];
      next.values[i] = clamp_open_unit(sigmoid(-inv_eps * z));
    }
    std::swap(cur, next);
  }
  return cur;
}

}  // namespace pmg

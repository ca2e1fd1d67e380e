#pragma once

// Operator-splitting time steppers for
//
//   u_t + sum (A u + S u + f) = 0,
//
// with A treated explicitly at t^n and S implicitly at t^{n+1} through a
// resolvent callback. The engine is dimension-agnostic: states are flat
// vectors and operators are closures, so the same code runs the small
// matrix systems used to measure convergence order and any other linear or
// nonlinear resolvent (e.g. the entropy activation).

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "pottsmg/potts.hpp"

namespace pmg::split {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

struct ExplicitOp {
  std::function<Vec(double t, const Vec& u)> apply;
};

struct ImplicitOp {
  std::function<Vec(double t, const Vec& u)> apply;
  // Solves x + scale * S(t) x = rhs.
  std::function<Vec(double t, double scale, const Vec& rhs)> resolve;
};

using Forcing = std::function<Vec(double t)>;

// One sequential substep of width c with fan-in d:
//   A[k][s] for k < c, s < d;  S[k], f[k] for k < c.
struct Substep {
  int width = 1;
  int fan_in = 1;
  std::vector<std::vector<ExplicitOp>> A;
  std::vector<ImplicitOp> S;
  std::vector<Forcing> f;
};

struct FinalStep {
  std::vector<ExplicitOp> A;  // A*_s, one per per-k state of the last part
  ImplicitOp S;
  Forcing f;
};

struct SchemeSpec {
  int dim = 0;
  // Flat / hybrid form. Parallel and sequential steppers need width == fan_in == 1.
  std::vector<Substep> substeps;
  // General form: 2J-1 parts and the final step.
  std::vector<std::vector<Substep>> parts;
  std::optional<FinalStep> final_step;

  // Optional description of the full system u' = -(K(t) u + F(t)) for
  // reference solutions.
  std::function<Vec(double t, const Vec& u)> rhs;
  bool constant_coefficients = false;
  Mat generator;  // K when constant_coefficients
  Vec forcing;    // F when constant_coefficients

  int part_count() const { return static_cast<int>(parts.size()); }
  int levels() const { return (part_count() + 1) / 2; }
};

// ---- operator builders -----------------------------------------------------

ExplicitOp zero_explicit(int dim);
ImplicitOp zero_implicit(int dim);
Forcing zero_forcing(int dim);
Forcing constant_forcing(Vec f);

// A(t) = coeff(t) * M; coeff defaults to 1.
ExplicitOp matrix_explicit(Mat m, std::function<double(double)> coeff = {});
// S(t) = coeff(t) * M with a dense LU resolvent; throws LinearSolveError when singular.
ImplicitOp matrix_implicit(Mat m, std::function<double(double)> coeff = {});
// Entropy operator S(u) = eps ln(u/(1-u)) solved by the fixed-point sigmoid
// iteration (C2 = 0). Converges when eps * scale > 1/4.
ImplicitOp entropy_implicit(double epsilon, int iterations);

// ---- validation ------------------------------------------------------------

void validate_hybrid(const std::vector<Substep>& substeps, int incoming_width, const std::string& where);
void validate(const SchemeSpec& spec);

// ---- steppers --------------------------------------------------------------

Vec parallel_step(const Vec& u, const SchemeSpec& spec, double dt, double t);
Vec sequential_step(const Vec& u, const SchemeSpec& spec, double dt, double t);
Vec hybrid_step(const Vec& u, const SchemeSpec& spec, double dt, double t);
Vec general_hybrid_step(const Vec& u, const SchemeSpec& spec, double dt, double t);

// Relaxation used between mirrored parts: 1/2 a + 1/2 b.
Vec relax(const Vec& a, const Vec& b);

// State after one hybrid part: the average and the per-k states.
struct PartState {
  Vec mean;
  std::vector<Vec> per_k;
};

// Runs one hybrid part (Algorithm-3 style substeps) with the time-scale
// factor `scale` multiplying each substep's c_m dt.
PartState run_part(const PartState& in, const std::vector<Substep>& substeps, double scale, double dt,
                   double t);

using Stepper = std::function<Vec(const Vec&, const SchemeSpec&, double, double)>;

// ---- references and order --------------------------------------------------

/// exp(M) by scaling and squaring with a Taylor series truncated at 1e-14.
Mat expm(const Mat& m);

/// Exact solution of u' = -(K u + F) at time T (augmented-matrix exponential).
Vec exact_linear_solution(const Mat& K, const Vec& F, const Vec& u0, double T);

/// Classical 4th-order Runge-Kutta with fixed step.
Vec rk4_solution(const std::function<Vec(double, const Vec&)>& rhs, const Vec& u0, double T, double dt);

struct OrderResult {
  std::vector<double> dts;
  std::vector<double> errors;
  std::vector<double> pair_orders;
  double order = 0.0;
};

/// Empirical order: mean of log2(e(dt)/e(dt/2)) over consecutive pairs,
/// e = ||u_num(T) - u_ref(T)||_inf. Reference: matrix exponential for
/// constant-coefficient specs, RK4 at min(dts)/64 otherwise.
OrderResult observed_order(const Stepper& stepper, const SchemeSpec& spec, const Vec& u0, double T,
                           const std::vector<double>& dts);

Vec integrate(const Stepper& stepper, const SchemeSpec& spec, const Vec& u0, double T, double dt);

// ---- seeded random instances for the convergence harness --------------------

/// Q diag(lambda) Q^T with lambda ~ U[lo, hi] and Haar-like orthogonal Q.
Mat random_spd(int dim, std::uint64_t seed, double lo = 0.5, double hi = 2.0);

struct InstanceOptions {
  int dim = 4;
  int substeps = 2;      // M
  int width = 2;         // c_m
  double op_scale = 0.25;
  bool time_dependent = false;  // A(t) = A0 (1 + 1/2 sin t)
};

/// Hybrid-form instance (M substeps of width c, fan-in d_m = c_{m-1}).
SchemeSpec random_hybrid_instance(std::uint64_t seed, const InstanceOptions& opt);
/// General-form instance with J levels and M_j = opt.substeps, c_{j,m} = opt.width.
SchemeSpec random_general_instance(std::uint64_t seed, int J, const InstanceOptions& opt);

// ---- convergence study -------------------------------------------------------

struct ConvergenceRow {
  std::string scheme;  // "hybrid" or "general"
  std::uint64_t seed = 0;
  double dt = 0.0;
  double error = 0.0;
  double order = 0.0;  // observed order of the instance (same on each of its rows)
};

/// For each seed: a random 4-dimensional hybrid instance (2 substeps of width
/// 2) and a two-level general instance with time-dependent coefficients,
/// integrated to T = 1 from a seeded random state at every dt.
std::vector<ConvergenceRow> convergence_study(const std::vector<std::uint64_t>& seeds,
                                              const std::vector<double>& dts);

}  // namespace pmg::split

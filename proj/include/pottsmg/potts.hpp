#pragma once

// Two-phase relaxed Potts model: energy, Euler-Lagrange residual,
// threshold-dynamics perimeter, and the fixed-point sigmoid activation that
// solves the implicit entropy (+ length) substep.

#include <span>
#include <vector>

#include "pottsmg/mesh.hpp"
#include "pottsmg/stencil.hpp"

namespace pmg {

struct PottsParams {
  double epsilon = 2.0;  // entropy weight
  double eta = 80.0;     // length weight (the single length weight; also written lambda)
  double sigma = 0.5;    // Gaussian width of the length term
  double dt = 0.5;       // time step
  int gaussian_radius = 2;

  void validate() const;
  Kernel gaussian() const { return make_gaussian(sigma, gaussian_radius); }
};

/// Smallest odd-width radius covering four standard deviations.
int default_gaussian_radius(double sigma);

/// Threshold-dynamics estimate of the interface length between {u=1} and {u=0}:
///   1/2 * sqrt(pi/sigma) * h^2 * sum_p [u (G*(1-u)) + (1-u) (G*u)].
/// The two-phase sum counts the interface once per region; the 1/2 matches
/// the 1/2 sum_k |dOmega_k| of the two-phase Potts energy. Throws DomainError
/// when a value leaves [0,1].
double td_perimeter(const Field& u, double sigma, double h = 1.0);
double td_perimeter(const Field& u, double sigma, int gaussian_radius, double h);

/// h^2 * sum [v g + eps (v ln v + (1-v) ln(1-v)) + eta v (G*(1-v))], with 0 ln 0 := 0.
double potts_energy(const Field& v, const Field& g, const PottsParams& p, double h = 1.0);

/// eps ln(u/(1-u)) + eta G*(1-2u) + g. Throws DomainError unless 0 < u < 1.
Field el_residual(const Field& u, const Field& g, const PottsParams& p);

double sigmoid(double x);
/// Clamps a probability into the open interval: [DBL_MIN, 1 - 2^-53].
double clamp_open_unit(double p);
std::vector<double> sigmoid(std::span<const double> x);

/// Runs `iters` steps of
///   p <- Sig(-(1/eps) ((p - u_bar)/(c1 dt) + c2 G*(1-2p))),  p0 = u_bar.
/// The length term carries c2 alone (c2 = eta for the final substep).
/// Iterates are clamped into (0,1) so saturated sigmoids never reach 0 or 1.
Field activation_fixed_point(const Field& u_bar, double c1, double c2, const PottsParams& p, int iters);

}  // namespace pmg

#pragma once

#include <vector>

#include "pottsmg/mesh.hpp"

namespace pmg {

/// Square (2r+1)x(2r+1) convolution stencil, weights row-major.
///
/// Used for the learned control kernels as well as the fixed Gaussian and
/// identity stencils. Applying a kernel is true convolution
/// (k[q] * f[p - q]) with zero padding; see kernels.hpp.
struct Kernel {
  int radius = 0;
  std::vector<double> weights;

  Kernel() : weights(1, 0.0) {}
  explicit Kernel(int radius);
  Kernel(int radius, std::vector<double> weights);

  int width() const { return 2 * radius + 1; }
  double& at(int dr, int dc) { return weights[(dr + radius) * width() + (dc + radius)]; }
  double at(int dr, int dc) const { return weights[(dr + radius) * width() + (dc + radius)]; }
  double sum() const;
};

// Kernels of different radii are added by zero-extending the smaller one.
Kernel operator+(const Kernel& a, const Kernel& b);
Kernel operator*(double s, const Kernel& k);

/// Same-size zero-padded convolution. Throws NumericInputError on non-finite input.
Field conv2d(const Field& f, const Kernel& k);

/// Sampled Gaussian exp(-(i^2+j^2)/(2 sigma^2)), renormalized to sum 1.
Kernel make_gaussian(double sigma, int radius);

Kernel make_identity(int radius);

}  // namespace pmg

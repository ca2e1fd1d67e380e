#include "pottsmg/stencil.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "pottsmg/errors.hpp"
#include "pottsmg/kernels.hpp"

namespace pmg {

Kernel::Kernel(int radius) : radius(radius) {
  if (radius < 0) throw ParameterError("kernel radius must be >= 0");
  weights.assign(static_cast<size_t>(width()) * width(), 0.0);
}

Kernel::Kernel(int radius, std::vector<double> w) : radius(radius), weights(std::move(w)) {
  if (radius < 0) throw ParameterError("kernel radius must be >= 0");
  if (weights.size() != static_cast<size_t>(width()) * width()) {
    throw ShapeError("kernel of radius " + std::to_string(radius) + " needs " +
                     std::to_string(width() * width()) + " weights, got " + std::to_string(weights.size()));
  }
}

double Kernel::sum() const { return std::accumulate(weights.begin(), weights.end(), 0.0); }

Kernel operator+(const Kernel& a, const Kernel& b) {
  Kernel out(std::max(a.radius, b.radius));
  for (const Kernel* k : {&a, &b}) {
    for (int dr = -k->radius; dr <= k->radius; ++dr) {
      for (int dc = -k->radius; dc <= k->radius; ++dc) out.at(dr, dc) += k->at(dr, dc);
    }
  }
  return out;
}

Kernel operator*(double s, const Kernel& k) {
  Kernel out = k;
  for (double& w : out.weights) w *= s;
  return out;
}

Field conv2d(const Field& f, const Kernel& k) {
  if (!f.all_finite()) throw NumericInputError("conv2d: input field contains non-finite values");
  Field out = Field::like(f);
  kernels::conv2d_accumulate(f.span(), {f.rows, f.cols}, k.weights, k.radius, out.span());
  return out;
}

Kernel make_gaussian(double sigma, int radius) {
  if (!(sigma > 0.0) || !std::isfinite(sigma)) {
    throw ParameterError("Gaussian sigma must be > 0, got " + std::to_string(sigma));
  }
  if (radius < 1) throw ParameterError("Gaussian radius must be >= 1, got " + std::to_string(radius));
  Kernel k(radius);
  for (int i = -radius; i <= radius; ++i) {
    for (int j = -radius; j <= radius; ++j) {
      k.at(i, j) = std::exp(-static_cast<double>(i * i + j * j) / (2.0 * sigma * sigma));
    }
  }
  const double total = k.sum();
  for (double& w : k.weights) w /= total;
  return k;
}

Kernel make_identity(int radius) {
  Kernel k(radius);
  k.at(0, 0) = 1.0;
  return k;
}

}  // namespace pmg

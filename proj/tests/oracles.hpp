#pragma once

// Independent reference computations shared by the unit and acceptance tests.

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

namespace oracle {

// Sampled, renormalized Gaussian weights on [-r, r]^2, row-major.
inline std::vector<double> gaussian(double sigma, int r) {
  const int w = 2 * r + 1;
  std::vector<double> g(w * w);
  double total = 0.0;
  for (int i = -r; i <= r; ++i)
    for (int j = -r; j <= r; ++j) total += g[(i + r) * w + (j + r)] = std::exp(-(i * i + j * j) / (2 * sigma * sigma));
  for (double& x : g) x /= total;
  return g;
}

inline double logistic(double t) { return t >= 0 ? 1 / (1 + std::exp(-t)) : std::exp(t) / (1 + std::exp(t)); }

// Two-phase relaxed energy sum v g + eps H(v) + eta v G*(1-v) on an n x n grid
// with zero padding, minimized by exhaustive coordinate descent. Each
// coordinate update scans the logit axis for every stationary point of the
// one-dimensional restriction and keeps the lowest. Stops once every partial
// derivative is below `tol`.
struct PottsMinimizer {
  int n = 4;
  double eps = 1.0;
  double eta = 1.0;
  std::vector<double> gk;  // Gaussian weights
  int r = 2;
  std::vector<double> g;   // data term

  double weight(int dr, int dc) const {
    if (std::abs(dr) > r || std::abs(dc) > r) return 0.0;
    return gk[(dr + r) * (2 * r + 1) + (dc + r)];
  }

  // Partial derivative with respect to v_i, split as a + eps logit(v_i) - 2 eta G0 v_i.
  double offset(const std::vector<double>& v, int i) const {
    const int ir = i / n, ic = i % n;
    double s1 = 0.0, s2 = 0.0;
    for (int q = 0; q < n * n; ++q) {
      if (q == i) continue;
      const double w = weight(ir - q / n, ic - q % n);
      s1 += w * (1 - v[q]);
      s2 += w * v[q];
    }
    return g[i] + eta * (s1 - s2 + weight(0, 0));
  }

  double gradient(const std::vector<double>& v, int i, double t) const {
    return offset(v, i) + eps * t - 2 * eta * weight(0, 0) * v[i];
  }

  static double entropy(double x) {
    double h = 0.0;
    if (x > 0) h += x * std::log(x);
    if (x < 1) h += (1 - x) * std::log1p(-x);
    return h;
  }

  // Minimizes a x + eps H(x) - eta G0 x^2 over (0,1); returns the logit.
  double coordinate_minimum(double a) const {
    const double c = eta * weight(0, 0);
    auto dphi = [&](double t) { return a + eps * t - 2 * c * logistic(t); };
    auto phi = [&](double t) {
      const double x = logistic(t);
      return a * x + eps * entropy(x) - c * x * x;
    };
    const double span = (std::abs(a) + 2 * c) / eps + 5;
    const int steps = 4000;
    double best_t = 0, best_e = std::numeric_limits<double>::infinity();
    double lo = -span, flo = dphi(lo);
    for (int s = 1; s <= steps; ++s) {
      const double hi = -span + 2 * span * s / steps;
      const double fhi = dphi(hi);
      if ((flo <= 0) != (fhi <= 0) || fhi == 0) {
        double a0 = lo, b0 = hi;
        for (int it = 0; it < 200 && b0 - a0 > 1e-15 * std::max(1.0, std::abs(a0)); ++it) {
          const double m = 0.5 * (a0 + b0);
          if ((dphi(m) <= 0) == (dphi(a0) <= 0)) a0 = m; else b0 = m;
        }
        const double t = 0.5 * (a0 + b0);
        const double e = phi(t);
        if (e < best_e) best_e = e, best_t = t;
      }
      lo = hi;
      flo = fhi;
    }
    return best_t;
  }

  // Returns the minimizer as logits (v = logistic(t)); `sweeps` receives the sweep count.
  std::vector<double> solve_logits(double tol = 1e-10, int max_sweeps = 100000, int* sweeps = nullptr) const {
    const int m = n * n;
    std::vector<double> v(m, 0.5), t(m, 0.0);
    int k = 0;
    for (; k < max_sweeps; ++k) {
      for (int i = 0; i < m; ++i) {
        t[i] = coordinate_minimum(offset(v, i));
        v[i] = logistic(t[i]);
      }
      double worst = 0.0;
      for (int i = 0; i < m; ++i) worst = std::max(worst, std::abs(gradient(v, i, t[i])));
      if (worst < tol) break;
    }
    if (sweeps) *sweeps = k + 1;
    return t;
  }

  double energy(const std::vector<double>& v) const {
    double e = 0.0;
    for (int i = 0; i < n * n; ++i) {
      double conv = 0.0;
      for (int q = 0; q < n * n; ++q) conv += weight(i / n - q / n, i % n - q % n) * (1 - v[q]);
      e += v[i] * g[i] + eps * entropy(v[i]) + eta * v[i] * conv;
    }
    return e;
  }
};

// max_i min(v_i, 1 - v_i) computed from logits, exact even when 1 - v_i underflows.
inline double distance_to_binary(const std::vector<double>& logits) {
  double d = 0.0;
  for (double t : logits) d = std::max(d, logistic(-std::abs(t)));
  return d;
}

}  // namespace oracle

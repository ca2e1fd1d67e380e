#include "pottsmg/split.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "pottsmg/errors.hpp"

namespace pmg::split {

ExplicitOp zero_explicit(int dim) {
  return {[dim](double, const Vec&) { return Vec::Zero(dim).eval(); }};
}

ImplicitOp zero_implicit(int dim) {
  return {[dim](double, const Vec&) { return Vec::Zero(dim).eval(); },
          [](double, double, const Vec& rhs) { return rhs; }};
}

Forcing zero_forcing(int dim) {
  return [dim](double) { return Vec::Zero(dim).eval(); };
}

Forcing constant_forcing(Vec f) {
  return [f = std::move(f)](double) { return f; };
}

ExplicitOp matrix_explicit(Mat m, std::function<double(double)> coeff) {
  return {[m = std::move(m), coeff = std::move(coeff)](double t, const Vec& u) -> Vec {
    const double c = coeff ? coeff(t) : 1.0;
    return c * (m * u);
  }};
}

ImplicitOp matrix_implicit(Mat m, std::function<double(double)> coeff) {
  ImplicitOp op;
  op.apply = [m, coeff](double t, const Vec& u) -> Vec {
    const double c = coeff ? coeff(t) : 1.0;
    return c * (m * u);
  };
  op.resolve = [m, coeff](double t, double scale, const Vec& rhs) -> Vec {
    const double c = coeff ? coeff(t) : 1.0;
    const Mat system = Mat::Identity(m.rows(), m.cols()) + (scale * c) * m;
    Eigen::FullPivLU<Mat> lu(system);
    if (!lu.isInvertible()) throw LinearSolveError("implicit substep: resolvent matrix is singular");
    return lu.solve(rhs);
  };
  return op;
}

ImplicitOp entropy_implicit(double epsilon, int iterations) {
  ImplicitOp op;
  op.apply = [epsilon](double, const Vec& u) -> Vec {
    return u.unaryExpr([epsilon](double x) { return epsilon * std::log(x / (1.0 - x)); });
  };
  op.resolve = [epsilon, iterations](double, double scale, const Vec& rhs) -> Vec {
    PottsParams p;
    p.epsilon = epsilon;
    p.eta = 0.0;
    p.dt = scale;
    const int n = static_cast<int>(rhs.size());
    Field bar(1, 1, n, std::vector<double>(rhs.data(), rhs.data() + n));
    const Field out = activation_fixed_point(bar, 1.0, 0.0, p, iterations);
    return Eigen::Map<const Vec>(out.values.data(), n);
  };
  return op;
}

// ---------------------------------------------------------------------------

void validate_hybrid(const std::vector<Substep>& substeps, int incoming_width, const std::string& where) {
  int previous = incoming_width;
  for (size_t m = 0; m < substeps.size(); ++m) {
    const Substep& s = substeps[m];
    const std::string at = where + " substep " + std::to_string(m + 1);
    if (s.width < 1 || s.fan_in < 1) throw SpecError(at + ": widths must be >= 1");
    if (s.fan_in > previous) {
      throw SpecError(at + ": fan-in d=" + std::to_string(s.fan_in) + " exceeds previous width c=" +
                      std::to_string(previous));
    }
    if (static_cast<int>(s.A.size()) != s.width || static_cast<int>(s.S.size()) != s.width ||
        static_cast<int>(s.f.size()) != s.width) {
      throw SpecError(at + ": operator tables do not have c=" + std::to_string(s.width) + " rows");
    }
    for (const auto& row : s.A) {
      if (static_cast<int>(row.size()) != s.fan_in) {
        throw SpecError(at + ": operator row does not have d=" + std::to_string(s.fan_in) + " entries");
      }
    }
    previous = s.width;
  }
}

namespace {

int final_width(const std::vector<Substep>& part, int incoming) {
  return part.empty() ? incoming : part.back().width;
}

void validate_flat(const SchemeSpec& spec) {
  validate_hybrid(spec.substeps, 1, "flat scheme");
  for (const Substep& s : spec.substeps) {
    if (s.width != 1 || s.fan_in != 1) throw SpecError("parallel/sequential steppers need c_m = d_m = 1");
  }
}

}  // namespace

void validate(const SchemeSpec& spec) {
  if (!spec.parts.empty()) {
    if (spec.parts.size() % 2 == 0) throw SpecError("general scheme needs 2J-1 parts");
    const int J = spec.levels();
    std::vector<int> widths;
    int incoming = 1;
    for (int j = 1; j <= spec.part_count(); ++j) {
      validate_hybrid(spec.parts[j - 1], incoming, "part " + std::to_string(j));
      incoming = final_width(spec.parts[j - 1], incoming);
      widths.push_back(incoming);
    }
    for (int j = J + 1; j <= 2 * J - 1; ++j) {
      if (widths[j - 1] != widths[2 * J - j - 1]) {
        throw SpecError("part " + std::to_string(j) + " width " + std::to_string(widths[j - 1]) +
                        " does not match mirrored part " + std::to_string(2 * J - j) + " width " +
                        std::to_string(widths[2 * J - j - 1]));
      }
    }
    if (!spec.final_step) throw SpecError("general scheme is missing its final step");
    if (static_cast<int>(spec.final_step->A.size()) > widths.back()) {
      throw SpecError("final step fan-in exceeds the width of the last part");
    }
  } else {
    validate_hybrid(spec.substeps, 1, "scheme");
  }
}

// ---------------------------------------------------------------------------

Vec parallel_step(const Vec& u, const SchemeSpec& spec, double dt, double t) {
  validate_flat(spec);
  const auto M = static_cast<double>(spec.substeps.size());
  if (spec.substeps.empty()) return u;
  std::vector<Vec> parts(spec.substeps.size());
#pragma omp parallel for schedule(static) if (spec.substeps.size() > 1)
  for (int m = 0; m < static_cast<int>(spec.substeps.size()); ++m) {
    const Substep& s = spec.substeps[m];
    const Vec rhs = u - M * dt * (s.A[0][0].apply(t, u) + s.f[0](t + dt));
    parts[m] = s.S[0].resolve(t + dt, M * dt, rhs);
  }
  Vec sum = Vec::Zero(u.size());
  for (const Vec& p : parts) sum += p;
  return sum / M;
}

Vec sequential_step(const Vec& u, const SchemeSpec& spec, double dt, double t) {
  validate_flat(spec);
  Vec cur = u;
  for (const Substep& s : spec.substeps) {
    const Vec rhs = cur - dt * (s.A[0][0].apply(t, cur) + s.f[0](t + dt));
    cur = s.S[0].resolve(t + dt, dt, rhs);
  }
  return cur;
}

PartState run_part(const PartState& in, const std::vector<Substep>& substeps, double scale, double dt,
                   double t) {
  PartState prev = in;
  for (const Substep& s : substeps) {
    const double step = scale * s.width * dt;
    PartState next;
    next.per_k.resize(s.width);
#pragma omp parallel for schedule(static) if (s.width > 1)
    for (int k = 0; k < s.width; ++k) {
      Vec drive = s.f[k](t);
      for (int q = 0; q < s.fan_in; ++q) drive += s.A[k][q].apply(t, prev.per_k[q]);
      next.per_k[k] = s.S[k].resolve(t + dt, step, prev.mean - step * drive);
    }
    // Fixed ascending-k reduction keeps results bit-reproducible.
    next.mean = Vec::Zero(prev.mean.size());
    for (const Vec& uk : next.per_k) next.mean += uk;
    next.mean /= static_cast<double>(s.width);
    prev = std::move(next);
  }
  return prev;
}

Vec hybrid_step(const Vec& u, const SchemeSpec& spec, double dt, double t) {
  validate_hybrid(spec.substeps, 1, "hybrid scheme");
  return run_part(PartState{u, {u}}, spec.substeps, 1.0, dt, t).mean;
}

Vec relax(const Vec& a, const Vec& b) { return 0.5 * a + 0.5 * b; }

Vec general_hybrid_step(const Vec& u, const SchemeSpec& spec, double dt, double t) {
  validate(spec);
  if (spec.parts.empty()) throw SpecError("general_hybrid_step needs the part structure");
  const int J = spec.levels();
  std::vector<PartState> states(2 * J);
  PartState cur{u, {u}};
  for (int j = 1; j <= J; ++j) {
    cur = run_part(cur, spec.parts[j - 1], std::ldexp(1.0, j - 1), dt, t);
    states[j] = cur;
  }
  // `cur` holds the unrelaxed per-k states of the latest part; `bar` the
  // relaxed ones that seed the next part.
  PartState bar = cur;
  for (int j = J + 1; j <= 2 * J - 1; ++j) {
    const int mirror = 2 * J - j;
    cur = run_part(bar, spec.parts[j - 1], std::ldexp(1.0, mirror), dt, t);
    const PartState& other = states[mirror];
    bar.per_k.resize(cur.per_k.size());
    bar.mean = Vec::Zero(u.size());
    for (size_t k = 0; k < cur.per_k.size(); ++k) {
      bar.per_k[k] = relax(cur.per_k[k], other.per_k[k]);
      bar.mean += bar.per_k[k];
    }
    bar.mean /= static_cast<double>(cur.per_k.size());
  }
  const FinalStep& fin = *spec.final_step;
  Vec drive = fin.f ? fin.f(t) : Vec::Zero(u.size()).eval();
  for (size_t s = 0; s < fin.A.size(); ++s) drive += fin.A[s].apply(t, cur.per_k[s]);
  const Vec rhs = bar.mean - dt * drive;
  return fin.S.resolve ? fin.S.resolve(t + dt, dt, rhs) : rhs;
}

// ---------------------------------------------------------------------------

Mat expm(const Mat& m) {
  const double norm = m.cwiseAbs().colwise().sum().maxCoeff();
  int squarings = 0;
  if (norm > 0.5) squarings = static_cast<int>(std::ceil(std::log2(norm / 0.5)));
  const Mat a = m / std::ldexp(1.0, squarings);
  Mat sum = Mat::Identity(m.rows(), m.cols());
  Mat term = Mat::Identity(m.rows(), m.cols());
  for (int k = 1; k < 100; ++k) {
    term = (term * a) / static_cast<double>(k);
    sum += term;
    if (term.cwiseAbs().maxCoeff() <= 1e-14 * sum.cwiseAbs().maxCoeff()) break;
  }
  for (int i = 0; i < squarings; ++i) sum = sum * sum;
  return sum;
}

Vec exact_linear_solution(const Mat& K, const Vec& F, const Vec& u0, double T) {
  const auto n = K.rows();
  Mat aug = Mat::Zero(n + 1, n + 1);
  aug.topLeftCorner(n, n) = -K;
  aug.topRightCorner(n, 1) = -F;
  Vec x(n + 1);
  x.head(n) = u0;
  x(n) = 1.0;
  return (expm(T * aug) * x).head(n);
}

Vec rk4_solution(const std::function<Vec(double, const Vec&)>& rhs, const Vec& u0, double T, double dt) {
  const int steps = static_cast<int>(std::llround(T / dt));
  Vec u = u0;
  for (int n = 0; n < steps; ++n) {
    const double t = n * dt;
    const Vec k1 = rhs(t, u);
    const Vec k2 = rhs(t + 0.5 * dt, u + 0.5 * dt * k1);
    const Vec k3 = rhs(t + 0.5 * dt, u + 0.5 * dt * k2);
    const Vec k4 = rhs(t + dt, u + dt * k3);
    u += (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  }
  return u;
}

Vec integrate(const Stepper& stepper, const SchemeSpec& spec, const Vec& u0, double T, double dt) {
  const int steps = static_cast<int>(std::llround(T / dt));
  Vec u = u0;
  for (int n = 0; n < steps; ++n) u = stepper(u, spec, dt, n * dt);
  return u;
}

OrderResult observed_order(const Stepper& stepper, const SchemeSpec& spec, const Vec& u0, double T,
                           const std::vector<double>& dts) {
  if (dts.size() < 2) throw UsageError("observed_order needs at least two step sizes");
  for (size_t i = 1; i < dts.size(); ++i) {
    if (std::abs(dts[i] * 2.0 - dts[i - 1]) > 1e-12 * dts[i - 1]) {
      throw UsageError("observed_order needs a halving sequence of step sizes");
    }
  }
  Vec reference;
  if (spec.constant_coefficients) {
    reference = exact_linear_solution(spec.generator, spec.forcing, u0, T);
  } else if (spec.rhs) {
    reference = rk4_solution(spec.rhs, u0, T, dts.back() / 64.0);
  } else {
    throw UsageError("observed_order needs a reference: constant coefficients or an rhs");
  }
  OrderResult result;
  result.dts = dts;
  for (double dt : dts) {
    const Vec u = integrate(stepper, spec, u0, T, dt);
    result.errors.push_back((u - reference).cwiseAbs().maxCoeff());
  }
  if (!(result.errors.front() > 0.0)) {
    throw OrderUndefinedError("zero error at the coarsest step; convergence order is undefined");
  }
  double total = 0.0;
  for (size_t i = 1; i < result.errors.size(); ++i) {
    if (!(result.errors[i] > 0.0)) throw OrderUndefinedError("zero error at dt=" + std::to_string(dts[i]));
    const double p = std::log2(result.errors[i - 1] / result.errors[i]);
    result.pair_orders.push_back(p);
    total += p;
  }
  result.order = total / static_cast<double>(result.pair_orders.size());
  return result;
}

// ---------------------------------------------------------------------------

Mat random_spd(int dim, std::uint64_t seed, double lo, double hi) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> uniform(lo, hi);
  Mat g(dim, dim);
  for (int i = 0; i < dim; ++i) {
    for (int j = 0; j < dim; ++j) g(i, j) = normal(rng);
  }
  const Mat q = Eigen::HouseholderQR<Mat>(g).householderQ();
  Vec lambda(dim);
  for (int i = 0; i < dim; ++i) lambda(i) = uniform(rng);
  const Mat spd = q * lambda.asDiagonal() * q.transpose();
  return 0.5 * (spd + spd.transpose());
}

namespace {

struct InstanceBuilder {
  std::uint64_t seed;
  const InstanceOptions& opt;
  std::uint64_t counter = 0;
  Mat k_explicit;
  Mat k_implicit;
  Vec forcing;

  InstanceBuilder(std::uint64_t seed, const InstanceOptions& opt) : seed(seed), opt(opt) {
    k_explicit = Mat::Zero(opt.dim, opt.dim);
    k_implicit = Mat::Zero(opt.dim, opt.dim);
    forcing = Vec::Zero(opt.dim);
  }

  Mat next_spd() { return opt.op_scale * random_spd(opt.dim, seed * 1000003ULL + (++counter)); }

  Vec next_vector() {
    std::mt19937_64 rng(seed * 7919ULL + (++counter));
    std::uniform_real_distribution<double> uniform(-1.0, 1.0);
    Vec v(opt.dim);
    for (int i = 0; i < opt.dim; ++i) v(i) = opt.op_scale * uniform(rng);
    return v;
  }

  std::function<double(double)> coeff() const {
    if (!opt.time_dependent) return {};
    return [](double t) { return 1.0 + 0.5 * std::sin(t); };
  }

  ExplicitOp explicit_op() {
    Mat a = next_spd();
    k_explicit += a;
    return matrix_explicit(std::move(a), coeff());
  }

  ImplicitOp implicit_op() {
    Mat s = next_spd();
    k_implicit += s;
    return matrix_implicit(std::move(s));
  }

  Forcing forcing_fn() {
    Vec f = next_vector();
    forcing += f;
    return constant_forcing(std::move(f));
  }

  std::vector<Substep> part(int incoming_width) {
    std::vector<Substep> out;
    int previous = incoming_width;
    for (int m = 0; m < opt.substeps; ++m) {
      Substep s;
      s.width = opt.width;
      s.fan_in = previous;
      for (int k = 0; k < s.width; ++k) {
        std::vector<ExplicitOp> row;
        for (int q = 0; q < s.fan_in; ++q) row.push_back(explicit_op());
        s.A.push_back(std::move(row));
        s.S.push_back(implicit_op());
        s.f.push_back(forcing_fn());
      }
      previous = s.width;
      out.push_back(std::move(s));
    }
    return out;
  }

  void finish(SchemeSpec& spec) const {
    spec.dim = opt.dim;
    spec.constant_coefficients = !opt.time_dependent;
    spec.generator = k_explicit + k_implicit;
    spec.forcing = forcing;
    const Mat ke = k_explicit;
    const Mat ki = k_implicit;
    const Vec f = forcing;
    const bool td = opt.time_dependent;
    spec.rhs = [ke, ki, f, td](double t, const Vec& u) -> Vec {
      const double c = td ? 1.0 + 0.5 * std::sin(t) : 1.0;
      return -(c * (ke * u) + ki * u + f);
    };
  }
};

}  // namespace

SchemeSpec random_hybrid_instance(std::uint64_t seed, const InstanceOptions& opt) {
  InstanceBuilder b(seed, opt);
  SchemeSpec spec;
  spec.substeps = b.part(1);
  b.finish(spec);
  return spec;
}

SchemeSpec random_general_instance(std::uint64_t seed, int J, const InstanceOptions& opt) {
  if (J < 1) throw SpecError("general instance needs J >= 1");
  InstanceBuilder b(seed, opt);
  SchemeSpec spec;
  int incoming = 1;
  for (int j = 1; j <= 2 * J - 1; ++j) {
    spec.parts.push_back(b.part(incoming));
    incoming = opt.width;
  }
  FinalStep fin;
  for (int s = 0; s < opt.width; ++s) fin.A.push_back(b.explicit_op());
  fin.S = b.implicit_op();
  fin.f = b.forcing_fn();
  spec.final_step = std::move(fin);
  b.finish(spec);
  return spec;
}

std::vector<ConvergenceRow> convergence_study(const std::vector<std::uint64_t>& seeds,
                                              const std::vector<double>& dts) {
  std::vector<ConvergenceRow> rows;
  for (std::uint64_t seed : seeds) {
    std::mt19937_64 rng(seed * 7919 + 17);
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    InstanceOptions opt;
    Vec u0(opt.dim);
    for (int i = 0; i < opt.dim; ++i) u0[i] = unit(rng);

    const SchemeSpec hybrid = random_hybrid_instance(seed, opt);
    const OrderResult h = observed_order(hybrid_step, hybrid, u0, 1.0, dts);
    for (size_t i = 0; i < dts.size(); ++i) rows.push_back({"hybrid", seed, h.dts[i], h.errors[i], h.order});

    InstanceOptions gopt = opt;
    gopt.time_dependent = true;
    const SchemeSpec general = random_general_instance(seed, 2, gopt);
    const OrderResult g = observed_order(general_hybrid_step, general, u0, 1.0, dts);
    for (size_t i = 0; i < dts.size(); ++i) rows.push_back({"general", seed, g.dts[i], g.errors[i], g.order});
  }
  return rows;
}

}  // namespace pmg::split

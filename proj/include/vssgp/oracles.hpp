#pragma once

// Independent numerical oracles: Monte Carlo, quadrature and finite
// differences, plus the check suites built on them. None of the oracles
// reuse the closed-form code paths they are used to check.

#include "vssgp/bounds.hpp"
#include "vssgp/core.hpp"
#include "vssgp/features.hpp"
#include "vssgp/gradient.hpp"
#include "vssgp/parameters.hpp"
#include "vssgp/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdint>
#include <functional>
#include <random>
#include <string>

namespace vssgp::oracle {

struct InstanceShape {
  Index n = 10;
  Index q = 2;
  Index k = 3;
  Index l = 2;
  Index d = 2;
  bool variational_phases = false;
  bool periodic = true;
};

inline double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline Matrix normal_matrix(std::mt19937_64& rng, Index r, Index c, double sd = 1.0) {
  std::normal_distribution<double> nd(0.0, sd);
  Matrix m(r, c);
  for (Index j = 0; j < c; ++j)
    for (Index i = 0; i < r; ++i) m(i, j) = nd(rng);
  return m;
}

/// Components with even index are periodic when `periodic` is set; in every
/// input dimension, or only the first when `first_dim_only`.
inline KernelSpec random_spec(std::mt19937_64& rng, Index l, Index q, bool periodic, bool first_dim_only = false) {
  KernelSpec spec;
  for (Index i = 0; i < l; ++i) {
    SMComponent c;
    c.weight = uniform(rng, 0.5, 1.5);
    c.lengthscales = Vector(q);
    c.inverse_periods = Vector::Zero(q);
    for (Index j = 0; j < q; ++j) {
      c.lengthscales(j) = uniform(rng, 0.6, 2.0);
      if (periodic && (i % 2 == 0) && (j == 0 || !first_dim_only)) c.inverse_periods(j) = uniform(rng, 0.1, 0.6);
    }
    spec.components.push_back(c);
  }
  return spec;
}

inline VariationalState random_state(std::mt19937_64& rng, const KernelSpec& spec, const InstanceShape& s,
                                     const Matrix& x) {
  (void)spec;
  VariationalState st;
  const Index lk = s.l * s.k;
  st.features_per_component = s.k;
  st.inducing_inputs = Matrix(s.q, lk);
  for (Index k = 0; k < lk; ++k) {
    st.inducing_inputs.col(k) = x.row(k % x.rows()).transpose();
    for (Index j = 0; j < s.q; ++j) st.inducing_inputs(j, k) += uniform(rng, -0.3, 0.3);
  }
  st.freq_means = normal_matrix(rng, s.q, lk);
  st.freq_vars = Matrix(s.q, lk);
  for (Index i = 0; i < st.freq_vars.size(); ++i) st.freq_vars.data()[i] = uniform(rng, 0.05, 0.8);
  if (s.variational_phases) {
    VariationalPhases vp{Vector(lk), Vector(lk)};
    for (Index k = 0; k < lk; ++k) {
      vp.lower(k) = uniform(rng, 0.0, 3.0);
      vp.upper(k) = uniform(rng, vp.lower(k) + 0.2, kTwoPi);
    }
    st.phases = vp;
  } else {
    FixedPhases fp{Vector(lk)};
    for (Index k = 0; k < lk; ++k) fp.values(k) = uniform(rng, 0.0, kTwoPi);
    st.phases = fp;
  }
  st.coeff_means = normal_matrix(rng, lk, s.d, 0.5);
  st.coeff_vars = Matrix(lk, s.d);
  for (Index i = 0; i < st.coeff_vars.size(); ++i) st.coeff_vars.data()[i] = uniform(rng, 0.1, 1.2);
  st.noise_precision = uniform(rng, 2.0, 8.0);
  return st;
}

struct Instance {
  Dataset data;
  KernelSpec spec;
  VariationalState state;
};

inline Instance random_instance(std::uint64_t seed, const InstanceShape& s) {
  std::mt19937_64 rng(seed);
  Matrix x = Matrix(s.n, s.q);
  for (Index i = 0; i < x.size(); ++i) x.data()[i] = uniform(rng, -2.0, 2.0);
  Matrix y = Matrix(s.n, s.d);
  for (Index n = 0; n < s.n; ++n)
    for (Index d = 0; d < s.d; ++d)
      y(n, d) = std::sin(1.3 * x(n, 0) + static_cast<double>(d)) + 0.1 * uniform(rng, -1.0, 1.0);
  KernelSpec spec = random_spec(rng, s.l, s.q, s.periodic);
  VariationalState st = random_state(rng, spec, s, x);
  return {Dataset(std::move(x), std::move(y)), std::move(spec), std::move(st)};
}

/// Central finite differences of f at v.
inline Vector central_differences(const std::function<double(const Vector&)>& f, const Vector& v,
                                  double h = 1e-5) {
  Vector g(v.size());
  Vector p = v;
  for (Index i = 0; i < v.size(); ++i) {
    const double orig = p(i);
    p(i) = orig + h;
    const double up = f(p);
    p(i) = orig - h;
    const double down = f(p);
    p(i) = orig;
    g(i) = (up - down) / (2.0 * h);
  }
  return g;
}

/// Adaptive Simpson quadrature.
inline double adaptive_simpson(const std::function<double(double)>& f, double a, double b, double tol,
                               int depth = 50) {
  std::function<double(double, double, double, double, double, double, double, int)> rec =
      [&](double lo, double hi, double flo, double fmid, double fhi, double whole, double eps,
          int left) -> double {
    const double mid = 0.5 * (lo + hi);
    const double lm = 0.5 * (lo + mid), rm = 0.5 * (mid + hi);
    const double flm = f(lm), frm = f(rm);
    const double left_area = (mid - lo) / 6.0 * (flo + 4.0 * flm + fmid);
    const double right_area = (hi - mid) / 6.0 * (fmid + 4.0 * frm + fhi);
    const double delta = left_area + right_area - whole;
    if (left <= 0 || std::abs(delta) <= 15.0 * eps) return left_area + right_area + delta / 15.0;
    return rec(lo, mid, flo, flm, fmid, left_area, eps / 2.0, left - 1) +
           rec(mid, hi, fmid, frm, fhi, right_area, eps / 2.0, left - 1);
  };
  const double fa = f(a), fb = f(b), fm = f(0.5 * (a + b));
  const double whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
  return rec(a, b, fa, fm, fb, whole, tol, depth);
}

struct MeanSe {
  double mean = 0.0;
  double se = 0.0;
};

template <typename F>
MeanSe monte_carlo(std::size_t draws, F&& sample) {
  double mean = 0.0, m2 = 0.0;
  for (std::size_t i = 0; i < draws; ++i) {
    const double x = sample();
    const double delta = x - mean;
    mean += delta / static_cast<double>(i + 1);
    m2 += delta * (x - mean);
  }
  const double var = m2 / static_cast<double>(draws - 1);
  return {mean, std::sqrt(var / static_cast<double>(draws))};
}

// ---------------------------------------------------------------------------
// Check suites

inline std::string short_number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

struct CheckResult {
  bool passed = true;
  double worst = 0.0;  // suite-specific: largest error, in SE or absolute/relative units
  std::string detail;
};

/// Gaussian-frequency identities against Monte Carlo: the worst |estimate -
/// closed form| in standard errors over `trials` random parameter draws.
inline CheckResult gaussian_identity_check(Index trials, std::size_t samples, std::uint64_t seed,
                                           double max_se = 3.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0.0, 1.0);
  CheckResult r;
  for (Index t = 0; t < trials; ++t) {
    constexpr Index q = 3;
    Vector mean(q), var(q), xbar(q), sd(q);
    for (Index j = 0; j < q; ++j) {
      mean(j) = uniform(rng, -2.0, 2.0);
      var(j) = uniform(rng, 0.01, 1.0);
      xbar(j) = uniform(rng, -1.5, 1.5);
    }
    sd = var.cwiseSqrt();
    const double b = uniform(rng, 0.0, kTwoPi);
    Vector w(q);
    double sum = 0.0, sum2 = 0.0, sq = 0.0, sq2 = 0.0;
    for (std::size_t i = 0; i < samples; ++i) {
      for (Index j = 0; j < q; ++j) w(j) = mean(j) + sd(j) * nd(rng);
      const double c = std::cos(w.dot(xbar) + b);
      sum += c;
      sum2 += c * c;
      sq += c * c;
      sq2 += c * c * c * c;
    }
    const auto ns = static_cast<double>(samples);
    auto z_score = [&](double s, double s2, double exact) {
      const double m = s / ns;
      const double se = std::sqrt(std::max(s2 / ns - m * m, 0.0) / (ns - 1.0));
      return std::abs(m - exact) / std::max(se, 1e-300);
    };
    const double z1 = z_score(sum, sum2, expected_cos_gaussian(mean, var, xbar, b));
    const double z2 = z_score(sq, sq2, expected_cos_sq_gaussian(mean, var, xbar, b));
    r.worst = std::max({r.worst, z1, z2});
  }
  r.passed = r.worst <= max_se;
  r.detail = "worst deviation " + short_number(r.worst) + " SE";
  return r;
}

/// Uniform-phase identity against adaptive quadrature (absolute error).
inline CheckResult uniform_phase_check(Index trials, std::uint64_t seed, double tol = 1e-10) {
  std::mt19937_64 rng(seed);
  CheckResult r;
  for (Index t = 0; t < trials; ++t) {
    const double c = uniform(rng, -10.0, 10.0);
    const double lo = uniform(rng, 0.0, kTwoPi);
    const double hi = t % 10 == 0 ? lo : uniform(rng, lo, kTwoPi);
    const double exact = expected_cos_uniform_phase(c, lo, hi);
    const double quad = hi > lo
                            ? adaptive_simpson([&](double b) { return std::cos(c + b); }, lo, hi, 1e-13) / (hi - lo)
                            : std::cos(c + lo);
    r.worst = std::max(r.worst, std::abs(quad - exact));
  }
  r.passed = r.worst <= tol;
  r.detail = "worst absolute error " + short_number(r.worst);
  return r;
}

/// (1/2pi) int_0^2pi 2 cos(x + b) cos(y + b) db against cos(x - y).
inline CheckResult phase_average_check(Index trials, std::uint64_t seed, double tol = 1e-10) {
  std::mt19937_64 rng(seed);
  CheckResult r;
  for (Index t = 0; t < trials; ++t) {
    const double x = uniform(rng, -10.0, 10.0), y = uniform(rng, -10.0, 10.0);
    const double quad =
        adaptive_simpson([&](double b) { return 2.0 * std::cos(x + b) * std::cos(y + b); }, 0.0, kTwoPi, 1e-13) /
        kTwoPi;
    r.worst = std::max(r.worst, std::abs(quad - std::cos(x - y)));
  }
  r.passed = r.worst <= tol;
  r.detail = "worst absolute error " + short_number(r.worst);
  return r;
}

/// Mean of phi(x) phi(y)' over prior draws of (w, b) against the closed-form
/// kernel, for a few random input pairs of an L = 2 mixture. The features
/// average to cos(2 pi p'(x - y)) while the closed form multiplies per-dimension
/// cosines; the two coincide when each component is periodic in at most one
/// dimension, so the mixture is drawn that way.
inline CheckResult kernel_convergence_check(std::size_t samples, std::uint64_t seed, double max_se = 3.0,
                                            Index pairs = 5) {
  std::mt19937_64 rng(seed);
  constexpr Index q = 2, l = 2, k = 10;
  KernelSpec spec = random_spec(rng, l, q, true, true);
  const Matrix inducing = normal_matrix(rng, q, l * k);
  std::normal_distribution<double> nd(0.0, 1.0);
  CheckResult r;
  for (Index p = 0; p < pairs; ++p) {
    Vector x(q), y(q);
    for (Index j = 0; j < q; ++j) {
      x(j) = uniform(rng, -1.5, 1.5);
      y(j) = uniform(rng, -1.5, 1.5);
    }
    const MeanSe est = monte_carlo(samples, [&]() {
      Matrix w(q, l * k);
      for (Index i = 0; i < w.size(); ++i) w.data()[i] = nd(rng);
      Vector b(l * k);
      for (Index i = 0; i < b.size(); ++i) b(i) = uniform(rng, 0.0, kTwoPi);
      return phi_row(x, w, b, inducing, spec, k).dot(phi_row(y, w, b, inducing, spec, k));
    });
    r.worst = std::max(r.worst, std::abs(est.mean - kernel_exact(spec, x, y)) / est.se);
  }
  r.passed = r.worst <= max_se;
  r.detail = "worst deviation " + short_number(r.worst) + " SE";
  return r;
}

/// Analytic gradient against central differences of the bound value, per
/// parameter block: ||g - g_fd|| / max(||g||, ||g_fd||, floor).
inline CheckResult gradient_check(BoundType bound, Index draws, std::uint64_t seed, double tol = 1e-4,
                                  const InstanceShape& base = {}) {
  CheckResult r;
  for (Index t = 0; t < draws; ++t) {
    InstanceShape shape = base;
    shape.variational_phases = (t % 2 == 1);
    const Instance inst = random_instance(seed + static_cast<std::uint64_t>(t), shape);
    const BoundKind kind = bound == BoundType::OptimalCoefficients ? BoundKind::optimal() : BoundKind::factorised();
    const BoundOptions opts;
    const TrainableBlocks trainable = bound == BoundType::OptimalCoefficients
                                          ? default_trainable(BoundType::OptimalCoefficients)
                                          : TrainableBlocks::all();
    const BoundEvaluator ev(inst.data, inst.state, inst.spec, kind, opts, trainable);
    const Vector v = ev.initial_point();
    const Vector analytic = ev.evaluate(v).gradient;
    const Vector fd = central_differences(
        [&](const Vector& p) {
          const auto [s, sp] = ev.unpack_point(p);
          return bound == BoundType::OptimalCoefficients ? elbo_optimal(inst.data, s, sp, opts)
                                                         : elbo_factorised(inst.data, s, sp, opts);
        },
        v);
    for (const auto& blk : ev.layout().blocks()) {
      if (!trainable[blk.block]) continue;
      const Vector a = analytic.segment(blk.offset, blk.size);
      const Vector f = fd.segment(blk.offset, blk.size);
      const double rel = (a - f).norm() / std::max({a.norm(), f.norm(), 1e-6});
      if (rel > r.worst) {
        r.worst = rel;
        r.detail = "worst relative error " + short_number(rel) + " in " + std::string(block_name(blk.block)) +
                   " (draw " + std::to_string(t) + ")";
      }
    }
  }
  r.passed = r.worst < tol;
  if (r.detail.empty()) r.detail = "worst relative error 0";
  return r;
}

}  // namespace vssgp::oracle

#pragma once

// Generic maximizers used for training: limited-memory BFGS with a
// strong-Wolfe line search, and RMSProp for noisy mini-batch gradients.
//
// Both maximize. Internally L-BFGS minimizes phi(x) = -f(x), so every sign
// below that refers to "phi" is the negated objective.

#include "vssgp/core.hpp"

#include <chrono>
#include <cmath>
#include <deque>
#include <functional>
#include <limits>
#include <optional>
#include <utility>
#include <vector>

namespace vssgp {

struct TraceEntry {
  double value = 0.0;
  double gradient_norm = 0.0;
  double seconds = 0.0;
};

struct OptimizeResult {
  Vector x;
  double value = -std::numeric_limits<double>::infinity();
  std::vector<TraceEntry> trace;
  bool line_search_failed = false;
  bool converged = false;
  Index evaluations = 0;
};

/// Objective returning (value, gradient). Throwing NumericalError or
/// ValidationError marks a trial point as infeasible.
using Objective = std::function<std::pair<double, Vector>(const Vector&)>;

struct LbfgsOptions {
  Index max_iters = 500;
  Index memory = 10;
  double c1 = 1e-4;
  double c2 = 0.9;
  Index max_line_search = 40;
  /// Stop when ||grad|| <= tolerance * (1 + |f|). Zero disables the test.
  double gradient_tolerance = 0.0;
};

namespace detail {

struct Trial {
  double step = 0.0;
  double phi = std::numeric_limits<double>::infinity();
  double dphi = 0.0;
  Vector x;
  Vector grad;  // of phi
  bool finite = false;
};

class Clock {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

inline double cubic_minimizer(const Trial& a, const Trial& b) {
  // Minimizer of the cubic through (a.step, a.phi, a.dphi) and (b.step, ...).
  const double d1 = a.dphi + b.dphi - 3.0 * (a.phi - b.phi) / (a.step - b.step);
  const double disc = d1 * d1 - a.dphi * b.dphi;
  if (disc < 0.0) return std::numeric_limits<double>::quiet_NaN();
  const double d2 = std::copysign(std::sqrt(disc), b.step - a.step);
  return b.step - (b.step - a.step) * (b.dphi + d2 - d1) / (b.dphi - a.dphi + 2.0 * d2);
}

}  // namespace detail

/// Maximize f with L-BFGS. Accepted iterates strictly increase f.
inline OptimizeResult maximize_lbfgs(const Objective& f, Vector x0, const LbfgsOptions& opts) {
  detail::Clock clock;
  OptimizeResult res;
  Index evals = 0;

  auto eval = [&](const Vector& x, double step, const Vector& dir) {
    detail::Trial t;
    t.step = step;
    t.x = x;
    ++evals;
    try {
      auto [value, grad] = f(x);
      if (std::isfinite(value) && grad.allFinite()) {
        t.phi = -value;
        t.grad = -grad;
        t.dphi = dir.size() ? t.grad.dot(dir) : 0.0;
        t.finite = true;
      }
    } catch (const NumericalError&) {
    } catch (const ValidationError&) {
    }
    return t;
  };

  detail::Trial cur = eval(x0, 0.0, Vector());
  if (!cur.finite) throw NumericalError("objective is not finite at the starting point");
  res.x = cur.x;
  res.value = -cur.phi;

  std::deque<std::pair<Vector, Vector>> pairs;  // (s, y)
  for (Index iter = 0; iter < opts.max_iters; ++iter) {
    const double gnorm = cur.grad.norm();
    if (opts.gradient_tolerance > 0.0 && gnorm <= opts.gradient_tolerance * (1.0 + std::abs(cur.phi))) {
      res.converged = true;
      break;
    }
    if (gnorm == 0.0) {
      res.converged = true;
      break;
    }

    // Two-loop recursion for d = -H g.
    Vector q = cur.grad;
    std::vector<double> alpha(pairs.size());
    for (std::size_t i = pairs.size(); i-- > 0;) {
      const auto& [s, y] = pairs[i];
      alpha[i] = s.dot(q) / y.dot(s);
      q -= alpha[i] * y;
    }
    if (!pairs.empty()) {
      const auto& [s, y] = pairs.back();
      q *= s.dot(y) / y.squaredNorm();
    }
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      const auto& [s, y] = pairs[i];
      const double beta = y.dot(q) / y.dot(s);
      q += (alpha[i] - beta) * s;
    }
    Vector dir = -q;
    double dphi0 = cur.grad.dot(dir);
    if (!(dphi0 < 0.0)) {
      pairs.clear();
      dir = -cur.grad;
      dphi0 = -gnorm * gnorm;
    }

    // Strong-Wolfe line search (bracketing then zoom).
    const double phi0 = cur.phi;
    double step = pairs.empty() ? std::min(1.0, 1.0 / gnorm) : 1.0;
    detail::Trial prev;
    prev.step = 0.0;
    prev.phi = phi0;
    prev.dphi = dphi0;
    prev.finite = true;
    prev.x = cur.x;
    prev.grad = cur.grad;
    std::optional<detail::Trial> accepted;
    std::optional<std::pair<detail::Trial, detail::Trial>> bracket;
    Index budget = opts.max_line_search;

    for (Index ls = 0; budget > 0; ++ls) {
      detail::Trial t = eval(cur.x + step * dir, step, dir);
      --budget;
      if (!t.finite || t.phi > phi0 + opts.c1 * step * dphi0 || (ls > 0 && t.phi >= prev.phi)) {
        bracket.emplace(prev, t);
        break;
      }
      if (std::abs(t.dphi) <= -opts.c2 * dphi0) {
        accepted = std::move(t);
        break;
      }
      if (t.dphi >= 0.0) {
        bracket.emplace(t, prev);
        break;
      }
      prev = std::move(t);
      step *= 2.0;
    }

    if (!accepted && bracket) {
      detail::Trial lo = std::move(bracket->first);
      detail::Trial hi = std::move(bracket->second);
      while (budget > 0) {
        const double a = std::min(lo.step, hi.step), b = std::max(lo.step, hi.step);
        double trial_step = 0.5 * (lo.step + hi.step);
        if (hi.finite) {
          const double c = detail::cubic_minimizer(lo, hi);
          const double margin = 0.1 * (b - a);
          if (std::isfinite(c) && c > a + margin && c < b - margin) trial_step = c;
        }
        if (b - a < 1e-16 * std::max(1.0, b)) break;
        detail::Trial t = eval(cur.x + trial_step * dir, trial_step, dir);
        --budget;
        if (!t.finite || t.phi > phi0 + opts.c1 * trial_step * dphi0 || t.phi >= lo.phi) {
          hi = std::move(t);
        } else {
          if (std::abs(t.dphi) <= -opts.c2 * dphi0) {
            accepted = std::move(t);
            break;
          }
          if (t.dphi * (hi.step - lo.step) >= 0.0) hi = lo;
          lo = std::move(t);
        }
      }
      // Accept a sufficient-decrease point even without the curvature test.
      if (!accepted && lo.step > 0.0 && lo.finite && lo.phi < phi0) accepted = std::move(lo);
    }
    res.evaluations = evals;

    if (!accepted) {
      res.line_search_failed = true;
      break;
    }
    Vector s = accepted->x - cur.x;
    Vector y = accepted->grad - cur.grad;
    const double sy = s.dot(y);
    if (sy > 1e-10 * s.norm() * y.norm()) {
      pairs.emplace_back(std::move(s), std::move(y));
      if (static_cast<Index>(pairs.size()) > opts.memory) pairs.pop_front();
    }
    cur = std::move(*accepted);
    res.x = cur.x;
    res.value = -cur.phi;
    res.trace.push_back({res.value, cur.grad.norm(), clock.seconds()});
  }
  res.evaluations = evals;
  return res;
}

struct RmspropOptions {
  Index max_iters = 500;
  double step = 1e-3;
  double decay = 0.9;
  double epsilon = 1e-8;
};

/// RMSProp ascent: r <- decay r + (1 - decay) g^2, x <- x + step g / sqrt(r + eps).
/// `f(x, iteration)` may be stochastic. Returns the final iterate; `value`
/// is the objective reported at the last step.
inline OptimizeResult maximize_rmsprop(const std::function<std::pair<double, Vector>(const Vector&, Index)>& f,
                                       Vector x0, const RmspropOptions& opts) {
  detail::Clock clock;
  OptimizeResult res;
  Vector x = std::move(x0);
  Vector r = Vector::Zero(x.size());
  for (Index iter = 0; iter < opts.max_iters; ++iter) {
    auto [value, grad] = f(x, iter);
    ++res.evaluations;
    if (!std::isfinite(value) || !grad.allFinite())
      throw NumericalError("non-finite objective during stochastic optimisation");
    r = opts.decay * r + (1.0 - opts.decay) * grad.cwiseAbs2();
    x.array() += opts.step * grad.array() / (r.array() + opts.epsilon).sqrt();
    res.value = value;
    res.trace.push_back({value, grad.norm(), clock.seconds()});
  }
  res.x = std::move(x);
  return res;
}

}  // namespace vssgp

#pragma once

// KL terms, the optimal coefficient posterior and the three evidence lower
// bounds (optimal-coefficient, factorised and stochastic mini-batch).

#include "vssgp/core.hpp"
#include "vssgp/features.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

namespace vssgp {

enum class BoundType { OptimalCoefficients, Factorised, Stochastic };

struct BoundKind {
  BoundType type = BoundType::OptimalCoefficients;
  Index batch_size = 0;     // Stochastic only
  std::uint64_t seed = 0;   // Stochastic only

  static BoundKind optimal() { return {BoundType::OptimalCoefficients, 0, 0}; }
  static BoundKind factorised() { return {BoundType::Factorised, 0, 0}; }
  static BoundKind stochastic(Index batch, std::uint64_t seed) {
    return {BoundType::Stochastic, batch, seed};
  }
};

inline std::string to_string(BoundType t) {
  switch (t) {
    case BoundType::OptimalCoefficients: return "optimal";
    case BoundType::Factorised: return "factorised";
    case BoundType::Stochastic: return "stochastic";
  }
  return "?";
}

inline BoundType bound_type_from_string(const std::string& s) {
  if (s == "optimal") return BoundType::OptimalCoefficients;
  if (s == "factorised") return BoundType::Factorised;
  if (s == "stochastic") return BoundType::Stochastic;
  throw ValidationError("unknown bound kind '" + s + "'");
}

/// KL(q(w, b) || p(w, b)). Fixed phases contribute nothing. A zero frequency
/// variance makes the divergence infinite.
inline double kl_freq(const VariationalState& s) {
  const auto& var = s.freq_vars.array();
  if ((var <= 0.0).any()) return std::numeric_limits<double>::infinity();
  double kl = 0.5 * (var + s.freq_means.array().square() - 1.0 - var.log()).sum();
  if (s.variational_phases()) {
    const auto& vp = std::get<VariationalPhases>(s.phases);
    const auto width = (vp.upper - vp.lower).array();
    if ((width <= 0.0).any()) return std::numeric_limits<double>::infinity();
    kl += (std::log(kTwoPi) - width.log()).sum();
  }
  return kl;
}

/// KL(q(A) || p(A)) with p(a_d) = N(0, I) and diagonal s_d.
inline double kl_coeff(const VariationalState& s) {
  const auto& v = s.coeff_vars.array();
  return 0.5 * (v + s.coeff_means.array().square() - 1.0 - v.log()).sum();
}

/// Optimal q(a_d) = N(M_d, tau^-1 covariance) for fixed q(w, b).
struct CoefficientSolve {
  Matrix covariance;        // Sigma-hat = (E[Phi'Phi] + tau^-1 I)^-1
  Matrix means;             // LK x D
  Matrix cholesky_lower;    // of E[Phi'Phi] + (tau^-1 + jitter) I
  double log_det_system = 0.0;  // log |E[Phi'Phi] + tau^-1 I|
  double jitter = 0.0;
  double noise_precision = 1.0;
};

inline constexpr std::array<double, 4> kJitterSchedule = {0.0, 1e-10, 1e-8, 1e-6};

/// Cholesky of a symmetric matrix with escalating diagonal jitter.
inline Eigen::LLT<Matrix> robust_cholesky(const Matrix& a, double* jitter_used = nullptr) {
  for (double jitter : kJitterSchedule) {
    Matrix shifted = a;
    shifted.diagonal().array() += jitter;
    Eigen::LLT<Matrix> llt(shifted);
    if (llt.info() == Eigen::Success) {
      if (jitter_used) *jitter_used = jitter;
      return llt;
    }
  }
  const double min_eig = Eigen::SelfAdjointEigenSolver<Matrix>(a, Eigen::EigenvaluesOnly)
                             .eigenvalues()
                             .minCoeff();
  std::ostringstream msg;
  msg << "Cholesky failed after jitter " << kJitterSchedule.back()
      << "; smallest eigenvalue estimate " << min_eig;
  throw NumericalError(msg.str());
}

inline CoefficientSolve solve_optimal_coefficients(const FeatureMoments& moments,
                                                   const Eigen::Ref<const Matrix>& Y, double tau) {
  if (!(tau > 0.0) || !std::isfinite(tau)) throw ValidationError("noise precision must be > 0");
  if (!moments.ephi.allFinite() || !moments.ephitphi.allFinite())
    throw NumericalError("non-finite feature moments");
  const Index lk = moments.ephitphi.rows();
  Matrix system = moments.ephitphi;
  system.diagonal().array() += 1.0 / tau;

  CoefficientSolve out;
  out.noise_precision = tau;
  auto llt = robust_cholesky(system, &out.jitter);
  out.cholesky_lower = llt.matrixL();
  out.log_det_system = 2.0 * out.cholesky_lower.diagonal().array().log().sum();
  out.covariance = llt.solve(Matrix::Identity(lk, lk));
  out.covariance = 0.5 * (out.covariance + out.covariance.transpose());
  out.means = llt.solve(moments.ephi.transpose() * Y);
  return out;
}

struct BoundOptions {
  bool include_kl_freq = true;
};

namespace detail {

inline double log_two_pi_over(double tau) { return std::log(kTwoPi) - std::log(tau); }

}  // namespace detail

/// Bound with q(A) at its optimum:
///   sum_d [ -N/2 log(2 pi / tau) - tau/2 y_d'y_d + 1/2 log|tau^-1 S|
///           + tau/2 y_d' E[Phi] S E[Phi]' y_d ] - KL(q(w,b) || p(w,b)).
/// Substituting the optimum into the factorised bound gives exactly this, no
/// extra constant.
inline double elbo_optimal(const Dataset& data, const VariationalState& state, const KernelSpec& spec,
                           BoundOptions opts = {}, CoefficientSolve* solve_out = nullptr) {
  const double tau = state.noise_precision;
  const auto n = static_cast<double>(data.size());
  const auto d = static_cast<double>(data.output_dim());
  const auto lk = static_cast<double>(state.num_features());
  const FeatureMoments mom = feature_moments(data.inputs, state, spec);
  CoefficientSolve solve = solve_optimal_coefficients(mom, data.outputs, tau);

  const Matrix b = mom.ephi.transpose() * data.outputs;  // LK x D
  const double fit = (b.array() * solve.means.array()).sum();
  const double log_det_post = -lk * std::log(tau) - solve.log_det_system;
  double value = -0.5 * n * d * detail::log_two_pi_over(tau) -
                 0.5 * tau * data.outputs.squaredNorm() + 0.5 * d * log_det_post + 0.5 * tau * fit;
  if (opts.include_kl_freq) value -= kl_freq(state);
  if (solve_out) *solve_out = std::move(solve);
  return value;
}

/// Single-point, single-output expected log-likelihood L_nd given the feature
/// moments of that row.
inline double pointwise_term(double y, const Eigen::Ref<const RowVector>& ephi,
                             const Eigen::Ref<const RowVector>& second,
                             const Eigen::Ref<const Vector>& mean, const Eigen::Ref<const Vector>& var,
                             double tau) {
  const double em = ephi.dot(mean.transpose());
  const auto m2 = mean.array().square().transpose();
  const double trace = em * em + (second.array() * (var.array().transpose() + m2)).sum() -
                       (ephi.array().square() * m2).sum();
  return -0.5 * detail::log_two_pi_over(tau) - 0.5 * tau * y * y + tau * y * em - 0.5 * tau * trace;
}

inline double elbo_pointwise(Index n, Index d, const Dataset& data, const VariationalState& state,
                             const RowMoments& rows) {
  if (n < 0 || n >= data.size() || d < 0 || d >= data.output_dim())
    throw ValidationError("elbo_pointwise: index out of range");
  return pointwise_term(data.outputs(n, d), rows.ephi.row(n), rows.second.row(n),
                        state.coeff_means.col(d), state.coeff_vars.col(d), state.noise_precision);
}

/// Sum over the given rows and all outputs of L_nd, evaluated in matrix form.
/// `rows` holds the moments of exactly those data rows, in order.
inline double sum_pointwise(const Eigen::Ref<const Matrix>& Y, const RowMoments& rows,
                            const VariationalState& state) {
  const double tau = state.noise_precision;
  const Matrix& m = state.coeff_means;  // LK x D
  const Matrix em = rows.ephi * m;      // B x D
  const Matrix m2 = m.cwiseAbs2();
  const Matrix trace = em.cwiseAbs2() + rows.second * (state.coeff_vars + m2) - rows.ephi.cwiseAbs2() * m2;
  const auto count = static_cast<double>(Y.size());
  return -0.5 * count * detail::log_two_pi_over(tau) - 0.5 * tau * Y.squaredNorm() +
         tau * (Y.array() * em.array()).sum() - 0.5 * tau * trace.sum();
}

inline double elbo_factorised(const Dataset& data, const VariationalState& state, const KernelSpec& spec,
                              BoundOptions opts = {}) {
  const RowMoments rows = row_moments(data.inputs, state, spec);
  double value = sum_pointwise(data.outputs, rows, state) - kl_coeff(state);
  if (opts.include_kl_freq) value -= kl_freq(state);
  return value;
}

inline void validate_batch(const std::vector<Index>& batch, Index n) {
  if (batch.empty()) throw ValidationError("mini-batch must be non-empty");
  std::vector<bool> seen(static_cast<std::size_t>(n), false);
  for (Index i : batch) {
    if (i < 0 || i >= n) throw ValidationError("mini-batch index out of range");
    if (seen[static_cast<std::size_t>(i)]) throw ValidationError("mini-batch has duplicate index");
    seen[static_cast<std::size_t>(i)] = true;
  }
}

/// Unbiased mini-batch estimate of the factorised bound.
inline double elbo_stochastic(const Dataset& data, const VariationalState& state, const KernelSpec& spec,
                              const std::vector<Index>& batch, BoundOptions opts = {}) {
  validate_batch(batch, data.size());
  const Dataset sub = data.rows(batch);
  const RowMoments rows = row_moments(sub.inputs, state, spec);
  const double scale = static_cast<double>(data.size()) / static_cast<double>(batch.size());
  double value = scale * sum_pointwise(sub.outputs, rows, state) - kl_coeff(state);
  if (opts.include_kl_freq) value -= kl_freq(state);
  return value;
}

}  // namespace vssgp

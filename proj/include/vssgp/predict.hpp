#pragma once

// Predictive mean and covariance of y* under q(A) q(w, b).

#include "vssgp/bounds.hpp"
#include "vssgp/features.hpp"

#include <vector>

namespace vssgp {

struct PredictiveDensity {
  RowVector mean;     // 1 x D
  Matrix covariance;  // D x D
};

namespace detail {

inline const Matrix& coefficient_means(const VariationalState& s, const CoefficientSolve* solve) {
  return solve ? solve->means : s.coeff_means;
}

/// Predictive density for one row of features moments.
inline PredictiveDensity predictive_from_row(const RowVector& e, const RowVector& second,
                                             const VariationalState& s, const CoefficientSolve* solve) {
  const Matrix& m = coefficient_means(s, solve);
  const double tau = s.noise_precision;
  PredictiveDensity out;
  out.mean = e * m;
  const RowVector feature_var = second - e.cwiseAbs2();
  out.covariance = m.transpose() * feature_var.asDiagonal() * m;
  out.covariance.diagonal().array() += 1.0 / tau;
  if (solve) {
    // s_d = tau^-1 Sigma-hat for every output
    const Matrix& cov = solve->covariance;
    const double trace = (e * cov * e.transpose())(0, 0) + feature_var.dot(cov.diagonal().transpose());
    out.covariance.diagonal().array() += trace / solve->noise_precision;
  } else {
    out.covariance.diagonal() += (second * s.coeff_vars).transpose();
  }
  out.covariance = 0.5 * (out.covariance + out.covariance.transpose());
  return out;
}

}  // namespace detail

/// E[phi_*] M. With a coefficient solve, M is the optimal mean.
inline RowVector predictive_mean(const Eigen::Ref<const Vector>& x, const VariationalState& s,
                                 const KernelSpec& spec, const CoefficientSolve* solve = nullptr) {
  const Matrix xrow = x.transpose();
  const RowMoments r = row_moments(xrow, s, spec);
  return detail::predictive_from_row(r.ephi.row(0), r.second.row(0), s, solve).mean;
}

/// tau^-1 I + Psi + M'(E[phi_*'phi_*] - E[phi_*]'E[phi_*])M.
inline Matrix predictive_variance(const Eigen::Ref<const Vector>& x, const VariationalState& s,
                                  const KernelSpec& spec, const CoefficientSolve* solve = nullptr) {
  const Matrix xrow = x.transpose();
  const RowMoments r = row_moments(xrow, s, spec);
  return detail::predictive_from_row(r.ephi.row(0), r.second.row(0), s, solve).covariance;
}

inline std::vector<PredictiveDensity> predict_batch(const Eigen::Ref<const Matrix>& xstar, const VariationalState& s,
                                                    const KernelSpec& spec, const CoefficientSolve* solve = nullptr) {
  if (xstar.rows() < 1) throw ValidationError("predict_batch: no test inputs");
  if (xstar.cols() != s.input_dim()) throw ValidationError("predict_batch: input dimension mismatch");
  if (solve && (solve->means.rows() != s.num_features() || solve->covariance.rows() != s.num_features()))
    throw ValidationError("predict_batch: coefficient solve does not match the state");
  const RowMoments r = row_moments(xstar, s, spec);
  std::vector<PredictiveDensity> out;
  out.reserve(static_cast<std::size_t>(xstar.rows()));
  for (Index n = 0; n < xstar.rows(); ++n)
    out.push_back(detail::predictive_from_row(r.ephi.row(n), r.second.row(n), s, solve));
  return out;
}

/// Stack predictive means into an N x D matrix.
inline Matrix stack_means(const std::vector<PredictiveDensity>& preds) {
  Matrix m(static_cast<Index>(preds.size()), preds.empty() ? 0 : preds.front().mean.size());
  for (std::size_t i = 0; i < preds.size(); ++i) m.row(static_cast<Index>(i)) = preds[i].mean;
  return m;
}

/// Marginal predictive standard deviations, N x D.
inline Matrix stack_stddevs(const std::vector<PredictiveDensity>& preds) {
  Matrix m(static_cast<Index>(preds.size()), preds.empty() ? 0 : preds.front().mean.size());
  for (std::size_t i = 0; i < preds.size(); ++i)
    m.row(static_cast<Index>(i)) = preds[i].covariance.diagonal().cwiseSqrt().transpose();
  return m;
}

}  // namespace vssgp

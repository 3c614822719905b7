#pragma once

// Closed-form moments of the random cosine feature matrix Phi under the
// variational posterior q(w, b), and plain feature evaluation for sampled
// (w, b).

#include "vssgp/core.hpp"

#include <algorithm>
#include <cmath>

namespace vssgp {

namespace detail {

inline constexpr double kMinExponent = -745.0;

inline double safe_exp(double x) { return std::exp(std::max(x, kMinExponent)); }

/// sin(x) / x with its removable singularity filled in.
inline double sinc(double x) {
  if (std::abs(x) < 1e-4) {
    const double x2 = x * x;
    return 1.0 - x2 / 6.0 + x2 * x2 / 120.0;
  }
  return std::sin(x) / x;
}

inline double sinc_derivative(double x) {
  if (std::abs(x) < 1e-4) {
    const double x2 = x * x;
    return -x / 3.0 + x * x2 / 30.0;
  }
  return (x * std::cos(x) - std::sin(x)) / (x * x);
}

}  // namespace detail

/// E[cos(w'x + b)] for w ~ N(mu, diag(var)).
inline double expected_cos_gaussian(const Eigen::Ref<const Vector>& mean,
                                    const Eigen::Ref<const Vector>& var,
                                    const Eigen::Ref<const Vector>& xbar, double bbar) {
  const double quad = (xbar.array().square() * var.array()).sum();
  return detail::safe_exp(-0.5 * quad) * std::cos(mean.dot(xbar) + bbar);
}

/// E[cos^2(w'x + b)] for w ~ N(mu, diag(var)).
inline double expected_cos_sq_gaussian(const Eigen::Ref<const Vector>& mean,
                                       const Eigen::Ref<const Vector>& var,
                                       const Eigen::Ref<const Vector>& xbar, double bbar) {
  const double quad = (xbar.array().square() * var.array()).sum();
  return 0.5 + 0.5 * detail::safe_exp(-2.0 * quad) * std::cos(2.0 * mean.dot(xbar) + 2.0 * bbar);
}

/// E[cos(c + b)] for b ~ U(lower, upper). Equal bounds give cos(c + lower).
inline double expected_cos_uniform_phase(double c, double lower, double upper) {
  return std::cos(c + 0.5 * (lower + upper)) * detail::sinc(0.5 * (upper - lower));
}

/// Per-(point, column) geometry: xbar = (x - z_k) / l_i and the periodic
/// offset 2 pi p_i'(x - z_k).
struct ScaledInput {
  Vector xbar;
  double offset = 0.0;
};

inline ScaledInput scaled_input(const Eigen::Ref<const Vector>& x, const Eigen::Ref<const Vector>& z,
                                const SMComponent& comp) {
  const Vector diff = x - z;
  return {(diff.array() / comp.lengthscales.array()).matrix(),
          kTwoPi * comp.inverse_periods.dot(diff)};
}

/// sqrt(2 sigma_i^2 / K) for every column.
inline Vector column_scales(const VariationalState& state, const KernelSpec& spec) {
  const Index lk = state.num_features();
  Vector c(lk);
  for (Index k = 0; k < lk; ++k) {
    const auto& comp = spec.components[component_of(k, state.features_per_component)];
    c(k) = std::sqrt(2.0 * comp.weight / static_cast<double>(state.features_per_component));
  }
  return c;
}

/// Feature row for one draw of the standard-normal frequencies (Q x LK) and
/// phases (LK).
inline RowVector phi_row(const Eigen::Ref<const Vector>& x, const Eigen::Ref<const Matrix>& w,
                         const Eigen::Ref<const Vector>& b, const Eigen::Ref<const Matrix>& inducing,
                         const KernelSpec& spec, Index features_per_component) {
  const Index lk = w.cols();
  RowVector row(lk);
  for (Index k = 0; k < lk; ++k) {
    const auto& comp = spec.components[component_of(k, features_per_component)];
    const Vector diff = x - inducing.col(k);
    const Vector freq = (w.col(k).array() / (kTwoPi * comp.lengthscales.array())).matrix() +
                        comp.inverse_periods;
    const double scale = std::sqrt(2.0 * comp.weight / static_cast<double>(features_per_component));
    row(k) = scale * std::cos(kTwoPi * freq.dot(diff) + b(k));
  }
  return row;
}

/// Feature matrix for one draw of (w, b).
inline Matrix phi_matrix(const Eigen::Ref<const Matrix>& X, const Eigen::Ref<const Matrix>& w,
                         const Eigen::Ref<const Vector>& b, const Eigen::Ref<const Matrix>& inducing,
                         const KernelSpec& spec, Index features_per_component) {
  Matrix out(X.rows(), w.cols());
  for (Index n = 0; n < X.rows(); ++n)
    out.row(n) = phi_row(X.row(n).transpose(), w, b, inducing, spec, features_per_component);
  return out;
}

/// Per-row first and second moments of the features: ephi(n, k) = E[phi_nk]
/// and second(n, k) = E[phi_nk^2]. Together they determine
/// E[phi_n' phi_n] = e_n' e_n + diag(second_n - e_n^2).
struct RowMoments {
  Matrix ephi;
  Matrix second;
};

struct FeatureMoments {
  Matrix ephi;      // N x LK
  Matrix ephitphi;  // LK x LK
};

/// Column-wise geometry shared by the moment computation and its gradient.
struct ColumnGeometry {
  Matrix diff;    // N x Q, x_n - z_k
  Matrix xbar;    // N x Q
  Vector quad;    // xbar' Sigma_k xbar
  Vector arg;     // mu_k' xbar + 2 pi p_i' diff
};

inline ColumnGeometry column_geometry(const Eigen::Ref<const Matrix>& X, const VariationalState& state,
                                      const KernelSpec& spec, Index k) {
  const auto& comp = spec.components[component_of(k, state.features_per_component)];
  ColumnGeometry g;
  g.diff = X.rowwise() - state.inducing_inputs.col(k).transpose();
  g.xbar = g.diff.array().rowwise() / comp.lengthscales.transpose().array();
  g.quad = g.xbar.array().square().matrix() * state.freq_vars.col(k);
  g.arg = g.xbar * state.freq_means.col(k) + kTwoPi * (g.diff * comp.inverse_periods);
  return g;
}

inline RowMoments row_moments(const Eigen::Ref<const Matrix>& X, const VariationalState& state,
                              const KernelSpec& spec) {
  const Index n = X.rows();
  const Index lk = state.num_features();
  const Vector scale = column_scales(state, spec);
  const PhaseWindow phase = phase_window(state);
  RowMoments m{Matrix(n, lk), Matrix(n, lk)};
  for (Index k = 0; k < lk; ++k) {
    const ColumnGeometry g = column_geometry(X, state, spec, k);
    const double damp1 = detail::sinc(0.5 * phase.width(k));
    const double damp2 = detail::sinc(phase.width(k));
    const double c2 = scale(k) * scale(k);
    for (Index r = 0; r < n; ++r) {
      const double decay = detail::safe_exp(-0.5 * g.quad(r));
      const double decay4 = detail::safe_exp(-2.0 * g.quad(r));
      const double theta = g.arg(r) + phase.centre(k);
      m.ephi(r, k) = scale(k) * decay * std::cos(theta) * damp1;
      m.second(r, k) = c2 * (0.5 + 0.5 * decay4 * std::cos(2.0 * theta) * damp2);
    }
  }
  return m;
}

inline Matrix expected_phi(const Eigen::Ref<const Matrix>& X, const VariationalState& state,
                           const KernelSpec& spec) {
  return row_moments(X, state, spec).ephi;
}

/// E[Phi' Phi] assembled from row moments.
inline Matrix gram_from_rows(const RowMoments& m) {
  Matrix g = m.ephi.transpose() * m.ephi;
  g.diagonal() += (m.second - m.ephi.cwiseAbs2()).colwise().sum().transpose();
  return g;
}

inline Matrix expected_phitphi(const Eigen::Ref<const Matrix>& X, const VariationalState& state,
                               const KernelSpec& spec) {
  return gram_from_rows(row_moments(X, state, spec));
}

inline FeatureMoments feature_moments(const Eigen::Ref<const Matrix>& X, const VariationalState& state,
                                      const KernelSpec& spec) {
  RowMoments rows = row_moments(X, state, spec);
  Matrix gram = gram_from_rows(rows);
  return {std::move(rows.ephi), std::move(gram)};
}

/// Diagonal of E[Phi Phi'] (the implied prior variance at each input).
inline Vector expected_feature_diagonal(const Eigen::Ref<const Matrix>& X, const VariationalState& state,
                                        const KernelSpec& spec) {
  return row_moments(X, state, spec).second.rowwise().sum();
}

}  // namespace vssgp

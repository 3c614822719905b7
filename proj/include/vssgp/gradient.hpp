#pragma once

// Exact gradients of the bounds with respect to the unconstrained parameter
// vector. The backward pass is hand-derived: bound -> (E[Phi], E[phi^2],
// tau, m, s) -> feature geometry -> constrained parameters -> unconstrained.

#include "vssgp/bounds.hpp"
#include "vssgp/features.hpp"
#include "vssgp/parameters.hpp"

#include <cmath>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace vssgp {

/// Bound value and its gradient in unconstrained coordinates. Entries for
/// parameters outside the trainable mask are zero.
struct BoundValue {
  double value = 0.0;
  Vector gradient;
};

/// Gradients with respect to constrained quantities.
struct ConstrainedGradient {
  double noise_precision = 0.0;
  Vector weights;          // L
  Matrix lengthscales;     // Q x L
  Matrix inverse_periods;  // Q x L
  Matrix inducing_inputs;  // Q x LK
  Matrix freq_means;       // Q x LK
  Matrix freq_vars;        // Q x LK
  Vector phase_centre;     // LK
  Vector phase_width;      // LK
  Matrix coeff_means;      // LK x D
  Matrix coeff_vars;       // LK x D

  ConstrainedGradient(const VariationalState& s, const KernelSpec& spec)
      : weights(Vector::Zero(spec.num_components())),
        lengthscales(Matrix::Zero(spec.input_dim(), spec.num_components())),
        inverse_periods(Matrix::Zero(spec.input_dim(), spec.num_components())),
        inducing_inputs(Matrix::Zero(s.input_dim(), s.num_features())),
        freq_means(Matrix::Zero(s.input_dim(), s.num_features())),
        freq_vars(Matrix::Zero(s.input_dim(), s.num_features())),
        phase_centre(Vector::Zero(s.num_features())),
        phase_width(Vector::Zero(s.num_features())),
        coeff_means(Matrix::Zero(s.num_features(), s.output_dim())),
        coeff_vars(Matrix::Zero(s.num_features(), s.output_dim())) {}
};

namespace detail {

/// Push upstream gradients dE = dF/dE[Phi] and dU = dF/dE[phi^2] (both
/// rows x LK, for the data rows X) down to the constrained parameters.
inline void backprop_features(const Eigen::Ref<const Matrix>& X, const VariationalState& state,
                              const KernelSpec& spec, const Matrix& dE, const Matrix& dU,
                              ConstrainedGradient& g) {
  const Index rows = X.rows();
  const Index lk = state.num_features();
  const Vector scale = column_scales(state, spec);
  const PhaseWindow phase = phase_window(state);
  Vector d_quad(rows), d_theta(rows);
  for (Index k = 0; k < lk; ++k) {
    const Index i = component_of(k, state.features_per_component);
    const auto& comp = spec.components[i];
    const ColumnGeometry geo = column_geometry(X, state, spec, k);
    const double c = scale(k);
    const double c2 = c * c;
    const double w = phase.width(k);
    const double damp1 = sinc(0.5 * w), damp2 = sinc(w);
    const double ddamp1 = 0.5 * sinc_derivative(0.5 * w), ddamp2 = sinc_derivative(w);
    double d_scale = 0.0, d_width = 0.0, d_centre = 0.0;
    for (Index r = 0; r < rows; ++r) {
      const double h = safe_exp(-0.5 * geo.quad(r));
      const double h4 = safe_exp(-2.0 * geo.quad(r));
      const double theta = geo.arg(r) + phase.centre(k);
      const double cs = std::cos(theta), sn = std::sin(theta);
      const double cs2 = std::cos(2.0 * theta), sn2 = std::sin(2.0 * theta);
      const double ge = dE(r, k), gu = dU(r, k);
      const double e = c * h * cs * damp1;

      d_scale += ge * h * cs * damp1 + gu * 2.0 * c * (0.5 + 0.5 * h4 * cs2 * damp2);
      d_quad(r) = ge * (-0.5 * e) + gu * (-c2 * h4 * cs2 * damp2);
      d_theta(r) = ge * (-c * h * sn * damp1) + gu * (-c2 * h4 * sn2 * damp2);
      d_width += ge * c * h * cs * ddamp1 + gu * 0.5 * c2 * h4 * cs2 * ddamp2;
    }
    d_centre = d_theta.sum();

    // quad = sum_q var_q xbar_q^2, arg = mu'xbar + 2 pi p'diff, xbar = diff / l
    const Vector var = state.freq_vars.col(k);
    const Vector mu = state.freq_means.col(k);
    g.freq_vars.col(k) += geo.xbar.cwiseAbs2().transpose() * d_quad;
    g.freq_means.col(k) += geo.xbar.transpose() * d_theta;
    Matrix d_xbar = (d_quad.asDiagonal() * geo.xbar) * (2.0 * var).asDiagonal();
    d_xbar.noalias() += d_theta * mu.transpose();
    Matrix d_diff = d_xbar.array().rowwise() / comp.lengthscales.transpose().array();
    d_diff.noalias() += kTwoPi * d_theta * comp.inverse_periods.transpose();
    g.lengthscales.col(i) -=
        ((d_xbar.array() * geo.xbar.array()).colwise().sum().transpose() / comp.lengthscales.array())
            .matrix();
    g.inverse_periods.col(i) += kTwoPi * (geo.diff.transpose() * d_theta);
    g.inducing_inputs.col(k) -= d_diff.colwise().sum().transpose();
    g.weights(i) += d_scale * c / (2.0 * comp.weight);
    g.phase_centre(k) += d_centre;
    g.phase_width(k) += d_width;
  }
}

inline void add_kl_freq_gradient(const VariationalState& s, ConstrainedGradient& g) {
  g.freq_means -= s.freq_means;
  g.freq_vars.array() -= 0.5 * (1.0 - s.freq_vars.array().inverse());
  if (s.variational_phases()) {
    const auto& vp = std::get<VariationalPhases>(s.phases);
    g.phase_width.array() += (vp.upper - vp.lower).array().inverse();
  }
}

inline void add_kl_coeff_gradient(const VariationalState& s, ConstrainedGradient& g) {
  g.coeff_means -= s.coeff_means;
  g.coeff_vars.array() -= 0.5 * (1.0 - s.coeff_vars.array().inverse());
}

/// Optimal-coefficient bound and its gradient.
inline double optimal_bound_backward(const Dataset& data, const VariationalState& s,
                                     const KernelSpec& spec, BoundOptions opts, ConstrainedGradient& g) {
  const double tau = s.noise_precision;
  const Matrix& Y = data.outputs;
  const auto n = static_cast<double>(data.size());
  const auto d = static_cast<double>(data.output_dim());
  const auto lk = static_cast<double>(s.num_features());
  const RowMoments rows = row_moments(data.inputs, s, spec);
  const FeatureMoments mom{rows.ephi, gram_from_rows(rows)};
  const CoefficientSolve solve = solve_optimal_coefficients(mom, Y, tau);
  const Matrix& cov = solve.covariance;
  const Matrix& mhat = solve.means;
  const Matrix b = rows.ephi.transpose() * Y;
  const double fit = (b.array() * mhat.array()).sum();

  double value = -0.5 * n * d * log_two_pi_over(tau) - 0.5 * tau * Y.squaredNorm() +
                 0.5 * d * (-lk * std::log(tau) - solve.log_det_system) + 0.5 * tau * fit;

  // dF/dA for A = E[Phi'Phi] + tau^-1 I
  const Matrix g_sys = -0.5 * d * cov - 0.5 * tau * mhat * mhat.transpose();
  Matrix off = g_sys;
  off.diagonal().setZero();
  const Matrix dE = 2.0 * rows.ephi * off + tau * Y * mhat.transpose();
  const Matrix dU = Matrix::Ones(data.size(), 1) * g_sys.diagonal().transpose();
  backprop_features(data.inputs, s, spec, dE, dU, g);

  g.noise_precision += 0.5 * n * d / tau - 0.5 * Y.squaredNorm() - 0.5 * d * lk / tau + 0.5 * fit -
                       g_sys.trace() / (tau * tau);
  if (opts.include_kl_freq) {
    value -= kl_freq(s);
    add_kl_freq_gradient(s, g);
  }
  return value;
}

/// Factorised bound restricted to `sub` (rows scaled by `weight`) and its
/// gradient.
inline double factorised_bound_backward(const Dataset& sub, double weight, const VariationalState& s,
                                        const KernelSpec& spec, BoundOptions opts,
                                        ConstrainedGradient& g) {
  const double tau = s.noise_precision;
  const Matrix& Y = sub.outputs;
  const RowMoments rows = row_moments(sub.inputs, s, spec);
  const Matrix& E = rows.ephi;
  const Matrix& U = rows.second;
  const Matrix& M = s.coeff_means;
  const Matrix M2 = M.cwiseAbs2();
  const Matrix EM = E * M;
  const Matrix resid = Y - EM;

  double value = weight * sum_pointwise(Y, rows, s) - kl_coeff(s);

  const Vector m2_rows = M2.rowwise().sum();  // sum_d m_kd^2
  Matrix dE = resid * M.transpose() + E * m2_rows.asDiagonal();
  dE *= weight * tau;
  const RowVector u_weight = (s.coeff_vars + M2).rowwise().sum().transpose();
  const Matrix dU = Matrix::Ones(sub.size(), 1) * (-0.5 * weight * tau * u_weight);
  backprop_features(sub.inputs, s, spec, dE, dU, g);

  const Vector u_sum = U.colwise().sum().transpose();
  const Vector e2_sum = E.cwiseAbs2().colwise().sum().transpose();
  g.coeff_means += weight * tau * (E.transpose() * resid - (u_sum - e2_sum).asDiagonal() * M);
  g.coeff_vars += (-0.5 * weight * tau) * u_sum * RowVector::Ones(s.output_dim());
  add_kl_coeff_gradient(s, g);

  const Matrix trace = EM.cwiseAbs2() + U * (s.coeff_vars + M2) - E.cwiseAbs2() * M2;
  const double quad = -0.5 * Y.squaredNorm() + (Y.array() * EM.array()).sum() - 0.5 * trace.sum();
  g.noise_precision += weight * (0.5 * static_cast<double>(Y.size()) / tau + quad);

  if (opts.include_kl_freq) {
    value -= kl_freq(s);
    add_kl_freq_gradient(s, g);
  }
  return value;
}

}  // namespace detail

/// Chain constrained gradients through the unpack transforms.
inline Vector to_unconstrained(const ConstrainedGradient& g, const Eigen::Ref<const Vector>& v,
                               const ParameterLayout& layout, const VariationalState& s,
                               const KernelSpec& spec) {
  Vector out = Vector::Zero(layout.size());
  const Index q = spec.input_dim();
  for (const auto& r : layout.blocks()) {
    auto seg = out.segment(r.offset, r.size);
    const auto raw = v.segment(r.offset, r.size);
    switch (r.block) {
      case Block::NoisePrecision:
        seg(0) = g.noise_precision * s.noise_precision;
        break;
      case Block::Weights:
        for (Index i = 0; i < spec.num_components(); ++i) seg(i) = g.weights(i) * spec.components[i].weight;
        break;
      case Block::Lengthscales:
        for (Index i = 0; i < spec.num_components(); ++i)
          seg.segment(i * q, q) = g.lengthscales.col(i).cwiseProduct(spec.components[i].lengthscales);
        break;
      case Block::InversePeriods: {
        Index j = 0;
        for (Index i = 0; i < spec.num_components(); ++i)
          for (Index dd = 0; dd < q; ++dd)
            if (spec.components[i].inverse_periods(dd) > 0.0) {
              seg(j) = g.inverse_periods(dd, i) * transform::sigmoid(raw(j));
              ++j;
            }
        break;
      }
      case Block::InducingInputs:
        seg = g.inducing_inputs.reshaped();
        break;
      case Block::FreqMeans:
        seg = g.freq_means.reshaped();
        break;
      case Block::FreqVars:
        seg = g.freq_vars.cwiseProduct(s.freq_vars).reshaped();
        break;
      case Block::PhaseLower:
      case Block::PhaseGap: {
        // alpha = 2pi s1, width = (2pi - alpha) s2, centre = alpha + width / 2
        const auto lower = layout.find(Block::PhaseLower).value();
        const auto gap = layout.find(Block::PhaseGap).value();
        for (Index k = 0; k < r.size; ++k) {
          const double s1 = transform::sigmoid(v(lower.offset + k));
          const double s2 = transform::sigmoid(v(gap.offset + k));
          const double alpha = kTwoPi * s1;
          const double dalpha = kTwoPi * s1 * (1.0 - s1);
          if (r.block == Block::PhaseLower) {
            const double dwidth = -s2 * dalpha;
            seg(k) = g.phase_centre(k) * (dalpha + 0.5 * dwidth) + g.phase_width(k) * dwidth;
          } else {
            const double dwidth = (kTwoPi - alpha) * s2 * (1.0 - s2);
            seg(k) = g.phase_centre(k) * 0.5 * dwidth + g.phase_width(k) * dwidth;
          }
        }
        break;
      }
      case Block::CoeffMeans:
        seg = g.coeff_means.reshaped();
        break;
      case Block::CoeffVars:
        seg = g.coeff_vars.cwiseProduct(s.coeff_vars).reshaped();
        break;
    }
  }
  return out;
}

/// Evaluates a selected bound and its exact gradient at unconstrained
/// parameter vectors sharing one layout.
class BoundEvaluator {
 public:
  BoundEvaluator(Dataset data, VariationalState tmpl, KernelSpec tmpl_spec, BoundKind kind,
                 BoundOptions opts, const TrainableBlocks& trainable)
      : data_(std::move(data)),
        tmpl_(std::move(tmpl)),
        tmpl_spec_(std::move(tmpl_spec)),
        kind_(kind),
        opts_(opts),
        layout_(ParameterLayout::from(tmpl_, tmpl_spec_)),
        mask_(make_mask(layout_, trainable)) {
    tmpl_.validate(tmpl_spec_);
    data_.validate();
    if (data_.input_dim() != tmpl_.input_dim() || data_.output_dim() != tmpl_.output_dim())
      throw ValidationError("data dimensions do not match the model");
  }

  const ParameterLayout& layout() const { return layout_; }
  const Mask& mask() const { return mask_; }
  const Dataset& data() const { return data_; }
  BoundKind kind() const { return kind_; }
  const VariationalState& template_state() const { return tmpl_; }
  const KernelSpec& template_spec() const { return tmpl_spec_; }

  Vector initial_point() const { return pack(tmpl_, tmpl_spec_).values; }

  std::pair<VariationalState, KernelSpec> unpack_point(const Eigen::Ref<const Vector>& v) const {
    return unpack(v, tmpl_, tmpl_spec_);
  }

  /// For the stochastic kind, `batch` selects the mini-batch; without one the
  /// full data set is used (identical to the factorised bound).
  BoundValue evaluate(const Eigen::Ref<const Vector>& v, const std::vector<Index>* batch = nullptr) const {
    const auto [state, spec] = unpack_point(v);
    ConstrainedGradient g(state, spec);
    double value = 0.0;
    switch (kind_.type) {
      case BoundType::OptimalCoefficients:
        value = detail::optimal_bound_backward(data_, state, spec, opts_, g);
        break;
      case BoundType::Factorised:
        value = detail::factorised_bound_backward(data_, 1.0, state, spec, opts_, g);
        break;
      case BoundType::Stochastic:
        if (batch && static_cast<Index>(batch->size()) != data_.size()) {
          validate_batch(*batch, data_.size());
          const double w = static_cast<double>(data_.size()) / static_cast<double>(batch->size());
          value = detail::factorised_bound_backward(data_.rows(*batch), w, state, spec, opts_, g);
        } else {
          if (batch) validate_batch(*batch, data_.size());
          value = detail::factorised_bound_backward(data_, 1.0, state, spec, opts_, g);
        }
        break;
    }
    BoundValue out{value, to_unconstrained(g, v, layout_, state, spec)};
    for (Index i = 0; i < out.gradient.size(); ++i)
      if (!mask_(i)) out.gradient(i) = 0.0;
    check_finite(out);
    return out;
  }

 private:
  void check_finite(const BoundValue& b) const {
    for (Index i = 0; i < b.gradient.size(); ++i)
      if (!std::isfinite(b.gradient(i)))
        throw NumericalError("non-finite gradient in block " +
                             std::string(block_name(layout_.block_at(i))) + " (" + layout_.describe(i) + ")");
    if (!std::isfinite(b.value)) {
      std::string where = "objective";
      if (opts_.include_kl_freq && layout_.has(Block::FreqVars)) where = "freq_vars";
      throw NumericalError("non-finite bound value (block " + where + ")");
    }
  }

  Dataset data_;
  VariationalState tmpl_;
  KernelSpec tmpl_spec_;
  BoundKind kind_;
  BoundOptions opts_;
  ParameterLayout layout_;
  Mask mask_;
};

}  // namespace vssgp

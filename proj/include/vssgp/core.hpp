#pragma once

// Domain types shared by every part of the library: data, spectral mixture
// kernels and the variational state over frequencies, phases and Fourier
// coefficients.

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace vssgp {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;
using Index = Eigen::Index;

inline constexpr double kTwoPi = 2.0 * std::numbers::pi;

/// Invalid arguments, shapes or file contents.
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Factorizations that fail, non-finite objectives and similar.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

inline void require(bool ok, const std::string& what) {
  if (!ok) throw ValidationError(what);
}

template <typename Derived>
bool all_finite(const Eigen::DenseBase<Derived>& m) {
  return m.allFinite();
}

}  // namespace detail

struct Dataset {
  Matrix inputs;   // N x Q
  Matrix outputs;  // N x D

  Dataset() = default;
  Dataset(Matrix x, Matrix y) : inputs(std::move(x)), outputs(std::move(y)) {
    validate();
  }

  Index size() const { return inputs.rows(); }
  Index input_dim() const { return inputs.cols(); }
  Index output_dim() const { return outputs.cols(); }

  void validate() const {
    detail::require(inputs.rows() >= 1, "dataset: need at least one row");
    detail::require(inputs.rows() == outputs.rows(),
                    "dataset: inputs and outputs have different row counts");
    detail::require(inputs.cols() >= 1 && outputs.cols() >= 1,
                    "dataset: need at least one input and one output column");
    detail::require(detail::all_finite(inputs), "dataset: non-finite input");
    detail::require(detail::all_finite(outputs), "dataset: non-finite output");
  }

  Dataset rows(const std::vector<Index>& idx) const {
    Matrix x(static_cast<Index>(idx.size()), inputs.cols());
    Matrix y(static_cast<Index>(idx.size()), outputs.cols());
    for (std::size_t r = 0; r < idx.size(); ++r) {
      x.row(static_cast<Index>(r)) = inputs.row(idx[r]);
      y.row(static_cast<Index>(r)) = outputs.row(idx[r]);
    }
    return Dataset(std::move(x), std::move(y));
  }
};

/// One spectral mixture component. An inverse period of 0 encodes an
/// infinite period, i.e. a plain squared-exponential factor in that dimension.
struct SMComponent {
  double weight = 1.0;     // sigma_i^2
  Vector lengthscales;     // l_iq
  Vector inverse_periods;  // 1 / p_iq

  Index input_dim() const { return lengthscales.size(); }

  static SMComponent squared_exponential(double weight, Vector lengthscales) {
    SMComponent c;
    c.weight = weight;
    c.inverse_periods = Vector::Zero(lengthscales.size());
    c.lengthscales = std::move(lengthscales);
    return c;
  }
};

struct KernelSpec {
  std::vector<SMComponent> components;

  Index num_components() const { return static_cast<Index>(components.size()); }
  Index input_dim() const {
    return components.empty() ? 0 : components.front().input_dim();
  }
  double total_weight() const {
    double s = 0.0;
    for (const auto& c : components) s += c.weight;
    return s;
  }

  void validate() const {
    detail::require(!components.empty(), "kernel_spec: need at least one component");
    const Index q = input_dim();
    for (std::size_t i = 0; i < components.size(); ++i) {
      const auto& c = components[i];
      const std::string at = "kernel_spec.components[" + std::to_string(i) + "]";
      detail::require(std::isfinite(c.weight) && c.weight > 0.0, at + ".weight must be > 0");
      detail::require(c.lengthscales.size() == q && c.inverse_periods.size() == q,
                      at + ": dimension mismatch");
      detail::require(c.lengthscales.allFinite() && (c.lengthscales.array() > 0.0).all(),
                      at + ".lengthscales must be > 0");
      detail::require(c.inverse_periods.allFinite() && (c.inverse_periods.array() >= 0.0).all(),
                      at + ".inverse_periods must be >= 0");
    }
  }
};

/// Spectral mixture covariance evaluated in closed form, with one cosine factor
/// per input dimension. The random-feature expansion instead averages to
/// cos(2 pi p'(x - y)); the two agree when each component is periodic in at
/// most one dimension.
inline double kernel_exact(const KernelSpec& spec, const Eigen::Ref<const Vector>& x,
                           const Eigen::Ref<const Vector>& y) {
  double total = 0.0;
  for (const auto& c : spec.components) {
    const Vector diff = x - y;
    const double quad = (diff.array() / c.lengthscales.array()).square().sum();
    double periodic = 1.0;
    for (Index q = 0; q < diff.size(); ++q)
      periodic *= std::cos(kTwoPi * diff(q) * c.inverse_periods(q));
    total += c.weight * std::exp(-0.5 * quad) * periodic;
  }
  return total;
}

/// Uniform phase posterior b_k ~ U(alpha_k, beta_k), 0 <= alpha <= beta <= 2 pi.
struct VariationalPhases {
  Vector lower;  // alpha_k
  Vector upper;  // beta_k
};

/// Phases drawn once and held constant.
struct FixedPhases {
  Vector values;  // b_k in [0, 2 pi)
};

using PhaseMode = std::variant<VariationalPhases, FixedPhases>;

/// Variational posterior over frequencies, phases and Fourier coefficients.
///
/// Columns are laid out component-major: column k belongs to component
/// k / features_per_component (see component_of). Matrices indexed by column
/// store one column per feature (Q x LK or D x LK transposed as LK x D).
struct VariationalState {
  Index features_per_component = 0;  // K
  Matrix inducing_inputs;            // Q x LK, column k is z_k
  Matrix freq_means;                 // Q x LK
  Matrix freq_vars;                  // Q x LK, diagonal of Sigma_k
  PhaseMode phases = FixedPhases{};
  Matrix coeff_means;                // LK x D, column d is m_d
  Matrix coeff_vars;                 // LK x D, diagonal of s_d
  double noise_precision = 1.0;      // tau

  Index num_features() const { return freq_means.cols(); }
  Index input_dim() const { return freq_means.rows(); }
  Index output_dim() const { return coeff_means.cols(); }
  bool variational_phases() const {
    return std::holds_alternative<VariationalPhases>(phases);
  }
  bool point_mass() const { return freq_vars.size() > 0 && (freq_vars.array() == 0.0).all(); }

  void validate(const KernelSpec& spec) const;
};

/// Component owning feature column k (0-based).
inline Index component_of(Index k, Index features_per_component) {
  return k / features_per_component;
}

/// Per-column phase centre and width. Fixed phases have zero width.
struct PhaseWindow {
  Vector centre;
  Vector width;
};

inline PhaseWindow phase_window(const VariationalState& s) {
  const Index lk = s.num_features();
  PhaseWindow w{Vector::Zero(lk), Vector::Zero(lk)};
  if (const auto* vp = std::get_if<VariationalPhases>(&s.phases)) {
    w.centre = 0.5 * (vp->lower + vp->upper);
    w.width = vp->upper - vp->lower;
  } else {
    w.centre = std::get<FixedPhases>(s.phases).values;
  }
  return w;
}

inline void VariationalState::validate(const KernelSpec& spec) const {
  using detail::require;
  spec.validate();
  const Index lk = num_features();
  const Index q = input_dim();
  require(features_per_component >= 1, "state.features_per_component must be >= 1");
  require(lk == spec.num_components() * features_per_component,
          "state: number of columns must equal L*K");
  require(q == spec.input_dim(), "state: input dimension differs from kernel_spec");
  require(inducing_inputs.rows() == q && inducing_inputs.cols() == lk,
          "state.inducing_inputs: shape mismatch");
  require(freq_vars.rows() == q && freq_vars.cols() == lk, "state.freq_vars: shape mismatch");
  require(coeff_means.rows() == lk && coeff_vars.rows() == lk &&
              coeff_vars.cols() == coeff_means.cols() && coeff_means.cols() >= 1,
          "state.coeff_means/coeff_vars: shape mismatch");
  require(inducing_inputs.allFinite(), "state.inducing_inputs: non-finite entry");
  require(freq_means.allFinite(), "state.freq_means: non-finite entry");
  require(freq_vars.allFinite() && (freq_vars.array() >= 0.0).all(),
          "state.freq_vars: entries must be finite and >= 0");
  require(coeff_means.allFinite(), "state.coeff_means: non-finite entry");
  require(coeff_vars.allFinite() && (coeff_vars.array() > 0.0).all(),
          "state.coeff_vars: entries must be finite and > 0");
  require(std::isfinite(noise_precision) && noise_precision > 0.0,
          "state.noise_precision must be > 0");
  if (const auto* vp = std::get_if<VariationalPhases>(&phases)) {
    require(vp->lower.size() == lk && vp->upper.size() == lk, "state.phases: size mismatch");
    for (Index k = 0; k < lk; ++k) {
      require(std::isfinite(vp->lower(k)) && std::isfinite(vp->upper(k)) &&
                  0.0 <= vp->lower(k) && vp->lower(k) <= vp->upper(k) && vp->upper(k) <= kTwoPi,
              "state.phases[" + std::to_string(k) + "]: need 0 <= alpha <= beta <= 2pi");
    }
  } else {
    const auto& b = std::get<FixedPhases>(phases).values;
    require(b.size() == lk, "state.phases: size mismatch");
    require(b.allFinite(), "state.phases: non-finite entry");
  }
}

}  // namespace vssgp

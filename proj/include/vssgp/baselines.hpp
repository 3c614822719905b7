#pragma once

// Comparison methods: the sparse spectrum GP and random projections as
// point-mass special cases of the variational model, the exact GP, and a
// Monte Carlo estimate of the random-feature model evidence.

#include "vssgp/bounds.hpp"
#include "vssgp/features.hpp"
#include "vssgp/predict.hpp"
#include "vssgp/random.hpp"
#include "vssgp/training.hpp"

#include <Eigen/Cholesky>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <utility>

namespace vssgp {

enum class BaselineKind { SSGP, RandomProjections, ExactGP };

/// Turn a state into a point mass over frequencies with fixed phases.
inline VariationalState as_point_mass(VariationalState s, std::uint64_t seed) {
  s.freq_vars.setZero();
  if (!std::holds_alternative<FixedPhases>(s.phases)) {
    Rng rng = substream(seed, "init/phases");
    s.phases = FixedPhases{uniform_phases(rng, s.num_features())};
  }
  return s;
}

/// Sparse spectrum GP: frequencies are parameters (Sigma_k = 0, fixed phases)
/// and the objective is the optimal-coefficient bound without the frequency
/// KL, which is then the exact log marginal likelihood of the finite basis.
inline FitResult fit_ssgp(const Dataset& data, const KernelSpec& spec, Index features_per_component,
                          FitConfig config, const InitOptions& init = {}) {
  VariationalState s = as_point_mass(init_state(data, spec, features_per_component, config.seed, init), config.seed);
  config.bound = BoundKind::optimal();
  config.optimizer = OptimizerKind::QuasiNewton;
  config.bound_options.include_kl_freq = false;
  if (!config.trainable) config.trainable = default_trainable(BoundType::OptimalCoefficients);
  return fit_quasi_newton(data, s, spec, config);
}

/// Random projections: frequencies sampled from the prior and frozen,
/// coefficients solved in closed form. Optionally the kernel hyperparameters
/// and noise precision are tuned on the same objective as the SSGP.
inline FitResult fit_random_projections(const Dataset& data, const KernelSpec& spec, Index features_per_component,
                                        FitConfig config, bool optimize_hypers, const InitOptions& init = {}) {
  VariationalState s = as_point_mass(init_state(data, spec, features_per_component, config.seed, init), config.seed);
  BoundOptions opts;
  opts.include_kl_freq = false;
  if (!optimize_hypers) {
    FitResult out{std::move(s), spec, {}, std::nullopt, 0.0};
    detail::attach_optimal_coefficients(data, out, opts);
    out.final_value = elbo_optimal(data, out.state, out.spec, opts);
    out.trace.initial_value = out.final_value;
    return out;
  }
  config.bound = BoundKind::optimal();
  config.optimizer = OptimizerKind::QuasiNewton;
  config.bound_options = opts;
  TrainableBlocks t = TrainableBlocks::none();
  t.set(Block::NoisePrecision, true)
      .set(Block::Weights, true)
      .set(Block::Lengthscales, true)
      .set(Block::InversePeriods, true);
  config.trainable = t;
  return fit_quasi_newton(data, s, spec, config);
}

/// log N(Y; 0, Phi Phi' + tau^-1 I) summed over output columns. Works in the
/// smaller of the N x N and LK x LK systems (the latter through the Woodbury
/// identity and determinant lemma).
inline double finite_basis_log_marginal(const Eigen::Ref<const Matrix>& phi, const Eigen::Ref<const Matrix>& Y,
                                        double tau) {
  const Index n = phi.rows();
  const auto d = static_cast<double>(Y.cols());
  double log_det = 0.0, quad = 0.0;
  if (n <= phi.cols()) {
    Matrix cov = phi * phi.transpose();
    cov.diagonal().array() += 1.0 / tau;
    const Eigen::LLT<Matrix> llt = robust_cholesky(cov);
    const Matrix l = llt.matrixL();
    log_det = 2.0 * l.diagonal().array().log().sum();
    quad = (Y.array() * llt.solve(Y).array()).sum();
  } else {
    Matrix inner = tau * phi.transpose() * phi;
    inner.diagonal().array() += 1.0;
    const Eigen::LLT<Matrix> llt = robust_cholesky(inner);
    const Matrix l = llt.matrixL();
    log_det = 2.0 * l.diagonal().array().log().sum() - static_cast<double>(n) * std::log(tau);
    const Matrix proj = phi.transpose() * Y;  // LK x D
    quad = tau * Y.squaredNorm() - tau * tau * (proj.array() * llt.solve(proj).array()).sum();
  }
  return -0.5 * d * (static_cast<double>(n) * std::log(kTwoPi) + log_det) - 0.5 * quad;
}

/// Exact GP regression with the spectral mixture kernel.
class ExactGP {
 public:
  static constexpr Index kDefaultCap = 2000;

  ExactGP(Dataset data, KernelSpec spec, double tau, Index cap = kDefaultCap)
      : data_(std::move(data)), spec_(std::move(spec)), tau_(tau) {
    if (data_.size() > cap)
      throw ValidationError("exact GP limited to " + std::to_string(cap) + " points");
    if (!(tau_ > 0.0)) throw ValidationError("noise precision must be > 0");
    spec_.validate();
    const Index n = data_.size();
    Matrix k(n, n);
    for (Index i = 0; i < n; ++i)
      for (Index j = 0; j <= i; ++j)
        k(i, j) = k(j, i) = kernel_exact(spec_, data_.inputs.row(i).transpose(), data_.inputs.row(j).transpose());
    k.diagonal().array() += 1.0 / tau_;
    llt_ = robust_cholesky(k);
    alpha_ = llt_.solve(data_.outputs);
    const Matrix l = llt_.matrixL();
    const double log_det = 2.0 * l.diagonal().array().log().sum();
    const auto d = static_cast<double>(data_.output_dim());
    log_marginal_ = -0.5 * (data_.outputs.array() * alpha_.array()).sum() -
                    0.5 * d * (log_det + static_cast<double>(n) * std::log(kTwoPi));
  }

  double log_marginal() const { return log_marginal_; }

  /// Predictive density of y* (latent variance plus noise).
  PredictiveDensity predict(const Eigen::Ref<const Vector>& x) const {
    const Index n = data_.size();
    Vector kx(n);
    for (Index i = 0; i < n; ++i) kx(i) = kernel_exact(spec_, x, data_.inputs.row(i).transpose());
    PredictiveDensity out;
    out.mean = kx.transpose() * alpha_;
    const double var = kernel_exact(spec_, x, x) - kx.dot(llt_.solve(kx)) + 1.0 / tau_;
    out.covariance = Matrix::Identity(data_.output_dim(), data_.output_dim()) * var;
    return out;
  }

  std::vector<PredictiveDensity> predict_batch(const Eigen::Ref<const Matrix>& xstar) const {
    std::vector<PredictiveDensity> out;
    for (Index i = 0; i < xstar.rows(); ++i) out.push_back(predict(xstar.row(i).transpose()));
    return out;
  }

 private:
  Dataset data_;
  KernelSpec spec_;
  double tau_;
  Eigen::LLT<Matrix> llt_;
  Matrix alpha_;
  double log_marginal_ = 0.0;
};

inline ExactGP exact_gp(const Dataset& data, const KernelSpec& spec, double tau, Index cap = ExactGP::kDefaultCap) {
  return ExactGP(data, spec, tau, cap);
}

struct MonteCarloEstimate {
  double estimate = 0.0;
  double std_err = 0.0;
};

/// log E_{p(w, b)}[N(Y; 0, Phi Phi' + tau^-1 I)] by simple Monte Carlo over
/// the prior. Inducing inputs and tau come from `prior_state`; phases are
/// resampled when the state treats them variationally and held fixed
/// otherwise. The standard error uses the delta method on the mean of
/// exp(log-density).
inline MonteCarloEstimate mc_log_evidence(const Dataset& data, const KernelSpec& spec,
                                          const VariationalState& prior_state, Index n_samples,
                                          std::uint64_t seed) {
  if (n_samples < 2) throw ValidationError("mc_log_evidence: need at least two samples");
  const Index lk = prior_state.num_features();
  const Index q = prior_state.input_dim();
  Rng rng = substream(seed, "mc_log_evidence");
  const bool sample_phases = prior_state.variational_phases();
  const Vector fixed = sample_phases ? Vector() : std::get<FixedPhases>(prior_state.phases).values;

  std::vector<double> logs(static_cast<std::size_t>(n_samples));
  for (Index s = 0; s < n_samples; ++s) {
    const Matrix w = standard_normal(rng, q, lk);
    const Vector b = sample_phases ? uniform_phases(rng, lk) : fixed;
    const Matrix phi = phi_matrix(data.inputs, w, b, prior_state.inducing_inputs, spec,
                                  prior_state.features_per_component);
    logs[static_cast<std::size_t>(s)] = finite_basis_log_marginal(phi, data.outputs, prior_state.noise_precision);
  }
  const double top = *std::max_element(logs.begin(), logs.end());
  double mean = 0.0, m2 = 0.0;
  for (std::size_t i = 0; i < logs.size(); ++i) {
    const double r = std::exp(logs[i] - top);
    const double delta = r - mean;
    mean += delta / static_cast<double>(i + 1);
    m2 += delta * (r - mean);
  }
  const double var = m2 / static_cast<double>(n_samples - 1);
  return {top + std::log(mean), std::sqrt(var / static_cast<double>(n_samples)) / mean};
}

}  // namespace vssgp

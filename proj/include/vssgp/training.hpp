#pragma once

// Initialisation and fitting of the variational state.

#include "vssgp/bounds.hpp"
#include "vssgp/gradient.hpp"
#include "vssgp/optimize.hpp"
#include "vssgp/parameters.hpp"
#include "vssgp/random.hpp"

#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

namespace vssgp {

enum class OptimizerKind { QuasiNewton, AdaptiveSGD };

struct InitOptions {
  double noise_precision = 10.0;
  double freq_var = 0.1;
  bool variational_phases = false;
};

/// Initial state: mu_k ~ N(0, I), Sigma_k = freq_var I, z_k drawn from the
/// training inputs (without replacement when LK <= N), m_d = 0, s_d = 1.
inline VariationalState init_state(const Dataset& data, const KernelSpec& spec, Index features_per_component,
                                   std::uint64_t seed, const InitOptions& opts = {}) {
  if (data.size() < 1) throw ValidationError("init_state: empty data");
  if (features_per_component < 1) throw ValidationError("init_state: need K >= 1");
  spec.validate();
  if (spec.input_dim() != data.input_dim())
    throw ValidationError("init_state: kernel and data input dimensions differ");
  const Index lk = spec.num_components() * features_per_component;
  const Index q = data.input_dim();
  const Index n = data.size();

  VariationalState s;
  s.features_per_component = features_per_component;
  Rng freq_rng = substream(seed, "init/freq_means");
  s.freq_means = standard_normal(freq_rng, q, lk);
  s.freq_vars = Matrix::Constant(q, lk, opts.freq_var);

  Rng z_rng = substream(seed, "init/inducing_inputs");
  s.inducing_inputs = Matrix(q, lk);
  if (lk <= n) {
    const auto idx = sample_without_replacement(z_rng, n, lk);
    for (Index k = 0; k < lk; ++k) s.inducing_inputs.col(k) = data.inputs.row(idx[static_cast<std::size_t>(k)]).transpose();
  } else {
    std::uniform_int_distribution<Index> pick(0, n - 1);
    for (Index k = 0; k < lk; ++k) s.inducing_inputs.col(k) = data.inputs.row(pick(z_rng)).transpose();
  }

  if (opts.variational_phases) {
    s.phases = VariationalPhases{Vector::Zero(lk), Vector::Constant(lk, kTwoPi)};
  } else {
    Rng b_rng = substream(seed, "init/phases");
    s.phases = FixedPhases{uniform_phases(b_rng, lk)};
  }
  s.coeff_means = Matrix::Zero(lk, data.output_dim());
  s.coeff_vars = Matrix::Ones(lk, data.output_dim());
  s.noise_precision = opts.noise_precision;
  return s;
}

/// Every block the bound depends on. The optimal-coefficient bound solves for
/// q(A) in closed form, so its coefficient blocks are left out.
inline TrainableBlocks default_trainable(BoundType bound) {
  TrainableBlocks t = TrainableBlocks::all();
  if (bound == BoundType::OptimalCoefficients) {
    t.set(Block::CoeffMeans, false);
    t.set(Block::CoeffVars, false);
  }
  return t;
}

struct FitConfig {
  BoundKind bound = BoundKind::optimal();
  Index max_iters = 500;
  OptimizerKind optimizer = OptimizerKind::QuasiNewton;
  // RMSProp
  double sgd_decay = 0.9;
  double sgd_epsilon = 1e-8;
  double sgd_step = 1e-3;
  // L-BFGS
  Index lbfgs_memory = 10;
  double gradient_tolerance = 0.0;  // off
  std::uint64_t seed = 0;
  std::optional<TrainableBlocks> trainable;  // defaults to default_trainable(bound)
  BoundOptions bound_options;
};

struct FitTrace {
  std::vector<TraceEntry> entries;
  bool line_search_failed = false;
  bool converged = false;
  double initial_value = 0.0;
};

struct FitResult {
  VariationalState state;
  KernelSpec spec;
  FitTrace trace;
  /// Present for the optimal-coefficient bound: q(A) at the final q(w, b).
  std::optional<CoefficientSolve> solve;
  double final_value = 0.0;
};

namespace detail {

inline BoundEvaluator make_evaluator(const Dataset& data, const VariationalState& init, const KernelSpec& spec,
                                     const FitConfig& config) {
  const TrainableBlocks trainable = config.trainable.value_or(default_trainable(config.bound.type));
  return BoundEvaluator(data, init, spec, config.bound, config.bound_options, trainable);
}

/// With the optimal-coefficient bound, write the closed-form q(A) back into
/// the state (diagonal of tau^-1 Sigma-hat as s_d) and keep the full solve.
inline void attach_optimal_coefficients(const Dataset& data, FitResult& out, const BoundOptions& opts) {
  CoefficientSolve solve;
  elbo_optimal(data, out.state, out.spec, opts, &solve);
  out.state.coeff_means = solve.means;
  const Vector diag = solve.covariance.diagonal() / out.state.noise_precision;
  out.state.coeff_vars = diag * RowVector::Ones(data.output_dim());
  out.solve = std::move(solve);
}

}  // namespace detail

/// Gradient of the configured bound at v (unconstrained coordinates).
inline BoundValue bound_and_gradient(const Eigen::Ref<const Vector>& v, const Dataset& data,
                                     const VariationalState& tmpl, const KernelSpec& spec, const FitConfig& config,
                                     const std::vector<Index>* batch = nullptr) {
  return detail::make_evaluator(data, tmpl, spec, config).evaluate(v, batch);
}

inline FitResult fit_quasi_newton(const Dataset& data, const VariationalState& init, const KernelSpec& spec,
                                  const FitConfig& config) {
  if (config.bound.type == BoundType::Stochastic)
    throw ValidationError("fit_quasi_newton needs the optimal or factorised bound");
  if (config.max_iters < 1) throw ValidationError("max_iters must be positive");
  const BoundEvaluator ev = detail::make_evaluator(data, init, spec, config);

  LbfgsOptions opts;
  opts.max_iters = config.max_iters;
  opts.memory = config.lbfgs_memory;
  opts.gradient_tolerance = config.gradient_tolerance;
  const Vector x0 = ev.initial_point();
  const OptimizeResult r = maximize_lbfgs(
      [&ev](const Vector& v) {
        BoundValue b = ev.evaluate(v);
        return std::make_pair(b.value, std::move(b.gradient));
      },
      x0, opts);

  auto [state, fitted_spec] = ev.unpack_point(r.x);
  FitResult out{std::move(state), std::move(fitted_spec), {}, std::nullopt, r.value};
  out.trace.entries = r.trace;
  out.trace.line_search_failed = r.line_search_failed;
  out.trace.converged = r.converged;
  out.trace.initial_value = ev.evaluate(x0).value;
  if (config.bound.type == BoundType::OptimalCoefficients)
    detail::attach_optimal_coefficients(data, out, config.bound_options);
  return out;
}

inline FitResult fit_adaptive_sgd(const Dataset& data, const VariationalState& init, const KernelSpec& spec,
                                  const FitConfig& config) {
  if (config.bound.type != BoundType::Stochastic)
    throw ValidationError("fit_adaptive_sgd needs the stochastic bound");
  if (config.max_iters < 1) throw ValidationError("max_iters must be positive");
  const Index n = data.size();
  const Index batch_size = config.bound.batch_size;
  if (batch_size < 1 || batch_size > n) throw ValidationError("mini-batch size must be in [1, N]");
  const BoundEvaluator ev = detail::make_evaluator(data, init, spec, config);

  Rng batch_rng = substream(config.bound.seed ^ config.seed, "train/minibatch");
  RmspropOptions opts;
  opts.max_iters = config.max_iters;
  opts.step = config.sgd_step;
  opts.decay = config.sgd_decay;
  opts.epsilon = config.sgd_epsilon;
  const Vector x0 = ev.initial_point();
  const OptimizeResult r = maximize_rmsprop(
      [&](const Vector& v, Index) {
        const std::vector<Index> batch = sample_without_replacement(batch_rng, n, batch_size);
        BoundValue b = ev.evaluate(v, &batch);
        return std::make_pair(b.value, std::move(b.gradient));
      },
      x0, opts);

  auto [state, fitted_spec] = ev.unpack_point(r.x);
  FitResult out{std::move(state), std::move(fitted_spec), {}, std::nullopt, r.value};
  out.trace.entries = r.trace;
  out.trace.initial_value = r.trace.empty() ? r.value : r.trace.front().value;
  return out;
}

/// Dispatch on the configured optimizer.
inline FitResult fit(const Dataset& data, const VariationalState& init, const KernelSpec& spec,
                     const FitConfig& config) {
  return config.optimizer == OptimizerKind::QuasiNewton ? fit_quasi_newton(data, init, spec, config)
                                                        : fit_adaptive_sgd(data, init, spec, config);
}

}  // namespace vssgp

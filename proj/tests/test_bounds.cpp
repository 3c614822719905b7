#include "test_support.hpp"
#include "vssgp/baselines.hpp"
#include "vssgp/bounds.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <limits>

using namespace vssgp;
using namespace vssgp::testing;

namespace {

/// log N(Y; 0, Phi Phi' + tau^-1 I) summed over columns, with the full N x N
/// covariance.
double direct_log_density(const Matrix& phi, const Matrix& y, double tau) {
  const Index n = phi.rows();
  Matrix c = phi * phi.transpose();
  c.diagonal().array() += 1.0 / tau;
  const Eigen::LLT<Matrix> llt(c);
  const Matrix l = llt.matrixL();
  const double log_det = 2.0 * l.diagonal().array().log().sum();
  double total = 0.0;
  for (Index d = 0; d < y.cols(); ++d)
    total += -0.5 * y.col(d).dot(llt.solve(y.col(d))) - 0.5 * log_det - 0.5 * n * std::log(2.0 * M_PI);
  return total;
}

Instance point_mass_instance(std::uint64_t seed, Index n, Index k) {
  InstanceShape shape;
  shape.n = n;
  shape.k = k;
  Instance inst = random_instance(seed, shape);
  inst.state.freq_vars.setZero();
  return inst;
}

Matrix deterministic_phi(const Instance& inst) {
  return phi_matrix(inst.data.inputs, inst.state.freq_means, std::get<FixedPhases>(inst.state.phases).values,
                    inst.state.inducing_inputs, inst.spec, inst.state.features_per_component);
}

}  // namespace

TEST(KlFreq, ZeroAtPrior) {
  Instance inst = random_instance(1, {});
  const Index lk = inst.state.num_features();
  inst.state.freq_means.setZero();
  inst.state.freq_vars.setOnes();
  inst.state.phases = VariationalPhases{Vector::Zero(lk), Vector::Constant(lk, kTwoPi)};
  EXPECT_NEAR(kl_freq(inst.state), 0.0, 1e-15);
}

TEST(KlFreq, ClosedFormAndSignals) {
  VariationalState s;
  s.freq_means = Matrix::Constant(1, 1, 1.0);
  s.freq_vars = Matrix::Constant(1, 1, 1.0);
  s.phases = FixedPhases{Vector::Zero(1)};
  EXPECT_NEAR(kl_freq(s), 0.5, 1e-15);
  s.freq_vars(0, 0) = 0.0;
  EXPECT_EQ(kl_freq(s), std::numeric_limits<double>::infinity());
}

TEST(KlFreq, NonNegativeOverRandomStates) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    InstanceShape shape;
    shape.variational_phases = seed % 2 == 0;
    const Instance inst = random_instance(seed, shape);
    EXPECT_GE(kl_freq(inst.state), 0.0);
  }
}

TEST(KlCoeff, ClosedForms) {
  VariationalState s;
  s.coeff_means = Matrix::Zero(3, 2);
  s.coeff_vars = Matrix::Ones(3, 2);
  EXPECT_EQ(kl_coeff(s), 0.0);
  s.coeff_means = Matrix::Zero(1, 1);
  s.coeff_vars = Matrix::Constant(1, 1, std::exp(1.0));
  EXPECT_NEAR(kl_coeff(s), 0.5 * (std::exp(1.0) - 2.0), 1e-15);
  EXPECT_NEAR(kl_coeff(s), 0.35914, 1e-5);
}

TEST(KlCoeff, MatchesQuadrature) {
  std::mt19937_64 rng(2);
  for (int t = 0; t < 20; ++t) {
    const double m = uniform(rng, -2.0, 2.0), v = uniform(rng, 0.05, 3.0);
    VariationalState s;
    s.coeff_means = Matrix::Constant(1, 1, m);
    s.coeff_vars = Matrix::Constant(1, 1, v);
    const double sd = std::sqrt(v);
    auto integrand = [&](double a) {
      const double lq = -0.5 * std::log(2 * M_PI * v) - 0.5 * (a - m) * (a - m) / v;
      const double lp = -0.5 * std::log(2 * M_PI) - 0.5 * a * a;
      return std::exp(lq) * (lq - lp);
    };
    const double quad = adaptive_simpson(integrand, m - 14 * sd, m + 14 * sd, 1e-13);
    EXPECT_NEAR(kl_coeff(s), quad, 1e-8);
  }
}

TEST(Solve, IdentityMoments) {
  FeatureMoments mom{Matrix::Zero(4, 3), Matrix::Identity(3, 3)};
  const CoefficientSolve s = solve_optimal_coefficients(mom, Matrix::Zero(4, 1), 1.0);
  EXPECT_LE((s.covariance - 0.5 * Matrix::Identity(3, 3)).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Solve, RidgeRegressionWithDeterministicFeatures) {
  const Instance inst = point_mass_instance(3, 20, 3);
  const Matrix phi = deterministic_phi(inst);
  const double tau = inst.state.noise_precision;
  const CoefficientSolve s =
      solve_optimal_coefficients(feature_moments(inst.data.inputs, inst.state, inst.spec), inst.data.outputs, tau);
  Matrix a = phi.transpose() * phi;
  a.diagonal().array() += 1.0 / tau;
  const Matrix ridge = a.inverse() * phi.transpose() * inst.data.outputs;
  EXPECT_LE((s.means - ridge).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Solve, InverseCheck) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Instance inst = random_instance(seed, {});
    const FeatureMoments mom = feature_moments(inst.data.inputs, inst.state, inst.spec);
    const double tau = inst.state.noise_precision;
    const CoefficientSolve s = solve_optimal_coefficients(mom, inst.data.outputs, tau);
    Matrix system = mom.ephitphi;
    system.diagonal().array() += 1.0 / tau;
    const Index lk = system.rows();
    EXPECT_LE((s.covariance * system - Matrix::Identity(lk, lk)).cwiseAbs().maxCoeff(), 1e-8);
  }
}

TEST(Solve, FailureCarriesEigenvalue) {
  FeatureMoments mom{Matrix::Zero(2, 2), Matrix::Zero(2, 2)};
  mom.ephitphi << 1.0, 0.0, 0.0, -5.0;
  try {
    solve_optimal_coefficients(mom, Matrix::Zero(2, 1), 1.0);
    FAIL() << "expected a numerical error";
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("smallest eigenvalue"), std::string::npos);
  }
}

TEST(ElboOptimal, SsgpObjectiveIsExactLogMarginal) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Instance inst = point_mass_instance(seed, 40, 5);
    BoundOptions opts;
    opts.include_kl_freq = false;
    const double bound = elbo_optimal(inst.data, inst.state, inst.spec, opts);
    const Matrix phi = deterministic_phi(inst);
    const double tau = inst.state.noise_precision;
    EXPECT_NEAR(bound, direct_log_density(phi, inst.data.outputs, tau), 1e-8);
    EXPECT_NEAR(bound, finite_basis_log_marginal(phi, inst.data.outputs, tau), 1e-8);
  }
}

TEST(ElboOptimal, ZeroOutputs) {
  Instance inst = random_instance(4, {});
  inst.data.outputs.setZero();
  CoefficientSolve solve;
  const double bound = elbo_optimal(inst.data, inst.state, inst.spec, {}, &solve);
  const double tau = inst.state.noise_precision;
  const auto n = static_cast<double>(inst.data.size()), d = static_cast<double>(inst.data.output_dim());
  const Matrix post = solve.covariance / tau;
  const double expected = -0.5 * n * d * std::log(2 * M_PI / tau) + 0.5 * d * std::log(post.determinant()) -
                          kl_freq(inst.state);
  EXPECT_NEAR(bound, expected, 1e-9);
}

TEST(Pointwise, ZeroTargetAndZeroMeans) {
  Instance inst = random_instance(5, {});
  inst.data.outputs.setZero();
  inst.state.coeff_means.setZero();
  const RowMoments rows = row_moments(inst.data.inputs, inst.state, inst.spec);
  const double tau = inst.state.noise_precision;
  const double expected = -0.5 * std::log(2 * M_PI / tau) - 0.5 * tau * rows.second.row(2).dot(inst.state.coeff_vars.col(1));
  EXPECT_NEAR(elbo_pointwise(2, 1, inst.data, inst.state, rows), expected, 1e-13);
}

TEST(Pointwise, SumMatchesFactorised) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    InstanceShape shape;
    shape.variational_phases = seed % 2 == 1;
    const Instance inst = random_instance(seed, shape);
    const RowMoments rows = row_moments(inst.data.inputs, inst.state, inst.spec);
    double sum = 0.0;
    for (Index n = 0; n < inst.data.size(); ++n)
      for (Index d = 0; d < inst.data.output_dim(); ++d) sum += elbo_pointwise(n, d, inst.data, inst.state, rows);
    EXPECT_NEAR(sum - kl_coeff(inst.state) - kl_freq(inst.state), elbo_factorised(inst.data, inst.state, inst.spec),
                1e-12 * std::max(1.0, std::abs(sum)));
  }
}

TEST(Pointwise, MonteCarloExpectedLogLikelihood) {
  InstanceShape shape;
  shape.variational_phases = true;
  const Instance inst = random_instance(6, shape);
  const auto& s = inst.state;
  const auto& vp = std::get<VariationalPhases>(s.phases);
  const RowMoments rows = row_moments(inst.data.inputs, s, inst.spec);
  const Index n = 3, d = 1;
  const double tau = s.noise_precision;
  const double y = inst.data.outputs(n, d);
  const Vector x = inst.data.inputs.row(n).transpose();
  std::mt19937_64 rng(7);
  std::normal_distribution<double> nd(0.0, 1.0);
  const Index lk = s.num_features();
  Matrix w(s.input_dim(), lk);
  Vector b(lk), a(lk);
  const MeanSe mc = monte_carlo(1000000, [&] {
    for (Index k = 0; k < lk; ++k) {
      for (Index q = 0; q < s.input_dim(); ++q) w(q, k) = s.freq_means(q, k) + std::sqrt(s.freq_vars(q, k)) * nd(rng);
      b(k) = uniform(rng, vp.lower(k), vp.upper(k));
      a(k) = s.coeff_means(k, d) + std::sqrt(s.coeff_vars(k, d)) * nd(rng);
    }
    const double f = phi_row(x, w, b, s.inducing_inputs, inst.spec, s.features_per_component).dot(a);
    return -0.5 * std::log(2 * M_PI / tau) - 0.5 * tau * (y - f) * (y - f);
  });
  EXPECT_LE(std::abs(mc.mean - elbo_pointwise(n, d, inst.data, s, rows)), 3.0 * mc.se);
}

TEST(Ordering, FactorisedBelowOptimal) {
  std::mt19937_64 rng(8);
  for (int t = 0; t < 100; ++t) {
    InstanceShape shape;
    shape.variational_phases = t % 2 == 0;
    Instance inst = random_instance(static_cast<std::uint64_t>(t), shape);
    CoefficientSolve solve;
    const double opt = elbo_optimal(inst.data, inst.state, inst.spec, {}, &solve);
    if (t % 2 == 0) inst.state.coeff_means = solve.means;
    for (Index i = 0; i < inst.state.coeff_vars.size(); ++i)
      inst.state.coeff_vars.data()[i] = std::exp(uniform(rng, -4.0, 1.0));
    EXPECT_LE(elbo_factorised(inst.data, inst.state, inst.spec), opt + 1e-8);
  }
}

TEST(Ordering, EqualAtOptimumWithOneFeature) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    InstanceShape shape;
    shape.k = 1;
    shape.l = 1;
    shape.variational_phases = seed % 2 == 0;
    Instance inst = random_instance(seed, shape);
    CoefficientSolve solve;
    const double opt = elbo_optimal(inst.data, inst.state, inst.spec, {}, &solve);
    inst.state.coeff_means = solve.means;
    inst.state.coeff_vars.setConstant(solve.covariance(0, 0) / inst.state.noise_precision);
    EXPECT_NEAR(elbo_factorised(inst.data, inst.state, inst.spec), opt, 1e-8);
  }
}

TEST(Stochastic, FullBatchEqualsFactorised) {
  const Instance inst = random_instance(9, {});
  std::vector<Index> all(static_cast<std::size_t>(inst.data.size()));
  std::iota(all.begin(), all.end(), Index{0});
  EXPECT_DOUBLE_EQ(elbo_stochastic(inst.data, inst.state, inst.spec, all),
                   elbo_factorised(inst.data, inst.state, inst.spec));
}

TEST(Stochastic, UnbiasedOverAllSubsets) {
  InstanceShape shape;
  shape.n = 6;
  const Instance inst = random_instance(10, shape);
  double sum = 0.0;
  int count = 0;
  for (Index i = 0; i < 6; ++i)
    for (Index j = i + 1; j < 6; ++j) {
      sum += elbo_stochastic(inst.data, inst.state, inst.spec, {i, j});
      ++count;
    }
  EXPECT_EQ(count, 15);
  EXPECT_NEAR(sum / count, elbo_factorised(inst.data, inst.state, inst.spec), 1e-10);
}

TEST(Stochastic, SingletonBatch) {
  const Instance inst = random_instance(11, {});
  const RowMoments rows = row_moments(inst.data.inputs, inst.state, inst.spec);
  double l3 = 0.0;
  for (Index d = 0; d < inst.data.output_dim(); ++d) l3 += elbo_pointwise(3, d, inst.data, inst.state, rows);
  const double expected = static_cast<double>(inst.data.size()) * l3 - kl_coeff(inst.state) - kl_freq(inst.state);
  EXPECT_NEAR(elbo_stochastic(inst.data, inst.state, inst.spec, {3}), expected, 1e-10);
}

TEST(Stochastic, RejectsBadBatches) {
  const Instance inst = random_instance(12, {});
  EXPECT_THROW(elbo_stochastic(inst.data, inst.state, inst.spec, {1, 1}), ValidationError);
  EXPECT_THROW(elbo_stochastic(inst.data, inst.state, inst.spec, {}), ValidationError);
  EXPECT_THROW(elbo_stochastic(inst.data, inst.state, inst.spec, {inst.data.size()}), ValidationError);
}

TEST(Evidence, BoundBelowMonteCarloEvidence) {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    InstanceShape shape;
    shape.n = 8;
    shape.k = 2;
    shape.q = 1;
    shape.d = 1;
    shape.variational_phases = true;
    Instance inst = random_instance(seed, shape);
    const Index lk = inst.state.num_features();
    VariationalState prior = inst.state;
    prior.phases = VariationalPhases{Vector::Zero(lk), Vector::Constant(lk, kTwoPi)};
    const MonteCarloEstimate mc = mc_log_evidence(inst.data, inst.spec, prior, 100000, seed);
    EXPECT_LE(elbo_optimal(inst.data, inst.state, inst.spec), mc.estimate + 3.0 * mc.std_err);
  }
}

TEST(BoundKindNames, RoundTrip) {
  for (BoundType t : {BoundType::OptimalCoefficients, BoundType::Factorised, BoundType::Stochastic})
    EXPECT_EQ(bound_type_from_string(to_string(t)), t);
  EXPECT_THROW(bound_type_from_string("exact"), ValidationError);
}

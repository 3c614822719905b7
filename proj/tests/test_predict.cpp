#include "test_support.hpp"
#include "vssgp/imputation.hpp"
#include "vssgp/predict.hpp"
#include "vssgp/training.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace vssgp;
using namespace vssgp::testing;

TEST(Predict, NoiseFloorWithZeroCoefficients) {
  Instance inst = random_instance(1, {});
  inst.state.coeff_means.setZero();
  inst.state.coeff_vars.setConstant(1e-300);
  const Matrix v = predictive_variance(inst.data.inputs.row(0).transpose(), inst.state, inst.spec);
  const Index d = inst.data.output_dim();
  EXPECT_LE((v - Matrix::Identity(d, d) / inst.state.noise_precision).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Predict, FarFieldCollapse) {
  InstanceShape shape;
  shape.periodic = false;
  Instance inst = random_instance(2, shape);
  const Vector far = Vector::Constant(2, 300.0);
  const auto& s = inst.state;
  // E[phi'phi] -> (sigma_i^2 / K) I, E[phi] -> 0
  Vector u(s.num_features());
  for (Index k = 0; k < u.size(); ++k)
    u(k) = inst.spec.components[component_of(k, s.features_per_component)].weight /
           static_cast<double>(s.features_per_component);
  Matrix expected = s.coeff_means.transpose() * u.asDiagonal() * s.coeff_means;
  expected.diagonal() += (u.transpose() * s.coeff_vars).transpose();
  expected.diagonal().array() += 1.0 / s.noise_precision;
  EXPECT_LE((predictive_variance(far, s, inst.spec) - expected).cwiseAbs().maxCoeff(), 1e-6);
  EXPECT_LT(predictive_mean(far, s, inst.spec).norm(), 1e-10);
}

TEST(Predict, MonteCarloSecondMoment) {
  InstanceShape shape;
  shape.variational_phases = true;
  const Instance inst = random_instance(3, shape);
  const auto& s = inst.state;
  const auto& vp = std::get<VariationalPhases>(s.phases);
  const Vector x = (Vector(2) << 0.3, -0.4).finished();
  const Index lk = s.num_features(), d = s.output_dim();
  const PredictiveDensity p = predict_batch(x.transpose(), s, inst.spec).front();
  const Matrix second = p.covariance + p.mean.transpose() * p.mean;

  std::mt19937_64 rng(4);
  std::normal_distribution<double> nd(0.0, 1.0);
  const std::size_t draws = 1000000;
  Matrix w(s.input_dim(), lk);
  Vector b(lk);
  Matrix sum = Matrix::Zero(d, d), sum2 = Matrix::Zero(d, d);
  for (std::size_t i = 0; i < draws; ++i) {
    for (Index k = 0; k < lk; ++k) {
      for (Index q = 0; q < s.input_dim(); ++q) w(q, k) = s.freq_means(q, k) + std::sqrt(s.freq_vars(q, k)) * nd(rng);
      b(k) = uniform(rng, vp.lower(k), vp.upper(k));
    }
    const RowVector phi = phi_row(x, w, b, s.inducing_inputs, inst.spec, s.features_per_component);
    RowVector y(d);
    for (Index j = 0; j < d; ++j) {
      double f = 0.0;
      for (Index k = 0; k < lk; ++k) f += phi(k) * (s.coeff_means(k, j) + std::sqrt(s.coeff_vars(k, j)) * nd(rng));
      y(j) = f + nd(rng) / std::sqrt(s.noise_precision);
    }
    const Matrix outer = y.transpose() * y;
    sum += outer;
    sum2 += outer.cwiseAbs2();
  }
  const auto n = static_cast<double>(draws);
  for (Index i = 0; i < d * d; ++i) {
    const double m = sum.data()[i] / n;
    const double se = std::sqrt((sum2.data()[i] / n - m * m) / (n - 1.0));
    EXPECT_LE(std::abs(m - second.data()[i]), 3.0 * se) << "entry " << i;
  }
}

TEST(Predict, BayesianLinearRegressionWithDeterministicFeatures) {
  Instance inst = random_instance(5, {});
  inst.state.freq_vars.setZero();
  CoefficientSolve solve;
  elbo_optimal(inst.data, inst.state, inst.spec, {false}, &solve);
  const double tau = inst.state.noise_precision;
  const Vector x = (Vector(2) << 0.1, 0.9).finished();
  const RowVector phi = phi_row(x, inst.state.freq_means, std::get<FixedPhases>(inst.state.phases).values,
                                inst.state.inducing_inputs, inst.spec, inst.state.features_per_component);
  // posterior over a_d: N(M_d, tau^-1 Sigma-hat), so y* ~ N(phi M_d, tau^-1 (1 + phi Sigma-hat phi'))
  const double var = (1.0 + (phi * solve.covariance * phi.transpose())(0, 0)) / tau;
  const Matrix v = predictive_variance(x, inst.state, inst.spec, &solve);
  EXPECT_LE((predictive_mean(x, inst.state, inst.spec, &solve) - phi * solve.means).cwiseAbs().maxCoeff(), 1e-12);
  for (Index d = 0; d < v.rows(); ++d) EXPECT_NEAR(v(d, d), var, 1e-12);
  EXPECT_NEAR(v(0, 1), 0.0, 1e-12);
}

TEST(Predict, FullSolveVersusDiagonalPath) {
  const Instance inst = random_instance(6, {});
  CoefficientSolve solve;
  elbo_optimal(inst.data, inst.state, inst.spec, {}, &solve);
  const double tau = inst.state.noise_precision;
  const Vector x = inst.data.inputs.row(2).transpose();
  const RowMoments r = row_moments(x.transpose(), inst.state, inst.spec);
  const Matrix gram = gram_from_rows(r);
  const Matrix& m = solve.means;
  Matrix expected = m.transpose() * (gram - r.ephi.transpose() * r.ephi) * m;
  expected.diagonal().array() += 1.0 / tau + (gram * solve.covariance).trace() / tau;
  EXPECT_LE((predictive_variance(x, inst.state, inst.spec, &solve) - expected).cwiseAbs().maxCoeff(), 1e-12);

  // the diagonal path with s_d = diag(tau^-1 Sigma-hat) drops the off-diagonal of Sigma-hat
  VariationalState diag = inst.state;
  diag.coeff_means = m;
  diag.coeff_vars = (solve.covariance.diagonal() / tau) * RowVector::Ones(m.cols());
  Matrix expected_diag = m.transpose() * (gram - r.ephi.transpose() * r.ephi) * m;
  expected_diag.diagonal() += (r.second * diag.coeff_vars).transpose();
  expected_diag.diagonal().array() += 1.0 / tau;
  EXPECT_LE((predictive_variance(x, diag, inst.spec) - expected_diag).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Predict, VarianceAboveNoiseFloor) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    InstanceShape shape;
    shape.variational_phases = seed % 2 == 0;
    const Instance inst = random_instance(seed, shape);
    for (const auto& p : predict_batch(inst.data.inputs, inst.state, inst.spec))
      EXPECT_GE(p.covariance.diagonal().minCoeff(), 1.0 / inst.state.noise_precision - 1e-15);
  }
}

TEST(PredictBatch, MatchesScalarOpsAndPermutes) {
  const Instance inst = random_instance(7, {});
  const auto preds = predict_batch(inst.data.inputs, inst.state, inst.spec);
  for (Index n = 0; n < inst.data.size(); ++n) {
    const Vector x = inst.data.inputs.row(n).transpose();
    const auto single = predict_batch(x.transpose(), inst.state, inst.spec).front();
    EXPECT_EQ(single.mean, predictive_mean(x, inst.state, inst.spec));
    EXPECT_EQ(single.covariance, predictive_variance(x, inst.state, inst.spec));
    // vectorised row moments may round differently across a batch
    EXPECT_LE((preds[n].mean - single.mean).cwiseAbs().maxCoeff(), 1e-14);
    EXPECT_LE((preds[n].covariance - single.covariance).cwiseAbs().maxCoeff(), 1e-14);
  }
  Matrix reversed = inst.data.inputs.colwise().reverse();
  const auto rev = predict_batch(reversed, inst.state, inst.spec);
  const Index n = inst.data.size();
  for (Index i = 0; i < n; ++i) EXPECT_LE((rev[i].mean - preds[n - 1 - i].mean).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(PredictBatch, Validation) {
  const Instance inst = random_instance(8, {});
  EXPECT_THROW(predict_batch(Matrix(0, 2), inst.state, inst.spec), ValidationError);
  EXPECT_THROW(predict_batch(Matrix::Zero(3, 5), inst.state, inst.spec), ValidationError);
}

TEST(PredictBatch, CalibratedOnSinusoid) {
  const Dataset data = synthetic_sinusoid(200, 0.1, 9);
  const ImputationTask task = make_imputation_task(data, 5, 10, 9);
  KernelSpec spec;
  spec.components.push_back(SMComponent::squared_exponential(1.0, Vector::Constant(1, 1.0)));
  FitConfig config;
  config.max_iters = 200;
  const Dataset train = task.train_data();
  const FitResult r = fit_quasi_newton(train, init_state(train, spec, 20, 9), spec, config);
  const auto test = task.test_indices();
  Matrix xs(static_cast<Index>(test.size()), 1);
  for (std::size_t i = 0; i < test.size(); ++i) xs(static_cast<Index>(i), 0) = data.inputs(test[i], 0);
  const auto preds = predict_batch(xs, r.state, r.spec, &*r.solve);
  int inside = 0;
  for (std::size_t i = 0; i < test.size(); ++i) {
    const double sd = std::sqrt(preds[i].covariance(0, 0));
    inside += std::abs(preds[i].mean(0) - data.outputs(test[i], 0)) <= 2.0 * sd;
  }
  EXPECT_GE(inside, static_cast<int>(std::ceil(0.9 * static_cast<double>(test.size()))));
}

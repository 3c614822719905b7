#include "test_support.hpp"
#include "vssgp/parameters.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <limits>

using namespace vssgp;
using namespace vssgp::testing;

namespace {

KernelSpec se_spec(double weight, double lengthscale, Index q = 1) {
  KernelSpec spec;
  spec.components.push_back(SMComponent::squared_exponential(weight, Vector::Constant(q, lengthscale)));
  return spec;
}

void expect_rel_near(const Matrix& a, const Matrix& b, double tol) {
  ASSERT_EQ(a.rows(), b.rows());
  ASSERT_EQ(a.cols(), b.cols());
  for (Index i = 0; i < a.size(); ++i)
    EXPECT_LE(std::abs(a.data()[i] - b.data()[i]), tol * std::max(1.0, std::abs(b.data()[i]))) << "entry " << i;
}

}  // namespace

TEST(Kernel, ZeroLagIsTotalWeight) {
  std::mt19937_64 rng(1);
  const KernelSpec spec = random_spec(rng, 3, 2, true);
  const Vector x = normal_matrix(rng, 2, 1);
  EXPECT_NEAR(kernel_exact(spec, x, x), spec.total_weight(), 1e-14);
}

TEST(Kernel, SquaredExponentialClosedForm) {
  const KernelSpec spec = se_spec(1.0, 1.0);
  EXPECT_NEAR(kernel_exact(spec, Vector::Constant(1, 1.0), Vector::Zero(1)), std::exp(-0.5), 1e-15);
  EXPECT_NEAR(kernel_exact(spec, Vector::Constant(1, 1.0), Vector::Zero(1)), 0.60653, 1e-5);
}

TEST(Kernel, AdditiveOverComponents) {
  std::mt19937_64 rng(2);
  for (int t = 0; t < 20; ++t) {
    const KernelSpec spec = random_spec(rng, 2, 3, true);
    const Vector x = normal_matrix(rng, 3, 1), y = normal_matrix(rng, 3, 1);
    double sum = 0.0;
    for (const auto& c : spec.components) {
      double v = c.weight;
      for (Index q = 0; q < 3; ++q) {
        const double r = x(q) - y(q);
        v *= std::exp(-0.5 * r * r / (c.lengthscales(q) * c.lengthscales(q))) *
             std::cos(2.0 * M_PI * r * c.inverse_periods(q));
      }
      sum += v;
    }
    EXPECT_NEAR(kernel_exact(spec, x, y), sum, 1e-13);
    EXPECT_NEAR(kernel_exact(spec, x, y), kernel_exact(spec, y, x), 1e-15);
    EXPECT_LE(std::abs(kernel_exact(spec, x, y)), spec.total_weight() + 1e-15);
  }
}

TEST(Validation, DatasetRejectsNonFinite) {
  Matrix x = Matrix::Zero(3, 1), y = Matrix::Zero(3, 1);
  y(1, 0) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(Dataset(x, y), ValidationError);
  EXPECT_THROW(Dataset(Matrix::Zero(3, 1), Matrix::Zero(2, 1)), ValidationError);
  EXPECT_THROW(Dataset(Matrix(0, 1), Matrix(0, 1)), ValidationError);
}

TEST(Validation, KernelSpecInvariants) {
  KernelSpec empty;
  EXPECT_THROW(empty.validate(), ValidationError);
  KernelSpec bad = se_spec(1.0, 1.0);
  bad.components[0].weight = 0.0;
  EXPECT_THROW(bad.validate(), ValidationError);
  bad = se_spec(1.0, -1.0);
  EXPECT_THROW(bad.validate(), ValidationError);
  bad = se_spec(1.0, 1.0);
  bad.components[0].inverse_periods(0) = -0.1;
  EXPECT_THROW(bad.validate(), ValidationError);
}

TEST(Validation, StateInvariants) {
  Instance inst = random_instance(3, {});
  EXPECT_NO_THROW(inst.state.validate(inst.spec));
  VariationalState s = inst.state;
  s.coeff_vars(0, 0) = 0.0;
  EXPECT_THROW(s.validate(inst.spec), ValidationError);
  s = inst.state;
  s.noise_precision = -1.0;
  EXPECT_THROW(s.validate(inst.spec), ValidationError);
  s = inst.state;
  s.phases = VariationalPhases{Vector::Constant(s.num_features(), 2.0), Vector::Constant(s.num_features(), 1.0)};
  EXPECT_THROW(s.validate(inst.spec), ValidationError);
}

TEST(Layout, ComponentOfColumn) {
  EXPECT_EQ(component_of(0, 3), 0);
  EXPECT_EQ(component_of(2, 3), 0);
  EXPECT_EQ(component_of(3, 3), 1);
  EXPECT_EQ(component_of(5, 3), 1);
}

TEST(Pack, UnitNoiseAndLengthscale) {
  Instance inst = random_instance(4, {});
  inst.state.noise_precision = 1.0;
  inst.spec.components[0].lengthscales(0) = std::exp(1.0);
  const ParameterVector p = pack(inst.state, inst.spec);
  EXPECT_EQ(p.values(p.layout.find(Block::NoisePrecision)->offset), 0.0);
  EXPECT_NEAR(p.values(p.layout.find(Block::Lengthscales)->offset), 1.0, 1e-15);
}

TEST(Pack, RoundTripRandomStates) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    InstanceShape shape;
    shape.variational_phases = seed % 2 == 0;
    const Instance inst = random_instance(seed, shape);
    const ParameterVector p = pack(inst.state, inst.spec);
    const auto [s, spec] = unpack(p.values, inst.state, inst.spec);
    expect_rel_near(s.freq_means, inst.state.freq_means, 1e-12);
    expect_rel_near(s.freq_vars, inst.state.freq_vars, 1e-12);
    expect_rel_near(s.inducing_inputs, inst.state.inducing_inputs, 1e-12);
    expect_rel_near(s.coeff_means, inst.state.coeff_means, 1e-12);
    expect_rel_near(s.coeff_vars, inst.state.coeff_vars, 1e-12);
    EXPECT_NEAR(s.noise_precision, inst.state.noise_precision, 1e-12 * inst.state.noise_precision);
    for (std::size_t i = 0; i < spec.components.size(); ++i) {
      EXPECT_NEAR(spec.components[i].weight, inst.spec.components[i].weight, 1e-12);
      expect_rel_near(spec.components[i].lengthscales, inst.spec.components[i].lengthscales, 1e-12);
      expect_rel_near(spec.components[i].inverse_periods, inst.spec.components[i].inverse_periods, 1e-12);
    }
    if (shape.variational_phases) {
      const auto& a = std::get<VariationalPhases>(s.phases);
      const auto& b = std::get<VariationalPhases>(inst.state.phases);
      expect_rel_near(a.lower, b.lower, 1e-12);
      expect_rel_near(a.upper, b.upper, 1e-12);
    } else {
      EXPECT_EQ(std::get<FixedPhases>(s.phases).values, std::get<FixedPhases>(inst.state.phases).values);
    }
    // and back again
    EXPECT_LE((pack(s, spec).values - p.values).cwiseAbs().maxCoeff(), 1e-10);
  }
}

TEST(Pack, PriorPhaseWindowIsFinite) {
  Instance inst = random_instance(5, {});
  const Index lk = inst.state.num_features();
  inst.state.phases = VariationalPhases{Vector::Zero(lk), Vector::Constant(lk, kTwoPi)};
  const ParameterVector p = pack(inst.state, inst.spec);
  EXPECT_TRUE(p.values.allFinite());
  const auto [s, spec] = unpack(p.values, inst.state, inst.spec);
  const auto& vp = std::get<VariationalPhases>(s.phases);
  EXPECT_LE(vp.lower.maxCoeff(), 1e-10);
  EXPECT_GE(vp.upper.minCoeff(), kTwoPi - 1e-10);
  EXPECT_LE(vp.upper.maxCoeff(), kTwoPi);
}

TEST(Pack, AllZeroVectorGivesUnitValues) {
  const Instance inst = random_instance(6, {});
  const ParameterLayout layout = ParameterLayout::from(inst.state, inst.spec);
  const auto [s, spec] = unpack(Vector::Zero(layout.size()), inst.state, inst.spec);
  EXPECT_EQ(s.noise_precision, 1.0);
  for (const auto& c : spec.components) EXPECT_TRUE((c.lengthscales.array() == 1.0).all());
  EXPECT_TRUE((s.freq_means.array() == 0.0).all());
}

TEST(Pack, RejectsBadVectors) {
  const Instance inst = random_instance(7, {});
  const ParameterVector p = pack(inst.state, inst.spec);
  Vector v = p.values;
  v(3) = std::numeric_limits<double>::infinity();
  EXPECT_THROW(unpack(v, inst.state, inst.spec), ValidationError);
  EXPECT_THROW(unpack(p.values.head(p.values.size() - 1), inst.state, inst.spec), ValidationError);
}

TEST(Pack, RejectsNonFiniteFieldWithPath) {
  Instance inst = random_instance(8, {});
  inst.state.freq_means(1, 2) = std::numeric_limits<double>::quiet_NaN();
  try {
    pack(inst.state, inst.spec);
    FAIL() << "expected rejection";
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("freq_means"), std::string::npos) << e.what();
  }
}

TEST(Pack, InfinitePeriodsStayExactlyZero) {
  Instance inst = random_instance(9, {});
  inst.spec.components[1].inverse_periods.setZero();
  const ParameterVector p = pack(inst.state, inst.spec);
  Vector v = p.values;
  v.array() += 0.01;
  const auto [s, spec] = unpack(v, inst.state, inst.spec);
  EXPECT_TRUE((spec.components[1].inverse_periods.array() == 0.0).all());
}

TEST(Layout, DescribeNamesBlockAndIndex) {
  const Instance inst = random_instance(10, {});
  const ParameterLayout layout = ParameterLayout::from(inst.state, inst.spec);
  const auto r = layout.find(Block::FreqMeans);
  ASSERT_TRUE(r);
  EXPECT_EQ(layout.describe(r->offset + 5), "freq_means[5]");
  EXPECT_EQ(layout.block_at(r->offset), Block::FreqMeans);
}

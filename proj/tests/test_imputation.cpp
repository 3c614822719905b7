#include "test_support.hpp"
#include "vssgp/imputation.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <complex>
#include <sstream>

using namespace vssgp;
using namespace vssgp::testing;

namespace {

Dataset ramp(Index n) {
  Matrix x(n, 1), y(n, 1);
  for (Index i = 0; i < n; ++i) x(i, 0) = y(i, 0) = static_cast<double>(i);
  return Dataset(x, y);
}

// naive windowed DFT, one frame at a time
Matrix naive_stft(const Vector& s, Index frame, Index hop) {
  const Index frames = 1 + (s.size() - frame) / hop;
  Matrix out(frames, frame / 2 + 1);
  for (Index f = 0; f < frames; ++f)
    for (Index k = 0; k <= frame / 2; ++k) {
      std::complex<double> acc = 0.0;
      for (Index i = 0; i < frame; ++i) {
        const double w = 0.5 * (1.0 - std::cos(2.0 * M_PI * i / frame));
        acc += s(f * hop + i) * w * std::polar(1.0, -2.0 * M_PI * k * i / frame);
      }
      out(f, k) = std::abs(acc);
    }
  return out;
}

}  // namespace

TEST(ImputationTask, NoSegments) {
  const ImputationTask t = make_imputation_task(ramp(20), 0, 5, 1);
  EXPECT_TRUE(t.test_indices().empty());
  EXPECT_EQ(t.train_indices().size(), 20u);
}

TEST(ImputationTask, FiveSegmentsOfForty) {
  const ImputationTask t = make_imputation_task(ramp(1000), 5, 40, 2);
  EXPECT_EQ(t.test_indices().size(), 200u);
  EXPECT_EQ(t.train_indices().size(), 800u);
  ASSERT_EQ(t.segments.size(), 5u);
  for (const Segment& s : t.segments) {
    EXPECT_EQ(s.length, 40);
    for (Index i = s.start; i < s.start + s.length; ++i) EXPECT_TRUE(t.test_mask[static_cast<std::size_t>(i)]);
  }
  for (std::size_t i = 0; i < 1000; ++i) EXPECT_NE(t.train_mask[i], t.test_mask[i]);
  const Dataset train = t.train_data();
  EXPECT_EQ(train.size(), 800);
  EXPECT_EQ(train.outputs(0, 0), static_cast<double>(t.train_indices()[0]));
}

TEST(ImputationTask, DeterministicPerSeed) {
  const ImputationTask a = make_imputation_task(ramp(300), 4, 10, 7);
  const ImputationTask b = make_imputation_task(ramp(300), 4, 10, 7);
  EXPECT_EQ(a.test_mask, b.test_mask);
  bool differs = false;
  for (std::uint64_t seed = 8; seed < 12 && !differs; ++seed)
    differs = make_imputation_task(ramp(300), 4, 10, seed).test_mask != a.test_mask;
  EXPECT_TRUE(differs);
}

TEST(ImputationTask, Rejections) {
  EXPECT_THROW(make_imputation_task(ramp(100), 5, 10, 1), ValidationError);
  EXPECT_THROW(make_imputation_task(ramp(100), -1, 10, 1), ValidationError);
  EXPECT_THROW(make_imputation_task(ramp(100), 2, 0, 1), ValidationError);
}

TEST(Rmse, ClosedForms) {
  const Vector a = (Vector(2) << 3.0, 4.0).finished();
  EXPECT_EQ(rmse(a, a), 0.0);
  EXPECT_NEAR(rmse(a, Vector::Zero(2)), std::sqrt(12.5), 1e-15);
  EXPECT_NEAR(rmse(a, Vector::Zero(2)), 3.5355, 1e-4);
  EXPECT_THROW(rmse(a, Vector::Zero(3)), ValidationError);
  EXPECT_THROW(rmse(Vector(0), Vector(0)), ValidationError);
}

TEST(Rmse, TwoPassOracle) {
  std::mt19937_64 rng(3);
  const Vector p = normal_matrix(rng, 500, 1).col(0), t = normal_matrix(rng, 500, 1).col(0);
  double sum = 0.0;
  for (Index i = 0; i < 500; ++i) sum += (p(i) - t(i)) * (p(i) - t(i));
  const double mean = sum / 500.0;
  EXPECT_NEAR(rmse(p, t), std::sqrt(mean), 1e-12);
}

TEST(Stft, Shape) {
  EXPECT_EQ(stft_shape(16000).frame, 400);
  EXPECT_EQ(stft_shape(16000).hop, 192);
  EXPECT_THROW(stft_shape(0.0), ValidationError);
  EXPECT_THROW(stft_shape(20.0), ValidationError);
}

TEST(Stft, ZeroCases) {
  std::mt19937_64 rng(4);
  const Vector s = normal_matrix(rng, 3000, 1).col(0);
  EXPECT_EQ(stft_rmse(s, s, 16000), 0.0);
  EXPECT_EQ(stft_rmse(Vector::Zero(3000), Vector::Zero(3000), 16000), 0.0);
  EXPECT_THROW(stft_rmse(s.head(100), s.head(100), 16000), ValidationError);
  EXPECT_THROW(stft_rmse(s, s.head(2000), 16000), ValidationError);
}

TEST(Stft, NaiveDftOracle) {
  const double rate = 1000.0;
  const Index n = 300;
  Vector s(n);
  for (Index i = 0; i < n; ++i) s(i) = std::sin(2.0 * M_PI * 80.0 * i / rate + 0.3);
  const Matrix mag = naive_stft(s, 25, 12);
  const double expected = std::sqrt(mag.squaredNorm() / static_cast<double>(mag.size()));
  EXPECT_NEAR(stft_rmse(s, Vector::Zero(n), rate), expected, 1e-8);
  EXPECT_LE((stft_magnitude(s, stft_shape(rate)) - mag).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Report, CsvRow) {
  RunReport r{"vssgp", 0.25, 0.5, std::make_pair(1.0, 2.0), 0.0, {{"K", "10"}, {"seed", "3"}}};
  std::ostringstream out;
  write_report_header(out);
  write_report_row(out, r);
  r.stft_rmse.reset();
  write_report_row(out, r);
  EXPECT_EQ(out.str(),
            "method,train_rmse,test_rmse,stft_train_rmse,stft_test_rmse,seconds,config\n"
            "vssgp,0.25,0.5,1,2,0,K=10;seed=3\n"
            "vssgp,0.25,0.5,,,0,K=10;seed=3\n");
}

TEST(Synthetic, DeterministicAndSized) {
  const Dataset a = synthetic_sinusoid(200, 0.1, 5), b = synthetic_sinusoid(200, 0.1, 5);
  EXPECT_EQ(a.outputs, b.outputs);
  EXPECT_EQ(a.inputs(199, 0), 10.0);
  EXPECT_LT(rmse(a.outputs.col(0), (a.inputs.array() * (2.0 * M_PI / 5.0)).sin().matrix().col(0)), 0.15);
  EXPECT_EQ(synthetic_audio(1000, 0.0, 1).size(), 1000);
}

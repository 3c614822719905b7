#pragma once

// Imputation benchmark: gap construction, error metrics, run reports and
// synthetic signals.

#include "vssgp/core.hpp"
#include "vssgp/io.hpp"
#include "vssgp/random.hpp"

#include <unsupported/Eigen/FFT>

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

namespace vssgp {

struct Segment {
  Index start = 0;
  Index length = 0;
};

struct ImputationTask {
  Dataset series;
  std::vector<Segment> segments;
  std::vector<bool> train_mask;
  std::vector<bool> test_mask;
  std::uint64_t seed = 0;

  std::vector<Index> train_indices() const { return indices_of(train_mask); }
  std::vector<Index> test_indices() const { return indices_of(test_mask); }
  Dataset train_data() const { return series.rows(train_indices()); }

 private:
  static std::vector<Index> indices_of(const std::vector<bool>& mask) {
    std::vector<Index> out;
    for (std::size_t i = 0; i < mask.size(); ++i)
      if (mask[i]) out.push_back(static_cast<Index>(i));
    return out;
  }
};

/// Remove `n_segments` disjoint runs of `seg_length` consecutive rows. Starts
/// are drawn jointly and redrawn until they do not overlap.
inline ImputationTask make_imputation_task(const Dataset& series, Index n_segments, Index seg_length,
                                           std::uint64_t seed) {
  const Index n = series.size();
  if (n_segments < 0 || seg_length < 0) throw ValidationError("imputation: negative segment count or length");
  if (n_segments > 0 && seg_length < 1) throw ValidationError("imputation: segment length must be >= 1");
  if (2 * n_segments * seg_length >= n)
    throw ValidationError("imputation: segments must cover less than half of the series");

  ImputationTask task;
  task.series = series;
  task.seed = seed;
  task.train_mask.assign(static_cast<std::size_t>(n), true);
  task.test_mask.assign(static_cast<std::size_t>(n), false);
  if (n_segments == 0) return task;

  constexpr int kMaxAttempts = 10000;
  Rng rng = substream(seed, "impute/segments");
  std::uniform_int_distribution<Index> pick(0, n - seg_length);
  std::vector<Index> starts(static_cast<std::size_t>(n_segments));
  for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
    for (auto& s : starts) s = pick(rng);
    std::vector<Index> sorted = starts;
    std::sort(sorted.begin(), sorted.end());
    bool ok = true;
    for (std::size_t i = 1; i < sorted.size() && ok; ++i) ok = sorted[i] >= sorted[i - 1] + seg_length;
    if (!ok) continue;
    for (Index s : sorted) {
      task.segments.push_back({s, seg_length});
      for (Index i = s; i < s + seg_length; ++i) {
        task.train_mask[static_cast<std::size_t>(i)] = false;
        task.test_mask[static_cast<std::size_t>(i)] = true;
      }
    }
    return task;
  }
  throw ValidationError("imputation: could not place non-overlapping segments");
}

inline double rmse(const Eigen::Ref<const Vector>& pred, const Eigen::Ref<const Vector>& truth) {
  if (pred.size() != truth.size()) throw ValidationError("rmse: length mismatch");
  if (pred.size() < 1) throw ValidationError("rmse: empty input");
  return std::sqrt((pred - truth).squaredNorm() / static_cast<double>(pred.size()));
}

/// RMSE over the listed rows of every output column.
inline double rmse_rows(const Matrix& pred, const Matrix& truth, const std::vector<Index>& rows) {
  if (rows.empty()) return 0.0;
  double sum = 0.0;
  for (Index r : rows) sum += (pred.row(r) - truth.row(r)).squaredNorm();
  return std::sqrt(sum / static_cast<double>(rows.size() * static_cast<std::size_t>(pred.cols())));
}

struct StftShape {
  Index frame = 0;
  Index hop = 0;
};

inline StftShape stft_shape(double sample_rate_hz) {
  if (!(sample_rate_hz > 0.0)) throw ValidationError("stft: sample rate must be > 0");
  StftShape s{static_cast<Index>(std::lround(0.025 * sample_rate_hz)),
              static_cast<Index>(std::lround(0.012 * sample_rate_hz))};
  if (s.frame < 2 || s.hop < 1) throw ValidationError("stft: sample rate too low for 25 ms frames");
  return s;
}

/// Periodic Hann window.
inline Vector hann(Index n) {
  Vector w(n);
  for (Index i = 0; i < n; ++i) w(i) = 0.5 - 0.5 * std::cos(kTwoPi * static_cast<double>(i) / static_cast<double>(n));
  return w;
}

/// Magnitude spectrogram, frames x (frame/2 + 1).
inline Matrix stft_magnitude(const Eigen::Ref<const Vector>& signal, const StftShape& shape) {
  if (signal.size() < shape.frame) throw ValidationError("stft: signal shorter than one frame");
  const Index frames = 1 + (signal.size() - shape.frame) / shape.hop;
  const Index bins = shape.frame / 2 + 1;
  const Vector w = hann(shape.frame);
  Eigen::FFT<double> fft;
  std::vector<double> buf(static_cast<std::size_t>(shape.frame));
  std::vector<std::complex<double>> spec;
  Matrix out(frames, bins);
  for (Index f = 0; f < frames; ++f) {
    for (Index i = 0; i < shape.frame; ++i)
      buf[static_cast<std::size_t>(i)] = signal(f * shape.hop + i) * w(i);
    fft.fwd(spec, buf);
    for (Index b = 0; b < bins; ++b) out(f, b) = std::abs(spec[static_cast<std::size_t>(b)]);
  }
  return out;
}

inline double stft_rmse(const Eigen::Ref<const Vector>& pred, const Eigen::Ref<const Vector>& truth,
                        double sample_rate_hz) {
  if (pred.size() != truth.size()) throw ValidationError("stft_rmse: length mismatch");
  const StftShape shape = stft_shape(sample_rate_hz);
  const Matrix a = stft_magnitude(pred, shape);
  const Matrix b = stft_magnitude(truth, shape);
  return std::sqrt((a - b).squaredNorm() / static_cast<double>(a.size()));
}

struct RunReport {
  std::string method;
  double train_rmse = 0.0;
  double test_rmse = 0.0;
  std::optional<std::pair<double, double>> stft_rmse;  // (train, test)
  double seconds = 0.0;
  /// Ordered key=value pairs echoing the configuration.
  std::vector<std::pair<std::string, std::string>> config;
};

inline void write_report_header(std::ostream& out) {
  out << "method,train_rmse,test_rmse,stft_train_rmse,stft_test_rmse,seconds,config\n";
}

inline void write_report_row(std::ostream& out, const RunReport& r) {
  using detail::format_double;
  out << r.method << ',' << format_double(r.train_rmse) << ',' << format_double(r.test_rmse) << ',';
  if (r.stft_rmse) out << format_double(r.stft_rmse->first) << ',' << format_double(r.stft_rmse->second);
  else out << ',';
  out << ',' << format_double(r.seconds) << ',';
  for (std::size_t i = 0; i < r.config.size(); ++i)
    out << (i ? ";" : "") << r.config[i].first << '=' << r.config[i].second;
  out << '\n';
}

/// Noisy sinusoid on an even grid over [0, span]:
/// y = sin(2 pi x / period) + noise_sd * eps.
inline Dataset synthetic_sinusoid(Index n, double noise_sd, std::uint64_t seed, double span = 10.0,
                                  double period = 5.0) {
  if (n < 2) throw ValidationError("synthetic_sinusoid: need n >= 2");
  Rng rng = substream(seed, "data/sinusoid");
  std::normal_distribution<double> nd(0.0, 1.0);
  Matrix x(n, 1), y(n, 1);
  for (Index i = 0; i < n; ++i) {
    x(i, 0) = span * static_cast<double>(i) / static_cast<double>(n - 1);
    y(i, 0) = std::sin(kTwoPi * x(i, 0) / period) + noise_sd * nd(rng);
  }
  return Dataset(std::move(x), std::move(y));
}

/// Quasi-periodic signal with a slowly varying envelope and a few harmonics,
/// sampled at integer times.
inline Dataset synthetic_audio(Index n, double noise_sd, std::uint64_t seed, double cycle = 40.0) {
  if (n < 2) throw ValidationError("synthetic_audio: need n >= 2");
  Rng rng = substream(seed, "data/audio");
  std::normal_distribution<double> nd(0.0, 1.0);
  std::uniform_real_distribution<double> ph(0.0, kTwoPi);
  const double p1 = ph(rng), p2 = ph(rng), p3 = ph(rng);
  Matrix x(n, 1), y(n, 1);
  for (Index i = 0; i < n; ++i) {
    const double t = static_cast<double>(i);
    const double env = 1.0 + 0.3 * std::sin(kTwoPi * t / (7.3 * cycle) + p3);
    x(i, 0) = t;
    y(i, 0) = env * (std::sin(kTwoPi * t / cycle + p1) + 0.5 * std::sin(2.0 * kTwoPi * t / cycle + p2)) +
              noise_sd * nd(rng);
  }
  return Dataset(std::move(x), std::move(y));
}

}  // namespace vssgp

#pragma once

// Flat unconstrained parameter vector and the mapping to/from the constrained
// model quantities.
//
// Layout (blocks appear in this order; a block may be absent, see below):
//
//   noise_precision   1        log tau
//   weights           L        log sigma_i^2
//   lengthscales      L*Q      log l_iq, component-major
//   inverse_periods   P        softplus^-1 of each p_iq^-1 that is > 0 in the
//                              template; zero entries (infinite period) stay
//                              fixed at zero and have no slot
//   inducing_inputs   LK*Q     z_k, column-major (all Q entries of column 0
//                              first)
//   freq_means        LK*Q     mu_k
//   freq_vars         LK*Q     log diag Sigma_k; absent when the template is a
//                              point mass (Sigma = 0)
//   phase_lower       LK       logit(alpha_k / 2pi); variational phases only
//   phase_gap         LK       logit((beta_k - alpha_k) / (2pi - alpha_k))
//   coeff_means       LK*D     m_d, column-major (column d contiguous)
//   coeff_vars        LK*D     log diag s_d
//
// Fixed phases are Monte Carlo constants and travel with the template state.

#include "vssgp/core.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace vssgp {

enum class Block : int {
  NoisePrecision = 0,
  Weights,
  Lengthscales,
  InversePeriods,
  InducingInputs,
  FreqMeans,
  FreqVars,
  PhaseLower,
  PhaseGap,
  CoeffMeans,
  CoeffVars,
};

inline constexpr int kNumBlocks = 11;

inline std::string_view block_name(Block b) {
  static constexpr std::array<std::string_view, kNumBlocks> names = {
      "noise_precision", "weights",    "lengthscales", "inverse_periods",
      "inducing_inputs", "freq_means", "freq_vars",    "phase_lower",
      "phase_gap",       "coeff_means", "coeff_vars"};
  return names[static_cast<std::size_t>(b)];
}

namespace transform {

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double logit(double p) { return std::log(p) - std::log1p(-p); }

inline double softplus(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

inline double softplus_inverse(double y) { return y + std::log(-std::expm1(-y)); }

inline constexpr double kRatioClamp = 1e-12;

inline double clamp_ratio(double r) { return std::clamp(r, kRatioClamp, 1.0 - kRatioClamp); }

}  // namespace transform

struct BlockRange {
  Block block;
  Index offset = 0;
  Index size = 0;
};

class ParameterLayout {
 public:
  ParameterLayout() = default;

  static ParameterLayout from(const VariationalState& state, const KernelSpec& spec) {
    ParameterLayout layout;
    const Index l = spec.num_components();
    const Index q = spec.input_dim();
    const Index lk = state.num_features();
    const Index d = state.output_dim();
    Index positive_periods = 0;
    for (const auto& c : spec.components)
      positive_periods += (c.inverse_periods.array() > 0.0).count();

    layout.add(Block::NoisePrecision, 1);
    layout.add(Block::Weights, l);
    layout.add(Block::Lengthscales, l * q);
    layout.add(Block::InversePeriods, positive_periods);
    layout.add(Block::InducingInputs, lk * q);
    layout.add(Block::FreqMeans, lk * q);
    if (!state.point_mass()) layout.add(Block::FreqVars, lk * q);
    if (state.variational_phases()) {
      layout.add(Block::PhaseLower, lk);
      layout.add(Block::PhaseGap, lk);
    }
    layout.add(Block::CoeffMeans, lk * d);
    layout.add(Block::CoeffVars, lk * d);
    return layout;
  }

  Index size() const { return size_; }
  const std::vector<BlockRange>& blocks() const { return blocks_; }

  std::optional<BlockRange> find(Block b) const {
    for (const auto& r : blocks_)
      if (r.block == b) return r;
    return std::nullopt;
  }
  bool has(Block b) const { return find(b).has_value(); }

  /// Block that owns flat index i.
  Block block_at(Index i) const {
    for (const auto& r : blocks_)
      if (i >= r.offset && i < r.offset + r.size) return r.block;
    throw ValidationError("parameter index out of range");
  }

  /// Human-readable location, e.g. "freq_means[5]".
  std::string describe(Index i) const {
    for (const auto& r : blocks_)
      if (i >= r.offset && i < r.offset + r.size)
        return std::string(block_name(r.block)) + "[" + std::to_string(i - r.offset) + "]";
    return "<out of range>";
  }

 private:
  void add(Block b, Index n) {
    if (n == 0) return;
    blocks_.push_back({b, size_, n});
    size_ += n;
  }

  std::vector<BlockRange> blocks_;
  Index size_ = 0;
};

/// Which blocks an optimizer may move.
struct TrainableBlocks {
  std::array<bool, kNumBlocks> flags{};

  static TrainableBlocks all() {
    TrainableBlocks t;
    t.flags.fill(true);
    return t;
  }
  static TrainableBlocks none() { return {}; }

  bool operator[](Block b) const { return flags[static_cast<std::size_t>(b)]; }
  TrainableBlocks& set(Block b, bool on) {
    flags[static_cast<std::size_t>(b)] = on;
    return *this;
  }
};

using Mask = Eigen::Array<bool, Eigen::Dynamic, 1>;

inline Mask make_mask(const ParameterLayout& layout, const TrainableBlocks& trainable) {
  Mask m = Mask::Constant(layout.size(), false);
  for (const auto& r : layout.blocks())
    if (trainable[r.block]) m.segment(r.offset, r.size).setConstant(true);
  return m;
}

struct ParameterVector {
  ParameterLayout layout;
  Vector values;
  Mask trainable;
};

namespace detail {

inline void require_finite(double v, const std::string& path) {
  if (!std::isfinite(v)) throw ValidationError("non-finite value at " + path);
}

template <typename Derived>
void require_finite(const Eigen::DenseBase<Derived>& m, const std::string& path) {
  for (Index j = 0; j < m.cols(); ++j)
    for (Index i = 0; i < m.rows(); ++i)
      if (!std::isfinite(m(i, j)))
        throw ValidationError("non-finite value at " + path + "(" + std::to_string(i) + "," +
                              std::to_string(j) + ")");
}

}  // namespace detail

/// Map a valid state and kernel to unconstrained coordinates. Every
/// parameter is marked trainable; callers narrow the mask.
inline ParameterVector pack(const VariationalState& state, const KernelSpec& spec) {
  using detail::require_finite;
  require_finite(state.noise_precision, "state.noise_precision");
  for (std::size_t i = 0; i < spec.components.size(); ++i) {
    const std::string at = "kernel_spec.components[" + std::to_string(i) + "]";
    require_finite(spec.components[i].weight, at + ".weight");
    require_finite(spec.components[i].lengthscales, at + ".lengthscales");
    require_finite(spec.components[i].inverse_periods, at + ".inverse_periods");
  }
  require_finite(state.inducing_inputs, "state.inducing_inputs");
  require_finite(state.freq_means, "state.freq_means");
  require_finite(state.freq_vars, "state.freq_vars");
  require_finite(state.coeff_means, "state.coeff_means");
  require_finite(state.coeff_vars, "state.coeff_vars");
  state.validate(spec);
  if (!state.point_mass() && !(state.freq_vars.array() > 0.0).all())
    throw ValidationError(
        "state.freq_vars: entries must be all > 0 or all == 0 (point mass) to be packed");

  ParameterVector out;
  out.layout = ParameterLayout::from(state, spec);
  out.values = Vector::Zero(out.layout.size());
  out.trainable = Mask::Constant(out.layout.size(), true);
  Vector& v = out.values;
  const Index q = spec.input_dim();
  const Index l = spec.num_components();

  for (const auto& r : out.layout.blocks()) {
    auto seg = v.segment(r.offset, r.size);
    switch (r.block) {
      case Block::NoisePrecision:
        seg(0) = std::log(state.noise_precision);
        break;
      case Block::Weights:
        for (Index i = 0; i < l; ++i) seg(i) = std::log(spec.components[i].weight);
        break;
      case Block::Lengthscales:
        for (Index i = 0; i < l; ++i)
          seg.segment(i * q, q) = spec.components[i].lengthscales.array().log().matrix();
        break;
      case Block::InversePeriods: {
        Index j = 0;
        for (const auto& c : spec.components)
          for (Index d = 0; d < q; ++d)
            if (c.inverse_periods(d) > 0.0) seg(j++) = transform::softplus_inverse(c.inverse_periods(d));
        break;
      }
      case Block::InducingInputs:
        seg = state.inducing_inputs.reshaped();
        break;
      case Block::FreqMeans:
        seg = state.freq_means.reshaped();
        break;
      case Block::FreqVars:
        seg = state.freq_vars.reshaped().array().log().matrix();
        break;
      case Block::PhaseLower: {
        const auto& vp = std::get<VariationalPhases>(state.phases);
        for (Index k = 0; k < r.size; ++k)
          seg(k) = transform::logit(transform::clamp_ratio(vp.lower(k) / kTwoPi));
        break;
      }
      case Block::PhaseGap: {
        const auto& vp = std::get<VariationalPhases>(state.phases);
        for (Index k = 0; k < r.size; ++k) {
          // Use the lower bound as it will be reconstructed so the pair
          // round-trips even when alpha sits on the clamp.
          const double alpha =
              kTwoPi * transform::sigmoid(transform::logit(transform::clamp_ratio(vp.lower(k) / kTwoPi)));
          const double room = kTwoPi - alpha;
          seg(k) = transform::logit(transform::clamp_ratio((vp.upper(k) - alpha) / room));
        }
        break;
      }
      case Block::CoeffMeans:
        seg = state.coeff_means.reshaped();
        break;
      case Block::CoeffVars:
        seg = state.coeff_vars.reshaped().array().log().matrix();
        break;
    }
  }
  return out;
}

/// Inverse of pack. The template supplies shapes, the positions of fixed zero
/// inverse periods, fixed phases and (for point-mass templates) Sigma = 0.
inline std::pair<VariationalState, KernelSpec> unpack(const Eigen::Ref<const Vector>& v,
                                                      const VariationalState& tmpl,
                                                      const KernelSpec& tmpl_spec) {
  const ParameterLayout layout = ParameterLayout::from(tmpl, tmpl_spec);
  if (v.size() != layout.size())
    throw ValidationError("unpack: expected " + std::to_string(layout.size()) +
                          " parameters, got " + std::to_string(v.size()));
  for (Index i = 0; i < v.size(); ++i)
    if (!std::isfinite(v(i)))
      throw ValidationError("unpack: non-finite value at " + layout.describe(i));

  VariationalState s = tmpl;
  KernelSpec spec = tmpl_spec;
  const Index q = spec.input_dim();
  const Index l = spec.num_components();
  const Index lk = tmpl.num_features();
  const Index d = tmpl.output_dim();

  for (const auto& r : layout.blocks()) {
    const auto seg = v.segment(r.offset, r.size);
    switch (r.block) {
      case Block::NoisePrecision:
        s.noise_precision = std::exp(seg(0));
        break;
      case Block::Weights:
        for (Index i = 0; i < l; ++i) spec.components[i].weight = std::exp(seg(i));
        break;
      case Block::Lengthscales:
        for (Index i = 0; i < l; ++i)
          spec.components[i].lengthscales = seg.segment(i * q, q).array().exp().matrix();
        break;
      case Block::InversePeriods: {
        Index j = 0;
        for (auto& c : spec.components)
          for (Index dd = 0; dd < q; ++dd)
            if (c.inverse_periods(dd) > 0.0) c.inverse_periods(dd) = transform::softplus(seg(j++));
        break;
      }
      case Block::InducingInputs:
        s.inducing_inputs = seg.reshaped(q, lk);
        break;
      case Block::FreqMeans:
        s.freq_means = seg.reshaped(q, lk);
        break;
      case Block::FreqVars:
        s.freq_vars = seg.array().exp().matrix().reshaped(q, lk);
        break;
      case Block::PhaseLower: {
        auto& vp = std::get<VariationalPhases>(s.phases);
        for (Index k = 0; k < lk; ++k) vp.lower(k) = kTwoPi * transform::sigmoid(seg(k));
        break;
      }
      case Block::PhaseGap: {
        auto& vp = std::get<VariationalPhases>(s.phases);
        for (Index k = 0; k < lk; ++k)
          vp.upper(k) = vp.lower(k) + (kTwoPi - vp.lower(k)) * transform::sigmoid(seg(k));
        break;
      }
      case Block::CoeffMeans:
        s.coeff_means = seg.reshaped(lk, d);
        break;
      case Block::CoeffVars:
        s.coeff_vars = seg.array().exp().matrix().reshaped(lk, d);
        break;
    }
  }
  try {
    s.validate(spec);
  } catch (const ValidationError& e) {
    throw ValidationError(std::string("unpack produced an invalid state (overflow?): ") + e.what());
  }
  return {std::move(s), std::move(spec)};
}

}  // namespace vssgp

#pragma once

// Clipping operator, parameter schedules and single-step update rules for
// (clipped) SGD and (clipped) stochastic heavy ball.

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>

#include "clipgrad/error.hpp"

namespace clipgrad {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Magnitude beyond which an iterate is declared diverged.
inline constexpr double kDivergenceCutoff = 1e15;

inline bool all_finite(const Vector& v) noexcept { return v.allFinite(); }

/// True when any coordinate is non-finite or exceeds the divergence cutoff.
inline bool is_diverged(const Vector& v) noexcept {
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    const double a = std::abs(v[i]);
    if (!(a <= kDivergenceCutoff)) return true;  // also catches NaN
  }
  return false;
}

/// Scale factor min{1, gamma/|g|}; 1 for the zero vector.
inline double clip_factor(double norm, double gamma) noexcept {
  return norm > gamma ? gamma / norm : 1.0;
}

/// Projection of g onto the Euclidean ball of radius gamma, in place.
/// Returns the applied scale factor.
inline double clip_in_place(Vector& g, double gamma) {
  if (!(gamma > 0.0)) throw DomainError("clip: threshold must be positive");
  if (!all_finite(g)) throw DomainError("clip: non-finite input");
  const double norm = g.norm();
  const double s = clip_factor(norm, gamma);
  if (s < 1.0) g *= s;
  return s;
}

inline Vector clip_vec(Vector g, double gamma) {
  clip_in_place(g, gamma);
  return g;
}

// ---------------------------------------------------------------------------
// Schedules
// ---------------------------------------------------------------------------

struct StepSchedule {
  enum class Kind { polynomial, constant };
  Kind kind = Kind::polynomial;
  double alpha0 = 1.0;
  double tau = 0.5;

  static StepSchedule polynomial(double alpha0, double tau) {
    StepSchedule s{Kind::polynomial, alpha0, tau};
    s.validate();
    return s;
  }
  static StepSchedule constant(double alpha) {
    StepSchedule s{Kind::constant, alpha, 0.0};
    s.validate();
    return s;
  }

  void validate() const {
    if (!(alpha0 > 0.0) || !std::isfinite(alpha0))
      throw ConfigError("step schedule: alpha0 must be positive and finite");
    if (kind == Kind::polynomial && !(tau >= 0.0 && tau <= 1.0))
      throw ConfigError("step schedule: tau must lie in [0, 1]");
  }

  double at(std::uint64_t k) const noexcept {
    if (kind == Kind::constant) return alpha0;
    return alpha0 * std::pow(static_cast<double>(k) + 1.0, -tau);
  }
};

struct ClipSchedule {
  enum class Kind { constant, coupled };
  Kind kind = Kind::constant;
  double gamma = 1.0;

  static ClipSchedule constant(double gamma) {
    ClipSchedule c{Kind::constant, gamma};
    c.validate();
    return c;
  }
  /// gamma_k = gamma / sqrt(alpha_k)
  static ClipSchedule coupled(double gamma) {
    ClipSchedule c{Kind::coupled, gamma};
    c.validate();
    return c;
  }

  void validate() const {
    if (!(gamma > 0.0) || !std::isfinite(gamma))
      throw ConfigError("clip schedule: gamma must be positive and finite");
  }

  double at(double alpha_k) const noexcept {
    return kind == Kind::constant ? gamma : gamma / std::sqrt(alpha_k);
  }
};

/// beta_k = nu * alpha_k (proportional), or a fixed beta (constant).
struct MomentumSchedule {
  enum class Kind { proportional, constant };
  Kind kind = Kind::proportional;
  double nu = 1.0;
  double beta = 0.1;
  bool clamp = false;

  static MomentumSchedule proportional(double nu, bool clamp = false) {
    MomentumSchedule m{Kind::proportional, nu, 0.0, clamp};
    m.validate();
    return m;
  }
  static MomentumSchedule constant(double beta) {
    MomentumSchedule m{Kind::constant, 0.0, beta, false};
    m.validate();
    return m;
  }

  void validate() const {
    if (kind == Kind::proportional && (!(nu > 0.0) || !std::isfinite(nu)))
      throw ConfigError("momentum schedule: nu must be positive");
    if (kind == Kind::constant && !(beta > 0.0 && beta <= 1.0))
      throw ConfigError("momentum schedule: beta must lie in (0, 1]");
  }

  /// Checks beta_k in (0, 1] against the largest stepsize of a schedule.
  void validate_against(const StepSchedule& step) const {
    validate();
    if (kind == Kind::proportional && !clamp && nu * step.alpha0 > 1.0)
      throw ConfigError("momentum schedule: nu * alpha0 > 1 gives beta_k > 1 "
                        "(enable clamp to saturate at 1)");
  }

  double at(double alpha_k) const noexcept {
    if (kind == Kind::constant) return beta;
    double b = nu * alpha_k;
    if (clamp) {
      if (b > 1.0) b = 1.0;
      if (!(b > 0.0)) b = std::numeric_limits<double>::min();
    }
    return b;
  }
};

struct BatchSchedule {
  enum class Kind { unit, fixed, inverse_step };
  Kind kind = Kind::unit;
  std::uint64_t m0 = 1;

  static BatchSchedule unit() { return {Kind::unit, 1}; }
  static BatchSchedule fixed(std::uint64_t m0) {
    if (m0 == 0) throw ConfigError("batch schedule: m0 must be positive");
    return {Kind::fixed, m0};
  }
  /// m_k = ceil(1 / alpha_k)
  static BatchSchedule inverse_step() { return {Kind::inverse_step, 1}; }

  std::uint64_t at(double alpha_k) const noexcept {
    switch (kind) {
      case Kind::unit: return 1;
      case Kind::fixed: return m0;
      case Kind::inverse_step: {
        const double m = std::ceil(1.0 / alpha_k);
        return m < 1.0 ? 1 : static_cast<std::uint64_t>(m);
      }
    }
    return 1;
  }
};

struct ScheduleValues {
  double alpha;
  std::optional<double> gamma;  // absent: clipping disabled
  std::optional<double> beta;   // absent: no momentum
  std::uint64_t batch;
};

struct ScheduleSet {
  StepSchedule step;
  std::optional<ClipSchedule> clip;
  std::optional<MomentumSchedule> momentum;
  BatchSchedule batch;

  void validate() const {
    step.validate();
    if (clip) clip->validate();
    if (momentum) momentum->validate_against(step);
  }
};

inline ScheduleValues schedule_values(const ScheduleSet& s, std::uint64_t k) {
  ScheduleValues v{};
  v.alpha = s.step.at(k);
  if (s.clip) v.gamma = s.clip->at(v.alpha);
  if (s.momentum) v.beta = s.momentum->at(v.alpha);
  v.batch = s.batch.at(v.alpha);
  return v;
}

// ---------------------------------------------------------------------------
// Iterations
// ---------------------------------------------------------------------------

struct IterState {
  Vector x;
  Vector d;
  std::uint64_t k = 0;
  bool diverged = false;
};

/// x <- x - alpha * d, flagging divergence.
inline void advance(IterState& s, double alpha) {
  s.x.noalias() -= alpha * s.d;
  ++s.k;
  if (is_diverged(s.x)) s.diverged = true;
}

/// Search direction of (clipped) SGD. Returns the clip factor (1 when
/// clipping is disabled). Non-finite g without clipping marks divergence.
inline double sgd_direction(IterState& s, const Vector& g,
                            std::optional<double> gamma) {
  if (g.size() != s.x.size())
    throw DomainError("sgd_step: gradient dimension mismatch");
  s.d = g;
  if (!gamma) {
    if (!all_finite(g)) s.diverged = true;
    return 1.0;
  }
  return clip_in_place(s.d, *gamma);
}

/// One step of (clipped) SGD: d = clip(g), x' = x - alpha d.
inline IterState sgd_step(IterState state, const Vector& g, double alpha,
                          std::optional<double> gamma) {
  sgd_direction(state, g, gamma);
  if (state.diverged) {
    ++state.k;
    return state;
  }
  advance(state, alpha);
  return state;
}

/// d <- clip((1 - beta) d + beta g_next). Returns the clip factor.
inline double heavy_ball_direction(Vector& d, const Vector& g_next, double beta,
                                   std::optional<double> gamma) {
  if (!(beta > 0.0 && beta <= 1.0))
    throw DomainError("shb_step: beta must lie in (0, 1]");
  if (g_next.size() != d.size())
    throw DomainError("shb_step: gradient dimension mismatch");
  d = (1.0 - beta) * d + beta * g_next;
  if (!gamma) return 1.0;
  return clip_in_place(d, *gamma);
}

/// Initial heavy-ball direction d0 = clip(g0).
inline Vector shb_initial_direction(const Vector& g0, std::optional<double> gamma) {
  return gamma ? clip_vec(g0, *gamma) : g0;
}

/// One step of (clipped) SHB. g_next must be the stochastic subgradient at the
/// new iterate x - alpha d, so a caller typically forms that point first.
inline IterState shb_step(IterState state, const Vector& g_next, double alpha,
                          double beta, std::optional<double> gamma) {
  if (!(beta > 0.0 && beta <= 1.0))
    throw DomainError("shb_step: beta must lie in (0, 1]");
  advance(state, alpha);
  if (state.diverged) return state;
  if (!gamma && !all_finite(g_next)) {
    state.diverged = true;
    return state;
  }
  heavy_ball_direction(state.d, g_next, beta, gamma);
  return state;
}

}  // namespace clipgrad

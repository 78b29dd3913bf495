#pragma once

// Trajectory instrumentation: Moreau-envelope proximal points and gradients,
// the Lyapunov diagnostics W_k and V_k of clipped heavy ball, the per-iteration
// trace and the epoch-to-epsilon statistic.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <variant>
#include <vector>

#include "clipgrad/clip.hpp"
#include "clipgrad/error.hpp"
#include "clipgrad/problems.hpp"

namespace clipgrad {

struct MoreauConfig {
  double lambda = 0.5;
  double rho = 0.0;
  double tol_prox = 1e-6;
  std::uint64_t max_inner = 100000;

  MoreauConfig() = default;
  MoreauConfig(double lambda_, double rho_, double tol = 1e-6, std::uint64_t cap = 100000)
      : lambda(lambda_), rho(rho_), tol_prox(tol), max_inner(cap) {
    validate();
  }

  /// lambda = 1/(2 rho); requires rho > 0.
  static MoreauConfig standard(double rho, double tol = 1e-6, std::uint64_t cap = 100000) {
    if (!(rho > 0.0)) throw ConfigError("moreau: default lambda needs rho > 0");
    return MoreauConfig(1.0 / (2.0 * rho), rho, tol, cap);
  }

  void validate() const {
    if (!(lambda > 0.0) || !std::isfinite(lambda)) throw ConfigError("moreau: lambda must be positive");
    if (!(rho >= 0.0)) throw ConfigError("moreau: rho must be non-negative");
    if (1.0 / lambda < 2.0 * rho) throw ConfigError("moreau: requires 1/lambda >= 2 rho");
    if (!(tol_prox > 0.0)) throw ConfigError("moreau: tol_prox must be positive");
    if (max_inner == 0) throw ConfigError("moreau: max_inner must be positive");
  }

  /// Strong-convexity modulus of the proximal subproblem.
  double modulus() const noexcept { return 1.0 / lambda - rho; }
};

struct ProxResult {
  Vector y;
  double error_bound = 0.0;  // certified bound on |y - prox(x)|
  std::uint64_t iterations = 0;
  bool converged = false;
};

/// Approximate prox_{lambda f}(x).
///
/// Projected subgradient descent on F(y) = f(y) + |y - x|^2/(2 lambda), which
/// is mu-strongly convex with mu = 1/lambda - rho, using steps 2/(mu (t+2)) and
/// (t+1)-weighted averaging. The minimizer lies in the ball around x of radius
/// |f'(x)|/mu, which the iterates are projected onto. Two certificates bound
/// the distance to the minimizer:
///   |y - y*| <= |s|/mu for any s in dF(y), and
///   |y - y*|^2 <= 2 (F(y) - LB)/mu, with LB the minimum of the weighted
///   average of the strongly convex lower models collected so far.
template <StochasticProblem P>
ProxResult prox_point(const P& problem, const MoreauConfig& cfg, const Vector& x) {
  cfg.validate();
  const double mu = cfg.modulus();
  const double inv_lambda = 1.0 / cfg.lambda;
  const Eigen::Index n = x.size();

  Vector s(n);
  problem.full_subgradient(x, s);
  const double radius = s.norm() / mu;
  ProxResult best{x, radius, 0, radius <= cfg.tol_prox};
  if (best.converged) return best;

  auto objective = [&](const Vector& u) {  // u = y - x
    return problem.value(x + u) + 0.5 * inv_lambda * u.squaredNorm();
  };

  Vector u = Vector::Zero(n);
  Vector u_avg = Vector::Zero(n);
  Vector v_acc = Vector::Zero(n);
  Vector y(n);
  double c_acc = 0.0;
  double w_sum = 0.0;
  const double round_slack = 64.0 * std::numeric_limits<double>::epsilon();

  auto consider = [&](const Vector& cand_u, double bound, std::uint64_t t) {
    if (bound < best.error_bound) {
      best.y = x + cand_u;
      best.error_bound = bound;
      best.iterations = t;
    }
  };

  for (std::uint64_t t = 0; t < cfg.max_inner; ++t) {
    y = x + u;
    const double F = problem.value(y) + 0.5 * inv_lambda * u.squaredNorm();
    problem.full_subgradient(y, s);
    s.noalias() += inv_lambda * u;

    const double w = static_cast<double>(t + 1);
    w_sum += w;
    c_acc += w * (F - s.dot(u) + 0.5 * mu * u.squaredNorm());
    v_acc.noalias() += w * (s - mu * u);
    u_avg += (w / w_sum) * (u - u_avg);

    const Vector v = v_acc / w_sum;
    const double c = c_acc / w_sum;
    const double lower = c - v.squaredNorm() / (2.0 * mu);
    const double slack = round_slack * (1.0 + std::abs(F) + std::abs(c));

    consider(u, s.norm() / mu, t + 1);
    consider(u, std::sqrt(2.0 * (std::max(F - lower, 0.0) + slack) / mu), t + 1);
    if ((t & 15u) == 15u || t + 1 == cfg.max_inner) {
      const double Fa = objective(u_avg);
      consider(u_avg, std::sqrt(2.0 * (std::max(Fa - lower, 0.0) + slack) / mu), t + 1);
    }
    if (best.error_bound <= cfg.tol_prox) {
      best.converged = true;
      return best;
    }

    u.noalias() -= (2.0 / (mu * static_cast<double>(t + 2))) * s;
    const double un = u.norm();
    if (un > radius) u *= radius / un;
  }
  best.iterations = cfg.max_inner;
  return best;
}

inline ProxResult prox_point(const ProblemInstance& inst, const MoreauConfig& cfg, const Vector& x) {
  return std::visit([&](const auto& p) { return prox_point(p, cfg, x); }, inst);
}

/// Envelope quantities at one point, from a single prox solve.
struct MoreauEval {
  ProxResult prox;
  Vector grad;      // (x - y)/lambda
  double envelope;  // f(y) + |x - y|^2/(2 lambda), an upper estimate of f_lambda(x)
  double grad_error;  // bound on |grad - true gradient|

  bool accurate() const noexcept { return prox.converged; }
};

template <StochasticProblem P>
MoreauEval moreau_eval(const P& problem, const MoreauConfig& cfg, const Vector& x) {
  MoreauEval e{prox_point(problem, cfg, x), Vector(), 0.0, 0.0};
  e.grad = (x - e.prox.y) / cfg.lambda;
  e.envelope = problem.value(e.prox.y) + 0.5 / cfg.lambda * (x - e.prox.y).squaredNorm();
  e.grad_error = e.prox.error_bound / cfg.lambda;
  return e;
}

inline MoreauEval moreau_eval(const ProblemInstance& inst, const MoreauConfig& cfg, const Vector& x) {
  return std::visit([&](const auto& p) { return moreau_eval(p, cfg, x); }, inst);
}

/// Gradient of the Moreau envelope, lambda^{-1}(x - prox(x)).
template <class Inst>
Vector moreau_grad(const Inst& inst, const MoreauConfig& cfg, const Vector& x) {
  return moreau_eval(inst, cfg, x).grad;
}

template <StochasticProblem P>
double value(const P& p, const Vector& x) {
  return p.value(x);
}

/// W = |d - grad|^2/(2 nu) - |grad|^2/(2 nu) + f(x)
inline double lyapunov_W(double f_x, const Vector& d, const Vector& envelope_grad, double nu) {
  if (!(nu > 0.0)) throw DomainError("lyapunov: nu must be positive");
  return ((d - envelope_grad).squaredNorm() - envelope_grad.squaredNorm()) / (2.0 * nu) + f_x;
}

/// V = f_lambda(x) + W + f(x)/(lambda nu)
///     + ((1 - beta)/(2 lambda nu^2) + alpha/(lambda nu)) |d|^2
inline double lyapunov_V(double envelope, double W, double f_x, const Vector& d, double lambda,
                         double nu, double alpha, double beta) {
  if (!(nu > 0.0)) throw DomainError("lyapunov: nu must be positive");
  const double ln = lambda * nu;
  return envelope + W + f_x / ln + ((1.0 - beta) / (2.0 * ln * nu) + alpha / ln) * d.squaredNorm();
}

template <class Inst>
double lyapunov_W(const Inst& inst, const MoreauConfig& cfg, const IterState& state, double nu) {
  const MoreauEval e = moreau_eval(inst, cfg, state.x);
  return lyapunov_W(value(inst, state.x), state.d, e.grad, nu);
}

/// Schedules give alpha_k and beta_k at state.k.
template <class Inst>
double lyapunov_V(const Inst& inst, const MoreauConfig& cfg, const IterState& state,
                  const ScheduleSet& schedules, double nu) {
  const ScheduleValues sv = schedule_values(schedules, state.k);
  if (!sv.beta) throw ConfigError("lyapunov_V: needs a momentum schedule");
  const MoreauEval e = moreau_eval(inst, cfg, state.x);
  const double fx = value(inst, state.x);
  const double W = lyapunov_W(fx, state.d, e.grad, nu);
  return lyapunov_V(e.envelope, W, fx, state.d, cfg.lambda, nu, sv.alpha, *sv.beta);
}

// ---------------------------------------------------------------------------
// Trace
// ---------------------------------------------------------------------------

struct TraceRecord {
  std::uint64_t k = 0;
  std::uint64_t draws = 0;  // oracle samples consumed before x_k was formed
  double fgap = 0.0;
  std::optional<double> dist;
  std::optional<double> dnorm;
  double alpha = 0.0;
  std::optional<double> gamma;
  std::uint64_t batch = 1;
  std::optional<double> W;
  std::optional<double> V;
  std::optional<double> moreau_gradsq;
  double clip_factor = 1.0;
  bool diverged = false;

  bool operator==(const TraceRecord&) const = default;
};

struct Trace {
  std::vector<TraceRecord> records;

  bool diverged() const noexcept { return !records.empty() && records.back().diverged; }
  bool operator==(const Trace&) const = default;
};

/// Smallest q >= 1 with gap at iteration m q <= eps, if any.
inline std::optional<std::uint64_t> epoch_to_eps(const Trace& trace, double eps, std::uint64_t m) {
  if (m == 0) throw DomainError("epoch_to_eps: epoch size must be positive");
  for (const TraceRecord& r : trace.records) {
    if (r.k == 0 || r.k % m != 0) continue;
    if (r.diverged) return std::nullopt;
    if (r.fgap <= eps) return r.k / m;
  }
  return std::nullopt;
}

}  // namespace clipgrad

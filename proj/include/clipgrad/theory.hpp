#pragma once

// Closed-form constants and bounds for clipped SGD and clipped heavy ball,
// plus the BoundReport record that pairs them with empirical traces.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "clipgrad/clip.hpp"
#include "clipgrad/error.hpp"

namespace clipgrad {

// ---------------------------------------------------------------------------
// BoundReport
// ---------------------------------------------------------------------------

enum class Verdict { satisfied, violated, not_applicable };

constexpr std::string_view to_string(Verdict v) noexcept {
  switch (v) {
    case Verdict::satisfied: return "satisfied";
    case Verdict::violated: return "violated";
    case Verdict::not_applicable: return "not_applicable";
  }
  return "unknown";
}

struct SlackStats {
  double min = std::numeric_limits<double>::quiet_NaN();
  double mean = std::numeric_limits<double>::quiet_NaN();
  double max = std::numeric_limits<double>::quiet_NaN();
};

struct BoundReport {
  using Named = std::vector<std::pair<std::string, double>>;

  std::string name;
  Named inputs;   // every constant the theoretical values depend on
  Named derived;  // intermediate constants (C, xi, rho, ...)
  std::vector<std::uint64_t> checkpoints;
  std::vector<double> theory;
  std::vector<double> empirical;
  std::vector<double> std_error;  // empty when the comparison is exact
  std::vector<Verdict> verdicts;
  bool applicable = true;
  std::string note;

  std::size_t count(Verdict v) const noexcept {
    return static_cast<std::size_t>(std::count(verdicts.begin(), verdicts.end(), v));
  }

  /// Fraction of applicable checkpoints that are satisfied; NaN if none apply.
  double satisfied_fraction() const noexcept {
    const std::size_t s = count(Verdict::satisfied);
    const std::size_t total = s + count(Verdict::violated);
    return total == 0 ? std::numeric_limits<double>::quiet_NaN()
                      : static_cast<double>(s) / static_cast<double>(total);
  }

  /// Statistics of theory - empirical over the applicable checkpoints.
  SlackStats slack() const noexcept {
    SlackStats st;
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < verdicts.size() && i < theory.size() && i < empirical.size(); ++i) {
      if (verdicts[i] == Verdict::not_applicable) continue;
      const double s = theory[i] - empirical[i];
      if (n == 0 || s < st.min) st.min = s;
      if (n == 0 || s > st.max) st.max = s;
      sum += s;
      ++n;
    }
    if (n > 0) st.mean = sum / static_cast<double>(n);
    return st;
  }

  std::optional<double> input(const std::string& key) const {
    for (const auto& [k, v] : inputs)
      if (k == key) return v;
    return std::nullopt;
  }
  std::optional<double> derived_value(const std::string& key) const {
    for (const auto& [k, v] : derived)
      if (k == key) return v;
    return std::nullopt;
  }

  bool operator==(const BoundReport&) const = default;
};

// ---------------------------------------------------------------------------
// Super-exponential divergence of plain SGD
// ---------------------------------------------------------------------------

/// Log-domain lower bounds log|x1| + log(k!) for k = 1..K, for SGD on
/// x^4/4 + x^2/2 with alpha_k = alpha1/k started at |x1| >= sqrt(3/alpha1).
inline std::vector<double> example1_lower_bound(double alpha1, double x1, std::uint64_t K) {
  if (!(alpha1 > 0.0)) throw DomainError("example1: alpha1 must be positive");
  const double need = std::sqrt(3.0 / alpha1);
  // Relative slack absorbs rounding in sqrt(3/alpha1) at the boundary.
  if (!(std::abs(x1) >= need * (1.0 - 1e-12)))
    throw PreconditionError("example1: requires |x1| >= sqrt(3/alpha1)");
  std::vector<double> out(K);
  const double base = std::log(std::abs(x1));
  for (std::uint64_t k = 1; k <= K; ++k) out[k - 1] = base + std::lgamma(static_cast<double>(k) + 1.0);
  return out;
}

// ---------------------------------------------------------------------------
// Stability of clipped SGD
// ---------------------------------------------------------------------------

/// C = sigma^2/(2 mu) + gamma^2
inline double prop1_constant(double mu, double sigma, double gamma) {
  if (!(mu > 0.0)) throw DomainError("prop1: mu must be positive");
  if (!(gamma > 0.0)) throw DomainError("prop1: gamma must be positive");
  return sigma * sigma / (2.0 * mu) + gamma * gamma;
}

/// Entry k (k = 0..K) is e0_sq + C sum_{i<k} alpha_i; entry 0 is e0_sq.
inline std::vector<double> prop1_bound(double mu, double sigma, double gamma, double e0_sq,
                                       const StepSchedule& step, std::uint64_t K) {
  if (K < 1) throw DomainError("prop1: K must be >= 1");
  step.validate();
  const double C = prop1_constant(mu, sigma, gamma);
  std::vector<double> out(K + 1);
  double partial = 0.0;  // Kahan-compensated
  double comp = 0.0;
  out[0] = e0_sq;
  for (std::uint64_t k = 1; k <= K; ++k) {
    const double y = step.at(k - 1) - comp;
    const double t = partial + y;
    comp = (t - partial) - y;
    partial = t;
    out[k] = e0_sq + C * partial;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Mini-batch recursion and high-probability bound
// ---------------------------------------------------------------------------

/// (1 - mu alpha E[rho]) e^2 + sigma^2 alpha/(mu m) + alpha^2 gamma^2
inline double thm1_recursion_rhs(double e_k_sq, double mu, double sigma, double gamma,
                                 double alpha_k, double m_k, double e_rho) {
  if (!(e_rho > 0.0 && e_rho <= 1.0)) throw DomainError("thm1: E[rho] must lie in (0, 1]");
  if (!(mu > 0.0)) throw DomainError("thm1: mu must be positive");
  if (!(m_k >= 1.0)) throw DomainError("thm1: batch size must be >= 1");
  return (1.0 - mu * alpha_k * e_rho) * e_k_sq + sigma * sigma * alpha_k / (mu * m_k) +
         alpha_k * alpha_k * gamma * gamma;
}

struct Thm2Inputs {
  double e0_sq;
  double mu;
  double sigma;
  double gamma;
  double g_big;  // G_big evaluated at dist(x0)/delta
  double alpha0;
  double tau;
  double delta;
  std::uint64_t K;
};

struct Thm2Result {
  double varrho;
  double eta;
  bool k_condition;       // mu varrho alpha0 K^{1-tau} >= log(e0^2 K^tau/(eta alpha0))
  double radius;          // 2 eta alpha0/(delta K^tau)
  double probability;     // 1 - 2 delta - delta (sigma^2/mu + gamma^2) alpha0^2/(e0^2 K^{2 tau - 1})
};

namespace detail {
inline void thm2_check(const Thm2Inputs& in) {
  if (!(in.delta > 0.0 && in.delta < 1.0)) throw DomainError("thm2: delta must lie in (0, 1)");
  if (!(in.mu > 0.0) || !(in.gamma > 0.0)) throw DomainError("thm2: mu and gamma must be positive");
  if (!(in.e0_sq > 0.0)) throw DomainError("thm2: e0^2 must be positive");
  if (!(in.g_big >= 0.0)) throw DomainError("thm2: G_big must be non-negative");
  if (!(in.alpha0 > 0.0)) throw DomainError("thm2: alpha0 must be positive");
}
inline double thm2_varrho(const Thm2Inputs& in) { return in.gamma / (in.gamma + std::sqrt(in.g_big)); }
inline double thm2_eta(const Thm2Inputs& in, double varrho) {
  return (in.sigma * in.sigma / in.mu + in.gamma * in.gamma) / (in.mu * varrho);
}
inline double thm2_margin(const Thm2Inputs& in, double varrho, double eta, double K) {
  return in.mu * varrho * in.alpha0 * std::pow(K, 1.0 - in.tau) -
         std::log(in.e0_sq * std::pow(K, in.tau) / (eta * in.alpha0));
}
}  // namespace detail

inline Thm2Result thm2_bounds(const Thm2Inputs& in) {
  detail::thm2_check(in);
  Thm2Result r{};
  r.varrho = detail::thm2_varrho(in);
  if (in.alpha0 > 1.0 / (in.mu * r.varrho))
    throw PreconditionError("thm2: requires alpha0 <= 1/(mu varrho)");
  r.eta = detail::thm2_eta(in, r.varrho);
  const double K = static_cast<double>(in.K);
  r.k_condition = detail::thm2_margin(in, r.varrho, r.eta, K) >= 0.0;
  r.radius = 2.0 * r.eta * in.alpha0 / (in.delta * std::pow(K, in.tau));
  const double noise = in.sigma * in.sigma / in.mu + in.gamma * in.gamma;
  r.probability = 1.0 - 2.0 * in.delta -
                  in.delta * noise * in.alpha0 * in.alpha0 /
                      (in.e0_sq * std::pow(K, 2.0 * in.tau - 1.0));
  return r;
}

/// Smallest K in [1, K_max] satisfying the iteration-count condition, if any.
/// The margin decreases in K up to K_turn = (tau/(mu varrho alpha0 (1-tau)))^{1/(1-tau)}
/// and increases afterwards, so the answer is 1 or found by bisection past K_turn.
inline std::optional<std::uint64_t> thm2_min_K(Thm2Inputs in, std::uint64_t K_max) {
  detail::thm2_check(in);
  if (!(in.tau >= 0.0 && in.tau < 1.0)) throw DomainError("thm2: tau must lie in [0, 1)");
  const double varrho = detail::thm2_varrho(in);
  const double eta = detail::thm2_eta(in, varrho);
  auto ok = [&](std::uint64_t K) {
    return detail::thm2_margin(in, varrho, eta, static_cast<double>(K)) >= 0.0;
  };
  if (K_max < 1) return std::nullopt;
  if (ok(1)) return 1;
  const double turn = std::pow(in.tau / (in.mu * varrho * in.alpha0 * (1.0 - in.tau)),
                               1.0 / (1.0 - in.tau));
  std::uint64_t lo = std::max<std::uint64_t>(
      1, turn >= static_cast<double>(K_max) ? K_max : static_cast<std::uint64_t>(turn));
  if (ok(lo)) {
    // Only possible when lo sits just past the real-valued turning point.
    while (lo > 1 && ok(lo - 1)) --lo;
    return lo;
  }
  if (!ok(K_max)) return std::nullopt;
  std::uint64_t hi = K_max;  // invariant: !ok(lo), ok(hi)
  while (hi - lo > 1) {
    const std::uint64_t mid = lo + (hi - lo) / 2;
    (ok(mid) ? hi : lo) = mid;
  }
  return hi;
}

// ---------------------------------------------------------------------------
// Polynomial growth: moment constants and the rate of clipped SGD
// ---------------------------------------------------------------------------

/// P0(q) = 2^{q/2} dist0^q
inline double lemma1_P0(double q, double dist0) {
  return std::pow(2.0, q / 2.0) * std::pow(dist0, q);
}

/// P1(q) = ((2 gamma)^q + mu^{-q/2} sigma^{q/4+1}) (2 alpha0/(1 - tau))^{q/2}
inline double lemma1_P1(double q, double gamma, double mu, double sigma, double alpha0, double tau) {
  if (!(tau < 1.0)) throw DomainError("lemma1: P1 needs tau < 1");
  if (!(mu > 0.0)) throw DomainError("lemma1: mu must be positive");
  return (std::pow(2.0 * gamma, q) + std::pow(mu, -q / 2.0) * std::pow(sigma, q / 4.0 + 1.0)) *
         std::pow(2.0 * alpha0 / (1.0 - tau), q / 2.0);
}

struct Lemma1Inputs {
  double dist0;
  double gamma;
  double mu;
  double sigma;
  double alpha0;
  double tau;
  double p;
  double L0;
  double L1;
};

struct Lemma1Constants {
  double P0_2;  // P0(2(p-1))
  double P0_4;  // P0(4(p-1))
  double P1_2;
  double P1_4;
  double G0, G1, D0, D1;
};

inline Lemma1Constants lemma1_constants(const Lemma1Inputs& in) {
  if (!(in.tau > 0.5 && in.tau < 1.0)) throw DomainError("lemma1: tau must lie in (1/2, 1)");
  if (!(in.p >= 2.0)) throw DomainError("lemma1: p must be >= 2");
  if (!(in.mu > 0.0)) throw DomainError("lemma1: mu must be positive");
  const double q2 = 2.0 * (in.p - 1.0);
  const double q4 = 4.0 * (in.p - 1.0);
  Lemma1Constants c{};
  c.P0_2 = lemma1_P0(q2, in.dist0);
  c.P0_4 = lemma1_P0(q4, in.dist0);
  c.P1_2 = lemma1_P1(q2, in.gamma, in.mu, in.sigma, in.alpha0, in.tau);
  c.P1_4 = lemma1_P1(q4, in.gamma, in.mu, in.sigma, in.alpha0, in.tau);
  c.G0 = in.L0 + in.L1 * c.P0_2;
  c.G1 = in.L1 * c.P1_2;
  c.D0 = c.P0_4;
  c.D1 = c.P1_4;
  return c;
}

struct Thm3Result {
  double C;
  Lemma1Constants lemma;
  double recursion_exponent;  // 2(1 - p(1 - tau))
  double envelope_exponent;   // 1 + (1 - tau)(1 - 2p)
  bool applicable;            // recursion_exponent > tau and envelope_exponent > 0
  std::vector<double> recursion;  // entry k: bound on E dist(x_k)^2, iterated from dist0^2
  std::vector<double> envelope;   // entry k (k >= 1): C/(mu alpha0) k^{-envelope_exponent}; entry 0 = inf
};

/// C = (2 gamma^2/mu)(L0^2 + L1^2 (D0 + D1)) + G0 + G1
inline double thm3_constant(const Lemma1Inputs& in, const Lemma1Constants& c) {
  return (2.0 * in.gamma * in.gamma / in.mu) * (in.L0 * in.L0 + in.L1 * in.L1 * (c.D0 + c.D1)) +
         c.G0 + c.G1;
}

/// (1 - mu alpha0/(k+1)^tau) prev + C/(k+1)^{2(1 - p(1 - tau))}
inline double thm3_recursion_rhs(double prev, double mu, double alpha0, double tau, double p,
                                 double C, std::uint64_t k) {
  const double kp1 = static_cast<double>(k) + 1.0;
  return (1.0 - mu * alpha0 / std::pow(kp1, tau)) * prev +
         C / std::pow(kp1, 2.0 * (1.0 - p * (1.0 - tau)));
}

inline Thm3Result thm3_bound(const Lemma1Inputs& in, std::uint64_t K) {
  Thm3Result r{};
  r.lemma = lemma1_constants(in);
  r.C = thm3_constant(in, r.lemma);
  r.recursion_exponent = 2.0 * (1.0 - in.p * (1.0 - in.tau));
  r.envelope_exponent = 1.0 + (1.0 - in.tau) * (1.0 - 2.0 * in.p);
  r.applicable = r.recursion_exponent > in.tau && r.envelope_exponent > 0.0;
  r.recursion.resize(K + 1);
  r.envelope.resize(K + 1);
  r.recursion[0] = in.dist0 * in.dist0;
  r.envelope[0] = std::numeric_limits<double>::infinity();
  for (std::uint64_t k = 0; k < K; ++k)
    r.recursion[k + 1] = thm3_recursion_rhs(r.recursion[k], in.mu, in.alpha0, in.tau, in.p, r.C, k);
  const double scale = r.C / (in.mu * in.alpha0);
  for (std::uint64_t k = 1; k <= K; ++k)
    r.envelope[k] = scale * std::pow(static_cast<double>(k), -r.envelope_exponent);
  return r;
}

// ---------------------------------------------------------------------------
// Weakly convex problems: clipped heavy ball
// ---------------------------------------------------------------------------

struct Thm5Inputs {
  double rho;
  double Delta;
  double gamma;
  double L;
  double nu;
  double lambda;
  double alpha0;
  std::uint64_t K;
};

struct Thm5Result {
  double xi;        // 2 + 1/(lambda nu)
  double C;         // lambda^{-1} gamma^2 (1 + rho/(2 nu)) + nu L^2 (1 + 1/(2 lambda nu (1 - beta0)))
  double beta0;     // nu alpha
  double general;   // 2 (xi Delta + 2 L^2/nu + C sum alpha_i^2)/sum alpha_i
  std::optional<double> simplified;  // 8 (rho Delta + gamma^2)/sqrt(K), for K >= 2
  std::vector<double> kstar_weights;  // Pr(k* = k + 1), k = 0..K-1
};

/// Constant step alpha = alpha0/sqrt(K) and momentum beta = nu alpha.
inline Thm5Result thm5_bound(const Thm5Inputs& in) {
  if (!(in.rho >= 0.0) || !(in.lambda > 0.0) || !(in.nu > 0.0) || !(in.alpha0 > 0.0))
    throw DomainError("thm5: rho >= 0 and lambda, nu, alpha0 > 0 required");
  if (in.K < 1) throw DomainError("thm5: K must be >= 1");
  if (!(in.L >= 0.0) || !(in.Delta >= 0.0)) throw DomainError("thm5: L and Delta must be >= 0");
  if (in.gamma < 2.0 * in.L) throw PreconditionError("thm5: requires gamma >= 2L");
  // lambda = 1/(2 rho) is the standard choice; allow its rounding.
  if (1.0 / in.lambda < 2.0 * in.rho * (1.0 - 1e-12)) throw PreconditionError("thm5: requires 1/lambda >= 2 rho");
  const double K = static_cast<double>(in.K);
  const double alpha = in.alpha0 / std::sqrt(K);
  Thm5Result r{};
  r.beta0 = in.nu * alpha;
  if (!(r.beta0 > 0.0 && r.beta0 < 1.0)) throw PreconditionError("thm5: requires nu alpha in (0, 1)");
  const double lnu = in.lambda * in.nu;
  r.xi = 2.0 + 1.0 / lnu;
  r.C = in.gamma * in.gamma / in.lambda * (1.0 + in.rho / (2.0 * in.nu)) +
        in.nu * in.L * in.L * (1.0 + 1.0 / (2.0 * lnu * (1.0 - r.beta0)));
  const double sum_a = K * alpha;
  const double sum_a2 = K * alpha * alpha;
  r.general = 2.0 * (r.xi * in.Delta + 2.0 * in.L * in.L / in.nu + r.C * sum_a2) / sum_a;
  if (in.K >= 2) r.simplified = 8.0 * (in.rho * in.Delta + in.gamma * in.gamma) / std::sqrt(K);
  r.kstar_weights.assign(in.K, 1.0 / K);
  return r;
}

/// Pr(k* = k + 1) = alpha_k / sum_i alpha_i for a general step schedule.
inline std::vector<double> kstar_weights(const StepSchedule& step, std::uint64_t K) {
  std::vector<double> w(K);
  double s = 0.0;
  for (std::uint64_t k = 0; k < K; ++k) s += (w[k] = step.at(k));
  for (double& v : w) v /= s;
  return w;
}

}  // namespace clipgrad

// Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fails.
// A criterion also fails when it exceeds its runtime budget.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include "clipgrad/clipgrad.hpp"

using namespace clipgrad;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a) {
  char buf[128];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

struct Criterion {
  std::string id;
  std::string name;
  double budget_s;
  std::function<Outcome()> run;
};

ExperimentConfig noisy_quartic(double alpha0, double tau, ClipSchedule clip) {
  ExperimentConfig c;
  c.problem = QuarticSpec{1.0, 1.0};
  c.algorithm = Algorithm::clipped_sgd;
  c.schedules = {StepSchedule::polynomial(alpha0, tau), clip, std::nullopt, BatchSchedule::unit()};
  c.max_epochs = 1u << 30;
  c.seed = 20240601;
  return c;
}

// ---------------------------------------------------------------------------

Outcome ac1() {
  ExperimentConfig c;
  c.problem = QuarticSpec{1.0, 0.0};
  c.algorithm = Algorithm::sgd;
  c.schedules = {StepSchedule::polynomial(0.03, 1.0), std::nullopt, std::nullopt, BatchSchedule::unit()};
  c.x0 = std::vector<double>{10.0};
  c.trials = 1;
  c.max_iterations = 50;
  const BoundReport r = verify_example1(c);
  if (!r.applicable) return {false, "not applicable: " + r.note};
  const bool diverged = r.derived_value("diverged") == 1.0;
  const double at = r.derived_value("diverged_at").value_or(kNaN);
  Outcome o;
  o.pass = diverged && at <= 50 && r.count(Verdict::violated) == 0 && r.count(Verdict::satisfied) > 0;
  o.detail = "recorded=" + std::to_string(r.checkpoints.size()) +
             " violations=" + std::to_string(r.count(Verdict::violated)) +
             (diverged ? " diverged_at=" + std::to_string(static_cast<int>(at)) : " not diverged");
  return o;
}

Outcome ac2() {
  ExperimentConfig c = noisy_quartic(1.0, 0.75, ClipSchedule::coupled(1.0));
  c.trials = 10000;
  c.max_iterations = 1000;
  VerifyOptions opt;
  opt.stride = 10;
  const BoundReport r = verify_prop1(c, opt);
  if (!r.applicable) return {false, "not applicable: " + r.note};
  const SlackStats s = r.slack();
  return {r.count(Verdict::violated) == 0 && r.checkpoints.size() == 101,
          "checkpoints=" + std::to_string(r.checkpoints.size()) +
              " violations=" + std::to_string(r.count(Verdict::violated)) + fmt(" min_slack=%.4g", s.min)};
}

Outcome ac3() {
  ExperimentConfig c = noisy_quartic(1.0, 0.75, ClipSchedule::constant(1.0));
  c.schedules.batch = BatchSchedule::inverse_step();
  c.trials = 10000;
  c.max_iterations = 1000;
  VerifyOptions opt;
  opt.stride = 10;
  opt.thm1_plugin = Thm1Plugin::trial_means;
  const BoundReport r = verify_thm1(c, opt);
  if (!r.applicable) return {false, "not applicable: " + r.note};
  const double frac = r.satisfied_fraction();
  return {frac >= 0.95, "checkpoints=" + std::to_string(r.checkpoints.size()) + fmt(" satisfied=%.3f", frac)};
}

Outcome ac4() {
  ExperimentConfig c = noisy_quartic(1.0, 0.9, ClipSchedule::coupled(1.0));
  c.trials = 1000;
  c.max_iterations = 100000;
  VerifyOptions opt;
  opt.stride = 100;
  opt.burn_in_fraction = 0.1;
  const Thm3Reports r = verify_thm3(c, opt);
  if (!r.rate.applicable || !r.recursion.applicable) return {false, "not applicable: " + r.rate.note};
  const double slope = r.rate.empirical[0], threshold = r.rate.theory[0];
  const double frac = r.recursion.satisfied_fraction();
  return {r.rate.verdicts[0] == Verdict::satisfied && frac >= 0.95,
          fmt("slope=%.4f", slope) + fmt(" threshold=%.2f", threshold) + fmt(" recursion_satisfied=%.3f", frac) +
              fmt(" C_mean=%.3g", r.recursion.derived_value("C_mean").value_or(kNaN))};
}

Outcome ac5() {
  ExperimentConfig base;
  base.problem = PhaseRetrievalSpec{100, 10, 10.0, 0.0, 25.0};
  base.trials = 200;
  base.seed = 7;
  base.shared_data = true;
  base.moreau = MoreauSpec{std::nullopt, 1e-3, 2000};
  const ProblemInstance inst = make_instance(base, 0);
  const double radius = default_region_radius(base, inst);
  VerifyOptions opt;
  opt.region_radius = radius;
  opt.kstar_draws = 200;
  Outcome o{true, fmt("R=%.3g", radius)};
  for (std::uint64_t K : {100u, 1000u}) {
    const ExperimentConfig c = thm5_config(base, K, radius);
    const BoundReport r = verify_thm5(c, opt);
    const bool ok = r.applicable && r.verdicts.size() == 1 && r.verdicts[0] == Verdict::satisfied;
    o.pass = o.pass && ok;
    o.detail += " | K=" + std::to_string(K);
    if (!r.applicable) {
      o.detail += " not applicable: " + r.note;
      continue;
    }
    o.detail += fmt(" estimate=%.4g", r.empirical[0]) + fmt(" bound=%.4g", r.theory[0]) +
                fmt(" max_norm=%.3g", r.derived_value("max_iterate_norm").value_or(kNaN)) +
                fmt(" unconverged_prox=%.0f", r.derived_value("unconverged_prox").value_or(kNaN));
  }
  return o;
}

ExperimentConfig desk(ProblemSpec p, Algorithm alg, double alpha0) {
  ExperimentConfig c;
  c.problem = p;
  c.algorithm = alg;
  c.schedules = {StepSchedule::polynomial(alpha0, 0.5),
                 is_clipped(alg) ? std::optional(ClipSchedule::constant(10.0)) : std::nullopt,
                 is_momentum(alg) ? std::optional(MomentumSchedule::constant(0.1)) : std::nullopt,
                 BatchSchedule::unit()};
  c.trials = 10;
  c.max_epochs = 100;
  c.seed = 42;
  c.shared_data = true;
  return c;
}

constexpr Algorithm kAll[] = {Algorithm::sgd, Algorithm::shb, Algorithm::clipped_sgd, Algorithm::clipped_shb};

Outcome ac6() {
  const PhaseRetrievalSpec spec{200, 20, 10.0, 0.1, 25.0};
  Outcome o{true, ""};
  for (Algorithm alg : kAll) {
    ExperimentConfig c = desk(spec, alg, 1.0);
    c.eps = {0.25};
    const AggregateResult a = run_trials(c);
    const double med = a.eps[0].epochs.median;
    const bool ok = is_clipped(alg) ? a.divergence_count == 0 && std::isfinite(med) : a.divergence_count >= 1;
    o.pass = o.pass && ok;
    o.detail += std::string(to_string(alg)) + ": div=" + std::to_string(a.divergence_count) +
                fmt(" median_epochs=%g", med) + (alg == Algorithm::clipped_shb ? "" : " | ");
  }
  return o;
}

Outcome ac7() {
  const AbsRegressionSpec spec{200, 20, 10.0, 0.01};
  double med[4];
  for (int i = 0; i < 4; ++i) med[i] = run_trials(desk(spec, kAll[i], 5.0)).final_gap.median;
  // 1.5x for positive gaps; the same absolute margin if a gap were negative.
  auto fine = [](double clipped, double plain) { return clipped <= plain + 0.5 * std::abs(plain); };
  return {fine(med[2], med[0]) && fine(med[3], med[1]),
          fmt("sgd=%.4g", med[0]) + fmt(" shb=%.4g", med[1]) + fmt(" clipped_sgd=%.4g", med[2]) +
              fmt(" clipped_shb=%.4g", med[3])};
}

// Multilevel grid search for argmin_y y^4/4 + eps y^2/2 + (y - x)^2/(2 lambda),
// refined to a 1e-7 spacing.
double grid_prox(double eps, double lambda, double x) {
  auto F = [&](double y) { return y * y * y * y / 4 + eps * y * y / 2 + (y - x) * (y - x) / (2 * lambda); };
  const double lo = -std::abs(x) - 1, hi = std::abs(x) + 1;
  double h = 1e-2, best = lo;
  for (double y = lo; y <= hi; y += h)
    if (F(y) < F(best)) best = y;
  while (h > 1e-7) {
    const double a = best - h, b = best + h;
    h /= 100.0;
    for (double y = a; y <= b; y += h)
      if (F(y) < F(best)) best = y;
  }
  return best;
}

Outcome ac8() {
  const QuarticProblem q(QuarticSpec{1.0, 0.0});
  rng::Stream s(8);
  const double tol = 1e-6;
  double worst = 0.0;
  int bad_prox = 0;
  for (int t = 0; t < 100; ++t) {
    const double x = -3.0 + 6.0 * s.uniform();
    const double lambda = std::pow(10.0, -2.0 + 2.0 * s.uniform());
    const ProxResult r = prox_point(q, MoreauConfig(lambda, 0.0, tol), Vector::Constant(1, x));
    const double err = std::abs(r.y[0] - grid_prox(1.0, lambda, x));
    worst = std::max(worst, err);
    if (!r.converged || err > tol + 1e-6) ++bad_prox;
  }
  int bad_smooth = 0;
  double worst_ratio = 0.0;
  for (int t = 0; t < 1000; ++t) {
    const double x = -3.0 + 6.0 * s.uniform();
    const double y = x + (s.uniform() - 0.5) * std::pow(10.0, -3.0 + 3.0 * s.uniform());
    const double lambda = std::pow(10.0, -2.0 + 2.0 * s.uniform());
    const MoreauConfig mc(lambda, 0.0, tol);
    const double gx = moreau_grad(q, mc, Vector::Constant(1, x))[0];
    const double gy = moreau_grad(q, mc, Vector::Constant(1, y))[0];
    const double lhs = std::abs(gx - gy), rhs = std::abs(x - y) / lambda + 2 * tol / lambda;
    worst_ratio = std::max(worst_ratio, lhs / rhs);
    if (lhs > rhs) ++bad_smooth;
  }
  return {bad_prox == 0 && bad_smooth == 0, "prox_failures=" + std::to_string(bad_prox) + fmt(" max_err=%.2e", worst) +
                                                " smooth_failures=" + std::to_string(bad_smooth) +
                                                fmt(" max_ratio=%.4f", worst_ratio)};
}

// ---------------------------------------------------------------------------
// Criterion 9: clip properties, determinism, dual-path calculators.

bool close(double a, double b, double rel) {
  return std::abs(a - b) <= rel * std::max({std::abs(a), std::abs(b), 1e-300});
}

int clip_failures() {
  rng::Stream s(99);
  const double tol = 1e-12;
  int bad = 0;
  for (int t = 0; t < 100000; ++t) {
    const auto n = static_cast<Eigen::Index>(1 + s.index(8));
    const Vector g = gaussian_vector(n, s) * std::pow(10.0, -3.0 + 6.0 * s.uniform());
    const Vector h = gaussian_vector(n, s) * std::pow(10.0, -3.0 + 6.0 * s.uniform());
    const double gamma = std::pow(10.0, -2.0 + 4.0 * s.uniform());
    const Vector cg = clip_vec(g, gamma), ch = clip_vec(h, gamma);
    const double c = cg.dot(g) / g.squaredNorm();
    const bool ok = cg.norm() <= gamma * (1 + tol) && c > 0 && (cg - c * g).norm() <= tol * (1 + g.norm()) &&
                    (clip_vec(cg, gamma) - cg).norm() <= tol * gamma &&
                    (cg - ch).norm() <= (g - h).norm() * (1 + tol) + tol * gamma;
    bad += !ok;
  }
  return bad;
}

bool deterministic() {
  ExperimentConfig c;
  c.problem = PhaseRetrievalSpec{60, 6, 10.0, 0.1, 25.0};
  c.algorithm = Algorithm::clipped_shb;
  c.schedules = {StepSchedule::polynomial(0.1, 0.5), ClipSchedule::constant(10.0), MomentumSchedule::constant(0.1),
                 BatchSchedule::unit()};
  c.trials = 4;
  c.max_epochs = 30;
  c.eps = {0.25};
  c.moreau = MoreauSpec{std::nullopt, 1e-5, 20000};
  c.diagnostic_stride = 50;
  bool same = true;
  for (std::uint64_t t = 0; t < c.trials; ++t) same = same && run_trajectory(c, t) == run_trajectory(c, t);
  c.threads = 1;
  const AggregateResult a = run_trials(c);
  c.threads = 3;
  return same && run_trials(c) == a && run_trials(c) == a;
}

// Independent second implementations, written from the formulas.
int dual_path_failures() {
  rng::Stream s(2718);
  auto uni = [&](double lo, double hi) { return lo + (hi - lo) * s.uniform(); };
  auto logu = [&](double lo, double hi) { return std::exp(uni(std::log(lo), std::log(hi))); };
  int bad = 0;
  auto expect = [&](bool ok) { bad += !ok; };
  for (int t = 0; t < 1000; ++t) {
    const double a1 = logu(1e-3, 1.0), x1 = std::sqrt(3 / a1) * uni(1, 5);
    const auto K1 = 1 + s.index(60);
    double lf = std::log(x1);
    for (std::uint64_t i = 2; i <= K1; ++i) lf += std::log(double(i));
    expect(close(example1_lower_bound(a1, x1, K1).back(), lf, 1e-12));

    const double mu = logu(0.01, 10), sigma = uni(0, 5), gamma = logu(0.01, 10);
    const double e0 = uni(0, 10), a0 = logu(1e-3, 2), tau = uni(0, 1);
    const auto K2 = 1 + s.index(300);
    double sum = 0;
    for (std::uint64_t i = 0; i < K2; ++i) sum += a0 / std::pow(i + 1.0, tau);
    expect(close(prop1_bound(mu, sigma, gamma, e0, StepSchedule::polynomial(a0, tau), K2).back(),
                 e0 + (sigma * sigma / (2 * mu) + gamma * gamma) * sum, 1e-12));

    const double ek = uni(0, 10), ak = logu(1e-4, 1), mk = 1.0 + double(s.index(100)), er = uni(1e-3, 1);
    expect(close(thm1_recursion_rhs(ek, mu, sigma, gamma, ak, mk, er),
                 ek - mu * ak * er * ek + ak * sigma * sigma / (mu * mk) + ak * ak * gamma * gamma, 1e-10));

    const double gbig = logu(1e-3, 1e4), delta = uni(0.01, 0.99), e0sq = logu(1e-2, 1e2), tau2 = uni(0.51, 0.99);
    const double vr = gamma / (gamma + std::sqrt(gbig));
    const double a2 = uni(0.01, 1.0) / (mu * vr);
    const auto K3 = 1 + s.index(100000);
    const Thm2Result t2 = thm2_bounds({e0sq, mu, sigma, gamma, gbig, a2, tau2, delta, K3});
    const double eta = (sigma * sigma / mu + gamma * gamma) / (mu * vr);
    expect(close(t2.varrho, vr, 1e-12) && close(t2.eta, eta, 1e-10) &&
           close(t2.radius, 2 * eta * a2 / (delta * std::pow(double(K3), tau2)), 1e-10));

    const double d0 = uni(0, 3), p = uni(2, 5), L0 = logu(0.1, 10), L1 = logu(0.1, 10), tau3 = uni(0.51, 0.99);
    auto P0 = [&](double q) { return std::pow(std::sqrt(2.0) * d0, q); };
    auto P1 = [&](double q) {
      return (std::pow(2 * gamma, q) + std::pow(sigma, 1 + q / 4) / std::pow(std::sqrt(mu), q)) *
             std::pow(std::sqrt(2 * a0 / (1 - tau3)), q);
    };
    const double qa = 2 * p - 2, qb = 4 * p - 4;
    const double G = L0 + L1 * P0(qa) + L1 * P1(qa), D = P0(qb) + P1(qb);
    const double C3 = 2 * gamma * gamma * (L0 * L0 + L1 * L1 * D) / mu + G;
    expect(close(thm3_bound({d0, gamma, mu, sigma, a0, tau3, p, L0, L1}, 1).C, C3, 1e-10));

    const double rho = logu(0.01, 10), L = logu(0.1, 10), Delta = logu(0.01, 100);
    const double lambda = uni(0.05, 1.0) / (2 * rho);
    const auto K5 = 2 + s.index(2000);
    const double nu = uni(0.01, 0.99) * std::sqrt(double(K5)), g5 = 2 * L * uni(1, 3);
    const double al = 1 / std::sqrt(double(K5)), b0 = nu * al;
    const double C5 = g5 * g5 * (1 + rho / (2 * nu)) / lambda + nu * L * L * (1 + 1 / (2 * lambda * nu * (1 - b0)));
    const double gen = 2 * ((2 + 1 / (lambda * nu)) * Delta + 2 * L * L / nu + C5 * K5 * al * al) / (K5 * al);
    const Thm5Result t5 = thm5_bound({rho, Delta, g5, L, nu, lambda, 1.0, K5});
    expect(close(t5.general, gen, 1e-10) && close(*t5.simplified, 8 * (rho * Delta + g5 * g5) / std::sqrt(double(K5)), 1e-12));

    const auto w = kstar_weights(StepSchedule::polynomial(a0, tau), 50);
    double z = 0;
    for (int i = 1; i <= 50; ++i) z += std::pow(double(i), -tau);
    expect(close(w[9], std::pow(10.0, -tau) / z, 1e-12));
  }
  return bad;
}

Outcome ac9() {
  const int clip_bad = clip_failures();
  const bool det = deterministic();
  const int dual_bad = dual_path_failures();
  return {clip_bad == 0 && det && dual_bad == 0, "clip_failures=" + std::to_string(clip_bad) +
                                                     " deterministic=" + (det ? "yes" : "no") +
                                                     " dual_path_failures=" + std::to_string(dual_bad)};
}

}  // namespace

int main() {
  const std::vector<Criterion> criteria{
      {"AC1", "example1-divergence", 1, ac1},
      {"AC2", "prop1-stability", 120, ac2},
      {"AC3", "thm1-recursion", 300, ac3},
      {"AC4", "thm3-rate", 900, ac4},
      {"AC5", "thm5-complexity", 1800, ac5},
      {"AC6", "phase-retrieval-stability", 600, ac6},
      {"AC7", "abs-regression-parity", 300, ac7},
      {"AC8", "moreau-oracle", 60, ac8},
      {"AC9", "properties", 60, ac9},
  };
  int failed = 0;
  for (const Criterion& c : criteria) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const bool in_time = secs < c.budget_s;
    const bool pass = o.pass && in_time;
    failed += !pass;
    std::printf("%s %s %s time=%.2fs budget=%.0fs%s | %s\n", pass ? "PASS" : "FAIL", c.id.c_str(), c.name.c_str(),
                secs, c.budget_s, in_time ? "" : " (over budget)", o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}

#pragma once

// Seeded trajectory simulation, multi-trial aggregation and stepsize sweeps.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <limits>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "clipgrad/clip.hpp"
#include "clipgrad/harness/config.hpp"
#include "clipgrad/metrics.hpp"
#include "clipgrad/problems.hpp"
#include "clipgrad/rng.hpp"

namespace clipgrad {

inline constexpr double kInf = std::numeric_limits<double>::infinity();
inline constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// ---------------------------------------------------------------------------
// Streams and instances
// ---------------------------------------------------------------------------

inline rng::Stream data_stream(const ExperimentConfig& cfg, std::uint64_t trial) {
  const rng::Stream base = rng::Stream(cfg.seed).split(rng::tags::data);
  return cfg.shared_data ? base : base.split(trial);
}

inline rng::Stream trial_stream(const ExperimentConfig& cfg, std::uint64_t trial) {
  return rng::Stream(cfg.seed).split(rng::tags::trial).split(trial);
}

inline ProblemInstance make_instance(const ProblemSpec& spec, rng::Stream s) {
  return std::visit(
      [&](const auto& sp) -> ProblemInstance {
        using S = std::decay_t<decltype(sp)>;
        if constexpr (std::is_same_v<S, QuarticSpec>) return QuarticProblem(sp);
        else if constexpr (std::is_same_v<S, PhaseRetrievalSpec>) return gen_phase_retrieval(sp, s);
        else return gen_abs_regression(sp, s);
      },
      spec);
}

inline ProblemInstance make_instance(const ExperimentConfig& cfg, std::uint64_t trial) {
  return make_instance(cfg.problem, data_stream(cfg, trial));
}

inline Vector initial_point(const ExperimentConfig& cfg, Eigen::Index n, std::uint64_t trial) {
  if (cfg.x0) {
    if (static_cast<Eigen::Index>(cfg.x0->size()) != n) throw ConfigError("config: x0 has wrong dimension");
    return Eigen::Map<const Vector>(cfg.x0->data(), n);
  }
  rng::Stream s = trial_stream(cfg, trial).split(rng::tags::init);
  return gaussian_vector(n, s);
}

inline rng::Stream sampling_stream(const ExperimentConfig& cfg, std::uint64_t trial) {
  return trial_stream(cfg, trial).split(rng::tags::sample);
}

// ---------------------------------------------------------------------------
// Simulation core
// ---------------------------------------------------------------------------

/// What an observer sees at iteration k, before x_{k+1} is formed.
struct StepView {
  std::uint64_t k;
  std::uint64_t draws;       // oracle samples consumed before this iteration
  const Vector& x;
  const Vector* d;           // direction d_k; null on terminal records
  const Vector* g;           // stochastic subgradient g_k; null on terminal records
  double alpha;
  std::optional<double> gamma;
  std::optional<double> beta;
  std::uint64_t batch;
  double clip_factor;
  bool diverged;
  bool terminal;
};

struct RunLimits {
  std::optional<std::uint64_t> max_iterations;
  std::optional<std::uint64_t> max_draws;
};

inline RunLimits limits_of(const ExperimentConfig& cfg, std::uint64_t sample_count) {
  return {cfg.max_iterations, cfg.max_epochs * sample_count};
}

struct RunSummary {
  std::uint64_t iterations = 0;
  std::uint64_t draws = 0;
  bool diverged = false;
  Vector x_final;
};

/// Runs (clipped) SGD or SHB from x0 until a limit or divergence. The observer
/// is called once per iteration and once for the terminal state; nothing is
/// observed after a diverged record.
template <StochasticProblem P, class Observer>
RunSummary simulate(const P& problem, Algorithm algorithm, const ScheduleSet& schedules,
                    const RunLimits& limits, Vector x, rng::Stream sample, Observer&& observe) {
  if (!limits.max_iterations && !limits.max_draws) throw ConfigError("simulate: no stopping rule");
  if (x.size() != problem.dim()) throw DomainError("simulate: x0 dimension mismatch");
  const bool clipped = is_clipped(algorithm);
  const bool momentum = is_momentum(algorithm);
  if (momentum && !schedules.momentum) throw ConfigError("config: heavy ball needs a momentum schedule");
  if (clipped && !schedules.clip) throw ConfigError("config: clipped algorithm needs a clip schedule");

  const Eigen::Index n = problem.dim();
  Vector g(n), d = Vector::Zero(n);
  std::uint64_t k = 0, draws = 0;
  double beta_prev = 1.0;
  RunSummary out;

  auto terminal = [&](bool diverged) {
    const ScheduleValues sv = schedule_values(schedules, k);
    observe(StepView{k, draws, x, nullptr, nullptr, sv.alpha, clipped ? sv.gamma : std::nullopt,
                     momentum ? sv.beta : std::nullopt, sv.batch, 1.0, diverged, true});
    out.iterations = k;
    out.draws = draws;
    out.diverged = diverged;
    out.x_final = x;
  };

  for (;;) {
    if (is_diverged(x)) {
      terminal(true);
      return out;
    }
    if ((limits.max_iterations && k >= *limits.max_iterations) ||
        (limits.max_draws && draws >= *limits.max_draws)) {
      terminal(false);
      return out;
    }
    const ScheduleValues sv = schedule_values(schedules, k);
    const std::optional<double> gamma = clipped ? sv.gamma : std::nullopt;
    const bool ok = stochastic_subgrad(problem, x, sv.batch, sample, g);
    if (!ok) {
      terminal(true);
      return out;
    }
    const std::uint64_t draws_before = draws;
    draws += sv.batch;

    if (!momentum || k == 0) {
      d = g;
    } else {
      d *= 1.0 - beta_prev;
      d.noalias() += beta_prev * g;
    }
    if (!d.allFinite()) {
      terminal(true);
      return out;
    }
    const double factor = gamma ? clip_in_place(d, *gamma) : 1.0;

    observe(StepView{k, draws_before, x, &d, &g, sv.alpha, gamma, momentum ? sv.beta : std::nullopt,
                     sv.batch, factor, false, false});

    x.noalias() -= sv.alpha * d;
    if (momentum) {
      beta_prev = *sv.beta;
      if (!(beta_prev > 0.0 && beta_prev <= 1.0)) throw DomainError("shb: beta must lie in (0, 1]");
    }
    ++k;
  }
}

template <class Observer>
RunSummary simulate(const ProblemInstance& inst, Algorithm algorithm, const ScheduleSet& schedules,
                    const RunLimits& limits, Vector x, rng::Stream sample, Observer&& observe) {
  return std::visit(
      [&](const auto& p) {
        return simulate(p, algorithm, schedules, limits, std::move(x), sample, observe);
      },
      inst);
}

// ---------------------------------------------------------------------------
// Trajectories
// ---------------------------------------------------------------------------

/// f(x) - f*, or f(x) when the optimum is unknown; +inf on divergence.
template <StochasticProblem P>
double function_gap(const P& p, const Vector& x) {
  if (!x.allFinite()) return kInf;
  const double v = p.value(x);
  if (!std::isfinite(v)) return kInf;
  return p.has_optimum() ? v - p.f_star() : v;
}

template <StochasticProblem P>
std::optional<double> optimum_distance(const P& p, const Vector& x) {
  if (!p.has_optimum()) return std::nullopt;
  if (!x.allFinite()) return kInf;
  return p.dist_to_opt(x);
}

/// Resolves the envelope configuration of a run against an instance.
inline std::optional<MoreauConfig> resolve_moreau(const ExperimentConfig& cfg, const ProblemInstance& inst) {
  if (!cfg.moreau) return std::nullopt;
  const ProblemConstants& c = constants(inst);
  const double rho = c.rho.value_or(0.0);
  double lambda;
  if (cfg.moreau->lambda) {
    lambda = *cfg.moreau->lambda;
  } else {
    if (!(rho > 0.0)) throw ConfigError("config: moreau.lambda required when rho = 0");
    lambda = 1.0 / (2.0 * rho);
  }
  return MoreauConfig(lambda, rho, cfg.moreau->tol_prox, cfg.moreau->max_inner);
}

/// Records every record_stride-th iteration, every epoch boundary, and the
/// terminal state; diagnostics at diagnostic_stride when configured.
template <StochasticProblem P>
class TraceRecorder {
 public:
  TraceRecorder(const P& p, const ExperimentConfig& cfg, std::optional<MoreauConfig> moreau)
      : p_(p), cfg_(cfg), moreau_(std::move(moreau)), m_(p.sample_count()) {}

  void operator()(const StepView& v) {
    bool take = v.terminal || v.k % cfg_.record_stride == 0;
    if (v.draws >= next_boundary_) {
      take = true;
      next_boundary_ = (v.draws / m_ + 1) * m_;
    }
    if (!take) return;
    TraceRecord r;
    r.k = v.k;
    r.draws = v.draws;
    r.diverged = v.diverged;
    r.alpha = v.alpha;
    r.gamma = v.gamma;
    r.batch = v.batch;
    r.clip_factor = v.clip_factor;
    r.fgap = v.diverged ? kInf : function_gap(p_, v.x);
    r.dist = v.diverged ? (p_.has_optimum() ? std::optional<double>(kInf) : std::nullopt)
                        : optimum_distance(p_, v.x);
    if (v.d) r.dnorm = v.d->norm();
    if (moreau_ && !v.diverged && cfg_.diagnostic_stride > 0 && v.k % cfg_.diagnostic_stride == 0)
      diagnostics(v, r);
    trace_.records.push_back(std::move(r));
  }

  Trace take() { return std::move(trace_); }

 private:
  void diagnostics(const StepView& v, TraceRecord& r) const {
    const MoreauEval e = moreau_eval(p_, *moreau_, v.x);
    r.moreau_gradsq = e.grad.squaredNorm();
    const auto& mom = cfg_.schedules.momentum;
    if (!v.d || !is_momentum(cfg_.algorithm) || !mom || mom->kind != MomentumSchedule::Kind::proportional)
      return;
    const double fx = p_.value(v.x);
    const double W = lyapunov_W(fx, *v.d, e.grad, mom->nu);
    r.W = W;
    r.V = lyapunov_V(e.envelope, W, fx, *v.d, moreau_->lambda, mom->nu, v.alpha, v.beta.value_or(1.0));
  }

  const P& p_;
  const ExperimentConfig& cfg_;
  std::optional<MoreauConfig> moreau_;
  std::uint64_t m_;
  std::uint64_t next_boundary_ = 0;
  Trace trace_;
};

inline Trace run_trajectory(const ExperimentConfig& cfg, const ProblemInstance& inst, std::uint64_t trial) {
  const std::optional<MoreauConfig> moreau = resolve_moreau(cfg, inst);
  return std::visit(
      [&](const auto& p) {
        TraceRecorder rec(p, cfg, moreau);
        simulate(p, cfg.algorithm, cfg.schedules, limits_of(cfg, p.sample_count()),
                 initial_point(cfg, p.dim(), trial), sampling_stream(cfg, trial), rec);
        return rec.take();
      },
      inst);
}

inline Trace run_trajectory(const ExperimentConfig& cfg, std::uint64_t trial) {
  cfg.validate();
  return run_trajectory(cfg, make_instance(cfg, trial), trial);
}

// ---------------------------------------------------------------------------
// Aggregation
// ---------------------------------------------------------------------------

/// Median plus a 90% band from the 5th and 95th percentiles.
struct Percentiles {
  double median = kNaN;
  double p05 = kNaN;
  double p95 = kNaN;

  bool operator==(const Percentiles& o) const {
    auto same = [](double a, double b) { return a == b || (std::isnan(a) && std::isnan(b)); };
    return same(median, o.median) && same(p05, o.p05) && same(p95, o.p95);
  }
};

/// Nearest-rank percentile: the value of rank ceil(p/100 N) in sorted order.
inline double nearest_rank(const std::vector<double>& sorted, double p) {
  if (sorted.empty()) return kNaN;
  const double n = static_cast<double>(sorted.size());
  auto rank = static_cast<std::size_t>(std::ceil(p / 100.0 * n - 1e-9));
  rank = std::clamp<std::size_t>(rank, 1, sorted.size());
  return sorted[rank - 1];
}

/// Median as the mean of the two middle values for even N.
inline double median_sorted(const std::vector<double>& sorted) {
  if (sorted.empty()) return kNaN;
  const std::size_t n = sorted.size();
  if (n % 2 == 1) return sorted[n / 2];
  const double a = sorted[n / 2 - 1], b = sorted[n / 2];
  if (a == b) return a;
  return a + (b - a) / 2.0;
}

inline Percentiles percentiles(std::vector<double> values) {
  std::erase_if(values, [](double v) { return std::isnan(v); });
  std::sort(values.begin(), values.end());
  return {median_sorted(values), nearest_rank(values, 5.0), nearest_rank(values, 95.0)};
}

struct TrialResult {
  std::vector<double> epoch_gap;   // gap at epoch q = 0, 1, ...; +inf after divergence
  std::vector<double> epoch_dist;  // empty when the optimum is unknown
  double final_gap = kNaN;
  std::optional<double> final_dist;
  bool diverged = false;
  std::uint64_t iterations = 0;
  std::uint64_t draws = 0;
  std::string error;
};

struct EpsSummary {
  double eps;
  std::vector<std::optional<std::uint64_t>> per_trial;
  Percentiles epochs;  // none counts as +inf

  bool operator==(const EpsSummary&) const = default;
};

struct AggregateResult {
  std::uint64_t trials = 0;
  std::uint64_t divergence_count = 0;
  std::uint64_t epoch_size = 0;
  std::vector<std::uint64_t> epochs;
  std::vector<Percentiles> gap;
  std::vector<Percentiles> dist;  // empty when the optimum is unknown
  Percentiles final_gap;
  std::vector<EpsSummary> eps;
  std::vector<std::string> trial_errors;  // index-aligned; empty string when fine

  bool operator==(const AggregateResult&) const = default;
};

/// Gap at epoch boundaries: the first observed state with draws >= q m.
template <StochasticProblem P>
TrialResult run_trial(const P& p, const ExperimentConfig& cfg, std::uint64_t trial) {
  TrialResult tr;
  const std::uint64_t m = p.sample_count();
  std::uint64_t next = 0;
  const bool with_dist = p.has_optimum();
  auto obs = [&](const StepView& v) {
    if (v.draws >= next && tr.epoch_gap.size() <= cfg.max_epochs) {
      const double gap = v.diverged ? kInf : function_gap(p, v.x);
      const double dist = with_dist ? (v.diverged ? kInf : *optimum_distance(p, v.x)) : kNaN;
      // A batch may jump over several boundaries; the same state serves each.
      while (v.draws >= next && tr.epoch_gap.size() <= cfg.max_epochs) {
        tr.epoch_gap.push_back(gap);
        if (with_dist) tr.epoch_dist.push_back(dist);
        next += m;
      }
    }
    if (v.terminal) {
      tr.final_gap = v.diverged ? kInf : function_gap(p, v.x);
      if (with_dist) tr.final_dist = v.diverged ? kInf : *optimum_distance(p, v.x);
    }
  };
  const RunSummary s = simulate(p, cfg.algorithm, cfg.schedules, limits_of(cfg, m),
                                initial_point(cfg, p.dim(), trial), sampling_stream(cfg, trial), obs);
  tr.diverged = s.diverged;
  tr.iterations = s.iterations;
  tr.draws = s.draws;
  if (s.diverged) {
    // Every later epoch counts as a failure.
    const std::uint64_t total = cfg.max_epochs + 1;
    while (tr.epoch_gap.size() < total) {
      tr.epoch_gap.push_back(kInf);
      if (with_dist) tr.epoch_dist.push_back(kInf);
    }
  }
  return tr;
}

inline std::size_t worker_count(std::uint64_t requested, std::size_t jobs) {
  std::size_t t = requested ? static_cast<std::size_t>(requested) : std::thread::hardware_concurrency();
  return std::max<std::size_t>(1, std::min(t, jobs));
}

/// Calls fn(i) for i in [0, n) on up to `threads` workers. Results must be
/// written to index-addressed slots so the outcome is schedule independent.
template <class Fn>
void parallel_for(std::size_t n, std::uint64_t threads, Fn&& fn) {
  const std::size_t workers = worker_count(threads, n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

inline std::optional<std::uint64_t> first_epoch_below(const std::vector<double>& epoch_gap, double eps) {
  for (std::size_t q = 1; q < epoch_gap.size(); ++q)
    if (epoch_gap[q] <= eps) return q;
  return std::nullopt;
}

/// Reduces per-trial results; symmetric in the trial order.
inline AggregateResult aggregate(const std::vector<TrialResult>& results, const std::vector<double>& eps_list,
                                 std::uint64_t epoch_size) {
  AggregateResult a;
  a.trials = results.size();
  a.epoch_size = epoch_size;
  std::size_t epochs = std::numeric_limits<std::size_t>::max();
  bool with_dist = !results.empty();
  for (const TrialResult& t : results) {
    if (t.diverged) ++a.divergence_count;
    if (t.error.empty()) epochs = std::min(epochs, t.epoch_gap.size());
    with_dist = with_dist && (t.error.size() || !t.epoch_dist.empty());
    a.trial_errors.push_back(t.error);
  }
  if (epochs == std::numeric_limits<std::size_t>::max()) epochs = 0;
  std::vector<double> col(results.size());
  for (std::size_t q = 0; q < epochs; ++q) {
    a.epochs.push_back(q);
    for (std::size_t i = 0; i < results.size(); ++i)
      col[i] = results[i].error.empty() ? results[i].epoch_gap[q] : kInf;
    a.gap.push_back(percentiles(col));
    if (with_dist) {
      for (std::size_t i = 0; i < results.size(); ++i)
        col[i] = results[i].error.empty() ? results[i].epoch_dist[q] : kInf;
      a.dist.push_back(percentiles(col));
    }
  }
  for (std::size_t i = 0; i < results.size(); ++i)
    col[i] = results[i].error.empty() ? results[i].final_gap : kInf;
  a.final_gap = percentiles(col);
  for (double e : eps_list) {
    EpsSummary s{e, {}, {}};
    std::vector<double> vals;
    for (const TrialResult& t : results) {
      std::optional<std::uint64_t> q;
      if (t.error.empty() && !t.diverged) {
        std::vector<double> g(t.epoch_gap.begin(),
                              t.epoch_gap.begin() + static_cast<std::ptrdiff_t>(std::min(epochs, t.epoch_gap.size())));
        q = first_epoch_below(g, e);
      }
      s.per_trial.push_back(q);
      vals.push_back(q ? static_cast<double>(*q) : kInf);
    }
    s.epochs = percentiles(vals);
    a.eps.push_back(std::move(s));
  }
  return a;
}

struct TrialsOutput {
  AggregateResult aggregate;
  std::vector<TrialResult> trials;
  std::vector<Trace> traces;  // filled when requested
};

inline TrialsOutput run_trials_detailed(const ExperimentConfig& cfg, bool keep_traces = false) {
  cfg.validate();
  std::optional<ProblemInstance> shared;
  if (cfg.shared_data) shared = make_instance(cfg, 0);
  TrialsOutput out;
  out.trials.resize(cfg.trials);
  if (keep_traces) out.traces.resize(cfg.trials);
  parallel_for(cfg.trials, cfg.threads, [&](std::size_t i) {
    try {
      const ProblemInstance inst = shared ? *shared : make_instance(cfg, i);
      out.trials[i] = std::visit([&](const auto& p) { return run_trial(p, cfg, i); }, inst);
      if (keep_traces) out.traces[i] = run_trajectory(cfg, inst, i);
    } catch (const std::exception& e) {
      out.trials[i] = TrialResult{};
      out.trials[i].error = e.what();
    }
  });
  const std::uint64_t m = shared ? sample_count(*shared) : sample_count(make_instance(cfg, 0));
  out.aggregate = aggregate(out.trials, cfg.eps, m);
  return out;
}

inline AggregateResult run_trials(const ExperimentConfig& cfg) {
  return run_trials_detailed(cfg).aggregate;
}

// ---------------------------------------------------------------------------
// Stepsize sweep
// ---------------------------------------------------------------------------

struct SweepRow {
  double alpha0;
  double eps;
  Percentiles epochs;
  std::uint64_t divergence_count;
  std::uint64_t trials;

  bool operator==(const SweepRow&) const = default;
};

struct SweepTable {
  std::vector<SweepRow> rows;
  bool operator==(const SweepTable&) const = default;
};

/// One run_trials per grid value, rows ordered by alpha0 then eps.
inline SweepTable sweep_initial_stepsize(const ExperimentConfig& cfg) {
  if (cfg.alpha0_grid.empty()) throw ConfigError("sweep: alpha0 grid is empty");
  std::vector<double> grid = cfg.alpha0_grid;
  std::sort(grid.begin(), grid.end());
  std::vector<ExperimentConfig> point_cfgs;
  for (double a : grid) {
    ExperimentConfig c = cfg;
    c.schedules.step.alpha0 = a;
    c.validate();
    point_cfgs.push_back(std::move(c));
  }
  SweepTable t;
  for (const ExperimentConfig& c : point_cfgs) {
    const AggregateResult a = run_trials(c);
    for (const EpsSummary& e : a.eps)
      t.rows.push_back({c.schedules.step.alpha0, e.eps, e.epochs, a.divergence_count, a.trials});
    if (a.eps.empty())
      t.rows.push_back({c.schedules.step.alpha0, kNaN, Percentiles{}, a.divergence_count, a.trials});
  }
  return t;
}

}  // namespace clipgrad

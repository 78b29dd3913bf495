#pragma once

// ExperimentConfig and its JSON file format (schema version 1).

#include <cstdint>
#include <fstream>
#include <initializer_list>
#include <optional>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "clipgrad/clip.hpp"
#include "clipgrad/error.hpp"
#include "clipgrad/problems.hpp"

namespace clipgrad {

using Json = nlohmann::ordered_json;

inline constexpr int kConfigSchemaVersion = 1;

enum class Algorithm { sgd, clipped_sgd, shb, clipped_shb };

constexpr std::string_view to_string(Algorithm a) noexcept {
  switch (a) {
    case Algorithm::sgd: return "sgd";
    case Algorithm::clipped_sgd: return "clipped_sgd";
    case Algorithm::shb: return "shb";
    case Algorithm::clipped_shb: return "clipped_shb";
  }
  return "unknown";
}

constexpr bool is_clipped(Algorithm a) noexcept {
  return a == Algorithm::clipped_sgd || a == Algorithm::clipped_shb;
}
constexpr bool is_momentum(Algorithm a) noexcept {
  return a == Algorithm::shb || a == Algorithm::clipped_shb;
}

using ProblemSpec = std::variant<QuarticSpec, PhaseRetrievalSpec, AbsRegressionSpec>;

/// Envelope settings; lambda defaults to 1/(2 rho) of the instance.
struct MoreauSpec {
  std::optional<double> lambda;
  double tol_prox = 1e-6;
  std::uint64_t max_inner = 100000;

  bool operator==(const MoreauSpec&) const = default;
};

struct ExperimentConfig {
  ProblemSpec problem = QuarticSpec{};
  Algorithm algorithm = Algorithm::clipped_sgd;
  ScheduleSet schedules{StepSchedule::polynomial(1.0, 0.5), ClipSchedule::constant(1.0),
                        std::nullopt, BatchSchedule::unit()};
  std::uint64_t trials = 30;
  std::uint64_t max_epochs = 500;
  std::optional<std::uint64_t> max_iterations;  // extra cap on iterations
  std::uint64_t seed = 0;
  std::vector<double> alpha0_grid;
  std::vector<double> eps;
  std::uint64_t record_stride = 1;
  std::uint64_t diagnostic_stride = 10;
  std::optional<MoreauSpec> moreau;
  bool shared_data = true;
  std::optional<std::vector<double>> x0;
  std::uint64_t threads = 0;  // 0: hardware concurrency

  /// Throws ConfigError on any inconsistency. Run before any compute.
  void validate() const {
    schedules.step.validate();
    if (is_clipped(algorithm) && !schedules.clip)
      throw ConfigError("config: clipped algorithm needs a clip schedule");
    if (schedules.clip) schedules.clip->validate();
    if (is_momentum(algorithm)) {
      if (!schedules.momentum) throw ConfigError("config: heavy ball needs a momentum schedule");
      schedules.momentum->validate_against(schedules.step);
    }
    if (schedules.batch.kind == BatchSchedule::Kind::fixed && schedules.batch.m0 == 0)
      throw ConfigError("config: fixed batch size must be positive");
    if (trials < 1) throw ConfigError("config: trials must be >= 1");
    if (max_epochs < 1) throw ConfigError("config: max_epochs must be >= 1");
    if (max_iterations && *max_iterations < 1) throw ConfigError("config: max_iterations must be >= 1");
    if (record_stride < 1) throw ConfigError("config: record_stride must be >= 1");
    for (double a : alpha0_grid)
      if (!(a > 0.0) || !std::isfinite(a)) throw ConfigError("config: grid values must be positive");
    for (double e : eps)
      if (!(e > 0.0)) throw ConfigError("config: eps values must be positive");
    if (moreau) {
      if (moreau->lambda && !(*moreau->lambda > 0.0)) throw ConfigError("config: lambda must be positive");
      if (!(moreau->tol_prox > 0.0)) throw ConfigError("config: tol_prox must be positive");
      if (moreau->max_inner == 0) throw ConfigError("config: max_inner must be positive");
    }
    std::visit(
        [](const auto& s) {
          using S = std::decay_t<decltype(s)>;
          if constexpr (std::is_same_v<S, QuarticSpec>) {
            if (!(s.epsilon > 0.0)) throw ConfigError("config: quartic epsilon must be positive");
            if (!(s.noise_sigma >= 0.0)) throw ConfigError("config: noise sigma must be >= 0");
          } else {
            if (s.m < 1 || s.n < 1) throw ConfigError("config: m and n must be >= 1");
            if (!(s.kappa >= 1.0)) throw ConfigError("config: kappa must be >= 1");
          }
          if constexpr (std::is_same_v<S, AbsRegressionSpec>) {
            if (s.m < s.n) throw ConfigError("config: absolute regression needs m >= n");
          }
        },
        problem);
    if (x0) {
      const auto n = std::visit(
          [](const auto& s) -> std::size_t {
            if constexpr (std::is_same_v<std::decay_t<decltype(s)>, QuarticSpec>) return 1;
            else return static_cast<std::size_t>(s.n);
          },
          problem);
      if (x0->size() != n) throw ConfigError("config: x0 has wrong dimension");
    }
  }

  bool operator==(const ExperimentConfig& o) const {
    return to_json() == o.to_json();
  }

  Json to_json() const;
  static ExperimentConfig from_json(const Json& j);
};

// ---------------------------------------------------------------------------
// JSON mapping
// ---------------------------------------------------------------------------

namespace detail {

inline void reject_unknown(const Json& j, std::initializer_list<std::string_view> known,
                           std::string_view where) {
  if (!j.is_object()) throw ConfigError("config: " + std::string(where) + " must be an object");
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (auto k : known) ok = ok || key == k;
    if (!ok) throw ConfigError("config: unknown key '" + key + "' in " + std::string(where));
  }
}

template <class T>
T get_field(const Json& j, const char* key, std::string_view where) {
  if (!j.contains(key)) throw ConfigError("config: missing '" + std::string(key) + "' in " + std::string(where));
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config: bad value for '" + std::string(key) + "' in " + std::string(where) + ": " + e.what());
  }
}

template <class T>
T get_or(const Json& j, const char* key, T fallback, std::string_view where) {
  return j.contains(key) ? get_field<T>(j, key, where) : fallback;
}

inline std::string kind_of(const Json& j, std::string_view where) {
  return get_field<std::string>(j, "kind", where);
}

}  // namespace detail

inline Json problem_to_json(const ProblemSpec& spec) {
  return std::visit(
      [](const auto& s) -> Json {
        using S = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<S, QuarticSpec>) {
          return Json{{"kind", "quartic"}, {"epsilon", s.epsilon}, {"noise_sigma", s.noise_sigma}};
        } else if constexpr (std::is_same_v<S, PhaseRetrievalSpec>) {
          return Json{{"kind", "phase_retrieval"}, {"m", s.m}, {"n", s.n}, {"kappa", s.kappa},
                      {"p_fail", s.p_fail}, {"corruption_variance", s.corruption_variance}};
        } else {
          return Json{{"kind", "abs_regression"}, {"m", s.m}, {"n", s.n}, {"kappa", s.kappa},
                      {"sigma", s.sigma}};
        }
      },
      spec);
}

inline ProblemSpec problem_from_json(const Json& j) {
  const std::string kind = detail::kind_of(j, "problem");
  if (kind == "quartic") {
    detail::reject_unknown(j, {"kind", "epsilon", "noise_sigma"}, "problem");
    QuarticSpec s;
    s.epsilon = detail::get_or(j, "epsilon", s.epsilon, "problem");
    s.noise_sigma = detail::get_or(j, "noise_sigma", s.noise_sigma, "problem");
    return s;
  }
  if (kind == "phase_retrieval") {
    detail::reject_unknown(j, {"kind", "m", "n", "kappa", "p_fail", "corruption_variance"}, "problem");
    PhaseRetrievalSpec s;
    s.m = detail::get_or<Eigen::Index>(j, "m", s.m, "problem");
    s.n = detail::get_or<Eigen::Index>(j, "n", s.n, "problem");
    s.kappa = detail::get_or(j, "kappa", s.kappa, "problem");
    s.p_fail = detail::get_or(j, "p_fail", s.p_fail, "problem");
    s.corruption_variance = detail::get_or(j, "corruption_variance", s.corruption_variance, "problem");
    return s;
  }
  if (kind == "abs_regression") {
    detail::reject_unknown(j, {"kind", "m", "n", "kappa", "sigma"}, "problem");
    AbsRegressionSpec s;
    s.m = detail::get_or<Eigen::Index>(j, "m", s.m, "problem");
    s.n = detail::get_or<Eigen::Index>(j, "n", s.n, "problem");
    s.kappa = detail::get_or(j, "kappa", s.kappa, "problem");
    s.sigma = detail::get_or(j, "sigma", s.sigma, "problem");
    return s;
  }
  throw ConfigError("config: unknown problem kind '" + kind + "'");
}

inline Algorithm algorithm_from_string(const std::string& s) {
  for (Algorithm a : {Algorithm::sgd, Algorithm::clipped_sgd, Algorithm::shb, Algorithm::clipped_shb})
    if (s == to_string(a)) return a;
  throw ConfigError("config: unknown algorithm '" + s + "'");
}

inline Json ExperimentConfig::to_json() const {
  Json j;
  j["schema_version"] = kConfigSchemaVersion;
  j["problem"] = problem_to_json(problem);
  j["algorithm"] = std::string(to_string(algorithm));

  const StepSchedule& st = schedules.step;
  j["step"] = st.kind == StepSchedule::Kind::constant
                  ? Json{{"kind", "constant"}, {"alpha0", st.alpha0}}
                  : Json{{"kind", "polynomial"}, {"alpha0", st.alpha0}, {"tau", st.tau}};
  if (schedules.clip)
    j["clip"] = Json{{"kind", schedules.clip->kind == ClipSchedule::Kind::constant ? "constant" : "coupled"},
                     {"gamma", schedules.clip->gamma}};
  if (schedules.momentum) {
    const MomentumSchedule& m = *schedules.momentum;
    j["momentum"] = m.kind == MomentumSchedule::Kind::constant
                        ? Json{{"kind", "constant"}, {"beta", m.beta}}
                        : Json{{"kind", "proportional"}, {"nu", m.nu}, {"clamp", m.clamp}};
  }
  switch (schedules.batch.kind) {
    case BatchSchedule::Kind::unit: j["batch"] = Json{{"kind", "unit"}}; break;
    case BatchSchedule::Kind::fixed: j["batch"] = Json{{"kind", "fixed"}, {"m0", schedules.batch.m0}}; break;
    case BatchSchedule::Kind::inverse_step: j["batch"] = Json{{"kind", "inverse_step"}}; break;
  }
  j["trials"] = trials;
  j["max_epochs"] = max_epochs;
  if (max_iterations) j["max_iterations"] = *max_iterations;
  j["seed"] = seed;
  j["alpha0_grid"] = alpha0_grid;
  j["eps"] = eps;
  j["record_stride"] = record_stride;
  j["diagnostic_stride"] = diagnostic_stride;
  if (moreau) {
    Json m;
    if (moreau->lambda) m["lambda"] = *moreau->lambda;
    m["tol_prox"] = moreau->tol_prox;
    m["max_inner"] = moreau->max_inner;
    j["moreau"] = m;
  }
  j["shared_data"] = shared_data;
  if (x0) j["x0"] = *x0;
  j["threads"] = threads;
  return j;
}

inline ExperimentConfig ExperimentConfig::from_json(const Json& j) {
  using detail::get_field;
  using detail::get_or;
  detail::reject_unknown(j,
                         {"schema_version", "problem", "algorithm", "step", "clip", "momentum", "batch",
                          "trials", "max_epochs", "max_iterations", "seed", "alpha0_grid", "eps",
                          "record_stride", "diagnostic_stride", "moreau", "shared_data", "x0", "threads"},
                         "config");
  const int version = get_field<int>(j, "schema_version", "config");
  if (version != kConfigSchemaVersion)
    throw ConfigError("config: unsupported schema_version " + std::to_string(version));

  ExperimentConfig c;
  c.problem = problem_from_json(get_field<Json>(j, "problem", "config"));
  c.algorithm = algorithm_from_string(get_field<std::string>(j, "algorithm", "config"));

  const Json step = get_field<Json>(j, "step", "config");
  const std::string step_kind = detail::kind_of(step, "step");
  if (step_kind == "polynomial") {
    detail::reject_unknown(step, {"kind", "alpha0", "tau"}, "step");
    c.schedules.step = StepSchedule{StepSchedule::Kind::polynomial, get_field<double>(step, "alpha0", "step"),
                                    get_field<double>(step, "tau", "step")};
  } else if (step_kind == "constant") {
    detail::reject_unknown(step, {"kind", "alpha0"}, "step");
    c.schedules.step = StepSchedule{StepSchedule::Kind::constant, get_field<double>(step, "alpha0", "step"), 0.0};
  } else {
    throw ConfigError("config: unknown step kind '" + step_kind + "'");
  }

  c.schedules.clip.reset();
  if (j.contains("clip")) {
    const Json clip = j.at("clip");
    detail::reject_unknown(clip, {"kind", "gamma"}, "clip");
    const std::string k = detail::kind_of(clip, "clip");
    if (k != "constant" && k != "coupled") throw ConfigError("config: unknown clip kind '" + k + "'");
    c.schedules.clip = ClipSchedule{k == "constant" ? ClipSchedule::Kind::constant : ClipSchedule::Kind::coupled,
                                    get_field<double>(clip, "gamma", "clip")};
  }

  if (j.contains("momentum")) {
    const Json mom = j.at("momentum");
    const std::string k = detail::kind_of(mom, "momentum");
    if (k == "proportional") {
      detail::reject_unknown(mom, {"kind", "nu", "clamp"}, "momentum");
      c.schedules.momentum = MomentumSchedule{MomentumSchedule::Kind::proportional,
                                              get_field<double>(mom, "nu", "momentum"), 0.0,
                                              get_or(mom, "clamp", false, "momentum")};
    } else if (k == "constant") {
      detail::reject_unknown(mom, {"kind", "beta"}, "momentum");
      c.schedules.momentum = MomentumSchedule{MomentumSchedule::Kind::constant, 0.0,
                                              get_field<double>(mom, "beta", "momentum"), false};
    } else {
      throw ConfigError("config: unknown momentum kind '" + k + "'");
    }
  }

  if (j.contains("batch")) {
    const Json b = j.at("batch");
    const std::string k = detail::kind_of(b, "batch");
    if (k == "unit") {
      detail::reject_unknown(b, {"kind"}, "batch");
      c.schedules.batch = BatchSchedule::unit();
    } else if (k == "fixed") {
      detail::reject_unknown(b, {"kind", "m0"}, "batch");
      c.schedules.batch = BatchSchedule{BatchSchedule::Kind::fixed, get_field<std::uint64_t>(b, "m0", "batch")};
    } else if (k == "inverse_step") {
      detail::reject_unknown(b, {"kind"}, "batch");
      c.schedules.batch = BatchSchedule::inverse_step();
    } else {
      throw ConfigError("config: unknown batch kind '" + k + "'");
    }
  }

  c.trials = get_or<std::uint64_t>(j, "trials", c.trials, "config");
  c.max_epochs = get_or<std::uint64_t>(j, "max_epochs", c.max_epochs, "config");
  if (j.contains("max_iterations")) c.max_iterations = get_field<std::uint64_t>(j, "max_iterations", "config");
  c.seed = get_or<std::uint64_t>(j, "seed", c.seed, "config");
  c.alpha0_grid = get_or<std::vector<double>>(j, "alpha0_grid", {}, "config");
  c.eps = get_or<std::vector<double>>(j, "eps", {}, "config");
  c.record_stride = get_or<std::uint64_t>(j, "record_stride", c.record_stride, "config");
  c.diagnostic_stride = get_or<std::uint64_t>(j, "diagnostic_stride", c.diagnostic_stride, "config");
  if (j.contains("moreau")) {
    const Json m = j.at("moreau");
    detail::reject_unknown(m, {"lambda", "tol_prox", "max_inner"}, "moreau");
    MoreauSpec ms;
    if (m.contains("lambda")) ms.lambda = get_field<double>(m, "lambda", "moreau");
    ms.tol_prox = get_or(m, "tol_prox", ms.tol_prox, "moreau");
    ms.max_inner = get_or<std::uint64_t>(m, "max_inner", ms.max_inner, "moreau");
    c.moreau = ms;
  }
  c.shared_data = get_or(j, "shared_data", c.shared_data, "config");
  if (j.contains("x0")) c.x0 = get_field<std::vector<double>>(j, "x0", "config");
  c.threads = get_or<std::uint64_t>(j, "threads", c.threads, "config");
  c.validate();
  return c;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file '" + path + "'");
  Json j;
  try {
    j = Json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError("config file '" + path + "': " + e.what());
  }
  return ExperimentConfig::from_json(j);
}

/// log-spaced grid of `points` values from lo to hi inclusive.
inline std::vector<double> log_grid(double lo, double hi, std::size_t points) {
  if (!(lo > 0.0 && hi >= lo) || points == 0) throw ConfigError("grid: need 0 < lo <= hi and points >= 1");
  std::vector<double> g(points);
  if (points == 1) {
    g[0] = hi;
    return g;
  }
  const double a = std::log10(lo), b = std::log10(hi);
  for (std::size_t i = 0; i < points; ++i)
    g[i] = std::pow(10.0, a + (b - a) * static_cast<double>(i) / static_cast<double>(points - 1));
  g.back() = hi;
  return g;
}

/// Default stepsize grid: 15 points, log-spaced, four decades ending at 1.
inline std::vector<double> default_alpha0_grid() { return log_grid(1e-4, 1.0, 15); }

}  // namespace clipgrad

#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <vector>

#include "clipgrad/clipgrad.hpp"

using namespace clipgrad;
using Catch::Approx;

namespace {

ExperimentConfig example1_config(std::uint64_t trials) {
  ExperimentConfig c;
  c.problem = QuarticSpec{1.0, 0.0};
  c.algorithm = Algorithm::sgd;
  c.schedules = {StepSchedule::polynomial(0.03, 1.0), std::nullopt, std::nullopt, BatchSchedule::unit()};
  c.x0 = std::vector<double>{10.0};
  c.trials = trials;
  c.max_epochs = 100;
  c.threads = 1;
  return c;
}

ExperimentConfig small_pr(Algorithm alg) {
  ExperimentConfig c;
  c.problem = PhaseRetrievalSpec{40, 5, 4.0, 0.1, 25.0};
  c.algorithm = alg;
  c.schedules = {StepSchedule::polynomial(0.05, 0.5), ClipSchedule::constant(5.0),
                 MomentumSchedule::proportional(1.0, true), BatchSchedule::unit()};
  if (!is_momentum(alg)) c.schedules.momentum.reset();
  if (!is_clipped(alg)) c.schedules.clip.reset();
  c.trials = 6;
  c.max_epochs = 20;
  c.eps = {0.5, 0.1};
  c.seed = 11;
  c.threads = 1;
  return c;
}

std::string temp_dir(const std::string& leaf) {
  const auto p = std::filesystem::temp_directory_path() / ("clipgrad_test_" + leaf);
  std::filesystem::remove_all(p);
  return p.string();
}

}  // namespace

TEST_CASE("percentiles") {
  std::vector<double> v(30);
  std::iota(v.begin(), v.end(), 1.0);
  std::reverse(v.begin(), v.end());
  const Percentiles p = percentiles(v);
  CHECK(p.median == 15.5);
  CHECK(p.p05 == 2.0);
  CHECK(p.p95 == 29.0);

  CHECK(percentiles({4.0, kNaN, 1.0, 2.0}).median == 2.0);
  CHECK(std::isnan(percentiles({}).median));
  CHECK(percentiles({1.0, kInf}).median == kInf);
  CHECK(percentiles({3.0, 3.0}).median == 3.0);
}

TEST_CASE("trajectories are bitwise reproducible") {
  ExperimentConfig c = small_pr(Algorithm::clipped_shb);
  c.moreau = MoreauSpec{std::nullopt, 1e-6, 20000};
  c.diagnostic_stride = 25;
  const Trace a = run_trajectory(c, 3);
  const Trace b = run_trajectory(c, 3);
  CHECK(a == b);
  CHECK(a.records.size() > 20);
  CHECK(run_trajectory(c, 4) != a);

  c.seed = 12;
  CHECK(run_trajectory(c, 3) != a);
}

TEST_CASE("aggregates do not depend on the thread count") {
  ExperimentConfig c = small_pr(Algorithm::clipped_sgd);
  c.threads = 1;
  const AggregateResult one = run_trials(c);
  c.threads = 3;
  CHECK(run_trials(c) == one);
}

TEST_CASE("divergence of plain SGD in the example configuration") {
  const AggregateResult a = run_trials(example1_config(30));
  CHECK(a.trials == 30);
  CHECK(a.divergence_count == 30);
  CHECK(a.final_gap.median == kInf);

  const Trace t = run_trajectory(example1_config(1), 0);
  REQUIRE(t.diverged());
  CHECK(t.records.back().k <= 50);
}

TEST_CASE("identical deterministic trials give a zero-width band") {
  ExperimentConfig c = example1_config(8);
  c.algorithm = Algorithm::clipped_sgd;
  c.schedules.step = StepSchedule::polynomial(1.0, 0.5);
  c.schedules.clip = ClipSchedule::constant(1.0);
  c.max_epochs = 200;
  c.eps = {1e-3};
  const AggregateResult a = run_trials(c);
  CHECK(a.divergence_count == 0);
  for (const Percentiles& p : a.gap) {
    REQUIRE(p.p05 == p.p95);
    REQUIRE(p.median == p.p05);
  }
  REQUIRE(a.eps.size() == 1);
  CHECK(a.eps[0].epochs.p05 == a.eps[0].epochs.p95);
  CHECK(std::isfinite(a.eps[0].epochs.median));
}

TEST_CASE("draw accounting per epoch") {
  for (std::uint64_t batch : {1, 3, 7}) {
    ExperimentConfig c = small_pr(Algorithm::clipped_sgd);
    c.schedules.batch = batch == 1 ? BatchSchedule::unit() : BatchSchedule::fixed(batch);
    c.max_epochs = 10;
    const TrialsOutput out = run_trials_detailed(c, true);
    for (const TrialResult& t : out.trials) {
      REQUIRE(t.error.empty());
      REQUIRE(t.epoch_gap.size() == c.max_epochs + 1);
      REQUIRE(t.draws >= c.max_epochs * 40);
      REQUIRE(t.draws < c.max_epochs * 40 + batch);
      REQUIRE(t.iterations * batch == t.draws);
    }
    // Every epoch boundary is recorded in the trace, in draw order.
    const Trace& tr = out.traces[0];
    std::uint64_t q = 0;
    for (const TraceRecord& r : tr.records) {
      if (r.draws >= q * 40) {
        REQUIRE(r.draws < q * 40 + batch);
        ++q;
      }
    }
    CHECK(q == c.max_epochs + 1);
  }
}

TEST_CASE("gap of the first epoch equals the gap at x0") {
  const ExperimentConfig c = small_pr(Algorithm::clipped_sgd);
  const TrialsOutput out = run_trials_detailed(c);
  const ProblemInstance inst = make_instance(c, 0);
  for (std::uint64_t i = 0; i < c.trials; ++i) {
    const double f0 = value(inst, initial_point(c, dim(inst), i)) -
                      std::get<PhaseRetrievalProblem>(inst).f_star();
    REQUIRE(out.trials[i].epoch_gap[0] == f0);
  }
}

TEST_CASE("aggregate is symmetric in trial order") {
  const TrialsOutput out = run_trials_detailed(small_pr(Algorithm::clipped_shb));
  std::vector<TrialResult> rev(out.trials.rbegin(), out.trials.rend());
  const AggregateResult a = aggregate(out.trials, {0.5, 0.1}, 40);
  const AggregateResult b = aggregate(rev, {0.5, 0.1}, 40);
  CHECK(a.gap == b.gap);
  CHECK(a.dist == b.dist);
  CHECK(a.final_gap == b.final_gap);
  CHECK(a.divergence_count == b.divergence_count);
  REQUIRE(a.eps.size() == b.eps.size());
  for (std::size_t i = 0; i < a.eps.size(); ++i) CHECK(a.eps[i].epochs == b.eps[i].epochs);
}

TEST_CASE("failed trials are reported and counted as failures") {
  std::vector<TrialResult> rs(3);
  for (auto& r : rs) {
    r.epoch_gap = {1.0, 0.5, 0.05};
    r.final_gap = 0.05;
  }
  rs[1] = TrialResult{};
  rs[1].error = "boom";
  const AggregateResult a = aggregate(rs, {0.1}, 10);
  CHECK(a.trial_errors[1] == "boom");
  CHECK(a.gap.size() == 3);
  CHECK(a.gap[2].p95 == kInf);
  CHECK(a.eps[0].per_trial[0] == 2u);
  CHECK_FALSE(a.eps[0].per_trial[1]);
}

TEST_CASE("sweep produces one row per grid value and tolerance") {
  ExperimentConfig c = small_pr(Algorithm::clipped_sgd);
  c.trials = 2;
  c.max_epochs = 5;
  c.alpha0_grid = {0.1, 0.01, 1.0};
  const SweepTable t = sweep_initial_stepsize(c);
  REQUIRE(t.rows.size() == 6);
  CHECK(t.rows[0].alpha0 == 0.01);
  CHECK(t.rows[1].alpha0 == 0.01);
  CHECK(t.rows[0].eps == 0.5);
  CHECK(t.rows[5].alpha0 == 1.0);
  c.alpha0_grid.clear();
  CHECK_THROWS_AS(sweep_initial_stepsize(c), ConfigError);

  const std::vector<double> g = default_alpha0_grid();
  CHECK(g.size() == 15);
  CHECK(g.front() == Approx(1e-4));
  CHECK(g.back() == 1.0);
}

TEST_CASE("config round trip and validation") {
  ExperimentConfig c = small_pr(Algorithm::clipped_shb);
  c.moreau = MoreauSpec{0.25, 1e-5, 500};
  c.max_iterations = 77;
  c.x0 = std::vector<double>{1, 2, 3, 4, 5};
  const Json j = c.to_json();
  CHECK(ExperimentConfig::from_json(j) == c);
  CHECK(ExperimentConfig::from_json(Json::parse(dump_json(j))) == c);

  ExperimentConfig q = example1_config(3);
  CHECK(ExperimentConfig::from_json(q.to_json()) == q);

  Json bad = j;
  bad["bogus"] = 1;
  CHECK_THROWS_AS(ExperimentConfig::from_json(bad), ConfigError);
  bad = j;
  bad["problem"]["bogus"] = 1;
  CHECK_THROWS_AS(ExperimentConfig::from_json(bad), ConfigError);
  bad = j;
  bad.erase("schema_version");
  CHECK_THROWS_AS(ExperimentConfig::from_json(bad), ConfigError);
  bad = j;
  bad["schema_version"] = 2;
  CHECK_THROWS_AS(ExperimentConfig::from_json(bad), ConfigError);
  bad = j;
  bad["x0"] = std::vector<double>{1.0};
  CHECK_THROWS_AS(ExperimentConfig::from_json(bad), ConfigError);
  bad = j;
  bad.erase("momentum");
  CHECK_THROWS_AS(ExperimentConfig::from_json(bad), ConfigError);
  bad = j;
  bad["trials"] = "many";
  CHECK_THROWS_AS(ExperimentConfig::from_json(bad), ConfigError);

  CHECK_THROWS_AS(load_config("/nonexistent/config.json"), IoError);
  const std::string dir = temp_dir("cfg");
  std::filesystem::create_directories(dir);
  write_text_file(dir + "/broken.json", "{ not json");
  CHECK_THROWS_AS(load_config(dir + "/broken.json"), ParseError);
  write_text_file(dir + "/ok.json", dump_json(j));
  CHECK(load_config(dir + "/ok.json") == c);
}

TEST_CASE("trace CSV round trip") {
  ExperimentConfig c = small_pr(Algorithm::clipped_shb);
  c.moreau = MoreauSpec{std::nullopt, 1e-6, 20000};
  c.diagnostic_stride = 10;
  c.max_epochs = 3;
  Trace t = run_trajectory(c, 0);
  t.records.push_back(t.records.back());
  t.records.back().fgap = kInf;
  t.records.back().dist = kInf;
  t.records.back().diverged = true;
  const Trace back = trace_from_csv(trace_to_csv(t));
  for (TraceRecord& r : t.records) {
    r.draws = 0;
    r.clip_factor = 1.0;
  }
  CHECK(back == t);
  CHECK(std::any_of(t.records.begin(), t.records.end(), [](const TraceRecord& r) { return r.V.has_value(); }));

  CHECK_THROWS_AS(trace_from_csv("k,fgap\n1,2\n"), ParseError);
  CHECK_THROWS_AS(trace_from_csv(std::string(kTraceHeader) + "\n0,x,,,1,,1,,,,0\n"), ParseError);
}

TEST_CASE("aggregate and sweep round trips") {
  ExperimentConfig c = small_pr(Algorithm::clipped_sgd);
  c.trials = 4;
  const AggregateResult a = run_trials(c);
  CHECK(aggregate_from_json(Json::parse(dump_json(aggregate_to_json(a)))) == a);

  const AggregateResult back = aggregate_from_csv(aggregate_to_csv(a));
  CHECK(back.epochs == a.epochs);
  CHECK(back.gap == a.gap);
  CHECK(back.dist == a.dist);

  const AggregateResult div = run_trials(example1_config(3));
  CHECK(aggregate_from_json(Json::parse(dump_json(aggregate_to_json(div)))) == div);

  const AggregateResult empty = aggregate({}, {}, 5);
  CHECK(aggregate_to_csv(empty) == std::string(kAggregateHeader) + "\n");
  CHECK(aggregate_from_csv(aggregate_to_csv(empty)).epochs.empty());

  c.trials = 2;
  c.max_epochs = 4;
  c.alpha0_grid = {0.01, 0.1};
  const SweepTable t = sweep_initial_stepsize(c);
  CHECK(sweep_from_csv(sweep_to_csv(t)) == t);
}

TEST_CASE("bound report JSON round trip") {
  ExperimentConfig c = example1_config(1);
  c.max_iterations = 60;
  const BoundReport r = verify_example1(c);
  const Json j = bound_report_to_json(r);
  const BoundReport back = bound_report_from_json(Json::parse(dump_json(j)));
  CHECK(dump_json(bound_report_to_json(back)) == dump_json(j));
  CHECK(back.verdicts == r.verdicts);
  CHECK(back.empirical.back() == r.empirical.back());
  CHECK_THROWS_AS(bound_report_from_json(Json::parse("{}")), ParseError);
}

TEST_CASE("instance export round trips") {
  ExperimentConfig c = small_pr(Algorithm::clipped_sgd);
  const ProblemInstance inst = make_instance(c, 0);
  const ProblemInstance back = instance_from_binary(instance_to_binary(inst));
  const auto& p = std::get<PhaseRetrievalProblem>(inst);
  const auto& q = std::get<PhaseRetrievalProblem>(back);
  CHECK(p.A() == q.A());
  CHECK(p.b() == q.b());
  CHECK(*p.x_star() == *q.x_star());
  CHECK(p.f_star() == q.f_star());
  CHECK(instance_to_binary(back) == instance_to_binary(inst));
  CHECK_THROWS_AS(instance_from_binary("garbage"), ParseError);

  c.problem = AbsRegressionSpec{30, 4, 3.0, 0.01};
  const ProblemInstance ar = make_instance(c, 0);
  CHECK(instance_to_binary(instance_from_binary(instance_to_binary(ar))) == instance_to_binary(ar));

  const std::string dir = temp_dir("export");
  export_instance_csv(inst, dir);
  const std::string text = read_text_file(dir + "/A.csv");
  std::size_t lines = std::count(text.begin(), text.end(), '\n');
  CHECK(lines == 40);
  const std::string first = text.substr(0, text.find(','));
  CHECK(parse_double(first) == p.A()(0, 0));
  CHECK(std::filesystem::exists(dir + "/meta.json"));
  CHECK(std::filesystem::exists(dir + "/x_star.csv"));
}

TEST_CASE("verification refuses unsuitable configurations") {
  ExperimentConfig c = small_pr(Algorithm::sgd);
  c.max_iterations = 100;
  CHECK_FALSE(verify_prop1(c).applicable);
  CHECK_FALSE(verify_thm1(c).applicable);
  CHECK_FALSE(verify_thm3(c).recursion.applicable);
  CHECK_FALSE(verify_thm5(c).applicable);
  CHECK_FALSE(verify_example1(c).applicable);

  // Phase retrieval has no quadratic growth constant.
  c.algorithm = Algorithm::clipped_sgd;
  c.schedules.clip = ClipSchedule::constant(1.0);
  CHECK_FALSE(verify_thm1(c).applicable);

  // tau outside (1/2, 1).
  ExperimentConfig q = example1_config(2);
  q.problem = QuarticSpec{1.0, 1.0};
  q.algorithm = Algorithm::clipped_sgd;
  q.schedules.step = StepSchedule::polynomial(1.0, 0.5);
  q.schedules.clip = ClipSchedule::coupled(1.0);
  q.max_iterations = 100;
  const Thm3Reports r = verify_thm3(q);
  CHECK_FALSE(r.recursion.applicable);
  CHECK_FALSE(r.rate.applicable);

  // Start point below the divergence threshold.
  ExperimentConfig e = example1_config(1);
  e.x0 = std::vector<double>{5.0};
  e.max_iterations = 10;
  CHECK_FALSE(verify_example1(e).applicable);

  c.max_iterations.reset();
  CHECK_THROWS_AS(verify_bounds(q, "nope"), ConfigError);
}

TEST_CASE("factorial growth of plain SGD holds up to divergence") {
  ExperimentConfig c = example1_config(1);
  c.max_iterations = 60;
  const BoundReport r = verify_example1(c);
  REQUIRE(r.applicable);
  CHECK(r.count(Verdict::violated) == 0);
  CHECK(r.derived_value("diverged") == 1.0);
  CHECK(*r.derived_value("diverged_at") <= 50.0);
}

TEST_CASE("small stability and recursion checks") {
  ExperimentConfig c;
  c.problem = QuarticSpec{1.0, 1.0};
  c.algorithm = Algorithm::clipped_sgd;
  c.schedules = {StepSchedule::polynomial(1.0, 0.75), ClipSchedule::coupled(1.0), std::nullopt,
                 BatchSchedule::unit()};
  c.trials = 200;
  c.max_iterations = 100;
  c.max_epochs = 1000;
  c.threads = 1;
  const BoundReport p = verify_prop1(c);
  REQUIRE(p.applicable);
  CHECK(p.count(Verdict::violated) == 0);
  CHECK(p.checkpoints.size() == 11);
  CHECK(p.derived_value("C") == Approx(2.0));

  c.schedules.clip = ClipSchedule::constant(1.0);
  c.schedules.batch = BatchSchedule::inverse_step();
  c.schedules.step = StepSchedule::polynomial(0.5, 0.75);
  VerifyOptions opt;
  for (Thm1Plugin plug : {Thm1Plugin::trial_means, Thm1Plugin::per_trial}) {
    opt.thm1_plugin = plug;
    const BoundReport t = verify_thm1(c, opt);
    REQUIRE(t.applicable);
    CHECK(t.checkpoints.size() == 10);
    CHECK(t.satisfied_fraction() >= 0.8);
  }
  // Both modes see the same trajectories, hence the same empirical series.
  opt.thm1_plugin = Thm1Plugin::trial_means;
  const BoundReport a = verify_thm1(c, opt);
  opt.thm1_plugin = Thm1Plugin::per_trial;
  CHECK(verify_thm1(c, opt).empirical == a.empirical);
}

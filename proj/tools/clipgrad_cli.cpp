// Command-line driver: run, sweep, verify, divergence-demo, export-instance.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <string>

#include <CLI11.hpp>

#include "clipgrad/clipgrad.hpp"

namespace fs = std::filesystem;
using namespace clipgrad;

namespace {

// 0 quiet, 1 summaries (default), 2 per-trial detail.
int verbosity() {
  const char* v = std::getenv("CLIPGRAD_VERBOSITY");
  if (!v || !*v) return 1;
  return std::atoi(v);
}

void info(const std::string& msg, int level = 1) {
  if (verbosity() >= level) std::cerr << msg << '\n';
}

void ensure_parent(const std::string& path) {
  const fs::path p = fs::path(path).parent_path();
  if (p.empty()) return;
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) throw IoError("cannot create directory '" + p.string() + "': " + ec.message());
}

void cmd_run(const std::string& config_path, const std::string& out_dir, bool traces) {
  const ExperimentConfig cfg = load_config(config_path);
  const TrialsOutput res = run_trials_detailed(cfg, traces);
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create directory '" + out_dir + "': " + ec.message());
  const fs::path dir(out_dir);
  write_text_file((dir / "aggregate.csv").string(), aggregate_to_csv(res.aggregate));
  write_text_file((dir / "aggregate.json").string(), dump_json(aggregate_to_json(res.aggregate)));
  write_text_file((dir / "config.json").string(), dump_json(cfg.to_json()));
  if (traces) {
    fs::create_directories(dir / "traces", ec);
    if (ec) throw IoError("cannot create directory '" + (dir / "traces").string() + "': " + ec.message());
    for (std::size_t i = 0; i < res.traces.size(); ++i) {
      char name[32];
      std::snprintf(name, sizeof name, "trace_%04zu.csv", i);
      write_text_file((dir / "traces" / name).string(), trace_to_csv(res.traces[i]));
    }
  }
  for (std::size_t i = 0; i < res.trials.size(); ++i) {
    const TrialResult& t = res.trials[i];
    info("trial " + std::to_string(i) + ": iterations=" + std::to_string(t.iterations) +
             " diverged=" + (t.diverged ? "yes" : "no") + " final_gap=" + format_double(t.final_gap) +
             (t.error.empty() ? "" : " error=" + t.error),
         2);
  }
  info("trials=" + std::to_string(res.aggregate.trials) +
       " divergences=" + std::to_string(res.aggregate.divergence_count) +
       " median_final_gap=" + format_double(res.aggregate.final_gap.median));
}

void cmd_sweep(const std::string& config_path, const std::string& out, bool default_grid) {
  ExperimentConfig cfg = load_config(config_path);
  if (default_grid || cfg.alpha0_grid.empty()) cfg.alpha0_grid = default_alpha0_grid();
  const SweepTable t = sweep_initial_stepsize(cfg);
  ensure_parent(out);
  write_text_file(out, sweep_to_csv(t));
  info("sweep rows=" + std::to_string(t.rows.size()) + " written to " + out);
}

int cmd_verify(const std::string& config_path, const std::string& bound, const std::string& out,
               const VerifyOptions& opt) {
  const ExperimentConfig cfg = load_config(config_path);
  const std::vector<BoundReport> reports = verify_bounds(cfg, bound, opt);
  Json arr = Json::array();
  bool violated = false;
  for (const BoundReport& r : reports) {
    arr.push_back(bound_report_to_json(r));
    violated = violated || r.count(Verdict::violated) > 0;
    info(r.name + ": applicable=" + (r.applicable ? "yes" : "no") +
         " satisfied=" + std::to_string(r.count(Verdict::satisfied)) +
         " violated=" + std::to_string(r.count(Verdict::violated)) +
         " not_applicable=" + std::to_string(r.count(Verdict::not_applicable)) + (r.note.empty() ? "" : " (" + r.note + ")"));
  }
  ensure_parent(out);
  write_text_file(out, dump_json(arr));
  return violated ? 1 : 0;
}

int cmd_divergence_demo(double alpha1, double x1, std::uint64_t iterations, const std::string& trace_out,
                        const std::string& report_out) {
  ExperimentConfig cfg;
  cfg.problem = QuarticSpec{1.0, 0.0};
  cfg.algorithm = Algorithm::sgd;
  cfg.schedules = ScheduleSet{StepSchedule::polynomial(alpha1, 1.0), std::nullopt, std::nullopt,
                              BatchSchedule::unit()};
  cfg.trials = 1;
  cfg.max_epochs = iterations;
  cfg.max_iterations = iterations;
  cfg.x0 = std::vector<double>{x1};
  cfg.validate();
  const Trace t = run_trajectory(cfg, 0);
  if (!trace_out.empty()) {
    ensure_parent(trace_out);
    write_text_file(trace_out, trace_to_csv(t));
  }
  const BoundReport r = verify_example1(cfg);
  if (!report_out.empty()) {
    ensure_parent(report_out);
    write_text_file(report_out, dump_json(bound_report_to_json(r)));
  }
  const auto k = r.derived_value("diverged_at");
  info(std::string("diverged=") + (t.diverged() ? "yes" : "no") +
       (t.diverged() && k ? " at k=" + format_double(*k) : "") +
       " bound_violations=" + std::to_string(r.count(Verdict::violated)) +
       (r.applicable ? "" : " (" + r.note + ")"));
  return r.applicable && r.count(Verdict::violated) == 0 ? 0 : 1;
}

void cmd_export(const std::string& config_path, const std::string& out, const std::string& format,
                std::uint64_t trial) {
  const ExperimentConfig cfg = load_config(config_path);
  const ProblemInstance inst = make_instance(cfg, trial);
  if (format == "csv") {
    export_instance_csv(inst, out);
  } else {
    ensure_parent(out);
    export_instance_binary(inst, out);
  }
  info("instance written to " + out);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Clipped stochastic subgradient experiments"};
  app.set_version_flag("--version", std::string(kToolVersion));
  app.require_subcommand(1);

  std::string config, out, bound = "prop1", format = "csv", trace_out, report_out;
  bool traces = false, default_grid = false;
  VerifyOptions vopt;
  double region = 0.0, alpha1 = 0.03, x1 = 10.0;
  std::uint64_t iterations = 50, trial = 0;

  auto* run = app.add_subcommand("run", "Run all trials of a config and write aggregates");
  run->add_option("-c,--config", config, "Experiment config (JSON)")->required();
  run->add_option("-o,--out", out, "Output directory")->required();
  run->add_flag("--traces", traces, "Also write one trace CSV per trial");

  auto* sweep = app.add_subcommand("sweep", "Sweep the initial stepsize over a grid");
  sweep->add_option("-c,--config", config, "Experiment config (JSON)")->required();
  sweep->add_option("-o,--out", out, "Output CSV table")->required();
  sweep->add_flag("--default-grid", default_grid, "Use 15 log-spaced points in [1e-4, 1]");

  auto* verify = app.add_subcommand("verify", "Check a theoretical bound against simulated trials");
  verify->add_option("-c,--config", config, "Experiment config (JSON)")->required();
  verify->add_option("-b,--bound", bound, "Bound to check")->check(CLI::IsMember(bound_names()));
  verify->add_option("-o,--out", out, "Output JSON report")->required();
  verify->add_option("--stride", vopt.stride, "Checkpoint spacing in iterations")->check(CLI::PositiveNumber);
  verify->add_option("--burn-in", vopt.burn_in_fraction, "Recursion burn-in as a fraction of K");
  verify->add_option("--se", vopt.se_multiplier, "Standard-error multiplier for Monte Carlo verdicts");
  verify->add_option("--kstar-draws", vopt.kstar_draws, "k* resamples per trial")->check(CLI::PositiveNumber);
  verify->add_option("--thm1-plugin", vopt.thm1_plugin, "trial_means or per_trial")
      ->transform(CLI::CheckedTransformer(std::map<std::string, Thm1Plugin>{
          {"trial_means", Thm1Plugin::trial_means}, {"per_trial", Thm1Plugin::per_trial}}));
  verify->add_option("--region-radius", region, "Radius of the ball certifying L (default: from x0 and x*)");

  auto* demo = app.add_subcommand("divergence-demo", "Plain SGD on x^4/4 + x^2/2 with alpha_k = alpha1/k");
  demo->add_option("--alpha1", alpha1, "Initial stepsize")->check(CLI::PositiveNumber);
  demo->add_option("--x1", x1, "Starting point");
  demo->add_option("--iterations", iterations, "Iteration cap")->check(CLI::PositiveNumber);
  demo->add_option("--trace", trace_out, "Trace CSV output");
  demo->add_option("--report", report_out, "Bound report JSON output");

  auto* exp = app.add_subcommand("export-instance", "Dump the problem data of a config");
  exp->add_option("-c,--config", config, "Experiment config (JSON)")->required();
  exp->add_option("-o,--out", out, "Output directory (csv) or file (binary)")->required();
  exp->add_option("-f,--format", format, "csv or binary")->check(CLI::IsMember({"csv", "binary"}));
  exp->add_option("--trial", trial, "Trial index (matters only without shared data)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*run) cmd_run(config, out, traces);
    else if (*sweep) cmd_sweep(config, out, default_grid);
    else if (*verify) {
      if (region > 0.0) vopt.region_radius = region;
      return cmd_verify(config, bound, out, vopt);
    } else if (*demo) return cmd_divergence_demo(alpha1, x1, iterations, trace_out, report_out);
    else if (*exp) cmd_export(config, out, format, trial);
  } catch (const Error& e) {
    std::cerr << "error[" << to_string(e.category()) << "]: " << e.what() << '\n';
    return exit_code(e.category());
  } catch (const std::exception& e) {
    std::cerr << "error[internal]: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

#pragma once

// Experiment harness behind the `bbo` command-line tool: a registry of
// benchmark experiments, a flat `key = value` run-configuration format,
// per-seed deterministic execution with metric CSV emission, multi-seed
// fan-out with aggregation, and a declarative compare engine for turning
// CSV results into pass/fail reports.

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "bbo/bbac.hpp"  // MetricRow

namespace bbo {

// Malformed configuration or criteria input. The CLI maps it to exit code 2.
struct config_error : std::runtime_error {
  explicit config_error(const std::string& what) : std::runtime_error(what) {}
};

// ---- Run configuration ------------------------------------------------------
//
// Text format, one statement per line:
//
//   # comment (also allowed after a value)
//   experiment = boyan
//   algorithm  = linear_bbo          # optional; default per experiment
//   seeds      = 1..24               # range, or a comma list: 1,2,7
//   out        = results/boyan      # output directory
//   hidden     = 256,256            # layer widths where a network exists
//   <numeric key> = <value>         # experiment/algorithm hyperparameters
//
// Every other key must be a hyperparameter recognized by the chosen
// experiment + algorithm; unknown or duplicate keys are startup errors.

struct RunConfig {
  std::string experiment;
  std::string algorithm;
  std::vector<std::uint64_t> seeds = {1};
  std::string out_dir = "results";
  std::vector<std::size_t> hidden;        // empty = experiment default
  std::map<std::string, double> params;   // fully defaulted after parsing
};

RunConfig parse_run_config(const std::string& text);
RunConfig load_run_config(const std::string& path);

// ---- Registry ----------------------------------------------------------------

struct ExperimentInfo {
  std::string id;
  std::vector<std::string> algorithms;  // [0] is the default
  std::string description;
};

// The seven experiments: triangle, boyan, random_mdp_on, random_mdp_off,
// puddle_pe, mcar_pe, mcar_control.
const std::vector<ExperimentInfo>& experiment_registry();

// Keys (with defaults) recognized by an experiment + algorithm pair.
std::map<std::string, double> default_params(const std::string& experiment,
                                             const std::string& algorithm);

// Multi-line table of experiments, algorithms and recognized keys.
std::string render_experiment_list();

// ---- Execution ----------------------------------------------------------------

// Runs one seed to completion and returns its metric rows in emission order.
// Deterministic: the rows are a pure function of (config, seed). Throws
// numeric_error / config_error on failure.
std::vector<MetricRow> run_experiment_seed(const RunConfig& cfg,
                                           std::uint64_t seed);

struct SeedOutcome {
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;     // failure reason when !ok
  std::string csv_path;  // written file when ok
};

struct RunResult {
  std::vector<SeedOutcome> seeds;
  std::string aggregate_path;

  bool ok() const;
};

// Runs every seed (in `jobs` parallel workers; seeds share no state), writing
//   <out>/<experiment>_<algorithm>_seed<seed>.csv   seed,step,metric,value
//   <out>/<experiment>_<algorithm>_aggregate.csv    step,metric,mean,std,n
// A failing seed is recorded and the remaining seeds still run; the aggregate
// covers the seeds that completed.
RunResult run(const RunConfig& cfg, std::size_t jobs = 1);

// ---- Metric CSV access ---------------------------------------------------------

// metric -> seed -> (step, value) rows sorted by step (ties keep file order).
using MetricTable =
    std::map<std::string,
             std::map<std::uint64_t,
                      std::vector<std::pair<std::uint64_t, double>>>>;

MetricTable load_metric_csvs(const std::vector<std::string>& paths);

// ---- Compare -------------------------------------------------------------------
//
// Criteria format, one assertion per line ('#' comments allowed):
//
//   assert = final(pe.mse) < 1e-2
//   assert = max(control.eval_return) > 90 [seeds 4/5]
//   assert = ratio_final_peak(rp.ensemble_var) < 0.25
//
// Functions reduce one metric's per-seed series: final (last value), max,
// min, ratio_final_peak (final / running peak). Operators: < <= > >=.
// Each assertion is checked per seed; without a quantifier every seed must
// pass, with `[seeds k/n]` at least k of exactly n present seeds must pass.
// A seed missing the metric fails the assertion and is reported by name.
// An empty criteria list passes.

struct CompareCheck {
  std::string text;        // the assertion as written
  bool pass = false;
  std::size_t pass_seeds = 0;
  std::size_t total_seeds = 0;
  std::string detail;      // per-seed measurements or the failure reason
};

struct CompareReport {
  bool pass = true;
  std::vector<CompareCheck> checks;

  std::string render() const;  // one PASS/FAIL line per check + summary
};

CompareReport compare(const std::string& criteria_text,
                      const std::vector<std::string>& csv_paths);
CompareReport compare_files(const std::string& criteria_path,
                            const std::vector<std::string>& csv_paths);

}  // namespace bbo

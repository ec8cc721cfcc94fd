#include <cstdio>
#include <exception>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "bbo/harness.hpp"

// Exit codes: 0 success / criteria pass, 1 run failure or criteria fail,
// 2 malformed configuration or command line.
int main(int argc, char** argv) {
  CLI::App app{"Bayesian Bellman operator benchmark harness"};
  app.require_subcommand(1);

  std::string config_path, out_override;
  std::size_t jobs = 1;
  CLI::App* run_cmd =
      app.add_subcommand("run", "Execute every seed of a run configuration");
  run_cmd->add_option("config", config_path, "key = value run configuration")
      ->required();
  run_cmd->add_option("--jobs", jobs, "seeds to run in parallel")
      ->capture_default_str();
  run_cmd->add_option("--out", out_override,
                      "override the configured output directory");

  std::string criteria_path;
  std::vector<std::string> csv_paths;
  CLI::App* cmp_cmd = app.add_subcommand(
      "compare", "Check metric CSVs against declarative criteria");
  cmp_cmd->add_option("criteria", criteria_path, "criteria file")->required();
  cmp_cmd->add_option("csvs", csv_paths, "metric CSV files")->required();

  app.add_subcommand("list-experiments",
                     "List experiments, algorithms and recognized keys");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);  // prints the message or requested help
    return rc == 0 ? 0 : 2;
  }

  try {
    if (run_cmd->parsed()) {
      bbo::RunConfig cfg = bbo::load_run_config(config_path);
      if (!out_override.empty()) cfg.out_dir = out_override;
      const bbo::RunResult res = bbo::run(cfg, jobs);
      for (const bbo::SeedOutcome& s : res.seeds) {
        if (s.ok)
          std::printf("seed %llu: ok %s\n",
                      static_cast<unsigned long long>(s.seed),
                      s.csv_path.c_str());
        else
          std::printf("seed %llu: FAILED %s\n",
                      static_cast<unsigned long long>(s.seed),
                      s.error.c_str());
      }
      std::printf("aggregate: %s\n", res.aggregate_path.c_str());
      return res.ok() ? 0 : 1;
    }
    if (cmp_cmd->parsed()) {
      const bbo::CompareReport rep =
          bbo::compare_files(criteria_path, csv_paths);
      std::fputs(rep.render().c_str(), stdout);
      return rep.pass ? 0 : 1;
    }
    std::fputs(bbo::render_experiment_list().c_str(), stdout);
    return 0;
  } catch (const bbo::config_error& e) {
    std::fprintf(stderr, "configuration error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}

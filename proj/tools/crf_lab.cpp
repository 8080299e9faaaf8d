// crf-lab: command-line driver for the verify, flow and twin experiments.
#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "CLI11.hpp"
#include "crf/config.hpp"
#include "crf/errors.hpp"
#include "crf/experiments.hpp"

namespace {

void apply_thread_cap() {
  const char* env = std::getenv("CRF_LAB_THREADS");
  if (env == nullptr || *env == '\0') return;
  const int n = std::atoi(env);
  if (n < 1) {
    std::cerr << "ignoring CRF_LAB_THREADS=" << env << " (expected a positive integer)\n";
    return;
  }
#ifdef _OPENMP
  omp_set_num_threads(n);
#endif
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Conformal Ricci flow laboratory"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::string> output_dir;
  std::optional<std::uint64_t> seed;
  for (const char* name : {"verify", "flow", "twin"}) {
    CLI::App* sub = app.add_subcommand(name, std::string("run the ") + name + " experiment");
    sub->add_option("--config", config_path, "configuration file")->required();
    sub->add_option("--output-dir", output_dir, "directory for reports (overrides the config)");
    sub->add_option("--seed", seed, "random seed (overrides the config)");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : crf::exit_config_error;
  }

  const std::string command = app.get_subcommands().front()->get_name();
  crf::ExperimentConfig cfg;
  try {
    cfg = crf::load_config(config_path);
  } catch (const crf::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return crf::exit_config_error;
  }
  if (!cfg.experiment_given) cfg.experiment = crf::parse_experiment_kind(command);
  if (crf::to_string(cfg.experiment) != command) {
    std::cerr << "config error: " << config_path << " describes a " << crf::to_string(cfg.experiment)
              << " experiment, not " << command << '\n';
    return crf::exit_config_error;
  }
  if (output_dir) cfg.output_dir = *output_dir;
  if (seed) cfg.seed = *seed;

  apply_thread_cap();
  return crf::run_experiment(cfg);
}

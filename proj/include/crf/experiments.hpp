#pragma once

#include <algorithm>
#include <optional>
#include <string>
#include <vector>

#include "crf/config.hpp"
#include "crf/difference.hpp"
#include "crf/flow.hpp"

namespace crf {

/// Process exit codes shared by the CLI and the drivers.
enum ExitCode : int {
  exit_ok = 0,
  exit_config_error = 2,
  exit_numerical_failure = 3,
  exit_threshold_violation = 4,
};

// --- verify ------------------------------------------------------------------

struct IdentityVerdict {
  std::string name;
  bool exact = false;
  std::vector<int> resolutions;
  std::vector<double> residuals;
  std::vector<double> scales;
  /// refinement order between the two finest resolutions
  std::optional<double> order;
  bool pass = false;
};

struct VerifyOutcome {
  int exit_code = exit_ok;
  std::vector<IdentityVerdict> identities;
  std::vector<CheckRow> rows;
  /// names of the failing identities, comma separated
  std::string failures;
};

/// Roundoff bound for an identity that holds exactly on the grid.
inline double roundoff_bound(double scale) { return 1e-12 * std::max(1.0, scale); }
/// Minimum refinement order for the identities that hold up to truncation.
inline constexpr double required_order = 3.5;

/// Seeded random smooth pairs at every configured resolution; writes
/// residuals.csv, identities.csv and summary.json when output_dir is set.
VerifyOutcome run_verify(const ExperimentConfig& cfg);

// --- flow --------------------------------------------------------------------

struct FlowOutcome {
  int exit_code = exit_ok;
  Trajectory trajectory;
  /// sup over accepted steps of trace_law_residual
  double trace_law_max = 0.0;
  /// largest drift over all accepted steps
  double drift_max = 0.0;
  double initial_drift = 0.0;
  int yamabe_iterations = 0;
  std::string message;
};

/// Seeded (normalized) initial data for flow and twin runs.
FlowState initial_state(const ExperimentConfig& cfg, double perturbation, int* yamabe_iterations = nullptr);

/// Output times k * snapshot_stride * dt strictly inside (0, t_final).
std::vector<double> output_times(const ExperimentConfig& cfg);

FlowOutcome run_flow(const ExperimentConfig& cfg);

// --- twin --------------------------------------------------------------------

struct TwinOutcome {
  int exit_code = exit_ok;
  Trajectory a, b;
  double dt_a = 0.0, dt_b = 0.0;
  double floor = 1e-24;
  /// energy of the identical-twin control at its final time
  double control_energy = 0.0;
  EnergyReport energy;
  GronwallVerdict verdict;
  std::vector<EvolutionResidual> h_residuals, A_residuals;
  std::vector<SEvolutionResidual> S_residuals;
  std::vector<double> q_residuals;  // at the residual times
  std::vector<MonitorSeries> monitors;
  std::vector<CheckRow> rows;
  std::string message;
};

TwinOutcome run_twin(const ExperimentConfig& cfg);

/// Validates, dispatches on cfg.experiment and maps errors to exit codes,
/// printing diagnostics to stderr. Used by the CLI.
int run_experiment(const ExperimentConfig& cfg);

}  // namespace crf

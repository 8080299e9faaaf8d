#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "crf/flow.hpp"
#include "crf/grid.hpp"

namespace crf {

enum class ExperimentKind { verify, flow, twin };

/// Flat `key = value` configuration. Every field has a default; see
/// README.md for the key list.
struct ExperimentConfig {
  ExperimentKind experiment = ExperimentKind::verify;
  /// false when the file omits `experiment`; the CLI subcommand then decides
  bool experiment_given = false;

  int dim = 3;
  /// verify uses every entry; flow and twin take exactly one
  std::vector<int> resolution{16};
  double period = 1.0;

  double s0 = -1.0;
  double t_final = 0.1;
  double dt = 1e-3;
  std::uint64_t seed = 1;

  // twin
  double perturbation = 0.0;
  std::string scheme_a = "rk4";
  std::string scheme_b = "rk4";
  /// snapshots every snapshot_stride * dt
  int snapshot_stride = 10;
  /// times for the evolution residuals; empty means every interior snapshot
  std::vector<double> residual_times;
  bool bound_monitors = true;

  std::filesystem::path output_dir;

  // solver and flow controls
  double pressure_tol = 1e-10;
  int pressure_max_iter = 500;
  double yamabe_tol = 1e-7;
  int yamabe_max_iter = 30;
  double cfl = 0.1;
  double constraint_ceiling = 1e-4;
  int reproject_every = 0;
  /// "ricci", or "einstein" for the fixed-point model Ric = (s0/n) g
  std::string model = "ricci";

  // seeded data
  double warp = 1.0;
  double base_amplitude = 0.02;
  int max_mode = 3;

  // verify
  double verify_amplitude = 0.1;
  bool identical_pair = false;
  bool self_test = false;

  GridSpec grid(int resolution) const;
  FlowOptions flow_options() const;
};

/// Parses config text. Throws ConfigError on syntax errors, unknown or
/// repeated keys, and bad values; does not validate cross-field constraints.
ExperimentConfig parse_config(std::istream& in, const std::string& source = "<config>");
ExperimentConfig load_config(const std::filesystem::path& path);

/// Cross-field checks (s0 < 0, dt within the stability ceiling, ...). Throws ConfigError.
void validate(const ExperimentConfig& cfg);

const char* to_string(ExperimentKind kind);
ExperimentKind parse_experiment_kind(const std::string& name);

}  // namespace crf

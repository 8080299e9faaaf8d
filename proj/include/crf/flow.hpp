#pragma once

#include <filesystem>
#include <functional>
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include "crf/elliptic.hpp"
#include "crf/field.hpp"
#include "crf/geometry.hpp"

namespace crf {

/// Supplies the Ricci tensor that drives the flow. The default is the
/// curvature pipeline; tests swap in models with known fixed points.
class FlowModel {
 public:
  virtual ~FlowModel() = default;
  /// `pack` is the curvature of g when the caller already has it.
  virtual TensorField ricci(const MetricField& g, const CurvaturePack* pack) const = 0;
  virtual std::string name() const = 0;
};

class RicciModel final : public FlowModel {
 public:
  TensorField ricci(const MetricField& g, const CurvaturePack* pack) const override;
  std::string name() const override { return "ricci"; }
};

/// Ric := (s0/n) g, for which every metric is a fixed point with p = 0.
class EinsteinModel final : public FlowModel {
 public:
  explicit EinsteinModel(double s0) : s0_(s0) {}
  TensorField ricci(const MetricField& g, const CurvaturePack* pack) const override;
  std::string name() const override { return "einstein"; }

 private:
  double s0_;
};

struct FlowOptions {
  SolveOptions pressure{};
  /// dt must not exceed cfl * (min grid spacing)^2.
  double cfl = 0.1;
  double constraint_ceiling = 1e-4;
  /// Reproject onto s = s0 every k accepted steps; 0 disables.
  int reproject_every = 0;
  YamabeOptions yamabe{};
  std::shared_ptr<const FlowModel> model = std::make_shared<RicciModel>();
};

class FlowState {
 public:
  FlowState() = default;
  FlowState(MetricField g, ScalarField p, double t, double s0);

  const MetricField& g() const { return g_; }
  const ScalarField& p() const { return p_; }
  double t() const { return t_; }
  double s0() const { return s0_; }
  void set_time(double t) { t_ = t; }

  /// Curvature of g, computed on first use and cached.
  const CurvaturePack& curvature() const;
  /// Drops the cached curvature (stored snapshots would otherwise keep it).
  void release_curvature() const { pack_.reset(); }

 private:
  MetricField g_;
  ScalarField p_;
  double t_ = 0.0;
  double s0_ = -1.0;
  mutable std::shared_ptr<const CurvaturePack> pack_;
};

/// Solves the pressure equation for g and returns the state at time t.
FlowState make_state(MetricField g, double s0, double t = 0.0, const FlowOptions& opts = {});

/// V = Ric - (s0/n) g + p g
TensorField compute_V(const MetricField& g, const TensorField& ricci, const ScalarField& p, double s0);
TensorField compute_V(const MetricField& g, const ScalarField& p, double s0);
/// -2 V
TensorField crf_rhs(const MetricField& g, const TensorField& ricci, const ScalarField& p, double s0);
TensorField crf_rhs(const MetricField& g, const ScalarField& p, double s0);

double dt_ceiling(const Grid& grid, double cfl);

/// sup |g^{ij} Ric_ij - s0| with Ric from the model.
double constraint_drift(const FlowState& s, const FlowOptions& opts = {});

/// sup |1/2 g^{ij} (dg/dt)_ij + n p + (s - s0)| with s = g^{ij} Ric_ij from the
/// model; zero up to roundoff for any metric and pressure.
double trace_law_residual(const FlowState& s, const FlowOptions& opts = {});

/// One classical RK4 step with a pressure solve per stage (warm started) and
/// a final re-solve at the new metric. Throws StepError, leaving `state`
/// untouched, when a stage metric is degenerate or a solve fails.
FlowState step(const FlowState& state, double dt, const FlowOptions& opts = {});

struct ReprojectResult {
  FlowState state;
  /// sup over nodes and components of |g_new - g|.
  double correction = 0.0;
  double drift_before = 0.0;
  double drift_after = 0.0;
  EllipticSolveReport report;
};

/// Conformal rescaling back onto s = s0. Throws NormalizationError when the
/// drift is above 1e-2 or the normalization fails.
ReprojectResult reproject(const FlowState& state, const FlowOptions& opts = {});

struct FlowMonitor {
  double t = 0.0;
  double vol = 0.0;
  double drift_sup = 0.0;
  double p_l2 = 0.0;
  int steps_accepted = 0;
};

enum class RunStatus { completed, constraint_exceeded };

struct Trajectory {
  std::vector<FlowState> snapshots;
  std::vector<FlowMonitor> monitors;
  std::string scheme = "rk4";
  double dt = 0.0;
  int steps_accepted = 0;
  RunStatus status = RunStatus::completed;
  std::string message;

  /// Index of the snapshot at time t (within 1e-9 relative), or -1.
  int find(double t) const;
};

/// Called after every accepted step with the new state.
using StepObserver = std::function<void(const FlowState&)>;

/// Integrates from `initial` to time T with steps no larger than dt, landing
/// exactly on every output time (t = 0 is always recorded). Stops early with
/// status constraint_exceeded when the drift passes the ceiling; step failures
/// propagate as StepError with the time reached and the last drift.
Trajectory run(const FlowState& initial, double T, double dt, std::vector<double> outputs,
               const FlowOptions& opts = {}, const StepObserver& observer = {});

/// Columns t, vol, drift_sup, p_l2, steps_accepted.
void write_monitor_csv(std::ostream& out, const Trajectory& traj);
/// Writes g_<k>.crfl, p_<k>.crfl per snapshot plus monitors.csv into dir.
void write_trajectory(const std::filesystem::path& dir, const Trajectory& traj);

}  // namespace crf

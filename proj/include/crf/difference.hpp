#pragma once

#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "crf/field.hpp"
#include "crf/flow.hpp"

namespace crf {

/// Differences between a background solution (g, p) and an alternative
/// (g~, p~) at one time. Index layouts:
///   h(i, j)             = g_ij - g~_ij
///   A(k, i, j)          = Gamma^k_ij - Gamma~^k_ij
///   S(l, i, j, k)       = R^l_ijk - R~^l_ijk
///   U(a, l, i, j, k)    = g^ab nabla_b R~^l_ijk - g~^ab nabla~_b R~^l_ijk
///   ginv_diff(i, j)     = g^ij - g~^ij
struct DiffState {
  TensorField h;
  TensorField A;
  TensorField S;
  ScalarField q;
  /// Empty unless requested; it is the largest field by far.
  std::optional<TensorField> U;
  TensorField ginv_diff;
  double t = 0.0;
};

/// Throws ArgumentError when the states live on different grids or times.
DiffState diff_state(const FlowState& sol, const FlowState& alt, bool with_u = true);

/// Mixed tensor U above, built from the curvature packs of both metrics.
TensorField u_tensor(const MetricField& g, const TensorField& gamma, const MetricField& alt,
                     const TensorField& alt_gamma, const TensorField& alt_riemann);

struct IdentityResidual {
  std::string name;
  /// sup over nodes and components of |lhs - rhs|
  double residual = 0.0;
  /// sup |lhs|, the scale against which roundoff is judged
  double scale = 0.0;
  /// true when both sides agree in exact arithmetic on the grid, so only
  /// roundoff separates them
  bool exact = false;
};

/// The two-metric identities, each as sup |lhs - rhs| with both sides built
/// by separate code paths. `f` is a test function, `x` a (1,1) test tensor.
std::vector<IdentityResidual> lemma_residuals(const MetricField& g, const MetricField& alt,
                                              const ScalarField& f, const TensorField& x);

// --- evolution equations ---------------------------------------------------

/// Right-hand side of the exact evolution of R^l_ijk under dg/dt = -2V,
/// written with the rough Laplacian of R.
TensorField riemann_evolution_rhs(const FlowState& s);

struct EvolutionResidual {
  double t = 0.0;
  /// snapshot spacing used by the centered difference
  double delta = 0.0;
  double residual = 0.0;
  /// sup of the centered time difference, for scale
  double scale = 0.0;
};

/// sup |centered difference of h - (-2 S^k_kij + 2 (s0/n) h - 2 q g - 2 p~ h)|
EvolutionResidual h_evolution_residual(const Trajectory& traj, const Trajectory& alt, double t);
/// Same for A against the connection variation of V and V~.
EvolutionResidual A_evolution_residual(const Trajectory& traj, const Trajectory& alt, double t);

struct SEvolutionResidual : EvolutionResidual {
  /// sup |(Delta R - Delta~ R~) - (nabla_a(g^ab nabla_b R - g~^ab nabla~_b R~)
  ///       + (nabla_a - nabla~_a)(g~^ab nabla~_b R~))|
  double laplacian_crosscheck = 0.0;
};
SEvolutionResidual S_evolution_residual(const Trajectory& traj, const Trajectory& alt, double t);

/// sup |(n-1)(Delta p - Delta~ p~) + s0 q + <Ric°, Ric°>_g - <Ric~°, Ric~°>_g~|
/// with Ric° = Ric - (s0/n) g.
double q_source_residual(const FlowState& sol, const FlowState& alt);

// --- energies ----------------------------------------------------------------

struct EnergyReport {
  std::vector<double> times;
  std::vector<double> H, A_energy, S_energy, D, E;
  /// least-squares slope of log E over samples above the floor; nullopt when
  /// fewer than two samples qualify
  std::optional<double> fitted_rate;
  double fit_quality = 0.0;
  double floor = 1e-24;
};

/// Energies of one difference state, measured with the background metric g.
struct EnergySample {
  double H = 0.0, A = 0.0, S = 0.0, D = 0.0;
  double E() const { return H + A + S; }
};
EnergySample energy_sample(const DiffState& d, const FlowState& background);

/// floor = max(1e-24, 100 * control_energy)
double noise_floor(double control_energy);

/// Builds the report from per-time samples and fits the rate.
EnergyReport energy_report(std::vector<double> times, const std::vector<EnergySample>& samples,
                           double floor);

/// `metric_source` supplies the background metric at each diff time.
EnergyReport energies(const std::vector<DiffState>& diffs, const Trajectory& metric_source,
                      double floor = 1e-24);

/// Least-squares slope of log E over samples with E > floor, and R^2.
void fit_rate(EnergyReport& report);

struct GronwallVerdict {
  /// E(0) above the floor: the perturbed branch
  bool perturbed = false;
  /// max_t E(t) / (E(0) exp(N t)) for perturbed runs
  double growth_ratio = 0.0;
  /// max_t E(t) / floor for runs starting at the floor
  double floor_ratio = 0.0;
  std::optional<double> rate;
  double fit_quality = 0.0;
};
GronwallVerdict gronwall_check(const EnergyReport& report);

// --- bound monitors --------------------------------------------------------

struct MonitorSeries {
  std::string name;
  std::vector<double> times;
  /// nullopt where the denominator sits below the noise floor
  std::vector<std::optional<double>> ratios;
  /// largest finite ratio, nullopt when none
  std::optional<double> max_ratio() const;
};

/// Pointwise monitors at one time: the lhs of each derivative inequality
/// against its right side without the constant.
struct PointwiseBounds {
  double h_deriv = 0.0;  // L2 |dh/dt| / L2 ((|s0| + sup|p~|)|h| + |S| + |q|)
  double h3_constant = 0.0;  // max over nodes of the same ratio
  double A_deriv = 0.0;  // L2 |dA/dt| / L2 (|h| + |A| + |nabla S| + |nabla q|)
  double S_deriv = 0.0;  // L2 |dS/dt - Delta S - div U| / L2 (|h|+|A|+|S|+|q|+|nabla nabla q|)
  double q = 0.0;         // int q^2 / E
  double grad_q = 0.0;    // int |nabla q|^2 / E
  double hess_q = 0.0;    // int |nabla nabla q|^2 / E
  double q_h2_ratio = 0.0;  // ||q||_H2 / (||Lq|| + ||q||_H1)
  double E = 0.0;
};
PointwiseBounds pointwise_bounds(const FlowState& sol, const FlowState& alt);

/// Ratio table over a twin pair of trajectories sampled at their common
/// snapshot times. Energy-derivative monitors use centered differences of the
/// energy series and skip the end points.
std::vector<MonitorSeries> bound_monitors(const Trajectory& traj, const Trajectory& alt,
                                          double floor);

// --- reports -----------------------------------------------------------------

struct CheckRow {
  std::string check;
  double t = 0.0;
  double residual = 0.0;
  std::optional<double> order_est;
};

/// Columns check, t, residual, order_est (empty when not applicable).
void write_check_csv(std::ostream& out, const std::vector<CheckRow>& rows);
/// {identity: {max_residual, conv_order}}; conv_order null when absent.
void write_check_json(std::ostream& out, const std::vector<CheckRow>& rows);
/// Columns t, H, A, S, D, E.
void write_energy_csv(std::ostream& out, const EnergyReport& report);
/// Columns monitor, t, ratio.
void write_monitor_table(std::ostream& out, const std::vector<MonitorSeries>& series);

/// log2(coarse / fine) for a resolution doubling; log(coarse/fine)/log(ratio)
/// in general.
double convergence_order(double coarse, double fine, double refinement = 2.0);

}  // namespace crf

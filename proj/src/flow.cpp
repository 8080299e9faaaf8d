#include "crf/flow.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <ostream>

#include "crf/io.hpp"
#include "crf/ops.hpp"
#include "crf/snapshot.hpp"

namespace crf {

TensorField RicciModel::ricci(const MetricField& g, const CurvaturePack* pack) const {
  return pack != nullptr ? pack->ricci : curvature(g).ricci;
}

TensorField EinsteinModel::ricci(const MetricField& g, const CurvaturePack*) const {
  return g.tensor() * (s0_ / g.dim());
}

FlowState::FlowState(MetricField g, ScalarField p, double t, double s0)
    : g_(std::move(g)), p_(std::move(p)), t_(t), s0_(s0) {
  if (!(s0 < 0.0)) throw DomainError("s0 must be negative");
  require_same_grid(g_.grid(), p_.grid(), "FlowState");
}

const CurvaturePack& FlowState::curvature() const {
  if (!pack_) pack_ = std::make_shared<const CurvaturePack>(crf::curvature(g_));
  return *pack_;
}

namespace {

const FlowModel& model_of(const FlowOptions& opts) {
  if (!opts.model) throw ArgumentError("flow options carry no model");
  return *opts.model;
}

}  // namespace

FlowState make_state(MetricField g, double s0, double t, const FlowOptions& opts) {
  const CurvaturePack pack = curvature(g);
  const TensorField ric = model_of(opts).ricci(g, &pack);
  auto [p, report] = solve_pressure(g, ric, s0, opts.pressure);
  return FlowState(std::move(g), std::move(p), t, s0);
}

TensorField compute_V(const MetricField& g, const TensorField& ricci, const ScalarField& p, double s0) {
  require_same_grid(g.grid(), p.grid(), "compute_V");
  const int d = g.dim();
  const std::size_t nc = static_cast<std::size_t>(d * d);
  TensorField v(g.grid_ptr(), Valence{0, 2});
  const double c = s0 / d;
  for (std::size_t n = 0; n < g.nodes(); ++n) {
    const double* r = ricci.node(n);
    const double* gg = g.tensor().node(n);
    double* o = v.node(n);
    for (std::size_t k = 0; k < nc; ++k) o[k] = r[k] - c * gg[k] + p[n] * gg[k];
  }
  return v;
}

TensorField compute_V(const MetricField& g, const ScalarField& p, double s0) {
  return compute_V(g, curvature(g).ricci, p, s0);
}

TensorField crf_rhs(const MetricField& g, const TensorField& ricci, const ScalarField& p, double s0) {
  return compute_V(g, ricci, p, s0) * -2.0;
}

TensorField crf_rhs(const MetricField& g, const ScalarField& p, double s0) {
  return compute_V(g, p, s0) * -2.0;
}

double dt_ceiling(const Grid& grid, double cfl) {
  const double h = grid.min_spacing();
  return cfl * h * h;
}

double constraint_drift(const FlowState& s, const FlowOptions& opts) {
  const TensorField ric = model_of(opts).ricci(s.g(), &s.curvature());
  const ScalarField tr = einsum("ab,ab->", 0, s.g().inverse(), ric).to_scalar();
  double m = 0.0;
  for (std::size_t p = 0; p < tr.size(); ++p) m = std::max(m, std::abs(tr[p] - s.s0()));
  return m;
}

double trace_law_residual(const FlowState& s, const FlowOptions& opts) {
  const TensorField ric = model_of(opts).ricci(s.g(), &s.curvature());
  const TensorField& ginv = s.g().inverse();
  const ScalarField half_tr = einsum("ab,ab->", 0, ginv, crf_rhs(s.g(), ric, s.p(), s.s0())).to_scalar() * 0.5;
  const ScalarField sc = einsum("ab,ab->", 0, ginv, ric).to_scalar();
  const double n = s.g().dim();
  double m = 0.0;
  for (std::size_t k = 0; k < sc.size(); ++k) {
    m = std::max(m, std::abs(half_tr[k] + n * s.p()[k] + (sc[k] - s.s0())));
  }
  return m;
}

FlowState step(const FlowState& state, double dt, const FlowOptions& opts) {
  if (!(dt > 0.0)) throw ArgumentError("step: dt must be positive");
  const double ceiling = dt_ceiling(state.g().grid(), opts.cfl);
  if (dt > ceiling * (1.0 + 1e-12)) {
    throw ArgumentError("step: dt " + format_real(dt) + " exceeds the stability ceiling " +
                        format_real(ceiling));
  }
  const FlowModel& model = model_of(opts);
  const double s0 = state.s0();
  try {
    const TensorField ric1 = model.ricci(state.g(), &state.curvature());
    const TensorField k1 = crf_rhs(state.g(), ric1, state.p(), s0);

    auto stage = [&](const TensorField& incr, double c, const ScalarField& guess, ScalarField& p_out) {
      TensorField gt = state.g().tensor();
      gt.axpy(c * dt, incr);
      const MetricField g(std::move(gt));
      const CurvaturePack pack = curvature(g);
      const TensorField ric = model.ricci(g, &pack);
      p_out = solve_pressure(g, ric, s0, opts.pressure, &guess).first;
      return crf_rhs(g, ric, p_out, s0);
    };
    ScalarField p2, p3, p4;
    const TensorField k2 = stage(k1, 0.5, state.p(), p2);
    const TensorField k3 = stage(k2, 0.5, p2, p3);
    const TensorField k4 = stage(k3, 1.0, p3, p4);

    TensorField incr = k1;
    incr.axpy(2.0, k2);
    incr.axpy(2.0, k3);
    incr += k4;
    TensorField gt = state.g().tensor();
    gt.axpy(dt / 6.0, incr);
    MetricField g(std::move(gt));
    const CurvaturePack pack = curvature(g);
    const TensorField ric = model.ricci(g, &pack);
    ScalarField p = solve_pressure(g, ric, s0, opts.pressure, &p4).first;
    if (!p.all_finite() || !g.tensor().all_finite()) throw StepError("non-finite state");
    return FlowState(std::move(g), std::move(p), state.t() + dt, s0);
  } catch (const GeometryError& e) {
    throw StepError(std::string("step at t = ") + format_real(state.t()) + ": " + e.what());
  } catch (const SolverError& e) {
    throw StepError(std::string("step at t = ") + format_real(state.t()) + ": " + e.what());
  }
}

ReprojectResult reproject(const FlowState& state, const FlowOptions& opts) {
  ReprojectResult res;
  res.drift_before = constraint_drift(state, opts);
  if (res.drift_before > 1e-2) {
    throw NormalizationError("reproject: drift " + format_real(res.drift_before) +
                             " is outside the Newton basin");
  }
  YamabeResult y = yamabe_normalize(state.g(), state.s0(), opts.yamabe);
  res.report = y.report;
  TensorField diff = y.metric.tensor();
  diff -= state.g().tensor();
  res.correction = diff.max_abs();
  res.state = make_state(std::move(y.metric), state.s0(), state.t(), opts);
  res.drift_after = constraint_drift(res.state, opts);
  return res;
}

int Trajectory::find(double t) const {
  for (std::size_t i = 0; i < snapshots.size(); ++i) {
    if (std::abs(snapshots[i].t() - t) <= 1e-9 * std::max(1.0, std::abs(t))) return static_cast<int>(i);
  }
  return -1;
}

namespace {

FlowMonitor monitor(const FlowState& s, int steps, const FlowOptions& opts) {
  FlowMonitor m;
  m.t = s.t();
  m.vol = integrate(ScalarField(s.g().grid_ptr(), 1.0), s.g());
  m.drift_sup = constraint_drift(s, opts);
  m.p_l2 = l2_norm(s.p(), s.g());
  m.steps_accepted = steps;
  return m;
}

}  // namespace

Trajectory run(const FlowState& initial, double T, double dt, std::vector<double> outputs,
               const FlowOptions& opts, const StepObserver& observer) {
  if (!(T >= 0.0)) throw ArgumentError("run: T must be non-negative");
  if (!(dt > 0.0)) throw ArgumentError("run: dt must be positive");
  if (dt > dt_ceiling(initial.g().grid(), opts.cfl) * (1.0 + 1e-12)) {
    throw ArgumentError("run: dt exceeds the stability ceiling");
  }
  for (double t : outputs) {
    if (t < 0.0 || t > T * (1.0 + 1e-12)) throw ArgumentError("run: output time outside [0, T]");
  }
  outputs.push_back(T);
  std::sort(outputs.begin(), outputs.end());
  std::vector<double> targets;
  for (double t : outputs) {
    const double last = targets.empty() ? 0.0 : targets.back();
    if (t > last + 1e-12 * std::max(1.0, T)) targets.push_back(std::min(t, T));
  }

  Trajectory traj;
  traj.dt = dt;
  FlowState state = initial;
  state.set_time(0.0);
  traj.snapshots.push_back(state);
  traj.snapshots.back().release_curvature();
  traj.monitors.push_back(monitor(state, 0, opts));
  double drift = traj.monitors.back().drift_sup;
  int since_reprojection = 0;

  for (double target : targets) {
    const double span = target - state.t();
    const auto nsteps = static_cast<long>(std::ceil(span / dt - 1e-9));
    const double h = span / static_cast<double>(std::max(1L, nsteps));
    const double t_start = state.t();
    for (long k = 1; k <= nsteps; ++k) {
      try {
        state = step(state, h, opts);
      } catch (const StepError& e) {
        throw StepError(std::string(e.what()) + " (reached t = " + format_real(state.t()) +
                        ", last drift " + format_real(drift) + ")");
      }
      state.set_time(k == nsteps ? target : t_start + static_cast<double>(k) * h);
      ++traj.steps_accepted;
      if (opts.reproject_every > 0 && ++since_reprojection >= opts.reproject_every) {
        state = reproject(state, opts).state;
        since_reprojection = 0;
      }
      drift = constraint_drift(state, opts);
      if (observer) observer(state);
      if (drift > opts.constraint_ceiling) {
        traj.status = RunStatus::constraint_exceeded;
        traj.message = "constraint drift " + format_real(drift) + " exceeded ceiling " +
                       format_real(opts.constraint_ceiling) + " at t = " + format_real(state.t());
        return traj;
      }
    }
    traj.snapshots.push_back(state);
    traj.snapshots.back().release_curvature();
    traj.monitors.push_back(monitor(state, traj.steps_accepted, opts));
  }
  return traj;
}

void write_monitor_csv(std::ostream& out, const Trajectory& traj) {
  out << "t,vol,drift_sup,p_l2,steps_accepted\n";
  for (const FlowMonitor& m : traj.monitors) {
    out << format_real(m.t) << ',' << format_real(m.vol) << ',' << format_real(m.drift_sup) << ','
        << format_real(m.p_l2) << ',' << m.steps_accepted << '\n';
  }
}

void write_trajectory(const std::filesystem::path& dir, const Trajectory& traj) {
  std::filesystem::create_directories(dir);
  for (std::size_t i = 0; i < traj.snapshots.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "%04zu", i);
    write_snapshot(dir / ("g_" + std::string(name) + ".crfl"), traj.snapshots[i].g().tensor());
    write_snapshot(dir / ("p_" + std::string(name) + ".crfl"), traj.snapshots[i].p());
  }
  std::ofstream csv(dir / "monitors.csv");
  if (!csv) throw Error("cannot write " + (dir / "monitors.csv").string());
  write_monitor_csv(csv, traj);
}

}  // namespace crf

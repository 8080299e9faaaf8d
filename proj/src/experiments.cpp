#include "crf/experiments.hpp"

#include <cmath>
#include <fstream>
#include <iostream>

#include "crf/errors.hpp"
#include "crf/io.hpp"
#include "crf/ops.hpp"
#include "crf/random.hpp"
#include "json.hpp"

namespace crf {

namespace {

using json = nlohmann::ordered_json;

// Random streams; fixed so that a seed pins every field.
constexpr std::uint64_t stream_metric = 1;
constexpr std::uint64_t stream_alt_metric = 2;
constexpr std::uint64_t stream_function = 3;
constexpr std::uint64_t stream_tensor = 4;
constexpr std::uint64_t stream_perturbation = 77;

std::ofstream open_out(const std::filesystem::path& path) {
  std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  return out;
}

void write_json(const std::filesystem::path& path, const json& j) {
  auto out = open_out(path);
  out << j.dump(2) << '\n';
}

json optional_number(const std::optional<double>& v) {
  if (v && std::isfinite(*v)) return *v;
  return nullptr;
}

double scheme_dt(const std::string& scheme, double dt) { return scheme == "rk4_half" ? 0.5 * dt : dt; }

}  // namespace

// --- verify ------------------------------------------------------------------

VerifyOutcome run_verify(const ExperimentConfig& cfg) {
  VerifyOutcome out;
  std::vector<int> resolutions = cfg.resolution;
  std::sort(resolutions.begin(), resolutions.end());
  resolutions.erase(std::unique(resolutions.begin(), resolutions.end()), resolutions.end());

  for (int res : resolutions) {
    const GridPtr grid = make_grid(cfg.grid(res));
    const MetricField g = random_smooth_metric(grid, cfg.seed, stream_metric, cfg.verify_amplitude, cfg.max_mode);
    const MetricField alt = cfg.identical_pair
                                ? g
                                : random_smooth_metric(grid, cfg.seed, stream_alt_metric,
                                                       cfg.verify_amplitude, cfg.max_mode);
    const ScalarField f = random_smooth_scalar(grid, cfg.seed, stream_function, 0.5, cfg.max_mode);
    const TensorField x = random_smooth_tensor(grid, Valence{1, 1}, cfg.seed, stream_tensor, 0.5, cfg.max_mode);
    std::vector<IdentityResidual> rs = lemma_residuals(g, alt, f, x);

    if (cfg.self_test) {
      // harness check: the inverse-difference formula with its sign flipped
      const TensorField h = g.tensor() - alt.tensor();
      const TensorField lhs = g.inverse() - alt.inverse();
      const TensorField flipped = einsum("ik,jl,kl->ij", 2, g.inverse(), alt.inverse(), h);
      rs.push_back({"self_test_flipped_ginv", (lhs - flipped).max_abs(), lhs.max_abs(), true});
    }

    for (const IdentityResidual& r : rs) {
      auto it = std::find_if(out.identities.begin(), out.identities.end(),
                             [&](const IdentityVerdict& v) { return v.name == r.name; });
      if (it == out.identities.end()) {
        out.identities.push_back({r.name, r.exact, {}, {}, {}, std::nullopt, false});
        it = std::prev(out.identities.end());
      }
      it->resolutions.push_back(res);
      it->residuals.push_back(r.residual);
      it->scales.push_back(r.scale);
    }
  }

  for (IdentityVerdict& v : out.identities) {
    bool at_roundoff = true;
    for (std::size_t k = 0; k < v.residuals.size(); ++k) {
      at_roundoff = at_roundoff && v.residuals[k] <= roundoff_bound(v.scales[k]);
    }
    const std::size_t m = v.residuals.size();
    if (m >= 2) {
      v.order = convergence_order(v.residuals[m - 2], v.residuals[m - 1],
                                  static_cast<double>(v.resolutions[m - 1]) / v.resolutions[m - 2]);
    }
    if (v.exact) {
      v.pass = at_roundoff;
    } else {
      v.pass = at_roundoff || (v.order && std::isfinite(*v.order) && *v.order >= required_order);
    }
    if (!v.pass) out.failures += (out.failures.empty() ? "" : ", ") + v.name;
    for (std::size_t k = 0; k < m; ++k) {
      CheckRow row{v.name, 0.0, v.residuals[k], std::nullopt};
      if (k + 1 == m && !v.exact) row.order_est = v.order;
      out.rows.push_back(row);
    }
  }
  out.exit_code = out.failures.empty() ? exit_ok : exit_threshold_violation;

  if (!cfg.output_dir.empty()) {
    auto csv = open_out(cfg.output_dir / "residuals.csv");
    write_check_csv(csv, out.rows);
    auto js = open_out(cfg.output_dir / "residuals.json");
    write_check_json(js, out.rows);
    auto table = open_out(cfg.output_dir / "identities.csv");
    table << "identity,resolution,residual,scale,exact\n";
    for (const IdentityVerdict& v : out.identities) {
      for (std::size_t k = 0; k < v.residuals.size(); ++k) {
        table << v.name << ',' << v.resolutions[k] << ',' << format_real(v.residuals[k]) << ','
              << format_real(v.scales[k]) << ',' << (v.exact ? "true" : "false") << '\n';
      }
    }
    json s;
    s["experiment"] = "verify";
    s["seed"] = cfg.seed;
    s["resolutions"] = resolutions;
    s["pass"] = out.failures.empty();
    json ids = json::object();
    for (const IdentityVerdict& v : out.identities) {
      ids[v.name] = {{"exact", v.exact},
                     {"max_residual", *std::max_element(v.residuals.begin(), v.residuals.end())},
                     {"conv_order", optional_number(v.order)},
                     {"pass", v.pass}};
    }
    s["identities"] = ids;
    write_json(cfg.output_dir / "summary.json", s);
  }
  return out;
}

// --- flow --------------------------------------------------------------------

FlowState initial_state(const ExperimentConfig& cfg, double perturbation, int* yamabe_iterations) {
  const GridPtr grid = make_grid(cfg.grid(cfg.resolution.front()));
  MetricField base = seeded_base_metric(grid, cfg.seed, cfg.warp, cfg.base_amplitude);
  if (perturbation > 0.0) {
    TensorField t = base.tensor();
    t.axpy(perturbation, random_smooth_symmetric(grid, cfg.seed, stream_perturbation, 1.0, cfg.max_mode));
    base = MetricField(std::move(t));
  }
  const FlowOptions opts = cfg.flow_options();
  if (cfg.model == "einstein") {
    if (yamabe_iterations) *yamabe_iterations = 0;
    return make_state(std::move(base), cfg.s0, 0.0, opts);
  }
  YamabeResult y = yamabe_normalize(base, cfg.s0, opts.yamabe);
  if (yamabe_iterations) *yamabe_iterations = y.report.iterations;
  return make_state(std::move(y.metric), cfg.s0, 0.0, opts);
}

std::vector<double> output_times(const ExperimentConfig& cfg) {
  std::vector<double> out;
  const double every = cfg.snapshot_stride * cfg.dt;
  for (int k = 1;; ++k) {
    const double t = k * every;
    if (t >= cfg.t_final * (1.0 - 1e-12)) break;
    out.push_back(t);
  }
  return out;
}

FlowOutcome run_flow(const ExperimentConfig& cfg) {
  FlowOutcome out;
  const FlowOptions opts = cfg.flow_options();
  const FlowState init = initial_state(cfg, 0.0, &out.yamabe_iterations);
  out.initial_drift = constraint_drift(init, opts);
  out.trace_law_max = trace_law_residual(init, opts);
  out.drift_max = out.initial_drift;
  const StepObserver observe = [&](const FlowState& s) {
    out.trace_law_max = std::max(out.trace_law_max, trace_law_residual(s, opts));
    out.drift_max = std::max(out.drift_max, constraint_drift(s, opts));
  };
  out.trajectory = run(init, cfg.t_final, cfg.dt, output_times(cfg), opts, observe);
  out.trajectory.scheme = "rk4";
  if (out.trajectory.status == RunStatus::constraint_exceeded) {
    out.exit_code = exit_threshold_violation;
    out.message = out.trajectory.message;
  }

  if (!cfg.output_dir.empty()) {
    write_trajectory(cfg.output_dir / "trajectory", out.trajectory);
    const Trajectory& tr = out.trajectory;
    json s;
    s["experiment"] = "flow";
    s["seed"] = cfg.seed;
    s["resolution"] = cfg.resolution.front();
    s["dt"] = cfg.dt;
    s["t_final"] = cfg.t_final;
    s["t_reached"] = tr.snapshots.back().t();
    s["steps_accepted"] = tr.steps_accepted;
    s["status"] = tr.status == RunStatus::completed ? "completed" : "constraint_exceeded";
    s["message"] = out.message;
    s["yamabe_iterations"] = out.yamabe_iterations;
    s["initial_drift"] = out.initial_drift;
    s["drift_max"] = out.drift_max;
    s["trace_law_max"] = out.trace_law_max;
    s["volume_initial"] = tr.monitors.front().vol;
    s["volume_final"] = tr.monitors.back().vol;
    write_json(cfg.output_dir / "summary.json", s);
  }
  return out;
}

// --- twin --------------------------------------------------------------------

namespace {

std::vector<EnergySample> energy_series(const Trajectory& a, const Trajectory& b, std::vector<double>& times) {
  std::vector<EnergySample> samples;
  times.clear();
  for (const FlowState& s : a.snapshots) {
    const int j = b.find(s.t());
    if (j < 0) continue;
    const FlowState& o = b.snapshots[static_cast<std::size_t>(j)];
    samples.push_back(energy_sample(diff_state(s, o, false), s));
    times.push_back(s.t());
    s.release_curvature();
    o.release_curvature();
  }
  return samples;
}

}  // namespace

TwinOutcome run_twin(const ExperimentConfig& cfg) {
  TwinOutcome out;
  const FlowOptions opts = cfg.flow_options();
  const FlowState init_a = initial_state(cfg, 0.0);
  const FlowState init_b = cfg.perturbation > 0.0 ? initial_state(cfg, cfg.perturbation) : init_a;
  const std::vector<double> outputs = output_times(cfg);
  out.dt_a = scheme_dt(cfg.scheme_a, cfg.dt);
  out.dt_b = scheme_dt(cfg.scheme_b, cfg.dt);

  out.a = run(init_a, cfg.t_final, out.dt_a, outputs, opts);
  out.a.scheme = cfg.scheme_a;
  out.b = run(init_b, cfg.t_final, out.dt_b, outputs, opts);
  out.b.scheme = cfg.scheme_b;
  for (const Trajectory* t : {&out.a, &out.b}) {
    if (t->status != RunStatus::completed) {
      out.exit_code = exit_threshold_violation;
      out.message = (t == &out.a ? "run A: " : "run B: ") + t->message;
      return out;
    }
  }

  // Noise floor from an identical-twin control. When B already repeats A it
  // is its own control; the floor then stays at the roundoff default.
  const bool identical = cfg.perturbation == 0.0 && cfg.scheme_a == cfg.scheme_b;
  std::vector<double> times;
  if (!identical) {
    const Trajectory control = run(init_a, cfg.t_final, out.dt_a, outputs, opts);
    for (const EnergySample& e : energy_series(out.a, control, times)) {
      out.control_energy = std::max(out.control_energy, e.E());
    }
  }
  out.floor = noise_floor(out.control_energy);

  const std::vector<EnergySample> samples = energy_series(out.a, out.b, times);
  out.energy = energy_report(times, samples, out.floor);
  out.verdict = gronwall_check(out.energy);

  std::vector<double> residual_times = cfg.residual_times;
  if (residual_times.empty() && times.size() >= 3) {
    residual_times.assign(times.begin() + 1, times.end() - 1);
  }
  for (double t : residual_times) {
    out.h_residuals.push_back(h_evolution_residual(out.a, out.b, t));
    out.A_residuals.push_back(A_evolution_residual(out.a, out.b, t));
    out.S_residuals.push_back(S_evolution_residual(out.a, out.b, t));
    const int i = out.a.find(t), j = out.b.find(t);
    if (i < 0 || j < 0) throw ArgumentError("run_twin: no snapshot at residual time " + format_real(t));
    const FlowState& sa = out.a.snapshots[static_cast<std::size_t>(i)];
    const FlowState& sb = out.b.snapshots[static_cast<std::size_t>(j)];
    out.q_residuals.push_back(q_source_residual(sa, sb));
    sa.release_curvature();
    sb.release_curvature();
    out.rows.push_back({"h_evolution", t, out.h_residuals.back().residual, std::nullopt});
    out.rows.push_back({"A_evolution", t, out.A_residuals.back().residual, std::nullopt});
    out.rows.push_back({"S_evolution", t, out.S_residuals.back().residual, std::nullopt});
    out.rows.push_back({"S_laplacian_crosscheck", t, out.S_residuals.back().laplacian_crosscheck, std::nullopt});
    out.rows.push_back({"q_source", t, out.q_residuals.back(), std::nullopt});
  }
  if (cfg.bound_monitors) out.monitors = bound_monitors(out.a, out.b, out.floor);

  if (out.verdict.perturbed) {
    if (!(out.verdict.growth_ratio <= 1.5) || !(out.verdict.fit_quality >= 0.9)) {
      out.exit_code = exit_threshold_violation;
      out.message = "Gronwall verdict: growth ratio " + format_real(out.verdict.growth_ratio) +
                    ", fit quality " + format_real(out.verdict.fit_quality);
    }
  } else if (identical && !(out.verdict.floor_ratio <= 10.0)) {
    out.exit_code = exit_threshold_violation;
    out.message = "identical twins separated: max E / floor = " + format_real(out.verdict.floor_ratio);
  }

  if (!cfg.output_dir.empty()) {
    const auto& dir = cfg.output_dir;
    auto e = open_out(dir / "energy.csv");
    write_energy_csv(e, out.energy);
    auto r = open_out(dir / "residuals.csv");
    write_check_csv(r, out.rows);
    auto rj = open_out(dir / "residuals.json");
    write_check_json(rj, out.rows);
    auto m = open_out(dir / "monitors.csv");
    write_monitor_table(m, out.monitors);
    auto ma = open_out(dir / "run_a" / "monitors.csv");
    write_monitor_csv(ma, out.a);
    auto mb = open_out(dir / "run_b" / "monitors.csv");
    write_monitor_csv(mb, out.b);

    json s;
    s["experiment"] = "twin";
    s["seed"] = cfg.seed;
    s["resolution"] = cfg.resolution.front();
    s["perturbation"] = cfg.perturbation;
    s["scheme_a"] = cfg.scheme_a;
    s["scheme_b"] = cfg.scheme_b;
    s["dt_a"] = out.dt_a;
    s["dt_b"] = out.dt_b;
    s["t_final"] = cfg.t_final;
    s["noise_floor"] = out.floor;
    s["control_energy"] = out.control_energy;
    s["E_initial"] = out.energy.E.front();
    s["E_final"] = out.energy.E.back();
    s["fitted_rate"] = optional_number(out.energy.fitted_rate);
    s["fit_quality"] = out.energy.fit_quality;
    s["gronwall"] = {{"perturbed", out.verdict.perturbed},
                     {"growth_ratio", out.verdict.growth_ratio},
                     {"floor_ratio", out.verdict.floor_ratio}};
    json mon = json::object();
    for (const MonitorSeries& series : out.monitors) mon[series.name] = optional_number(series.max_ratio());
    s["monitor_max"] = mon;
    s["exit_code"] = out.exit_code;
    s["message"] = out.message;
    write_json(dir / "summary.json", s);
  }
  return out;
}

int run_experiment(const ExperimentConfig& cfg) {
  try {
    validate(cfg);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return exit_config_error;
  }
  try {
    switch (cfg.experiment) {
      case ExperimentKind::verify: {
        const VerifyOutcome o = run_verify(cfg);
        for (const IdentityVerdict& v : o.identities) {
          std::cout << (v.pass ? "ok    " : "FAIL  ") << v.name << "  residual "
                    << format_real(v.residuals.back());
          if (!v.exact && v.order) std::cout << "  order " << format_real(*v.order);
          std::cout << '\n';
        }
        if (o.exit_code != exit_ok) std::cerr << "failing identities: " << o.failures << '\n';
        return o.exit_code;
      }
      case ExperimentKind::flow: {
        const FlowOutcome o = run_flow(cfg);
        std::cout << "t reached " << format_real(o.trajectory.snapshots.back().t()) << ", drift max "
                  << format_real(o.drift_max) << ", trace law " << format_real(o.trace_law_max) << '\n';
        if (o.exit_code != exit_ok) std::cerr << o.message << '\n';
        return o.exit_code;
      }
      case ExperimentKind::twin: {
        const TwinOutcome o = run_twin(cfg);
        std::cout << "E(0) " << format_real(o.energy.E.front()) << ", E(T) " << format_real(o.energy.E.back())
                  << ", floor " << format_real(o.floor) << '\n';
        if (o.exit_code != exit_ok) std::cerr << o.message << '\n';
        return o.exit_code;
      }
    }
  } catch (const StepError& e) {
    std::cerr << "step failure: " << e.what() << '\n';
  } catch (const SolverError& e) {
    std::cerr << "solver failure: " << e.what() << '\n';
  } catch (const NormalizationError& e) {
    std::cerr << "normalization failure: " << e.what() << '\n';
  } catch (const GeometryError& e) {
    std::cerr << "geometry failure: " << e.what() << '\n';
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "i/o error: " << e.what() << '\n';
  }
  return exit_numerical_failure;
}

}  // namespace crf

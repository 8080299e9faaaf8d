#include "crf/difference.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <ostream>

#include "json.hpp"

#include "crf/elliptic.hpp"
#include "crf/geometry.hpp"
#include "crf/io.hpp"
#include "crf/ops.hpp"

namespace crf {

namespace {

bool same_time(double a, double b) {
  return std::abs(a - b) <= 1e-9 * std::max(1.0, std::abs(a));
}

void require_pair(const FlowState& a, const FlowState& b, const char* what) {
  require_same_grid(a.g().grid(), b.g().grid(), what);
  if (!same_time(a.t(), b.t())) {
    throw ArgumentError(std::string(what) + ": states at different times " + format_real(a.t()) +
                        " and " + format_real(b.t()));
  }
}

double sup_diff(const TensorField& a, const TensorField& b) {
  TensorField d = a;
  d -= b;
  return d.max_abs();
}

/// g^{kl}(nabla_i V_jl + nabla_j V_il - nabla_l V_ij), stored (k, i, j).
TensorField connection_variation(const MetricField& g, const TensorField& gamma, const TensorField& v) {
  const TensorField dv = covariant_derivative(gamma, v);  // dv(j, l, i) = nabla_i V_jl
  TensorField out = einsum("kl,jli->kij", 1, g.inverse(), dv);
  out += einsum("kl,ilj->kij", 1, g.inverse(), dv);
  out -= einsum("kl,ijl->kij", 1, g.inverse(), dv);
  return out;
}

/// Ricci part of S: the symmetric part of S^k_{kij}, matching how the
/// pipeline builds Ricci.
TensorField ricci_part(const TensorField& s) { return symmetric_part(contract(s, 0, 0)); }

/// dh/dt from the two solutions at one time.
TensorField h_rate(const FlowState& sol, const FlowState& alt, const TensorField& s_diff,
                   const TensorField& h, const ScalarField& q) {
  const double s0 = sol.s0();
  const int n = sol.g().dim();
  TensorField out = ricci_part(s_diff) * -2.0;
  out.axpy(2.0 * s0 / n, h);
  out -= 2.0 * q * sol.g().tensor();
  out -= 2.0 * alt.p() * h;
  return out;
}

/// dA/dt from the two solutions at one time.
TensorField a_rate(const FlowState& sol, const FlowState& alt) {
  const CurvaturePack& pk = sol.curvature();
  const CurvaturePack& pa = alt.curvature();
  const TensorField v = compute_V(sol.g(), pk.ricci, sol.p(), sol.s0());
  const TensorField va = compute_V(alt.g(), pa.ricci, alt.p(), alt.s0());
  TensorField out = connection_variation(alt.g(), pa.gamma, va);
  out -= connection_variation(sol.g(), pk.gamma, v);
  return out;
}

/// (nabla_a - nabla~_a) Z^{a l}_{ijk} for Z stored (a, l, i, j, k).
TensorField connection_difference_div(const TensorField& a, const TensorField& z) {
  TensorField out = einsum("aam,mlijk->lijk", 1, a, z);
  out += einsum("lam,amijk->lijk", 1, a, z);
  out -= einsum("mai,almjk->lijk", 1, a, z);
  out -= einsum("maj,alimk->lijk", 1, a, z);
  out -= einsum("mak,alijm->lijk", 1, a, z);
  return out;
}

struct Bracket {
  const FlowState* before;
  const FlowState* at;
  const FlowState* after;
  const FlowState* alt_before;
  const FlowState* alt_at;
  const FlowState* alt_after;
  double delta;
};

Bracket bracket(const Trajectory& traj, const Trajectory& alt, double t) {
  const int i = traj.find(t);
  const int j = alt.find(t);
  if (i < 0 || j < 0) throw ArgumentError("no snapshot at t = " + format_real(t));
  if (i == 0 || i + 1 >= static_cast<int>(traj.snapshots.size())) {
    throw ArgumentError("t = " + format_real(t) + " is not interior to the trajectory");
  }
  const double tm = traj.snapshots[static_cast<std::size_t>(i - 1)].t();
  const double tp = traj.snapshots[static_cast<std::size_t>(i + 1)].t();
  const int jm = alt.find(tm);
  const int jp = alt.find(tp);
  if (jm < 0 || jp < 0) throw ArgumentError("missing snapshots around t = " + format_real(t));
  if (std::abs((tp - t) - (t - tm)) > 1e-9 * std::max(1.0, tp - tm)) {
    throw ArgumentError("snapshots around t = " + format_real(t) + " are not evenly spaced");
  }
  auto at = [](const Trajectory& tr, int k) { return &tr.snapshots[static_cast<std::size_t>(k)]; };
  return {at(traj, i - 1), at(traj, i), at(traj, i + 1), at(alt, jm), at(alt, j), at(alt, jp),
          0.5 * (tp - tm)};
}

TensorField centered(const TensorField& before, const TensorField& after, double delta) {
  TensorField d = after;
  d -= before;
  d *= 0.5 / delta;
  return d;
}

void release(const Bracket& b) {
  for (const FlowState* s : {b.before, b.at, b.after, b.alt_before, b.alt_at, b.alt_after}) {
    s->release_curvature();
  }
}

/// Pointwise |T|_g as a scalar field.
ScalarField pointwise_norm(const TensorField& t, const MetricField& g) {
  ScalarField n = pointwise_norm2(t, g);
  for (std::size_t p = 0; p < n.size(); ++p) n[p] = std::sqrt(std::max(0.0, n[p]));
  return n;
}

double l2(const ScalarField& f, const MetricField& g) {
  ScalarField sq = f * f;
  return std::sqrt(std::max(0.0, integrate(sq, g)));
}

}  // namespace

// ---------------------------------------------------------------------------

TensorField u_tensor(const MetricField& g, const TensorField& gamma, const MetricField& alt,
                     const TensorField& alt_gamma, const TensorField& alt_riemann) {
  // covariant_derivative appends the derivative slot last: (l, i, j, k, b).
  TensorField u = raise_index(covariant_derivative(gamma, alt_riemann), 3, g);
  u -= raise_index(covariant_derivative(alt_gamma, alt_riemann), 3, alt);
  return u;
}

DiffState diff_state(const FlowState& sol, const FlowState& alt, bool with_u) {
  require_pair(sol, alt, "diff_state");
  const CurvaturePack& pk = sol.curvature();
  const CurvaturePack& pa = alt.curvature();
  DiffState d;
  d.t = sol.t();
  d.h = sol.g().tensor() - alt.g().tensor();
  d.A = pk.gamma - pa.gamma;
  d.S = pk.riemann - pa.riemann;
  d.q = sol.p() - alt.p();
  d.ginv_diff = sol.g().inverse() - alt.g().inverse();
  if (with_u) d.U = u_tensor(sol.g(), pk.gamma, alt.g(), pa.gamma, pa.riemann);
  return d;
}

std::vector<IdentityResidual> lemma_residuals(const MetricField& g, const MetricField& alt,
                                              const ScalarField& f, const TensorField& x) {
  require_same_grid(g.grid(), alt.grid(), "lemma_residuals");
  if (!(x.valence() == Valence{1, 1})) throw ArgumentError("lemma_residuals: x must be a (1,1) tensor");
  const CurvaturePack pk = curvature(g);
  const CurvaturePack pa = curvature(alt);
  const TensorField h = g.tensor() - alt.tensor();
  const TensorField a = pk.gamma - pa.gamma;
  const TensorField& gi = g.inverse();
  const TensorField& ai = alt.inverse();

  std::vector<IdentityResidual> out;
  auto record = [&](std::string name, const TensorField& lhs, const TensorField& rhs, bool exact) {
    out.push_back({std::move(name), sup_diff(lhs, rhs), lhs.max_abs(), exact});
  };

  // g^ij - g~^ij = g^ik (g~^jl g~_kl) - g~^jl (g^ik g_kl)
  {
    const TensorField rhs = einsum("ik,jl,kl->ij", 2, gi, ai, alt.tensor()) -
                            einsum("jl,ik,kl->ij", 2, ai, gi, g.tensor());
    record("inverse_difference", gi - ai, rhs, true);
  }
  // ... = -g^ik g~^jl h_kl
  record("ginv_diff", gi - ai, einsum("ik,jl,kl->ij", 2, gi, ai, h) * -1.0, true);

  // (nabla - nabla~) X = A * X on a (1,1) tensor; layout (k, j, i) = nabla_i X^k_j
  {
    const TensorField lhs = covariant_derivative(pk.gamma, x) - covariant_derivative(pa.gamma, x);
    const TensorField rhs = einsum("kil,lj->kji", 1, a, x) - einsum("lij,kl->kji", 1, a, x);
    record("connection_difference", lhs, rhs, true);
  }

  // (nabla - nabla~) f read as a gradient: (g^ij - g~^ij) d_j f = -g^ik h_kl g~^lj d_j f
  const TensorField df = partial_derivatives(TensorField::from_scalar(f));
  const TensorField grad_alt = einsum("lj,j->l", 1, ai, df);
  {
    const TensorField lhs = einsum("ij,j->i", 1, gi, df) - grad_alt;
    const TensorField rhs = einsum("ik,kl,l->i", 1, gi, h, grad_alt) * -1.0;
    record("function_difference", lhs, rhs, true);
  }

  // nabla g~^{-1} = (nabla - nabla~) g~^{-1}; layout (i, j, c)
  {
    const TensorField lhs = covariant_derivative(pk.gamma, ai);
    const TensorField rhs = einsum("icm,mj->ijc", 2, a, ai) + einsum("jcm,im->ijc", 2, a, ai);
    record("nabla_alt_inverse", lhs, rhs, false);
  }

  // nabla h = -(nabla - nabla~) g~
  {
    const TensorField lhs = covariant_derivative(pk.gamma, h);
    const TensorField rhs = einsum("mci,mj->ijc", 0, a, alt.tensor()) +
                            einsum("mcj,im->ijc", 0, a, alt.tensor());
    record("nabla_h", lhs, rhs, true);
  }

  // nabla((nabla - nabla~) f) with w = -g^ik h_kl v^l, v = grad~ f:
  //   -g^ik [ (nabla_c h_kl) v^l + h_kl (A^l_cm v^m + nabla~_c v^l) ]
  {
    const TensorField w = einsum("ij,j->i", 1, gi, df) - grad_alt;
    const TensorField lhs = covariant_derivative(pk.gamma, w);  // (i, c)
    TensorField y = einsum("mck,ml,l->kc", 0, a, alt.tensor(), grad_alt);
    y += einsum("mcl,km,l->kc", 0, a, alt.tensor(), grad_alt);
    y += einsum("kl,lcm,m->kc", 0, h, a, grad_alt);
    y += einsum("kl,lc->kc", 0, h, covariant_derivative(pa.gamma, grad_alt));
    const TensorField rhs = einsum("ik,kc->ic", 1, gi, y) * -1.0;
    record("nabla_function_difference", lhs, rhs, false);
  }

  // U = g^ab (nabla_b - nabla~_b) R~ + (g^ab - g~^ab) nabla~_b R~
  const TensorField u = u_tensor(g, pk.gamma, alt, pa.gamma, pa.riemann);
  {
    const TensorField& r = pa.riemann;
    const TensorField dr_alt = covariant_derivative(pa.gamma, r);  // (l, i, j, k, b)
    TensorField conn = einsum("lbm,mijk->lijkb", 1, a, r);
    conn -= einsum("mbi,lmjk->lijkb", 1, a, r);
    conn -= einsum("mbj,limk->lijkb", 1, a, r);
    conn -= einsum("mbk,lijm->lijkb", 1, a, r);
    TensorField rhs = einsum("ab,lijkb->alijk", 2, gi, conn);
    rhs += einsum("ab,lijkb->alijk", 2, gi - ai, dr_alt);
    record("u_expansion", u, rhs, true);
  }

  // nabla_a (g^ab nabla_b R - g~^ab nabla~_b R~) = div U + Delta S
  {
    const TensorField s = pk.riemann - pa.riemann;
    TensorField y = raise_index(covariant_derivative(pk.gamma, pk.riemann), 3, g);
    y -= raise_index(covariant_derivative(pa.gamma, pa.riemann), 3, alt);
    const TensorField lhs = divergence(pk.gamma, y);
    const TensorField rhs = divergence(pk.gamma, u) + tensor_laplacian(g, pk.gamma, s);
    record("u_divergence", lhs, rhs, false);
  }
  return out;
}

// ---------------------------------------------------------------------------
// evolution equations

TensorField riemann_evolution_rhs(const FlowState& s) {
  const MetricField& g = s.g();
  const CurvaturePack& pk = s.curvature();
  const TensorField& r = pk.riemann;
  const TensorField& ric = pk.ricci;
  const TensorField& gi = g.inverse();
  const int n = g.dim();

  TensorField out = tensor_laplacian(g, pk.gamma, r);

  out += einsum("mr,ir,ljmk->lijk", 1, gi, ric, r);
  out += einsum("mr,jr,lmik->lijk", 1, gi, ric, r);

  out -= einsum("ab,maij,lmbk->lijk", 1, gi, r, r);
  out -= einsum("ab,maik,ljbm->lijk", 1, gi, r, r);
  out += einsum("ab,laim,mjbk->lijk", 1, gi, r, r);
  out -= einsum("ab,maji,lbmk->lijk", 1, gi, r, r);
  out -= einsum("ab,majk,lbim->lijk", 1, gi, r, r);
  out += einsum("ab,lajm,mbik->lijk", 1, gi, r, r);

  // pressure Hessian terms; hess(b, a) = nabla_a nabla_b p is symmetric
  const TensorField hess = hessian(pk.gamma, s.p());
  const TensorField& gt = g.tensor();
  out -= einsum("lm,jm,ik->lijk", 1, gi, gt, hess);
  out += einsum("lm,jk,im->lijk", 1, gi, gt, hess);
  out += einsum("lm,im,jk->lijk", 1, gi, gt, hess);
  out -= einsum("lm,ik,jm->lijk", 1, gi, gt, hess);

  out += einsum("lm,rijk,rm->lijk", 1, gi, r, ric);
  out += einsum("lm,rijm,kr->lijk", 1, gi, r, ric);

  // (p - s0/n) g^lm (R^r_ijk g_rm + R^r_ijm g_kr)
  TensorField w = einsum("lm,rijk,rm->lijk", 1, gi, r, gt);
  w += einsum("lm,rijm,kr->lijk", 1, gi, r, gt);
  ScalarField coef = s.p();
  for (std::size_t p = 0; p < coef.size(); ++p) coef[p] -= s.s0() / n;
  out += coef * w;
  return out;
}

EvolutionResidual h_evolution_residual(const Trajectory& traj, const Trajectory& alt, double t) {
  const Bracket b = bracket(traj, alt, t);
  const TensorField hm = b.before->g().tensor() - b.alt_before->g().tensor();
  const TensorField hp = b.after->g().tensor() - b.alt_after->g().tensor();
  const TensorField dh = centered(hm, hp, b.delta);
  const DiffState d = diff_state(*b.at, *b.alt_at, false);
  const TensorField rhs = h_rate(*b.at, *b.alt_at, d.S, d.h, d.q);
  EvolutionResidual res{b.at->t(), b.delta, sup_diff(dh, rhs), dh.max_abs()};
  release(b);
  return res;
}

EvolutionResidual A_evolution_residual(const Trajectory& traj, const Trajectory& alt, double t) {
  const Bracket b = bracket(traj, alt, t);
  const TensorField am = b.before->curvature().gamma - b.alt_before->curvature().gamma;
  const TensorField ap = b.after->curvature().gamma - b.alt_after->curvature().gamma;
  const TensorField da = centered(am, ap, b.delta);
  const TensorField rhs = a_rate(*b.at, *b.alt_at);
  EvolutionResidual res{b.at->t(), b.delta, sup_diff(da, rhs), da.max_abs()};
  release(b);
  return res;
}

SEvolutionResidual S_evolution_residual(const Trajectory& traj, const Trajectory& alt, double t) {
  const Bracket b = bracket(traj, alt, t);
  const TensorField sm = b.before->curvature().riemann - b.alt_before->curvature().riemann;
  const TensorField sp = b.after->curvature().riemann - b.alt_after->curvature().riemann;
  const TensorField ds = centered(sm, sp, b.delta);
  const TensorField rhs = riemann_evolution_rhs(*b.at) - riemann_evolution_rhs(*b.alt_at);

  SEvolutionResidual res;
  res.t = b.at->t();
  res.delta = b.delta;
  res.residual = sup_diff(ds, rhs);
  res.scale = ds.max_abs();

  // Delta R - Delta~ R~ assembled two ways
  const MetricField& g = b.at->g();
  const MetricField& ga = b.alt_at->g();
  const CurvaturePack& pk = b.at->curvature();
  const CurvaturePack& pa = b.alt_at->curvature();
  const TensorField direct = tensor_laplacian(g, pk.gamma, pk.riemann) -
                             tensor_laplacian(ga, pa.gamma, pa.riemann);
  const TensorField z = raise_index(covariant_derivative(pa.gamma, pa.riemann), 3, ga);
  TensorField y = raise_index(covariant_derivative(pk.gamma, pk.riemann), 3, g);
  y -= z;
  const TensorField assembled =
      divergence(pk.gamma, y) + connection_difference_div(pk.gamma - pa.gamma, z);
  res.laplacian_crosscheck = sup_diff(direct, assembled);
  release(b);
  return res;
}

double q_source_residual(const FlowState& sol, const FlowState& alt) {
  require_pair(sol, alt, "q_source_residual");
  const double s0 = sol.s0();
  const int n = sol.g().dim();
  ScalarField lhs = (n - 1.0) * (laplace_beltrami(sol.g(), sol.p()) - laplace_beltrami(alt.g(), alt.p()));
  lhs += s0 * (sol.p() - alt.p());
  const ScalarField rhs = pressure_rhs(sol.g(), sol.curvature().ricci, s0) -
                          pressure_rhs(alt.g(), alt.curvature().ricci, s0);
  return sup_norm(lhs - rhs);
}

// ---------------------------------------------------------------------------
// energies

EnergySample energy_sample(const DiffState& d, const FlowState& background) {
  const MetricField& g = background.g();
  EnergySample e;
  e.H = integrate(pointwise_norm2(d.h, g), g);
  e.A = integrate(pointwise_norm2(d.A, g), g);
  e.S = integrate(pointwise_norm2(d.S, g), g);
  e.D = integrate(pointwise_norm2(covariant_derivative(background.curvature().gamma, d.S), g), g);
  return e;
}

double noise_floor(double control_energy) { return std::max(1e-24, 100.0 * control_energy); }

void fit_rate(EnergyReport& report) {
  std::vector<double> xs, ys;
  for (std::size_t i = 0; i < report.times.size(); ++i) {
    if (report.E[i] > report.floor) {
      xs.push_back(report.times[i]);
      ys.push_back(std::log(report.E[i]));
    }
  }
  report.fitted_rate.reset();
  report.fit_quality = 0.0;
  if (xs.size() < 2) return;
  const double m = static_cast<double>(xs.size());
  CompensatedSum sx, sy;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sx.add(xs[i]);
    sy.add(ys[i]);
  }
  const double mx = sx.value() / m;
  const double my = sy.value() / m;
  CompensatedSum sxx, sxy, syy;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sxx.add((xs[i] - mx) * (xs[i] - mx));
    sxy.add((xs[i] - mx) * (ys[i] - my));
    syy.add((ys[i] - my) * (ys[i] - my));
  }
  if (sxx.value() <= 0.0) return;
  const double slope = sxy.value() / sxx.value();
  report.fitted_rate = slope;
  CompensatedSum sres;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double r = ys[i] - (my + slope * (xs[i] - mx));
    sres.add(r * r);
  }
  report.fit_quality = syy.value() > 0.0 ? 1.0 - sres.value() / syy.value() : 1.0;
}

EnergyReport energy_report(std::vector<double> times, const std::vector<EnergySample>& samples,
                           double floor) {
  if (times.empty() || times.size() != samples.size()) {
    throw ArgumentError("energy_report: need one sample per time, at least one");
  }
  for (std::size_t i = 1; i < times.size(); ++i) {
    if (!(times[i] > times[i - 1])) throw ArgumentError("energy_report: times must increase");
  }
  EnergyReport r;
  r.times = std::move(times);
  r.floor = floor;
  for (const EnergySample& s : samples) {
    r.H.push_back(s.H);
    r.A_energy.push_back(s.A);
    r.S_energy.push_back(s.S);
    r.D.push_back(s.D);
    r.E.push_back(s.E());
  }
  fit_rate(r);
  return r;
}

EnergyReport energies(const std::vector<DiffState>& diffs, const Trajectory& metric_source,
                      double floor) {
  if (diffs.empty()) throw ArgumentError("energies: no difference states");
  std::vector<double> times;
  std::vector<EnergySample> samples;
  for (const DiffState& d : diffs) {
    const int i = metric_source.find(d.t);
    if (i < 0) throw ArgumentError("energies: no background snapshot at t = " + format_real(d.t));
    const FlowState& bg = metric_source.snapshots[static_cast<std::size_t>(i)];
    times.push_back(d.t);
    samples.push_back(energy_sample(d, bg));
    bg.release_curvature();
  }
  return energy_report(std::move(times), samples, floor);
}

GronwallVerdict gronwall_check(const EnergyReport& report) {
  if (report.E.empty()) throw ArgumentError("gronwall_check: empty report");
  GronwallVerdict v;
  v.rate = report.fitted_rate;
  v.fit_quality = report.fit_quality;
  const double e0 = report.E.front();
  v.perturbed = e0 > report.floor;
  if (v.perturbed) {
    const double rate = report.fitted_rate.value_or(0.0);
    const double t0 = report.times.front();
    for (std::size_t i = 0; i < report.E.size(); ++i) {
      v.growth_ratio =
          std::max(v.growth_ratio, report.E[i] / (e0 * std::exp(rate * (report.times[i] - t0))));
    }
  } else {
    for (double e : report.E) v.floor_ratio = std::max(v.floor_ratio, e / report.floor);
  }
  return v;
}

// ---------------------------------------------------------------------------
// bound monitors

std::optional<double> MonitorSeries::max_ratio() const {
  std::optional<double> m;
  for (const auto& r : ratios) {
    if (r && std::isfinite(*r)) m = m ? std::max(*m, *r) : *r;
  }
  return m;
}

PointwiseBounds pointwise_bounds(const FlowState& sol, const FlowState& alt) {
  require_pair(sol, alt, "pointwise_bounds");
  const MetricField& g = sol.g();
  const CurvaturePack& pk = sol.curvature();
  const DiffState d = diff_state(sol, alt, true);
  const double s0 = sol.s0();
  PointwiseBounds b;

  const ScalarField nh = pointwise_norm(d.h, g);
  const ScalarField na = pointwise_norm(d.A, g);
  const ScalarField ns = pointwise_norm(d.S, g);
  ScalarField nq = d.q;
  for (std::size_t p = 0; p < nq.size(); ++p) nq[p] = std::abs(nq[p]);
  const TensorField dq = partial_derivatives(TensorField::from_scalar(d.q));
  const TensorField hq = hessian(pk.gamma, d.q);
  const ScalarField ndq = pointwise_norm(dq, g);
  const ScalarField nhq = pointwise_norm(hq, g);
  const ScalarField nds = pointwise_norm(covariant_derivative(pk.gamma, d.S), g);

  const EnergySample e{integrate(nh * nh, g), integrate(na * na, g), integrate(ns * ns, g), 0.0};
  b.E = e.E();

  // dh/dt
  {
    const ScalarField lhs = pointwise_norm(h_rate(sol, alt, d.S, d.h, d.q), g);
    const double c = std::abs(s0) + sup_norm(alt.p());
    ScalarField den = c * nh + ns + nq;
    const double l2den = l2(den, g);
    b.h_deriv = l2den > 0.0 ? l2(lhs, g) / l2den : 0.0;
    const double cut = 1e-8 * sup_norm(den);
    for (std::size_t p = 0; p < den.size(); ++p) {
      if (den[p] > cut && cut > 0.0) b.h3_constant = std::max(b.h3_constant, lhs[p] / den[p]);
    }
  }
  // dA/dt
  {
    const ScalarField lhs = pointwise_norm(a_rate(sol, alt), g);
    const ScalarField den = nh + na + nds + ndq;
    const double l2den = l2(den, g);
    b.A_deriv = l2den > 0.0 ? l2(lhs, g) / l2den : 0.0;
  }
  // dS/dt - Delta S - div U
  {
    TensorField rest = riemann_evolution_rhs(sol) - riemann_evolution_rhs(alt);
    rest -= tensor_laplacian(g, pk.gamma, d.S);
    rest -= divergence(pk.gamma, *d.U);
    const ScalarField lhs = pointwise_norm(rest, g);
    const ScalarField den = nh + na + ns + nq + nhq;
    const double l2den = l2(den, g);
    b.S_deriv = l2den > 0.0 ? l2(lhs, g) / l2den : 0.0;
  }
  if (b.E > 0.0) {
    b.q = integrate(d.q * d.q, g) / b.E;
    b.grad_q = integrate(ndq * ndq, g) / b.E;
    b.hess_q = integrate(nhq * nhq, g) / b.E;
  }
  b.q_h2_ratio = h2_estimate_ratio(g, s0, d.q);
  return b;
}

std::vector<MonitorSeries> bound_monitors(const Trajectory& traj, const Trajectory& alt,
                                          double floor) {
  std::vector<double> times;
  std::vector<PointwiseBounds> rows;
  std::vector<EnergySample> energy;
  for (const FlowState& s : traj.snapshots) {
    const int j = alt.find(s.t());
    if (j < 0) continue;
    const FlowState& a = alt.snapshots[static_cast<std::size_t>(j)];
    times.push_back(s.t());
    rows.push_back(pointwise_bounds(s, a));
    energy.push_back(energy_sample(diff_state(s, a, false), s));
    s.release_curvature();
    a.release_curvature();
  }

  std::vector<MonitorSeries> out;
  auto series = [&](std::string name, auto value) {
    MonitorSeries m{std::move(name), times, {}};
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (rows[i].E > floor) {
        m.ratios.emplace_back(value(rows[i]));
      } else {
        m.ratios.emplace_back(std::nullopt);
      }
    }
    out.push_back(std::move(m));
  };
  series("h_deriv", [](const PointwiseBounds& b) { return b.h_deriv; });
  series("h3_constant", [](const PointwiseBounds& b) { return b.h3_constant; });
  series("A_deriv", [](const PointwiseBounds& b) { return b.A_deriv; });
  series("S_deriv", [](const PointwiseBounds& b) { return b.S_deriv; });
  series("q_l2", [](const PointwiseBounds& b) { return b.q; });
  series("grad_q_l2", [](const PointwiseBounds& b) { return b.grad_q; });
  series("hess_q_l2", [](const PointwiseBounds& b) { return b.hess_q; });
  series("q_h2_ratio", [](const PointwiseBounds& b) { return b.q_h2_ratio; });

  // energy inequalities: H' <= N E, A' <= N E + D, S' <= N E - D
  auto energy_series = [&](std::string name, auto lhs) {
    MonitorSeries m{std::move(name), times, {}};
    for (std::size_t i = 0; i < times.size(); ++i) {
      const double e = energy[i].E();
      if (i == 0 || i + 1 == times.size() || !(e > floor)) {
        m.ratios.emplace_back(std::nullopt);
        continue;
      }
      const double dt = times[i + 1] - times[i - 1];
      m.ratios.emplace_back(lhs(energy[i - 1], energy[i], energy[i + 1], dt) / e);
    }
    out.push_back(std::move(m));
  };
  energy_series("energy_h", [](const EnergySample& a, const EnergySample&, const EnergySample& c,
                               double dt) { return (c.H - a.H) / dt; });
  energy_series("energy_a", [](const EnergySample& a, const EnergySample& b, const EnergySample& c,
                               double dt) { return (c.A - a.A) / dt - b.D; });
  energy_series("energy_s", [](const EnergySample& a, const EnergySample& b, const EnergySample& c,
                               double dt) { return (c.S - a.S) / dt + b.D; });
  return out;
}

// ---------------------------------------------------------------------------
// reports

double convergence_order(double coarse, double fine, double refinement) {
  if (!(coarse > 0.0) || !(fine > 0.0)) return std::numeric_limits<double>::quiet_NaN();
  return std::log(coarse / fine) / std::log(refinement);
}

void write_check_csv(std::ostream& out, const std::vector<CheckRow>& rows) {
  out << "check,t,residual,order_est\n";
  for (const CheckRow& r : rows) {
    out << r.check << ',' << format_real(r.t) << ',' << format_real(r.residual) << ',';
    if (r.order_est) out << format_real(*r.order_est);
    out << '\n';
  }
}

void write_check_json(std::ostream& out, const std::vector<CheckRow>& rows) {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  std::map<std::string, std::pair<double, std::optional<double>>> acc;
  std::vector<std::string> order;
  for (const CheckRow& r : rows) {
    auto it = acc.find(r.check);
    if (it == acc.end()) {
      order.push_back(r.check);
      acc[r.check] = {r.residual, r.order_est};
      continue;
    }
    it->second.first = std::max(it->second.first, r.residual);
    if (r.order_est) {
      it->second.second = it->second.second ? std::min(*it->second.second, *r.order_est) : *r.order_est;
    }
  }
  for (const std::string& name : order) {
    const auto& [res, ord] = acc[name];
    nlohmann::ordered_json e;
    e["max_residual"] = res;
    if (ord && std::isfinite(*ord)) {
      e["conv_order"] = *ord;
    } else {
      e["conv_order"] = nullptr;
    }
    j[name] = e;
  }
  out << j.dump(2) << '\n';
}

void write_energy_csv(std::ostream& out, const EnergyReport& report) {
  out << "t,H,A,S,D,E\n";
  for (std::size_t i = 0; i < report.times.size(); ++i) {
    out << format_real(report.times[i]) << ',' << format_real(report.H[i]) << ','
        << format_real(report.A_energy[i]) << ',' << format_real(report.S_energy[i]) << ','
        << format_real(report.D[i]) << ',' << format_real(report.E[i]) << '\n';
  }
}

void write_monitor_table(std::ostream& out, const std::vector<MonitorSeries>& series) {
  out << "monitor,t,ratio\n";
  for (const MonitorSeries& m : series) {
    for (std::size_t i = 0; i < m.times.size(); ++i) {
      out << m.name << ',' << format_real(m.times[i]) << ',';
      if (m.ratios[i]) out << format_real(*m.ratios[i]);
      out << '\n';
    }
  }
}

}  // namespace crf

#include "crf/elliptic.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <functional>
#include <memory>
#include <numbers>
#include <vector>

#include "crf/geometry.hpp"
#include "crf/ops.hpp"
#include "crf/random.hpp"

namespace crf {

namespace {

void require_negative(double s0) {
  if (!(s0 < 0.0)) throw DomainError("s0 must be negative");
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  CompensatedSum s;
  for (std::size_t i = 0; i < a.size(); ++i) s.add(a[i] * b[i]);
  return s.value();
}

// Symmetric operator  w -> -alpha sum_a D_a(sqrt g g^{ab} D_b w) + sqrt g beta w,
// i.e. sqrt(g) (-alpha Delta + beta).
class WeightedOperator {
 public:
  WeightedOperator(const MetricField& g, double alpha, ScalarField beta)
      : g_(g), alpha_(alpha), beta_(std::move(beta)) {}

  void apply(const std::vector<double>& w, std::vector<double>& out) const {
    const Grid& grid = g_.grid();
    const int d = grid.dim();
    const std::size_t nodes = grid.nodes();
    ScalarField wf(g_.grid_ptr(), w);
    std::vector<ScalarField> dw;
    dw.reserve(static_cast<std::size_t>(d));
    for (int b = 0; b < d; ++b) dw.push_back(fd_derivative(wf, b));
    const auto& vol = g_.volume_density();
    std::fill(out.begin(), out.end(), 0.0);
    ScalarField flux(g_.grid_ptr());
    for (int a = 0; a < d; ++a) {
      for (std::size_t p = 0; p < nodes; ++p) {
        const double* gi = g_.inverse().node(p);
        double acc = 0.0;
        for (int b = 0; b < d; ++b) acc += gi[a * d + b] * dw[static_cast<std::size_t>(b)][p];
        flux[p] = vol[p] * acc;
      }
      const ScalarField div = fd_derivative(flux, a);
      for (std::size_t p = 0; p < nodes; ++p) out[p] -= alpha_ * div[p];
    }
    for (std::size_t p = 0; p < nodes; ++p) out[p] += vol[p] * beta_[p] * w[p];
  }

  const MetricField& metric() const { return g_; }
  double alpha() const { return alpha_; }
  const ScalarField& beta() const { return beta_; }

 private:
  const MetricField& g_;
  double alpha_;
  ScalarField beta_;
};

// Constant-coefficient approximation of a WeightedOperator inverted by FFT.
class FourierPreconditioner {
 public:
  explicit FourierPreconditioner(const WeightedOperator& op) {
    const MetricField& g = op.metric();
    const Grid& grid = g.grid();
    const int d = grid.dim();
    nodes_ = grid.nodes();
    std::vector<int> n(static_cast<std::size_t>(d));
    for (int a = 0; a < d; ++a) n[static_cast<std::size_t>(a)] = grid.resolution(a);
    const int last = n.back() / 2 + 1;
    std::size_t spectral = nodes_ / static_cast<std::size_t>(n.back()) * static_cast<std::size_t>(last);

    // Mean coefficients.
    std::vector<double> c(static_cast<std::size_t>(d * d), 0.0);
    double w = 0.0;
    double beta_w = 0.0;
    {
      std::vector<CompensatedSum> cs(static_cast<std::size_t>(d * d));
      CompensatedSum ws;
      CompensatedSum bs;
      const auto& vol = g.volume_density();
      for (std::size_t p = 0; p < nodes_; ++p) {
        const double* gi = g.inverse().node(p);
        for (int k = 0; k < d * d; ++k) cs[static_cast<std::size_t>(k)].add(vol[p] * gi[k]);
        ws.add(vol[p]);
        bs.add(vol[p] * op.beta()[p]);
      }
      for (int k = 0; k < d * d; ++k)
        c[static_cast<std::size_t>(k)] = cs[static_cast<std::size_t>(k)].value() / static_cast<double>(nodes_);
      w = ws.value() / static_cast<double>(nodes_);
      beta_w = bs.value() / static_cast<double>(nodes_);
    }
    // Keep the zero mode invertible even if the mean potential is not positive.
    beta_w = std::max(beta_w, 1e-3 * w);

    symbol_.resize(spectral);
    std::vector<int> k(static_cast<std::size_t>(d), 0);
    std::vector<double> sigma(static_cast<std::size_t>(d));
    for (std::size_t s = 0; s < spectral; ++s) {
      std::size_t rest = s;
      for (int a = d - 1; a >= 0; --a) {
        const std::size_t len = a == d - 1 ? static_cast<std::size_t>(last)
                                           : static_cast<std::size_t>(n[static_cast<std::size_t>(a)]);
        k[static_cast<std::size_t>(a)] = static_cast<int>(rest % len);
        rest /= len;
      }
      for (int a = 0; a < d; ++a) {
        const double theta = 2.0 * std::numbers::pi * k[static_cast<std::size_t>(a)] /
                             n[static_cast<std::size_t>(a)];
        sigma[static_cast<std::size_t>(a)] =
            (8.0 * std::sin(theta) - std::sin(2.0 * theta)) / (6.0 * grid.spacing(a));
      }
      double v = beta_w;
      for (int a = 0; a < d; ++a)
        for (int b = 0; b < d; ++b)
          v += op.alpha() * c[static_cast<std::size_t>(a * d + b)] * sigma[static_cast<std::size_t>(a)] *
               sigma[static_cast<std::size_t>(b)];
      symbol_[s] = 1.0 / (v * static_cast<double>(nodes_));
    }

    real_ = fftw_alloc_real(nodes_);
    spec_ = fftw_alloc_complex(spectral);
    forward_ = fftw_plan_dft_r2c(d, n.data(), real_, spec_, FFTW_ESTIMATE);
    backward_ = fftw_plan_dft_c2r(d, n.data(), spec_, real_, FFTW_ESTIMATE);
  }

  FourierPreconditioner(const FourierPreconditioner&) = delete;
  FourierPreconditioner& operator=(const FourierPreconditioner&) = delete;

  ~FourierPreconditioner() {
    fftw_destroy_plan(forward_);
    fftw_destroy_plan(backward_);
    fftw_free(real_);
    fftw_free(spec_);
  }

  void apply(const std::vector<double>& r, std::vector<double>& z) {
    std::copy(r.begin(), r.end(), real_);
    fftw_execute(forward_);
    for (std::size_t s = 0; s < symbol_.size(); ++s) {
      spec_[s][0] *= symbol_[s];
      spec_[s][1] *= symbol_[s];
    }
    fftw_execute(backward_);
    std::copy(real_, real_ + nodes_, z.begin());
  }

 private:
  std::size_t nodes_ = 0;
  std::vector<double> symbol_;
  double* real_ = nullptr;
  fftw_complex* spec_ = nullptr;
  fftw_plan forward_ = nullptr;
  fftw_plan backward_ = nullptr;
};

// sqrt( sum r^2 / sqrt g ): L^2(d mu) norm (up to the cell volume) of r / sqrt g.
double weighted_norm(const std::vector<double>& r, const ScalarField& vol) {
  CompensatedSum s;
  for (std::size_t p = 0; p < r.size(); ++p) s.add(r[p] * r[p] / vol[p]);
  return std::sqrt(s.value());
}


struct PcgOutcome {
  int iterations = 0;
  double relative = 0.0;
  bool converged = false;
  bool breakdown = false;
};

// Solves op x = b. The stopping test is the relative L^2(d mu) norm of the
// residual of the unweighted equation.
PcgOutcome pcg(const WeightedOperator& op, const std::vector<double>& b, std::vector<double>& x,
               double tol, int max_iter) {
  const ScalarField& vol = op.metric().volume_density();
  const std::size_t n = b.size();
  PcgOutcome out;
  const double bnorm = weighted_norm(b, vol);
  if (bnorm == 0.0) {
    std::fill(x.begin(), x.end(), 0.0);
    out.converged = true;
    return out;
  }
  FourierPreconditioner pre(op);
  std::vector<double> r(n), z(n), dir(n), q(n);
  // At most a couple of restarts to recover from recurrence drift.
  for (int restart = 0; restart < 3; ++restart) {
    op.apply(x, q);
    for (std::size_t i = 0; i < n; ++i) r[i] = b[i] - q[i];
    out.relative = weighted_norm(r, vol) / bnorm;
    if (out.relative <= tol) {
      out.converged = true;
      return out;
    }
    if (out.iterations >= max_iter) return out;
    pre.apply(r, z);
    dir = z;
    double rz = dot(r, z);
    while (out.iterations < max_iter) {
      op.apply(dir, q);
      const double pq = dot(dir, q);
      if (!(pq > 0.0)) {
        out.breakdown = true;
        return out;
      }
      const double alpha = rz / pq;
      for (std::size_t i = 0; i < n; ++i) {
        x[i] += alpha * dir[i];
        r[i] -= alpha * q[i];
      }
      ++out.iterations;
      if (weighted_norm(r, vol) / bnorm <= 0.5 * tol) break;
      pre.apply(r, z);
      const double rz_new = dot(r, z);
      const double beta = rz_new / rz;
      rz = rz_new;
      for (std::size_t i = 0; i < n; ++i) dir[i] = z[i] + beta * dir[i];
    }
  }
  op.apply(x, q);
  for (std::size_t i = 0; i < n; ++i) r[i] = b[i] - q[i];
  out.relative = weighted_norm(r, vol) / bnorm;
  out.converged = out.relative <= tol;
  return out;
}


using LinearMap = std::function<void(const std::vector<double>&, std::vector<double>&)>;

// Flexible right-preconditioned GMRES for A x = b from x = 0, without restarts.
// Returns the number of Krylov iterations.
int gmres(const LinearMap& A, const LinearMap& P, const std::vector<double>& b,
          std::vector<double>& x, double rtol, int max_iter) {
  const std::size_t n = b.size();
  std::fill(x.begin(), x.end(), 0.0);
  const double beta = std::sqrt(dot(b, b));
  if (beta == 0.0) return 0;
  const auto m = static_cast<std::size_t>(max_iter);
  std::vector<std::vector<double>> V(1, b), Z;
  for (double& v : V[0]) v /= beta;
  std::vector<std::vector<double>> H(m + 1, std::vector<double>(m, 0.0));
  std::vector<double> cs(m), sn(m), g(m + 1, 0.0);
  g[0] = beta;
  std::size_t k = 0;
  std::vector<double> w(n);
  while (k < m) {
    Z.emplace_back(n);
    P(V[k], Z[k]);
    A(Z[k], w);
    for (std::size_t i = 0; i <= k; ++i) {
      H[i][k] = dot(w, V[i]);
      for (std::size_t p = 0; p < n; ++p) w[p] -= H[i][k] * V[i][p];
    }
    H[k + 1][k] = std::sqrt(dot(w, w));
    for (std::size_t i = 0; i < k; ++i) {
      const double t = cs[i] * H[i][k] + sn[i] * H[i + 1][k];
      H[i + 1][k] = -sn[i] * H[i][k] + cs[i] * H[i + 1][k];
      H[i][k] = t;
    }
    const double r = std::hypot(H[k][k], H[k + 1][k]);
    cs[k] = H[k][k] / r;
    sn[k] = H[k + 1][k] / r;
    const double hk1 = H[k + 1][k];
    H[k][k] = r;
    H[k + 1][k] = 0.0;
    g[k + 1] = -sn[k] * g[k];
    g[k] = cs[k] * g[k];
    ++k;
    if (std::abs(g[k]) <= rtol * beta || hk1 == 0.0) break;
    V.emplace_back(w);
    for (double& v : V[k]) v /= hk1;
  }
  std::vector<double> y(k);
  for (std::size_t i = k; i-- > 0;) {
    double s = g[i];
    for (std::size_t j = i + 1; j < k; ++j) s -= H[i][j] * y[j];
    y[i] = s / H[i][i];
  }
  for (std::size_t j = 0; j < k; ++j)
    for (std::size_t p = 0; p < n; ++p) x[p] += y[j] * Z[j][p];
  return static_cast<int>(k);
}

double flat_sum_squares(const ScalarField& f) {
  CompensatedSum s;
  for (std::size_t p = 0; p < f.size(); ++p) s.add(f[p] * f[p]);
  return s.value() * f.grid().cell_volume();
}

ScalarField grad_norm2(const MetricField& g, const ScalarField& f) {
  const int d = g.dim();
  std::vector<ScalarField> df;
  for (int a = 0; a < d; ++a) df.push_back(fd_derivative(f, a));
  ScalarField out(f.grid_ptr());
  for (std::size_t p = 0; p < f.size(); ++p) {
    const double* gi = g.inverse().node(p);
    double acc = 0.0;
    for (int a = 0; a < d; ++a)
      for (int b = 0; b < d; ++b)
        acc += gi[a * d + b] * df[static_cast<std::size_t>(a)][p] * df[static_cast<std::size_t>(b)][p];
    out[p] = acc;
  }
  return out;
}

}  // namespace

ScalarField apply_L(const MetricField& g, double s0, const ScalarField& f) {
  require_negative(s0);
  ScalarField out = laplace_beltrami(g, f);
  out *= static_cast<double>(g.dim() - 1);
  for (std::size_t p = 0; p < out.size(); ++p) out[p] += s0 * f[p];
  return out;
}

double h2_estimate_ratio(const MetricField& g, double s0, const ScalarField& f) {
  const int d = g.dim();
  double l2 = flat_sum_squares(f);
  double h1 = l2;
  double h2 = l2;
  for (int a = 0; a < d; ++a) {
    const ScalarField da = fd_derivative(f, a);
    const double s = flat_sum_squares(da);
    h1 += s;
    h2 += s;
    for (int b = 0; b < d; ++b) h2 += flat_sum_squares(fd_derivative(da, b));
  }
  if (h2 == 0.0) return 0.0;
  const double lf = std::sqrt(flat_sum_squares(apply_L(g, s0, f)));
  return std::sqrt(h2) / (lf + std::sqrt(h1));
}

std::pair<ScalarField, EllipticSolveReport> solve_L(const MetricField& g, double s0,
                                                    const ScalarField& rhs, const SolveOptions& opts,
                                                    const ScalarField* initial_guess) {
  require_negative(s0);
  require_same_grid(g.grid(), rhs.grid(), "solve_L");
  if (!rhs.all_finite()) throw ArgumentError("solve_L: non-finite right-hand side");
  const std::size_t n = g.nodes();
  const WeightedOperator op(g, static_cast<double>(g.dim() - 1), ScalarField(g.grid_ptr(), -s0));
  std::vector<double> b(n);
  const auto& vol = g.volume_density();
  for (std::size_t p = 0; p < n; ++p) b[p] = -vol[p] * rhs[p];
  std::vector<double> x(n, 0.0);
  if (initial_guess != nullptr) {
    require_same_grid(g.grid(), initial_guess->grid(), "solve_L");
    std::copy(initial_guess->values().begin(), initial_guess->values().end(), x.begin());
  }
  const PcgOutcome res = pcg(op, b, x, opts.tolerance, opts.max_iterations);
  EllipticSolveReport report;
  report.iterations = res.iterations;
  report.final_residual_l2 = res.relative;
  report.tolerance = opts.tolerance;
  report.converged = res.converged;
  ScalarField p(g.grid_ptr(), std::move(x));
  if (!res.converged) {
    throw SolverError("elliptic solve did not converge (relative residual " +
                          std::to_string(res.relative) + " after " + std::to_string(res.iterations) +
                          " iterations)",
                      report);
  }
  report.h2_ratio = h2_estimate_ratio(g, s0, p);
  return {std::move(p), report};
}

ScalarField pressure_rhs(const MetricField& g, const TensorField& ricci, double s0) {
  TensorField trace_free = ricci;
  trace_free.axpy(-s0 / g.dim(), g.tensor());
  ScalarField out = pointwise_norm2(trace_free, g);
  out *= -1.0;
  return out;
}

std::pair<ScalarField, EllipticSolveReport> solve_pressure(const MetricField& g,
                                                           const TensorField& ricci, double s0,
                                                           const SolveOptions& opts,
                                                           const ScalarField* initial_guess) {
  require_negative(s0);
  return solve_L(g, s0, pressure_rhs(g, ricci, s0), opts, initial_guess);
}

std::pair<ScalarField, EllipticSolveReport> solve_pressure(const MetricField& g, double s0,
                                                           const SolveOptions& opts) {
  require_negative(s0);
  return solve_pressure(g, curvature(g).ricci, s0, opts);
}

double spectral_gap_estimate(const MetricField& g, double s0, int iterations, std::uint64_t seed) {
  require_negative(s0);
  ScalarField f = random_smooth_scalar(g.grid_ptr(), seed, 0, 1.0);
  for (std::size_t p = 0; p < f.size(); ++p) f[p] += 1.0;
  auto normalize = [&](ScalarField& v) {
    const double nrm = l2_norm(v, g);
    v *= 1.0 / nrm;
  };
  normalize(f);
  double lambda = 0.0;
  const SolveOptions opts{1e-12, 1000};
  for (int it = 0; it < iterations; ++it) {
    // (-L)^{-1} f
    ScalarField minus = f * -1.0;
    ScalarField next = solve_L(g, s0, minus, opts).first;
    normalize(next);
    f = std::move(next);
    const ScalarField lf = apply_L(g, s0, f);
    lambda = -integrate(lf * f, g);
  }
  return lambda;
}

std::pair<double, double> ibp_identity_check(const MetricField& g, double s0, const ScalarField& f) {
  require_negative(s0);
  const double lhs = integrate(apply_L(g, s0, f) * f, g);
  const double rhs =
      s0 * integrate(f * f, g) - static_cast<double>(g.dim() - 1) * integrate(grad_norm2(g, f), g);
  return {lhs, rhs};
}

// ---------------------------------------------------------------------------
// Yamabe normalization

namespace {

struct YamabeProblem {
  const MetricField& base;
  ScalarField s_base;
  double s0;
  double c;         // 4(n-1)/(n-2)
  double power;     // (n+2)/(n-2)
  double exponent;  // 4/(n-2)

  // -c Delta u + s_base u - s0 u^power
  ScalarField formula_residual(const ScalarField& u) const {
    ScalarField r = laplace_beltrami(base, u);
    r *= -c;
    for (std::size_t p = 0; p < u.size(); ++p) r[p] += s_base[p] * u[p] - s0 * std::pow(u[p], power);
    return r;
  }

  double energy(const ScalarField& u) const {
    const ScalarField g2 = grad_norm2(base, u);
    CompensatedSum s;
    const auto& vol = base.volume_density();
    for (std::size_t p = 0; p < u.size(); ++p) {
      s.add(vol[p] * (0.5 * c * g2[p] + 0.5 * s_base[p] * u[p] * u[p] -
                      s0 * std::pow(u[p], power + 1.0) / (power + 1.0)));
    }
    return s.value() * base.grid().cell_volume();
  }

  MetricField metric(const ScalarField& u) const {
    TensorField g = base.tensor();
    ScalarField w(u.grid_ptr());
    for (std::size_t p = 0; p < u.size(); ++p) w[p] = std::pow(u[p], exponent);
    g *= w;
    return MetricField(std::move(g));
  }

  // u^power (s(u) - s0) with s measured by the curvature pipeline; equals the
  // formula residual up to discretization error.
  ScalarField measured_residual(const ScalarField& u, const MetricField& g, double& drift) const {
    const ScalarField s = scalar_curvature(g);
    ScalarField r(u.grid_ptr());
    drift = 0.0;
    for (std::size_t p = 0; p < u.size(); ++p) {
      const double e = s[p] - s0;
      drift = std::max(drift, std::abs(e));
      r[p] = std::pow(u[p], power) * e;
    }
    return r;
  }

  // Newton direction: (-c Delta + s_base - power s0 u^{power-1}) delta = -r.
  std::vector<double> newton_direction(const ScalarField& u, const ScalarField& r,
                                       const SolveOptions& lin) const {
    ScalarField beta(u.grid_ptr());
    for (std::size_t p = 0; p < u.size(); ++p)
      beta[p] = s_base[p] - power * s0 * std::pow(u[p], power - 1.0);
    const WeightedOperator op(base, c, beta);
    const auto& vol = base.volume_density();
    std::vector<double> b(u.size());
    for (std::size_t p = 0; p < u.size(); ++p) b[p] = -vol[p] * r[p];
    std::vector<double> x(u.size(), 0.0);
    const PcgOutcome res = pcg(op, b, x, lin.tolerance, lin.max_iterations);
    if (res.breakdown) throw NormalizationError("Newton system is not positive definite");
    return x;
  }

  ScalarField pipeline_residual(const ScalarField& u) const {
    double drift = 0.0;
    return measured_residual(u, metric(u), drift);
  }

  // Inexact Newton step for the pipeline residual: GMRES on its Jacobian
  // (central-difference products), preconditioned by the formula Jacobian.
  std::vector<double> krylov_direction(const ScalarField& u, const ScalarField& r,
                                       const SolveOptions& lin) const {
    ScalarField beta(u.grid_ptr());
    for (std::size_t p = 0; p < u.size(); ++p)
      beta[p] = s_base[p] - power * s0 * std::pow(u[p], power - 1.0);
    const WeightedOperator op(base, c, beta);
    const auto& vol = base.volume_density();
    const std::size_t n = u.size();
    const LinearMap jac = [&](const std::vector<double>& v, std::vector<double>& out) {
      double vmax = 0.0;
      for (double x : v) vmax = std::max(vmax, std::abs(x));
      if (vmax == 0.0) {
        std::fill(out.begin(), out.end(), 0.0);
        return;
      }
      const double eps = 1e-5 * std::max(1.0, u.max_abs()) / vmax;
      ScalarField up = u;
      ScalarField um = u;
      for (std::size_t p = 0; p < n; ++p) {
        up[p] += eps * v[p];
        um[p] -= eps * v[p];
      }
      const ScalarField rp = pipeline_residual(up);
      const ScalarField rm = pipeline_residual(um);
      for (std::size_t p = 0; p < n; ++p) out[p] = (rp[p] - rm[p]) / (2.0 * eps);
    };
    const LinearMap precond = [&](const std::vector<double>& v, std::vector<double>& out) {
      std::vector<double> b(n);
      for (std::size_t p = 0; p < n; ++p) b[p] = vol[p] * v[p];
      const PcgOutcome res = pcg(op, b, out, lin.tolerance, lin.max_iterations);
      if (res.breakdown) throw NormalizationError("Newton system is not positive definite");
    };
    std::vector<double> rhs(n);
    for (std::size_t p = 0; p < n; ++p) rhs[p] = -r[p];
    std::vector<double> x(n, 0.0);
    gmres(jac, precond, rhs, x, 1e-4, 60);
    return x;
  }
};

}  // namespace

YamabeResult yamabe_normalize(const MetricField& g_base, double s0, const YamabeOptions& opts) {
  require_negative(s0);
  const int n = g_base.dim();
  if (n < 3) throw DomainError("yamabe_normalize needs dimension >= 3");
  const double nd = static_cast<double>(n);
  YamabeProblem prob{g_base, scalar_curvature(g_base), s0, 4.0 * (nd - 1.0) / (nd - 2.0),
                     (nd + 2.0) / (nd - 2.0), 4.0 / (nd - 2.0)};

  YamabeResult result;
  result.report.tolerance = opts.tolerance;
  double drift0 = 0.0;
  for (std::size_t p = 0; p < prob.s_base.size(); ++p)
    drift0 = std::max(drift0, std::abs(prob.s_base[p] - s0));
  if (drift0 <= opts.tolerance) {
    result.metric = g_base;
    result.u = ScalarField(g_base.grid_ptr(), 1.0);
    result.drift = drift0;
    result.report.final_residual_l2 = drift0;
    result.report.converged = true;
    return result;
  }
  double s_min = prob.s_base[0];
  for (std::size_t p = 0; p < prob.s_base.size(); ++p) s_min = std::min(s_min, prob.s_base[p]);
  if (!(s_min < 0.0)) throw NormalizationError("base scalar curvature is nowhere negative");

  const double vol = integrate(ScalarField(g_base.grid_ptr(), 1.0), g_base);
  const double s_mean = integrate(prob.s_base, g_base) / vol;
  const double ratio = s_mean / s0;
  double u0 = ratio > 0.0 ? std::pow(ratio, (nd - 2.0) / 4.0) : 0.5;
  u0 = std::clamp(u0, 0.5, 2.0);
  ScalarField u(g_base.grid_ptr(), u0);

  // Phase 1 drives the formula residual down with an energy line search;
  // phase 2 corrects the remaining defect against the curvature pipeline.
  bool phase2 = false;
  double drift = 0.0;
  for (int it = 0; it < opts.max_iterations; ++it) {
    MetricField g = prob.metric(u);
    ScalarField measured = prob.measured_residual(u, g, drift);
    if (drift <= opts.tolerance) {
      result.metric = std::move(g);
      result.u = std::move(u);
      result.drift = drift;
      result.report.iterations = it;
      result.report.final_residual_l2 = drift;
      result.report.converged = true;
      return result;
    }
    ScalarField r = phase2 ? std::move(measured) : prob.formula_residual(u);
    if (!r.all_finite()) throw NormalizationError("Newton iteration produced non-finite values");
    const std::vector<double> dir =
        phase2 ? prob.krylov_direction(u, r, opts.linear) : prob.newton_direction(u, r, opts.linear);

    double alpha = 1.0;
    if (!phase2) {
      const double e0 = prob.energy(u);
      CompensatedSum slope_sum;
      const auto& v = g_base.volume_density();
      for (std::size_t p = 0; p < u.size(); ++p) slope_sum.add(v[p] * r[p] * dir[p]);
      const double slope = slope_sum.value() * g_base.grid().cell_volume();
      for (int ls = 0; ls < 30; ++ls) {
        ScalarField trial = u;
        bool positive = true;
        for (std::size_t p = 0; p < u.size(); ++p) {
          trial[p] += alpha * dir[p];
          positive = positive && trial[p] > 0.0;
        }
        if (positive && prob.energy(trial) <= e0 + 1e-4 * alpha * slope) break;
        alpha *= 0.5;
      }
    }
    double step = 0.0;
    double umin = INFINITY;
    for (std::size_t p = 0; p < u.size(); ++p) {
      u[p] += alpha * dir[p];
      step = std::max(step, std::abs(alpha * dir[p]));
      umin = std::min(umin, u[p]);
    }
    if (!(umin > 0.0)) throw NormalizationError("conformal factor lost positivity");
    // The formula equation is solved once the Newton update is at roundoff.
    if (!phase2 && alpha == 1.0 && step <= 1e-10 * std::max(1.0, u.max_abs())) phase2 = true;
  }
  MetricField g = prob.metric(u);
  prob.measured_residual(u, g, drift);
  if (drift <= opts.tolerance) {
    result.metric = std::move(g);
    result.u = std::move(u);
    result.drift = drift;
    result.report.iterations = opts.max_iterations;
    result.report.final_residual_l2 = drift;
    result.report.converged = true;
    return result;
  }
  throw NormalizationError("Yamabe normalization did not reach tolerance (drift " +
                           std::to_string(drift) + " after " + std::to_string(opts.max_iterations) +
                           " iterations)");
}

}  // namespace crf

#pragma once

#include <cstdint>
#include <optional>
#include <utility>

#include "crf/errors.hpp"
#include "crf/field.hpp"

namespace crf {

struct EllipticSolveReport {
  int iterations = 0;
  /// Relative residual ||L p - rhs|| / ||rhs|| in L^2(d mu).
  double final_residual_l2 = 0.0;
  double tolerance = 0.0;
  bool converged = false;
  /// ||f||_{H^2} / (||L f||_{L^2} + ||f||_{H^1}) of the returned solution,
  /// using flat coordinate differences (0 when f = 0).
  double h2_ratio = 0.0;
};

class SolverError : public Error {
 public:
  SolverError(const std::string& what, EllipticSolveReport report)
      : Error(what), report_(report) {}
  const EllipticSolveReport& report() const { return report_; }

 private:
  EllipticSolveReport report_;
};

struct SolveOptions {
  double tolerance = 1e-10;
  int max_iterations = 500;
};

struct YamabeOptions {
  /// Target for sup |s(g) - s0| measured through the curvature pipeline.
  double tolerance = 1e-7;
  int max_iterations = 30;
  SolveOptions linear{1e-12, 500};
};

/// (n-1) Delta_g f + s0 f. Throws DomainError for s0 >= 0.
ScalarField apply_L(const MetricField& g, double s0, const ScalarField& f);

/// Solves apply_L(g, s0, p) = rhs by preconditioned conjugate gradients on
/// -sqrt(g) L, which is symmetric positive definite. Throws SolverError when
/// the iteration cap is hit.
std::pair<ScalarField, EllipticSolveReport> solve_L(const MetricField& g, double s0,
                                                    const ScalarField& rhs,
                                                    const SolveOptions& opts = {},
                                                    const ScalarField* initial_guess = nullptr);

/// -|Ric - (s0/n) g|^2_g
ScalarField pressure_rhs(const MetricField& g, const TensorField& ricci, double s0);

/// Pressure for metric g with the given Ricci tensor.
std::pair<ScalarField, EllipticSolveReport> solve_pressure(const MetricField& g,
                                                           const TensorField& ricci, double s0,
                                                           const SolveOptions& opts = {},
                                                           const ScalarField* initial_guess = nullptr);
/// Pressure with Ricci taken from the curvature pipeline.
std::pair<ScalarField, EllipticSolveReport> solve_pressure(const MetricField& g, double s0,
                                                           const SolveOptions& opts = {});

/// Smallest eigenvalue of -L (in the d mu inner product) by inverse power
/// iteration. The spectrum of L lies in (-inf, s0], so this is >= |s0|.
double spectral_gap_estimate(const MetricField& g, double s0, int iterations = 30,
                             std::uint64_t seed = 7);

struct YamabeResult {
  MetricField metric;
  ScalarField u;
  EllipticSolveReport report;
  /// sup |s(metric) - s0| as measured by the curvature pipeline.
  double drift = 0.0;
};

/// Conformal factor u > 0 with s(u^{4/(n-2)} g_base) = s0. Throws
/// NormalizationError when the iteration fails, u loses positivity, or the base
/// has nowhere negative scalar curvature.
YamabeResult yamabe_normalize(const MetricField& g_base, double s0, const YamabeOptions& opts = {});

/// Both sides of  int L f f d mu = s0 int f^2 d mu - (n-1) int |grad f|^2 d mu.
std::pair<double, double> ibp_identity_check(const MetricField& g, double s0, const ScalarField& f);

/// ||f||_{H^2} / (||L f||_{L^2} + ||f||_{H^1}), flat coordinate norms.
double h2_estimate_ratio(const MetricField& g, double s0, const ScalarField& f);

}  // namespace crf

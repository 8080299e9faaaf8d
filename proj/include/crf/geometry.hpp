#pragma once

#include "crf/field.hpp"

namespace crf {

/// Curvature of one metric. Index conventions:
///   gamma(i, j, k)      = Gamma^i_{jk}
///   riemann(l, i, j, k) = R^l_{ijk} = d_i Gamma^l_{jk} - d_j Gamma^l_{ik}
///                         + Gamma^l_{im} Gamma^m_{jk} - Gamma^l_{jm} Gamma^m_{ik}
///   ricci(j, k)         = symmetric part of R^i_{ijk}
/// so the round sphere has positive scalar curvature. The raw contraction
/// differs from its symmetric part only by finite-difference error (the
/// discrete trace of g^{-1} d g is not exactly d log det g).
struct CurvaturePack {
  TensorField gamma;
  TensorField riemann;
  TensorField ricci;
  ScalarField scalar;
};

/// (T_ij + T_ji) / 2 for a covariant 2-tensor.
TensorField symmetric_part(const TensorField& t);

TensorField christoffel(const MetricField& g);
TensorField riemann_from_christoffel(const TensorField& gamma);
TensorField riemann(const MetricField& g);
ScalarField scalar_curvature(const MetricField& g);
CurvaturePack curvature(const MetricField& g);

/// Covariant derivative with the derivative slot appended as the last
/// covariant slot: out(..., c) = nabla_c T(...). Rank-0 input gives d f.
TensorField covariant_derivative(const TensorField& gamma, const TensorField& t);
TensorField covariant_derivative(const MetricField& g, const TensorField& t);

/// nabla nabla f, stored as out(b, a) = nabla_a nabla_b f.
TensorField hessian(const TensorField& gamma, const ScalarField& f);

/// Laplace-Beltrami operator in divergence form,
/// (1/sqrt g) d_a (sqrt g g^{ab} d_b f), which is exactly self-adjoint for the
/// discrete d mu inner product.
ScalarField laplace_beltrami(const MetricField& g, const ScalarField& f);

/// Rough Laplacian g^{ab} nabla_a nabla_b T with full connection corrections.
TensorField tensor_laplacian(const MetricField& g, const TensorField& gamma, const TensorField& t);
TensorField tensor_laplacian(const MetricField& g, const TensorField& t);

/// nabla_a T^{a ...}: contracts the first contravariant slot with the derivative.
TensorField divergence(const TensorField& gamma, const TensorField& t);
TensorField divergence(const MetricField& g, const TensorField& t);

}  // namespace crf

#pragma once

#include <cmath>
#include <cstddef>
#include <string_view>
#include <vector>

#include "crf/field.hpp"

namespace crf {

/// Neumaier-compensated running sum. Used for every reduction so that results
/// depend only on the (fixed) node order.
class CompensatedSum {
 public:
  void add(double x) {
    const double t = sum_ + x;
    if (std::abs(sum_) >= std::abs(x)) {
      comp_ += (sum_ - t) + x;
    } else {
      comp_ += (x - t) + sum_;
    }
    sum_ = t;
  }
  double value() const { return sum_ + comp_; }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

// --- finite differences ----------------------------------------------------

/// Fourth-order central difference along a periodic axis.
ScalarField fd_derivative(const ScalarField& f, int axis);
/// Componentwise fourth-order central difference along a periodic axis.
TensorField fd_derivative(const TensorField& t, int axis);

/// All coordinate derivatives of t, appended as a trailing covariant slot:
/// out(..., c) = d_c t(...). Not a tensor in general, just the component array.
TensorField partial_derivatives(const TensorField& t);

// --- algebra ---------------------------------------------------------------

/// Contracts contravariant slot `slot_up` (0-based among the up slots) with
/// covariant slot `slot_down` (0-based among the down slots).
TensorField contract(const TensorField& t, int slot_up, int slot_down);

/// Einstein summation over per-node components. `spec` uses numpy-style
/// letters ("ab,maij,lmbk->lijk"); the first `n_up` output letters are the
/// contravariant slots of the result. The caller is responsible for pairing
/// upper and lower indices correctly.
TensorField einsum(std::string_view spec, const std::vector<const TensorField*>& operands,
                   int n_up);

template <typename... Ts>
TensorField einsum(std::string_view spec, int n_up, const TensorField& first, const Ts&... rest) {
  return einsum(spec, std::vector<const TensorField*>{&first, &rest...}, n_up);
}

/// Raises covariant slot `slot_down` with g^{-1}; the new contravariant slot
/// becomes the first one.
TensorField raise_index(const TensorField& t, int slot_down, const MetricField& g);
/// Lowers contravariant slot `slot_up` with g; the new covariant slot becomes the last one.
TensorField lower_index(const TensorField& t, int slot_up, const MetricField& g);

/// Full metric pairing <T1, T2>_g at every node.
ScalarField pointwise_inner(const TensorField& a, const TensorField& b, const MetricField& g);
/// |T|_g^2 at every node.
ScalarField pointwise_norm2(const TensorField& t, const MetricField& g);

// --- reductions ------------------------------------------------------------

/// sum over nodes of f * sqrt(det g) * cell volume.
double integrate(const ScalarField& f, const MetricField& g);
/// sum over nodes of f * cell volume (flat coordinate measure).
double integrate_flat(const ScalarField& f);
/// L^2(d mu_g) norm of a tensor field measured with g.
double l2_norm(const TensorField& t, const MetricField& g);
double l2_norm(const ScalarField& f, const MetricField& g);
/// max over nodes and components of |t|.
double sup_norm(const TensorField& t);
double sup_norm(const ScalarField& f);
/// max over nodes of |T|_g.
double sup_metric_norm(const TensorField& t, const MetricField& g);

}  // namespace crf

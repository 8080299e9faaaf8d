#pragma once

#include <cstdint>

#include "crf/field.hpp"

namespace crf {

/// Counter-based generator: every draw is a pure function of
/// (seed, stream, counter), so results never depend on evaluation order.
class CounterRng {
 public:
  CounterRng(std::uint64_t seed, std::uint64_t stream) : seed_(seed), stream_(stream) {}

  std::uint64_t bits(std::uint64_t counter) const;
  /// Uniform on [-1, 1).
  double symmetric(std::uint64_t counter) const;

 private:
  std::uint64_t seed_;
  std::uint64_t stream_;
};

/// Band-limited trigonometric polynomial with integer modes |k_a| <= max_mode
/// and coefficients decaying like 1/(1 + |k|^2), scaled so that the sum of
/// absolute coefficients equals `amplitude` (hence sup|f| <= amplitude).
ScalarField random_smooth_scalar(GridPtr grid, std::uint64_t seed, std::uint64_t stream,
                                 double amplitude, int max_mode = 3);

/// Random smooth symmetric covariant 2-tensor, each independent component
/// drawn with random_smooth_scalar on its own stream.
TensorField random_smooth_symmetric(GridPtr grid, std::uint64_t seed, std::uint64_t stream,
                                    double amplitude, int max_mode = 3);

/// Random smooth tensor of arbitrary valence (no symmetry).
TensorField random_smooth_tensor(GridPtr grid, Valence valence, std::uint64_t seed,
                                 std::uint64_t stream, double amplitude, int max_mode = 3);

/// delta + random_smooth_symmetric(amplitude). Throws GeometryError if the
/// amplitude is large enough to break positivity.
MetricField random_smooth_metric(GridPtr grid, std::uint64_t seed, std::uint64_t stream,
                                 double amplitude, int max_mode = 3);

}  // namespace crf

namespace crf {

/// Seeded base metric for flows: the twisted warp diag(1, e^{2f}, e^{-2f}, 1, ...)
/// with f = warp sin(2 pi (x + shift)), plus a random smooth symmetric
/// perturbation of the given amplitude. Its scalar curvature is
/// -2 f'^2 <= 0 before the perturbation, so the conformal class is negative.
MetricField seeded_base_metric(GridPtr grid, std::uint64_t seed, double warp, double amplitude,
                               int max_mode = 2);

}  // namespace crf

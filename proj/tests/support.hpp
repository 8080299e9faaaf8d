#pragma once

#include <cmath>
#include <numbers>

#include "crf/field.hpp"
#include "crf/grid.hpp"

namespace crf::test {

inline constexpr double two_pi = 2.0 * std::numbers::pi;

inline double max_abs_diff(const ScalarField& a, const ScalarField& b) { return (a - b).max_abs(); }
inline double max_abs_diff(const TensorField& a, const TensorField& b) { return (a - b).max_abs(); }

/// log2(coarse / fine)
inline double order(double coarse, double fine) { return std::log2(coarse / fine); }

/// phi = amp sin(2 pi x)
inline ScalarField sine_x(const GridPtr& grid, double amp = 1.0) {
  return ScalarField::from_function(grid, [amp](const double* x) { return amp * std::sin(two_pi * x[0]); });
}

}  // namespace crf::test

#include "crf/grid.hpp"

#include <algorithm>
#include <string>

#include "crf/errors.hpp"

namespace crf {

GridSpec GridSpec::cube(int resolution, int dim, double period) {
  GridSpec spec;
  spec.dim = dim;
  spec.resolution.assign(static_cast<std::size_t>(std::max(dim, 0)), resolution);
  spec.period.assign(static_cast<std::size_t>(std::max(dim, 0)), period);
  return spec;
}

void GridSpec::validate() const {
  if (dim < 3) {
    throw ArgumentError("grid dimension must be >= 3, got " + std::to_string(dim));
  }
  if (resolution.size() != static_cast<std::size_t>(dim) ||
      period.size() != static_cast<std::size_t>(dim)) {
    throw ArgumentError("grid resolution/period must have one entry per axis");
  }
  for (int a = 0; a < dim; ++a) {
    if (resolution[a] < 8) {
      throw ArgumentError("grid resolution must be >= 8 on every axis");
    }
    if (!(period[a] > 0.0)) {
      throw ArgumentError("grid period must be positive");
    }
  }
}

Grid::Grid(GridSpec spec) : spec_(std::move(spec)) {
  spec_.validate();
  const int n = spec_.dim;
  spacing_.resize(n);
  stride_.resize(n);
  std::size_t stride = 1;
  for (int a = n - 1; a >= 0; --a) {
    stride_[a] = stride;
    stride *= static_cast<std::size_t>(spec_.resolution[a]);
  }
  nodes_ = stride;
  cell_volume_ = 1.0;
  for (int a = 0; a < n; ++a) {
    spacing_[a] = spec_.period[a] / spec_.resolution[a];
    cell_volume_ *= spacing_[a];
  }
}

double Grid::min_spacing() const {
  return *std::min_element(spacing_.begin(), spacing_.end());
}

void Grid::coordinates(std::size_t node, double* x) const {
  for (int a = 0; a < spec_.dim; ++a) x[a] = coordinate(node, a);
}

GridPtr make_grid(GridSpec spec) { return std::make_shared<const Grid>(std::move(spec)); }

}  // namespace crf

#pragma once

#include <cstddef>
#include <memory>
#include <vector>

namespace crf {

/// Shape of a periodic, uniform structured grid on the n-torus.
struct GridSpec {
  int dim = 3;
  std::vector<int> resolution;  // grid points per period, one entry per axis
  std::vector<double> period;   // coordinate length of each axis

  /// Same resolution and period on every axis.
  static GridSpec cube(int resolution, int dim = 3, double period = 1.0);

  /// Throws ArgumentError unless dim >= 3, every axis has >= 8 points and a
  /// positive period.
  void validate() const;

  bool operator==(const GridSpec&) const = default;
};

/// Validated grid with precomputed strides. Nodes are numbered row-major over
/// the axes (last axis fastest).
class Grid {
 public:
  explicit Grid(GridSpec spec);

  const GridSpec& spec() const { return spec_; }
  int dim() const { return spec_.dim; }
  int resolution(int axis) const { return spec_.resolution[axis]; }
  double period(int axis) const { return spec_.period[axis]; }
  double spacing(int axis) const { return spacing_[axis]; }
  double min_spacing() const;
  std::size_t nodes() const { return nodes_; }
  std::size_t stride(int axis) const { return stride_[axis]; }
  double cell_volume() const { return cell_volume_; }

  /// Integer index of `node` along `axis`.
  int index(std::size_t node, int axis) const {
    return static_cast<int>((node / stride_[axis]) % spec_.resolution[axis]);
  }
  double coordinate(std::size_t node, int axis) const {
    return index(node, axis) * spacing_[axis];
  }
  void coordinates(std::size_t node, double* x) const;

  bool operator==(const Grid& other) const { return spec_ == other.spec_; }

 private:
  GridSpec spec_;
  std::vector<double> spacing_;
  std::vector<std::size_t> stride_;
  std::size_t nodes_ = 0;
  double cell_volume_ = 0.0;
};

using GridPtr = std::shared_ptr<const Grid>;

GridPtr make_grid(GridSpec spec);
inline GridPtr make_cube_grid(int resolution, int dim = 3, double period = 1.0) {
  return make_grid(GridSpec::cube(resolution, dim, period));
}

}  // namespace crf

#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "crf/grid.hpp"

namespace crf {

/// Real value per grid node.
class ScalarField {
 public:
  ScalarField() = default;
  explicit ScalarField(GridPtr grid, double value = 0.0);
  ScalarField(GridPtr grid, std::vector<double> values);

  /// Samples f(x) at every node; x has one coordinate per axis.
  static ScalarField from_function(GridPtr grid,
                                   const std::function<double(const double*)>& f);

  const Grid& grid() const { return *grid_; }
  const GridPtr& grid_ptr() const { return grid_; }
  std::size_t size() const { return values_.size(); }

  double operator[](std::size_t node) const { return values_[node]; }
  double& operator[](std::size_t node) { return values_[node]; }
  std::span<const double> values() const { return values_; }
  std::span<double> values() { return values_; }

  bool all_finite() const;
  double max_abs() const;

  ScalarField& operator+=(const ScalarField& o);
  ScalarField& operator-=(const ScalarField& o);
  ScalarField& operator*=(double s);
  ScalarField& operator*=(const ScalarField& o);

 private:
  GridPtr grid_;
  std::vector<double> values_;
};

ScalarField operator+(ScalarField a, const ScalarField& b);
ScalarField operator-(ScalarField a, const ScalarField& b);
ScalarField operator*(ScalarField a, double s);
ScalarField operator*(double s, ScalarField a);
ScalarField operator*(ScalarField a, const ScalarField& b);

/// Number of contravariant and covariant slots. Components store the
/// contravariant slots first, then the covariant ones, each block in slot order.
struct Valence {
  int up = 0;
  int down = 0;
  int rank() const { return up + down; }
  bool operator==(const Valence&) const = default;
};

/// Tensor field stored node-major, component-minor; the component index is
/// row-major over the slots, e.g. R^l_{ijk} lives at ((l*n + i)*n + j)*n + k.
class TensorField {
 public:
  TensorField() = default;
  TensorField(GridPtr grid, Valence valence);
  TensorField(GridPtr grid, Valence valence, std::vector<double> data);

  static TensorField from_scalar(const ScalarField& f);
  ScalarField to_scalar() const;

  const Grid& grid() const { return *grid_; }
  const GridPtr& grid_ptr() const { return grid_; }
  int dim() const { return grid_->dim(); }
  Valence valence() const { return valence_; }
  int rank() const { return valence_.rank(); }
  std::size_t components() const { return components_; }
  std::size_t nodes() const { return grid_->nodes(); }

  std::span<const double> data() const { return data_; }
  std::span<double> data() { return data_; }
  const double* node(std::size_t n) const { return data_.data() + n * components_; }
  double* node(std::size_t n) { return data_.data() + n * components_; }
  double operator()(std::size_t n, std::size_t comp) const {
    return data_[n * components_ + comp];
  }
  double& operator()(std::size_t n, std::size_t comp) { return data_[n * components_ + comp]; }

  /// Component index of a full multi-index (contravariant slots first).
  std::size_t index(std::initializer_list<int> idx) const;

  bool all_finite() const;
  /// Largest |component| over all nodes.
  double max_abs() const;

  TensorField& operator+=(const TensorField& o);
  TensorField& operator-=(const TensorField& o);
  TensorField& operator*=(double s);
  /// Pointwise scaling by a scalar field.
  TensorField& operator*=(const ScalarField& f);
  /// this += s * o
  TensorField& axpy(double s, const TensorField& o);

 private:
  GridPtr grid_;
  Valence valence_;
  std::size_t components_ = 1;
  std::vector<double> data_;
};

TensorField operator+(TensorField a, const TensorField& b);
TensorField operator-(TensorField a, const TensorField& b);
TensorField operator*(TensorField a, double s);
TensorField operator*(double s, TensorField a);
TensorField operator*(const ScalarField& f, TensorField a);

/// dim^rank
std::size_t component_count(int dim, int rank);

/// Symmetric positive-definite covariant 2-tensor with its inverse, volume
/// density sqrt(det g) and smallest eigenvalue cached per node.
class MetricField {
 public:
  /// Smallest admissible eigenvalue; anything below fails fast.
  static constexpr double kDegenerateEigenvalue = 1e-10;

  MetricField() = default;
  /// Symmetrizes `g` exactly. Throws ArgumentError for a wrong valence or an
  /// asymmetric input, GeometryError when g is degenerate or indefinite.
  explicit MetricField(TensorField g);

  static MetricField flat(GridPtr grid);
  /// e^{2 phi} delta
  static MetricField conformally_flat(const ScalarField& phi);

  const Grid& grid() const { return tensor_.grid(); }
  const GridPtr& grid_ptr() const { return tensor_.grid_ptr(); }
  int dim() const { return tensor_.dim(); }
  std::size_t nodes() const { return tensor_.nodes(); }

  const TensorField& tensor() const { return tensor_; }
  const TensorField& inverse() const { return inverse_; }
  const ScalarField& volume_density() const { return volume_; }
  const ScalarField& min_eigenvalue() const { return min_eig_; }
  double smallest_eigenvalue() const { return smallest_; }

 private:
  TensorField tensor_;
  TensorField inverse_;
  ScalarField volume_;
  ScalarField min_eig_;
  double smallest_ = 0.0;
};

/// Throws ArgumentError unless both live on equal grids.
void require_same_grid(const Grid& a, const Grid& b, const char* what);

}  // namespace crf

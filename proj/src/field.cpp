#include "crf/field.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <string>

#include "crf/errors.hpp"

namespace crf {

void require_same_grid(const Grid& a, const Grid& b, const char* what) {
  if (!(a == b)) throw ArgumentError(std::string(what) + ": fields live on different grids");
}

// ---------------------------------------------------------------------------
// ScalarField

ScalarField::ScalarField(GridPtr grid, double value)
    : grid_(std::move(grid)), values_(grid_->nodes(), value) {}

ScalarField::ScalarField(GridPtr grid, std::vector<double> values)
    : grid_(std::move(grid)), values_(std::move(values)) {
  if (values_.size() != grid_->nodes()) {
    throw ArgumentError("scalar field size does not match grid");
  }
}

ScalarField ScalarField::from_function(GridPtr grid,
                                       const std::function<double(const double*)>& f) {
  ScalarField out(grid);
  std::vector<double> x(static_cast<std::size_t>(grid->dim()));
  for (std::size_t n = 0; n < grid->nodes(); ++n) {
    grid->coordinates(n, x.data());
    out.values_[n] = f(x.data());
  }
  return out;
}

bool ScalarField::all_finite() const {
  return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

double ScalarField::max_abs() const {
  double m = 0.0;
  for (double v : values_) m = std::max(m, std::abs(v));
  return m;
}

ScalarField& ScalarField::operator+=(const ScalarField& o) {
  require_same_grid(*grid_, *o.grid_, "scalar +=");
  for (std::size_t i = 0; i < values_.size(); ++i) values_[i] += o.values_[i];
  return *this;
}

ScalarField& ScalarField::operator-=(const ScalarField& o) {
  require_same_grid(*grid_, *o.grid_, "scalar -=");
  for (std::size_t i = 0; i < values_.size(); ++i) values_[i] -= o.values_[i];
  return *this;
}

ScalarField& ScalarField::operator*=(double s) {
  for (double& v : values_) v *= s;
  return *this;
}

ScalarField& ScalarField::operator*=(const ScalarField& o) {
  require_same_grid(*grid_, *o.grid_, "scalar *=");
  for (std::size_t i = 0; i < values_.size(); ++i) values_[i] *= o.values_[i];
  return *this;
}

ScalarField operator+(ScalarField a, const ScalarField& b) { return a += b; }
ScalarField operator-(ScalarField a, const ScalarField& b) { return a -= b; }
ScalarField operator*(ScalarField a, double s) { return a *= s; }
ScalarField operator*(double s, ScalarField a) { return a *= s; }
ScalarField operator*(ScalarField a, const ScalarField& b) { return a *= b; }

// ---------------------------------------------------------------------------
// TensorField

std::size_t component_count(int dim, int rank) {
  std::size_t c = 1;
  for (int r = 0; r < rank; ++r) c *= static_cast<std::size_t>(dim);
  return c;
}

TensorField::TensorField(GridPtr grid, Valence valence)
    : grid_(std::move(grid)), valence_(valence) {
  if (valence.up < 0 || valence.down < 0) throw ArgumentError("negative valence");
  components_ = component_count(grid_->dim(), valence.rank());
  data_.assign(components_ * grid_->nodes(), 0.0);
}

TensorField::TensorField(GridPtr grid, Valence valence, std::vector<double> data)
    : TensorField(std::move(grid), valence) {
  if (data.size() != data_.size()) throw ArgumentError("tensor data size does not match grid");
  data_ = std::move(data);
}

TensorField TensorField::from_scalar(const ScalarField& f) {
  TensorField t(f.grid_ptr(), Valence{0, 0});
  std::copy(f.values().begin(), f.values().end(), t.data_.begin());
  return t;
}

ScalarField TensorField::to_scalar() const {
  if (rank() != 0) throw ArgumentError("to_scalar: tensor has nonzero rank");
  return ScalarField(grid_, data_);
}

std::size_t TensorField::index(std::initializer_list<int> idx) const {
  if (static_cast<int>(idx.size()) != rank()) throw ArgumentError("index: wrong number of slots");
  std::size_t c = 0;
  for (int i : idx) {
    if (i < 0 || i >= dim()) throw ArgumentError("index: slot value out of range");
    c = c * static_cast<std::size_t>(dim()) + static_cast<std::size_t>(i);
  }
  return c;
}

bool TensorField::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

double TensorField::max_abs() const {
  double m = 0.0;
  for (double v : data_) m = std::max(m, std::abs(v));
  return m;
}

namespace {
void require_same_shape(const TensorField& a, const TensorField& b, const char* what) {
  require_same_grid(a.grid(), b.grid(), what);
  if (!(a.valence() == b.valence())) throw ArgumentError(std::string(what) + ": valence mismatch");
}
}  // namespace

TensorField& TensorField::operator+=(const TensorField& o) {
  require_same_shape(*this, o, "tensor +=");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
  return *this;
}

TensorField& TensorField::operator-=(const TensorField& o) {
  require_same_shape(*this, o, "tensor -=");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
  return *this;
}

TensorField& TensorField::operator*=(double s) {
  for (double& v : data_) v *= s;
  return *this;
}

TensorField& TensorField::operator*=(const ScalarField& f) {
  require_same_grid(*grid_, f.grid(), "tensor *= scalar");
  const std::size_t nc = components_;
  for (std::size_t n = 0; n < grid_->nodes(); ++n) {
    const double s = f[n];
    double* d = data_.data() + n * nc;
    for (std::size_t c = 0; c < nc; ++c) d[c] *= s;
  }
  return *this;
}

TensorField& TensorField::axpy(double s, const TensorField& o) {
  require_same_shape(*this, o, "tensor axpy");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += s * o.data_[i];
  return *this;
}

TensorField operator+(TensorField a, const TensorField& b) { return a += b; }
TensorField operator-(TensorField a, const TensorField& b) { return a -= b; }
TensorField operator*(TensorField a, double s) { return a *= s; }
TensorField operator*(double s, TensorField a) { return a *= s; }
TensorField operator*(const ScalarField& f, TensorField a) { return a *= f; }

// ---------------------------------------------------------------------------
// MetricField

namespace {

template <int N>
void factor_node_fixed(const double* g, double* ginv, double& vol, double& min_eig) {
  Eigen::Matrix<double, N, N> m;
  for (int i = 0; i < N; ++i)
    for (int j = 0; j < N; ++j) m(i, j) = g[i * N + j];
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix<double, N, N>> es(m, Eigen::EigenvaluesOnly);
  min_eig = es.eigenvalues()(0);
  if (!(min_eig >= MetricField::kDegenerateEigenvalue)) return;
  Eigen::LLT<Eigen::Matrix<double, N, N>> llt(m);
  Eigen::Matrix<double, N, N> inv = llt.solve(Eigen::Matrix<double, N, N>::Identity());
  double logdet = 0.0;
  for (int i = 0; i < N; ++i) logdet += std::log(llt.matrixL()(i, i));
  vol = std::exp(logdet);
  for (int i = 0; i < N; ++i)
    for (int j = 0; j < N; ++j) ginv[i * N + j] = 0.5 * (inv(i, j) + inv(j, i));
}

void factor_node_dynamic(int n, const double* g, double* ginv, double& vol, double& min_eig) {
  Eigen::MatrixXd m(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) m(i, j) = g[i * n + j];
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m, Eigen::EigenvaluesOnly);
  min_eig = es.eigenvalues()(0);
  if (!(min_eig >= MetricField::kDegenerateEigenvalue)) return;
  Eigen::LLT<Eigen::MatrixXd> llt(m);
  Eigen::MatrixXd inv = llt.solve(Eigen::MatrixXd::Identity(n, n));
  double logdet = 0.0;
  for (int i = 0; i < n; ++i) logdet += std::log(llt.matrixL()(i, i));
  vol = std::exp(logdet);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) ginv[i * n + j] = 0.5 * (inv(i, j) + inv(j, i));
}

}  // namespace

MetricField::MetricField(TensorField g) : tensor_(std::move(g)) {
  if (!(tensor_.valence() == Valence{0, 2})) {
    throw ArgumentError("metric must be a covariant 2-tensor");
  }
  if (!tensor_.all_finite()) throw GeometryError("metric has non-finite components");
  const int n = tensor_.dim();
  const std::size_t nodes = tensor_.nodes();

  double scale = tensor_.max_abs();
  for (std::size_t p = 0; p < nodes; ++p) {
    double* d = tensor_.node(p);
    for (int i = 0; i < n; ++i) {
      for (int j = i + 1; j < n; ++j) {
        const double a = d[i * n + j];
        const double b = d[j * n + i];
        if (std::abs(a - b) > 1e-10 * std::max(scale, 1.0)) {
          throw ArgumentError("metric is not symmetric");
        }
        const double s = 0.5 * (a + b);
        d[i * n + j] = s;
        d[j * n + i] = s;
      }
    }
  }

  inverse_ = TensorField(tensor_.grid_ptr(), Valence{2, 0});
  volume_ = ScalarField(tensor_.grid_ptr());
  min_eig_ = ScalarField(tensor_.grid_ptr());
  bool degenerate = false;
  std::size_t bad_node = 0;
  for (std::size_t p = 0; p < nodes; ++p) {
    double vol = 0.0;
    double me = 0.0;
    if (n == 3) {
      factor_node_fixed<3>(tensor_.node(p), inverse_.node(p), vol, me);
    } else if (n == 4) {
      factor_node_fixed<4>(tensor_.node(p), inverse_.node(p), vol, me);
    } else {
      factor_node_dynamic(n, tensor_.node(p), inverse_.node(p), vol, me);
    }
    volume_[p] = vol;
    min_eig_[p] = me;
    if (!(me >= kDegenerateEigenvalue) && !degenerate) {
      degenerate = true;
      bad_node = p;
    }
  }
  if (degenerate) {
    throw GeometryError("metric is degenerate or indefinite (smallest eigenvalue " +
                        std::to_string(min_eig_[bad_node]) + " at node " +
                        std::to_string(bad_node) + ")");
  }
  smallest_ = *std::min_element(min_eig_.values().begin(), min_eig_.values().end());
}

MetricField MetricField::flat(GridPtr grid) {
  TensorField g(grid, Valence{0, 2});
  const int n = grid->dim();
  for (std::size_t p = 0; p < grid->nodes(); ++p)
    for (int i = 0; i < n; ++i) g(p, static_cast<std::size_t>(i * n + i)) = 1.0;
  return MetricField(std::move(g));
}

MetricField MetricField::conformally_flat(const ScalarField& phi) {
  TensorField g(phi.grid_ptr(), Valence{0, 2});
  const int n = phi.grid().dim();
  for (std::size_t p = 0; p < phi.size(); ++p) {
    const double w = std::exp(2.0 * phi[p]);
    for (int i = 0; i < n; ++i) g(p, static_cast<std::size_t>(i * n + i)) = w;
  }
  return MetricField(std::move(g));
}

}  // namespace crf

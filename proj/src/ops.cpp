#include "crf/ops.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <string>

#include "crf/errors.hpp"

namespace crf {

namespace {

void check_axis(const Grid& grid, int axis) {
  if (axis < 0 || axis >= grid.dim()) {
    throw ArgumentError("axis " + std::to_string(axis) + " out of range for dimension " +
                        std::to_string(grid.dim()));
  }
}

// out = D_axis in, for `nc` interleaved components per node.
void fd_axis(const Grid& grid, const double* in, double* out, std::size_t nc, int axis) {
  const std::size_t n = static_cast<std::size_t>(grid.resolution(axis));
  const std::size_t stride = grid.stride(axis) * nc;
  const std::size_t block = n * stride;
  const std::size_t outer = grid.nodes() * nc / block;
  const double inv = 1.0 / (12.0 * grid.spacing(axis));
#pragma omp parallel for schedule(static)
  for (std::size_t o = 0; o < outer; ++o) {
    const std::size_t base = o * block;
    for (std::size_t i = 0; i < n; ++i) {
      const double* p1 = in + base + ((i + 1) % n) * stride;
      const double* p2 = in + base + ((i + 2) % n) * stride;
      const double* m1 = in + base + ((i + n - 1) % n) * stride;
      const double* m2 = in + base + ((i + n - 2) % n) * stride;
      double* dst = out + base + i * stride;
      for (std::size_t k = 0; k < stride; ++k) {
        dst[k] = (8.0 * (p1[k] - m1[k]) - (p2[k] - m2[k])) * inv;
      }
    }
  }
}

std::string slot_letters(int first, int count) {
  std::string s;
  for (int i = 0; i < count; ++i) s.push_back(static_cast<char>('a' + first + i));
  return s;
}

}  // namespace

ScalarField fd_derivative(const ScalarField& f, int axis) {
  check_axis(f.grid(), axis);
  ScalarField out(f.grid_ptr());
  fd_axis(f.grid(), f.values().data(), out.values().data(), 1, axis);
  return out;
}

TensorField fd_derivative(const TensorField& t, int axis) {
  check_axis(t.grid(), axis);
  TensorField out(t.grid_ptr(), t.valence());
  fd_axis(t.grid(), t.data().data(), out.data().data(), t.components(), axis);
  return out;
}

TensorField partial_derivatives(const TensorField& t) {
  const int n = t.dim();
  const std::size_t nc = t.components();
  TensorField out(t.grid_ptr(), Valence{t.valence().up, t.valence().down + 1});
  std::vector<double> tmp(t.data().size());
  for (int c = 0; c < n; ++c) {
    fd_axis(t.grid(), t.data().data(), tmp.data(), nc, c);
#pragma omp parallel for schedule(static)
    for (std::size_t p = 0; p < t.nodes(); ++p) {
      const double* src = tmp.data() + p * nc;
      double* dst = out.node(p);
      for (std::size_t k = 0; k < nc; ++k) dst[k * n + c] = src[k];
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// einsum

TensorField einsum(std::string_view spec, const std::vector<const TensorField*>& operands,
                   int n_up) {
  const auto arrow = spec.find("->");
  if (arrow == std::string_view::npos) throw ArgumentError("einsum: missing '->'");
  const std::string_view lhs = spec.substr(0, arrow);
  const std::string out_letters(spec.substr(arrow + 2));

  std::vector<std::string> in_letters;
  {
    std::size_t start = 0;
    while (true) {
      const auto comma = lhs.find(',', start);
      in_letters.emplace_back(lhs.substr(start, comma - start));
      if (comma == std::string_view::npos) break;
      start = comma + 1;
    }
  }
  if (in_letters.size() != operands.size()) {
    throw ArgumentError("einsum: operand count does not match spec");
  }
  if (operands.empty()) throw ArgumentError("einsum: no operands");
  const Grid& grid = operands.front()->grid();
  const int dim = grid.dim();
  for (std::size_t k = 0; k < operands.size(); ++k) {
    require_same_grid(grid, operands[k]->grid(), "einsum");
    if (static_cast<int>(in_letters[k].size()) != operands[k]->rank()) {
      throw ArgumentError("einsum: operand " + std::to_string(k) + " has rank " +
                          std::to_string(operands[k]->rank()) + " but spec names " +
                          std::to_string(in_letters[k].size()) + " slots");
    }
  }
  const int out_rank = static_cast<int>(out_letters.size());
  if (n_up < 0 || n_up > out_rank) throw ArgumentError("einsum: bad output valence");

  // Distinct letters, output letters first.
  std::string letters;
  for (char c : out_letters) {
    if (letters.find(c) != std::string::npos) throw ArgumentError("einsum: repeated output letter");
    letters.push_back(c);
  }
  for (const auto& s : in_letters)
    for (char c : s)
      if (letters.find(c) == std::string::npos) letters.push_back(c);
  for (char c : out_letters) {
    bool found = false;
    for (const auto& s : in_letters) found = found || s.find(c) != std::string::npos;
    if (!found) throw ArgumentError("einsum: output letter absent from inputs");
  }

  const int nl = static_cast<int>(letters.size());
  const std::size_t total = component_count(dim, nl);
  const std::size_t k_ops = operands.size();

  auto strides_for = [&](const std::string& s) {
    std::vector<std::size_t> st(static_cast<std::size_t>(nl), 0);
    std::size_t w = 1;
    for (int p = static_cast<int>(s.size()) - 1; p >= 0; --p) {
      st[letters.find(s[static_cast<std::size_t>(p)])] += w;
      w *= static_cast<std::size_t>(dim);
    }
    return st;
  };
  std::vector<std::vector<std::size_t>> op_strides;
  for (const auto& s : in_letters) op_strides.push_back(strides_for(s));
  const auto out_strides = strides_for(out_letters);

  // Offset tables over every assignment of letter values.
  std::vector<std::uint32_t> table(total * (k_ops + 1));
  std::vector<int> val(static_cast<std::size_t>(nl), 0);
  for (std::size_t t = 0; t < total; ++t) {
    std::size_t off_out = 0;
    for (int l = 0; l < nl; ++l) off_out += static_cast<std::size_t>(val[l]) * out_strides[l];
    table[t * (k_ops + 1)] = static_cast<std::uint32_t>(off_out);
    for (std::size_t k = 0; k < k_ops; ++k) {
      std::size_t off = 0;
      for (int l = 0; l < nl; ++l) off += static_cast<std::size_t>(val[l]) * op_strides[k][l];
      table[t * (k_ops + 1) + 1 + k] = static_cast<std::uint32_t>(off);
    }
    for (int l = nl - 1; l >= 0; --l) {
      if (++val[l] < dim) break;
      val[l] = 0;
    }
  }

  TensorField out(operands.front()->grid_ptr(), Valence{n_up, out_rank - n_up});
  const std::size_t stride = k_ops + 1;
  const std::uint32_t* tab = table.data();
#pragma omp parallel for schedule(static)
  for (std::size_t p = 0; p < grid.nodes(); ++p) {
    double* o = out.node(p);
    std::array<const double*, 8> ptr{};
    if (k_ops > ptr.size()) continue;
    for (std::size_t k = 0; k < k_ops; ++k) ptr[k] = operands[k]->node(p);
    switch (k_ops) {
      case 1:
        for (std::size_t t = 0; t < total; ++t) o[tab[t * 2]] += ptr[0][tab[t * 2 + 1]];
        break;
      case 2:
        for (std::size_t t = 0; t < total; ++t) {
          const std::uint32_t* e = tab + t * 3;
          o[e[0]] += ptr[0][e[1]] * ptr[1][e[2]];
        }
        break;
      case 3:
        for (std::size_t t = 0; t < total; ++t) {
          const std::uint32_t* e = tab + t * 4;
          o[e[0]] += ptr[0][e[1]] * ptr[1][e[2]] * ptr[2][e[3]];
        }
        break;
      default:
        for (std::size_t t = 0; t < total; ++t) {
          const std::uint32_t* e = tab + t * stride;
          double prod = 1.0;
          for (std::size_t k = 0; k < k_ops; ++k) prod *= ptr[k][e[1 + k]];
          o[e[0]] += prod;
        }
    }
  }
  if (k_ops > 8) throw ArgumentError("einsum: at most 8 operands");
  return out;
}

TensorField contract(const TensorField& t, int slot_up, int slot_down) {
  const Valence v = t.valence();
  if (slot_up < 0 || slot_up >= v.up || slot_down < 0 || slot_down >= v.down) {
    throw ArgumentError("contract: slots must pair one contravariant with one covariant slot");
  }
  std::string in = slot_letters(0, v.rank());
  const char contracted = in[static_cast<std::size_t>(slot_up)];
  in[static_cast<std::size_t>(v.up + slot_down)] = contracted;
  std::string out;
  for (std::size_t i = 0; i < in.size(); ++i) {
    if (static_cast<int>(i) != slot_up && static_cast<int>(i) != v.up + slot_down) {
      out.push_back(in[i]);
    }
  }
  return einsum(in + "->" + out, v.up - 1, t);
}

TensorField raise_index(const TensorField& t, int slot_down, const MetricField& g) {
  const Valence v = t.valence();
  if (slot_down < 0 || slot_down >= v.down) throw ArgumentError("raise_index: no such slot");
  const std::string in = slot_letters(0, v.rank());
  const char z = static_cast<char>('a' + v.rank());
  const char b = in[static_cast<std::size_t>(v.up + slot_down)];
  std::string out(1, z);
  for (std::size_t i = 0; i < in.size(); ++i)
    if (static_cast<int>(i) != v.up + slot_down) out.push_back(in[i]);
  return einsum(std::string{z, b} + "," + in + "->" + out, v.up + 1, g.inverse(), t);
}

TensorField lower_index(const TensorField& t, int slot_up, const MetricField& g) {
  const Valence v = t.valence();
  if (slot_up < 0 || slot_up >= v.up) throw ArgumentError("lower_index: no such slot");
  const std::string in = slot_letters(0, v.rank());
  const char z = static_cast<char>('a' + v.rank());
  const char b = in[static_cast<std::size_t>(slot_up)];
  std::string out;
  for (std::size_t i = 0; i < in.size(); ++i)
    if (static_cast<int>(i) != slot_up) out.push_back(in[i]);
  out.push_back(z);
  return einsum(std::string{b, z} + "," + in + "->" + out, v.up - 1, g.tensor(), t);
}

// ---------------------------------------------------------------------------
// pairing

namespace {

// Applies the dim x dim matrix m along slot `slot` of a rank-r component block.
void apply_on_slot(const double* in, double* out, int dim, int rank, int slot, const double* m) {
  const std::size_t d = static_cast<std::size_t>(dim);
  std::size_t inner = 1;
  for (int s = slot + 1; s < rank; ++s) inner *= d;
  const std::size_t outer = component_count(dim, rank) / (inner * d);
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t i = 0; i < d; ++i) {
      for (std::size_t k = 0; k < inner; ++k) {
        double acc = 0.0;
        for (std::size_t j = 0; j < d; ++j) acc += m[i * d + j] * in[(o * d + j) * inner + k];
        out[(o * d + i) * inner + k] = acc;
      }
    }
  }
}

}  // namespace

ScalarField pointwise_inner(const TensorField& a, const TensorField& b, const MetricField& g) {
  require_same_grid(a.grid(), b.grid(), "pointwise_inner");
  require_same_grid(a.grid(), g.grid(), "pointwise_inner");
  if (!(a.valence() == b.valence())) throw ArgumentError("pointwise_inner: valence mismatch");
  const int dim = a.dim();
  const int rank = a.rank();
  const int up = a.valence().up;
  const std::size_t nc = a.components();
  ScalarField out(a.grid_ptr());
  std::vector<double> buf(nc);
  std::vector<double> tmp(nc);
#pragma omp parallel for schedule(static) firstprivate(buf, tmp)
  for (std::size_t p = 0; p < a.nodes(); ++p) {
    std::copy(b.node(p), b.node(p) + nc, buf.begin());
    for (int s = 0; s < rank; ++s) {
      const double* m = s < up ? g.tensor().node(p) : g.inverse().node(p);
      apply_on_slot(buf.data(), tmp.data(), dim, rank, s, m);
      std::swap(buf, tmp);
    }
    const double* ap = a.node(p);
    double acc = 0.0;
    for (std::size_t c = 0; c < nc; ++c) acc += ap[c] * buf[c];
    out[p] = acc;
  }
  return out;
}

ScalarField pointwise_norm2(const TensorField& t, const MetricField& g) {
  return pointwise_inner(t, t, g);
}

// ---------------------------------------------------------------------------
// reductions

double integrate(const ScalarField& f, const MetricField& g) {
  require_same_grid(f.grid(), g.grid(), "integrate");
  CompensatedSum sum;
  const auto& vol = g.volume_density();
  for (std::size_t p = 0; p < f.size(); ++p) sum.add(f[p] * vol[p]);
  return sum.value() * f.grid().cell_volume();
}

double integrate_flat(const ScalarField& f) {
  CompensatedSum sum;
  for (std::size_t p = 0; p < f.size(); ++p) sum.add(f[p]);
  return sum.value() * f.grid().cell_volume();
}

double l2_norm(const TensorField& t, const MetricField& g) {
  return std::sqrt(std::max(0.0, integrate(pointwise_norm2(t, g), g)));
}

double l2_norm(const ScalarField& f, const MetricField& g) { return std::sqrt(integrate(f * f, g)); }

double sup_norm(const TensorField& t) { return t.max_abs(); }
double sup_norm(const ScalarField& f) { return f.max_abs(); }

double sup_metric_norm(const TensorField& t, const MetricField& g) {
  const ScalarField n2 = pointwise_norm2(t, g);
  double m = 0.0;
  for (std::size_t p = 0; p < n2.size(); ++p) m = std::max(m, std::sqrt(std::max(0.0, n2[p])));
  return m;
}

}  // namespace crf

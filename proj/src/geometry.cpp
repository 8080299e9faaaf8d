#include "crf/geometry.hpp"

#include <cstdint>
#include <vector>

#include "crf/errors.hpp"
#include "crf/ops.hpp"

namespace crf {

namespace {

void require_gamma(const TensorField& gamma) {
  if (!(gamma.valence() == Valence{1, 2})) {
    throw ArgumentError("expected Christoffel symbols of valence (1 up, 2 down)");
  }
}

// Slot values of component c of a rank-r tensor in dimension d.
void unflatten(std::size_t c, int d, int r, int* idx) {
  for (int s = r - 1; s >= 0; --s) {
    idx[s] = static_cast<int>(c % static_cast<std::size_t>(d));
    c /= static_cast<std::size_t>(d);
  }
}

std::size_t flatten(const int* idx, int d, int r) {
  std::size_t c = 0;
  for (int s = 0; s < r; ++s) c = c * static_cast<std::size_t>(d) + static_cast<std::size_t>(idx[s]);
  return c;
}

// One term "out[o] += sign * coef[k] * src[s]" of a per-node correction.
struct Term {
  std::uint32_t out;
  std::uint32_t src;
  std::uint32_t coef;
  double sign;
};

}  // namespace

TensorField christoffel(const MetricField& g) {
  const int d = g.dim();
  const TensorField dg = partial_derivatives(g.tensor());  // dg(a, b, c) = d_c g_ab
  TensorField gamma(g.grid_ptr(), Valence{1, 2});
  const std::size_t du = static_cast<std::size_t>(d);
  std::vector<double> first(du * du * du);
#pragma omp parallel for schedule(static) firstprivate(first)
  for (std::size_t p = 0; p < g.nodes(); ++p) {
    const double* dgp = dg.node(p);
    const double* gi = g.inverse().node(p);
    auto D = [&](int a, int b, int c) { return dgp[(a * d + b) * d + c]; };
    for (int l = 0; l < d; ++l)
      for (int j = 0; j < d; ++j)
        for (int k = j; k < d; ++k) {
          first[(l * du + j) * du + k] = 0.5 * (D(l, k, j) + D(l, j, k) - D(j, k, l));
        }
    double* out = gamma.node(p);
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j)
        for (int k = j; k < d; ++k) {
          double acc = 0.0;
          for (int l = 0; l < d; ++l) acc += gi[i * d + l] * first[(l * du + j) * du + k];
          out[(i * d + j) * d + k] = acc;
          out[(i * d + k) * d + j] = acc;
        }
  }
  return gamma;
}

TensorField riemann_from_christoffel(const TensorField& gamma) {
  require_gamma(gamma);
  const int d = gamma.dim();
  const TensorField dgam = partial_derivatives(gamma);  // ((l, j, k), i) = d_i Gamma^l_jk
  TensorField r(gamma.grid_ptr(), Valence{1, 3});
#pragma omp parallel for schedule(static)
  for (std::size_t p = 0; p < gamma.nodes(); ++p) {
    const double* G = gamma.node(p);
    const double* dG = dgam.node(p);
    double* R = r.node(p);
    auto Gam = [&](int a, int b, int c) { return G[(a * d + b) * d + c]; };
    auto dGam = [&](int a, int b, int c, int e) { return dG[((a * d + b) * d + c) * d + e]; };
    for (int l = 0; l < d; ++l)
      for (int i = 0; i < d; ++i)
        for (int j = i + 1; j < d; ++j)
          for (int k = 0; k < d; ++k) {
            double v = dGam(l, j, k, i) - dGam(l, i, k, j);
            for (int m = 0; m < d; ++m) v += Gam(l, i, m) * Gam(m, j, k) - Gam(l, j, m) * Gam(m, i, k);
            R[((l * d + i) * d + j) * d + k] = v;
            R[((l * d + j) * d + i) * d + k] = -v;
          }
  }
  return r;
}

TensorField riemann(const MetricField& g) { return riemann_from_christoffel(christoffel(g)); }

TensorField symmetric_part(const TensorField& t) {
  if (!(t.valence() == Valence{0, 2})) throw ArgumentError("symmetric_part expects a covariant 2-tensor");
  const int d = t.dim();
  TensorField out(t.grid_ptr(), t.valence());
  for (std::size_t p = 0; p < t.nodes(); ++p) {
    const double* a = t.node(p);
    double* o = out.node(p);
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j) o[i * d + j] = 0.5 * (a[i * d + j] + a[j * d + i]);
  }
  return out;
}

CurvaturePack curvature(const MetricField& g) {
  CurvaturePack pack;
  pack.gamma = christoffel(g);
  pack.riemann = riemann_from_christoffel(pack.gamma);
  pack.ricci = symmetric_part(contract(pack.riemann, 0, 0));
  pack.scalar = einsum("ab,ab->", 0, g.inverse(), pack.ricci).to_scalar();
  return pack;
}

ScalarField scalar_curvature(const MetricField& g) { return curvature(g).scalar; }

// ---------------------------------------------------------------------------
// covariant derivatives

TensorField covariant_derivative(const TensorField& gamma, const TensorField& t) {
  require_gamma(gamma);
  require_same_grid(gamma.grid(), t.grid(), "covariant_derivative");
  const int d = t.dim();
  const int r = t.rank();
  const int up = t.valence().up;
  TensorField out = partial_derivatives(t);
  if (r == 0) return out;

  // out(X, c) += sum_s (+/-) Gamma * t(X with slot s -> m)
  std::vector<Term> terms;
  std::vector<int> idx(static_cast<std::size_t>(r));
  const std::size_t nc = t.components();
  for (std::size_t comp = 0; comp < nc; ++comp) {
    unflatten(comp, d, r, idx.data());
    for (int c = 0; c < d; ++c) {
      const auto o = static_cast<std::uint32_t>(comp * d + c);
      for (int s = 0; s < r; ++s) {
        const int keep = idx[s];
        for (int m = 0; m < d; ++m) {
          idx[s] = m;
          const auto src = static_cast<std::uint32_t>(flatten(idx.data(), d, r));
          idx[s] = keep;
          if (s < up) {
            terms.push_back({o, src, static_cast<std::uint32_t>((keep * d + c) * d + m), 1.0});
          } else {
            terms.push_back({o, src, static_cast<std::uint32_t>((m * d + c) * d + keep), -1.0});
          }
        }
      }
    }
  }
#pragma omp parallel for schedule(static)
  for (std::size_t p = 0; p < t.nodes(); ++p) {
    const double* G = gamma.node(p);
    const double* T = t.node(p);
    double* O = out.node(p);
    for (const Term& e : terms) O[e.out] += e.sign * G[e.coef] * T[e.src];
  }
  return out;
}

TensorField covariant_derivative(const MetricField& g, const TensorField& t) {
  return covariant_derivative(christoffel(g), t);
}

TensorField hessian(const TensorField& gamma, const ScalarField& f) {
  return covariant_derivative(gamma, covariant_derivative(gamma, TensorField::from_scalar(f)));
}

ScalarField laplace_beltrami(const MetricField& g, const ScalarField& f) {
  require_same_grid(g.grid(), f.grid(), "laplace_beltrami");
  const int d = g.dim();
  const std::size_t nodes = g.nodes();
  std::vector<ScalarField> df;
  df.reserve(static_cast<std::size_t>(d));
  for (int b = 0; b < d; ++b) df.push_back(fd_derivative(f, b));
  ScalarField out(f.grid_ptr());
  ScalarField flux(f.grid_ptr());
  const auto& vol = g.volume_density();
  for (int a = 0; a < d; ++a) {
    for (std::size_t p = 0; p < nodes; ++p) {
      const double* gi = g.inverse().node(p);
      double acc = 0.0;
      for (int b = 0; b < d; ++b) acc += gi[a * d + b] * df[static_cast<std::size_t>(b)][p];
      flux[p] = vol[p] * acc;
    }
    out += fd_derivative(flux, a);
  }
  for (std::size_t p = 0; p < nodes; ++p) out[p] /= vol[p];
  return out;
}

TensorField tensor_laplacian(const MetricField& g, const TensorField& gamma, const TensorField& t) {
  require_gamma(gamma);
  require_same_grid(g.grid(), t.grid(), "tensor_laplacian");
  const int d = t.dim();
  const int r = t.rank();
  const int up = t.valence().up;
  const std::size_t du = static_cast<std::size_t>(d);
  const TensorField G = covariant_derivative(gamma, t);  // G(X, b) = nabla_b T(X)
  TensorField out(t.grid_ptr(), t.valence());
  const std::size_t nc = t.components();

  // Principal part: g^{ab} d_a G(X, b).
  for (int a = 0; a < d; ++a) {
    const TensorField dG = fd_derivative(G, a);
#pragma omp parallel for schedule(static)
    for (std::size_t p = 0; p < t.nodes(); ++p) {
      const double* gi = g.inverse().node(p);
      const double* src = dG.node(p);
      double* O = out.node(p);
      for (std::size_t x = 0; x < nc; ++x) {
        double acc = 0.0;
        for (std::size_t b = 0; b < du; ++b) acc += gi[a * d + b] * src[x * du + b];
        O[x] += acc;
      }
    }
  }

  // Connection terms. Per-node coefficients: gG(x, m, b) = g^{ab} Gamma^x_{am}
  // (d^3 entries) followed by gc(m) = g^{ab} Gamma^m_{ab} (d entries).
  std::vector<Term> terms;
  std::vector<int> idx(static_cast<std::size_t>(r));
  const std::size_t gc_base = du * du * du;
  for (std::size_t comp = 0; comp < nc; ++comp) {
    unflatten(comp, d, r, idx.data());
    const auto o = static_cast<std::uint32_t>(comp);
    for (int s = 0; s < r; ++s) {
      const int keep = idx[s];
      for (int m = 0; m < d; ++m) {
        idx[s] = m;
        const std::size_t moved = flatten(idx.data(), d, r);
        idx[s] = keep;
        for (int b = 0; b < d; ++b) {
          const auto src = static_cast<std::uint32_t>(moved * du + b);
          if (s < up) {
            terms.push_back({o, src, static_cast<std::uint32_t>((keep * d + m) * d + b), 1.0});
          } else {
            terms.push_back({o, src, static_cast<std::uint32_t>((m * d + keep) * d + b), -1.0});
          }
        }
      }
    }
    for (int m = 0; m < d; ++m) {
      terms.push_back({o, static_cast<std::uint32_t>(comp * du + m),
                       static_cast<std::uint32_t>(gc_base + m), -1.0});
    }
  }
  std::vector<double> coef(gc_base + du);
#pragma omp parallel for schedule(static) firstprivate(coef)
  for (std::size_t p = 0; p < t.nodes(); ++p) {
    const double* gi = g.inverse().node(p);
    const double* Gam = gamma.node(p);
    for (int x = 0; x < d; ++x)
      for (int m = 0; m < d; ++m)
        for (int b = 0; b < d; ++b) {
          double acc = 0.0;
          for (int a = 0; a < d; ++a) acc += gi[a * d + b] * Gam[(x * d + a) * d + m];
          coef[(x * du + m) * du + b] = acc;
        }
    for (int m = 0; m < d; ++m) {
      double acc = 0.0;
      for (int a = 0; a < d; ++a)
        for (int b = 0; b < d; ++b) acc += gi[a * d + b] * Gam[(m * d + a) * d + b];
      coef[gc_base + m] = acc;
    }
    const double* src = G.node(p);
    double* O = out.node(p);
    for (const Term& e : terms) O[e.out] += e.sign * coef[e.coef] * src[e.src];
  }
  return out;
}

TensorField tensor_laplacian(const MetricField& g, const TensorField& t) {
  return tensor_laplacian(g, christoffel(g), t);
}

TensorField divergence(const TensorField& gamma, const TensorField& t) {
  require_gamma(gamma);
  require_same_grid(gamma.grid(), t.grid(), "divergence");
  const Valence v = t.valence();
  if (v.up < 1) throw ArgumentError("divergence: tensor has no contravariant slot");
  const int d = t.dim();
  const int r = t.rank();
  const std::size_t du = static_cast<std::size_t>(d);
  TensorField out(t.grid_ptr(), Valence{v.up - 1, v.down});
  const std::size_t nc_out = out.components();
  const std::size_t block = t.components() / du;  // components with a fixed first slot

  for (int a = 0; a < d; ++a) {
    const TensorField dt = fd_derivative(t, a);
#pragma omp parallel for schedule(static)
    for (std::size_t p = 0; p < t.nodes(); ++p) {
      const double* src = dt.node(p) + static_cast<std::size_t>(a) * block;
      double* O = out.node(p);
      for (std::size_t y = 0; y < nc_out; ++y) O[y] += src[y];
    }
  }

  std::vector<Term> terms;
  std::vector<int> idx(static_cast<std::size_t>(r));
  for (std::size_t y = 0; y < nc_out; ++y) {
    for (int a = 0; a < d; ++a) {
      // full index (a, Y)
      idx[0] = a;
      unflatten(y, d, r - 1, idx.data() + 1);
      for (int s = 0; s < r; ++s) {
        const int keep = idx[s];
        for (int m = 0; m < d; ++m) {
          idx[s] = m;
          const auto src = static_cast<std::uint32_t>(flatten(idx.data(), d, r));
          idx[s] = keep;
          if (s < v.up) {
            terms.push_back({static_cast<std::uint32_t>(y), src,
                             static_cast<std::uint32_t>((keep * d + a) * d + m), 1.0});
          } else {
            terms.push_back({static_cast<std::uint32_t>(y), src,
                             static_cast<std::uint32_t>((m * d + a) * d + keep), -1.0});
          }
        }
      }
    }
  }
#pragma omp parallel for schedule(static)
  for (std::size_t p = 0; p < t.nodes(); ++p) {
    const double* G = gamma.node(p);
    const double* T = t.node(p);
    double* O = out.node(p);
    for (const Term& e : terms) O[e.out] += e.sign * G[e.coef] * T[e.src];
  }
  return out;
}

TensorField divergence(const MetricField& g, const TensorField& t) {
  return divergence(christoffel(g), t);
}

}  // namespace crf

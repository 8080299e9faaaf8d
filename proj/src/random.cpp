#include "crf/random.hpp"

#include <cmath>
#include <numbers>
#include <vector>

#include "crf/errors.hpp"

namespace crf {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

}  // namespace

std::uint64_t CounterRng::bits(std::uint64_t counter) const {
  return splitmix64(splitmix64(splitmix64(seed_) ^ stream_) ^ counter);
}

double CounterRng::symmetric(std::uint64_t counter) const {
  const double u = static_cast<double>(bits(counter) >> 11) * 0x1.0p-53;
  return 2.0 * u - 1.0;
}

ScalarField random_smooth_scalar(GridPtr grid, std::uint64_t seed, std::uint64_t stream,
                                 double amplitude, int max_mode) {
  if (max_mode < 1) throw ArgumentError("random_smooth_scalar: max_mode must be >= 1");
  const int d = grid->dim();
  const CounterRng rng(seed, stream);

  // Enumerate the modes of one half space (first nonzero component positive).
  struct Mode {
    std::vector<int> k;
    double a;
    double phase;
  };
  std::vector<Mode> modes;
  const int side = 2 * max_mode + 1;
  std::size_t total = 1;
  for (int a = 0; a < d; ++a) total *= static_cast<std::size_t>(side);
  std::uint64_t counter = 0;
  double norm = 0.0;
  for (std::size_t m = 0; m < total; ++m) {
    std::vector<int> k(static_cast<std::size_t>(d));
    std::size_t rest = m;
    for (int a = d - 1; a >= 0; --a) {
      k[static_cast<std::size_t>(a)] = static_cast<int>(rest % side) - max_mode;
      rest /= side;
    }
    int lead = 0;
    for (int v : k) {
      if (v != 0) {
        lead = v;
        break;
      }
    }
    if (lead <= 0) continue;
    double k2 = 0.0;
    for (int v : k) k2 += static_cast<double>(v) * v;
    const double a = rng.symmetric(counter++) / (1.0 + k2);
    const double phase = std::numbers::pi * rng.symmetric(counter++);
    norm += std::abs(a);
    modes.push_back({std::move(k), a, phase});
  }
  const double scale = norm > 0.0 ? amplitude / norm : 0.0;

  ScalarField f(grid);
  std::vector<double> x(static_cast<std::size_t>(d));
  for (std::size_t p = 0; p < grid->nodes(); ++p) {
    grid->coordinates(p, x.data());
    double v = 0.0;
    for (const Mode& md : modes) {
      double arg = md.phase;
      for (int a = 0; a < d; ++a) {
        arg += 2.0 * std::numbers::pi * md.k[static_cast<std::size_t>(a)] *
               x[static_cast<std::size_t>(a)] / grid->period(a);
      }
      v += md.a * std::cos(arg);
    }
    f[p] = scale * v;
  }
  return f;
}

TensorField random_smooth_symmetric(GridPtr grid, std::uint64_t seed, std::uint64_t stream,
                                    double amplitude, int max_mode) {
  const int d = grid->dim();
  TensorField t(grid, Valence{0, 2});
  std::uint64_t sub = 0;
  for (int i = 0; i < d; ++i) {
    for (int j = i; j < d; ++j) {
      const ScalarField c =
          random_smooth_scalar(grid, seed, stream * 1000003ull + sub++, amplitude, max_mode);
      for (std::size_t p = 0; p < grid->nodes(); ++p) {
        t(p, static_cast<std::size_t>(i * d + j)) = c[p];
        t(p, static_cast<std::size_t>(j * d + i)) = c[p];
      }
    }
  }
  return t;
}

TensorField random_smooth_tensor(GridPtr grid, Valence valence, std::uint64_t seed,
                                 std::uint64_t stream, double amplitude, int max_mode) {
  TensorField t(grid, valence);
  for (std::size_t c = 0; c < t.components(); ++c) {
    const ScalarField f = random_smooth_scalar(grid, seed, stream * 1000003ull + c, amplitude, max_mode);
    for (std::size_t p = 0; p < grid->nodes(); ++p) t(p, c) = f[p];
  }
  return t;
}

MetricField random_smooth_metric(GridPtr grid, std::uint64_t seed, std::uint64_t stream,
                                 double amplitude, int max_mode) {
  TensorField g = random_smooth_symmetric(grid, seed, stream, amplitude, max_mode);
  const int d = grid->dim();
  for (std::size_t p = 0; p < grid->nodes(); ++p) {
    for (int i = 0; i < d; ++i) g(p, static_cast<std::size_t>(i * d + i)) += 1.0;
  }
  return MetricField(std::move(g));
}

}  // namespace crf

namespace crf {

MetricField seeded_base_metric(GridPtr grid, std::uint64_t seed, double warp, double amplitude,
                               int max_mode) {
  const int d = grid->dim();
  const CounterRng rng(seed, 0xba5e);
  const double shift = 0.5 * (rng.symmetric(0) + 1.0);
  TensorField g = amplitude > 0.0 ? random_smooth_symmetric(grid, seed, 0xba5e + 1, amplitude, max_mode)
                                  : TensorField(grid, Valence{0, 2});
  for (std::size_t p = 0; p < grid->nodes(); ++p) {
    const double x = grid->coordinate(p, 0) / grid->period(0);
    const double f = warp * std::sin(2.0 * std::numbers::pi * (x + shift));
    double* gp = g.node(p);
    gp[0] += 1.0;
    gp[1 * d + 1] += std::exp(2.0 * f);
    gp[2 * d + 2] += std::exp(-2.0 * f);
    for (int i = 3; i < d; ++i) gp[i * d + i] += 1.0;
  }
  return MetricField(std::move(g));
}

}  // namespace crf

// Python bindings: curvature of sampled metrics, Yamabe normalization and
// the experiment drivers. Arrays are C-ordered, shape (N0, ..., N{n-1}, n, n).

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <algorithm>
#include <cstring>
#include <optional>

#include "crf/config.hpp"
#include "crf/elliptic.hpp"
#include "crf/errors.hpp"
#include "crf/experiments.hpp"
#include "crf/geometry.hpp"
#include "crf/random.hpp"

namespace py = pybind11;
using namespace crf;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

GridPtr grid_for(const Array& g, double period) {
  const auto nd = g.ndim();
  if (nd < 5) throw ArgumentError("metric array must have shape (N, ..., N, n, n) with n >= 3");
  const int dim = static_cast<int>(nd - 2);
  if (g.shape(nd - 1) != dim || g.shape(nd - 2) != dim) {
    throw ArgumentError("trailing axes must both have length " + std::to_string(dim));
  }
  GridSpec spec;
  spec.dim = dim;
  for (int a = 0; a < dim; ++a) {
    spec.resolution.push_back(static_cast<int>(g.shape(a)));
    spec.period.push_back(period);
  }
  return make_grid(std::move(spec));
}

MetricField to_metric(const Array& g, double period) {
  TensorField t(grid_for(g, period), Valence{0, 2});
  std::memcpy(t.data().data(), g.data(), t.data().size() * sizeof(double));
  return MetricField(std::move(t));
}

std::vector<py::ssize_t> node_shape(const Grid& grid) {
  std::vector<py::ssize_t> shape;
  for (int r : grid.spec().resolution) shape.push_back(r);
  return shape;
}

Array from_scalar(const ScalarField& f) {
  Array out(node_shape(f.grid()));
  std::copy(f.values().begin(), f.values().end(), out.mutable_data());
  return out;
}

Array from_rank2(const TensorField& t) {
  auto shape = node_shape(t.grid());
  shape.push_back(t.grid().dim());
  shape.push_back(t.grid().dim());
  Array out(shape);
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

py::dict verdict_dict(const IdentityVerdict& v) {
  py::dict d;
  d["name"] = v.name;
  d["exact"] = v.exact;
  d["resolutions"] = v.resolutions;
  d["residuals"] = v.residuals;
  d["order"] = v.order ? py::cast(*v.order) : py::none();
  d["pass"] = v.pass;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Periodic finite-difference curvature and flow laboratory";

  // translators run last-registered first, so the base class goes first
  const auto& base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<GeometryError>(m, "GeometryError", base.ptr());
  py::register_exception<NormalizationError>(m, "NormalizationError", base.ptr());

  m.def(
      "scalar_curvature",
      [](const Array& g, double period) { return from_scalar(scalar_curvature(to_metric(g, period))); },
      py::arg("metric"), py::arg("period") = 1.0, "Scalar curvature at every node.");
  m.def(
      "ricci",
      [](const Array& g, double period) { return from_rank2(curvature(to_metric(g, period)).ricci); },
      py::arg("metric"), py::arg("period") = 1.0, "Ricci tensor R_ij at every node.");
  m.def(
      "seeded_base_metric",
      [](int resolution, std::uint64_t seed, double warp, double amplitude) {
        return from_rank2(seeded_base_metric(make_cube_grid(resolution), seed, warp, amplitude).tensor());
      },
      py::arg("resolution"), py::arg("seed") = 1, py::arg("warp") = 1.0, py::arg("amplitude") = 0.02);
  m.def(
      "yamabe_normalize",
      [](const Array& g, double s0, double period) {
        const YamabeResult y = yamabe_normalize(to_metric(g, period), s0);
        return py::make_tuple(from_rank2(y.metric.tensor()), y.report.iterations, y.drift);
      },
      py::arg("metric"), py::arg("s0") = -1.0, py::arg("period") = 1.0,
      "Conformal rescaling to constant scalar curvature s0; returns (metric, iterations, drift).");
  m.def(
      "verify",
      [](std::vector<int> resolutions, std::uint64_t seed, int max_mode) {
        ExperimentConfig cfg;
        cfg.resolution = std::move(resolutions);
        cfg.seed = seed;
        cfg.max_mode = max_mode;
        validate(cfg);
        const VerifyOutcome o = run_verify(cfg);
        py::list out;
        for (const IdentityVerdict& v : o.identities) out.append(verdict_dict(v));
        return out;
      },
      py::arg("resolutions") = std::vector<int>{16, 32}, py::arg("seed") = 1, py::arg("max_mode") = 1,
      "Difference identity residuals on seeded random pairs.");
  m.def(
      "run_config",
      [](const std::filesystem::path& path, std::optional<std::filesystem::path> output_dir) {
        ExperimentConfig cfg;
        try {
          cfg = load_config(path);
        } catch (const ConfigError& e) {
          py::print("config error:", e.what(), py::arg("file") = py::module_::import("sys").attr("stderr"));
          return static_cast<int>(exit_config_error);
        }
        if (output_dir) cfg.output_dir = *output_dir;
        py::gil_scoped_release release;
        return run_experiment(cfg);
      },
      py::arg("path"), py::arg("output_dir") = py::none(), "Runs a config file; returns the CLI exit code.");
}

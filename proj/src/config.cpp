#include "crf/config.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <functional>
#include <istream>
#include <map>
#include <set>

#include "crf/errors.hpp"
#include "crf/io.hpp"

namespace crf {

namespace {

std::string trim(std::string s) {
  const auto not_space = [](unsigned char c) { return !std::isspace(c); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  return s;
}

bool valid_key(const std::string& k) {
  if (k.empty() || !(k[0] >= 'a' && k[0] <= 'z')) return false;
  return std::all_of(k.begin(), k.end(), [](char c) {
    return (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '_';
  });
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto comma = v.find(',', start);
    out.push_back(trim(v.substr(start, comma - start)));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

template <typename T>
T parse_number(const std::string& v, const std::string& where) {
  T x{};
  const char* end = v.data() + v.size();
  const auto [ptr, ec] = std::from_chars(v.data(), end, x);
  if (ec != std::errc() || ptr != end) throw ConfigError(where + ": cannot parse '" + v + "'");
  return x;
}

bool parse_bool(const std::string& v, const std::string& where) {
  if (v == "true") return true;
  if (v == "false") return false;
  throw ConfigError(where + ": expected true or false, got '" + v + "'");
}

using Setter = std::function<void(ExperimentConfig&, const std::string&, const std::string&)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = [] {
    std::map<std::string, Setter> m;
    auto real = [](double ExperimentConfig::*f) {
      return [f](ExperimentConfig& c, const std::string& v, const std::string& w) {
        c.*f = parse_number<double>(v, w);
      };
    };
    auto integer = [](int ExperimentConfig::*f) {
      return [f](ExperimentConfig& c, const std::string& v, const std::string& w) {
        c.*f = parse_number<int>(v, w);
      };
    };
    auto flag = [](bool ExperimentConfig::*f) {
      return [f](ExperimentConfig& c, const std::string& v, const std::string& w) {
        c.*f = parse_bool(v, w);
      };
    };
    auto text = [](std::string ExperimentConfig::*f) {
      return [f](ExperimentConfig& c, const std::string& v, const std::string&) { c.*f = v; };
    };
    m["experiment"] = [](ExperimentConfig& c, const std::string& v, const std::string& w) {
      try {
        c.experiment = parse_experiment_kind(v);
        c.experiment_given = true;
      } catch (const ConfigError& e) {
        throw ConfigError(w + ": " + e.what());
      }
    };
    m["dim"] = integer(&ExperimentConfig::dim);
    m["resolution"] = [](ExperimentConfig& c, const std::string& v, const std::string& w) {
      c.resolution.clear();
      for (const std::string& item : split_list(v)) c.resolution.push_back(parse_number<int>(item, w));
    };
    m["period"] = real(&ExperimentConfig::period);
    m["s0"] = real(&ExperimentConfig::s0);
    m["t_final"] = real(&ExperimentConfig::t_final);
    m["dt"] = real(&ExperimentConfig::dt);
    m["seed"] = [](ExperimentConfig& c, const std::string& v, const std::string& w) {
      c.seed = parse_number<std::uint64_t>(v, w);
    };
    m["perturbation"] = real(&ExperimentConfig::perturbation);
    m["scheme_a"] = text(&ExperimentConfig::scheme_a);
    m["scheme_b"] = text(&ExperimentConfig::scheme_b);
    m["snapshot_stride"] = integer(&ExperimentConfig::snapshot_stride);
    m["residual_times"] = [](ExperimentConfig& c, const std::string& v, const std::string& w) {
      c.residual_times.clear();
      for (const std::string& item : split_list(v)) c.residual_times.push_back(parse_number<double>(item, w));
    };
    m["bound_monitors"] = flag(&ExperimentConfig::bound_monitors);
    m["output_dir"] = [](ExperimentConfig& c, const std::string& v, const std::string&) {
      c.output_dir = v;
    };
    m["pressure_tol"] = real(&ExperimentConfig::pressure_tol);
    m["pressure_max_iter"] = integer(&ExperimentConfig::pressure_max_iter);
    m["yamabe_tol"] = real(&ExperimentConfig::yamabe_tol);
    m["yamabe_max_iter"] = integer(&ExperimentConfig::yamabe_max_iter);
    m["cfl"] = real(&ExperimentConfig::cfl);
    m["constraint_ceiling"] = real(&ExperimentConfig::constraint_ceiling);
    m["reproject_every"] = integer(&ExperimentConfig::reproject_every);
    m["model"] = text(&ExperimentConfig::model);
    m["warp"] = real(&ExperimentConfig::warp);
    m["base_amplitude"] = real(&ExperimentConfig::base_amplitude);
    m["max_mode"] = integer(&ExperimentConfig::max_mode);
    m["verify_amplitude"] = real(&ExperimentConfig::verify_amplitude);
    m["identical_pair"] = flag(&ExperimentConfig::identical_pair);
    m["self_test"] = flag(&ExperimentConfig::self_test);
    return m;
  }();
  return table;
}

}  // namespace

const char* to_string(ExperimentKind kind) {
  switch (kind) {
    case ExperimentKind::verify: return "verify";
    case ExperimentKind::flow: return "flow";
    case ExperimentKind::twin: return "twin";
  }
  return "?";
}

ExperimentKind parse_experiment_kind(const std::string& name) {
  if (name == "verify") return ExperimentKind::verify;
  if (name == "flow") return ExperimentKind::flow;
  if (name == "twin") return ExperimentKind::twin;
  throw ConfigError("unknown experiment '" + name + "' (expected verify, flow or twin)");
}

GridSpec ExperimentConfig::grid(int res) const { return GridSpec::cube(res, dim, period); }

FlowOptions ExperimentConfig::flow_options() const {
  FlowOptions o;
  o.pressure = {pressure_tol, pressure_max_iter};
  o.cfl = cfl;
  o.constraint_ceiling = constraint_ceiling;
  o.reproject_every = reproject_every;
  o.yamabe.tolerance = yamabe_tol;
  o.yamabe.max_iterations = yamabe_max_iter;
  if (model == "einstein") {
    o.model = std::make_shared<EinsteinModel>(s0);
  } else {
    o.model = std::make_shared<RicciModel>();
  }
  return o;
}

ExperimentConfig parse_config(std::istream& in, const std::string& source) {
  ExperimentConfig cfg;
  std::set<std::string> seen;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string where = source + ":" + std::to_string(lineno);
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + ": expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (!valid_key(key)) throw ConfigError(where + ": invalid key '" + key + "'");
    const auto it = setters().find(key);
    if (it == setters().end()) throw ConfigError(where + ": unknown key '" + key + "'");
    if (!seen.insert(key).second) throw ConfigError(where + ": repeated key '" + key + "'");
    if (value.empty()) throw ConfigError(where + ": empty value for '" + key + "'");
    it->second(cfg, value, where + " (" + key + ")");
  }
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  return parse_config(in, path.string());
}

void validate(const ExperimentConfig& c) {
  auto fail = [](const std::string& msg) { throw ConfigError(msg); };
  if (c.dim < 3) fail("dim must be >= 3");
  if (c.resolution.empty()) fail("resolution must list at least one value");
  for (int r : c.resolution) {
    if (r < 8) fail("resolution must be >= 8");
  }
  if (!(c.period > 0.0)) fail("period must be positive");
  if (!(c.s0 < 0.0)) fail("s0 must be negative");
  if (!(c.perturbation >= 0.0)) fail("perturbation must be >= 0");
  if (!(c.pressure_tol > 0.0) || c.pressure_max_iter < 1) fail("pressure solver settings must be positive");
  if (!(c.yamabe_tol > 0.0) || c.yamabe_max_iter < 1) fail("yamabe settings must be positive");
  if (!(c.cfl > 0.0)) fail("cfl must be positive");
  if (!(c.constraint_ceiling > 0.0)) fail("constraint_ceiling must be positive");
  if (c.reproject_every < 0) fail("reproject_every must be >= 0");
  if (c.model != "ricci" && c.model != "einstein") fail("model must be ricci or einstein");
  if (c.max_mode < 1 || c.max_mode > 3) fail("max_mode must be 1, 2 or 3");
  if (!(c.warp >= 0.0) || !(c.base_amplitude >= 0.0)) fail("warp and base_amplitude must be >= 0");
  if (c.experiment == ExperimentKind::verify) {
    if (!(c.verify_amplitude > 0.0) || c.verify_amplitude >= 0.5) fail("verify_amplitude must lie in (0, 0.5)");
    return;
  }
  if (c.resolution.size() != 1) fail("flow and twin take a single resolution");
  if (!(c.t_final >= 0.0)) fail("t_final must be >= 0");
  if (!(c.dt > 0.0)) fail("dt must be positive");
  if (c.snapshot_stride < 1) fail("snapshot_stride must be >= 1");
  const Grid grid(c.grid(c.resolution.front()));
  const double ceiling = dt_ceiling(grid, c.cfl);
  if (c.dt > ceiling * (1.0 + 1e-12)) {
    fail("dt " + format_real(c.dt) + " exceeds the stability ceiling cfl * dx^2 = " + format_real(ceiling));
  }
  if (c.experiment == ExperimentKind::twin) {
    for (const std::string& s : {c.scheme_a, c.scheme_b}) {
      if (s != "rk4" && s != "rk4_half") fail("scheme must be rk4 or rk4_half, got '" + s + "'");
    }
    for (double t : c.residual_times) {
      if (!(t > 0.0) || !(t < c.t_final)) fail("residual_times must lie inside (0, t_final)");
    }
  }
}

}  // namespace crf

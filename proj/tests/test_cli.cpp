#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>

#include "crf/config.hpp"
#include "crf/errors.hpp"
#include "crf/experiments.hpp"
#include "doctest.h"
#include "json.hpp"

using namespace crf;
namespace fs = std::filesystem;

namespace {

ExperimentConfig parse(const std::string& text) {
  std::istringstream in(text);
  return parse_config(in);
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("crf_cli_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

fs::path write_file(const fs::path& p, const std::string& text) {
  std::ofstream(p) << text;
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

int cli(const std::string& args, const std::string& env = "") {
  const std::string cmd = env + " \"" CRF_LAB_PATH "\" " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_CASE("config parsing") {
  const ExperimentConfig c = parse(
      "# comment\n"
      "experiment = twin   # trailing comment\n"
      "resolution = 24\n"
      "dt = 5e-4\n"
      "perturbation = 1e-6\n"
      "scheme_b = rk4_half\n"
      "residual_times = 0.03, 0.05\n"
      "bound_monitors = false\n"
      "\n"
      "seed = 17\n");
  CHECK(c.experiment == ExperimentKind::twin);
  CHECK(c.experiment_given);
  CHECK(c.resolution == std::vector<int>{24});
  CHECK(c.dt == 5e-4);
  CHECK(c.perturbation == 1e-6);
  CHECK(c.scheme_b == "rk4_half");
  CHECK(c.residual_times == std::vector<double>{0.03, 0.05});
  CHECK_FALSE(c.bound_monitors);
  CHECK(c.seed == 17u);
  CHECK(c.s0 == -1.0);

  const ExperimentConfig v = parse("resolution = 16, 32\n");
  CHECK(v.resolution == std::vector<int>{16, 32});
  CHECK_FALSE(v.experiment_given);

  CHECK_THROWS_AS(parse("unknown_key = 1\n"), ConfigError);
  CHECK_THROWS_AS(parse("dt = 1e-3\ndt = 2e-3\n"), ConfigError);
  CHECK_THROWS_AS(parse("Dt = 1e-3\n"), ConfigError);
  CHECK_THROWS_AS(parse("dt 1e-3\n"), ConfigError);
  CHECK_THROWS_AS(parse("dt = fast\n"), ConfigError);
  CHECK_THROWS_AS(parse("dt =\n"), ConfigError);
  CHECK_THROWS_AS(parse("experiment = sweep\n"), ConfigError);
  CHECK_THROWS_AS(parse("self_test = yes\n"), ConfigError);
  CHECK_THROWS_AS(load_config("/nonexistent/crf.cfg"), ConfigError);
}

TEST_CASE("config validation") {
  auto flow = [] {
    ExperimentConfig c;
    c.experiment = ExperimentKind::flow;
    c.cfl = 0.6;
    return c;
  };
  CHECK_NOTHROW(validate(flow()));
  {
    ExperimentConfig c = flow();
    c.s0 = 0.0;
    CHECK_THROWS_AS(validate(c), ConfigError);
  }
  {
    ExperimentConfig c = flow();
    c.cfl = 0.1;  // ceiling 0.1 / 256 < dt = 1e-3
    CHECK_THROWS_AS(validate(c), ConfigError);
  }
  {
    ExperimentConfig c = flow();
    c.perturbation = -1e-6;
    CHECK_THROWS_AS(validate(c), ConfigError);
  }
  {
    ExperimentConfig c = flow();
    c.resolution = {16, 32};
    CHECK_THROWS_AS(validate(c), ConfigError);
  }
  {
    ExperimentConfig c = flow();
    c.resolution = {6};
    CHECK_THROWS_AS(validate(c), ConfigError);
  }
  {
    ExperimentConfig c = flow();
    c.dim = 2;
    CHECK_THROWS_AS(validate(c), ConfigError);
  }
  {
    ExperimentConfig c = flow();
    c.experiment = ExperimentKind::twin;
    c.scheme_a = "euler";
    CHECK_THROWS_AS(validate(c), ConfigError);
  }
  {
    ExperimentConfig c = flow();
    c.model = "hamilton";
    CHECK_THROWS_AS(validate(c), ConfigError);
  }
  {
    ExperimentConfig c;
    c.resolution = {16, 32};
    CHECK_NOTHROW(validate(c));
  }
}

TEST_CASE("output times exclude both ends") {
  ExperimentConfig c;
  c.t_final = 0.1;
  c.dt = 1e-3;
  c.snapshot_stride = 25;
  const auto t = output_times(c);
  REQUIRE(t.size() == 3);
  CHECK(t[0] == doctest::Approx(0.025));
  CHECK(t[2] == doctest::Approx(0.075));
}

TEST_CASE("run_experiment maps errors to exit codes") {
  ExperimentConfig c;
  c.experiment = ExperimentKind::flow;  // dt above the default ceiling
  CHECK(run_experiment(c) == exit_config_error);

  ExperimentConfig fixed;
  fixed.experiment = ExperimentKind::flow;
  fixed.model = "einstein";
  fixed.cfl = 0.6;
  fixed.t_final = 0.003;
  fixed.snapshot_stride = 1;
  CHECK(run_experiment(fixed) == exit_ok);

  ExperimentConfig bad_data = fixed;
  bad_data.model = "ricci";
  bad_data.warp = 0.0;
  bad_data.base_amplitude = 0.0;  // flat base: nothing to normalize
  CHECK(run_experiment(bad_data) == exit_numerical_failure);
}

TEST_CASE("fixed-point flow keeps its monitors flat") {
  ExperimentConfig c;
  c.experiment = ExperimentKind::flow;
  c.model = "einstein";
  c.cfl = 0.6;
  c.t_final = 0.004;
  c.snapshot_stride = 2;
  const FlowOutcome o = run_flow(c);
  CHECK(o.exit_code == exit_ok);
  REQUIRE(o.trajectory.monitors.size() == 3);
  for (const FlowMonitor& m : o.trajectory.monitors) {
    CHECK(m.vol == doctest::Approx(o.trajectory.monitors.front().vol).epsilon(1e-12));
    CHECK(m.p_l2 <= 1e-12);
    CHECK(m.drift_sup <= 1e-12);
  }
}

TEST_CASE("verify experiment") {
  ExperimentConfig c;
  c.resolution = {16, 32};
  c.max_mode = 1;
  SUBCASE("seeded pairs pass") {
    const VerifyOutcome o = run_verify(c);
    CHECK(o.exit_code == exit_ok);
    CHECK(o.identities.size() == 9);
    for (const IdentityVerdict& v : o.identities) {
      INFO(v.name);
      CHECK(v.pass);
      if (v.exact) CHECK(v.residuals.back() <= 1e-12);
      if (!v.exact) CHECK(*v.order >= 3.5);
    }
  }
  SUBCASE("self test must fail") {
    c.self_test = true;
    const VerifyOutcome o = run_verify(c);
    CHECK(o.exit_code == exit_threshold_violation);
    CHECK(o.failures == "self_test_flipped_ginv");
  }
}

TEST_CASE("command line") {
  const fs::path dir = scratch("cli");
  const fs::path verify = write_file(dir / "verify.cfg", "resolution = 16, 32\nmax_mode = 1\n");
  CHECK(cli("verify --config " + verify.string() + " --output-dir " + (dir / "a").string()) == 0);
  CHECK(fs::exists(dir / "a" / "residuals.csv"));
  CHECK(fs::exists(dir / "a" / "summary.json"));
  const auto summary = nlohmann::json::parse(slurp(dir / "a" / "summary.json"));
  CHECK(summary["pass"].get<bool>());

  SUBCASE("bit-identical reports across runs and thread counts") {
    CHECK(cli("verify --config " + verify.string() + " --output-dir " + (dir / "b").string(),
              "CRF_LAB_THREADS=1") == 0);
    CHECK(cli("verify --config " + verify.string() + " --output-dir " + (dir / "c").string(),
              "CRF_LAB_THREADS=2") == 0);
    for (const char* f : {"residuals.csv", "residuals.json", "identities.csv", "summary.json"}) {
      INFO(f);
      CHECK(slurp(dir / "a" / f) == slurp(dir / "b" / f));
      CHECK(slurp(dir / "a" / f) == slurp(dir / "c" / f));
    }
  }
  SUBCASE("exit codes") {
    const fs::path self = write_file(dir / "self.cfg", "resolution = 16, 32\nmax_mode = 1\nself_test = true\n");
    CHECK(cli("verify --config " + self.string()) == 4);
    const fs::path unknown = write_file(dir / "unknown.cfg", "colour = blue\n");
    CHECK(cli("verify --config " + unknown.string()) == 2);
    const fs::path fast = write_file(dir / "fast.cfg", "experiment = flow\ndt = 1e-2\ncfl = 0.6\n");
    CHECK(cli("flow --config " + fast.string()) == 2);
    CHECK(cli("twin --config " + verify.string() + " --seed 3") == 2);
    CHECK(cli("verify --config " + (dir / "missing.cfg").string()) == 2);
    CHECK(cli("verify") == 2);
    CHECK(cli("sweep --config " + verify.string()) == 2);
  }
}

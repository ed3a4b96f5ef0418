#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "msgate/config.hpp"
#include "msgate/constants.hpp"
#include "msgate/errors.hpp"

using namespace msgate;
namespace c = msgate::constants;
using nlohmann::json;

namespace {

struct EnvGuard {
  EnvGuard() { clear(); }
  ~EnvGuard() { clear(); }
  static void clear() {
    unsetenv("MSGATE_OUTPUT_DIR");
    unsetenv("MSGATE_SEED");
  }
};

}  // namespace

TEST_CASE("defaults validate and round trip") {
  const auto d = config::ArtifactConfig::defaults(2);
  CHECK_NOTHROW(d.validate());
  const auto back = config::config_from_json(config::to_json(d));
  CHECK(config::to_json(back) == config::to_json(d));
}

TEST_CASE("unknown keys are rejected at every level") {
  CHECK_THROWS_AS(config::config_from_json({{"sed", 1}}), ConfigError);
  CHECK_THROWS_AS(config::config_from_json({{"trap", {{"axial_hz", 1e6}, {"bogus", 1}}}}), ConfigError);
  CHECK_THROWS_AS(config::config_from_json({{"comb", {{"f_rep", 1}}}}), ConfigError);
  CHECK_THROWS_AS(config::config_from_json({{"truth", {{"zeta", 1.1}}}}), ConfigError);
  CHECK_THROWS_AS(config::config_from_json({{"pipeline", {{"shot", 10}}}}), ConfigError);
  CHECK_THROWS_AS(config::config_from_json({{"pipeline", {{"nominal", {{"xi", 1}}}}}}), ConfigError);
  CHECK_THROWS_AS(config::config_from_json(json::array()), ConfigError);
}

TEST_CASE("pipeline options use Hz on disk") {
  const auto c0 = config::config_from_json({{"pipeline", {{"coarse_step_hz", 1000.0}, {"shots", 300}}}});
  CHECK(c0.pipeline.coarse_step == doctest::Approx(c::two_pi * 1000.0));
  CHECK(c0.pipeline.shots == 300);
  CHECK(calib::to_json(c0.pipeline).at("coarse_step_hz").get<double>() == doctest::Approx(1000.0));
  CHECK_THROWS_AS(config::config_from_json({{"pipeline", {{"shots", 0}}}}), ConfigError);
  CHECK_THROWS_AS(config::config_from_json({{"pipeline", {{"anchor_reps", {4, 4}}}}}), ConfigError);
}

TEST_CASE("trap settings reach the truth and the controller") {
  const auto cfg = config::config_from_json({{"trap", {{"ion_count", 3}}}, {"seed", 5}});
  CHECK(cfg.trap.ion_count == 3);
  CHECK(cfg.truth.trap.ion_count == 3);
  CHECK(cfg.pipeline.nominal.trap.ion_count == 3);
  CHECK(cfg.truth.seed == 5);
}

TEST_CASE("config file with comments") {
  const auto path = (std::filesystem::temp_directory_path() / "msgate_cfg_test.json").string();
  {
    std::ofstream out(path);
    out << "// run settings\n{\n  \"seed\": 42, /* fixed */\n  \"output_dir\": \"out\"\n}\n";
  }
  const auto cfg = config::load_config(path);
  CHECK(cfg.seed == 42);
  CHECK(cfg.output_dir == "out");
  {
    std::ofstream out(path);
    out << "{ \"seed\": }";
  }
  CHECK_THROWS_AS(config::load_config(path), ConfigError);
  CHECK_THROWS_AS(config::load_config(path + ".missing"), ConfigError);
}

TEST_CASE("environment overrides") {
  EnvGuard guard;
  auto cfg = config::ArtifactConfig::defaults(2);
  config::apply_environment(cfg);
  CHECK(cfg.output_dir == "runs");
  setenv("MSGATE_OUTPUT_DIR", "/tmp/elsewhere", 1);
  setenv("MSGATE_SEED", "777", 1);
  config::apply_environment(cfg);
  CHECK(cfg.output_dir == "/tmp/elsewhere");
  CHECK(cfg.seed == 777);
  CHECK(cfg.truth.seed == 777);
  setenv("MSGATE_SEED", "12x", 1);
  CHECK_THROWS_AS(config::apply_environment(cfg), ConfigError);
}

TEST_CASE("dated run directory") {
  auto cfg = config::ArtifactConfig::defaults(2);
  cfg.output_dir = "runs";
  cfg.seed = 9;
  const auto d = config::dated_run_dir(cfg);
  CHECK(d.rfind("runs/", 0) == 0);
  CHECK(d.size() == std::string("runs/20261016T000000Z_seed9").size());
  CHECK(d.substr(d.size() - 6) == "_seed9");
  CHECK(d[13] == 'T');
}

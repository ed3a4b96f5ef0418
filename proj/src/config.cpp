#include "msgate/config.hpp"

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <fstream>

#include "msgate/errors.hpp"

namespace msgate::config {

using nlohmann::json;

ArtifactConfig ArtifactConfig::defaults(int ion_count) {
  ArtifactConfig c;
  c.trap = modes::TrapConfig::defaults(ion_count);
  c.truth = ve::Truth::defaults(ion_count);
  c.pipeline.nominal.trap = c.trap;
  return c;
}

void ArtifactConfig::validate() const {
  trap.validate();
  comb.validate();
  truth.validate();
  if (truth.trap.ion_count != trap.ion_count) throw ConfigError("truth.trap.ion_count differs from trap.ion_count");
  if (pipeline.nominal.trap.ion_count != trap.ion_count) throw ConfigError("pipeline nominal trap differs from trap");
  if (output_dir.empty()) throw ConfigError("output_dir must not be empty");
}

ArtifactConfig config_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("configuration must be a JSON object");
  static const std::vector<std::string> known{"trap", "comb", "truth", "pipeline", "output_dir", "seed", "backend_command"};
  for (const auto& [k, v] : j.items())
    if (std::find(known.begin(), known.end(), k) == known.end()) throw ConfigError("unknown key " + k);
  ArtifactConfig c;
  if (j.contains("trap")) c.trap = modes::trap_from_json(j["trap"], c.trap);
  c = [&] {
    ArtifactConfig d = ArtifactConfig::defaults(c.trap.ion_count);
    d.trap = c.trap;
    return d;
  }();
  // the virtual experiment and the controller start from the configured trap
  c.truth.trap = c.trap;
  c.pipeline.nominal.trap = c.trap;
  if (j.contains("comb")) c.comb = comb::comb_from_json(j["comb"], c.comb);
  if (j.contains("truth")) c.truth = ve::truth_from_json(j["truth"], c.truth);
  if (j.contains("pipeline")) {
    c.pipeline = calib::options_from_json(j["pipeline"], c.pipeline);
    if (!j["pipeline"].contains("nominal") || !j["pipeline"]["nominal"].contains("trap")) c.pipeline.nominal.trap = c.trap;
  }
  if (j.contains("output_dir")) c.output_dir = j["output_dir"].get<std::string>();
  if (j.contains("seed")) c.seed = j["seed"].get<std::uint64_t>();
  if (j.contains("backend_command")) c.backend_command = j["backend_command"].get<std::string>();
  c.truth.seed = c.seed;
  c.validate();
  return c;
}

ArtifactConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read configuration " + path);
  json j;
  try {
    j = json::parse(in, nullptr, true, true);  // comments allowed
  } catch (const json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return config_from_json(j);
}

json to_json(const ArtifactConfig& c) {
  return {{"trap", modes::to_json(c.trap)},
          {"comb", comb::to_json(c.comb)},
          {"truth", ve::to_json(c.truth)},
          {"pipeline", calib::to_json(c.pipeline)},
          {"output_dir", c.output_dir},
          {"seed", c.seed},
          {"backend_command", c.backend_command}};
}

void apply_environment(ArtifactConfig& c) {
  if (const char* d = std::getenv("MSGATE_OUTPUT_DIR"); d && *d) c.output_dir = d;
  if (const char* s = std::getenv("MSGATE_SEED"); s && *s) {
    char* end = nullptr;
    const unsigned long long v = std::strtoull(s, &end, 10);
    if (end == s || *end != '\0') throw ConfigError("MSGATE_SEED is not an unsigned integer");
    c.seed = v;
    c.truth.seed = v;
  }
}

std::string dated_run_dir(const ArtifactConfig& c) {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y%m%dT%H%M%SZ", &tm);
  return c.output_dir + "/" + buf + "_seed" + std::to_string(c.seed);
}

}  // namespace msgate::config

#pragma once

#include <string>

#include <json.hpp>

#include "msgate/chain_modes.hpp"
#include "msgate/comb_lightshift.hpp"
#include "msgate/pipeline.hpp"
#include "msgate/virtual_experiment.hpp"

namespace msgate::config {

struct ArtifactConfig {
  modes::TrapConfig trap = modes::TrapConfig::defaults(2);
  comb::CombSpec comb = comb::CombSpec::reference_defaults();
  ve::Truth truth = ve::Truth::defaults(2);
  calib::PipelineOptions pipeline;
  std::string output_dir = "runs";
  std::uint64_t seed = 12345;
  std::string backend_command;  // empty = built-in virtual experiment

  static ArtifactConfig defaults(int ion_count = 2);
  void validate() const;
};

// unknown keys anywhere in the tree are rejected
ArtifactConfig config_from_json(const nlohmann::json& j);
ArtifactConfig load_config(const std::string& path);
nlohmann::json to_json(const ArtifactConfig& c);

// MSGATE_OUTPUT_DIR and MSGATE_SEED only
void apply_environment(ArtifactConfig& c);

// <output_dir>/<UTC date-time>_seed<seed>
std::string dated_run_dir(const ArtifactConfig& c);

}  // namespace msgate::config

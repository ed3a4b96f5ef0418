#pragma once

#include <cstdio>
#include <istream>
#include <memory>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

namespace msgate::protocol {

constexpr int kSchemaVersion = 1;

// One circuit = ordered list of JSON ops (see schemas/job_protocol.schema.json);
// every circuit is prepared in |0...0>, run, and measured on all ions.
struct ExperimentJob {
  int schema_version = kSchemaVersion;
  std::string label;
  long long shots = 200;
  std::string sweep_name;
  std::vector<double> sweep_values;  // one per circuit, informational
  std::vector<nlohmann::json> circuits;
};

struct ExperimentResult {
  int schema_version = kSchemaVersion;
  std::string label;
  int ion_count = 0;
  long long shots = 0;
  // counts[c][outcome], outcome bit (ion_count-1-i) is ion i (ion 0 most significant)
  std::vector<std::vector<long long>> counts;
  std::string error;  // non-empty when the backend rejected the job

  // per-circuit successes for "ion i bright"
  long long bright(std::size_t circuit, int ion) const;
  // per-circuit counts for a bitstring over (i, j), value in {0,1,2,3} = 2 b_i + b_j
  long long pair_outcome(std::size_t circuit, int i, int j, int value) const;
  long long parity_even(std::size_t circuit, int i, int j) const;
  void validate() const;
};

nlohmann::json to_json(const ExperimentJob& j);
ExperimentJob job_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ExperimentResult& r);
ExperimentResult result_from_json(const nlohmann::json& j);

// framing: decimal byte length, newline, JSON payload
void write_frame(std::ostream& out, const nlohmann::json& j);
bool read_frame(std::istream& in, nlohmann::json& j);  // false on clean EOF

class Backend {
 public:
  virtual ~Backend() = default;
  virtual ExperimentResult run(const ExperimentJob& job) = 0;
  virtual int ion_count() const = 0;
  virtual std::string name() const = 0;
  long long jobs_run() const { return jobs_; }

 protected:
  long long jobs_ = 0;
};

// talks to an external process over its stdin/stdout
class SubprocessBackend : public Backend {
 public:
  explicit SubprocessBackend(const std::string& command);
  ~SubprocessBackend() override;
  ExperimentResult run(const ExperimentJob& job) override;
  int ion_count() const override { return ions_; }
  std::string name() const override { return "subprocess:" + command_; }

 private:
  std::string command_;
  int pid_ = -1;
  int to_child_ = -1, from_child_ = -1;
  int ions_ = 0;
  nlohmann::json exchange(const nlohmann::json& request);
};

// serve loop: hello request answered with {"ion_count"}, jobs answered with results
void serve(Backend& backend, std::istream& in, std::ostream& out);

}  // namespace msgate::protocol

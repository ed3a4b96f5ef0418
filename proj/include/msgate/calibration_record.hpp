#pragma once

#include <array>
#include <string>
#include <vector>

#include <json.hpp>

#include "msgate/pulse_control.hpp"

namespace msgate::calib {

constexpr int kRecordVersion = 1;

struct IonRecord {
  pulse::AomModel counter;  // counter-propagating carrier at the operating global amplitude
  pulse::AomModel co;
  double counter_pi_amp = 0.0;  // amplitude for the requested pi-time
  double co_pi_amp = 0.0;
  double zeta = 1.0;            // blue/red tone Rabi ratio at the coherence maximum
};

struct FrameAnchor {
  int repetitions = 0;   // M
  double theta = 0.0;    // per-gate angle pi/M
  double phi = 0.0;      // per-gate phi_f(tau), rad
  double phi_mle = 0.0;  // diagnostic upper-half MLE center
  bool valid = false;
};

struct PairRecord {
  int ion_i = 0, ion_j = 1;
  int manifold = 0, mode_lower = 0, mode_upper = 0;
  double detuning = 0.0;      // from the lower sideband, rad/s
  double drive_offset = 0.0;  // tone offset from the carrier, rad/s
  double duration = 250e-6;
  double rabi_nominal = 0.0;  // model Rabi for theta = pi/2 before kappa
  std::array<double, 2> amp_red{0.0, 0.0};   // before kappa
  std::array<double, 2> amp_blue{0.0, 0.0};
  double kappa = 1.0;
  double amp_global = 0.0;   // global amplitude at theta = pi/2
  std::array<FrameAnchor, 2> anchors;  // M = 2, M = 32

  // per-gate frame rotation for angle theta, linear between the anchors
  double frame_rotation(double theta) const;
  std::array<double, 2> red_amps() const { return {kappa * amp_red[0], kappa * amp_red[1]}; }
  std::array<double, 2> blue_amps() const { return {kappa * amp_blue[0], kappa * amp_blue[1]}; }
  double global_amp_for(const pulse::AomModel& global, double theta) const;
};

struct CalibrationRecord {
  int version = kRecordVersion;
  int ion_count = 0;
  double well = 0.0;
  std::vector<std::vector<double>> sidebands;  // per manifold, descending, rad/s
  pulse::AomModel global;
  double global_amp = 0.0;  // operating global amplitude for single-ion pulses
  std::vector<IonRecord> ions;
  std::vector<PairRecord> pairs;
  std::vector<std::string> completed;  // stage names in order
  nlohmann::json stages = nlohmann::json::object();  // per-stage timestamp and diagnostics

  bool done(const std::string& stage) const;
  PairRecord& pair(int i, int j);
  const PairRecord& pair(int i, int j) const;
};

nlohmann::json to_json(const CalibrationRecord& r);
CalibrationRecord record_from_json(const nlohmann::json& j);
void save_record(const CalibrationRecord& r, const std::string& path);
CalibrationRecord load_record(const std::string& path);

}  // namespace msgate::calib

#pragma once

#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "msgate/calibration_record.hpp"
#include "msgate/chain_modes.hpp"
#include "msgate/fitkit.hpp"
#include "msgate/gate_dynamics.hpp"
#include "msgate/job_protocol.hpp"

namespace msgate::calib {

// what the controller believes before measuring anything
struct NominalModel {
  modes::TrapConfig trap = modes::TrapConfig::defaults(2);
  pulse::AomModel global{180.0, 2.0 * 3.14159265358979323846 * 70e3};
  double ia_a_sat = 165.0;
  double co_xi = 2.0 * 3.14159265358979323846 * 34e3;
  double ms_ratio = 2.5;  // MS tone Rabi per counter-propagating carrier Rabi
};

struct PipelineOptions {
  long long shots = 200;
  long long frame_shots = 400;
  long long fidelity_shots = 500;
  long long kappa_shots = 1000;  // fine and refine kappa scans; sets the theta precision
  NominalModel nominal;

  double align_span = 3.0e-6;
  int align_points = 31;
  double align_resolution = 1e-9;

  double global_scan_time = 50e-6;
  double counter_scan_time = 30e-6;
  double co_scan_time = 250e-6;
  double counter_pi_time = 10e-6;
  double co_pi_time = 25e-6;
  int amp_points = 41;
  int co_amp_points = 161;
  double amp_max = 200.0;

  double coarse_step = 2.0 * 3.14159265358979323846 * 2e3;
  double coarse_margin = 2.0 * 3.14159265358979323846 * 50e3;
  double fine_span = 2.0 * 3.14159265358979323846 * 15e3;
  int fine_points = 31;
  double peak_threshold = 0.08;

  double sym_lo = -2.0 * 3.14159265358979323846 * 60e3;
  double sym_hi = 2.0 * 3.14159265358979323846 * 80e3;
  int sym_points = 141;

  double gate_duration = 250e-6;
  int echo_gates = 8;
  double zeta_lo = 0.8, zeta_hi = 1.4;
  int zeta_points = 25;
  double zeta_fine_span = 0.12;

  double kappa_lo = 0.6, kappa_hi = 1.4;
  int kappa_coarse_points = 17;
  double kappa_fine_span = 0.03;
  int kappa_fine_points = 61;

  std::array<int, 2> anchor_reps{2, 32};
  double frame_span_deg = 45.0;  // scaled by 2/M
  int frame_points = 41;

  int parity_phases = 16;
  double confidence_z = 1.96;

  std::string scan_dir;  // CSV of every scan when non-empty
};

struct FidelityReport {
  double theta = 0.0;
  double p00 = 0.0, p11 = 0.0;
  double contrast = 0.0, contrast_sigma = 0.0;
  fit::FidelityInterval fidelity;
  std::string formatted() const;  // 0.972^{+0.003}_{-0.004} (95%)
};

struct DetuningScan {
  std::vector<double> delta;  // from the lower sideband, rad/s
  std::vector<std::array<double, 4>> populations;
  std::vector<double> crossings;            // P00 = P11
  std::vector<double> predicted_crossings;  // model theta = pi/2 + k pi
};

struct RamseyPoint {
  double zeta = 0.0;
  double phase_per_gate = 0.0;  // rad
  double coherence_gates = 0.0; // Gaussian 1/e gate count
};

nlohmann::json to_json(const PipelineOptions& o);
PipelineOptions options_from_json(const nlohmann::json& j, const PipelineOptions& base);
nlohmann::json to_json(const FidelityReport& f);

class Pipeline {
 public:
  Pipeline(protocol::Backend& backend, PipelineOptions options, CalibrationRecord record = {});

  // calibration schedule order
  static const std::vector<std::string>& stage_names();

  double align_chain();
  void calibrate_pi_times();
  std::vector<std::vector<double>> find_sidebands();
  DetuningScan symmetric_detuning_scan(int i, int j);
  std::vector<double> calibrate_zeta();
  double calibrate_kappa(int i, int j, bool with_frames = false);
  std::array<FrameAnchor, 2> calibrate_frame_rotation(int i, int j);
  FrameAnchor calibrate_frame_direct(int i, int j, int repetitions);
  FidelityReport estimate_fidelity(int i, int j, double theta);
  std::vector<RamseyPoint> ramsey_zeta_diagnostic(int ion, const std::vector<double>& zetas, int max_gates = 24);

  // run every stage not yet completed; checkpoint after each
  void run_schedule(const std::string& checkpoint_path = "");

  // MS job op for the calibrated pair at angle theta, repeated M times
  nlohmann::json ms_op(int i, int j, double theta, int repetitions = 1) const;
  nlohmann::json ms_op_with_frame(int i, int j, double theta, int repetitions, double phi) const;
  // model drive as the controller sees it (nominal eta, measured sidebands)
  dynamics::GateDrive model_drive(int i, int j, double rabi) const;

  const CalibrationRecord& record() const { return record_; }
  CalibrationRecord& record() { return record_; }
  const PipelineOptions& options() const { return opt_; }
  const std::vector<modes::ModeSpectrum>& model_modes() const { return modes_; }

 private:
  protocol::Backend& backend_;
  PipelineOptions opt_;
  CalibrationRecord record_;
  std::vector<modes::ModeSpectrum> modes_;  // nominal, sidebands replaced once measured
  int scan_counter_ = 0;

  protocol::ExperimentResult submit(const std::string& label, const std::vector<nlohmann::json>& circuits,
                                    const std::vector<double>& sweep, long long shots);
  void emit(const std::string& name, const fit::ShotData& d, const std::string& x_header);
  void note(const std::string& stage, const nlohmann::json& diag);
  void ensure_pair_plan(int i, int j);
  void sync_backend_state();
  nlohmann::json ms_tone_op(int i, int j, double kappa, double amp_global, int repetitions,
                            std::array<double, 2> phi) const;
  nlohmann::json single_ion_ms(int ion, double zeta, double rabi, int repetitions, double drive_offset) const;
  std::array<double, 2> tone_amps(int ion, double rabi, double zeta) const;
};

}  // namespace msgate::calib

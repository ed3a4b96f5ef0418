#pragma once

#include <array>
#include <complex>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "msgate/chain_modes.hpp"
#include "msgate/pulse_control.hpp"

namespace msgate::dynamics {

using cd = std::complex<double>;

// Conventions, used throughout:
//  - spin basis |q_i q_j>, index 2 q_i + q_j, Z|0> = +|0>
//  - delta_k = detuning - nu_k (tone above the mode is positive)
//  - H = sum_{k,i} eta_{k,i} Omega_i(t)/2 sigma_{phi_i(t)} (i a_k^dag e^{i delta_k t} - i a_k e^{-i delta_k t})
//        - sum_i delta_LS_i(t)/2 Z_i
//  - MS(theta) = exp(-i theta/2 X X): |00> -> cos(theta/2)|00> - i sin(theta/2)|11>
struct GateDrive {
  pulse::PulseProgram pulse;
  std::vector<modes::ModeSpectrum> modes;  // every manifold that should act
  std::pair<int, int> pair{0, 1};          // ion indices into the chain
  double rabi_peak_i = 0.0;                // rad/s, two-photon, at envelope peak
  double rabi_peak_j = 0.0;
  std::array<double, 2> lightshift_peak{0.0, 0.0};  // rad/s at envelope peak
  double nbar = 0.0;
  double mode_shift = 0.0;  // common offset added to every mode frequency

  int mode_count() const;
};

struct GateOutcome {
  double theta = 0.0;
  std::vector<cd> residual_alpha;  // alpha_{k,i} + alpha_{k,j} per mode, manifolds in order
  std::array<double, 2> ls_phase{0.0, 0.0};
  std::array<double, 4> populations{0.0, 0.0, 0.0, 0.0};
  double parity_amplitude = 0.0;
  Eigen::Matrix4cd rho;  // frame-referenced two-qubit state
  double unitarity_error = 0.0;  // Fock path only
  int steps = 0;                 // Fock path only
};

// Completely positive map of one (or M) gates on the pair, in the frame-referenced
// picture: rho -> T (chi o (T^dag U rho U^dag T)) T^dag, T = Hadamard x Hadamard.
struct GateChannel {
  Eigen::Matrix4cd unitary;
  Eigen::Matrix4cd chi;  // Schur multiplier in the sigma_x basis
  Eigen::Matrix4cd apply(const Eigen::Matrix4cd& rho) const;
};

class DriveIntegrals {
 public:
  explicit DriveIntegrals(const GateDrive& drive);
  // per mode k (flattened over manifolds)
  const std::vector<double>& eta_i() const { return eta_i_; }
  const std::vector<double>& eta_j() const { return eta_j_; }
  const std::vector<double>& delta() const { return delta_; }
  const std::vector<cd>& force_i() const { return f_i_; }  // int Omega_i e^{i delta t}
  const std::vector<cd>& force_j() const { return f_j_; }
  double theta() const { return theta_; }
  // time nodes, weights and instantaneous geometric-phase rate
  const std::vector<double>& nodes() const { return t_; }
  const std::vector<double>& weights() const { return w_; }
  const std::vector<double>& theta_rate() const { return rate_; }
  const std::vector<double>& envelope() const { return env_; }
  int panels_per_segment() const { return panels_; }

 private:
  std::vector<double> eta_i_, eta_j_, delta_;
  std::vector<cd> f_i_, f_j_;
  std::vector<double> t_, w_, rate_, env_;
  double theta_ = 0.0;
  int panels_ = 0;
  void evaluate(const GateDrive& d, const pulse::Envelope& env, int panels);
};

cd displacement_integral(const GateDrive& drive, int mode, int ion);
double entangling_angle(const GateDrive& drive);

GateChannel gate_channel(const GateDrive& drive, int repetitions = 1);
GateOutcome simulate_gate_analytic(const GateDrive& drive);
GateOutcome simulate_sequence_analytic(const GateDrive& drive, int repetitions);

struct FockOptions {
  int n_max = 20;
  int steps = 0;  // 0 = choose by step doubling
  double population_tolerance = 1e-9;
  bool parallel = true;
};
GateOutcome simulate_gate_fock(const GateDrive& drive, const FockOptions& options = {});

struct RobustnessCurve {
  std::vector<double> shifts;
  std::vector<double> theta;
  double max_relative_deviation = 0.0;
  double relative_slope_per_khz = 0.0;  // central difference at zero
};
RobustnessCurve frequency_robustness(const GateDrive& drive, const std::vector<double>& shifts);

// ideal helpers
Eigen::Matrix4cd ms_unitary(double theta, double phase = 0.0);
Eigen::Matrix4cd density_00();
std::array<double, 4> populations(const Eigen::Matrix4cd& rho);
double parity_amplitude(const Eigen::Matrix4cd& rho);
// P(even) after a pi/2 analysis pulse with phase phi on both qubits
double parity_even_after_analysis(const Eigen::Matrix4cd& rho, double phi);
double state_fidelity(const Eigen::Matrix4cd& rho, const Eigen::Vector4cd& target);
Eigen::Vector4cd ms_target_state(double theta);

// build a drive for a planned pair
GateDrive make_drive(const std::vector<modes::ModeSpectrum>& spectra, const modes::GatePairPlan& plan,
                     double duration, double rabi_i, double rabi_j);

nlohmann::json to_json(const GateOutcome& o);

}  // namespace msgate::dynamics

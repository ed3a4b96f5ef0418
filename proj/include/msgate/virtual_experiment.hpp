#pragma once

#include <array>
#include <random>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "msgate/chain_modes.hpp"
#include "msgate/comb_lightshift.hpp"
#include "msgate/gate_dynamics.hpp"
#include "msgate/job_protocol.hpp"
#include "msgate/pulse_control.hpp"

namespace msgate::ve {

// Ground truth of the simulated apparatus. Rates are rad/s, lengths m.
struct Truth {
  modes::TrapConfig trap = modes::TrapConfig::defaults(2);
  // per manifold, per mode: true frequency minus the nominal model frequency
  std::vector<std::vector<double>> sideband_offsets;
  double eta_scale = 1.03;

  // alignment: IA beam centers sit at nominal ion positions plus this offset
  double beam_offset = 0.2e-6;
  std::vector<double> beam_extra;  // optional per-ion extra beam offset (asymmetric spacing)
  double beam_waist = 2.5e-6;      // field 1/e radius

  pulse::AomModel global{188.5, 2.0 * 3.14159265358979323846 * 73.6e3};
  std::vector<double> ia_a_sat{160.0, 172.0};
  std::vector<double> ia_gain{1.0, 0.96};   // counter-propagating carrier relative to global Xi
  std::vector<double> co_xi{2.0 * 3.14159265358979323846 * 35e3, 2.0 * 3.14159265358979323846 * 33e3};
  double ms_ratio = 2.6;  // MS tone Rabi per counter-propagating carrier Rabi at equal amplitude
  double rabi_decay_xi = 30.0;

  std::vector<double> zeta_star{1.10, 1.12};
  double comb_noise_rel = 0.35;  // quasi-static relative fluctuation of the comb light shift
  double residual_deg_per_half_pi = 6.25;  // extra shift per MS(pi/2) on the reference pair
  double nbar = 0.0;

  double spam_prep = 0.002;
  double spam_meas = 0.005;
  double contrast_loss = 0.0;      // per-ion phase-flip probability after each MS op
  double loop_phase_sigma = 0.0;   // rad per gate, quasi-static Z noise in repeated MS
  double loop_theta_sigma = 0.0;   // relative quasi-static theta jitter

  bool noiseless = false;  // expected counts instead of sampling
  std::uint64_t seed = 12345;

  static Truth defaults(int ion_count = 2);
  void validate() const;
};

nlohmann::json to_json(const Truth& t);
Truth truth_from_json(const nlohmann::json& j, const Truth& base);

class VirtualExperiment : public protocol::Backend {
 public:
  explicit VirtualExperiment(Truth truth);

  protocol::ExperimentResult run(const protocol::ExperimentJob& job) override;
  int ion_count() const override { return n_; }
  std::string name() const override { return "virtual"; }

  // exact final density matrix of one circuit before measurement error
  Eigen::MatrixXcd evolve(const nlohmann::json& circuit) const;
  // outcome probabilities including measurement error
  std::vector<double> probabilities(const nlohmann::json& circuit) const;

  const Truth& truth() const { return truth_; }
  const std::vector<modes::ModeSpectrum>& true_modes() const { return modes_; }
  std::vector<double> true_sidebands() const;  // all radial modes, manifold 0 first
  std::vector<double> ion_positions(double well) const;
  std::vector<double> beam_centers() const;

  // truth-side rates
  double counter_rabi(int ion, double amp, double amp_global, double well) const;
  double co_rabi(int ion, double amp, double well) const;
  double tone_rabi(int ion, double amp, double amp_global, double well) const;
  // comb light shift at envelope peak for gate Rabi `rabi` and blue/red Rabi ratio `zeta`
  double comb_shift(int ion, double rabi, double zeta) const;
  double residual_shift(double rabi) const;
  // truth drive for an MS op
  dynamics::GateDrive drive_for(const nlohmann::json& op) const;
  // frame rotation that cancels the accumulated shift of one MS op, per ion of the op
  std::array<double, 2> cancelling_frame_rotation(const nlohmann::json& op) const;
  double comb_breakdown_total(double zeta) const;
  double reference_rabi() const { return rabi_ref_; }
  double well() const { return well_; }

 private:
  Truth truth_;
  int n_;
  std::vector<modes::ModeSpectrum> modes_;
  std::vector<double> nominal_positions_;
  // comb shift terms at reference Rabi, zeta = 1, and their zeta exponents
  std::vector<std::pair<double, int>> comb_terms_;
  double comb_rabi_ref_ = 0.0;
  double zeta_balance_ = 1.0;
  double k_residual_ = 0.0;  // residual shift per rabi^2
  double rabi_ref_ = 0.0;
  double well_ = 0.0;
  mutable std::mt19937_64 rng_;

  void apply_op(Eigen::MatrixXcd& rho, const nlohmann::json& op, double& well) const;
  std::vector<long long> sample(const std::vector<double>& p, long long shots);
};

// single-qubit helpers on an n-qubit density matrix (qubit 0 most significant)
void apply_unitary1(Eigen::MatrixXcd& rho, const Eigen::Matrix2cd& u, int q, int n);
void apply_pair_channel(Eigen::MatrixXcd& rho, const dynamics::GateChannel& ch, int i, int j, int n);
void dephase(Eigen::MatrixXcd& rho, int q, int n, double factor);

}  // namespace msgate::ve

#pragma once

#include <array>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

namespace msgate::modes {

// Linear chain in a harmonic trap. Frequencies are angular (rad/s).
struct TrapConfig {
  int ion_count = 2;
  double axial_freq = 0.0;
  std::array<double, 2> radial_com_freqs{0.0, 0.0};
  double ion_mass = 0.0;
  double raman_delta_k = 0.0;
  // projection of the Raman wavevector difference onto each radial axis
  std::array<double, 2> axis_projection{1.0, 0.364};

  void validate() const;
  static TrapConfig defaults(int ion_count = 2);
};

struct ModeSpectrum {
  int manifold = 0;
  Eigen::VectorXd frequencies;    // descending, index 0 = COM
  Eigen::MatrixXd participation;  // row k = mode k, column i = ion i
  Eigen::MatrixXd lamb_dicke;     // same layout as participation

  int ion_count() const { return static_cast<int>(frequencies.size()); }
  ModeSpectrum shifted(double common_offset) const;
};

struct GatePairPlan {
  int qubit_i = 0;  // center-indexed labels
  int qubit_j = 0;
  int index_i = 0;  // array indices into the chain
  int index_j = 0;
  int manifold = 0;
  int mode_lower = 0;  // lower-frequency mode of the pair (larger index)
  int mode_upper = 0;
  double detuning = 0.0;      // drive offset from mode_lower sideband, rad/s
  double drive_offset = 0.0;  // tone offset from the carrier, rad/s
  bool balanced = true;
  double objective = 0.0;
};

struct PlanOptions {
  double participation_floor = 1e-6;
  double eta_floor = 1e-4;
  double fallback_offset = 2.0 * 3.14159265358979323846 * 30e3;
};

double length_scale(const TrapConfig& config);

// dimensionless positions in units of length_scale
std::vector<double> equilibrium_positions_scaled(int ion_count);
std::vector<double> equilibrium_positions(const TrapConfig& config);

ModeSpectrum radial_modes(const TrapConfig& config, const std::vector<double>& positions,
                          int manifold = 0);
std::array<ModeSpectrum, 2> radial_manifolds(const TrapConfig& config);

int ion_index(int label, int ion_count);
int ion_label(int index, int ion_count);

double pair_objective(const ModeSpectrum& spec, int i, int j, int upper, int lower);
GatePairPlan select_mode_pair(const ModeSpectrum& spec, std::pair<int, int> pair,
                              const PlanOptions& options = {});
std::vector<GatePairPlan> all_pair_plans(const ModeSpectrum& spec,
                                         const PlanOptions& options = {});

nlohmann::json to_json(const ModeSpectrum& spec);
nlohmann::json to_json(const GatePairPlan& plan);
nlohmann::json to_json(const TrapConfig& config);
TrapConfig trap_from_json(const nlohmann::json& j, const TrapConfig& base);

}  // namespace msgate::modes

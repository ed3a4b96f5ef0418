#pragma once

#include <complex>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

namespace msgate::frames {

enum class GateKind { RyCo, RyCu, RzVirtual, MS, ZZ, FrameRotation };

std::string gate_name(GateKind k);

struct Gate {
  GateKind kind = GateKind::RzVirtual;
  std::vector<int> qubits;
  double angle = 0.0;  // rotation angle, theta for MS/ZZ, phi_f(tau) for FrameRotation
  double phase = 0.0;  // MS interaction phase (applies to the first qubit's waveform)
};

struct Circuit {
  int qubit_count = 0;
  std::vector<Gate> gates;
  std::map<std::string, std::string> metadata;

  void validate() const;
  Circuit& ry_co(int q, double a);
  Circuit& ry_cu(int q, double a);
  Circuit& rz(int q, double a);
  Circuit& ms(int i, int j, double theta, double phase = 0.0);
  Circuit& zz(int i, int j, double theta);
  Circuit& frame(int q, double phi_f);
};

struct FrameState {
  std::vector<double> phi0, phi1;
  std::vector<int> active;  // 0 or 1 per qubit
  explicit FrameState(int n = 0) : phi0(n, 0.0), phi1(n, 0.0), active(n, 0) {}
  double current(int q) const { return active[q] ? phi1[q] : phi0[q]; }
};

struct ExpandOptions {
  double native_phase = 0.0;  // 0: MS realizes +XX, pi: -XX
};

// emits Ry_cu wrappers around MS(|theta|); sign rule depends on theta and native_phase
std::vector<Gate> expand_zz(const Gate& zz, const ExpandOptions& opt = {});

struct Pulse {
  std::string kind;            // ry_co, ry_cu, ms
  std::vector<int> qubits;
  double angle = 0.0;
  std::vector<double> waveform_phase;  // absolute, per qubit
  std::vector<double> frame_rotation;  // dynamic phi_f(tau) per qubit (ms only)
  int frame = 0;                       // 0 = default frame, 1 = temporary ZZ frame
  int source_gate = -1;
};

struct ResolvedCircuit {
  int qubit_count = 0;
  std::vector<Pulse> pulses;
  std::vector<double> final_phi0;
};

ResolvedCircuit resolve_waveform_phases(const Circuit& c, const ExpandOptions& opt = {});

// physical pulse product in the resolved frames, closed by the final frame correction
Eigen::MatrixXcd circuit_unitary(const Circuit& c, const ExpandOptions& opt = {});
Eigen::MatrixXcd resolved_unitary(const ResolvedCircuit& r);
// ideal gate-by-gate composition (oracle)
Eigen::MatrixXcd direct_unitary(const Circuit& c);

Eigen::MatrixXcd normalize_global_phase(const Eigen::MatrixXcd& u);
double phase_equivalence_error(const Eigen::MatrixXcd& a, const Eigen::MatrixXcd& b);

// elementary matrices
Eigen::Matrix2cd rotation(double angle, double phase);  // exp(-i a/2 sigma_phase)
Eigen::Matrix2cd rz_matrix(double phi);                 // exp(-i phi/2 Z)
Eigen::MatrixXcd embed1(const Eigen::Matrix2cd& u, int q, int n);
Eigen::MatrixXcd ms_matrix(double theta, double phase_i, double phase_j, int i, int j, int n);
Eigen::MatrixXcd zz_matrix(double theta, int i, int j, int n);

nlohmann::json to_json(const ResolvedCircuit& r);

// text format
Circuit parse_circuit(const std::string& text);
Circuit read_circuit_file(const std::string& path);
std::string print_circuit(const Circuit& c);
double parse_angle(const std::string& token);

}  // namespace msgate::frames

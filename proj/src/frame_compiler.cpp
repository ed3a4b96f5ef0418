#include "msgate/frame_compiler.hpp"

#include <cmath>

#include "msgate/constants.hpp"
#include "msgate/errors.hpp"

namespace msgate::frames {

namespace c = msgate::constants;
using cd = std::complex<double>;

std::string gate_name(GateKind k) {
  switch (k) {
    case GateKind::RyCo: return "ry_co";
    case GateKind::RyCu: return "ry_cu";
    case GateKind::RzVirtual: return "rz";
    case GateKind::MS: return "ms";
    case GateKind::ZZ: return "zz";
    case GateKind::FrameRotation: return "frame";
  }
  return "?";
}

void Circuit::validate() const {
  if (qubit_count < 1) throw ConfigError("circuit needs at least one qubit");
  for (const auto& g : gates) {
    const std::size_t need = (g.kind == GateKind::MS || g.kind == GateKind::ZZ) ? 2 : 1;
    if (g.qubits.size() != need) throw ConfigError(gate_name(g.kind) + ": wrong qubit count");
    for (int q : g.qubits)
      if (q < 0 || q >= qubit_count) throw RangeError(gate_name(g.kind) + ": qubit index out of range");
    if (need == 2 && g.qubits[0] == g.qubits[1]) throw ConfigError(gate_name(g.kind) + ": repeated qubit");
    if (g.kind == GateKind::ZZ && std::abs(g.angle) > c::pi / 2 + 1e-12)
      throw RangeError("zz: theta outside [-pi/2, pi/2]");
    if (!std::isfinite(g.angle) || !std::isfinite(g.phase)) throw ConfigError("non-finite gate parameter");
  }
}

Circuit& Circuit::ry_co(int q, double a) { gates.push_back({GateKind::RyCo, {q}, a, 0.0}); return *this; }
Circuit& Circuit::ry_cu(int q, double a) { gates.push_back({GateKind::RyCu, {q}, a, 0.0}); return *this; }
Circuit& Circuit::rz(int q, double a) { gates.push_back({GateKind::RzVirtual, {q}, a, 0.0}); return *this; }
Circuit& Circuit::ms(int i, int j, double t, double p) { gates.push_back({GateKind::MS, {i, j}, t, p}); return *this; }
Circuit& Circuit::zz(int i, int j, double t) { gates.push_back({GateKind::ZZ, {i, j}, t, 0.0}); return *this; }
Circuit& Circuit::frame(int q, double f) { gates.push_back({GateKind::FrameRotation, {q}, f, 0.0}); return *this; }

std::vector<Gate> expand_zz(const Gate& zz, const ExpandOptions& opt) {
  if (zz.kind != GateKind::ZZ) throw ConfigError("expand_zz expects a zz gate");
  if (std::abs(zz.angle) > c::pi / 2 + 1e-12) throw RangeError("zz: theta outside [-pi/2, pi/2]");
  const int i = zz.qubits.at(0), j = zz.qubits.at(1);
  const bool negative_native = std::abs(std::remainder(opt.native_phase, c::two_pi)) > c::pi / 2;
  // matched wrappers give +ZZ from +XX
  const bool matched = (zz.angle >= 0) != negative_native;
  const double sj = matched ? 1.0 : -1.0;
  const double h = c::pi / 2;
  return {{GateKind::RyCu, {i}, h, 0.0},
          {GateKind::RyCu, {j}, sj * h, 0.0},
          {GateKind::MS, {i, j}, std::abs(zz.angle), opt.native_phase},
          {GateKind::RyCu, {i}, -h, 0.0},
          {GateKind::RyCu, {j}, -sj * h, 0.0}};
}

ResolvedCircuit resolve_waveform_phases(const Circuit& circ, const ExpandOptions& opt) {
  circ.validate();
  const int n = circ.qubit_count;
  FrameState fs(n);
  std::vector<double> pending(n, 0.0);  // dynamic frame rotation for the next MS on each qubit
  ResolvedCircuit out;
  out.qubit_count = n;
  auto emit_single = [&](const Gate& g, int src) {
    const int q = g.qubits[0];
    Pulse p;
    p.kind = g.kind == GateKind::RyCo ? "ry_co" : "ry_cu";
    p.qubits = {q};
    p.angle = g.angle;
    p.waveform_phase = {c::pi / 2 + fs.current(q)};
    p.frame = fs.active[q];
    p.source_gate = src;
    out.pulses.push_back(p);
  };
  auto emit_ms = [&](const Gate& g, int src) {
    const int i = g.qubits[0], j = g.qubits[1];
    Pulse p;
    p.kind = "ms";
    p.qubits = {i, j};
    p.angle = g.angle;
    p.waveform_phase = {g.phase + fs.current(i), fs.current(j)};
    p.frame_rotation = {pending[i], pending[j]};
    p.frame = fs.active[i];
    p.source_gate = src;
    out.pulses.push_back(p);
    // dynamic frame rotation lands on whichever frame is active
    for (int q : {i, j}) {
      (fs.active[q] ? fs.phi1[q] : fs.phi0[q]) += pending[q];
      pending[q] = 0.0;
    }
  };
  for (std::size_t gi = 0; gi < circ.gates.size(); ++gi) {
    const Gate& g = circ.gates[gi];
    const int src = static_cast<int>(gi);
    switch (g.kind) {
      case GateKind::RzVirtual: fs.phi0[g.qubits[0]] -= g.angle; break;
      case GateKind::FrameRotation: pending[g.qubits[0]] += g.angle; break;
      case GateKind::RyCo:
      case GateKind::RyCu: emit_single(g, src); break;
      case GateKind::MS: emit_ms(g, src); break;
      case GateKind::ZZ: {
        const int i = g.qubits[0], j = g.qubits[1];
        if (fs.active[i] || fs.active[j]) throw ConfigError("zz: nested temporary frame");
        for (int q : {i, j}) {
          fs.active[q] = 1;
          fs.phi1[q] = 0.0;
        }
        for (const auto& e : expand_zz(g, opt)) {
          if (e.kind == GateKind::MS)
            emit_ms(e, src);
          else
            emit_single(e, src);
        }
        for (int q : {i, j}) fs.active[q] = 0;
        break;
      }
    }
  }
  out.final_phi0 = fs.phi0;
  return out;
}

Eigen::Matrix2cd rotation(double a, double ph) {
  Eigen::Matrix2cd s;
  s << 0, std::polar(1.0, -ph), std::polar(1.0, ph), 0;
  return std::cos(a / 2) * Eigen::Matrix2cd::Identity() - cd(0, std::sin(a / 2)) * s;
}

Eigen::Matrix2cd rz_matrix(double phi) {
  Eigen::Matrix2cd m = Eigen::Matrix2cd::Zero();
  m(0, 0) = std::polar(1.0, -phi / 2);
  m(1, 1) = std::polar(1.0, phi / 2);
  return m;
}

// qubit 0 is the most significant bit
Eigen::MatrixXcd embed1(const Eigen::Matrix2cd& u, int q, int n) {
  const int dim = 1 << n;
  const int bit = n - 1 - q;
  Eigen::MatrixXcd m = Eigen::MatrixXcd::Zero(dim, dim);
  for (int r = 0; r < dim; ++r)
    for (int col = 0; col < dim; ++col) {
      if ((r & ~(1 << bit)) != (col & ~(1 << bit))) continue;
      m(r, col) = u((r >> bit) & 1, (col >> bit) & 1);
    }
  return m;
}

Eigen::MatrixXcd ms_matrix(double theta, double pi_, double pj, int i, int j, int n) {
  Eigen::Matrix2cd si, sj;
  si << 0, std::polar(1.0, -pi_), std::polar(1.0, pi_), 0;
  sj << 0, std::polar(1.0, -pj), std::polar(1.0, pj), 0;
  const Eigen::MatrixXcd ss = embed1(si, i, n) * embed1(sj, j, n);
  const int dim = 1 << n;
  return std::cos(theta / 2) * Eigen::MatrixXcd::Identity(dim, dim) - cd(0, std::sin(theta / 2)) * ss;
}

Eigen::MatrixXcd zz_matrix(double theta, int i, int j, int n) {
  const int dim = 1 << n;
  Eigen::MatrixXcd m = Eigen::MatrixXcd::Zero(dim, dim);
  for (int s = 0; s < dim; ++s) {
    const double zi = ((s >> (n - 1 - i)) & 1) ? -1.0 : 1.0;
    const double zj = ((s >> (n - 1 - j)) & 1) ? -1.0 : 1.0;
    m(s, s) = std::polar(1.0, -theta / 2 * zi * zj);
  }
  return m;
}

Eigen::MatrixXcd resolved_unitary(const ResolvedCircuit& r) {
  const int n = r.qubit_count;
  if (n > 4) throw RangeError("circuit_unitary limited to 4 qubits");
  const int dim = 1 << n;
  Eigen::MatrixXcd u = Eigen::MatrixXcd::Identity(dim, dim);
  for (const auto& p : r.pulses) {
    if (p.kind == "ms") {
      u = ms_matrix(p.angle, p.waveform_phase[0], p.waveform_phase[1], p.qubits[0], p.qubits[1], n) * u;
      // light shift tracked by the dynamic frame rotation
      for (int k = 0; k < 2; ++k)
        if (p.frame_rotation[k] != 0.0) u = embed1(rz_matrix(p.frame_rotation[k]), p.qubits[k], n) * u;
    } else {
      u = embed1(rotation(p.angle, p.waveform_phase[0]), p.qubits[0], n) * u;
    }
  }
  // physical state lives in frame phi0: logical = Rz(-phi0) physical
  for (int q = 0; q < n; ++q) u = embed1(rz_matrix(-r.final_phi0[q]), q, n) * u;
  return u;
}

Eigen::MatrixXcd circuit_unitary(const Circuit& circ, const ExpandOptions& opt) {
  if (circ.qubit_count > 4) throw RangeError("circuit_unitary limited to 4 qubits");
  return resolved_unitary(resolve_waveform_phases(circ, opt));
}

Eigen::MatrixXcd direct_unitary(const Circuit& circ) {
  circ.validate();
  const int n = circ.qubit_count;
  if (n > 4) throw RangeError("direct_unitary limited to 4 qubits");
  const int dim = 1 << n;
  Eigen::MatrixXcd u = Eigen::MatrixXcd::Identity(dim, dim);
  std::vector<double> pending(n, 0.0);
  for (const auto& g : circ.gates) {
    switch (g.kind) {
      case GateKind::RyCo:
      case GateKind::RyCu: u = embed1(rotation(g.angle, c::pi / 2), g.qubits[0], n) * u; break;
      case GateKind::RzVirtual: u = embed1(rz_matrix(g.angle), g.qubits[0], n) * u; break;
      case GateKind::MS:
        u = ms_matrix(g.angle, g.phase, 0.0, g.qubits[0], g.qubits[1], n) * u;
        for (int q : g.qubits) pending[q] = 0.0;
        break;
      case GateKind::ZZ:
        u = zz_matrix(g.angle, g.qubits[0], g.qubits[1], n) * u;
        // the temporary frame discards the tracked light shift
        for (int q : g.qubits) {
          if (pending[q] != 0.0) u = embed1(rz_matrix(pending[q]), q, n) * u;
          pending[q] = 0.0;
        }
        break;
      case GateKind::FrameRotation: pending[g.qubits[0]] += g.angle; break;
    }
  }
  return u;
}

Eigen::MatrixXcd normalize_global_phase(const Eigen::MatrixXcd& u) {
  Eigen::Index r = 0, col = 0;
  u.cwiseAbs().maxCoeff(&r, &col);
  const cd z = u(r, col);
  if (std::abs(z) == 0.0) return u;
  return u * (std::abs(z) / z);
}

double phase_equivalence_error(const Eigen::MatrixXcd& a, const Eigen::MatrixXcd& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) return std::numeric_limits<double>::infinity();
  // use b's largest entry to pick the reference phase for both
  Eigen::Index r = 0, col = 0;
  b.cwiseAbs().maxCoeff(&r, &col);
  const cd za = a(r, col), zb = b(r, col);
  if (std::abs(za) == 0.0 || std::abs(zb) == 0.0) return (a - b).cwiseAbs().maxCoeff();
  return (a * (std::abs(za) / za) - b * (std::abs(zb) / zb)).cwiseAbs().maxCoeff();
}

nlohmann::json to_json(const ResolvedCircuit& r) {
  nlohmann::json pulses = nlohmann::json::array();
  for (const auto& p : r.pulses) {
    nlohmann::json j = {{"kind", p.kind},
                        {"qubits", p.qubits},
                        {"angle_rad", p.angle},
                        {"waveform_phase_rad", p.waveform_phase},
                        {"frame", p.frame == 0 ? "phi0" : "phi1"},
                        {"source_gate", p.source_gate}};
    if (!p.frame_rotation.empty()) j["frame_rotation_rad"] = p.frame_rotation;
    pulses.push_back(j);
  }
  return {{"qubits", r.qubit_count}, {"pulses", pulses}, {"final_phi0_rad", r.final_phi0}};
}

}  // namespace msgate::frames

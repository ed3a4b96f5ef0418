#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

#include "msgate/constants.hpp"
#include "msgate/errors.hpp"
#include "msgate/frame_compiler.hpp"

namespace msgate::frames {

namespace c = msgate::constants;

// angle tokens: 1.25, pi, -pi/2, 3*pi/8, 0.5*pi, 90deg
double parse_angle(const std::string& tok) {
  std::string s;
  for (char ch : tok)
    if (!std::isspace(static_cast<unsigned char>(ch))) s += static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  if (s.empty()) throw ConfigError("empty angle");
  double sign = 1.0;
  if (s[0] == '-' || s[0] == '+') {
    if (s[0] == '-') sign = -1.0;
    s = s.substr(1);
  }
  if (s.size() > 3 && s.substr(s.size() - 3) == "deg") return sign * std::stod(s.substr(0, s.size() - 3)) * c::deg;
  double num = 1.0, den = 1.0;
  const auto slash = s.find('/');
  std::string head = s;
  if (slash != std::string::npos) {
    den = std::stod(s.substr(slash + 1));
    head = s.substr(0, slash);
  }
  const auto p = head.find("pi");
  if (p != std::string::npos) {
    std::string coef = head.substr(0, p);
    if (!coef.empty() && coef.back() == '*') coef.pop_back();
    if (head.size() != p + 2) throw ConfigError("bad angle: " + tok);
    num = (coef.empty() ? 1.0 : std::stod(coef)) * c::pi;
  } else {
    std::size_t used = 0;
    num = std::stod(head, &used);
    if (used != head.size()) throw ConfigError("bad angle: " + tok);
  }
  if (den == 0.0) throw ConfigError("bad angle: " + tok);
  return sign * num / den;
}

Circuit parse_circuit(const std::string& text) {
  Circuit circ;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  bool have_qubits = false;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    std::istringstream ls(line);
    std::vector<std::string> tok;
    for (std::string t; ls >> t;) tok.push_back(t);
    if (tok.empty()) continue;
    const std::string where = "line " + std::to_string(lineno) + ": ";
    auto need = [&](std::size_t lo, std::size_t hi) {
      if (tok.size() < lo || tok.size() > hi) throw ConfigError(where + "wrong number of fields for " + tok[0]);
    };
    auto qubit = [&](const std::string& t) {
      std::size_t used = 0;
      const int q = std::stoi(t, &used);
      if (used != t.size()) throw ConfigError(where + "bad qubit index " + t);
      return q;
    };
    const std::string& op = tok[0];
    try {
      if (op == "qubits") {
        need(2, 2);
        circ.qubit_count = qubit(tok[1]);
        have_qubits = true;
      } else if (op == "@") {
        need(3, 3);
        circ.metadata[tok[1]] = tok[2];
      } else if (op == "ry_co") {
        need(3, 3);
        circ.ry_co(qubit(tok[1]), parse_angle(tok[2]));
      } else if (op == "ry_cu") {
        need(3, 3);
        circ.ry_cu(qubit(tok[1]), parse_angle(tok[2]));
      } else if (op == "rz") {
        need(3, 3);
        circ.rz(qubit(tok[1]), parse_angle(tok[2]));
      } else if (op == "ms") {
        need(4, 5);
        circ.ms(qubit(tok[1]), qubit(tok[2]), parse_angle(tok[3]), tok.size() == 5 ? parse_angle(tok[4]) : 0.0);
      } else if (op == "zz") {
        need(4, 4);
        circ.zz(qubit(tok[1]), qubit(tok[2]), parse_angle(tok[3]));
      } else if (op == "frame") {
        need(3, 3);
        circ.frame(qubit(tok[1]), parse_angle(tok[2]));
      } else {
        throw ConfigError(where + "unknown gate " + op);
      }
    } catch (const std::invalid_argument&) {
      throw ConfigError(where + "malformed number");
    } catch (const std::out_of_range&) {
      throw ConfigError(where + "number out of range");
    }
  }
  if (!have_qubits) throw ConfigError("circuit text lacks a 'qubits N' line");
  circ.validate();
  return circ;
}

Circuit read_circuit_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open circuit file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_circuit(ss.str());
}

std::string print_circuit(const Circuit& circ) {
  std::ostringstream out;
  out.precision(17);
  out << "qubits " << circ.qubit_count << '\n';
  for (const auto& [k, v] : circ.metadata) out << "@ " << k << ' ' << v << '\n';
  for (const auto& g : circ.gates) {
    out << gate_name(g.kind);
    for (int q : g.qubits) out << ' ' << q;
    out << ' ' << g.angle;
    if (g.kind == GateKind::MS && g.phase != 0.0) out << ' ' << g.phase;
    out << '\n';
  }
  return out.str();
}

}  // namespace msgate::frames

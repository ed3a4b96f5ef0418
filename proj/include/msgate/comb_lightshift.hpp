#pragma once

#include <array>
#include <string>
#include <vector>

#include <json.hpp>

namespace msgate::comb {

enum class Comb { g = 0, b = 1, r = 2 };
inline constexpr std::array<Comb, 3> all_combs{Comb::g, Comb::b, Comb::r};
char label(Comb c);
Comb comb_from_label(char c);

struct CombSpec {
  double f_rep = 0.0;               // Hz
  double tau_pulse = 0.0;           // s
  double delta_single_photon = 0.0; // Delta, rad/s
  double omega_pp = 0.0;            // fine-structure splitting, rad/s
  double omega_qubit = 0.0;         // rad/s
  double delta_aom = 0.0;           // rad/s
  double delta_c = 0.0;             // rad/s
  double omega_g0 = 0.0;            // reference tooth; only differences matter
  std::array<double, 3> base_rabi{0.0, 0.0, 0.0};  // h^(0) for g, b, r
  int harmonic_offset = 105;
  int tooth_truncation = 2000;
  std::array<std::array<double, 3>, 3> pair_scalings{};
  double denominator_guard = 0.0;   // rad/s
  double resonance_guard = 0.0;     // rad/s

  double h(Comb c) const { return base_rabi[static_cast<int>(c)]; }
  double scaling(Comb a, Comb b) const { return pair_scalings[static_cast<int>(a)][static_cast<int>(b)]; }
  double x() const;  // 2 pi f_rep tau_pulse
  void validate() const;

  // reference operating point: global amplitude twice each tone, Omega_bg^(105) = 2 pi 122.1 kHz
  static CombSpec reference_defaults();
};

struct ShiftBreakdown {
  std::array<std::array<double, 3>, 3> per_pair{};  // rad/s, ordered (alpha, beta)
  double total = 0.0;
  double get(Comb a, Comb b) const { return per_pair[static_cast<int>(a)][static_cast<int>(b)]; }
  double unordered(Comb a, Comb b) const;
};

// j-sum table S(l) for l in [offset - J, offset + J], at truncation J and 2J
struct CombTables {
  int j_max = 0;
  int l_min = 0;
  std::vector<double> s;
  std::vector<double> s_double;  // same l range, computed with 2J teeth
  int l_min_double = 0;
  std::vector<double> s_wide;    // l range of the 2J check
  double at(int l) const { return s[l - l_min]; }
};

CombTables build_tables(const CombSpec& spec, bool parallel = true);

double comb_tooth_frequency(const CombSpec& spec, Comb c, int j);
double tooth_envelope(const CombSpec& spec, Comb c, int j);

struct RabiValue {
  double value = 0.0;
  double value_double_j = 0.0;
  bool converged = true;
};
RabiValue two_photon_rabi(const CombSpec& spec, Comb a, Comb b, int l);
double two_photon_rabi(const CombSpec& spec, const CombTables& t, Comb a, Comb b, int l);

double fourth_order_shift(const CombSpec& spec, Comb a, Comb b);
double fourth_order_shift(const CombSpec& spec, const CombTables& t, Comb a, Comb b, bool wide = false);
// per-level shift Delta E^(+), half of the differential shift
double level_shift(const CombSpec& spec, Comb a, Comb b);

ShiftBreakdown total_shift(const CombSpec& spec);
ShiftBreakdown total_shift(const CombSpec& spec, const CombTables& t, bool wide = false);
// relative change of the total when J doubles
double truncation_change(const CombSpec& spec, const CombTables& t);

// tone ratio h_b/h_r = zeta holding the geometric mean sqrt(h_b h_r)
CombSpec with_zeta(const CombSpec& spec, double zeta);
double zeta_of(const CombSpec& spec);
// uniform amplitude factor so that sqrt(Omega_bg Omega_rg) at the harmonic offset equals target
CombSpec scaled_to_rabi(const CombSpec& spec, double rabi_target);

struct BalanceResult {
  double zeta = 0.0;
  double residual = 0.0;   // rad/s
  double shift_lo = 0.0;   // at bracket ends
  double shift_hi = 0.0;
};
BalanceResult balance_ratio(const CombSpec& spec, double rabi_target, double lo = 0.5, double hi = 2.0);

struct ZetaPoint {
  double zeta;
  ShiftBreakdown shift;
};
std::vector<ZetaPoint> zeta_scan(const CombSpec& spec, double rabi_target, const std::vector<double>& zetas);

nlohmann::json to_json(const ShiftBreakdown& s);
nlohmann::json to_json(const CombSpec& s);
CombSpec comb_from_json(const nlohmann::json& j, const CombSpec& base);

}  // namespace msgate::comb

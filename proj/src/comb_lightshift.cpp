#include "msgate/comb_lightshift.hpp"

#include <cmath>
#include <optional>
#include <sstream>

#include <boost/math/tools/roots.hpp>

#include "msgate/constants.hpp"
#include "msgate/errors.hpp"
#include "msgate/kernels.hpp"

namespace msgate::comb {

namespace c = msgate::constants;

char label(Comb cb) { return "gbr"[static_cast<int>(cb)]; }

Comb comb_from_label(char ch) {
  switch (ch) {
    case 'g': return Comb::g;
    case 'b': return Comb::b;
    case 'r': return Comb::r;
  }
  throw RangeError(std::string("unknown comb label '") + ch + "'");
}

double CombSpec::x() const { return c::two_pi * f_rep * tau_pulse; }

void CombSpec::validate() const {
  if (!(f_rep > 0.0) || !(tau_pulse > 0.0) || !(omega_qubit > 0.0))
    throw ConfigError("comb: f_rep, tau_pulse and omega_qubit must be positive");
  if (tooth_truncation < 1) throw ConfigError("comb: tooth_truncation must be >= 1");
  if (1.0 / std::cosh(tooth_truncation * x()) >= 1e-8)
    throw ConfigError("comb: tooth_truncation too small, envelope at J is not below 1e-8");
  for (const auto& row : pair_scalings)
    for (double s : row)
      if (!(s >= 0.0) || s > 1.0) throw ConfigError("comb: pair_scalings must lie in [0, 1], 0 excludes the pair");
}

CombSpec CombSpec::reference_defaults() {
  CombSpec s;
  s.f_rep = 120.125e6;
  s.tau_pulse = 3.9e-12;
  s.delta_single_photon = c::two_pi * 33e12;
  s.omega_pp = c::two_pi * 99.8e12;
  s.omega_qubit = c::two_pi * 12.642812118e9;
  s.harmonic_offset = 105;
  // AOM offset closing the carrier resonance: 105 f_rep + f_aom = f_qubit (~29.69 MHz)
  s.delta_aom = s.omega_qubit - s.harmonic_offset * c::two_pi * s.f_rep;
  s.delta_c = c::two_pi * 2.348e6;
  s.tooth_truncation = 7000;
  for (auto& row : s.pair_scalings) row.fill(1.0);
  s.pair_scalings[0][0] = 1.0 / 49.0;
  s.denominator_guard = c::two_pi * 10e9;
  s.resonance_guard = c::two_pi * 100.0;
  s.base_rabi = {2.0, 1.0, 1.0};
  return scaled_to_rabi(s, c::two_pi * 122.1e3);
}

double ShiftBreakdown::unordered(Comb a, Comb b) const {
  return a == b ? get(a, a) : get(a, b) + get(b, a);
}

namespace {

double tone_offset(const CombSpec& s, Comb cb) {
  switch (cb) {
    case Comb::g: return 0.0;
    case Comb::b: return s.delta_aom + s.delta_c;
    case Comb::r: return s.delta_aom - s.delta_c;
  }
  return 0.0;
}

kernels::CombSumInput sum_input(const CombSpec& s, int j_max, int l_min, int l_max) {
  kernels::CombSumInput in;
  in.x = s.x();
  in.j_max = j_max;
  in.l_min = l_min;
  in.l_max = l_max;
  in.weight.resize(2 * j_max + 1);
  for (int j = -j_max; j <= j_max; ++j) {
    const double d1 = s.delta_single_photon + j * c::two_pi * s.f_rep;
    const double d2 = d1 - s.omega_pp;
    double w = 0.0;
    if (std::abs(d1) >= s.denominator_guard && std::abs(d2) >= s.denominator_guard) w = 1.0 / d1 - 2.0 / d2;
    in.weight[j + j_max] = w;
  }
  return in;
}

std::vector<double> sums(const CombSpec& s, int j_max, int l_min, int l_max, bool parallel) {
  const auto in = sum_input(s, j_max, l_min, l_max);
  return parallel ? kernels::comb_sums_parallel(in) : kernels::comb_sums_serial(in);
}

double shift_from(const CombSpec& s, const std::vector<double>& table, int l_min, Comb a, Comb b) {
  const double amp = s.h(a) * s.h(b);
  if (amp == 0.0) return 0.0;
  const double base = tone_offset(s, a) - tone_offset(s, b) - s.omega_qubit;
  double acc = 0.0;
  for (std::size_t idx = 0; idx < table.size(); ++idx) {
    const int l = l_min + static_cast<int>(idx);
    const double den = l * c::two_pi * s.f_rep + base;
    if (std::abs(den) < s.resonance_guard) {
      std::ostringstream msg;
      msg << "fourth_order_shift: accidental resonance for (" << label(a) << "," << label(b)
          << ") at l=" << l << ", denominator " << den / c::two_pi << " Hz";
      throw ResonanceError(msg.str());
    }
    const double om = amp * table[idx];
    acc += om * om / (2.0 * den);
  }
  return acc * s.scaling(a, b);
}

}  // namespace

CombTables build_tables(const CombSpec& s, bool parallel) {
  s.validate();
  CombTables t;
  const int jm = s.tooth_truncation;
  t.j_max = jm;
  t.l_min = s.harmonic_offset - jm;
  t.s = sums(s, jm, t.l_min, s.harmonic_offset + jm, parallel);
  t.l_min_double = s.harmonic_offset - 2 * jm;
  t.s_wide = sums(s, 2 * jm, t.l_min_double, s.harmonic_offset + 2 * jm, parallel);
  t.s_double.assign(t.s_wide.begin() + jm, t.s_wide.begin() + jm + t.s.size());
  return t;
}

double comb_tooth_frequency(const CombSpec& s, Comb cb, int j) {
  return s.omega_g0 + j * c::two_pi * s.f_rep + tone_offset(s, cb);
}

double tooth_envelope(const CombSpec& s, Comb cb, int j) {
  if (std::abs(j) > s.tooth_truncation) throw RangeError("tooth_envelope: |j| exceeds tooth_truncation");
  return s.h(cb) / std::cosh(j * s.x());
}

RabiValue two_photon_rabi(const CombSpec& s, Comb a, Comb b, int l) {
  s.validate();
  const double amp = s.h(a) * s.h(b);
  RabiValue r;
  r.value = amp * sums(s, s.tooth_truncation, l, l, false)[0];
  r.value_double_j = amp * sums(s, 2 * s.tooth_truncation, l, l, false)[0];
  const double scale = std::max(std::abs(r.value), std::abs(r.value_double_j));
  r.converged = scale == 0.0 || std::abs(r.value - r.value_double_j) <= 1e-6 * scale;
  if (!r.converged) {
    std::ostringstream msg;
    msg << "two_photon_rabi: tooth sum not converged at J=" << s.tooth_truncation << " for l=" << l;
    throw ConvergenceError(msg.str());
  }
  return r;
}

double two_photon_rabi(const CombSpec& s, const CombTables& t, Comb a, Comb b, int l) {
  return s.h(a) * s.h(b) * t.at(l);
}

double fourth_order_shift(const CombSpec& s, const CombTables& t, Comb a, Comb b, bool wide) {
  return wide ? shift_from(s, t.s_wide, t.l_min_double, a, b) : shift_from(s, t.s, t.l_min, a, b);
}

double fourth_order_shift(const CombSpec& s, Comb a, Comb b) {
  const auto t = build_tables(s);
  const double v = fourth_order_shift(s, t, a, b);
  const double w = fourth_order_shift(s, t, a, b, true);
  if (std::abs(v - w) > 1e-6 * std::max(std::abs(v), std::abs(w)) && std::max(std::abs(v), std::abs(w)) > 0)
    throw ConvergenceError("fourth_order_shift: l/j sums not converged when J doubles");
  return v;
}

double level_shift(const CombSpec& s, Comb a, Comb b) { return 0.5 * fourth_order_shift(s, a, b); }

ShiftBreakdown total_shift(const CombSpec& s, const CombTables& t, bool wide) {
  ShiftBreakdown out;
  for (Comb a : all_combs)
    for (Comb b : all_combs) {
      const double v = fourth_order_shift(s, t, a, b, wide);
      out.per_pair[static_cast<int>(a)][static_cast<int>(b)] = v;
    }
  // fixed summation order
  out.total = 0.0;
  for (const auto& row : out.per_pair)
    for (double v : row) out.total += v;
  return out;
}

double truncation_change(const CombSpec& s, const CombTables& t) {
  const double a = total_shift(s, t).total;
  const double b = total_shift(s, t, true).total;
  const double scale = std::max(std::abs(a), std::abs(b));
  return scale == 0.0 ? 0.0 : std::abs(a - b) / scale;
}

ShiftBreakdown total_shift(const CombSpec& s) {
  const auto t = build_tables(s);
  if (truncation_change(s, t) > 1e-6)
    throw ConvergenceError("total_shift: sums not converged when J doubles");
  return total_shift(s, t);
}

CombSpec with_zeta(const CombSpec& s, double zeta) {
  if (!(zeta > 0.0)) throw RangeError("with_zeta: zeta must be positive");
  CombSpec out = s;
  const double h0 = std::sqrt(s.h(Comb::b) * s.h(Comb::r));
  out.base_rabi[1] = h0 * std::sqrt(zeta);
  out.base_rabi[2] = h0 / std::sqrt(zeta);
  return out;
}

double zeta_of(const CombSpec& s) { return s.h(Comb::b) / s.h(Comb::r); }

CombSpec scaled_to_rabi(const CombSpec& s, double rabi_target) {
  const int l = s.harmonic_offset;
  const double sl = sums(s, s.tooth_truncation, l, l, false)[0];
  const double gm = s.h(Comb::g) * std::sqrt(s.h(Comb::b) * s.h(Comb::r)) * sl;
  if (gm == 0.0) throw RangeError("scaled_to_rabi: zero two-photon Rabi rate cannot be rescaled");
  const double f = std::sqrt(rabi_target / std::abs(gm));
  CombSpec out = s;
  for (double& h : out.base_rabi) h *= f;
  return out;
}

BalanceResult balance_ratio(const CombSpec& spec, double rabi_target, double lo, double hi) {
  const CombSpec base = scaled_to_rabi(spec, rabi_target);
  const auto t = build_tables(base);
  auto f = [&](double z) { return total_shift(with_zeta(base, z), t).total; };
  BalanceResult r;
  r.shift_lo = f(lo);
  r.shift_hi = f(hi);
  if (r.shift_lo * r.shift_hi > 0.0) {
    std::ostringstream msg;
    msg << "balance_ratio: no sign change on [" << lo << ", " << hi << "], shifts "
        << r.shift_lo / c::two_pi << " Hz and " << r.shift_hi / c::two_pi << " Hz";
    throw NoRootError(msg.str());
  }
  boost::uintmax_t iters = 200;
  auto tol = [](double a, double b) { return std::abs(b - a) < 1e-13; };
  const auto root = boost::math::tools::toms748_solve(f, lo, hi, r.shift_lo, r.shift_hi, tol, iters);
  r.zeta = 0.5 * (root.first + root.second);
  r.residual = f(r.zeta);
  return r;
}

std::vector<ZetaPoint> zeta_scan(const CombSpec& spec, double rabi_target, const std::vector<double>& zetas) {
  const CombSpec base = scaled_to_rabi(spec, rabi_target);
  const auto t = build_tables(base);
  std::vector<ZetaPoint> out;
  for (double z : zetas) out.push_back({z, total_shift(with_zeta(base, z), t)});
  return out;
}

nlohmann::json to_json(const ShiftBreakdown& s) {
  nlohmann::json j;
  nlohmann::json pairs = nlohmann::json::object();
  for (Comb a : all_combs)
    for (Comb b : all_combs) pairs[std::string{label(a), label(b)}] = s.get(a, b) / c::two_pi;
  j["per_pair_hz"] = pairs;
  j["total_hz"] = s.total / c::two_pi;
  return j;
}

nlohmann::json to_json(const CombSpec& s) {
  nlohmann::json scal = nlohmann::json::object();
  for (Comb a : all_combs)
    for (Comb b : all_combs) scal[std::string{label(a), label(b)}] = s.scaling(a, b);
  return {{"f_rep_hz", s.f_rep},
          {"tau_pulse_s", s.tau_pulse},
          {"delta_single_photon_hz", s.delta_single_photon / c::two_pi},
          {"omega_pp_hz", s.omega_pp / c::two_pi},
          {"omega_qubit_hz", s.omega_qubit / c::two_pi},
          {"delta_aom_hz", s.delta_aom / c::two_pi},
          {"delta_c_hz", s.delta_c / c::two_pi},
          {"base_rabi_hz", {s.base_rabi[0] / c::two_pi, s.base_rabi[1] / c::two_pi, s.base_rabi[2] / c::two_pi}},
          {"harmonic_offset", s.harmonic_offset},
          {"tooth_truncation", s.tooth_truncation},
          {"pair_scalings", scal}};
}

CombSpec comb_from_json(const nlohmann::json& j, const CombSpec& base) {
  CombSpec s = base;
  std::optional<double> rabi_target;
  for (auto it = j.begin(); it != j.end(); ++it) {
    const auto& k = it.key();
    const auto& v = it.value();
    if (k == "f_rep_hz") s.f_rep = v.get<double>();
    else if (k == "tau_pulse_s") s.tau_pulse = v.get<double>();
    else if (k == "delta_single_photon_hz") s.delta_single_photon = c::two_pi * v.get<double>();
    else if (k == "omega_pp_hz") s.omega_pp = c::two_pi * v.get<double>();
    else if (k == "omega_qubit_hz") s.omega_qubit = c::two_pi * v.get<double>();
    else if (k == "delta_aom_hz") s.delta_aom = c::two_pi * v.get<double>();
    else if (k == "delta_c_hz") s.delta_c = c::two_pi * v.get<double>();
    else if (k == "harmonic_offset") s.harmonic_offset = v.get<int>();
    else if (k == "tooth_truncation") s.tooth_truncation = v.get<int>();
    else if (k == "base_rabi_hz") {
      auto a = v.get<std::vector<double>>();
      if (a.size() != 3) throw ConfigError("comb.base_rabi_hz needs three values (g, b, r)");
      for (int i = 0; i < 3; ++i) s.base_rabi[i] = c::two_pi * a[i];
    } else if (k == "rabi_target_hz") rabi_target = c::two_pi * v.get<double>();
    else if (k == "pair_scalings") {
      for (auto p = v.begin(); p != v.end(); ++p) {
        if (p.key().size() != 2) throw ConfigError("comb.pair_scalings keys are two comb labels");
        const int a = static_cast<int>(comb_from_label(p.key()[0]));
        const int b = static_cast<int>(comb_from_label(p.key()[1]));
        s.pair_scalings[a][b] = s.pair_scalings[b][a] = p.value().get<double>();
      }
    } else
      throw ConfigError("comb: unknown key '" + k + "'");
  }
  if (j.contains("delta_aom_hz") == false && (j.contains("omega_qubit_hz") || j.contains("f_rep_hz") ||
                                              j.contains("harmonic_offset")))
    s.delta_aom = s.omega_qubit - s.harmonic_offset * c::two_pi * s.f_rep;
  if (rabi_target) {
    bool any = false;
    for (double h : s.base_rabi) any = any || h != 0.0;
    if (any) s = scaled_to_rabi(s, *rabi_target);
  }
  s.validate();
  return s;
}

}  // namespace msgate::comb

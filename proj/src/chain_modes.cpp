#include "msgate/chain_modes.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <boost/math/tools/roots.hpp>

#include "msgate/constants.hpp"
#include "msgate/errors.hpp"

namespace msgate::modes {

namespace c = msgate::constants;

void TrapConfig::validate() const {
  if (ion_count < 1) throw ConfigError("trap: ion_count must be >= 1");
  if (!(axial_freq > 0.0) || !(radial_com_freqs[0] > 0.0) || !(radial_com_freqs[1] > 0.0))
    throw ConfigError("trap: frequencies must be positive");
  if (!(ion_mass > 0.0)) throw ConfigError("trap: ion_mass must be positive");
  if (!(raman_delta_k > 0.0)) throw ConfigError("trap: raman_delta_k must be positive");
  for (double p : axis_projection)
    if (p < 0.0 || p > 1.0) throw ConfigError("trap: axis_projection must lie in [0,1]");
  // the full instability check needs the eigenvalues; the cheap necessary condition is
  // that the radial confinement is stiffer than the axial one
  for (double wr : radial_com_freqs)
    if (ion_count > 1 && wr <= axial_freq) throw ConfigError("trap: radial_com_freqs must exceed axial_freq");
}

TrapConfig TrapConfig::defaults(int ion_count) {
  TrapConfig t;
  t.ion_count = ion_count;
  t.axial_freq = 0.7 * c::mhz;
  t.radial_com_freqs = {2.4 * c::mhz, 2.15 * c::mhz};
  t.ion_mass = c::yb171_ion_mass;
  t.raman_delta_k = c::raman_delta_k;
  return t;
}

ModeSpectrum ModeSpectrum::shifted(double common_offset) const {
  ModeSpectrum out = *this;
  out.frequencies.array() += common_offset;
  return out;
}

double length_scale(const TrapConfig& config) {
  const double k = c::elementary_charge * c::elementary_charge / (4.0 * c::pi * c::epsilon0);
  return std::cbrt(k / (config.ion_mass * config.axial_freq * config.axial_freq));
}

namespace {

Eigen::VectorXd coulomb_residual(const Eigen::VectorXd& u) {
  const int n = static_cast<int>(u.size());
  Eigen::VectorXd f = u;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      if (i == j) continue;
      const double d = u[i] - u[j];
      f[i] -= (d > 0 ? 1.0 : -1.0) / (d * d);
    }
  return f;
}

Eigen::MatrixXd coulomb_jacobian(const Eigen::VectorXd& u) {
  const int n = static_cast<int>(u.size());
  Eigen::MatrixXd jac = Eigen::MatrixXd::Identity(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      if (i == j) continue;
      const double d3 = std::pow(std::abs(u[i] - u[j]), 3);
      jac(i, i) += 2.0 / d3;
      jac(i, j) -= 2.0 / d3;
    }
  return jac;
}

}  // namespace

std::vector<double> equilibrium_positions_scaled(int ion_count) {
  if (ion_count < 1) throw RangeError("equilibrium_positions: ion_count must be >= 1");
  const int n = ion_count;
  if (n == 1) return {0.0};

  // uniform ansatz with the usual N^-0.56 spacing law
  Eigen::VectorXd u(n);
  const double spacing = 2.018 / std::pow(static_cast<double>(n), 0.559);
  for (int i = 0; i < n; ++i) u[i] = (i - 0.5 * (n - 1)) * spacing;

  double res = coulomb_residual(u).cwiseAbs().maxCoeff();
  for (int iter = 0; iter < 200 && res > 1e-13; ++iter) {
    const Eigen::VectorXd f = coulomb_residual(u);
    const Eigen::VectorXd step = coulomb_jacobian(u).partialPivLu().solve(-f);
    double lambda = 1.0;
    Eigen::VectorXd trial;
    double trial_res = 0.0;
    for (int k = 0; k < 40; ++k) {
      trial = u + lambda * step;
      bool ordered = true;
      for (int i = 1; i < n; ++i) ordered = ordered && trial[i] > trial[i - 1];
      trial_res = ordered ? coulomb_residual(trial).cwiseAbs().maxCoeff() : INFINITY;
      if (trial_res < res || trial_res < 1e-14) break;
      lambda *= 0.5;
    }
    u = trial;
    res = trial_res;
  }
  // enforce the reflection symmetry exactly
  for (int i = 0; i < n / 2; ++i) {
    const double s = 0.5 * (u[n - 1 - i] - u[i]);
    u[i] = -s;
    u[n - 1 - i] = s;
  }
  if (n % 2 == 1) u[n / 2] = 0.0;
  res = coulomb_residual(u).cwiseAbs().maxCoeff();
  if (!(res < 1e-12)) {
    std::ostringstream msg;
    msg << "equilibrium_positions: damped Newton did not converge, residual " << res;
    throw ConvergenceError(msg.str());
  }
  return {u.data(), u.data() + n};
}

std::vector<double> equilibrium_positions(const TrapConfig& config) {
  config.validate();
  const double l = length_scale(config);
  auto u = equilibrium_positions_scaled(config.ion_count);
  for (double& x : u) x *= l;
  return u;
}

ModeSpectrum radial_modes(const TrapConfig& config, const std::vector<double>& positions,
                          int manifold) {
  config.validate();
  const int n = config.ion_count;
  if (static_cast<int>(positions.size()) != n)
    throw RangeError("radial_modes: position count does not match ion_count");
  if (manifold < 0 || manifold > 1) throw RangeError("radial_modes: manifold must be 0 or 1");

  const double l = length_scale(config);
  const double beta = config.radial_com_freqs[manifold] / config.axial_freq;
  Eigen::MatrixXd k = Eigen::MatrixXd::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    k(i, i) = beta * beta;
    for (int j = 0; j < n; ++j) {
      if (i == j) continue;
      const double inv3 = 1.0 / std::pow(std::abs(positions[i] - positions[j]) / l, 3);
      k(i, i) -= inv3;
      k(i, j) = inv3;
    }
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(k);
  if (es.info() != Eigen::Success) throw ConvergenceError("radial_modes: eigensolver failed");

  ModeSpectrum spec;
  spec.manifold = manifold;
  spec.frequencies.resize(n);
  spec.participation.resize(n, n);
  for (int m = 0; m < n; ++m) {
    const int src = n - 1 - m;  // descending order
    const double lam = es.eigenvalues()[src];
    if (lam <= 0.0) {
      std::ostringstream msg;
      msg << "radial_modes: imaginary frequency for mode " << m
          << " (eigenvalue " << lam << "), chain is past the zig-zag transition";
      throw InstabilityError(msg.str());
    }
    spec.frequencies[m] = config.axial_freq * std::sqrt(lam);
    Eigen::VectorXd b = es.eigenvectors().col(src);
    for (int i = 0; i < n; ++i)
      if (std::abs(b[i]) > 1e-8) {
        if (b[i] < 0) b = -b;
        break;
      }
    spec.participation.row(m) = b.transpose();
  }
  spec.lamb_dicke.resize(n, n);
  const double dk = config.raman_delta_k * config.axis_projection[manifold];
  for (int m = 0; m < n; ++m) {
    const double x0 = std::sqrt(c::hbar / (2.0 * config.ion_mass * spec.frequencies[m]));
    spec.lamb_dicke.row(m) = spec.participation.row(m) * dk * x0;
  }
  return spec;
}

std::array<ModeSpectrum, 2> radial_manifolds(const TrapConfig& config) {
  const auto pos = equilibrium_positions(config);
  return {radial_modes(config, pos, 0), radial_modes(config, pos, 1)};
}

// q0 is the center ion, or the left-center one in an even chain
int ion_index(int label, int ion_count) {
  const int idx = label + (ion_count - 1) / 2;
  if (idx < 0 || idx >= ion_count) throw RangeError("ion label out of range");
  return idx;
}

int ion_label(int index, int ion_count) {
  if (index < 0 || index >= ion_count) throw RangeError("ion index out of range");
  return index - (ion_count - 1) / 2;
}

double pair_objective(const ModeSpectrum& spec, int i, int j, int upper, int lower) {
  const auto& eta = spec.lamb_dicke;
  return std::abs(eta(upper, i) * eta(upper, j) - eta(lower, i) * eta(lower, j));
}

namespace {

// first-order sensitivity of theta to a common mode shift, adiabatic limit
double balance_function(const ModeSpectrum& spec, int i, int j, double drive) {
  double s = 0.0;
  for (int k = 0; k < spec.ion_count(); ++k) {
    const double ck = spec.lamb_dicke(k, i) * spec.lamb_dicke(k, j);
    const double d = drive - spec.frequencies[k];
    s += ck / (d * d);
  }
  return s;
}

double adiabatic_theta(const ModeSpectrum& spec, int i, int j, double drive) {
  double s = 0.0;
  for (int k = 0; k < spec.ion_count(); ++k)
    s += spec.lamb_dicke(k, i) * spec.lamb_dicke(k, j) / (drive - spec.frequencies[k]);
  return s;
}

}  // namespace

GatePairPlan select_mode_pair(const ModeSpectrum& spec, std::pair<int, int> pair,
                              const PlanOptions& options) {
  const int n = spec.ion_count();
  const auto [i, j] = pair;
  if (i < 0 || j < 0 || i >= n || j >= n || i == j)
    throw RangeError("select_mode_pair: ions out of range or identical");

  GatePairPlan plan;
  plan.index_i = i;
  plan.index_j = j;
  plan.qubit_i = ion_label(i, n);
  plan.qubit_j = ion_label(j, n);
  plan.manifold = spec.manifold;

  const auto& b = spec.participation;
  double best = -1.0;
  int best_upper = -1;
  for (int k = 0; k + 1 < n; ++k) {
    const int lo = k + 1;
    bool weak = false;
    for (int m : {k, lo})
      for (int ion : {i, j}) weak = weak || std::abs(b(m, ion)) < options.participation_floor;
    if (weak) continue;
    const double obj = pair_objective(spec, i, j, k, lo);
    if (obj > best) {
      best = obj;
      best_upper = k;
    }
  }

  if (best_upper >= 0) {
    const int up = best_upper, lo = best_upper + 1;
    const double nu_hi = spec.frequencies[up], nu_lo = spec.frequencies[lo];
    const double gap = nu_hi - nu_lo;
    const double a = nu_lo + 1e-9 * gap, bb = nu_hi - 1e-9 * gap;
    auto f = [&](double x) { return balance_function(spec, i, j, x); };
    if (f(a) * f(bb) < 0.0) {
      boost::uintmax_t iters = 200;
      auto tol = [gap](double l, double r) { return std::abs(r - l) < 1e-13 * gap; };
      const auto root = boost::math::tools::toms748_solve(f, a, bb, tol, iters);
      plan.mode_upper = up;
      plan.mode_lower = lo;
      plan.drive_offset = 0.5 * (root.first + root.second);
      plan.detuning = plan.drive_offset - nu_lo;
      plan.balanced = true;
      plan.objective = best;
      return plan;
    }
  }

  // fallback: one strong mode both ions share, offset to the side that maximizes theta
  int best_mode = -1;
  double best_c = 0.0;
  for (int k = 0; k < n; ++k) {
    if (std::abs(b(k, i)) < options.participation_floor || std::abs(b(k, j)) < options.participation_floor)
      continue;
    const double ck = std::abs(spec.lamb_dicke(k, i) * spec.lamb_dicke(k, j));
    if (ck > best_c) {
      best_c = ck;
      best_mode = k;
    }
  }
  if (best_mode < 0 || std::sqrt(best_c) < options.eta_floor) {
    std::ostringstream msg;
    msg << "select_mode_pair: no mode couples both ions of pair (" << plan.qubit_i << ", "
        << plan.qubit_j << ") above the floor";
    throw RangeError(msg.str());
  }
  const double nu = spec.frequencies[best_mode];
  const double above = nu + options.fallback_offset, below = nu - options.fallback_offset;
  const bool use_above =
      std::abs(adiabatic_theta(spec, i, j, above)) >= std::abs(adiabatic_theta(spec, i, j, below));
  plan.mode_upper = plan.mode_lower = best_mode;
  plan.drive_offset = use_above ? above : below;
  plan.detuning = plan.drive_offset - nu;
  plan.balanced = false;
  plan.objective = 0.0;
  return plan;
}

std::vector<GatePairPlan> all_pair_plans(const ModeSpectrum& spec, const PlanOptions& options) {
  std::vector<GatePairPlan> out;
  for (int i = 0; i < spec.ion_count(); ++i)
    for (int j = i + 1; j < spec.ion_count(); ++j) out.push_back(select_mode_pair(spec, {i, j}, options));
  return out;
}

nlohmann::json to_json(const ModeSpectrum& spec) {
  nlohmann::json j;
  j["manifold"] = spec.manifold;
  const int n = spec.ion_count();
  j["frequencies_hz"] = nlohmann::json::array();
  j["participation"] = nlohmann::json::array();
  j["lamb_dicke"] = nlohmann::json::array();
  for (int k = 0; k < n; ++k) {
    j["frequencies_hz"].push_back(spec.frequencies[k] / c::two_pi);
    std::vector<double> brow(n), erow(n);
    for (int i = 0; i < n; ++i) {
      brow[i] = spec.participation(k, i);
      erow[i] = spec.lamb_dicke(k, i);
    }
    j["participation"].push_back(brow);
    j["lamb_dicke"].push_back(erow);
  }
  return j;
}

nlohmann::json to_json(const GatePairPlan& p) {
  return {{"qubit_i", p.qubit_i},
          {"qubit_j", p.qubit_j},
          {"index_i", p.index_i},
          {"index_j", p.index_j},
          {"manifold", p.manifold},
          {"mode_lower", p.mode_lower},
          {"mode_upper", p.mode_upper},
          {"detuning_hz", p.detuning / c::two_pi},
          {"drive_offset_hz", p.drive_offset / c::two_pi},
          {"balanced", p.balanced},
          {"objective", p.objective}};
}

nlohmann::json to_json(const TrapConfig& t) {
  return {{"ion_count", t.ion_count},
          {"axial_freq_hz", t.axial_freq / c::two_pi},
          {"radial_com_freqs_hz", {t.radial_com_freqs[0] / c::two_pi, t.radial_com_freqs[1] / c::two_pi}},
          {"ion_mass_kg", t.ion_mass},
          {"raman_delta_k", t.raman_delta_k},
          {"axis_projection", {t.axis_projection[0], t.axis_projection[1]}}};
}

TrapConfig trap_from_json(const nlohmann::json& j, const TrapConfig& base) {
  TrapConfig t = base;
  for (auto it = j.begin(); it != j.end(); ++it) {
    const auto& key = it.key();
    const auto& v = it.value();
    if (key == "ion_count") t.ion_count = v.get<int>();
    else if (key == "axial_freq_hz") t.axial_freq = c::two_pi * v.get<double>();
    else if (key == "radial_com_freqs_hz") {
      auto a = v.get<std::vector<double>>();
      if (a.size() != 2) throw ConfigError("trap.radial_com_freqs_hz needs two values");
      t.radial_com_freqs = {c::two_pi * a[0], c::two_pi * a[1]};
    } else if (key == "ion_mass_kg") t.ion_mass = v.get<double>();
    else if (key == "raman_delta_k") t.raman_delta_k = v.get<double>();
    else if (key == "axis_projection") {
      auto a = v.get<std::vector<double>>();
      if (a.size() != 2) throw ConfigError("trap.axis_projection needs two values");
      t.axis_projection = {a[0], a[1]};
    } else
      throw ConfigError("trap: unknown key '" + key + "'");
  }
  t.validate();
  return t;
}

}  // namespace msgate::modes

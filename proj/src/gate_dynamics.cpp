#include "msgate/gate_dynamics.hpp"

#include <algorithm>
#include <cmath>

#include <boost/math/quadrature/gauss.hpp>

#include "msgate/constants.hpp"
#include "msgate/errors.hpp"

namespace msgate::dynamics {

namespace c = msgate::constants;

namespace {

constexpr int kOrder = 8;

struct PanelRule {
  std::array<double, kOrder> x{};  // nodes on [0,1]
  std::array<double, kOrder> w{};
  // integ[m][q] = int_0^{x_m} L_q(x) dx
  std::array<std::array<double, kOrder>, kOrder> integ{};
};

const PanelRule& panel_rule() {
  static const PanelRule rule = [] {
    PanelRule r;
    using gl = boost::math::quadrature::gauss<double, kOrder>;
    const auto& ab = gl::abscissa();
    const auto& wt = gl::weights();
    std::vector<std::pair<double, double>> pts;
    for (std::size_t i = 0; i < ab.size(); ++i) {
      pts.push_back({ab[i], wt[i]});
      if (ab[i] != 0.0) pts.push_back({-ab[i], wt[i]});
    }
    std::sort(pts.begin(), pts.end());
    for (int i = 0; i < kOrder; ++i) {
      r.x[i] = 0.5 * (pts[i].first + 1.0);
      r.w[i] = 0.5 * pts[i].second;
    }
    // monomial coefficients of the Lagrange basis via the Vandermonde inverse
    Eigen::MatrixXd V(kOrder, kOrder);
    for (int i = 0; i < kOrder; ++i)
      for (int p = 0; p < kOrder; ++p) V(i, p) = std::pow(r.x[i], p);
    const Eigen::MatrixXd C = V.inverse();  // L_q(x) = sum_p C(p, q) x^p
    for (int m = 0; m < kOrder; ++m)
      for (int q = 0; q < kOrder; ++q) {
        double s = 0.0;
        for (int p = 0; p < kOrder; ++p) s += C(p, q) * std::pow(r.x[m], p + 1) / (p + 1);
        r.integ[m][q] = s;
      }
    return r;
  }();
  return rule;
}

Eigen::Matrix4cd hadamard2() {
  const double h = 0.5;
  Eigen::Matrix4cd T;
  // T(z, s): z = 2 b_i + b_j, s = 2 [s_i = -1] + [s_j = -1]
  for (int z = 0; z < 4; ++z)
    for (int s = 0; s < 4; ++s) {
      const int bi = z >> 1, bj = z & 1, si = s >> 1, sj = s & 1;
      const double sign = ((bi && si) ? -1.0 : 1.0) * ((bj && sj) ? -1.0 : 1.0);
      T(z, s) = h * sign;
    }
  return T;
}

inline double spin_sign(int s, int ion) { return ((s >> (ion == 0 ? 1 : 0)) & 1) ? -1.0 : 1.0; }

Eigen::Matrix4cd chi_matrix(const std::vector<cd>& ai, const std::vector<cd>& aj, double nbar) {
  Eigen::Matrix4cd chi;
  for (int s = 0; s < 4; ++s)
    for (int sp = 0; sp < 4; ++sp) {
      double re = 0.0, ph = 0.0;
      for (std::size_t k = 0; k < ai.size(); ++k) {
        const cd A = spin_sign(s, 0) * ai[k] + spin_sign(s, 1) * aj[k];
        const cd B = spin_sign(sp, 0) * ai[k] + spin_sign(sp, 1) * aj[k];
        re -= (nbar + 0.5) * std::norm(A - B);
        ph += std::imag(std::conj(B) * A);
      }
      chi(s, sp) = std::exp(re) * std::polar(1.0, ph);
    }
  return chi;
}

Eigen::Matrix2cd exp_su2(double a, double b) {
  // exp(-i (a sigma_z + b sigma_x))
  const double r = std::hypot(a, b);
  const double cr = std::cos(r);
  const double sr = r > 0 ? std::sin(r) / r : 1.0;
  Eigen::Matrix2cd m;
  m << cd(cr, -sr * a), cd(0, -sr * b), cd(0, -sr * b), cd(cr, sr * a);
  return m;
}

// exp(-i (g/2 XX - e_i/2 Z_i - e_j/2 Z_j))
Eigen::Matrix4cd xx_z_step(double g, double ei, double ej) {
  Eigen::Matrix4cd u = Eigen::Matrix4cd::Zero();
  const auto b1 = exp_su2(-(ei + ej) / 2.0, g / 2.0);  // {00, 11}
  const auto b2 = exp_su2(-(ei - ej) / 2.0, g / 2.0);  // {01, 10}
  u(0, 0) = b1(0, 0); u(0, 3) = b1(0, 1); u(3, 0) = b1(1, 0); u(3, 3) = b1(1, 1);
  u(1, 1) = b2(0, 0); u(1, 2) = b2(0, 1); u(2, 1) = b2(1, 0); u(2, 2) = b2(1, 1);
  return u;
}

std::array<double, 2> residual_phase(const GateDrive& d, const pulse::Envelope& env) {
  const double E = env.total_energy();
  return {d.lightshift_peak[0] * E + d.pulse.frame_rotation_total[0],
          d.lightshift_peak[1] * E + d.pulse.frame_rotation_total[1]};
}

}  // namespace

int GateDrive::mode_count() const {
  int n = 0;
  for (const auto& m : modes) n += static_cast<int>(m.frequencies.size());
  return n;
}

Eigen::Matrix4cd GateChannel::apply(const Eigen::Matrix4cd& rho) const {
  static const Eigen::Matrix4cd T = hadamard2();
  const Eigen::Matrix4cd r = unitary * rho * unitary.adjoint();
  Eigen::Matrix4cd rx = T.adjoint() * r * T;
  rx = rx.cwiseProduct(chi);
  return T * rx * T.adjoint();
}

DriveIntegrals::DriveIntegrals(const GateDrive& d) {
  if (d.modes.empty()) throw ConfigError("gate drive has no modes");
  const int n_ion = d.modes.front().ion_count();
  if (d.pair.first < 0 || d.pair.second < 0 || d.pair.first >= n_ion || d.pair.second >= n_ion)
    throw RangeError("gate pair outside the chain");
  for (const auto& m : d.modes)
    for (int k = 0; k < m.frequencies.size(); ++k) {
      eta_i_.push_back(m.lamb_dicke(k, d.pair.first));
      eta_j_.push_back(m.lamb_dicke(k, d.pair.second));
      delta_.push_back(d.pulse.detuning - (m.frequencies(k) + d.mode_shift));
    }
  d.pulse.validate();
  const pulse::Envelope env(d.pulse);
  double dmax = 0.0;
  for (double x : delta_) dmax = std::max(dmax, std::abs(x));
  int panels = std::max(2, static_cast<int>(std::ceil(dmax * env.knot_spacing() / 0.5)));
  evaluate(d, env, panels);
  for (int iter = 0; iter < 8; ++iter) {
    const double prev = theta_;
    const auto fi = f_i_, fj = f_j_;
    evaluate(d, env, panels * 2);
    double df = 0.0, scale = 1e-30;
    for (std::size_t k = 0; k < fi.size(); ++k) {
      df = std::max(df, std::abs(fi[k] - f_i_[k]) + std::abs(fj[k] - f_j_[k]));
      scale = std::max(scale, std::abs(f_i_[k]) + std::abs(f_j_[k]) + (d.rabi_peak_i + d.rabi_peak_j) * 1e-12);
    }
    if (std::abs(prev - theta_) <= 1e-12 + 1e-10 * std::abs(theta_) && df <= 1e-10 * scale + 1e-14) return;
    panels *= 2;
  }
  throw ConvergenceError("gate quadrature did not converge");
}

void DriveIntegrals::evaluate(const GateDrive& d, const pulse::Envelope& env, int panels) {
  const auto& rule = panel_rule();
  panels_ = panels;
  const int nseg = env.segments();
  const double h = env.knot_spacing() / panels;
  const int nodes = nseg * panels * kOrder;
  const int nk = static_cast<int>(delta_.size());
  t_.assign(nodes, 0.0);
  w_.assign(nodes, 0.0);
  env_.assign(nodes, 0.0);
  rate_.assign(nodes, 0.0);
  for (int p = 0; p < nseg * panels; ++p)
    for (int q = 0; q < kOrder; ++q) {
      const int n = p * kOrder + q;
      t_[n] = (p + rule.x[q]) * h;
      w_[n] = rule.w[q] * h;
      env_[n] = env(t_[n]);
    }
  f_i_.assign(nk, cd(0.0));
  f_j_.assign(nk, cd(0.0));
  theta_ = 0.0;
  std::vector<cd> gi(kOrder), gj(kOrder);
  for (int k = 0; k < nk; ++k) {
    const double coef = -0.5 * eta_i_[k] * eta_j_[k];
    cd Fi = 0.0, Fj = 0.0;
    double th = 0.0;
    for (int p = 0; p < nseg * panels; ++p) {
      for (int q = 0; q < kOrder; ++q) {
        const int n = p * kOrder + q;
        const cd e = std::polar(1.0, delta_[k] * t_[n]);
        gi[q] = d.rabi_peak_i * env_[n] * e;
        gj[q] = d.rabi_peak_j * env_[n] * e;
      }
      for (int m = 0; m < kOrder; ++m) {
        const int n = p * kOrder + m;
        cd pi = Fi, pj = Fj;
        for (int q = 0; q < kOrder; ++q) {
          pi += h * rule.integ[m][q] * gi[q];
          pj += h * rule.integ[m][q] * gj[q];
        }
        const cd e = std::polar(1.0, delta_[k] * t_[n]);
        const double r = d.rabi_peak_i * env_[n] * std::imag(e * std::conj(pj)) +
                         d.rabi_peak_j * env_[n] * std::imag(e * std::conj(pi));
        rate_[n] += coef * r;
        th += coef * r * w_[n];
      }
      for (int q = 0; q < kOrder; ++q) {
        Fi += h * rule.w[q] * gi[q];
        Fj += h * rule.w[q] * gj[q];
      }
    }
    f_i_[k] = Fi;
    f_j_[k] = Fj;
    theta_ += th;
  }
}

cd displacement_integral(const GateDrive& drive, int mode, int ion) {
  const DriveIntegrals I(drive);
  if (mode < 0 || mode >= static_cast<int>(I.delta().size())) throw RangeError("mode index out of range");
  return ion == 0 ? 0.5 * I.eta_i()[mode] * I.force_i()[mode] : 0.5 * I.eta_j()[mode] * I.force_j()[mode];
}

double entangling_angle(const GateDrive& drive) { return DriveIntegrals(drive).theta(); }

GateChannel gate_channel(const GateDrive& drive, int repetitions) {
  if (repetitions < 1) throw RangeError("repetitions must be positive");
  const DriveIntegrals I(drive);
  const pulse::Envelope env(drive.pulse);
  const auto eps = residual_phase(drive, env);
  const int nk = static_cast<int>(I.delta().size());
  const double tau = drive.pulse.duration;

  // accumulated displacement and angle over the sequence
  std::vector<cd> ai(nk), aj(nk);
  double theta = repetitions * I.theta();
  for (int k = 0; k < nk; ++k) {
    const cd Fi = I.force_i()[k], Fj = I.force_j()[k];
    cd si = 0.0, sj = 0.0;  // running sums over earlier gates
    double cross = 0.0;
    for (int m = 0; m < repetitions; ++m) {
      const cd ph = std::polar(1.0, I.delta()[k] * tau * m);
      const cd fi = ph * Fi, fj = ph * Fj;
      cross += std::imag(fi * std::conj(sj)) + std::imag(fj * std::conj(si));
      si += fi;
      sj += fj;
    }
    theta += -0.5 * I.eta_i()[k] * I.eta_j()[k] * cross;
    ai[k] = 0.5 * I.eta_i()[k] * si;
    aj[k] = 0.5 * I.eta_j()[k] * sj;
  }

  GateChannel ch;
  ch.chi = chi_matrix(ai, aj, drive.nbar);
  if (std::abs(eps[0]) < 1e-14 && std::abs(eps[1]) < 1e-14) {
    ch.unitary = ms_unitary(theta);
    return ch;
  }
  // residual phase present: spin-only propagator in the doubly rotated frame
  const double E = env.total_energy();
  Eigen::Matrix4cd u = Eigen::Matrix4cd::Identity();
  const auto& t = I.nodes();
  for (std::size_t n = 0; n < t.size(); ++n) {
    const double w = I.weights()[n];
    const double e2 = I.envelope()[n] * I.envelope()[n] / E;
    u = xx_z_step(I.theta_rate()[n] * w, eps[0] * e2 * w, eps[1] * e2 * w) * u;
  }
  Eigen::Matrix4cd total = Eigen::Matrix4cd::Identity();
  for (int m = 0; m < repetitions; ++m) total = u * total;
  ch.unitary = total;
  return ch;
}

GateOutcome simulate_sequence_analytic(const GateDrive& drive, int repetitions) {
  const DriveIntegrals I(drive);
  const pulse::Envelope env(drive.pulse);
  const auto ch = gate_channel(drive, repetitions);
  GateOutcome o;
  o.rho = ch.apply(density_00());
  o.populations = populations(o.rho);
  o.parity_amplitude = parity_amplitude(o.rho);
  const auto eps = residual_phase(drive, env);
  o.ls_phase = {eps[0] * repetitions, eps[1] * repetitions};
  // effective angle from the coherence ratio of the ideal-form state
  const cd r = ch.unitary(3, 0) / ch.unitary(0, 0);
  o.theta = std::abs(ch.unitary(0, 0)) > 1e-12 ? 2.0 * std::atan(-std::imag(r)) : I.theta() * repetitions;
  if (std::abs(eps[0]) < 1e-14 && std::abs(eps[1]) < 1e-14) {
    // exact angle including cross terms lives in the unitary; recover it from the phase
    o.theta = 2.0 * std::atan2(-std::imag(ch.unitary(3, 0)), std::real(ch.unitary(0, 0)));
  }
  const int nk = static_cast<int>(I.delta().size());
  o.residual_alpha.resize(nk);
  for (int k = 0; k < nk; ++k) {
    cd s = 0.0;
    for (int m = 0; m < repetitions; ++m) s += std::polar(1.0, I.delta()[k] * drive.pulse.duration * m);
    o.residual_alpha[k] = 0.5 * (I.eta_i()[k] * I.force_i()[k] + I.eta_j()[k] * I.force_j()[k]) * s;
  }
  return o;
}

GateOutcome simulate_gate_analytic(const GateDrive& drive) { return simulate_sequence_analytic(drive, 1); }

RobustnessCurve frequency_robustness(const GateDrive& drive, const std::vector<double>& shifts) {
  RobustnessCurve c;
  c.shifts = shifts;
  const double th0 = entangling_angle(drive);
  for (double s : shifts) {
    GateDrive d = drive;
    d.mode_shift += s;
    const double th = entangling_angle(d);
    c.theta.push_back(th);
    c.max_relative_deviation = std::max(c.max_relative_deviation, std::abs(th - th0) / std::abs(th0));
  }
  GateDrive up = drive, dn = drive;
  const double ds = c::two_pi * 100.0;
  up.mode_shift += ds;
  dn.mode_shift -= ds;
  c.relative_slope_per_khz = (entangling_angle(up) - entangling_angle(dn)) / (2 * ds) * c::two_pi * 1e3 / th0;
  return c;
}

Eigen::Matrix4cd ms_unitary(double theta, double phase) {
  // exp(-i theta/2 sigma_phi sigma_phi)
  Eigen::Matrix2cd s;
  s << 0, std::polar(1.0, -phase), std::polar(1.0, phase), 0;
  Eigen::Matrix4cd ss;
  for (int a = 0; a < 2; ++a)
    for (int b = 0; b < 2; ++b)
      for (int c2 = 0; c2 < 2; ++c2)
        for (int d = 0; d < 2; ++d) ss(2 * a + b, 2 * c2 + d) = s(a, c2) * s(b, d);
  return std::cos(theta / 2) * Eigen::Matrix4cd::Identity() - cd(0, std::sin(theta / 2)) * ss;
}

Eigen::Matrix4cd density_00() {
  Eigen::Matrix4cd r = Eigen::Matrix4cd::Zero();
  r(0, 0) = 1.0;
  return r;
}

std::array<double, 4> populations(const Eigen::Matrix4cd& rho) {
  return {rho(0, 0).real(), rho(1, 1).real(), rho(2, 2).real(), rho(3, 3).real()};
}

double parity_amplitude(const Eigen::Matrix4cd& rho) { return 2.0 * std::abs(rho(0, 3)); }

double parity_even_after_analysis(const Eigen::Matrix4cd& rho, double phi) {
  // R(pi/2, phi) = exp(-i pi/4 sigma_phi)
  Eigen::Matrix2cd r;
  const double h = std::sqrt(0.5);
  r << h, cd(0, -h) * std::polar(1.0, -phi), cd(0, -h) * std::polar(1.0, phi), h;
  Eigen::Matrix4cd rr;
  for (int a = 0; a < 2; ++a)
    for (int b = 0; b < 2; ++b)
      for (int c2 = 0; c2 < 2; ++c2)
        for (int d = 0; d < 2; ++d) rr(2 * a + b, 2 * c2 + d) = r(a, c2) * r(b, d);
  const Eigen::Matrix4cd out = rr * rho * rr.adjoint();
  return out(0, 0).real() + out(3, 3).real();
}

double state_fidelity(const Eigen::Matrix4cd& rho, const Eigen::Vector4cd& target) {
  return std::real(target.dot(rho * target));
}

Eigen::Vector4cd ms_target_state(double theta) {
  Eigen::Vector4cd v = Eigen::Vector4cd::Zero();
  v(0) = std::cos(theta / 2);
  v(3) = cd(0, -std::sin(theta / 2));
  return v;
}

GateDrive make_drive(const std::vector<modes::ModeSpectrum>& spectra, const modes::GatePairPlan& plan,
                     double duration, double rabi_i, double rabi_j) {
  GateDrive d;
  d.pulse = pulse::PulseProgram::with_duration(duration);
  d.pulse.detuning = plan.drive_offset;
  d.pulse.pair = {plan.index_i, plan.index_j};
  d.modes = spectra;
  d.pair = {plan.index_i, plan.index_j};
  d.rabi_peak_i = rabi_i;
  d.rabi_peak_j = rabi_j;
  return d;
}

nlohmann::json to_json(const GateOutcome& o) {
  nlohmann::json alpha = nlohmann::json::array();
  for (const auto& a : o.residual_alpha) alpha.push_back({a.real(), a.imag()});
  return {{"theta_rad", o.theta},
          {"residual_alpha", alpha},
          {"ls_phase_rad", o.ls_phase},
          {"populations", o.populations},
          {"parity_amplitude", o.parity_amplitude}};
}

}  // namespace msgate::dynamics

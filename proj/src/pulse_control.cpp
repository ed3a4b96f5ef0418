#include "msgate/pulse_control.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "msgate/constants.hpp"
#include "msgate/errors.hpp"

namespace msgate::pulse {

namespace c = msgate::constants;

void AomModel::validate() const {
  if (!(a_sat > 0.0) || !(Xi > 0.0)) throw RangeError("AomModel: a_sat and Xi must be positive");
}

double aom_response(const AomModel& m, double a) {
  m.validate();
  if (a < 0.0) throw RangeError("aom_response: negative amplitude");
  if (a > m.a_sat * (1.0 + 1e-12)) {
    std::ostringstream msg;
    msg << "aom_response: amplitude " << a << " beyond saturation a_sat=" << m.a_sat;
    throw RangeError(msg.str());
  }
  return m.Xi * std::sin(0.5 * c::pi * std::min(a, m.a_sat) / m.a_sat);
}

double aom_inverse(const AomModel& m, double omega) {
  m.validate();
  if (omega < 0.0) throw RangeError("aom_inverse: negative Rabi rate");
  if (omega > m.Xi * (1.0 + 1e-12)) {
    std::ostringstream msg;
    msg << "aom_inverse: requested rate " << omega / c::two_pi << " Hz exceeds Xi "
        << m.Xi / c::two_pi << " Hz (unreachable)";
    throw RangeError(msg.str());
  }
  return 2.0 * m.a_sat / c::pi * std::asin(std::min(1.0, omega / m.Xi));
}

PulseProgram PulseProgram::with_duration(double tau, int knots) {
  PulseProgram p;
  p.duration = tau;
  p.envelope_sigma = 0.133 * tau;
  p.knots = knots;
  return p;
}

void PulseProgram::validate() const {
  if (!(duration > 0.0)) throw RangeError("PulseProgram: duration must be positive");
  if (knots < 4) throw RangeError("PulseProgram: at least 4 knots");
  if (std::abs(envelope_sigma - 0.133 * duration) > 1e-9 * duration)
    throw RangeError("PulseProgram: envelope_sigma must be 0.133 duration");
  if (amp_global_scale < 0.0) throw RangeError("PulseProgram: negative global amplitude");
}

namespace {

double gauss(double t, double tau, double sigma) {
  const double z = (t - 0.5 * tau) / sigma;
  return std::exp(-0.5 * z * z);
}

std::vector<double> knot_values(double tau, double sigma, int knots) {
  std::vector<double> v(knots);
  const double h = tau / (knots - 1);
  for (int k = 0; k < knots; ++k) v[k] = gauss(k * h, tau, sigma);
  return v;
}

double gauss_slope(double t, double tau, double sigma) {
  return -(t - 0.5 * tau) / (sigma * sigma) * gauss(t, tau, sigma);
}

// 4-point Gauss-Legendre on [0,1]; exact for the degree-6 square of a cubic piece
constexpr double gl_x[4] = {0.0694318442029737, 0.3300094782075719, 0.6699905217924281, 0.9305681557970263};
constexpr double gl_w[4] = {0.1739274225687269, 0.3260725774312731, 0.3260725774312731, 0.1739274225687269};

}  // namespace

Envelope::Envelope(const PulseProgram& p)
    : tau_(p.duration),
      sigma_(p.envelope_sigma),
      h_(p.duration / (p.knots - 1)),
      knots_(p.knots),
      spline_([&] {
        auto v = knot_values(p.duration, p.envelope_sigma, p.knots);
        return boost::math::interpolators::cardinal_cubic_b_spline<double>(
            v.begin(), v.end(), 0.0, p.duration / (p.knots - 1), gauss_slope(0.0, p.duration, p.envelope_sigma),
            gauss_slope(p.duration, p.duration, p.envelope_sigma));
      }()) {
  p.validate();
  cumulative_.assign(knots_, 0.0);
  for (int s = 0; s < knots_ - 1; ++s) cumulative_[s + 1] = cumulative_[s] + segment_energy(s, (s + 1) * h_);
}

double Envelope::operator()(double t) const {
  if (t <= 0.0) return spline_(0.0);
  if (t >= tau_) return spline_(tau_);
  return spline_(t);
}

double Envelope::exact(double t) const { return gauss(t, tau_, sigma_); }

double Envelope::segment_energy(int seg, double t_end) const {
  const double a = seg * h_;
  const double len = t_end - a;
  if (len <= 0.0) return 0.0;
  double acc = 0.0;
  for (int q = 0; q < 4; ++q) {
    const double v = spline_(a + gl_x[q] * len);
    acc += gl_w[q] * v * v;
  }
  return acc * len;
}

double Envelope::energy(double t) const {
  if (t <= 0.0) return 0.0;
  if (t >= tau_) return cumulative_.back();
  const int seg = std::min(static_cast<int>(t / h_), knots_ - 2);
  return cumulative_[seg] + segment_energy(seg, t);
}

double gaussian_envelope(const PulseProgram& p, double t) {
  if (t < 0.0 || t > p.duration) throw RangeError("gaussian_envelope: t outside [0, tau]");
  return gauss(t, p.duration, p.envelope_sigma);
}

double erf_frame_profile(const Envelope& env, double phi_total, double t) {
  if (t <= 0.0) return 0.0;
  if (t >= env.duration()) return phi_total;
  return phi_total * env.energy(t) / env.total_energy();
}

double erf_frame_profile(const PulseProgram& p, double t, int ion) {
  if (t < 0.0 || t > p.duration) throw RangeError("erf_frame_profile: t outside [0, tau]");
  return erf_frame_profile(Envelope(p), p.frame_rotation_total.at(ion), t);
}

double ideal_energy_fraction(double s) {
  // int_0^1 exp(-(u-1/2)^2/s^2) du
  return s * std::sqrt(c::pi) * std::erf(0.5 / s);
}

double theta_to_global_scale(const GlobalScaleCalibration& cal, double theta_target) {
  if (theta_target < 0.0) throw RangeError("theta_to_global_scale: negative target");
  if (theta_target > cal.theta_cal * (1.0 + 1e-12))
    throw RangeError("theta_to_global_scale: target exceeds the calibrated angle");
  if (theta_target == 0.0) return 0.0;
  const double omega_cal = aom_response(cal.global, cal.amp_cal);
  return aom_inverse(cal.global, omega_cal * std::sqrt(theta_target / cal.theta_cal));
}

nlohmann::json to_json(const AomModel& m) { return {{"a_sat", m.a_sat}, {"Xi_hz", m.Xi / c::two_pi}}; }

AomModel aom_from_json(const nlohmann::json& j) {
  AomModel m;
  m.a_sat = j.at("a_sat").get<double>();
  m.Xi = c::two_pi * j.at("Xi_hz").get<double>();
  return m;
}

}  // namespace msgate::pulse

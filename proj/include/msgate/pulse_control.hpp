#pragma once

#include <array>
#include <utility>
#include <vector>

#include <boost/math/interpolators/cardinal_cubic_b_spline.hpp>
#include <json.hpp>

namespace msgate::pulse {

struct AomModel {
  double a_sat = 1.0;
  double Xi = 1.0;  // rad/s
  void validate() const;
};

double aom_response(const AomModel& m, double a);
double aom_inverse(const AomModel& m, double omega);

struct PulseProgram {
  double duration = 250e-6;
  double envelope_sigma = 0.133 * 250e-6;
  int knots = 64;
  double amp_red = 0.0;
  double amp_blue = 0.0;
  double amp_global_scale = 1.0;
  std::array<double, 2> frame_rotation_total{0.0, 0.0};  // phi_f(tau) per ion of the pair
  double detuning = 0.0;  // tone offset from the carrier, rad/s
  std::pair<int, int> pair{0, 1};

  static PulseProgram with_duration(double tau, int knots = 64);
  void validate() const;
};

// Gaussian amplitude envelope sampled on uniform knots and interpolated by a clamped
// cubic spline. Also holds the exact running integral of envelope^2.
class Envelope {
 public:
  explicit Envelope(const PulseProgram& p);
  double operator()(double t) const;
  double exact(double t) const;
  // E(t) = int_0^t envelope^2
  double energy(double t) const;
  double total_energy() const { return cumulative_.back(); }
  double duration() const { return tau_; }
  int segments() const { return knots_ - 1; }
  double knot_spacing() const { return h_; }

 private:
  double tau_, sigma_, h_;
  int knots_;
  boost::math::interpolators::cardinal_cubic_b_spline<double> spline_;
  std::vector<double> cumulative_;
  double segment_energy(int seg, double t_end) const;
};

// exact Gaussian; Envelope holds the programmed spline
double gaussian_envelope(const PulseProgram& p, double t);
double erf_frame_profile(const PulseProgram& p, double t, int ion = 0);
double erf_frame_profile(const Envelope& env, double phi_total, double t);

// closed form of int_0^tau g^2 dt / tau for the ideal Gaussian
double ideal_energy_fraction(double sigma_over_tau);

struct GlobalScaleCalibration {
  AomModel global;
  double amp_cal = 0.0;    // global software amplitude at the calibrated point
  double theta_cal = 0.0;  // angle reached at amp_cal
};

// theta is bilinear in the two ions' Rabi rates, each proportional to the global
// beam Rabi rate, so theta goes as Omega_global^2
double theta_to_global_scale(const GlobalScaleCalibration& cal, double theta_target);

nlohmann::json to_json(const AomModel& m);
AomModel aom_from_json(const nlohmann::json& j);

}  // namespace msgate::pulse

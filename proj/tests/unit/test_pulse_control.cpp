#include <doctest.h>

#include <cmath>
#include <random>

#include "msgate/chain_modes.hpp"
#include "msgate/constants.hpp"
#include "msgate/errors.hpp"
#include "msgate/gate_dynamics.hpp"
#include "msgate/pulse_control.hpp"

using namespace msgate;
using namespace msgate::pulse;
namespace c = msgate::constants;

TEST_CASE("aom response and inverse") {
  AomModel m{188.5, c::two_pi * 73.6e3};
  CHECK(aom_response(m, 0.0) == 0.0);
  CHECK(aom_response(m, m.a_sat) == doctest::Approx(m.Xi).epsilon(1e-15));
  CHECK(aom_response(m, m.a_sat / 3.0) == doctest::Approx(m.Xi / 2.0).epsilon(1e-14));
  CHECK(aom_inverse(m, 0.0) == 0.0);
  CHECK(aom_inverse(m, m.Xi) == doctest::Approx(m.a_sat).epsilon(1e-15));

  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double worst = 0.0;
  for (int k = 0; k < 1000; ++k) {
    const double om = m.Xi * u(rng);
    worst = std::max(worst, std::abs(aom_response(m, aom_inverse(m, om)) - om) / m.Xi);
  }
  CHECK(worst < 1e-12);

  CHECK_THROWS_AS(aom_inverse(m, 1.01 * m.Xi), RangeError);
  CHECK_THROWS_AS(aom_response(m, -1.0), RangeError);
  CHECK_THROWS_AS(aom_response(AomModel{0.0, 1.0}, 1.0), RangeError);
}

TEST_CASE("gaussian envelope") {
  auto p = PulseProgram::with_duration(250e-6);
  CHECK(gaussian_envelope(p, 125e-6) == 1.0);
  for (double x : {1e-6, 30e-6, 100e-6}) CHECK(gaussian_envelope(p, 125e-6 - x) == doctest::Approx(gaussian_envelope(p, 125e-6 + x)).epsilon(1e-14));

  Envelope env(p);
  double worst = 0.0;
  for (int i = 0; i <= 20000; ++i) {
    const double t = p.duration * i / 20000.0;
    worst = std::max(worst, std::abs(env(t) - env.exact(t)));
  }
  CHECK(worst < 1e-4);

  // E(tau)/tau: spline energy, fine trapezoid on the exact Gaussian, closed form
  const int n = 200000;
  double trap = 0.0;
  for (int i = 0; i <= n; ++i) {
    const double g = env.exact(p.duration * i / n);
    trap += (i == 0 || i == n ? 0.5 : 1.0) * g * g;
  }
  trap /= n;
  CHECK(ideal_energy_fraction(0.133) == doctest::Approx(trap).epsilon(1e-9));
  CHECK(env.total_energy() / p.duration == doctest::Approx(trap).epsilon(1e-5));

  auto bad = p;
  bad.envelope_sigma = 0.2 * p.duration;
  CHECK_THROWS_AS(bad.validate(), RangeError);
}

TEST_CASE("erf frame profile") {
  auto p = PulseProgram::with_duration(250e-6);
  p.frame_rotation_total = {-0.3, 0.7};
  CHECK(erf_frame_profile(p, 0.0) == 0.0);
  CHECK(erf_frame_profile(p, p.duration) == -0.3);
  CHECK(erf_frame_profile(p, p.duration, 1) == 0.7);
  CHECK(erf_frame_profile(p, 0.5 * p.duration, 1) == doctest::Approx(0.35).epsilon(1e-9));
  double prev = 0.0;
  for (int i = 1; i <= 500; ++i) {
    const double v = erf_frame_profile(p, p.duration * i / 500.0, 1);
    CHECK(v >= prev);
    prev = v;
  }
  // erf shape of the ideal squared Gaussian
  Envelope env(p);
  const double s = p.envelope_sigma;
  auto ideal = [&](double t) {
    const double a = std::erf((t - 0.5 * p.duration) / s);
    const double b = std::erf(0.5 * p.duration / s);
    return 0.5 * (a + b) / b;
  };
  for (double f : {0.1, 0.3, 0.7})
    CHECK(erf_frame_profile(env, 1.0, f * p.duration) == doctest::Approx(ideal(f * p.duration)).epsilon(1e-4));
  CHECK_THROWS_AS(erf_frame_profile(p, 2 * p.duration), RangeError);
}

TEST_CASE("theta to global scale") {
  GlobalScaleCalibration cal;
  cal.global = AomModel{188.5, c::two_pi * 73.6e3};
  cal.amp_cal = 170.0;  // near saturation
  cal.theta_cal = c::pi / 2;
  CHECK(theta_to_global_scale(cal, cal.theta_cal) == doctest::Approx(cal.amp_cal).epsilon(1e-12));
  CHECK(theta_to_global_scale(cal, 0.0) == 0.0);
  const double a8 = theta_to_global_scale(cal, c::pi / 8);
  CHECK(a8 > cal.amp_cal / 4.0);
  CHECK_THROWS_AS(theta_to_global_scale(cal, c::pi), RangeError);

  // brute-force oracle: bisect the global amplitude on the gate simulator, where both
  // ion Rabi rates follow the global AOM response
  auto tc = modes::TrapConfig::defaults(2);
  auto mf = modes::radial_manifolds(tc);
  auto plan = modes::select_mode_pair(mf[0], {0, 1});
  const double om_cal = aom_response(cal.global, cal.amp_cal);
  auto theta_at = [&](double amp, double rabi_cal) {
    const double r = rabi_cal * aom_response(cal.global, amp) / om_cal;
    return dynamics::entangling_angle(dynamics::make_drive({mf[0]}, plan, 250e-6, r, r));
  };
  // reference Rabi chosen so the calibrated amplitude gives pi/2
  const double r0 = c::two_pi * 120e3;
  const double rabi_cal = r0 * std::sqrt(cal.theta_cal / theta_at(cal.amp_cal, r0));
  REQUIRE(theta_at(cal.amp_cal, rabi_cal) == doctest::Approx(cal.theta_cal).epsilon(1e-10));
  double lo = 0.0, hi = cal.amp_cal;
  for (int it = 0; it < 80; ++it) {
    const double mid = 0.5 * (lo + hi);
    (theta_at(mid, rabi_cal) < c::pi / 8 ? lo : hi) = mid;
  }
  CHECK(a8 == doctest::Approx(0.5 * (lo + hi)).epsilon(1e-8));
}

TEST_CASE("aom json") {
  AomModel m{160.0, c::two_pi * 35e3};
  auto b = aom_from_json(to_json(m));
  CHECK(b.a_sat == m.a_sat);
  CHECK(b.Xi == doctest::Approx(m.Xi).epsilon(1e-15));
}

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "msgate/constants.hpp"
#include "msgate/errors.hpp"
#include "msgate/fitkit.hpp"
#include "msgate/optimize.hpp"

using namespace msgate;
using namespace msgate::fit;
namespace c = msgate::constants;

namespace {

// expected-value data: huge trial counts stand in for noiseless probabilities
constexpr long long kBig = 1000000000000LL;

ShotData exact_amp_scan(double a_sat, double Xi, double xi, double t, double a_max = 200.0) {
  ShotData d;
  for (int i = 0; i < 41; ++i) {
    const double a = a_max * i / 40;
    d.push(a, std::llround(amplitude_scan_model(a, t, a_sat, Xi, xi) * kBig), kBig);
  }
  return d;
}

ShotData gauss_data(double center, double sigma, double amp, double off, double x0, double dx, int n) {
  ShotData d;
  for (int i = 0; i < n; ++i) {
    const double x = x0 + dx * i;
    d.push(x, std::llround(gaussian_model(x, center, sigma, amp, off) * kBig), kBig);
  }
  return d;
}

}  // namespace

TEST_CASE("levenberg-marquardt on a known problem") {
  // exponential decay y = 2 exp(-0.7 x) + 0.1
  std::vector<double> xs, ys;
  for (int i = 0; i < 20; ++i) {
    xs.push_back(0.3 * i);
    ys.push_back(2.0 * std::exp(-0.7 * xs.back()) + 0.1);
  }
  auto f = [&](const Eigen::VectorXd& p) {
    Eigen::VectorXd r(xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i) r[i] = p[0] * std::exp(-p[1] * xs[i]) + p[2] - ys[i];
    return r;
  };
  auto r = opt::levenberg_marquardt(f, Eigen::Vector3d(1.0, 0.2, 0.0), Eigen::Vector3d(1.0, 1.0, 1.0));
  CHECK(r.converged);
  CHECK(r.x[0] == doctest::Approx(2.0).epsilon(1e-9));
  CHECK(r.x[1] == doctest::Approx(0.7).epsilon(1e-9));

  auto nm = opt::nelder_mead([](const Eigen::VectorXd& p) { return std::pow(p[0] - 1, 2) + 10 * std::pow(p[1] + 2, 2); },
                             Eigen::Vector2d(0, 0), Eigen::Vector2d(0.5, 0.5));
  CHECK(nm.x[0] == doctest::Approx(1.0).epsilon(1e-5));
  CHECK(nm.x[1] == doctest::Approx(-2.0).epsilon(1e-5));
}

TEST_CASE("amplitude scan fit") {
  const double Xi = c::two_pi * 73.6e3;
  auto r = fit_amplitude_scan(exact_amp_scan(188.5, Xi, 30.0, 50e-6), 50e-6);
  CHECK(r.converged);
  CHECK(r.get("a_sat") == doctest::Approx(188.5).epsilon(1e-6));
  CHECK(r.get("Xi") == doctest::Approx(Xi).epsilon(1e-6));

  // only the monotone region a <= a_sat: curvature still fixes a_sat
  auto m = fit_amplitude_scan(exact_amp_scan(188.5, Xi, 30.0, 50e-6, 185.0), 50e-6);
  CHECK(m.get("a_sat") == doctest::Approx(188.5).epsilon(1e-4));

  // fixed point: regenerate from fitted parameters and refit
  auto again = fit_amplitude_scan(exact_amp_scan(r.get("a_sat"), r.get("Xi"), r.get("xi"), 50e-6), 50e-6);
  CHECK(again.get("a_sat") == doctest::Approx(r.get("a_sat")).epsilon(1e-8));

  // determinism
  std::mt19937_64 rng(4);
  ShotData noisy;
  for (int i = 0; i < 41; ++i) {
    const double a = 5.0 * i;
    std::binomial_distribution<long long> b(200, amplitude_scan_model(a, 50e-6, 188.5, Xi, 30.0));
    noisy.push(a, b(rng), 200);
  }
  auto f1 = fit_amplitude_scan(noisy, 50e-6);
  auto f2 = fit_amplitude_scan(noisy, 50e-6);
  CHECK(f1.values == f2.values);
  CHECK(f1.covariance == f2.covariance);
  CHECK(f1.get("a_sat") == doctest::Approx(188.5).epsilon(0.05));

  ShotData flat;
  for (int i = 0; i < 41; ++i) flat.push(5.0 * i, 100, 200);
  CHECK_FALSE(fit_amplitude_scan(flat, 50e-6).converged);
}

TEST_CASE("parity decay models and fit") {
  for (double M : {1.0, 10.0, 100.0}) CHECK(parity_odd_model(M, 1.0, 1e300) == doctest::Approx(0.0));
  for (double M : {0.0, 3.0, 50.0}) {
    const double p11 = population_11_model(M, 0.97, 80, 13, c::pi / 2);
    const double p00 = population_00_model(M, 0.97, 80, 13, c::pi / 2);
    CHECK(p11 >= 0.0);
    CHECK(p00 + p11 + parity_odd_model(M, 0.97, 80) == doctest::Approx(1.0).epsilon(1e-12));
  }
  ShotData od, p11;
  for (int M = 1; M <= 200; ++M) {
    od.push(M, std::llround(parity_odd_model(M, 0.98, 83) * kBig), kBig);
    p11.push(M, std::llround(population_11_model(M, 0.98, 83, 12.9, c::pi / 2) * kBig), kBig);
  }
  auto r = fit_parity_decay(od, p11);
  CHECK(r.get("M_sigma_odd") == doctest::Approx(83).epsilon(1e-4));
  CHECK(r.get("M_sigma_even") == doctest::Approx(12.9).epsilon(1e-4));
  CHECK(r.get("theta") == doctest::Approx(c::pi / 2).epsilon(1e-4));
}

TEST_CASE("gaussian peak") {
  auto d = gauss_data(13.3, 4.0, 0.6, 0.1, 0.0, 1.0, 31);
  auto r = fit_gaussian_peak(d);
  CHECK(r.converged);
  CHECK(r.get("center") == doctest::Approx(13.3).epsilon(1e-8));

  // dense grid: center equals the argmax within half a step
  auto dense = gauss_data(7.23, 2.0, 0.5, 0.05, 0.0, 0.05, 301);
  std::size_t best = 0;
  for (std::size_t i = 0; i < dense.size(); ++i)
    if (dense.p(i) > dense.p(best)) best = i;
  CHECK(std::abs(fit_gaussian_peak(dense).get("center") - dense.x[best]) <= 0.025 + 1e-12);

  std::mt19937_64 rng(2);
  ShotData flat;
  for (int i = 0; i < 31; ++i) {
    std::binomial_distribution<long long> b(100, 0.3);
    flat.push(i, b(rng), 100);
  }
  CHECK_FALSE(fit_gaussian_peak(flat).converged);

  ShotData tiny;
  tiny.push(0, 1, 2);
  tiny.push(1, 1, 2);
  CHECK_THROWS(fit_gaussian_peak(tiny));
}

TEST_CASE("upper-half MLE") {
  auto d = gauss_data(3.1, 12.0, 0.9, 0.0, -40.0, 2.0, 41);
  auto m = mle_upper_half_gaussian(d);
  auto g = fit_gaussian_peak(d);
  CHECK(m.get("center") == doctest::Approx(g.get("center")).epsilon(1e-6));
  CHECK(m.get("center") == doctest::Approx(3.1).epsilon(1e-6));
  CHECK(m.get("amplitude") <= 1.0);
  CHECK(m.ci95.at("center").first < 3.1);
  CHECK(m.ci95.at("center").second > 3.1);

  // saturated peak: amplitude still capped at 1
  auto s = gauss_data(0.0, 5.0, 1.0, 0.0, -20.0, 1.0, 41);
  CHECK(mle_upper_half_gaussian(s).get("amplitude") <= 1.0);

  auto ma = moving_average3({1, 2, 3, 10});
  CHECK(ma[1] == doctest::Approx(2.0));
  CHECK(ma.size() == 4);
}

TEST_CASE("wilson interval") {
  auto z = wilson_interval(0, 20);
  CHECK(z.first == 0.0);
  auto n = wilson_interval(20, 20);
  CHECK(n.second == doctest::Approx(1.0).epsilon(1e-15));
  // direct formula and the quadratic-root form
  const double p = 0.5, N = 100, zz = 1.96;
  const double center = (p + zz * zz / (2 * N)) / (1 + zz * zz / N);
  const double half = zz / (1 + zz * zz / N) * std::sqrt(p * (1 - p) / N + zz * zz / (4 * N * N));
  auto w = wilson_interval(50, 100, 1.96);
  CHECK(w.first == doctest::Approx(center - half).epsilon(1e-14));
  CHECK(w.second == doctest::Approx(center + half).epsilon(1e-14));
  // roots of (p - q)^2 = z^2 q (1 - q) / N
  const double A = 1 + zz * zz / N, B = -(2 * p + zz * zz / N), C = p * p;
  const double disc = std::sqrt(B * B - 4 * A * C);
  CHECK(w.first == doctest::Approx((-B - disc) / (2 * A)).epsilon(1e-12));
  CHECK(w.second == doctest::Approx((-B + disc) / (2 * A)).epsilon(1e-12));
  CHECK(w.first == doctest::Approx(0.403830).epsilon(1e-5));
}

TEST_CASE("fidelity estimate") {
  CHECK(fidelity_estimate(0.5, 0.5, 1.0, c::pi / 2) == doctest::Approx(1.0));
  CHECK(fidelity_estimate(1.0, 0.0, 0.0, 0.0) == doctest::Approx(1.0));
  const double th = c::pi / 3;
  double prev = -1.0;
  for (double a : {0.0, 0.3, 0.6, 0.9}) {
    const double f = fidelity_estimate(0.7, 0.2, a, th);
    CHECK(f >= prev);
    prev = f;
  }
  CHECK(fidelity_estimate(0.3, 0.5, 0.8, th) >= fidelity_estimate(0.2, 0.5, 0.8, th));
  CHECK(fidelity_estimate(0.3, 0.6, 0.8, th) >= fidelity_estimate(0.3, 0.5, 0.8, th));
  auto fi = fidelity_with_errors(0.49, {0.01, 0.01}, 0.48, {0.01, 0.02}, 0.95, {0.02, 0.01}, c::pi / 2);
  CHECK(fi.value == doctest::Approx(fidelity_estimate(0.49, 0.48, 0.95, c::pi / 2)));
  CHECK(fi.err_lo > 0.0);
  CHECK(fi.err_hi > 0.0);
}

TEST_CASE("linear crossing") {
  ShotData a, b;
  for (int i = 0; i < 11; ++i) {
    const double x = 0.95 + 0.01 * i;
    a.push(x, std::llround((0.5 - 3.0 * (x - 1.0)) * kBig), kBig);
    b.push(x, std::llround((0.5 + 3.0 * (x - 1.0)) * kBig), kBig);
  }
  CHECK(linear_crossing(a, b).get("x0") == doctest::Approx(1.0).epsilon(1e-9));
  CHECK_THROWS_AS(linear_crossing(a, a), NoRootError);
}

TEST_CASE("parity oscillation contrast") {
  ShotData d;
  for (int k = 0; k < 16; ++k) {
    const double ph = c::two_pi * k / 16;
    d.push(ph, std::llround((0.5 + 0.45 * std::cos(2 * ph + 0.3)) * kBig), kBig);
  }
  auto r = fit_parity_oscillation(d);
  CHECK(r.extra.at("contrast") == doctest::Approx(0.9).epsilon(1e-6));
}

TEST_CASE("shot data io") {
  ShotData d;
  d.push(0.5, 3, 10);
  d.push(1.5, 7, 10);
  d.outcome_label = "P11";
  auto back = shot_data_from_json(to_json(d));
  CHECK(back.x == d.x);
  CHECK(back.successes == d.successes);
  const auto path = (std::filesystem::temp_directory_path() / "msgate_shot.csv").string();
  write_shot_csv(d, path, "phi_rad");
  auto csv = read_shot_csv(path);
  CHECK(csv.x == d.x);
  CHECK(csv.trials == d.trials);
  std::filesystem::remove(path);

  ShotData bad;
  bad.x = {1.0};
  bad.successes = {5};
  bad.trials = {3};
  CHECK_THROWS(bad.validate());
  CHECK(d.sigma(0) > 0.0);
  ShotData zero;
  zero.push(0, 0, 10);
  CHECK(zero.sigma(0) > 0.0);
}

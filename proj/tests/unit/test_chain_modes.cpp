#include <doctest.h>

#include <cmath>

#include "msgate/chain_modes.hpp"
#include "msgate/constants.hpp"
#include "msgate/errors.hpp"

using namespace msgate;
using namespace msgate::modes;
namespace c = msgate::constants;

TEST_CASE("equilibrium positions") {
  CHECK(equilibrium_positions_scaled(1) == std::vector<double>{0.0});

  auto p3 = equilibrium_positions_scaled(3);
  CHECK(p3[1] == 0.0);
  CHECK(p3[0] == doctest::Approx(-p3[2]).epsilon(1e-14));

  // two ions: closed-form spacing
  auto t = TrapConfig::defaults(2);
  auto p = equilibrium_positions(t);
  const double k = c::elementary_charge * c::elementary_charge / (4.0 * c::pi * c::epsilon0);
  const double d = std::cbrt(2.0) * std::cbrt(k / (t.ion_mass * t.axial_freq * t.axial_freq));
  CHECK(std::abs((p[1] - p[0]) / d - 1.0) < 1e-12);

  for (int n = 2; n <= 8; ++n) {
    auto q = equilibrium_positions_scaled(n);
    for (int i = 0; i < n; ++i) CHECK(q[i] == doctest::Approx(-q[n - 1 - i]).epsilon(1e-11));
  }
}

TEST_CASE("single ion spectrum") {
  auto t = TrapConfig::defaults(1);
  auto m = radial_modes(t, equilibrium_positions(t));
  REQUIRE(m.ion_count() == 1);
  CHECK(m.frequencies(0) == doctest::Approx(t.radial_com_freqs[0]).epsilon(1e-14));
  CHECK(std::abs(m.participation(0, 0)) == doctest::Approx(1.0));
}

TEST_CASE("two-ion tilt mode") {
  auto t = TrapConfig::defaults(2);
  auto m = radial_modes(t, equilibrium_positions(t));
  const double expect = std::sqrt(t.radial_com_freqs[0] * t.radial_com_freqs[0] - t.axial_freq * t.axial_freq);
  CHECK(std::abs(m.frequencies(1) / expect - 1.0) < 1e-10);
}

// softer axial confinement keeps chains up to 8 ions linear
TrapConfig long_chain(int n) {
  auto t = TrapConfig::defaults(n);
  t.axial_freq = 0.3 * c::mhz;
  return t;
}

TEST_CASE("mode invariants for N <= 8") {
  for (int n = 1; n <= 8; ++n) {
    auto t = long_chain(n);
    auto mf = radial_manifolds(t);
    for (const auto& m : mf) {
      const Eigen::MatrixXd b = m.participation;
      CHECK((b * b.transpose() - Eigen::MatrixXd::Identity(n, n)).cwiseAbs().maxCoeff() < 1e-10);
      CHECK(std::abs(m.frequencies(0) / t.radial_com_freqs[m.manifold] - 1.0) < 1e-12);
      for (int i = 0; i < n; ++i) CHECK(std::abs(std::abs(b(0, i)) - 1.0 / std::sqrt(double(n))) < 1e-10);
      for (int k = 1; k < n; ++k) CHECK(m.frequencies(k) < m.frequencies(k - 1));
    }
  }
}

TEST_CASE("lamb-dicke scaling") {
  auto t = TrapConfig::defaults(3);
  auto a = radial_modes(t, equilibrium_positions(t));
  t.raman_delta_k *= 2.0;
  auto b = radial_modes(t, equilibrium_positions(t));
  CHECK((b.lamb_dicke - 2.0 * a.lamb_dicke).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("ion labels are center-indexed") {
  CHECK(ion_index(0, 3) == 1);
  CHECK(ion_index(-1, 3) == 0);
  CHECK(ion_label(2, 3) == 1);
  for (int n = 1; n <= 6; ++n)
    for (int i = 0; i < n; ++i) CHECK(ion_index(ion_label(i, n), n) == i);
}

TEST_CASE("two-ion plan") {
  auto t = TrapConfig::defaults(2);
  auto mf = radial_manifolds(t);
  auto plan = select_mode_pair(mf[0], {0, 1});
  CHECK(plan.balanced);
  CHECK(plan.mode_lower == 1);
  CHECK(plan.mode_upper == 0);
  // operating point of the reference two-ion gate: 52 kHz above the lower sideband
  CHECK(plan.detuning / c::khz == doctest::Approx(52.0).epsilon(0.05));
  CHECK(plan.drive_offset > mf[0].frequencies(1));
  CHECK(plan.drive_offset < mf[0].frequencies(0));
}

TEST_CASE("three-ion plans") {
  auto t = TrapConfig::defaults(3);
  auto mf = radial_manifolds(t);
  auto outer = select_mode_pair(mf[0], {ion_index(-1, 3), ion_index(1, 3)});
  CHECK(outer.balanced);
  CHECK(outer.detuning / c::khz > 20.0);
  CHECK(outer.detuning / c::khz < 80.0);
  auto center = select_mode_pair(mf[0], {ion_index(0, 3), ion_index(1, 3)});
  CHECK_FALSE(center.balanced);
}

TEST_CASE("plan objective is maximal over adjacent pairs") {
  for (int n = 2; n <= 8; ++n) {
    auto m = radial_manifolds(long_chain(n))[0];
    for (const auto& plan : all_pair_plans(m)) {
      if (!plan.balanced) continue;
      for (int k = 0; k + 1 < n; ++k)
        CHECK(pair_objective(m, plan.index_i, plan.index_j, k, k + 1) <= plan.objective * (1 + 1e-12) + 1e-300);
    }
  }
  CHECK(all_pair_plans(radial_manifolds(TrapConfig::defaults(6))[0]).size() == 15);
}

TEST_CASE("invalid configuration") {
  auto t = TrapConfig::defaults(2);
  t.axial_freq = -1.0;
  CHECK_THROWS_AS(t.validate(), ConfigError);
  auto u = TrapConfig::defaults(2);
  u.radial_com_freqs[0] = 0.5 * u.axial_freq;
  CHECK_THROWS(u.validate());
  auto s = radial_modes(TrapConfig::defaults(2), equilibrium_positions(TrapConfig::defaults(2)));
  CHECK_THROWS(select_mode_pair(s, {0, 5}));
  // past the zig-zag transition
  CHECK_THROWS(radial_manifolds(TrapConfig::defaults(8)));
}

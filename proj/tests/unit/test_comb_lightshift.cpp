#include <doctest.h>

#include <cmath>

#include "msgate/comb_lightshift.hpp"
#include "msgate/constants.hpp"
#include "msgate/errors.hpp"

using namespace msgate;
using namespace msgate::comb;
namespace c = msgate::constants;

namespace {

const CombSpec& reference() {
  static const CombSpec s = CombSpec::reference_defaults();
  return s;
}

CombSpec small_spec() { return reference(); }

}  // namespace

TEST_CASE("comb teeth") {
  const auto& s = reference();
  CHECK(comb_tooth_frequency(s, Comb::g, 0) == s.omega_g0);
  for (int j : {-300, 0, 17, 105})
    CHECK(comb_tooth_frequency(s, Comb::b, j) - comb_tooth_frequency(s, Comb::r, j) ==
          doctest::Approx(2.0 * s.delta_c).epsilon(1e-9));
  const double d = comb_tooth_frequency(s, Comb::b, 105) - comb_tooth_frequency(s, Comb::g, 0);
  CHECK((d - s.delta_c) / c::two_pi / 1e9 == doctest::Approx(12.6428).epsilon(1e-4));
  CHECK(105 * s.f_rep / 1e9 == doctest::Approx(12.613).epsilon(1e-4));

  CHECK(tooth_envelope(s, Comb::b, 0) == s.h(Comb::b));
  CHECK(tooth_envelope(s, Comb::g, 40) == tooth_envelope(s, Comb::g, -40));
  const double x = c::two_pi * 120.125e6 * 3.9e-12;
  CHECK(tooth_envelope(s, Comb::r, 105) / s.h(Comb::r) == doctest::Approx(1.0 / std::cosh(105 * x)).epsilon(1e-14));
  CHECK_THROWS_AS(tooth_envelope(s, Comb::g, s.tooth_truncation + 1), RangeError);
}

TEST_CASE("two-photon rabi") {
  auto s = small_spec();
  CHECK(two_photon_rabi(s, Comb::b, Comb::g, 105).value ==
        doctest::Approx(two_photon_rabi(s, Comb::r, Comb::g, 105).value).epsilon(1e-14));
  auto z = s;
  z.base_rabi[0] = 0.0;
  CHECK(two_photon_rabi(z, Comb::b, Comb::g, 105).value == 0.0);

  // operating point: 122.1 kHz at the harmonic offset, global twice each tone
  const auto& p = reference();
  CHECK(two_photon_rabi(p, Comb::b, Comb::g, 105).value / c::two_pi == doctest::Approx(122.1e3).epsilon(1e-9));
  CHECK(p.h(Comb::g) == doctest::Approx(2.0 * p.h(Comb::b)));

  // quadratic homogeneity
  auto d = s;
  for (double& h : d.base_rabi) h *= 1.7;
  CHECK(two_photon_rabi(d, Comb::b, Comb::g, 100).value ==
        doctest::Approx(1.7 * 1.7 * two_photon_rabi(s, Comb::b, Comb::g, 100).value).epsilon(1e-13));
}

TEST_CASE("fourth-order shifts") {
  auto s = small_spec();
  const auto t = build_tables(s);
  const double gb = fourth_order_shift(s, t, Comb::g, Comb::b) + fourth_order_shift(s, t, Comb::b, Comb::g);
  const double gr = fourth_order_shift(s, t, Comb::g, Comb::r) + fourth_order_shift(s, t, Comb::r, Comb::g);
  CHECK(gb * gr < 0.0);
  CHECK(std::abs(gb / gr) > 0.5);
  CHECK(std::abs(gb / gr) < 2.0);

  // single dominant term against |Omega^2 / 4 delta|
  auto q = scaled_to_rabi(s, c::two_pi * 125e3);
  const double om = two_photon_rabi(q, Comb::b, Comb::g, 105).value;
  const double rough = om * om / (4.0 * q.delta_c) / c::two_pi;
  CHECK(rough > 1500.0);
  CHECK(rough < 2500.0);

  CHECK(level_shift(s, Comb::g, Comb::b) == doctest::Approx(0.5 * fourth_order_shift(s, Comb::g, Comb::b)));
}

TEST_CASE("total shift properties") {
  auto s = small_spec();
  auto zero = s;
  zero.base_rabi = {0.0, 0.0, 0.0};
  CHECK(total_shift(zero).total == 0.0);

  const auto a = total_shift(s);
  auto d = s;
  for (double& h : d.base_rabi) h *= 2.0;
  CHECK(total_shift(d).total == doctest::Approx(16.0 * a.total).epsilon(1e-12));

  const auto t = build_tables(s);
  CHECK(truncation_change(s, t) < 1e-6);

  // negating delta_c swaps the (g,b) and (g,r) roles
  auto n = s;
  n.delta_c = -s.delta_c;
  const auto b = total_shift(n);
  CHECK(b.unordered(Comb::g, Comb::b) == doctest::Approx(a.unordered(Comb::g, Comb::r)).epsilon(1e-10));
  CHECK(b.unordered(Comb::g, Comb::r) == doctest::Approx(a.unordered(Comb::g, Comb::b)).epsilon(1e-10));
}

TEST_CASE("serial and parallel tables agree bitwise") {
  auto s = small_spec();
  const auto a = build_tables(s, false);
  const auto b = build_tables(s, true);
  CHECK(a.s == b.s);
  CHECK(a.s_wide == b.s_wide);
  CHECK(total_shift(s, a).total == total_shift(s, b).total);
}

TEST_CASE("balance ratio") {
  // symmetric construction: zero harmonic offset, only (b,g) and (r,g), mirrored tones,
  // and a single-photon detuning so large that every tooth carries the same weight
  auto s = small_spec();
  s.delta_single_photon = c::two_pi * 1e19;
  for (auto& row : s.pair_scalings) row.fill(0.0);
  s.pair_scalings[1][0] = 1.0;
  s.pair_scalings[2][0] = 1.0;
  s.harmonic_offset = 0;
  s.omega_qubit = c::two_pi * 30e6;
  s.delta_aom = s.omega_qubit;
  const auto sym = total_shift(s);
  CHECK(sym.get(Comb::b, Comb::g) == doctest::Approx(-sym.get(Comb::r, Comb::g)).epsilon(1e-8));
  CHECK(balance_ratio(s, c::two_pi * 122.1e3).zeta == doctest::Approx(1.0).epsilon(1e-8));

  // reference spec: root bracketed and consistent with a grid scan
  auto p = small_spec();
  auto r = balance_ratio(p, c::two_pi * 122.1e3);
  CHECK(r.zeta > 0.95);
  CHECK(r.zeta < 1.20);
  std::vector<double> grid;
  for (int i = 0; i <= 400; ++i) grid.push_back(0.9 + 0.4 * i / 400.0);
  auto scan = zeta_scan(p, c::two_pi * 122.1e3, grid);
  double best = grid[0], bv = 1e300;
  for (const auto& pt : scan)
    if (std::abs(pt.shift.total) < bv) bv = std::abs(pt.shift.total), best = pt.zeta;
  CHECK(std::abs(best - r.zeta) <= 0.5 * 0.001 + 1e-9);

  CHECK_THROWS_AS(balance_ratio(p, c::two_pi * 122.1e3, 0.5, 0.6), NoRootError);
}

TEST_CASE("comb json round trip") {
  const auto& s = reference();
  auto back = comb_from_json(to_json(s), CombSpec{});
  CHECK(back.f_rep == s.f_rep);
  CHECK(back.harmonic_offset == s.harmonic_offset);
  for (int i = 0; i < 3; ++i) CHECK(back.base_rabi[i] == doctest::Approx(s.base_rabi[i]).epsilon(1e-14));
  CHECK(back.scaling(Comb::g, Comb::g) == doctest::Approx(1.0 / 49.0));
  CHECK_THROWS_AS(comb_from_json({{"f_rep", 1.0}}, s), ConfigError);
}

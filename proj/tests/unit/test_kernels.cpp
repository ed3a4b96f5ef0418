#include <doctest.h>

#include <cmath>
#include <complex>
#include <random>
#include <vector>

#include "msgate/kernels.hpp"

using namespace msgate::kernels;
using cd = std::complex<double>;

namespace {

FockTerms random_terms(int modes, int n_max, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  FockTerms h;
  h.n_modes = modes;
  h.n_max = n_max;
  for (int i = 0; i < 2 * modes; ++i) h.coupling.push_back(u(rng));
  for (int k = 0; k < modes; ++k) h.rot.push_back(std::polar(1.0, 3.0 * u(rng)));
  h.spin_phase[0] = u(rng);
  h.spin_phase[1] = u(rng);
  h.z_coeff[0] = u(rng);
  h.z_coeff[1] = u(rng);
  return h;
}

std::vector<cd> random_state(int dim, std::mt19937_64& rng) {
  std::normal_distribution<double> n;
  std::vector<cd> v(dim);
  for (auto& x : v) x = {n(rng), n(rng)};
  return v;
}

}  // namespace

TEST_CASE("comb sums: serial reference vs parallel") {
  CombSumInput in;
  in.x = 2.94e-3;
  in.j_max = 1500;
  in.l_min = -200;
  in.l_max = 400;
  for (int j = -in.j_max; j <= in.j_max; ++j) in.weight.push_back(j % 7 == 0 ? 0.0 : 1.0 / (1.0 + 0.01 * j * j));
  const auto a = comb_sums_serial(in);
  const auto b = comb_sums_parallel(in);
  CHECK(a == b);
  // direct double loop for one entry
  double s = 0.0;
  for (int j = -in.j_max; j <= in.j_max; ++j)
    s += 1.0 / std::cosh(j * in.x) / std::cosh((j + 105) * in.x) * 0.5 * in.weight[j + in.j_max];
  CHECK(a[105 - in.l_min] == doctest::Approx(s).epsilon(1e-13));
}

TEST_CASE("fock apply: serial vs parallel, hermiticity") {
  std::mt19937_64 rng(5);
  for (int modes : {1, 2}) {
    const auto h = random_terms(modes, 6, rng);
    const int dim = fock_dimension(modes, 6);
    CHECK(dim == 4 * static_cast<int>(std::pow(7, modes)));
    const auto x = random_state(dim, rng);
    const auto y = random_state(dim, rng);
    std::vector<cd> hx(dim), hx2(dim), hy(dim);
    fock_apply_serial(h, x.data(), hx.data());
    fock_apply_parallel(h, x.data(), hx2.data());
    CHECK(hx == hx2);
    fock_apply_serial(h, y.data(), hy.data());
    cd l = 0.0, r = 0.0;
    for (int i = 0; i < dim; ++i) {
      l += std::conj(y[i]) * hx[i];
      r += std::conj(hy[i]) * x[i];
    }
    CHECK(std::abs(l - r) < 1e-10 * std::abs(l));
  }
}

TEST_CASE("fock apply: z term only") {
  FockTerms h;
  h.n_modes = 1;
  h.n_max = 3;
  h.coupling = {0.0, 0.0};
  h.rot = {1.0};
  h.z_coeff[0] = 0.3;
  h.z_coeff[1] = -0.1;
  const int dim = fock_dimension(1, 3);
  std::vector<cd> psi(dim, 0.0), out(dim);
  const int mdim = dim / 4;
  psi[1 * mdim] = 1.0;  // |01>
  fock_apply_serial(h, psi.data(), out.data());
  CHECK(out[1 * mdim].real() == doctest::Approx(0.3 + 0.1));
}

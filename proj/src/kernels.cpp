#include "msgate/kernels.hpp"

#include <cmath>

namespace msgate::kernels {

namespace {

struct SechTable {
  int offset;
  std::vector<double> v;
  double operator()(int m) const { return v[m + offset]; }
};

SechTable make_sech(const CombSumInput& in) {
  const int lo = -in.j_max + std::min(in.l_min, 0);
  const int hi = in.j_max + std::max(in.l_max, 0);
  SechTable t{-lo, std::vector<double>(hi - lo + 1)};
  for (int m = lo; m <= hi; ++m) t.v[m - lo] = 1.0 / std::cosh(m * in.x);
  return t;
}

inline double one_sum(const CombSumInput& in, const SechTable& sech, int l) {
  double s = 0.0;
  for (int j = -in.j_max; j <= in.j_max; ++j) {
    const double w = in.weight[j + in.j_max];
    if (w == 0.0) continue;
    s += sech(j) * sech(j + l) * 0.5 * w;
  }
  return s;
}

}  // namespace

std::vector<double> comb_sums_serial(const CombSumInput& in) {
  const auto sech = make_sech(in);
  std::vector<double> out(in.l_max - in.l_min + 1);
  for (int l = in.l_min; l <= in.l_max; ++l) out[l - in.l_min] = one_sum(in, sech, l);
  return out;
}

std::vector<double> comb_sums_parallel(const CombSumInput& in) {
  const auto sech = make_sech(in);
  const int n = in.l_max - in.l_min + 1;
  std::vector<double> out(n);
#pragma omp parallel for schedule(static)
  for (int idx = 0; idx < n; ++idx) out[idx] = one_sum(in, sech, in.l_min + idx);
  return out;
}

int fock_dimension(int n_modes, int n_max) {
  int d = 4;
  for (int k = 0; k < n_modes; ++k) d *= (n_max + 1);
  return d;
}

namespace {

struct RowCache {
  std::vector<int> stride;
  std::vector<double> sq;             // sqrt(n), n = 0..n_max+1
  std::complex<double> sphase[2][2];  // [ion][bit]
  std::vector<std::complex<double>> up, down;  // per (ion, mode): g i r, g (-i) conj(r)
};

RowCache make_cache(const FockTerms& h) {
  RowCache c;
  c.stride.resize(h.n_modes);
  int acc = 1;
  for (int k = 0; k < h.n_modes; ++k) {
    c.stride[k] = acc;
    acc *= (h.n_max + 1);
  }
  c.sq.resize(h.n_max + 2);
  for (int n = 0; n <= h.n_max + 1; ++n) c.sq[n] = std::sqrt(static_cast<double>(n));
  for (int i = 0; i < 2; ++i) {
    // <s|sigma_phi|s'>: e^{i phi} when s has the bit set, e^{-i phi} otherwise
    c.sphase[i][1] = std::polar(1.0, h.spin_phase[i]);
    c.sphase[i][0] = std::polar(1.0, -h.spin_phase[i]);
  }
  c.up.resize(2 * h.n_modes);
  c.down.resize(2 * h.n_modes);
  for (int i = 0; i < 2; ++i)
    for (int k = 0; k < h.n_modes; ++k) {
      const double g = h.coupling[i * h.n_modes + k];
      c.up[i * h.n_modes + k] = g * std::complex<double>(0.0, 1.0) * h.rot[k];
      c.down[i * h.n_modes + k] = g * std::complex<double>(0.0, -1.0) * std::conj(h.rot[k]);
    }
  return c;
}

inline void apply_row(const FockTerms& h, const RowCache& c, const std::complex<double>* psi,
                      std::complex<double>* out, int row, int mdim) {
  using cd = std::complex<double>;
  const int spin = row / mdim;
  const int mot = row % mdim;
  const int base = h.n_max + 1;
  // spin bit for ion 0 is the high bit: |q0 q1>
  const int bit[2] = {(spin >> 1) & 1, spin & 1};
  const double z0 = bit[0] ? -1.0 : 1.0;
  const double z1 = bit[1] ? -1.0 : 1.0;
  cd acc = (h.z_coeff[0] * z0 + h.z_coeff[1] * z1) * psi[row];
  for (int i = 0; i < 2; ++i) {
    const cd* src = psi + (spin ^ (i == 0 ? 2 : 1)) * mdim + mot;
    cd part = 0.0;
    int rem = mot;
    for (int k = 0; k < h.n_modes; ++k) {
      const int nk = rem % base;
      rem /= base;
      const int idx = i * h.n_modes + k;
      // i a^dag e^{i d t}: from n-1; -i a e^{-i d t}: from n+1
      if (nk > 0) part += c.sq[nk] * c.up[idx] * src[-c.stride[k]];
      if (nk < h.n_max) part += c.sq[nk + 1] * c.down[idx] * src[c.stride[k]];
    }
    acc += c.sphase[i][bit[i]] * part;
  }
  out[row] = acc;
}

}  // namespace

void fock_apply_serial(const FockTerms& h, const std::complex<double>* psi, std::complex<double>* out) {
  const int dim = fock_dimension(h.n_modes, h.n_max);
  const int mdim = dim / 4;
  const auto c = make_cache(h);
  for (int row = 0; row < dim; ++row) apply_row(h, c, psi, out, row, mdim);
}

void fock_apply_parallel(const FockTerms& h, const std::complex<double>* psi, std::complex<double>* out) {
  const int dim = fock_dimension(h.n_modes, h.n_max);
  const int mdim = dim / 4;
  const auto c = make_cache(h);
#pragma omp parallel for schedule(static)
  for (int row = 0; row < dim; ++row) apply_row(h, c, psi, out, row, mdim);
}

}  // namespace msgate::kernels

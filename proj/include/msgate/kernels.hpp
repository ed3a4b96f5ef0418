#pragma once

#include <complex>
#include <vector>

namespace msgate::kernels {

// Comb tooth-pair sums S(l) = sum_{|j|<=J} sech(j x) sech((j+l) x) / 2 * weight[j+J]
// for l in [l_min, l_max]. Each S(l) is reduced serially in ascending j, so the
// parallel variant is bit-identical to the serial one.
struct CombSumInput {
  double x = 0.0;  // 2 pi f_rep tau_pulse
  int j_max = 0;
  std::vector<double> weight;  // size 2 j_max + 1, zero for guarded teeth
  int l_min = 0;
  int l_max = 0;
};

std::vector<double> comb_sums_serial(const CombSumInput& in);
std::vector<double> comb_sums_parallel(const CombSumInput& in);

// Gather-form application of the spin-boson Hamiltonian used by the Fock propagator.
// State layout: index = spin * motional_dim + motional index, two spins, modes in
// mixed radix with base (n_max + 1), mode 0 fastest.
struct FockTerms {
  int n_modes = 0;
  int n_max = 0;
  // coupling[i * n_modes + k] multiplies sigma_phi(i) (i a_k^dag e^{i d t} - i a_k e^{-i d t})
  std::vector<double> coupling;          // eta_{k,i} Omega_i(t) / 2
  std::vector<std::complex<double>> rot; // e^{i delta_k t}, one per mode
  double spin_phase[2] = {0.0, 0.0};     // drive phase phi_i(t)
  double z_coeff[2] = {0.0, 0.0};        // coefficient of Z_i
};

int fock_dimension(int n_modes, int n_max);
void fock_apply_serial(const FockTerms& h, const std::complex<double>* psi, std::complex<double>* out);
void fock_apply_parallel(const FockTerms& h, const std::complex<double>* psi, std::complex<double>* out);

}  // namespace msgate::kernels

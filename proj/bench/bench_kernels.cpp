#include <benchmark/benchmark.h>

#include <cmath>
#include <complex>
#include <vector>

#include "msgate/kernels.hpp"

namespace k = msgate::kernels;

namespace {

k::CombSumInput comb_input(int j_max) {
  k::CombSumInput in;
  in.x = 2.0 * M_PI * 120.125e6 * 3.9e-12 / 1.7627;
  in.j_max = j_max;
  in.weight.assign(2 * j_max + 1, 1.0);
  in.l_min = -300;
  in.l_max = 300;
  return in;
}

k::FockTerms fock_terms(int n_modes, int n_max) {
  k::FockTerms h;
  h.n_modes = n_modes;
  h.n_max = n_max;
  for (int i = 0; i < 2; ++i)
    for (int m = 0; m < n_modes; ++m) h.coupling.push_back(0.1 * (1 + i) * (m + 1));
  for (int m = 0; m < n_modes; ++m) h.rot.push_back(std::polar(1.0, 0.3 * (m + 1)));
  h.spin_phase[1] = 0.2;
  h.z_coeff[0] = 0.01;
  return h;
}

void BM_comb_serial(benchmark::State& st) {
  const auto in = comb_input(static_cast<int>(st.range(0)));
  for (auto _ : st) benchmark::DoNotOptimize(k::comb_sums_serial(in));
}

void BM_comb_parallel(benchmark::State& st) {
  const auto in = comb_input(static_cast<int>(st.range(0)));
  for (auto _ : st) benchmark::DoNotOptimize(k::comb_sums_parallel(in));
}

template <bool Parallel>
void fock_apply(benchmark::State& st) {
  const auto h = fock_terms(static_cast<int>(st.range(0)), static_cast<int>(st.range(1)));
  const int dim = k::fock_dimension(h.n_modes, h.n_max);
  std::vector<std::complex<double>> psi(dim, {1.0 / std::sqrt(double(dim)), 0.0}), out(dim);
  for (auto _ : st) {
    if constexpr (Parallel)
      k::fock_apply_parallel(h, psi.data(), out.data());
    else
      k::fock_apply_serial(h, psi.data(), out.data());
    benchmark::DoNotOptimize(out.data());
  }
  st.SetItemsProcessed(st.iterations() * dim);
}

}  // namespace

BENCHMARK(BM_comb_serial)->Arg(500)->Arg(2000);
BENCHMARK(BM_comb_parallel)->Arg(500)->Arg(2000);
BENCHMARK(fock_apply<false>)->Args({2, 20})->Args({4, 8});
BENCHMARK(fock_apply<true>)->Args({2, 20})->Args({4, 8});

BENCHMARK_MAIN();

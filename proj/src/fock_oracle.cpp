#include <algorithm>
#include <cmath>

#include "msgate/constants.hpp"
#include "msgate/errors.hpp"
#include "msgate/gate_dynamics.hpp"
#include "msgate/kernels.hpp"

namespace msgate::dynamics {

namespace {

struct FockRun {
  std::vector<std::vector<cd>> columns;  // evolved |s, vac> for s = 0..3
};

FockRun propagate(const GateDrive& d, const pulse::Envelope& env, const FockOptions& opt, int steps,
                  const std::vector<double>& eta_i, const std::vector<double>& eta_j,
                  const std::vector<double>& delta) {
  kernels::FockTerms h;
  h.n_modes = static_cast<int>(delta.size());
  h.n_max = opt.n_max;
  h.coupling.assign(2 * h.n_modes, 0.0);
  h.rot.assign(h.n_modes, cd(1.0));
  const int dim = kernels::fock_dimension(h.n_modes, h.n_max);
  const int mdim = dim / 4;
  const double tau = env.duration();
  const double E = env.total_energy();
  const double dt = tau / steps;

  auto set_time = [&](double t) {
    const double g = env(t);
    for (int k = 0; k < h.n_modes; ++k) {
      h.coupling[k] = 0.5 * eta_i[k] * d.rabi_peak_i * g;
      h.coupling[h.n_modes + k] = 0.5 * eta_j[k] * d.rabi_peak_j * g;
      h.rot[k] = std::polar(1.0, delta[k] * t);
    }
    const double frac = env.energy(t) / E;
    h.spin_phase[0] = d.pulse.frame_rotation_total[0] * frac;
    h.spin_phase[1] = d.pulse.frame_rotation_total[1] * frac;
    h.z_coeff[0] = -0.5 * d.lightshift_peak[0] * g * g;
    h.z_coeff[1] = -0.5 * d.lightshift_peak[1] * g * g;
  };
  auto deriv = [&](const std::vector<cd>& in, std::vector<cd>& out) {
    if (opt.parallel)
      kernels::fock_apply_parallel(h, in.data(), out.data());
    else
      kernels::fock_apply_serial(h, in.data(), out.data());
    for (auto& x : out) x *= cd(0.0, -1.0);
  };

  FockRun run;
  std::vector<cd> k1(dim), k2(dim), k3(dim), k4(dim), tmp(dim);
  for (int s = 0; s < 4; ++s) {
    std::vector<cd> psi(dim, cd(0.0));
    psi[s * mdim] = 1.0;
    for (int n = 0; n < steps; ++n) {
      const double t = n * dt;
      set_time(t);
      deriv(psi, k1);
      set_time(t + 0.5 * dt);
      for (int x = 0; x < dim; ++x) tmp[x] = psi[x] + 0.5 * dt * k1[x];
      deriv(tmp, k2);
      for (int x = 0; x < dim; ++x) tmp[x] = psi[x] + 0.5 * dt * k2[x];
      deriv(tmp, k3);
      set_time(t + dt);
      for (int x = 0; x < dim; ++x) tmp[x] = psi[x] + dt * k3[x];
      deriv(tmp, k4);
      for (int x = 0; x < dim; ++x) psi[x] += dt / 6.0 * (k1[x] + 2.0 * k2[x] + 2.0 * k3[x] + k4[x]);
    }
    run.columns.push_back(std::move(psi));
  }
  return run;
}

Eigen::Matrix4cd reduced(const std::vector<cd>& psi, int mdim) {
  Eigen::Matrix4cd r = Eigen::Matrix4cd::Zero();
  for (int a = 0; a < 4; ++a)
    for (int b = 0; b < 4; ++b) {
      cd s = 0.0;
      for (int m = 0; m < mdim; ++m) s += psi[a * mdim + m] * std::conj(psi[b * mdim + m]);
      r(a, b) = s;
    }
  return r;
}

// frame-referenced column: apply exp(i phi_f Z / 2) on both spins
void to_frame(std::vector<cd>& psi, int mdim, const std::array<double, 2>& phi) {
  for (int s = 0; s < 4; ++s) {
    const double zi = (s >> 1) ? -1.0 : 1.0;
    const double zj = (s & 1) ? -1.0 : 1.0;
    const cd ph = std::polar(1.0, 0.5 * (phi[0] * zi + phi[1] * zj));
    for (int m = 0; m < mdim; ++m) psi[s * mdim + m] *= ph;
  }
}

}  // namespace

GateOutcome simulate_gate_fock(const GateDrive& d, const FockOptions& opt) {
  if (d.nbar != 0.0) throw ConfigError("Fock oracle starts from motional vacuum; nbar must be 0");
  if (opt.n_max < 2) throw RangeError("n_max too small");
  d.pulse.validate();
  const pulse::Envelope env(d.pulse);
  std::vector<double> eta_i, eta_j, delta;
  for (const auto& m : d.modes)
    for (int k = 0; k < m.frequencies.size(); ++k) {
      eta_i.push_back(m.lamb_dicke(k, d.pair.first));
      eta_j.push_back(m.lamb_dicke(k, d.pair.second));
      delta.push_back(d.pulse.detuning - (m.frequencies(k) + d.mode_shift));
    }
  const int nk = static_cast<int>(delta.size());
  const int dim = kernels::fock_dimension(nk, opt.n_max);
  const int mdim = dim / 4;

  double dmax = 0.0;
  for (double x : delta) dmax = std::max(dmax, std::abs(x));
  double emax = 0.0;
  for (std::size_t k = 0; k < eta_i.size(); ++k) emax = std::max({emax, std::abs(eta_i[k]), std::abs(eta_j[k])});
  const double rmax = 0.5 * emax * std::max(d.rabi_peak_i, d.rabi_peak_j) * std::sqrt(opt.n_max + 1.0);
  int steps = opt.steps > 0 ? opt.steps
                            : std::max(500, static_cast<int>(std::ceil(d.pulse.duration * (dmax + rmax) / 0.15)));

  FockRun run = propagate(d, env, opt, steps, eta_i, eta_j, delta);
  if (opt.steps <= 0) {
    for (int iter = 0; iter < 6; ++iter) {
      FockRun fine = propagate(d, env, opt, 2 * steps, eta_i, eta_j, delta);
      const auto p0 = reduced(run.columns[0], mdim), p1 = reduced(fine.columns[0], mdim);
      double diff = 0.0;
      for (int s = 0; s < 4; ++s) diff = std::max(diff, std::abs(p0(s, s) - p1(s, s)));
      run = std::move(fine);
      steps *= 2;
      if (diff < opt.population_tolerance) break;
      if (iter == 5) throw ConvergenceError("Fock propagation did not converge under step doubling");
    }
  }

  // truncation check: population on the top Fock level of any mode
  const int base = opt.n_max + 1;
  double top = 0.0;
  for (int s = 0; s < 4; ++s)
    for (int x = 0; x < dim; ++x) {
      int rem = x % mdim;
      bool edge = false;
      for (int k = 0; k < nk; ++k) {
        if (rem % base == opt.n_max) edge = true;
        rem /= base;
      }
      if (edge) top = std::max(top, std::norm(run.columns[s][x]));
    }
  if (top > 1e-8) throw TruncationError("Fock truncation leaks population: raise n_max");

  const std::array<double, 2> phi_f = d.pulse.frame_rotation_total;
  for (auto& col : run.columns) to_frame(col, mdim, phi_f);

  GateOutcome o;
  o.steps = steps;
  double uerr = 0.0;
  for (int a = 0; a < 4; ++a)
    for (int b = 0; b < 4; ++b) {
      cd s = 0.0;
      for (int x = 0; x < dim; ++x) s += std::conj(run.columns[a][x]) * run.columns[b][x];
      uerr = std::max(uerr, std::abs(s - (a == b ? 1.0 : 0.0)));
    }
  o.unitarity_error = uerr;
  o.rho = reduced(run.columns[0], mdim);
  o.populations = populations(o.rho);
  o.parity_amplitude = parity_amplitude(o.rho);

  auto amp = [&](int col, int s) { return run.columns[col][s * mdim]; };
  const cd a00 = amp(0, 0);
  o.ls_phase[0] = std::arg(a00 / amp(2, 2));
  o.ls_phase[1] = std::arg(a00 / amp(1, 1));
  const cd r = amp(0, 3) / a00;
  o.theta = 2.0 * std::atan2(-std::imag(r) * std::abs(a00), std::abs(a00));
  {
    // mean displacement of |++>
    std::vector<cd> pp(dim, cd(0.0));
    for (int s = 0; s < 4; ++s)
      for (int x = 0; x < dim; ++x) pp[x] += 0.5 * run.columns[s][x];
    o.residual_alpha.assign(nk, cd(0.0));
    std::vector<int> stride(nk);
    int acc = 1;
    for (int k = 0; k < nk; ++k) {
      stride[k] = acc;
      acc *= base;
    }
    for (int k = 0; k < nk; ++k) {
      cd s = 0.0;
      for (int sp = 0; sp < 4; ++sp)
        for (int m = 0; m < mdim; ++m) {
          const int nkv = (m / stride[k]) % base;
          if (nkv == 0) continue;
          s += std::conj(pp[sp * mdim + m - stride[k]]) * std::sqrt(double(nkv)) * pp[sp * mdim + m];
        }
      o.residual_alpha[k] = s;
    }
  }
  return o;
}

}  // namespace msgate::dynamics

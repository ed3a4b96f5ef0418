// Acceptance run: one PASS/FAIL line per criterion, with runtimes.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdarg>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "msgate/calibration_record.hpp"
#include "msgate/comb_lightshift.hpp"
#include "msgate/config.hpp"
#include "msgate/constants.hpp"
#include "msgate/fitkit.hpp"
#include "msgate/frame_compiler.hpp"
#include "msgate/gate_dynamics.hpp"
#include "msgate/pipeline.hpp"
#include "msgate/virtual_experiment.hpp"

#ifndef MSGATE_CLI
#define MSGATE_CLI "msgate"
#endif
#ifndef MSGATE_ACCEPT_DIR
#define MSGATE_ACCEPT_DIR "acceptance_run"
#endif

using namespace msgate;
namespace c = msgate::constants;
using nlohmann::json;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
  double seconds = 0.0;
  double limit = 0.0;
};

double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, ...) __attribute__((format(printf, 1, 2)));
std::string fmt(const char* f, ...) {
  char buf[1024];
  va_list ap;
  va_start(ap, f);
  std::vsnprintf(buf, sizeof buf, f, ap);
  va_end(ap);
  return buf;
}

void set_well(ve::VirtualExperiment& v, double well) {
  protocol::ExperimentJob j;
  j.shots = 1;
  j.circuits = {json::array({json{{"op", "well"}, {"position_m", well}}})};
  v.run(j);
}

double theta_of(const ve::VirtualExperiment& v, const calib::Pipeline& p, double theta) {
  return dynamics::entangling_angle(v.drive_for(p.ms_op(0, 1, theta, 1)));
}

// ---- 1

Outcome criterion1() {
  const auto t0 = Clock::now();
  const auto s = comb::total_shift(comb::CombSpec::reference_defaults());
  const double hz = std::abs(s.total) / c::two_pi;
  Outcome o;
  o.limit = 5.0;
  o.seconds = since(t0);
  o.pass = std::abs(hz - 418.0) <= 41.8;
  o.detail = fmt("|total| = 2pi x %.1f Hz (target 418 +-10%%)", hz);
  return o;
}

// ---- 2

Outcome criterion2() {
  const auto t0 = Clock::now();
  const auto spec = comb::scaled_to_rabi(comb::CombSpec::reference_defaults(), c::two_pi * 125e3);
  const int l = spec.harmonic_offset;
  const double omega = std::abs(comb::two_photon_rabi(spec, comb::Comb::g, comb::Comb::b, l).value);
  // tooth-pair detuning of the dominant blue term from the qubit
  const double delta = comb::comb_tooth_frequency(spec, comb::Comb::b, l) - comb::comb_tooth_frequency(spec, comb::Comb::g, 0) -
                       spec.omega_qubit;
  const double shift = omega * omega / (4.0 * std::abs(delta));
  Outcome o;
  o.limit = 1.0;
  o.seconds = since(t0);
  const bool delta_ok = std::abs(delta) >= c::two_pi * 2e6 && std::abs(delta) <= c::two_pi * 2.5e6;
  o.pass = delta_ok && std::abs(shift / (c::two_pi * 2e3) - 1.0) <= 0.25;
  o.detail = fmt("Omega = 2pi x %.1f kHz, delta = 2pi x %.3f MHz, Omega^2/4delta = 2pi x %.3f kHz (target 2 +-25%%)",
                 omega / c::two_pi / 1e3, delta / c::two_pi / 1e6, shift / c::two_pi / 1e3);
  return o;
}

// ---- 3

dynamics::GateDrive two_ion_drive(bool both_manifolds) {
  const auto m = modes::radial_manifolds(modes::TrapConfig::defaults(2));
  const auto plan = modes::select_mode_pair(m[0], {0, 1});
  std::vector<modes::ModeSpectrum> spectra{m[0]};
  if (both_manifolds) spectra.push_back(m[1]);
  return dynamics::make_drive(spectra, plan, 250e-6, c::two_pi * 122.1e3, c::two_pi * 122.1e3);
}

dynamics::GateDrive scaled_to_theta(dynamics::GateDrive d, double theta) {
  const double s = std::sqrt(theta / std::abs(dynamics::entangling_angle(d)));
  d.rabi_peak_i *= s;
  d.rabi_peak_j *= s;
  return d;
}

Outcome criterion3() {
  const auto t0 = Clock::now();
  // one radial manifold: two modes at n_max = 20
  const auto base = two_ion_drive(false);
  double worst = 0.0;
  std::string per;
  for (double th : {c::pi / 32, c::pi / 8, c::pi / 2}) {
    const auto d = scaled_to_theta(base, th);
    const auto a = dynamics::simulate_gate_analytic(d);
    dynamics::FockOptions fo;
    fo.n_max = 20;
    const auto f = dynamics::simulate_gate_fock(d, fo);
    double m = 0.0;
    for (int k = 0; k < 4; ++k) m = std::max(m, std::abs(a.populations[k] - f.populations[k]));
    worst = std::max(worst, m);
    per += fmt(" %.2e", m);
  }
  Outcome o;
  o.limit = 120.0;
  o.seconds = since(t0);
  o.pass = worst < 1e-6;
  o.detail = fmt("max population difference per theta {pi/32, pi/8, pi/2}:%s", per.c_str());
  return o;
}

// ---- 5

Outcome criterion5() {
  const auto t0 = Clock::now();
  std::vector<double> shifts;
  for (int k = -10; k <= 10; ++k) shifts.push_back(c::two_pi * 0.5e3 * k);
  const auto bal = dynamics::frequency_robustness(two_ion_drive(true), shifts);
  const auto m3 = modes::radial_manifolds(modes::TrapConfig::defaults(3));
  const auto center = modes::select_mode_pair(m3[0], {1, 2});
  const auto dc = dynamics::make_drive({m3[0], m3[1]}, center, 250e-6, c::two_pi * 122.1e3, c::two_pi * 122.1e3);
  const auto unb = dynamics::frequency_robustness(dc, shifts);
  Outcome o;
  o.limit = 120.0;
  o.seconds = since(t0);
  o.pass = bal.max_relative_deviation < 0.01 && unb.max_relative_deviation >= 0.01 && !center.balanced;
  o.detail = fmt("balanced 2-ion max |dtheta|/theta = %.3f%%, center-ion 3-ion plan = %.2f%% over +-5 kHz",
                 100 * bal.max_relative_deviation, 100 * unb.max_relative_deviation);
  return o;
}

// ---- 8

Outcome criterion8() {
  const auto t0 = Clock::now();
  const double a_sat = 188.5, xi_rate = c::two_pi * 73.6e3, t = 50e-6;
  int good = 0;
  for (int s = 0; s < 100; ++s) {
    std::mt19937_64 rng(1000 + s);
    fit::ShotData d;
    for (int k = 1; k <= 41; ++k) {
      const double a = 200.0 * k / 41;
      std::binomial_distribution<long long> b(200, fit::amplitude_scan_model(a, t, a_sat, xi_rate, 30.0));
      d.push(a, b(rng), 200);
    }
    const auto f = fit::fit_amplitude_scan(d, t);
    good += f.converged && std::abs(f.get("a_sat") / a_sat - 1) < 0.02 && std::abs(f.get("Xi") / xi_rate - 1) < 0.02;
  }
  struct Case {
    double odd, even;
  };
  bool parity_ok = true;
  std::string per;
  for (const Case cs : {Case{83, 12.9}, Case{157, 19.8}, Case{179, 48}}) {
    std::mt19937_64 rng(static_cast<std::uint64_t>(cs.odd * 100 + cs.even));
    fit::ShotData od, p11;
    for (int m = 1; m <= 200; ++m) {
      std::binomial_distribution<long long> b1(500, fit::parity_odd_model(m, 0.98, cs.odd));
      std::binomial_distribution<long long> b2(500, fit::population_11_model(m, 0.98, cs.odd, cs.even, c::pi / 2));
      od.push(m, b1(rng), 500);
      p11.push(m, b2(rng), 500);
    }
    const auto r = fit::fit_parity_decay(od, p11);
    const double eo = r.get("M_sigma_odd") / cs.odd - 1, ee = r.get("M_sigma_even") / cs.even - 1;
    parity_ok = parity_ok && std::abs(eo) < 0.05 && std::abs(ee) < 0.05;
    per += fmt(" (%.0f,%.1f)->(%.1f,%.2f)", cs.odd, cs.even, r.get("M_sigma_odd"), r.get("M_sigma_even"));
  }
  Outcome o;
  o.limit = 900.0;
  o.seconds = since(t0);
  o.pass = good >= 95 && parity_ok;
  o.detail = fmt("amplitude scan within 2%% for %d/100 seeds; parity decay%s", good, per.c_str());
  return o;
}

// ---- 9

Outcome criterion9() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> u(-c::pi, c::pi), th(-c::pi / 2, c::pi / 2);
  double worst = 0.0;
  for (int t = 0; t < 100; ++t) {
    const double theta = th(rng), z0 = u(rng), z1 = u(rng);
    frames::Circuit a, b;
    a.qubit_count = b.qubit_count = 2;
    a.rz(0, z0).rz(1, z1).zz(0, 1, theta);
    b.zz(0, 1, theta).rz(0, z0).rz(1, z1);
    for (double native : {0.0, c::pi}) {
      const frames::ExpandOptions eo{native};
      worst = std::max(worst, frames::phase_equivalence_error(frames::circuit_unitary(a, eo), frames::circuit_unitary(b, eo)));
      worst = std::max(worst, frames::phase_equivalence_error(frames::circuit_unitary(a, eo), frames::direct_unitary(a)));
    }
  }
  // every (sign theta, native phase) combination
  bool table = true;
  for (double theta : {c::pi / 2, -c::pi / 2, 0.3, -0.3, 0.0})
    for (double native : {0.0, c::pi}) {
      const auto seq = frames::expand_zz(frames::Gate{frames::GateKind::ZZ, {0, 1}, theta, 0.0}, {native});
      const bool matched = seq.at(0).angle == seq.at(1).angle;
      table = table && seq.size() == 5 && seq[2].kind == frames::GateKind::MS && seq[2].angle == std::abs(theta) &&
              matched == ((theta >= 0) == (native == 0.0));
      frames::Circuit x;
      x.qubit_count = 2;
      x.zz(0, 1, theta);
      table = table && frames::phase_equivalence_error(frames::circuit_unitary(x, {native}), frames::zz_matrix(theta, 0, 1, 2)) < 1e-12;
    }
  Outcome o;
  o.limit = 60.0;
  o.seconds = since(t0);
  o.pass = worst < 1e-12 && table;
  o.detail = fmt("worst commuted/direct mismatch %.2e over 100 prefixes x 2 native phases; sign table %s", worst,
                 table ? "verified" : "WRONG");
  return o;
}

// ---- shared pipeline runs

struct NoiselessRun {
  ve::VirtualExperiment v{[] {
    auto t = ve::Truth::defaults(2);
    t.noiseless = true;
    return t;
  }()};
  calib::Pipeline p{v, calib::PipelineOptions{}};
  double seconds = 0.0;
};

struct NoisySeeds {
  std::vector<double> theta_err;           // relative
  std::vector<double> mle_vs_gauss_deg;    // both anchors of every seed
  double seconds = 0.0;
};

// criterion 4 Monte Carlo: upstream stages fixed from the noiseless run,
// amplitude and frame stages repeated with 500-shot noise
NoisySeeds run_noisy_seeds(const calib::CalibrationRecord& upstream, int seeds) {
  const auto t0 = Clock::now();
  NoisySeeds out;
  calib::CalibrationRecord base = upstream;
  base.completed.clear();
  for (const auto& s : upstream.completed) {
    if (s == "kappa") break;
    base.completed.push_back(s);
  }
  for (auto& pr : base.pairs) {
    pr.kappa = 1.0;
    pr.anchors = {};
  }
  calib::PipelineOptions o;
  o.shots = 500;
  o.frame_shots = 500;
  o.kappa_shots = 500;
  for (int s = 0; s < seeds; ++s) {
    auto t = ve::Truth::defaults(2);
    t.seed = 5000 + s;
    ve::VirtualExperiment v(t);
    set_well(v, base.well);
    calib::Pipeline p(v, o, base);
    try {
      p.calibrate_kappa(0, 1, false);
      p.calibrate_frame_rotation(0, 1);
      p.calibrate_kappa(0, 1, true);
      out.theta_err.push_back(std::abs(theta_of(v, p, c::pi / 2) / (c::pi / 2) - 1.0));
      for (const auto& a : p.record().pair(0, 1).anchors)
        out.mle_vs_gauss_deg.push_back(std::isfinite(a.phi_mle) ? std::abs(a.phi - a.phi_mle) / c::deg : 1e9);
    } catch (const std::exception& e) {
      std::fprintf(stderr, "seed %d failed: %s\n", s, e.what());
      out.theta_err.push_back(1e9);
      out.mle_vs_gauss_deg.push_back(1e9);
      out.mle_vs_gauss_deg.push_back(1e9);
    }
  }
  out.seconds = since(t0);
  return out;
}

Outcome criterion4(const NoiselessRun& nl, const NoisySeeds& ns) {
  const double err = std::abs(theta_of(nl.v, nl.p, c::pi / 2) - c::pi / 2);
  const long within = std::count_if(ns.theta_err.begin(), ns.theta_err.end(), [](double e) { return e < 0.01; });
  const double worst = *std::max_element(ns.theta_err.begin(), ns.theta_err.end());
  Outcome o;
  o.limit = 600.0;
  o.seconds = nl.seconds + ns.seconds;
  o.pass = err < 1e-3 && within * 100 >= 95 * static_cast<long>(ns.theta_err.size());
  o.detail = fmt("noiseless |theta - pi/2| = %.2e rad; 500 shots: %ld/%zu seeds within 1%% (worst %.2f%%)", err, within,
                 ns.theta_err.size(), 100 * worst);
  return o;
}

Outcome criterion6(NoiselessRun& nl) {
  const auto t0 = Clock::now();
  const std::vector<double> thetas{c::pi / 32, c::pi / 16, c::pi / 8, c::pi / 4, c::pi / 2};
  std::vector<double> phi;
  for (double th : thetas) {
    const auto fr = nl.v.cancelling_frame_rotation(nl.p.ms_op(0, 1, th, 1));
    phi.push_back(0.5 * (fr[0] + fr[1]));
  }
  double sxy = 0, sxx = 0, mean = 0;
  for (std::size_t k = 0; k < thetas.size(); ++k) {
    sxy += thetas[k] * phi[k];
    sxx += thetas[k] * thetas[k];
    mean += phi[k] / phi.size();
  }
  const double slope = sxy / sxx;
  double ss_res = 0, ss_tot = 0;
  for (std::size_t k = 0; k < thetas.size(); ++k) {
    ss_res += std::pow(phi[k] - slope * thetas[k], 2);
    ss_tot += std::pow(phi[k] - mean, 2);
  }
  const double r2 = 1.0 - ss_res / ss_tot;
  const double interp = nl.p.record().pair(0, 1).frame_rotation(c::pi / 8);
  calib::Pipeline probe(nl.v, nl.p.options(), nl.p.record());
  const auto direct = probe.calibrate_frame_direct(0, 1, 8);
  const double diff = std::abs(interp - direct.phi) / c::deg;
  Outcome o;
  o.limit = 600.0;
  o.seconds = since(t0) + nl.seconds;
  o.pass = r2 > 0.999 && diff < 1.0;
  o.detail = fmt("R^2 through origin = %.7f (slope %.3f deg/rad); anchor interpolation at pi/8 %.3f deg vs direct M=8 %.3f deg",
                 r2, slope / c::deg, interp / c::deg, direct.phi / c::deg);
  return o;
}

Outcome criterion7(const NoisySeeds& ns, const std::vector<double>& e2e_diffs) {
  const auto t0 = Clock::now();
  auto d = scaled_to_theta(two_ion_drive(false), c::pi / 2);
  const pulse::Envelope env(d.pulse);
  d.lightshift_peak = {c::two_pi * 2.0e3, c::two_pi * 1.5e3};
  d.pulse.frame_rotation_total = {-d.lightshift_peak[0] * env.total_energy(), -d.lightshift_peak[1] * env.total_energy()};
  dynamics::FockOptions fo;
  fo.n_max = 20;
  const auto f = dynamics::simulate_gate_fock(d, fo);
  const double resid = std::max(std::abs(f.ls_phase[0]), std::abs(f.ls_phase[1]));
  std::vector<double> all = ns.mle_vs_gauss_deg;
  all.insert(all.end(), e2e_diffs.begin(), e2e_diffs.end());
  const long within = std::count_if(all.begin(), all.end(), [](double x) { return x < 2.0; });
  double median = 0.0;
  {
    auto s = all;
    std::sort(s.begin(), s.end());
    median = s[s.size() / 2];
  }
  const bool e2e_ok = std::all_of(e2e_diffs.begin(), e2e_diffs.end(), [](double x) { return x < 2.0; });
  Outcome o;
  o.limit = 300.0;
  o.seconds = since(t0);
  o.pass = resid < 1e-6 && e2e_ok && within * 100 >= 95 * static_cast<long>(all.size());
  o.detail = fmt("Fock residual phase %.2e rad; MLE vs Gaussian centers within 2 deg for %ld/%zu scans (median %.3f deg)",
                 resid, within, all.size(), median);
  return o;
}

struct EndToEnd {
  Outcome outcome;
  std::vector<double> mle_diffs;
};

EndToEnd criterion10() {
  const auto t0 = Clock::now();
  EndToEnd r;
  auto& o = r.outcome;
  o.limit = 1200.0;
  const std::string dir = MSGATE_ACCEPT_DIR;
  std::filesystem::remove_all(dir);
  const std::string cmd = "env -u MSGATE_SEED -u MSGATE_OUTPUT_DIR '" + std::string(MSGATE_CLI) + "' calibrate -o '" + dir +
                          "' > '" + dir + ".log' 2>&1";
  const int rc = std::system(cmd.c_str());
  if (rc != 0) {
    o.seconds = since(t0);
    o.detail = fmt("calibrate exited with status %d (see %s.log)", rc, dir.c_str());
    return r;
  }
  const auto rec = calib::load_record(dir + "/record.json");
  const auto cfg = config::ArtifactConfig::defaults(2);
  ve::VirtualExperiment v(cfg.truth);
  set_well(v, rec.well);
  calib::Pipeline p(v, cfg.pipeline, rec);

  const bool stages = rec.completed == calib::Pipeline::stage_names();
  const auto truth_sb = v.true_sidebands();
  double sb_err = 0.0;
  std::size_t q = 0;
  for (const auto& m : rec.sidebands)
    for (double f : m) sb_err = std::max(sb_err, std::abs(f - truth_sb.at(q++)) / c::two_pi);
  double zeta_err = 0.0;
  for (int i = 0; i < 2; ++i) zeta_err = std::max(zeta_err, std::abs(rec.ions[i].zeta - v.truth().zeta_star[i]));
  const double th_err = std::abs(theta_of(v, p, c::pi / 2) / (c::pi / 2) - 1.0);
  double anchor_err = 0.0;
  const auto& pr = rec.pair(0, 1);
  for (const auto& a : pr.anchors) {
    const auto fr = v.cancelling_frame_rotation(p.ms_op(0, 1, a.theta, 1));
    for (double x : fr) anchor_err = std::max(anchor_err, std::abs(a.phi - x) / c::deg);
    r.mle_diffs.push_back(std::isfinite(a.phi_mle) ? std::abs(a.phi - a.phi_mle) / c::deg : 1e9);
  }

  // state-fidelity oracle including SPAM, as the estimator sees it
  const json circuit = json::array({p.ms_op(0, 1, c::pi / 2, 1)});
  const auto probs = v.probabilities(circuit);
  const Eigen::MatrixXcd rho = v.evolve(circuit);
  const double pm = v.truth().spam_meas;
  const double amp = 2.0 * std::abs(rho(0, 3)) * std::pow(1.0 - 2.0 * pm, 2);
  const double f_oracle = fit::fidelity_estimate(probs[0], probs[3], amp, c::pi / 2);
  const Eigen::Vector4cd target = dynamics::ms_target_state(c::pi / 2);
  const double f_pure = std::real(target.dot(rho * target));
  const auto& fd = rec.stages.at("fidelity").at("diagnostics");
  const double f = fd.at("fidelity").get<double>();
  const double lo = fd.at("err_lo").get<double>(), hi = fd.at("err_hi").get<double>();
  const bool fid_ok = f - f_oracle <= 1e-3 + lo && f_oracle - f <= 1e-3 + hi;

  o.seconds = since(t0);
  o.pass = stages && sb_err < 0.5e3 && zeta_err < 0.02 && th_err < 0.01 && anchor_err < 0.5 && fid_ok;
  o.detail = fmt("stages %s; sideband err %.3f kHz; zeta* err %.4f; theta err %.3f%%; anchor err %.3f deg; "
                 "F = %s vs oracle %.4f (SPAM-free %.4f)",
                 stages ? "all" : "INCOMPLETE", sb_err / 1e3, zeta_err, 100 * th_err, anchor_err,
                 fd.at("formatted").get<std::string>().c_str(), f_oracle, f_pure);
  return r;
}

}  // namespace

int main() {
  std::vector<Outcome> res(11);
  auto guarded = [](const std::function<Outcome()>& f) {
    try {
      return f();
    } catch (const std::exception& e) {
      Outcome o;
      o.detail = std::string("exception: ") + e.what();
      return o;
    }
  };
  res[1] = guarded(criterion1);
  res[2] = guarded(criterion2);
  res[3] = guarded(criterion3);
  res[5] = guarded(criterion5);
  res[8] = guarded(criterion8);
  res[9] = guarded(criterion9);

  NoiselessRun nl;
  NoisySeeds ns;
  std::string pipeline_error;
  try {
    const auto t0 = Clock::now();
    nl.p.run_schedule();
    nl.seconds = since(t0);
    ns = run_noisy_seeds(nl.p.record(), 50);
  } catch (const std::exception& e) {
    pipeline_error = e.what();
  }
  const auto e2e = [&] {
    try {
      return criterion10();
    } catch (const std::exception& e) {
      EndToEnd r;
      r.outcome.detail = std::string("exception: ") + e.what();
      return r;
    }
  }();
  res[10] = e2e.outcome;
  if (pipeline_error.empty()) {
    res[4] = guarded([&] { return criterion4(nl, ns); });
    res[6] = guarded([&] { return criterion6(nl); });
    res[7] = guarded([&] { return criterion7(ns, e2e.mle_diffs); });
  } else {
    for (int k : {4, 6, 7}) res[k].detail = "noiseless calibration failed: " + pipeline_error;
  }

  int failed = 0;
  for (int k = 1; k <= 10; ++k) {
    auto& o = res[k];
    const bool in_time = o.limit <= 0 || o.seconds < o.limit;
    const bool ok = o.pass && in_time;
    failed += !ok;
    std::printf("criterion %2d: %s  %s [%.1f s, limit %.0f s]\n", k, ok ? "PASS" : "FAIL", o.detail.c_str(), o.seconds,
                o.limit);
  }
  std::fflush(stdout);
  return failed == 0 ? 0 : 1;
}

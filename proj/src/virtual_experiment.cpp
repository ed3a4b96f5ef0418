#include "msgate/virtual_experiment.hpp"

#include <algorithm>
#include <cmath>

#include <boost/math/tools/roots.hpp>

#include "msgate/constants.hpp"
#include "msgate/errors.hpp"
#include "msgate/frame_compiler.hpp"

namespace msgate::ve {

namespace c = msgate::constants;
using cd = std::complex<double>;
using nlohmann::json;

namespace {

// comb breakdown at zeta = 1 for the default comb, computed once per process
const comb::ShiftBreakdown& reference_breakdown() {
  static const comb::ShiftBreakdown b = [] {
    const auto spec = comb::with_zeta(comb::CombSpec::reference_defaults(), 1.0);
    return comb::total_shift(spec);
  }();
  return b;
}

template <class T>
std::vector<T> resized(std::vector<T> v, int n) {
  if (v.empty()) throw ConfigError("per-ion truth vector is empty");
  while (static_cast<int>(v.size()) < n) v.push_back(v[v.size() % std::max<std::size_t>(1, v.size() - 1)]);
  v.resize(n);
  return v;
}

std::vector<double> get_amps(const json& op, const char* key, std::size_t n) {
  if (!op.contains(key)) throw ProtocolError(std::string("op lacks ") + key);
  const auto& v = op.at(key);
  if (v.is_number()) return std::vector<double>(n, v.get<double>());
  auto out = v.get<std::vector<double>>();
  if (out.size() != n) throw ProtocolError(std::string(key) + " has wrong length");
  return out;
}

int bit_of(int q, int n) { return n - 1 - q; }

}  // namespace

Truth Truth::defaults(int ion_count) {
  Truth t;
  t.trap = modes::TrapConfig::defaults(ion_count);
  const double k = c::two_pi * 1e3;
  const std::vector<double> pattern{0.31, -0.22, 0.18, -0.27, 0.12, -0.15};
  t.sideband_offsets.assign(2, {});
  for (int m = 0; m < 2; ++m)
    for (int i = 0; i < ion_count; ++i) t.sideband_offsets[m].push_back(k * pattern[(i + 2 * m) % pattern.size()]);
  t.ia_a_sat = resized(t.ia_a_sat, ion_count);
  t.ia_gain = resized(t.ia_gain, ion_count);
  t.co_xi = resized(t.co_xi, ion_count);
  t.zeta_star = resized(t.zeta_star, ion_count);
  return t;
}

void Truth::validate() const {
  trap.validate();
  const int n = trap.ion_count;
  auto check = [&](std::size_t s, const char* what) {
    if (static_cast<int>(s) != n) throw ConfigError(std::string("truth.") + what + " must have one entry per ion");
  };
  check(ia_a_sat.size(), "ia_a_sat");
  check(ia_gain.size(), "ia_gain");
  check(co_xi.size(), "co_xi_hz");
  check(zeta_star.size(), "zeta_star");
  if (!beam_extra.empty()) check(beam_extra.size(), "beam_extra_m");
  if (sideband_offsets.size() != 2) throw ConfigError("truth.sideband_offsets_hz needs two manifolds");
  for (const auto& m : sideband_offsets) check(m.size(), "sideband_offsets_hz[manifold]");
  global.validate();
  if (beam_waist <= 0 || rabi_decay_xi <= 0 || ms_ratio <= 0 || eta_scale <= 0) throw ConfigError("truth: non-positive scale");
  if (spam_prep < 0 || spam_prep > 0.5 || spam_meas < 0 || spam_meas > 0.5) throw ConfigError("truth: SPAM outside [0, 0.5]");
  if (contrast_loss < 0 || contrast_loss > 0.5) throw ConfigError("truth: contrast_loss outside [0, 0.5]");
}

json to_json(const Truth& t) {
  std::vector<std::vector<double>> off_hz;
  for (const auto& m : t.sideband_offsets) {
    off_hz.emplace_back();
    for (double v : m) off_hz.back().push_back(v / c::two_pi);
  }
  std::vector<double> co_hz;
  for (double v : t.co_xi) co_hz.push_back(v / c::two_pi);
  return {{"trap", modes::to_json(t.trap)},
          {"sideband_offsets_hz", off_hz},
          {"eta_scale", t.eta_scale},
          {"beam_offset_m", t.beam_offset},
          {"beam_extra_m", t.beam_extra},
          {"beam_waist_m", t.beam_waist},
          {"global_aom", pulse::to_json(t.global)},
          {"ia_a_sat", t.ia_a_sat},
          {"ia_gain", t.ia_gain},
          {"co_xi_hz", co_hz},
          {"ms_ratio", t.ms_ratio},
          {"rabi_decay_xi", t.rabi_decay_xi},
          {"zeta_star", t.zeta_star},
          {"comb_noise_rel", t.comb_noise_rel},
          {"residual_deg_per_half_pi", t.residual_deg_per_half_pi},
          {"nbar", t.nbar},
          {"spam_prep", t.spam_prep},
          {"spam_meas", t.spam_meas},
          {"contrast_loss", t.contrast_loss},
          {"loop_phase_sigma_rad", t.loop_phase_sigma},
          {"loop_theta_sigma", t.loop_theta_sigma},
          {"noiseless", t.noiseless},
          {"seed", t.seed}};
}

Truth truth_from_json(const json& j, const Truth& base) {
  static const std::vector<std::string> known{
      "trap",          "sideband_offsets_hz", "eta_scale",   "beam_offset_m",  "beam_extra_m",
      "beam_waist_m",  "global_aom",          "ia_a_sat",    "ia_gain",        "co_xi_hz",
      "ms_ratio",      "rabi_decay_xi",       "zeta_star",   "comb_noise_rel", "residual_deg_per_half_pi",
      "nbar",          "spam_prep",           "spam_meas",   "contrast_loss",  "loop_phase_sigma_rad",
      "loop_theta_sigma", "noiseless",        "seed"};
  for (const auto& [k, v] : j.items())
    if (std::find(known.begin(), known.end(), k) == known.end()) throw ConfigError("unknown key truth." + k);
  Truth t = base;
  if (j.contains("trap")) {
    t.trap = modes::trap_from_json(j["trap"], base.trap);
    if (t.trap.ion_count != base.trap.ion_count) {
      // per-ion defaults follow the new chain length
      Truth d = Truth::defaults(t.trap.ion_count);
      d.trap = t.trap;
      t = d;
    }
  }
  if (j.contains("sideband_offsets_hz")) {
    t.sideband_offsets.clear();
    for (const auto& m : j["sideband_offsets_hz"]) {
      t.sideband_offsets.emplace_back();
      for (double v : m.get<std::vector<double>>()) t.sideband_offsets.back().push_back(v * c::two_pi);
    }
  }
  if (j.contains("co_xi_hz")) {
    t.co_xi.clear();
    for (double v : j["co_xi_hz"].get<std::vector<double>>()) t.co_xi.push_back(v * c::two_pi);
  }
  if (j.contains("global_aom")) t.global = pulse::aom_from_json(j["global_aom"]);
  auto num = [&](const char* k, double& dst) {
    if (j.contains(k)) dst = j[k].get<double>();
  };
  num("eta_scale", t.eta_scale);
  num("beam_offset_m", t.beam_offset);
  num("beam_waist_m", t.beam_waist);
  num("ms_ratio", t.ms_ratio);
  num("rabi_decay_xi", t.rabi_decay_xi);
  num("comb_noise_rel", t.comb_noise_rel);
  num("residual_deg_per_half_pi", t.residual_deg_per_half_pi);
  num("nbar", t.nbar);
  num("spam_prep", t.spam_prep);
  num("spam_meas", t.spam_meas);
  num("contrast_loss", t.contrast_loss);
  num("loop_phase_sigma_rad", t.loop_phase_sigma);
  num("loop_theta_sigma", t.loop_theta_sigma);
  if (j.contains("beam_extra_m")) t.beam_extra = j["beam_extra_m"].get<std::vector<double>>();
  if (j.contains("ia_a_sat")) t.ia_a_sat = j["ia_a_sat"].get<std::vector<double>>();
  if (j.contains("ia_gain")) t.ia_gain = j["ia_gain"].get<std::vector<double>>();
  if (j.contains("zeta_star")) t.zeta_star = j["zeta_star"].get<std::vector<double>>();
  if (j.contains("noiseless")) t.noiseless = j["noiseless"].get<bool>();
  if (j.contains("seed")) t.seed = j["seed"].get<std::uint64_t>();
  t.validate();
  return t;
}

// ---------------------------------------------------------------- density-matrix helpers

void apply_unitary1(Eigen::MatrixXcd& rho, const Eigen::Matrix2cd& u, int q, int n) {
  const int dim = 1 << n;
  const int b = bit_of(q, n);
  // rows
  for (int r = 0; r < dim; ++r) {
    if ((r >> b) & 1) continue;
    const int r1 = r | (1 << b);
    for (int col = 0; col < dim; ++col) {
      const cd a0 = rho(r, col), a1 = rho(r1, col);
      rho(r, col) = u(0, 0) * a0 + u(0, 1) * a1;
      rho(r1, col) = u(1, 0) * a0 + u(1, 1) * a1;
    }
  }
  // columns with u^dagger
  for (int col = 0; col < dim; ++col) {
    if ((col >> b) & 1) continue;
    const int c1 = col | (1 << b);
    for (int r = 0; r < dim; ++r) {
      const cd a0 = rho(r, col), a1 = rho(r, c1);
      rho(r, col) = a0 * std::conj(u(0, 0)) + a1 * std::conj(u(0, 1));
      rho(r, c1) = a0 * std::conj(u(1, 0)) + a1 * std::conj(u(1, 1));
    }
  }
}

void dephase(Eigen::MatrixXcd& rho, int q, int n, double factor) {
  if (factor == 1.0) return;
  const int dim = 1 << n;
  const int b = bit_of(q, n);
  for (int r = 0; r < dim; ++r)
    for (int col = 0; col < dim; ++col)
      if (((r >> b) & 1) != ((col >> b) & 1)) rho(r, col) *= factor;
}

void apply_pair_channel(Eigen::MatrixXcd& rho, const dynamics::GateChannel& ch, int i, int j, int n) {
  const int dim = 1 << n;
  const int bi = bit_of(i, n), bj = bit_of(j, n);
  auto pair_index = [&](int s) { return 2 * ((s >> bi) & 1) + ((s >> bj) & 1); };
  const int mask = (1 << bi) | (1 << bj);
  Eigen::MatrixXcd U = Eigen::MatrixXcd::Zero(dim, dim);
  for (int r = 0; r < dim; ++r)
    for (int col = 0; col < dim; ++col)
      if ((r & ~mask) == (col & ~mask)) U(r, col) = ch.unitary(pair_index(r), pair_index(col));
  rho = U * rho * U.adjoint();
  Eigen::Matrix2cd h;
  h << 1, 1, 1, -1;
  h /= std::sqrt(2.0);
  apply_unitary1(rho, h, i, n);
  apply_unitary1(rho, h, j, n);
  for (int r = 0; r < dim; ++r)
    for (int col = 0; col < dim; ++col) rho(r, col) *= ch.chi(pair_index(r), pair_index(col));
  apply_unitary1(rho, h, i, n);
  apply_unitary1(rho, h, j, n);
}

namespace {

// single-ion version: the channel's second qubit is idle (no drive, no shift)
void apply_single_channel(Eigen::MatrixXcd& rho, const dynamics::GateChannel& ch, int q, int n) {
  Eigen::Matrix2cd u;
  u << ch.unitary(0, 0), ch.unitary(0, 2), ch.unitary(2, 0), ch.unitary(2, 2);
  apply_unitary1(rho, u, q, n);
  Eigen::Matrix2cd h;
  h << 1, 1, 1, -1;
  h /= std::sqrt(2.0);
  apply_unitary1(rho, h, q, n);
  const int dim = 1 << n, b = bit_of(q, n);
  for (int r = 0; r < dim; ++r)
    for (int col = 0; col < dim; ++col) rho(r, col) *= ch.chi(2 * ((r >> b) & 1), 2 * ((col >> b) & 1));
  apply_unitary1(rho, h, q, n);
}

void depolarize(Eigen::MatrixXcd& rho, int q, int n, double keep) {
  if (keep >= 1.0) return;
  // keep * rho + (1 - keep) * Tr_q(rho) x I/2
  const int dim = 1 << n, b = bit_of(q, n);
  Eigen::MatrixXcd out = rho;
  for (int r = 0; r < dim; ++r)
    for (int col = 0; col < dim; ++col) {
      const int rb = (r >> b) & 1, cb = (col >> b) & 1;
      cd mixed = 0.0;
      if (rb == cb) {
        const int r0 = r & ~(1 << b), c0 = col & ~(1 << b);
        mixed = 0.5 * (rho(r0, c0) + rho(r0 | (1 << b), c0 | (1 << b)));
      }
      out(r, col) = keep * rho(r, col) + (1.0 - keep) * mixed;
    }
  rho = out;
}

void bit_flip(Eigen::MatrixXcd& rho, int q, int n, double p) {
  if (p <= 0.0) return;
  Eigen::MatrixXcd flipped = rho;
  Eigen::Matrix2cd x;
  x << 0, 1, 1, 0;
  apply_unitary1(flipped, x, q, n);
  rho = (1.0 - p) * rho + p * flipped;
}

}  // namespace

// ---------------------------------------------------------------- experiment

VirtualExperiment::VirtualExperiment(Truth truth) : truth_(std::move(truth)), rng_(truth_.seed) {
  truth_.validate();
  n_ = truth_.trap.ion_count;
  const auto nominal = modes::radial_manifolds(truth_.trap);
  for (int m = 0; m < 2; ++m) {
    modes::ModeSpectrum s = nominal[m];
    for (int k = 0; k < s.frequencies.size(); ++k) s.frequencies(k) += truth_.sideband_offsets[m][k];
    s.lamb_dicke *= truth_.eta_scale;
    modes_.push_back(s);
  }
  nominal_positions_ = modes::equilibrium_positions(truth_.trap);

  const auto& bd = reference_breakdown();
  for (int a = 0; a < 3; ++a)
    for (int b = 0; b < 3; ++b) {
      const int e = (a == 1) + (b == 1) - (a == 2) - (b == 2);
      comb_terms_.push_back({bd.per_pair[a][b], e});
    }
  comb_rabi_ref_ = c::two_pi * 122.1e3;
  auto f = [&](double z) { return comb_breakdown_total(z); };
  boost::uintmax_t it = 200;
  const auto root = boost::math::tools::toms748_solve(
      f, 0.5, 2.0, [](double a, double b) { return std::abs(a - b) < 1e-14; }, it);
  zeta_balance_ = 0.5 * (root.first + root.second);

  if (n_ >= 2) {
    const auto plan = modes::select_mode_pair(modes_[0], {modes::ion_label(0, n_), modes::ion_label(1, n_)});
    auto d = dynamics::make_drive(modes_, plan, 250e-6, c::two_pi * 100e3, c::two_pi * 100e3);
    const double th = dynamics::entangling_angle(d);
    rabi_ref_ = c::two_pi * 100e3 * std::sqrt((c::pi / 2) / std::abs(th));
    const pulse::Envelope env(d.pulse);
    k_residual_ = truth_.residual_deg_per_half_pi * c::deg / (rabi_ref_ * rabi_ref_ * env.total_energy());
  }
}

double VirtualExperiment::comb_breakdown_total(double z) const {
  double s = 0.0;
  for (const auto& [v, e] : comb_terms_) s += v * std::pow(z, e);
  return s;
}

std::vector<double> VirtualExperiment::true_sidebands() const {
  std::vector<double> out;
  for (const auto& m : modes_)
    for (int k = 0; k < m.frequencies.size(); ++k) out.push_back(m.frequencies(k));
  return out;
}

std::vector<double> VirtualExperiment::ion_positions(double well) const {
  auto p = nominal_positions_;
  for (auto& x : p) x += well;
  return p;
}

std::vector<double> VirtualExperiment::beam_centers() const {
  auto p = nominal_positions_;
  for (std::size_t i = 0; i < p.size(); ++i)
    p[i] += truth_.beam_offset + (truth_.beam_extra.empty() ? 0.0 : truth_.beam_extra[i]);
  return p;
}

namespace {
double beam_factor(double x, double center, double w) {
  const double z = (x - center) / w;
  return std::exp(-z * z);
}
}  // namespace

double VirtualExperiment::counter_rabi(int i, double a, double ag, double well) const {
  const double bf = beam_factor(nominal_positions_[i] + well, beam_centers()[i], truth_.beam_waist);
  return truth_.global.Xi * truth_.ia_gain[i] * std::sin(0.5 * c::pi * ag / truth_.global.a_sat) *
         std::sin(0.5 * c::pi * a / truth_.ia_a_sat[i]) * bf;
}

double VirtualExperiment::co_rabi(int i, double a, double well) const {
  const double bf = beam_factor(nominal_positions_[i] + well, beam_centers()[i], truth_.beam_waist);
  return truth_.co_xi[i] * std::sin(0.5 * c::pi * a / truth_.ia_a_sat[i]) * bf * bf;
}

double VirtualExperiment::tone_rabi(int i, double a, double ag, double well) const {
  return truth_.ms_ratio * counter_rabi(i, a, ag, well);
}

double VirtualExperiment::comb_shift(int i, double rabi, double zeta) const {
  if (!(zeta > 0)) return 0.0;
  const double zc = zeta * zeta_balance_ / truth_.zeta_star[i];
  const double s = rabi / comb_rabi_ref_;
  return comb_breakdown_total(zc) * s * s;
}

double VirtualExperiment::residual_shift(double rabi) const { return k_residual_ * rabi * rabi; }

dynamics::GateDrive VirtualExperiment::drive_for(const json& op) const {
  const auto ions = op.at("ions").get<std::vector<int>>();
  if (ions.empty() || ions.size() > 2) throw ProtocolError("ms op needs one or two ions");
  for (int q : ions)
    if (q < 0 || q >= n_) throw ProtocolError("ms op ion out of range");
  const auto ar = get_amps(op, "amp_red", ions.size());
  const auto ab = get_amps(op, "amp_blue", ions.size());
  const double ag = op.at("amp_global").get<double>();
  const double tau = op.at("duration_s").get<double>();
  std::vector<double> fr(ions.size(), 0.0);
  if (op.contains("frame_rotation_rad")) fr = get_amps(op, "frame_rotation_rad", ions.size());

  dynamics::GateDrive d;
  d.pulse = pulse::PulseProgram::with_duration(tau);
  d.pulse.detuning = c::two_pi * op.at("drive_offset_hz").get<double>();
  d.modes = modes_;
  d.nbar = truth_.nbar;
  const int i = ions[0];
  const int j = ions.size() == 2 ? ions[1] : (n_ > 1 ? (i == 0 ? 1 : 0) : i);
  d.pair = {i, j};
  d.pulse.pair = d.pair;
  std::array<double, 2> rabi{0.0, 0.0}, ls{0.0, 0.0};
  for (std::size_t k = 0; k < ions.size(); ++k) {
    const double wr = tone_rabi(ions[k], ar[k], ag, well_);
    const double wb = tone_rabi(ions[k], ab[k], ag, well_);
    rabi[k] = std::sqrt(std::max(wr * wb, 0.0));
    const double zeta = wr > 0 ? wb / wr : 0.0;
    ls[k] = rabi[k] > 0 ? comb_shift(ions[k], rabi[k], zeta) + residual_shift(rabi[k]) : 0.0;
  }
  d.rabi_peak_i = rabi[0];
  d.rabi_peak_j = rabi[1];
  d.lightshift_peak = ls;
  d.pulse.frame_rotation_total = {fr[0], ions.size() == 2 ? fr[1] : 0.0};
  return d;
}

std::array<double, 2> VirtualExperiment::cancelling_frame_rotation(const json& op) const {
  auto d = drive_for(op);
  const pulse::Envelope env(d.pulse);
  return {-d.lightshift_peak[0] * env.total_energy(), -d.lightshift_peak[1] * env.total_energy()};
}

void VirtualExperiment::apply_op(Eigen::MatrixXcd& rho, const json& op, double& well) const {
  const std::string kind = op.at("op").get<std::string>();
  const int n = n_;
  if (kind == "well") {
    well = op.at("position_m").get<double>();
    return;
  }
  if (kind == "mw") {
    const auto u = frames::rotation(op.at("angle_rad").get<double>(), op.value("phase_rad", 0.0));
    for (int q = 0; q < n; ++q) apply_unitary1(rho, u, q, n);
    return;
  }
  if (kind == "r") {
    const auto u = frames::rotation(op.at("angle_rad").get<double>(), op.value("phase_rad", 0.0));
    for (int q : op.at("ions").get<std::vector<int>>()) {
      if (q < 0 || q >= n) throw ProtocolError("r op ion out of range");
      apply_unitary1(rho, u, q, n);
    }
    return;
  }
  if (kind == "rabi") {
    const auto ions = op.at("ions").get<std::vector<int>>();
    const auto amps = get_amps(op, "amp", ions.size());
    const std::string beam = op.value("kind", "counter");
    const double t = op.at("duration_s").get<double>();
    const double phase = op.value("phase_rad", 0.0);
    const double det = c::two_pi * op.value("detuning_hz", 0.0);
    const double ag = op.value("amp_global", 0.0);
    for (std::size_t k = 0; k < ions.size(); ++k) {
      const int q = ions[k];
      if (q < 0 || q >= n) throw ProtocolError("rabi op ion out of range");
      double w = 0.0;
      if (beam == "counter")
        w = counter_rabi(q, amps[k], ag, well);
      else if (beam == "co")
        w = co_rabi(q, amps[k], well);
      else
        throw ProtocolError("rabi kind must be counter or co");
      if (det == 0.0) {
        apply_unitary1(rho, frames::rotation(w * t, phase), q, n);
        depolarize(rho, q, n, std::exp(-std::abs(w) * t / truth_.rabi_decay_xi));
      } else {
        // motional sideband probe from the cooled ground state, plus the detuned carrier
        double stay = 1.0;
        auto add = [&](double rate, double delta) {
          const double g2 = rate * rate + delta * delta;
          if (g2 <= 0) return;
          const double p = rate * rate / g2 * std::pow(std::sin(0.5 * std::sqrt(g2) * t), 2);
          stay *= 1.0 - p;
        };
        add(w, det);
        for (const auto& m : modes_)
          for (int mk = 0; mk < m.frequencies.size(); ++mk) {
            const double eta = m.lamb_dicke(mk, q);
            add(eta * w * std::sqrt(truth_.nbar + 1.0), det - m.frequencies(mk));
            if (truth_.nbar > 0) add(eta * w * std::sqrt(truth_.nbar), det + m.frequencies(mk));
          }
        bit_flip(rho, q, n, 1.0 - stay);
      }
    }
    return;
  }
  if (kind == "ms") {
    const int reps = op.value("repeat", 1);
    if (reps < 1 || reps > 100000) throw ProtocolError("ms repeat out of range");
    const auto ions = op.at("ions").get<std::vector<int>>();
    VirtualExperiment* self = const_cast<VirtualExperiment*>(this);
    const double saved = self->well_;
    self->well_ = well;
    auto base = drive_for(op);
    self->well_ = saved;
    // waveform phase per ion: sigma_phi = Rz(phi) X Rz(phi)^dagger
    std::vector<double> phases(ions.size(), 0.0);
    if (op.contains("phase_rad")) phases = get_amps(op, "phase_rad", ions.size());
    auto run_channel = [&](const dynamics::GateDrive& d) {
      Eigen::MatrixXcd r = rho;
      for (std::size_t k = 0; k < ions.size(); ++k)
        if (phases[k] != 0.0) apply_unitary1(r, frames::rz_matrix(phases[k]).adjoint(), ions[k], n);
      const auto ch = dynamics::gate_channel(d, reps);
      if (ions.size() == 2)
        apply_pair_channel(r, ch, ions[0], ions[1], n);
      else
        apply_single_channel(r, ch, ions[0], n);
      for (std::size_t k = 0; k < ions.size(); ++k)
        if (phases[k] != 0.0) apply_unitary1(r, frames::rz_matrix(phases[k]), ions[k], n);
      return r;
    };
    if (truth_.loop_theta_sigma > 0) {
      // quasi-static theta jitter: Gauss-Hermite average over the Rabi scale
      static const double x[5] = {-2.856970013872806, -1.355626179974266, 0.0, 1.355626179974266, 2.856970013872806};
      static const double w[5] = {0.011257411327721, 0.222075922005613, 0.533333333333333, 0.222075922005613, 0.011257411327721};
      Eigen::MatrixXcd acc = Eigen::MatrixXcd::Zero(rho.rows(), rho.cols());
      for (int g = 0; g < 5; ++g) {
        auto d = base;
        const double s = std::sqrt(std::max(0.0, 1.0 + truth_.loop_theta_sigma * x[g]));
        d.rabi_peak_i *= s;
        d.rabi_peak_j *= s;
        acc += w[g] * run_channel(d);
      }
      rho = acc;
    } else {
      rho = run_channel(base);
    }
    // quasi-static fluctuation of the comb shift and extra loop dephasing
    const pulse::Envelope env(base.pulse);
    for (std::size_t k = 0; k < ions.size(); ++k) {
      const double rabi = k == 0 ? base.rabi_peak_i : base.rabi_peak_j;
      const double comb_part = base.lightshift_peak[k] - residual_shift(rabi);
      const double phi = truth_.comb_noise_rel * comb_part * env.total_energy() * reps;
      double f = std::exp(-0.5 * phi * phi);
      f *= std::exp(-0.5 * std::pow(truth_.loop_phase_sigma * reps, 2));
      f *= (1.0 - 2.0 * truth_.contrast_loss);
      dephase(rho, ions[k], n, f);
    }
    return;
  }
  throw ProtocolError("unknown op " + kind);
}

Eigen::MatrixXcd VirtualExperiment::evolve(const json& circuit) const {
  const int dim = 1 << n_;
  Eigen::MatrixXcd rho = Eigen::MatrixXcd::Zero(dim, dim);
  for (int s = 0; s < dim; ++s) {
    double p = 1.0;
    for (int q = 0; q < n_; ++q) p *= ((s >> bit_of(q, n_)) & 1) ? truth_.spam_prep : 1.0 - truth_.spam_prep;
    rho(s, s) = p;
  }
  double well = well_;
  for (const auto& op : circuit) apply_op(rho, op, well);
  return rho;
}

std::vector<double> VirtualExperiment::probabilities(const json& circuit) const {
  const auto rho = evolve(circuit);
  const int dim = 1 << n_;
  std::vector<double> p(dim);
  for (int s = 0; s < dim; ++s) p[s] = std::max(0.0, rho(s, s).real());
  // independent symmetric readout flips
  for (int q = 0; q < n_; ++q) {
    const int b = bit_of(q, n_);
    for (int s = 0; s < dim; ++s) {
      if ((s >> b) & 1) continue;
      const int s1 = s | (1 << b);
      const double a = p[s], bb = p[s1];
      p[s] = (1 - truth_.spam_meas) * a + truth_.spam_meas * bb;
      p[s1] = truth_.spam_meas * a + (1 - truth_.spam_meas) * bb;
    }
  }
  double tot = 0.0;
  for (double v : p) tot += v;
  for (double& v : p) v /= tot;
  return p;
}

std::vector<long long> VirtualExperiment::sample(const std::vector<double>& p, long long shots) {
  std::vector<long long> out(p.size(), 0);
  if (truth_.noiseless) {
    long long used = 0;
    std::size_t big = 0;
    for (std::size_t k = 0; k < p.size(); ++k) {
      out[k] = std::llround(p[k] * double(shots));
      used += out[k];
      if (p[k] > p[big]) big = k;
    }
    out[big] += shots - used;
    return out;
  }
  long long left = shots;
  double mass = 1.0;
  for (std::size_t k = 0; k + 1 < p.size() && left > 0; ++k) {
    const double q = mass > 0 ? std::clamp(p[k] / mass, 0.0, 1.0) : 0.0;
    std::binomial_distribution<long long> bd(left, q);
    out[k] = bd(rng_);
    left -= out[k];
    mass -= p[k];
  }
  out.back() += left;
  return out;
}

protocol::ExperimentResult VirtualExperiment::run(const protocol::ExperimentJob& job) {
  ++jobs_;
  protocol::ExperimentResult r;
  r.label = job.label;
  r.ion_count = n_;
  r.shots = job.shots;
  for (const auto& circuit : job.circuits) {
    double well = well_;
    for (const auto& op : circuit)
      if (op.value("op", "") == "well") well = op.at("position_m").get<double>();
    r.counts.push_back(sample(probabilities(circuit), job.shots));
    well_ = well;
  }
  return r;
}

}  // namespace msgate::ve

#include "msgate/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <map>
#include <numeric>

#include "msgate/constants.hpp"
#include "msgate/errors.hpp"
#include "msgate/optimize.hpp"

namespace msgate::calib {

namespace c = msgate::constants;
using nlohmann::json;

namespace {

std::vector<double> linspace(double a, double b, int n) {
  std::vector<double> v(n);
  for (int k = 0; k < n; ++k) v[k] = n == 1 ? a : a + (b - a) * k / (n - 1);
  return v;
}

std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

json mw(double angle, double phase = 0.0) { return {{"op", "mw"}, {"angle_rad", angle}, {"phase_rad", phase}}; }

std::vector<int> all_ions(int n) {
  std::vector<int> v(n);
  std::iota(v.begin(), v.end(), 0);
  return v;
}

// sign changes of f from positive to non-positive and back, linearly interpolated
std::vector<double> zero_crossings(const std::vector<double>& x, const std::vector<double>& f) {
  std::vector<double> out;
  for (std::size_t k = 0; k + 1 < x.size(); ++k) {
    if ((f[k] > 0) == (f[k + 1] > 0)) continue;
    const double t = f[k] / (f[k] - f[k + 1]);
    out.push_back(x[k] + t * (x[k + 1] - x[k]));
  }
  return out;
}

}  // namespace

// ---------------------------------------------------------------- options I/O

namespace {

template <class F>
void option_fields(PipelineOptions& o, F&& f) {
  f("shots", o.shots);
  f("frame_shots", o.frame_shots);
  f("fidelity_shots", o.fidelity_shots);
  f("kappa_shots", o.kappa_shots);
  f("align_span_m", o.align_span);
  f("align_points", o.align_points);
  f("align_resolution_m", o.align_resolution);
  f("global_scan_time_s", o.global_scan_time);
  f("counter_scan_time_s", o.counter_scan_time);
  f("co_scan_time_s", o.co_scan_time);
  f("counter_pi_time_s", o.counter_pi_time);
  f("co_pi_time_s", o.co_pi_time);
  f("amp_points", o.amp_points);
  f("co_amp_points", o.co_amp_points);
  f("amp_max", o.amp_max);
  f("coarse_step_hz", o.coarse_step);
  f("coarse_margin_hz", o.coarse_margin);
  f("fine_span_hz", o.fine_span);
  f("fine_points", o.fine_points);
  f("peak_threshold", o.peak_threshold);
  f("symmetric_lo_hz", o.sym_lo);
  f("symmetric_hi_hz", o.sym_hi);
  f("symmetric_points", o.sym_points);
  f("gate_duration_s", o.gate_duration);
  f("echo_gates", o.echo_gates);
  f("zeta_lo", o.zeta_lo);
  f("zeta_hi", o.zeta_hi);
  f("zeta_points", o.zeta_points);
  f("zeta_fine_span", o.zeta_fine_span);
  f("kappa_lo", o.kappa_lo);
  f("kappa_hi", o.kappa_hi);
  f("kappa_coarse_points", o.kappa_coarse_points);
  f("kappa_fine_span", o.kappa_fine_span);
  f("kappa_fine_points", o.kappa_fine_points);
  f("frame_span_deg", o.frame_span_deg);
  f("frame_points", o.frame_points);
  f("parity_phases", o.parity_phases);
  f("confidence_z", o.confidence_z);
}

bool is_hz_key(const std::string& k) { return k.size() > 3 && k.compare(k.size() - 3, 3, "_hz") == 0; }

}  // namespace

json to_json(const PipelineOptions& o) {
  json j;
  option_fields(const_cast<PipelineOptions&>(o), [&](const std::string& k, auto& v) {
    if constexpr (std::is_floating_point_v<std::decay_t<decltype(v)>>)
      j[k] = is_hz_key(k) ? v / c::two_pi : v;
    else
      j[k] = v;
  });
  j["anchor_reps"] = o.anchor_reps;
  j["scan_dir"] = o.scan_dir;
  j["nominal"] = {{"trap", modes::to_json(o.nominal.trap)},
                  {"global_aom", pulse::to_json(o.nominal.global)},
                  {"ia_a_sat", o.nominal.ia_a_sat},
                  {"co_xi_hz", o.nominal.co_xi / c::two_pi},
                  {"ms_ratio", o.nominal.ms_ratio}};
  return j;
}

PipelineOptions options_from_json(const json& j, const PipelineOptions& base) {
  PipelineOptions o = base;
  std::vector<std::string> known{"anchor_reps", "scan_dir", "nominal"};
  option_fields(o, [&](const std::string& k, auto&) { known.push_back(k); });
  for (const auto& [k, v] : j.items())
    if (std::find(known.begin(), known.end(), k) == known.end()) throw ConfigError("unknown key pipeline." + k);
  option_fields(o, [&](const std::string& k, auto& v) {
    if (!j.contains(k)) return;
    using T = std::decay_t<decltype(v)>;
    v = j[k].get<T>();
    if constexpr (std::is_floating_point_v<T>)
      if (is_hz_key(k)) v *= c::two_pi;
  });
  if (j.contains("anchor_reps")) o.anchor_reps = j["anchor_reps"].get<std::array<int, 2>>();
  if (j.contains("scan_dir")) o.scan_dir = j["scan_dir"].get<std::string>();
  if (j.contains("nominal")) {
    const auto& n = j["nominal"];
    for (const auto& [k, v] : n.items())
      if (k != "trap" && k != "global_aom" && k != "ia_a_sat" && k != "co_xi_hz" && k != "ms_ratio")
        throw ConfigError("unknown key pipeline.nominal." + k);
    if (n.contains("trap")) o.nominal.trap = modes::trap_from_json(n["trap"], o.nominal.trap);
    if (n.contains("global_aom")) o.nominal.global = pulse::aom_from_json(n["global_aom"]);
    if (n.contains("ia_a_sat")) o.nominal.ia_a_sat = n["ia_a_sat"].get<double>();
    if (n.contains("co_xi_hz")) o.nominal.co_xi = n["co_xi_hz"].get<double>() * c::two_pi;
    if (n.contains("ms_ratio")) o.nominal.ms_ratio = n["ms_ratio"].get<double>();
  }
  if (o.shots < 1 || o.frame_shots < 1 || o.fidelity_shots < 1 || o.kappa_shots < 1)
    throw ConfigError("pipeline shots must be positive");
  if (o.align_points < 5 || o.fine_points < 7 || o.zeta_points < 7 || o.kappa_fine_points < 3 || o.frame_points < 7)
    throw ConfigError("pipeline scan grids are too small");
  if (o.anchor_reps[0] == o.anchor_reps[1] || o.anchor_reps[0] < 1 || o.anchor_reps[1] < 1)
    throw ConfigError("pipeline.anchor_reps must be two distinct positive counts");
  return o;
}

std::string FidelityReport::formatted() const {
  char buf[96];
  std::snprintf(buf, sizeof buf, "%.3f^{+%.3f}_{-%.3f} with 95%% confidence", fidelity.value, fidelity.err_hi,
                fidelity.err_lo);
  return buf;
}

json to_json(const FidelityReport& f) {
  return {{"theta_rad", f.theta},      {"p00", f.p00},
          {"p11", f.p11},              {"parity_contrast", f.contrast},
          {"parity_contrast_sigma", f.contrast_sigma},
          {"fidelity", f.fidelity.value},
          {"err_lo", f.fidelity.err_lo}, {"err_hi", f.fidelity.err_hi},
          {"formatted", f.formatted()}};
}

// ---------------------------------------------------------------- pipeline

Pipeline::Pipeline(protocol::Backend& backend, PipelineOptions options, CalibrationRecord record)
    : backend_(backend), opt_(std::move(options)), record_(std::move(record)) {
  const auto m = modes::radial_manifolds(opt_.nominal.trap);
  modes_.assign(m.begin(), m.end());
  if (record_.ion_count == 0) record_.ion_count = backend_.ion_count();
  if (record_.ion_count != backend_.ion_count()) throw ConfigError("record ion count differs from the backend");
  if (opt_.nominal.trap.ion_count != record_.ion_count) throw ConfigError("nominal trap ion count differs from the backend");
  for (std::size_t mi = 0; mi < record_.sidebands.size() && mi < modes_.size(); ++mi)
    for (std::size_t k = 0; k < record_.sidebands[mi].size(); ++k) modes_[mi].frequencies(k) = record_.sidebands[mi][k];
}

const std::vector<std::string>& Pipeline::stage_names() {
  static const std::vector<std::string> s{"align",  "pi_times", "sidebands",      "symmetric_detuning",
                                          "zeta",   "kappa",    "frame_rotation", "kappa_refine",
                                          "fidelity"};
  return s;
}

protocol::ExperimentResult Pipeline::submit(const std::string& label, const std::vector<json>& circuits,
                                            const std::vector<double>& sweep, long long shots) {
  protocol::ExperimentJob job;
  job.label = label;
  job.shots = shots;
  job.sweep_name = label;
  job.sweep_values = sweep;
  job.circuits = circuits;
  auto r = backend_.run(job);
  if (!r.error.empty()) throw ProtocolError(label + ": backend error: " + r.error);
  r.validate();
  if (r.counts.size() != circuits.size()) throw ProtocolError(label + ": result has the wrong circuit count");
  return r;
}

void Pipeline::emit(const std::string& name, const fit::ShotData& d, const std::string& x_header) {
  if (opt_.scan_dir.empty()) return;
  std::filesystem::create_directories(opt_.scan_dir);
  char idx[16];
  std::snprintf(idx, sizeof idx, "%03d_", scan_counter_++);
  fit::write_shot_csv(d, opt_.scan_dir + "/" + idx + name + ".csv", x_header);
}

void Pipeline::note(const std::string& stage, const json& diag) {
  record_.stages[stage] = {{"timestamp", utc_now()}, {"diagnostics", diag}};
}

void Pipeline::sync_backend_state() {
  if (!record_.done("align")) return;
  submit("set_well", {json::array({json{{"op", "well"}, {"position_m", record_.well}}})}, {record_.well}, 1);
}

// ---- align

double Pipeline::align_chain() {
  const int n = record_.ion_count;
  const auto xs = linspace(-opt_.align_span, opt_.align_span, opt_.align_points);
  // stay below a full pi so the transfer peaks at the beam center
  const double t = 0.8 * c::pi / opt_.nominal.global.Xi;
  std::vector<json> circuits;
  for (double x : xs)
    circuits.push_back(json::array({json{{"op", "well"}, {"position_m", x}},
                                    json{{"op", "rabi"},
                                         {"kind", "counter"},
                                         {"ions", all_ions(n)},
                                         {"amp", opt_.nominal.ia_a_sat},
                                         {"amp_global", opt_.nominal.global.a_sat},
                                         {"duration_s", t},
                                         {"phase_rad", 0.0}}}));
  const auto r = submit("align", circuits, xs, opt_.shots);
  std::vector<fit::FitResult> fits;
  json diag = json::array();
  for (int i = 0; i < n; ++i) {
    fit::ShotData d;
    d.outcome_label = "P1_ion" + std::to_string(i);
    // fit in micrometres for conditioning
    for (std::size_t k = 0; k < xs.size(); ++k) d.push(xs[k] * 1e6, r.bright(k, i), r.shots);
    emit("align_ion" + std::to_string(i), d, "well_um");
    auto f = fit::fit_gaussian_peak(d);
    if (!f.converged) throw RangeError("no transfer peak found for ion " + std::to_string(i) + ": " + f.message);
    diag.push_back({{"ion", i}, {"center_m", f.get("center") * 1e-6}, {"width_m", f.get("sigma") * 1e-6}, {"amplitude", f.get("amplitude")}});
    fits.push_back(std::move(f));
  }
  auto avg = [&](double x) {
    double s = 0.0;
    for (const auto& f : fits)
      s += fit::gaussian_model(x * 1e6, f.get("center"), f.get("sigma"), f.get("amplitude"), f.get("offset"));
    return s / fits.size();
  };
  // outward from zero so ties keep the smallest |x|
  double best = 0.0, best_v = avg(0.0);
  const int steps = static_cast<int>(std::floor(opt_.align_span / opt_.align_resolution + 1e-9));
  for (int k = 1; k <= steps; ++k)
    for (double x : {k * opt_.align_resolution, -k * opt_.align_resolution}) {
      const double v = avg(x);
      if (v > best_v * (1.0 + 1e-12) + 1e-15) {
        best = x;
        best_v = v;
      }
    }
  record_.well = best;
  note("align", {{"fits", diag}, {"well_m", best}, {"average_transfer", best_v}});
  submit("set_well", {json::array({json{{"op", "well"}, {"position_m", best}}})}, {best}, 1);
  return best;
}

// ---- pi times

void Pipeline::calibrate_pi_times() {
  const int n = record_.ion_count;
  const auto amps = linspace(opt_.amp_max / opt_.amp_points, opt_.amp_max, opt_.amp_points);
  json diag;

  // global AOM, ion 0 addressed near its nominal saturation
  {
    std::vector<json> circuits;
    for (double a : amps)
      circuits.push_back(json::array({json{{"op", "rabi"},
                                           {"kind", "counter"},
                                           {"ions", {0}},
                                           {"amp", opt_.nominal.ia_a_sat},
                                           {"amp_global", a},
                                           {"duration_s", opt_.global_scan_time},
                                           {"phase_rad", 0.0}}}));
    const auto r = submit("global_amplitude", circuits, amps, opt_.shots);
    fit::ShotData d;
    d.outcome_label = "P1";
    for (std::size_t k = 0; k < amps.size(); ++k) d.push(amps[k], r.bright(k, 0), r.shots);
    emit("global_amplitude", d, "amp");
    const auto f = fit::fit_amplitude_scan(d, opt_.global_scan_time);
    if (!f.converged) throw ConvergenceError("global amplitude scan: " + f.message);
    record_.global = {f.get("a_sat"), f.get("Xi")};
    record_.global_amp = record_.global.a_sat;
    diag["global"] = fit::to_json(f);
  }

  record_.ions.resize(n);
  auto ion_scan = [&](const std::string& kind, double t, const std::vector<double>& grid) {
    std::vector<json> circuits;
    for (double a : grid) {
      json op{{"op", "rabi"}, {"kind", kind}, {"ions", all_ions(n)}, {"amp", a}, {"duration_s", t}, {"phase_rad", 0.0}};
      if (kind == "counter") op["amp_global"] = record_.global_amp;
      circuits.push_back(json::array({op}));
    }
    const auto r = submit(kind + "_amplitude", circuits, grid, opt_.shots);
    std::vector<fit::FitResult> out;
    for (int i = 0; i < n; ++i) {
      fit::ShotData d;
      d.outcome_label = "P1_ion" + std::to_string(i);
      for (std::size_t k = 0; k < grid.size(); ++k) d.push(grid[k], r.bright(k, i), r.shots);
      emit(kind + "_amplitude_ion" + std::to_string(i), d, "amp");
      auto f = fit::fit_amplitude_scan(d, t);
      if (!f.converged) throw ConvergenceError(kind + " amplitude scan ion " + std::to_string(i) + ": " + f.message);
      out.push_back(std::move(f));
    }
    return out;
  };
  const auto counter = ion_scan("counter", opt_.counter_scan_time, amps);
  const auto co = ion_scan("co", opt_.co_scan_time, linspace(opt_.amp_max / opt_.co_amp_points, opt_.amp_max, opt_.co_amp_points));
  diag["ions"] = json::array();
  for (int i = 0; i < n; ++i) {
    auto& ion = record_.ions[i];
    ion.counter = {counter[i].get("a_sat"), counter[i].get("Xi")};
    ion.co = {co[i].get("a_sat"), co[i].get("Xi")};
    ion.counter_pi_amp = pulse::aom_inverse(ion.counter, c::pi / opt_.counter_pi_time);
    ion.co_pi_amp = pulse::aom_inverse(ion.co, c::pi / opt_.co_pi_time);
    diag["ions"].push_back({{"counter", fit::to_json(counter[i])},
                            {"co", fit::to_json(co[i])},
                            {"counter_pi_amp", ion.counter_pi_amp},
                            {"co_pi_amp", ion.co_pi_amp}});
  }
  note("pi_times", diag);
}

// ---- sidebands

std::vector<std::vector<double>> Pipeline::find_sidebands() {
  const int n = record_.ion_count;
  if (record_.ions.size() != static_cast<std::size_t>(n)) throw RangeError("pi times are not calibrated");
  const double rabi = c::pi / opt_.counter_pi_time;

  struct ModeRef {
    int manifold, k;
    double nominal;
  };
  std::vector<ModeRef> all;
  std::vector<double> eta_max;
  for (int m = 0; m < static_cast<int>(modes_.size()); ++m)
    for (int k = 0; k < modes_[m].frequencies.size(); ++k) {
      all.push_back({m, k, modes_[m].frequencies(k)});
      if (m == 0) eta_max.push_back(modes_[m].lamb_dicke.row(k).cwiseAbs().maxCoeff());
    }
  std::sort(eta_max.begin(), eta_max.end());
  const double eta_typ = eta_max[eta_max.size() / 2];
  double lo = 1e300, hi = -1e300;
  for (const auto& r : all) {
    lo = std::min(lo, r.nominal);
    hi = std::max(hi, r.nominal);
  }
  lo -= opt_.coarse_margin;
  hi += opt_.coarse_margin;

  // coarse: every ion probed at once
  std::vector<double> grid;
  for (double f = lo; f <= hi + 1e-9; f += opt_.coarse_step) grid.push_back(f);
  const double t_coarse = c::pi / (eta_typ * rabi);
  std::vector<json> circuits;
  std::vector<double> amps;
  for (const auto& ion : record_.ions) amps.push_back(ion.counter_pi_amp);
  for (double f : grid)
    circuits.push_back(json::array({json{{"op", "rabi"},
                                         {"kind", "counter"},
                                         {"ions", all_ions(n)},
                                         {"amp", amps},
                                         {"amp_global", record_.global_amp},
                                         {"duration_s", t_coarse},
                                         {"phase_rad", 0.0},
                                         {"detuning_hz", f / c::two_pi}}}));
  auto rc = submit("sideband_coarse", circuits, grid, opt_.shots);
  std::vector<double> y(grid.size(), 0.0);
  for (std::size_t k = 0; k < grid.size(); ++k)
    for (int i = 0; i < n; ++i) y[k] = std::max(y[k], double(rc.bright(k, i)) / rc.shots);
  {
    fit::ShotData d;
    d.outcome_label = "P1_max_over_ions";
    for (std::size_t k = 0; k < grid.size(); ++k) d.push(grid[k] / c::two_pi, std::llround(y[k] * rc.shots), rc.shots);
    emit("sideband_coarse", d, "detuning_hz");
  }
  const auto s = fit::moving_average3(y);
  auto sorted = s;
  std::sort(sorted.begin(), sorted.end());
  const double baseline = sorted[sorted.size() / 2];
  std::vector<std::pair<double, double>> cand;  // height, frequency
  for (std::size_t k = 0; k < s.size(); ++k) {
    const bool left = k == 0 || s[k] >= s[k - 1];
    const bool right = k + 1 == s.size() || s[k] > s[k + 1];
    if (left && right && s[k] > baseline + opt_.peak_threshold) cand.push_back({s[k], grid[k]});
  }
  std::sort(cand.begin(), cand.end(), std::greater<>());
  std::vector<double> peaks;
  for (const auto& [h, f] : cand) {
    bool far = true;
    for (double p : peaks) far = far && std::abs(p - f) > 3.0 * opt_.coarse_step;
    if (far) peaks.push_back(f);
    if (peaks.size() == all.size()) break;
  }
  if (peaks.size() != all.size())
    throw RangeError("expected " + std::to_string(all.size()) + " sidebands, found " + std::to_string(peaks.size()));
  std::sort(peaks.begin(), peaks.end(), std::greater<>());
  std::vector<std::size_t> order(all.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return all[a].nominal > all[b].nominal; });
  std::vector<double> coarse(all.size());
  for (std::size_t r = 0; r < order.size(); ++r) coarse[order[r]] = peaks[r];

  // fine: each mode probed by its most strongly coupled ion; ions work in parallel
  std::vector<int> probe(all.size());
  for (std::size_t q = 0; q < all.size(); ++q) {
    const auto row = modes_[all[q].manifold].lamb_dicke.row(all[q].k).cwiseAbs();
    int best = 0;
    for (int i = 1; i < n; ++i)
      if (row(i) > row(best) * (1.0 + 1e-9)) best = i;
    probe[q] = best;
  }
  std::vector<std::vector<std::size_t>> rounds;
  for (std::size_t q = 0; q < all.size(); ++q) {
    bool placed = false;
    for (auto& rd : rounds) {
      bool busy = false;
      for (auto other : rd) busy = busy || probe[other] == probe[q];
      if (!busy) {
        rd.push_back(q);
        placed = true;
        break;
      }
    }
    if (!placed) rounds.push_back({q});
  }
  const auto offsets = linspace(-opt_.fine_span, opt_.fine_span, opt_.fine_points);
  std::vector<double> fine(all.size());
  json diag = json::array();
  for (std::size_t rd = 0; rd < rounds.size(); ++rd) {
    std::vector<json> fc;
    for (double off : offsets) {
      json circuit = json::array();
      for (auto q : rounds[rd]) {
        const int i = probe[q];
        const double eta = std::abs(modes_[all[q].manifold].lamb_dicke(all[q].k, i));
        circuit.push_back({{"op", "rabi"},
                           {"kind", "counter"},
                           {"ions", {i}},
                           {"amp", record_.ions[i].counter_pi_amp},
                           {"amp_global", record_.global_amp},
                           {"duration_s", c::pi / (eta * rabi)},
                           {"phase_rad", 0.0},
                           {"detuning_hz", (coarse[q] + off) / c::two_pi}});
      }
      fc.push_back(circuit);
    }
    const auto r = submit("sideband_fine", fc, offsets, opt_.shots);
    for (auto q : rounds[rd]) {
      fit::ShotData d;
      d.outcome_label = "P1_ion" + std::to_string(probe[q]);
      for (std::size_t k = 0; k < offsets.size(); ++k)
        d.push((coarse[q] + offsets[k]) / c::two_pi, r.bright(k, probe[q]), r.shots);
      emit("sideband_fine_m" + std::to_string(all[q].manifold) + "_k" + std::to_string(all[q].k), d, "detuning_hz");
      const auto f = fit::fit_gaussian_peak(d);
      if (!f.converged) throw RangeError("fine sideband fit failed: " + f.message);
      fine[q] = f.get("center") * c::two_pi;
      diag.push_back({{"manifold", all[q].manifold},
                      {"mode", all[q].k},
                      {"ion", probe[q]},
                      {"coarse_hz", coarse[q] / c::two_pi},
                      {"center_hz", fine[q] / c::two_pi},
                      {"center_sigma_hz", f.sigma("center")}});
    }
  }
  record_.sidebands.assign(modes_.size(), {});
  for (std::size_t m = 0; m < modes_.size(); ++m) record_.sidebands[m].resize(modes_[m].frequencies.size());
  for (std::size_t q = 0; q < all.size(); ++q) {
    record_.sidebands[all[q].manifold][all[q].k] = fine[q];
    modes_[all[q].manifold].frequencies(all[q].k) = fine[q];
  }
  note("sidebands", {{"modes", diag}, {"coarse_probe_time_s", t_coarse}});
  return record_.sidebands;
}

// ---- pair plan and MS ops

std::array<double, 2> Pipeline::tone_amps(int ion, double rabi, double zeta) const {
  const auto& r = record_.ions.at(ion);
  const pulse::AomModel tone{r.counter.a_sat, opt_.nominal.ms_ratio * r.counter.Xi};
  return {pulse::aom_inverse(tone, rabi / std::sqrt(zeta)), pulse::aom_inverse(tone, rabi * std::sqrt(zeta))};
}

void Pipeline::ensure_pair_plan(int i, int j) {
  const int n = record_.ion_count;
  if (i < 0 || j < 0 || i >= n || j >= n || i == j) throw RangeError("invalid ion pair");
  for (const auto& p : record_.pairs)
    if ((p.ion_i == i && p.ion_j == j) || (p.ion_i == j && p.ion_j == i)) return;
  const auto plan = modes::select_mode_pair(modes_[0], {modes::ion_label(i, n), modes::ion_label(j, n)});
  PairRecord p;
  p.ion_i = i;
  p.ion_j = j;
  p.manifold = plan.manifold;
  p.mode_lower = plan.mode_lower;
  p.mode_upper = plan.mode_upper;
  p.detuning = plan.detuning;
  p.drive_offset = plan.drive_offset;
  p.duration = opt_.gate_duration;
  const double probe = c::two_pi * 100e3;
  const double th = dynamics::entangling_angle(dynamics::make_drive(modes_, plan, p.duration, probe, probe));
  if (!(std::abs(th) > 0)) throw RangeError("pair plan gives no entangling angle");
  p.rabi_nominal = probe * std::sqrt((c::pi / 2) / std::abs(th));
  p.amp_global = record_.global_amp;
  record_.pairs.push_back(p);
}

dynamics::GateDrive Pipeline::model_drive(int i, int j, double rabi) const {
  const auto& p = record_.pair(i, j);
  const auto plan = modes::select_mode_pair(modes_[0], {modes::ion_label(p.ion_i, record_.ion_count),
                                                        modes::ion_label(p.ion_j, record_.ion_count)});
  return dynamics::make_drive(modes_, plan, p.duration, rabi, rabi);
}

json Pipeline::ms_tone_op(int i, int j, double kappa, double amp_global, int repetitions,
                          std::array<double, 2> phi) const {
  const auto& p = record_.pair(i, j);
  return {{"op", "ms"},
          {"ions", {p.ion_i, p.ion_j}},
          {"amp_red", {kappa * p.amp_red[0], kappa * p.amp_red[1]}},
          {"amp_blue", {kappa * p.amp_blue[0], kappa * p.amp_blue[1]}},
          {"amp_global", amp_global},
          {"duration_s", p.duration},
          {"drive_offset_hz", p.drive_offset / c::two_pi},
          {"frame_rotation_rad", {phi[0], phi[1]}},
          {"repeat", repetitions}};
}

json Pipeline::ms_op_with_frame(int i, int j, double theta, int repetitions, double phi) const {
  const auto& p = record_.pair(i, j);
  return ms_tone_op(i, j, p.kappa, p.global_amp_for(record_.global, theta), repetitions, {phi, phi});
}

json Pipeline::ms_op(int i, int j, double theta, int repetitions) const {
  const auto& p = record_.pair(i, j);
  return ms_op_with_frame(i, j, theta, repetitions, p.frame_rotation(theta));
}

json Pipeline::single_ion_ms(int ion, double zeta, double rabi, int repetitions, double drive_offset) const {
  const auto a = tone_amps(ion, rabi, zeta);
  return {{"op", "ms"},
          {"ions", {ion}},
          {"amp_red", {a[0]}},
          {"amp_blue", {a[1]}},
          {"amp_global", record_.global_amp},
          {"duration_s", opt_.gate_duration},
          {"drive_offset_hz", drive_offset / c::two_pi},
          {"frame_rotation_rad", {0.0}},
          {"repeat", repetitions}};
}

// ---- symmetric detuning (diagnostic)

DetuningScan Pipeline::symmetric_detuning_scan(int i, int j) {
  ensure_pair_plan(i, j);
  auto& p = record_.pair(i, j);
  for (int s = 0; s < 2; ++s) {
    const int ion = s == 0 ? p.ion_i : p.ion_j;
    if (p.amp_red[s] == 0.0) {
      const auto a = tone_amps(ion, p.rabi_nominal, record_.ions[ion].zeta);
      p.amp_red[s] = a[0];
      p.amp_blue[s] = a[1];
    }
  }
  DetuningScan out;
  out.delta = linspace(opt_.sym_lo, opt_.sym_hi, opt_.sym_points);
  const double lower = modes_[p.manifold].frequencies(p.mode_lower);
  std::vector<json> circuits;
  for (double d : out.delta) {
    auto op = ms_tone_op(i, j, p.kappa, p.amp_global, 1, {0.0, 0.0});
    op["drive_offset_hz"] = (lower + d) / c::two_pi;
    circuits.push_back(json::array({op}));
  }
  const auto r = submit("symmetric_detuning", circuits, out.delta, opt_.shots);
  std::vector<double> diff;
  fit::ShotData d00, d11;
  d00.outcome_label = "P00";
  d11.outcome_label = "P11";
  for (std::size_t k = 0; k < out.delta.size(); ++k) {
    std::array<double, 4> pops{};
    for (int v = 0; v < 4; ++v) pops[v] = double(r.pair_outcome(k, p.ion_i, p.ion_j, v)) / r.shots;
    out.populations.push_back(pops);
    diff.push_back(pops[0] - pops[3]);
    d00.push(out.delta[k] / c::two_pi, r.pair_outcome(k, p.ion_i, p.ion_j, 0), r.shots);
    d11.push(out.delta[k] / c::two_pi, r.pair_outcome(k, p.ion_i, p.ion_j, 3), r.shots);
  }
  emit("symmetric_detuning_p00", d00, "delta_hz");
  emit("symmetric_detuning_p11", d11, "delta_hz");
  out.crossings = zero_crossings(out.delta, diff);

  // model: cos(theta(delta)) changes sign where P00 = P11
  const auto fine = linspace(opt_.sym_lo, opt_.sym_hi, 8 * opt_.sym_points);
  std::vector<double> model;
  for (double dd : fine) {
    auto drv = model_drive(i, j, p.rabi_nominal * p.kappa);
    drv.pulse.detuning = lower + dd;
    try {
      model.push_back(std::cos(dynamics::entangling_angle(drv)));
    } catch (const Error&) {
      model.push_back(std::nan(""));
    }
  }
  std::vector<double> fx, fy;
  for (std::size_t k = 0; k < fine.size(); ++k)
    if (std::isfinite(model[k])) {
      fx.push_back(fine[k]);
      fy.push_back(model[k]);
    }
  out.predicted_crossings = zero_crossings(fx, fy);
  auto hz = [](std::vector<double> v) {
    for (double& x : v) x /= c::two_pi;
    return v;
  };
  note("symmetric_detuning", {{"crossings_hz", hz(out.crossings)}, {"predicted_crossings_hz", hz(out.predicted_crossings)}});
  return out;
}

// ---- zeta

std::vector<double> Pipeline::calibrate_zeta() {
  const int n = record_.ion_count;
  double offset = 0.0, rabi = 0.0;
  if (n >= 2) {
    ensure_pair_plan(0, 1);
    offset = record_.pair(0, 1).drive_offset;
    rabi = record_.pair(0, 1).rabi_nominal;
  } else {
    offset = modes_[0].frequencies(0) + modes::PlanOptions{}.fallback_offset;
    rabi = c::two_pi * 100e3;
  }
  std::vector<double> out;
  json diag = json::array();
  for (int i = 0; i < n; ++i) {
    auto scan = [&](double lo, double hi, const std::string& tag) {
      const auto z = linspace(lo, hi, opt_.zeta_points);
      std::vector<json> circuits;
      for (double zeta : z) {
        const auto block = single_ion_ms(i, zeta, rabi, opt_.echo_gates, offset);
        circuits.push_back(json::array({mw(c::pi / 2), block, mw(c::pi), block, mw(c::pi / 2)}));
      }
      const auto r = submit("zeta_echo_" + tag, circuits, z, opt_.shots);
      fit::ShotData d;
      d.outcome_label = "P0_ion" + std::to_string(i);
      for (std::size_t k = 0; k < z.size(); ++k) d.push(z[k], r.shots - r.bright(k, i), r.shots);
      emit("zeta_" + tag + "_ion" + std::to_string(i), d, "zeta");
      auto f = fit::fit_gaussian_peak(d);
      if (!f.converged) throw RangeError("no coherence peak for ion " + std::to_string(i) + ": " + f.message);
      return f;
    };
    const auto coarse = scan(opt_.zeta_lo, opt_.zeta_hi, "coarse");
    const double zc = coarse.get("center");
    const auto fine = scan(zc - opt_.zeta_fine_span, zc + opt_.zeta_fine_span, "fine");
    const double z = fine.get("center");
    record_.ions[i].zeta = z;
    out.push_back(z);
    diag.push_back({{"ion", i}, {"coarse", zc}, {"zeta", z}, {"zeta_sigma", fine.sigma("center")}});
  }
  note("zeta", {{"ions", diag}, {"echo_gates_per_side", opt_.echo_gates}});
  return out;
}

std::vector<RamseyPoint> Pipeline::ramsey_zeta_diagnostic(int ion, const std::vector<double>& zetas, int max_gates) {
  const int n = record_.ion_count;
  double offset = 0.0, rabi = 0.0;
  if (n >= 2) {
    ensure_pair_plan(0, 1);
    offset = record_.pair(0, 1).drive_offset;
    rabi = record_.pair(0, 1).rabi_nominal;
  } else {
    offset = modes_[0].frequencies(0) + modes::PlanOptions{}.fallback_offset;
    rabi = c::two_pi * 100e3;
  }
  std::vector<RamseyPoint> out;
  for (double zeta : zetas) {
    std::vector<json> circuits;
    std::vector<double> ms;
    for (int m = 0; m <= max_gates; ++m) {
      json circuit = json::array({mw(c::pi / 2)});
      if (m > 0) circuit.push_back(single_ion_ms(ion, zeta, rabi, m, offset));
      // analysis pulse a quarter turn from the preparation
      circuit.push_back(mw(c::pi / 2, c::pi / 2));
      circuits.push_back(circuit);
      ms.push_back(m);
    }
    const auto r = submit("ramsey_zeta", circuits, ms, opt_.shots);
    Eigen::VectorXd y(ms.size());
    for (std::size_t k = 0; k < ms.size(); ++k) y(k) = double(r.bright(k, ion)) / r.shots;
    // P1 = 1/2 + A/2 exp(-(m/m_s)^2) sin(g m); the pulse phases fix the sine's origin,
    // which keeps the sign of g identifiable
    auto resid = [&](const Eigen::VectorXd& q) {
      Eigen::VectorXd e(ms.size());
      for (std::size_t k = 0; k < ms.size(); ++k)
        e(k) = 0.5 + 0.5 * q(0) * std::exp(-std::pow(ms[k] / q(2), 2)) * std::sin(q(1) * ms[k]) - y(k);
      return e;
    };
    // phase-per-gate seed from a sinusoid grid
    double best_g = 0.0, best_c = 1e300;
    for (int g = -720; g <= 720; ++g) {
      const double gg = g * c::pi / 720;
      Eigen::MatrixXd A(ms.size(), 2);
      for (std::size_t k = 0; k < ms.size(); ++k) A.row(k) << 1.0, std::sin(gg * ms[k]);
      const Eigen::VectorXd sol = A.colPivHouseholderQr().solve(y);
      const double cost = (A * sol - y).squaredNorm();
      // a negative amplitude would be the mirrored phase
      if (sol(1) >= 0.0 && cost < best_c) {
        best_c = cost;
        best_g = gg;
      }
    }
    Eigen::VectorXd x0(3), sc(3);
    x0 << 1.0, best_g, std::max(2.0, double(max_gates));
    sc << 0.1, 0.05, 5.0;
    opt::Bounds b;
    b.lower = Eigen::Vector3d(0.0, -c::pi, 0.5);
    b.upper = Eigen::Vector3d(1.2, c::pi, 1e4);
    const auto fit = opt::levenberg_marquardt(resid, x0, sc, b);
    out.push_back({zeta, fit.x(1), fit.x(2)});
  }
  json d = json::array();
  for (const auto& p : out) d.push_back({{"zeta", p.zeta}, {"phase_per_gate_rad", p.phase_per_gate}, {"coherence_gates", p.coherence_gates}});
  record_.stages["ramsey_diagnostic"] = {{"timestamp", utc_now()}, {"diagnostics", d}};
  return out;
}

// ---- kappa

double Pipeline::calibrate_kappa(int i, int j, bool with_frames) {
  ensure_pair_plan(i, j);
  auto& p = record_.pair(i, j);
  const double phi = with_frames ? p.frame_rotation(c::pi / 2) : 0.0;
  json diag;
  double kc = p.kappa;
  if (!with_frames) {
    for (int s = 0; s < 2; ++s) {
      const int ion = s == 0 ? p.ion_i : p.ion_j;
      const auto a = tone_amps(ion, p.rabi_nominal, record_.ions[ion].zeta);
      p.amp_red[s] = a[0];
      p.amp_blue[s] = a[1];
    }
    p.amp_global = record_.global_amp;
    const auto ks = linspace(opt_.kappa_lo, opt_.kappa_hi, opt_.kappa_coarse_points);
    std::vector<json> circuits;
    for (double k : ks) circuits.push_back(json::array({ms_tone_op(i, j, k, p.amp_global, 1, {phi, phi})}));
    const auto r = submit("kappa_coarse", circuits, ks, opt_.shots);
    fit::ShotData d00, d11;
    d00.outcome_label = "P00";
    d11.outcome_label = "P11";
    std::vector<double> diff;
    for (std::size_t k = 0; k < ks.size(); ++k) {
      d00.push(ks[k], r.pair_outcome(k, p.ion_i, p.ion_j, 0), r.shots);
      d11.push(ks[k], r.pair_outcome(k, p.ion_i, p.ion_j, 3), r.shots);
      diff.push_back(d00.p(k) - d11.p(k));
    }
    emit("kappa_coarse_p00", d00, "kappa");
    emit("kappa_coarse_p11", d11, "kappa");
    const auto roots = zero_crossings(ks, diff);
    if (roots.empty() || diff.front() <= 0) throw NoRootError("no P00/P11 crossing in the coarse amplitude scan");
    kc = roots.front();
    diag["coarse_kappa"] = kc;
  }
  const auto ks = linspace(kc * (1 - opt_.kappa_fine_span), kc * (1 + opt_.kappa_fine_span), opt_.kappa_fine_points);
  std::vector<json> circuits;
  for (double k : ks) circuits.push_back(json::array({ms_tone_op(i, j, k, p.amp_global, 1, {phi, phi})}));
  const auto r = submit(with_frames ? "kappa_refine" : "kappa_fine", circuits, ks, opt_.kappa_shots);
  fit::ShotData d00, d11;
  d00.outcome_label = "P00";
  d11.outcome_label = "P11";
  for (std::size_t k = 0; k < ks.size(); ++k) {
    d00.push(ks[k], r.pair_outcome(k, p.ion_i, p.ion_j, 0), r.shots);
    d11.push(ks[k], r.pair_outcome(k, p.ion_i, p.ion_j, 3), r.shots);
  }
  const std::string tag = with_frames ? "kappa_refine" : "kappa_fine";
  emit(tag + "_p00", d00, "kappa");
  emit(tag + "_p11", d11, "kappa");
  const auto f = fit::linear_crossing(d00, d11);
  const double k = f.get("x0");
  if (!(k > 0) || k < ks.front() - (ks.back() - ks.front()) || k > ks.back() + (ks.back() - ks.front()))
    throw NoRootError("fine amplitude crossing outside the scan");
  diag["kappa"] = k;
  diag["kappa_sigma"] = f.sigma("x0");
  diag["fine_center_ratio"] = k / kc;
  diag["frame_rotation_rad"] = phi;
  p.kappa = k;
  note(with_frames ? "kappa_refine" : "kappa", diag);
  return k;
}

// ---- frame rotation anchors

FrameAnchor Pipeline::calibrate_frame_direct(int i, int j, int repetitions) {
  auto& p = record_.pair(i, j);
  FrameAnchor a;
  a.repetitions = repetitions;
  a.theta = c::pi / repetitions;
  const double ag = p.global_amp_for(record_.global, a.theta);
  const double span = opt_.frame_span_deg * c::deg * 2.0 / repetitions;
  const auto phis = linspace(-span, span, opt_.frame_points);
  std::vector<json> circuits;
  for (double phi : phis) circuits.push_back(json::array({ms_tone_op(i, j, p.kappa, ag, repetitions, {phi, phi})}));
  const auto r = submit("frame_M" + std::to_string(repetitions), circuits, phis, opt_.frame_shots);
  fit::ShotData d;
  d.outcome_label = "P11";
  for (std::size_t k = 0; k < phis.size(); ++k) d.push(phis[k], r.pair_outcome(k, p.ion_i, p.ion_j, 3), r.shots);
  emit("frame_M" + std::to_string(repetitions), d, "phi_rad");
  const auto g = fit::fit_gaussian_peak(d);
  if (!g.converged) throw RangeError("frame rotation scan M=" + std::to_string(repetitions) + ": " + g.message);
  a.phi = g.get("center");
  try {
    a.phi_mle = fit::mle_upper_half_gaussian(d).get("center");
  } catch (const Error&) {
    a.phi_mle = std::nan("");
  }
  a.valid = true;
  return a;
}

std::array<FrameAnchor, 2> Pipeline::calibrate_frame_rotation(int i, int j) {
  auto& p = record_.pair(i, j);
  json diag = json::array();
  for (int s = 0; s < 2; ++s) {
    p.anchors[s] = calibrate_frame_direct(i, j, opt_.anchor_reps[s]);
    diag.push_back({{"repetitions", p.anchors[s].repetitions},
                    {"phi_deg", p.anchors[s].phi / c::deg},
                    {"phi_mle_deg", p.anchors[s].phi_mle / c::deg}});
  }
  note("frame_rotation", {{"anchors", diag}});
  return p.anchors;
}

// ---- fidelity

FidelityReport Pipeline::estimate_fidelity(int i, int j, double theta) {
  const auto& p = record_.pair(i, j);
  const auto op = ms_op(i, j, theta, 1);
  FidelityReport rep;
  rep.theta = theta;
  const auto pr = submit("fidelity_populations", {json::array({op})}, {theta}, opt_.fidelity_shots);
  const long long n00 = pr.pair_outcome(0, p.ion_i, p.ion_j, 0);
  const long long n11 = pr.pair_outcome(0, p.ion_i, p.ion_j, 3);
  rep.p00 = double(n00) / pr.shots;
  rep.p11 = double(n11) / pr.shots;
  const auto w00 = fit::wilson_interval(n00, pr.shots, opt_.confidence_z);
  const auto w11 = fit::wilson_interval(n11, pr.shots, opt_.confidence_z);

  const auto phases = linspace(0.0, c::pi * (opt_.parity_phases - 1) / opt_.parity_phases, opt_.parity_phases);
  std::vector<json> circuits;
  for (double ph : phases)
    circuits.push_back(json::array(
        {op, json{{"op", "r"}, {"ions", {p.ion_i, p.ion_j}}, {"angle_rad", c::pi / 2}, {"phase_rad", ph}}}));
  const auto r = submit("parity_scan", circuits, phases, opt_.fidelity_shots);
  fit::ShotData d;
  d.outcome_label = "P_even";
  for (std::size_t k = 0; k < phases.size(); ++k) d.push(phases[k], r.parity_even(k, p.ion_i, p.ion_j), r.shots);
  emit("parity_scan", d, "analysis_phase_rad");
  const auto f = fit::fit_parity_oscillation(d, 2.0);
  rep.contrast = f.extra.at("contrast");
  rep.contrast_sigma = f.extra.at("contrast_sigma");
  const double ez = opt_.confidence_z * rep.contrast_sigma;
  rep.fidelity = fit::fidelity_with_errors(rep.p00, {rep.p00 - w00.first, w00.second - rep.p00}, rep.p11,
                                           {rep.p11 - w11.first, w11.second - rep.p11}, rep.contrast, {ez, ez}, theta);
  note("fidelity", to_json(rep));
  return rep;
}

// ---- schedule

void Pipeline::run_schedule(const std::string& checkpoint_path) {
  sync_backend_state();
  const int n = record_.ion_count;
  auto save = [&] {
    if (!checkpoint_path.empty()) save_record(record_, checkpoint_path);
  };
  for (const auto& stage : stage_names()) {
    if (record_.done(stage)) continue;
    if (n < 2 && (stage == "symmetric_detuning" || stage == "kappa" || stage == "frame_rotation" ||
                  stage == "kappa_refine" || stage == "fidelity"))
      continue;
    try {
      if (stage == "align") align_chain();
      else if (stage == "pi_times") calibrate_pi_times();
      else if (stage == "sidebands") find_sidebands();
      else if (stage == "symmetric_detuning") symmetric_detuning_scan(0, 1);
      else if (stage == "zeta") calibrate_zeta();
      else if (stage == "kappa") calibrate_kappa(0, 1, false);
      else if (stage == "frame_rotation") calibrate_frame_rotation(0, 1);
      else if (stage == "kappa_refine") calibrate_kappa(0, 1, true);
      else if (stage == "fidelity") estimate_fidelity(0, 1, c::pi / 2);
    } catch (const StageError&) {
      save();
      throw;
    } catch (const std::exception& e) {
      save();
      throw StageError(stage, e.what());
    }
    record_.completed.push_back(stage);
    save();
  }
}

}  // namespace msgate::calib

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>

#include <CLI11.hpp>

#include "msgate/calibration_record.hpp"
#include "msgate/config.hpp"
#include "msgate/constants.hpp"
#include "msgate/errors.hpp"
#include "msgate/frame_compiler.hpp"
#include "msgate/gate_dynamics.hpp"
#include "msgate/pipeline.hpp"
#include "msgate/virtual_experiment.hpp"

namespace fs = std::filesystem;
namespace c = msgate::constants;
using nlohmann::json;
using namespace msgate;

namespace {

struct Common {
  std::string config_path;
  std::string out_dir;
};

config::ArtifactConfig load(const Common& co, int ion_override = 0) {
  auto cfg = co.config_path.empty() ? config::ArtifactConfig::defaults(ion_override > 0 ? ion_override : 2)
                                    : config::load_config(co.config_path);
  if (ion_override > 0 && ion_override != cfg.trap.ion_count) {
    json j = config::to_json(cfg);
    j["trap"]["ion_count"] = ion_override;
    j.erase("truth");
    j["pipeline"].erase("nominal");
    cfg = config::config_from_json(j);
  }
  config::apply_environment(cfg);
  return cfg;
}

std::string run_dir(const Common& co, const config::ArtifactConfig& cfg) {
  const std::string d = co.out_dir.empty() ? config::dated_run_dir(cfg) : co.out_dir;
  fs::create_directories(d);
  return d;
}

void write_json(const std::string& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path);
  out << j.dump(2) << "\n";
}

std::unique_ptr<protocol::Backend> make_backend(const config::ArtifactConfig& cfg, const std::string& command) {
  const std::string cmd = command.empty() ? cfg.backend_command : command;
  if (!cmd.empty()) return std::make_unique<protocol::SubprocessBackend>(cmd);
  return std::make_unique<ve::VirtualExperiment>(cfg.truth);
}

// ---- modes

int cmd_modes(const Common& co, int ions) {
  const auto cfg = load(co, ions);
  const auto dir = run_dir(co, cfg);
  const auto m = modes::radial_manifolds(cfg.trap);
  json report;
  report["trap"] = modes::to_json(cfg.trap);
  report["manifolds"] = {modes::to_json(m[0]), modes::to_json(m[1])};
  report["pair_plans"] = json::array();
  for (const auto& p : modes::all_pair_plans(m[0])) report["pair_plans"].push_back(modes::to_json(p));
  write_json(dir + "/modes.json", report);
  std::ofstream csv(dir + "/modes.csv");
  csv << "manifold,mode,frequency_hz";
  for (int i = 0; i < cfg.trap.ion_count; ++i) csv << ",eta_ion" << i << "_dimensionless";
  csv << "\n";
  for (const auto& s : m)
    for (int k = 0; k < s.frequencies.size(); ++k) {
      char buf[64];
      std::snprintf(buf, sizeof buf, "%d,%d,%.6f", s.manifold, k, s.frequencies(k) / c::two_pi);
      csv << buf;
      for (int i = 0; i < cfg.trap.ion_count; ++i) csv << "," << s.lamb_dicke(k, i);
      csv << "\n";
    }
  std::cout << json{{"ion_count", cfg.trap.ion_count},
                    {"modes_per_manifold", m[0].frequencies.size()},
                    {"pair_plans", report["pair_plans"].size()},
                    {"output", dir}}
                   .dump(2)
            << "\n";
  return 0;
}

// ---- lightshift

int cmd_lightshift(const Common& co, double zlo, double zhi, int zn, double rabi_hz) {
  const auto cfg = load(co);
  const auto dir = run_dir(co, cfg);
  comb::CombSpec spec = cfg.comb;
  bool zero = false;
  try {
    if (rabi_hz > 0) spec = comb::scaled_to_rabi(spec, c::two_pi * rabi_hz);
  } catch (const RangeError&) {
    zero = true;  // all amplitudes zero: every shift is zero
  }
  const auto b = comb::total_shift(spec);
  json out = comb::to_json(b);
  out["rabi_target_hz"] = rabi_hz;
  out["zeta"] = zero ? 0.0 : comb::zeta_of(spec);
  write_json(dir + "/lightshift.json", out);
  if (zn > 0) {
    std::vector<double> zs;
    for (int k = 0; k < zn; ++k) zs.push_back(zn == 1 ? zlo : zlo + (zhi - zlo) * k / (zn - 1));
    std::ofstream csv(dir + "/zeta_scan.csv");
    csv << "zeta,total_hz,gg_hz,gb_hz,gr_hz,bb_hz,br_hz,rr_hz\n";
    const auto base = spec;
    const auto t = zero ? comb::CombTables{} : comb::build_tables(base);
    for (double z : zs) {
      comb::ShiftBreakdown s;
      if (!zero) s = comb::total_shift(comb::with_zeta(base, z), t);
      auto u = [&](comb::Comb a, comb::Comb bb) { return s.unordered(a, bb) / c::two_pi; };
      using comb::Comb;
      char buf[256];
      std::snprintf(buf, sizeof buf, "%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f\n", z, s.total / c::two_pi,
                    u(Comb::g, Comb::g), u(Comb::g, Comb::b), u(Comb::g, Comb::r), u(Comb::b, Comb::b),
                    u(Comb::b, Comb::r), u(Comb::r, Comb::r));
      csv << buf;
    }
  }
  std::printf("total light shift: %.3f Hz (2pi x Hz)\noutput: %s\n", b.total / c::two_pi, dir.c_str());
  return 0;
}

// ---- calibrate

int cmd_calibrate(const Common& co, const std::string& resume, const std::string& backend_cmd) {
  const auto cfg = load(co);
  const auto dir = run_dir(co, cfg);
  auto backend = make_backend(cfg, backend_cmd);
  auto opts = cfg.pipeline;
  if (opts.scan_dir.empty()) opts.scan_dir = dir + "/scans";
  calib::CalibrationRecord rec;
  if (!resume.empty()) rec = calib::load_record(resume);
  calib::Pipeline p(*backend, opts, rec);
  const std::string ckpt = dir + "/record.json";
  try {
    p.run_schedule(ckpt);
  } catch (const StageError& e) {
    std::fprintf(stderr, "calibrate failed at stage %s: %s\ncheckpoint: %s\n", e.stage.c_str(), e.what(), ckpt.c_str());
    return 3;
  }
  write_json(dir + "/config_used.json", config::to_json(cfg));
  const auto& r = p.record();
  json summary{{"record", ckpt}, {"well_m", r.well}, {"stages", r.completed}};
  if (!r.pairs.empty()) {
    const auto& pr = r.pairs[0];
    summary["kappa"] = pr.kappa;
    summary["anchors_deg"] = {pr.anchors[0].phi / c::deg, pr.anchors[1].phi / c::deg};
    if (r.stages.contains("fidelity")) summary["fidelity"] = r.stages["fidelity"]["diagnostics"]["formatted"];
  }
  std::cout << summary.dump(2) << "\n";
  return 0;
}

// ---- simulate

json circuit_to_ops(const frames::Circuit& circ, const calib::Pipeline* p, const frames::ExpandOptions& eo) {
  const auto rc = frames::resolve_waveform_phases(circ, eo);
  json ops = json::array();
  for (const auto& pu : rc.pulses) {
    if (pu.kind == "ry_co" || pu.kind == "ry_cu") {
      ops.push_back({{"op", "r"}, {"ions", pu.qubits}, {"angle_rad", pu.angle}, {"phase_rad", pu.waveform_phase.at(0)}});
    } else if (pu.kind == "ms") {
      if (!p) throw ConfigError("MS pulses need a calibration record (--record)");
      const int i = pu.qubits.at(0), j = pu.qubits.at(1);
      double ph_i = pu.waveform_phase.at(0);
      if (pu.angle < 0) ph_i += c::pi;
      auto op = p->ms_op(i, j, pu.angle, 1);
      const auto& pr = p->record().pair(i, j);
      // record order may differ from the pulse order
      const bool swapped = pr.ion_i != i;
      std::array<double, 2> ph{ph_i, pu.waveform_phase.at(1)};
      if (swapped) std::swap(ph[0], ph[1]);
      op["phase_rad"] = ph;
      if (!pu.frame_rotation.empty()) {
        auto fr = op["frame_rotation_rad"].get<std::vector<double>>();
        fr[0] += pu.frame_rotation.at(swapped ? 1 : 0);
        fr[1] += pu.frame_rotation.at(swapped ? 0 : 1);
        op["frame_rotation_rad"] = fr;
      }
      ops.push_back(op);
    } else {
      throw ConfigError("unsupported pulse kind " + pu.kind);
    }
  }
  return ops;
}

int cmd_simulate(const Common& co, const std::string& circuit_path, const std::string& record_path, long long shots,
                 double native_phase) {
  const auto cfg = load(co);
  const auto dir = run_dir(co, cfg);
  ve::VirtualExperiment v(cfg.truth);
  std::unique_ptr<calib::Pipeline> p;
  calib::CalibrationRecord rec;
  if (!record_path.empty()) {
    rec = calib::load_record(record_path);
    p = std::make_unique<calib::Pipeline>(v, cfg.pipeline, rec);
  }
  json ops;
  json out;
  const bool is_json = fs::path(circuit_path).extension() == ".json";
  if (is_json) {
    std::ifstream in(circuit_path);
    if (!in) throw ConfigError("cannot read " + circuit_path);
    ops = json::parse(in);
    if (ops.is_object() && ops.contains("ops")) ops = ops["ops"];
  } else {
    const auto circ = frames::read_circuit_file(circuit_path);
    if (circ.qubit_count != v.ion_count()) throw ConfigError("circuit qubit count differs from the configured chain");
    frames::ExpandOptions eo{native_phase};
    ops = circuit_to_ops(circ, p.get(), eo);
    const auto u = frames::circuit_unitary(circ, eo);
    json ideal = json::array();
    for (int s = 0; s < u.rows(); ++s) ideal.push_back(std::norm(u(s, 0)));
    out["ideal_probabilities"] = ideal;
  }
  if (!ops.is_array()) throw ConfigError("circuit must be a list of ops");
  if (p && rec.done("align")) {
    protocol::ExperimentJob wj;
    wj.shots = 1;
    wj.circuits = {json::array({json{{"op", "well"}, {"position_m", rec.well}}})};
    v.run(wj);
  }
  json gates = json::array();
  for (const auto& op : ops)
    if (op.value("op", "") == "ms" && op.at("ions").size() == 2) {
      const auto d = v.drive_for(op);
      auto g = dynamics::to_json(dynamics::simulate_sequence_analytic(d, op.value("repeat", 1)));
      g.erase("rho");
      gates.push_back(g);
    }
  out["gate_outcomes"] = gates;
  out["probabilities"] = v.probabilities(ops);
  protocol::ExperimentJob job;
  job.label = "simulate";
  job.shots = shots;
  job.circuits = {ops};
  const auto r = v.run(job);
  out["shots"] = shots;
  out["counts"] = r.counts[0];
  out["ops"] = ops;
  write_json(dir + "/simulate.json", out);
  std::ofstream csv(dir + "/counts.csv");
  csv << "outcome,counts,probability\n";
  const int n = v.ion_count();
  for (std::size_t s = 0; s < r.counts[0].size(); ++s) {
    std::string bits;
    for (int q = 0; q < n; ++q) bits += ((s >> (n - 1 - q)) & 1) ? '1' : '0';
    csv << bits << "," << r.counts[0][s] << "," << out["probabilities"][s].get<double>() << "\n";
  }
  json brief = out;
  brief.erase("ops");
  std::cout << brief.dump(2) << "\n";
  return 0;
}

// ---- fidelity

int cmd_fidelity(const Common& co, const std::string& record_path, std::vector<int> pair, double theta) {
  const auto cfg = load(co);
  const auto dir = run_dir(co, cfg);
  ve::VirtualExperiment v(cfg.truth);
  calib::CalibrationRecord rec;
  auto opts = cfg.pipeline;
  opts.scan_dir = dir + "/scans";
  if (!record_path.empty()) rec = calib::load_record(record_path);
  calib::Pipeline p(v, opts, rec);
  if (record_path.empty()) {
    try {
      p.run_schedule(dir + "/record.json");
    } catch (const StageError& e) {
      std::fprintf(stderr, "calibrate failed at stage %s: %s\n", e.stage.c_str(), e.what());
      return 3;
    }
  } else {
    protocol::ExperimentJob wj;
    wj.shots = 1;
    wj.circuits = {json::array({json{{"op", "well"}, {"position_m", rec.well}}})};
    v.run(wj);
  }
  const auto rep = p.estimate_fidelity(pair.at(0), pair.at(1), theta);
  write_json(dir + "/fidelity.json", calib::to_json(rep));
  std::printf("F = %s\noutput: %s\n", rep.formatted().c_str(), dir.c_str());
  return 0;
}

// ---- compile

int cmd_compile(const std::string& circuit_path, const std::string& out_path, double native_phase) {
  const auto circ = frames::read_circuit_file(circuit_path);
  const auto rc = frames::resolve_waveform_phases(circ, frames::ExpandOptions{native_phase});
  const auto j = frames::to_json(rc);
  if (!out_path.empty()) write_json(out_path, j);
  std::cout << j.dump(2) << "\n";
  return 0;
}

int cmd_serve(const Common& co) {
  const auto cfg = load(co);
  ve::VirtualExperiment v(cfg.truth);
  protocol::serve(v, std::cin, std::cout);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Ion-trap MS gate modelling, calibration and compilation toolkit"};
  app.require_subcommand(1);
  Common co;
  auto add_common = [&](CLI::App* s) {
    s->add_option("-c,--config", co.config_path, "configuration file (JSON)");
    s->add_option("-o,--out", co.out_dir, "output directory (default: dated run directory)");
  };

  int ions = 0;
  auto* modes_cmd = app.add_subcommand("modes", "radial mode spectrum and gate pair plans");
  add_common(modes_cmd);
  modes_cmd->add_option("--ions", ions, "override the ion count");

  double zlo = 1.0, zhi = 1.2, rabi_hz = 122.1e3;
  int zn = 21;
  auto* ls_cmd = app.add_subcommand("lightshift", "comb fourth-order light shift and zeta scan");
  add_common(ls_cmd);
  ls_cmd->add_option("--zeta-from", zlo, "first blue/red ratio");
  ls_cmd->add_option("--zeta-to", zhi, "last blue/red ratio");
  ls_cmd->add_option("--zeta-steps", zn, "ratio count (0 disables the scan)");
  ls_cmd->add_option("--rabi-hz", rabi_hz, "two-photon Rabi rate target, Hz (0 keeps the configured amplitudes)");

  std::string resume, backend_cmd;
  auto* cal_cmd = app.add_subcommand("calibrate", "run the calibration schedule");
  add_common(cal_cmd);
  cal_cmd->add_option("--resume", resume, "resume from a checkpointed record");
  cal_cmd->add_option("--backend", backend_cmd, "external backend command speaking the job protocol");

  std::string circuit, record;
  long long shots = 500;
  double native = 0.0;
  auto* sim_cmd = app.add_subcommand("simulate", "run a circuit on the virtual experiment");
  add_common(sim_cmd);
  sim_cmd->add_option("circuit", circuit, "circuit file (.json op list or text circuit)")->required();
  sim_cmd->add_option("--record", record, "calibration record for MS pulses");
  sim_cmd->add_option("--shots", shots, "shots");
  sim_cmd->add_option("--native-phase", native, "native MS sign phase, rad");

  std::vector<int> pair{0, 1};
  std::string theta_text = "pi/2";
  auto* fid_cmd = app.add_subcommand("fidelity", "estimate MS gate fidelity with intervals");
  add_common(fid_cmd);
  fid_cmd->add_option("--record", record, "calibration record (calibrates first when absent)");
  fid_cmd->add_option("--pair", pair, "ion pair")->expected(2);
  fid_cmd->add_option("--theta", theta_text, "entangling angle (accepts pi expressions)");

  std::string compile_out;
  auto* comp_cmd = app.add_subcommand("compile", "resolve waveform phases of a circuit");
  comp_cmd->add_option("circuit", circuit, "text circuit file")->required();
  comp_cmd->add_option("-o,--out", compile_out, "write the pulse list here");
  comp_cmd->add_option("--native-phase", native, "native MS sign phase, rad");

  auto* serve_cmd = app.add_subcommand("serve", "serve the virtual experiment over stdin/stdout");
  serve_cmd->add_option("-c,--config", co.config_path, "configuration file (JSON)");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*modes_cmd) return cmd_modes(co, ions);
    if (*ls_cmd) return cmd_lightshift(co, zlo, zhi, zn, rabi_hz);
    if (*cal_cmd) return cmd_calibrate(co, resume, backend_cmd);
    if (*sim_cmd) return cmd_simulate(co, circuit, record, shots, native);
    if (*fid_cmd) return cmd_fidelity(co, record, pair, frames::parse_angle(theta_text));
    if (*comp_cmd) return cmd_compile(circuit, compile_out, native);
    if (*serve_cmd) return cmd_serve(co);
  } catch (const StageError& e) {
    std::fprintf(stderr, "error at stage %s: %s\n", e.stage.c_str(), e.what());
    return 3;
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "configuration error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}

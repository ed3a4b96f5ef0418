#include "msgate/calibration_record.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "msgate/constants.hpp"
#include "msgate/errors.hpp"

namespace msgate::calib {

namespace c = msgate::constants;
using nlohmann::json;

double PairRecord::frame_rotation(double theta) const {
  const auto& a = anchors[0];
  const auto& b = anchors[1];
  if (!a.valid || !b.valid) throw RangeError("frame rotation anchors are not calibrated");
  const double span = a.theta - b.theta;
  if (!(std::abs(span) > 0)) throw RangeError("frame rotation anchors coincide");
  const double slope = (a.phi - b.phi) / span;
  if (!std::isfinite(slope)) throw RangeError("frame rotation slope is not finite");
  return b.phi + slope * (std::abs(theta) - b.theta);
}

double PairRecord::global_amp_for(const pulse::AomModel& global, double theta) const {
  pulse::GlobalScaleCalibration cal{global, amp_global, c::pi / 2};
  return pulse::theta_to_global_scale(cal, std::abs(theta));
}

bool CalibrationRecord::done(const std::string& stage) const {
  return std::find(completed.begin(), completed.end(), stage) != completed.end();
}

PairRecord& CalibrationRecord::pair(int i, int j) {
  for (auto& p : pairs)
    if ((p.ion_i == i && p.ion_j == j) || (p.ion_i == j && p.ion_j == i)) return p;
  throw RangeError("no calibrated pair (" + std::to_string(i) + "," + std::to_string(j) + ")");
}

const PairRecord& CalibrationRecord::pair(int i, int j) const {
  return const_cast<CalibrationRecord*>(this)->pair(i, j);
}

namespace {

json anchor_json(const FrameAnchor& a) {
  return {{"repetitions", a.repetitions}, {"theta_rad", a.theta}, {"phi_rad", a.phi},
          {"phi_deg", a.phi / c::deg}, {"phi_mle_rad", a.phi_mle}, {"valid", a.valid}};
}

FrameAnchor anchor_from(const json& j) {
  FrameAnchor a;
  a.repetitions = j.at("repetitions").get<int>();
  a.theta = j.at("theta_rad").get<double>();
  a.phi = j.at("phi_rad").get<double>();
  a.phi_mle = j.value("phi_mle_rad", 0.0);
  a.valid = j.at("valid").get<bool>();
  return a;
}

}  // namespace

json to_json(const CalibrationRecord& r) {
  json ions = json::array();
  for (const auto& i : r.ions)
    ions.push_back({{"counter", pulse::to_json(i.counter)},
                    {"co", pulse::to_json(i.co)},
                    {"counter_pi_amp", i.counter_pi_amp},
                    {"co_pi_amp", i.co_pi_amp},
                    {"zeta", i.zeta}});
  json pairs = json::array();
  for (const auto& p : r.pairs)
    pairs.push_back({{"ions", {p.ion_i, p.ion_j}},
                     {"manifold", p.manifold},
                     {"mode_lower", p.mode_lower},
                     {"mode_upper", p.mode_upper},
                     {"detuning_hz", p.detuning / c::two_pi},
                     {"drive_offset_hz", p.drive_offset / c::two_pi},
                     {"duration_s", p.duration},
                     {"rabi_nominal_hz", p.rabi_nominal / c::two_pi},
                     {"amp_red", p.amp_red},
                     {"amp_blue", p.amp_blue},
                     {"kappa", p.kappa},
                     {"amp_global", p.amp_global},
                     {"anchors", {anchor_json(p.anchors[0]), anchor_json(p.anchors[1])}}});
  std::vector<std::vector<double>> sb_hz;
  for (const auto& m : r.sidebands) {
    sb_hz.emplace_back();
    for (double v : m) sb_hz.back().push_back(v / c::two_pi);
  }
  return {{"version", r.version},   {"ion_count", r.ion_count},       {"well_m", r.well},
          {"sidebands_hz", sb_hz},  {"global", pulse::to_json(r.global)}, {"global_amp", r.global_amp},
          {"ions", ions},           {"pairs", pairs},                 {"completed", r.completed},
          {"stages", r.stages}};
}

CalibrationRecord record_from_json(const json& j) {
  CalibrationRecord r;
  r.version = j.at("version").get<int>();
  if (r.version != kRecordVersion)
    throw ConfigError("calibration record version " + std::to_string(r.version) + " is not supported");
  r.ion_count = j.at("ion_count").get<int>();
  r.well = j.at("well_m").get<double>();
  for (const auto& m : j.at("sidebands_hz")) {
    r.sidebands.emplace_back();
    for (double v : m.get<std::vector<double>>()) r.sidebands.back().push_back(v * c::two_pi);
  }
  r.global = pulse::aom_from_json(j.at("global"));
  r.global_amp = j.at("global_amp").get<double>();
  for (const auto& ij : j.at("ions")) {
    IonRecord i;
    i.counter = pulse::aom_from_json(ij.at("counter"));
    i.co = pulse::aom_from_json(ij.at("co"));
    i.counter_pi_amp = ij.at("counter_pi_amp").get<double>();
    i.co_pi_amp = ij.at("co_pi_amp").get<double>();
    i.zeta = ij.at("zeta").get<double>();
    r.ions.push_back(i);
  }
  for (const auto& pj : j.at("pairs")) {
    PairRecord p;
    const auto ions = pj.at("ions").get<std::vector<int>>();
    if (ions.size() != 2) throw ConfigError("pair record needs two ions");
    p.ion_i = ions[0];
    p.ion_j = ions[1];
    p.manifold = pj.at("manifold").get<int>();
    p.mode_lower = pj.at("mode_lower").get<int>();
    p.mode_upper = pj.at("mode_upper").get<int>();
    p.detuning = pj.at("detuning_hz").get<double>() * c::two_pi;
    p.drive_offset = pj.at("drive_offset_hz").get<double>() * c::two_pi;
    p.duration = pj.at("duration_s").get<double>();
    p.rabi_nominal = pj.at("rabi_nominal_hz").get<double>() * c::two_pi;
    p.amp_red = pj.at("amp_red").get<std::array<double, 2>>();
    p.amp_blue = pj.at("amp_blue").get<std::array<double, 2>>();
    p.kappa = pj.at("kappa").get<double>();
    p.amp_global = pj.at("amp_global").get<double>();
    const auto& an = pj.at("anchors");
    p.anchors = {anchor_from(an.at(0)), anchor_from(an.at(1))};
    r.pairs.push_back(p);
  }
  r.completed = j.at("completed").get<std::vector<std::string>>();
  r.stages = j.value("stages", json::object());
  return r;
}

void save_record(const CalibrationRecord& r, const std::string& path) {
  const std::filesystem::path p(path);
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  const auto tmp = path + ".tmp";
  {
    std::ofstream out(tmp);
    if (!out) throw ConfigError("cannot write " + tmp);
    out << to_json(r).dump(2) << "\n";
  }
  std::filesystem::rename(tmp, path);
}

CalibrationRecord load_record(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read calibration record " + path);
  return record_from_json(json::parse(in));
}

}  // namespace msgate::calib

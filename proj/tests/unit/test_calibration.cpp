#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <memory>
#include <sstream>

#include "msgate/calibration_record.hpp"
#include "msgate/comb_lightshift.hpp"
#include "msgate/constants.hpp"
#include "msgate/errors.hpp"
#include "msgate/pipeline.hpp"
#include "msgate/virtual_experiment.hpp"

using namespace msgate;
namespace c = msgate::constants;
using nlohmann::json;

namespace {

ve::Truth noiseless_truth() {
  auto t = ve::Truth::defaults(2);
  t.noiseless = true;
  return t;
}

// one noiseless calibration shared by the read-only checks below
struct Calibrated {
  ve::VirtualExperiment v{noiseless_truth()};
  calib::Pipeline p{v, calib::PipelineOptions{}};
  Calibrated() { p.run_schedule(); }
};

Calibrated& calibrated() {
  static Calibrated cal;
  return cal;
}

json without_stages(const calib::CalibrationRecord& r) {
  auto j = calib::to_json(r);
  j.erase("stages");
  return j;
}

// rejects every job whose label starts with `prefix`
class FailingBackend : public protocol::Backend {
 public:
  FailingBackend(protocol::Backend& inner, std::string prefix) : inner_(inner), prefix_(std::move(prefix)) {}
  protocol::ExperimentResult run(const protocol::ExperimentJob& job) override {
    if (job.label.rfind(prefix_, 0) == 0) {
      protocol::ExperimentResult r;
      r.label = job.label;
      r.error = "injected failure";
      return r;
    }
    return inner_.run(job);
  }
  int ion_count() const override { return inner_.ion_count(); }
  std::string name() const override { return "failing"; }

 private:
  protocol::Backend& inner_;
  std::string prefix_;
};

std::string temp_path(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "msgate_unit";
  std::filesystem::create_directories(dir);
  return (dir / name).string();
}

}  // namespace

TEST_CASE("record json round trip and file io") {
  calib::CalibrationRecord r;
  r.ion_count = 2;
  r.well = 1.5e-7;
  r.sidebands = {{c::two_pi * 2.4e6, c::two_pi * 2.3e6}, {c::two_pi * 2.15e6, c::two_pi * 2.03e6}};
  r.global = {188.0, c::two_pi * 73e3};
  r.global_amp = 188.0;
  r.ions.resize(2);
  r.ions[1].zeta = 1.12;
  r.ions[1].counter = {171.0, c::two_pi * 70e3};
  calib::PairRecord p;
  p.kappa = 0.93;
  p.amp_red = {80.0, 81.0};
  p.amp_blue = {90.0, 91.0};
  p.anchors[0] = {2, c::pi / 2, -0.12, -0.121, true};
  p.anchors[1] = {32, c::pi / 32, -0.008, -0.0081, true};
  r.pairs.push_back(p);
  r.completed = {"align", "pi_times"};
  r.stages["align"] = {{"timestamp", "x"}};

  const auto back = calib::record_from_json(calib::to_json(r));
  CHECK(calib::to_json(back) == calib::to_json(r));
  const auto path = temp_path("record.json");
  calib::save_record(r, path);
  CHECK(calib::to_json(calib::load_record(path)) == calib::to_json(r));
  CHECK(back.done("pi_times"));
  CHECK_FALSE(back.done("zeta"));
  CHECK(back.pair(1, 0).kappa == 0.93);
  CHECK_THROWS_AS(back.pair(0, 2), RangeError);
  CHECK(back.pairs[0].red_amps()[1] == doctest::Approx(0.93 * 81.0));

  auto bad = calib::to_json(r);
  bad["version"] = 99;
  CHECK_THROWS_AS(calib::record_from_json(bad), ConfigError);
}

TEST_CASE("frame rotation interpolates between anchors") {
  calib::PairRecord p;
  CHECK_THROWS_AS(p.frame_rotation(c::pi / 2), RangeError);
  p.anchors[0] = {2, c::pi / 2, -0.12, 0.0, true};
  p.anchors[1] = {32, c::pi / 32, -0.0075, 0.0, true};
  CHECK(p.frame_rotation(c::pi / 2) == doctest::Approx(-0.12).epsilon(1e-12));
  CHECK(p.frame_rotation(c::pi / 32) == doctest::Approx(-0.0075).epsilon(1e-12));
  const double mid = 0.5 * (c::pi / 2 + c::pi / 32);
  CHECK(p.frame_rotation(mid) == doctest::Approx(0.5 * (-0.12 - 0.0075)).epsilon(1e-12));
  CHECK(p.frame_rotation(-c::pi / 2) == p.frame_rotation(c::pi / 2));
  p.anchors[1].theta = p.anchors[0].theta;
  CHECK_THROWS_AS(p.frame_rotation(1.0), RangeError);
}

TEST_CASE("alignment") {
  SUBCASE("centered beams give a zero well") {
    auto t = noiseless_truth();
    t.beam_offset = 0.0;
    ve::VirtualExperiment v(t);
    calib::Pipeline p(v, {});
    CHECK(std::abs(p.align_chain()) < 1e-8);
  }
  SUBCASE("0.4 um offset at 500 shots") {
    auto t = ve::Truth::defaults(2);
    t.beam_offset = 0.4e-6;
    t.seed = 7;
    ve::VirtualExperiment v(t);
    calib::PipelineOptions o;
    o.shots = 500;
    calib::Pipeline p(v, o);
    CHECK(std::abs(p.align_chain() - 0.4e-6) < 0.1e-6);
  }
  SUBCASE("asymmetric beams land on the maximum of the average transfer") {
    auto t = noiseless_truth();
    t.beam_offset = 0.0;
    t.beam_extra = {-0.3e-6, 0.5e-6};
    ve::VirtualExperiment v(t);
    calib::PipelineOptions o;
    calib::Pipeline p(v, o);
    const double got = p.align_chain();
    const double dur = 0.8 * c::pi / o.nominal.global.Xi;
    auto avg = [&](double x) {
      double s = 0.0;
      for (int i = 0; i < 2; ++i) {
        const double w = v.counter_rabi(i, o.nominal.ia_a_sat, o.nominal.global.a_sat, x);
        s += 0.5 * (1.0 - std::exp(-w * dur / t.rabi_decay_xi) * std::cos(w * dur));
      }
      return s / 2;
    };
    double best = 0.0, bv = -1.0;
    for (int k = -3000; k <= 3000; ++k) {
      const double x = k * 1e-9;
      if (avg(x) > bv) {
        bv = avg(x);
        best = x;
      }
    }
    CHECK(best == doctest::Approx(0.1e-6).epsilon(0.5));
    CHECK(std::abs(got - best) < 0.05e-6);
  }
}

TEST_CASE("pi times from noiseless scans") {
  auto& cal = calibrated();
  const auto& r = cal.p.record();
  const auto& o = cal.p.options();
  REQUIRE(r.ions.size() == 2);
  for (int i = 0; i < 2; ++i) {
    const double counter = cal.v.counter_rabi(i, r.ions[i].counter_pi_amp, r.global_amp, r.well);
    const double co = cal.v.co_rabi(i, r.ions[i].co_pi_amp, r.well);
    CHECK(counter * o.counter_pi_time == doctest::Approx(c::pi).epsilon(2e-3));
    CHECK(co * o.co_pi_time == doctest::Approx(c::pi).epsilon(2e-3));
  }

  // a pi time shorter than the saturated Rabi rate allows
  auto t = noiseless_truth();
  ve::VirtualExperiment v(t);
  calib::PipelineOptions o2;
  o2.counter_pi_time = 1e-6;
  calib::Pipeline p(v, o2);
  p.align_chain();
  CHECK_THROWS_AS(p.calibrate_pi_times(), RangeError);
}

TEST_CASE("sidebands") {
  auto& cal = calibrated();
  const auto truth = cal.v.true_sidebands();
  std::vector<double> found;
  for (const auto& m : cal.p.record().sidebands)
    for (double f : m) found.push_back(f);
  REQUIRE(found.size() == 4);
  for (std::size_t q = 0; q < 4; ++q) CHECK(std::abs(found[q] - truth[q]) < c::two_pi * 0.5e3);
}

TEST_CASE("schedule completes in order") {
  const auto& r = calibrated().p.record();
  CHECK(r.completed == calib::Pipeline::stage_names());
  for (const auto& s : r.completed) CHECK(r.stages.contains(s));
  CHECK(r.ions[0].zeta == doctest::Approx(1.10).epsilon(0.01));
  CHECK(r.ions[1].zeta == doctest::Approx(1.12).epsilon(0.01));
}

TEST_CASE("seeded runs are reproducible") {
  auto run = [] {
    auto t = ve::Truth::defaults(2);
    t.seed = 99;
    ve::VirtualExperiment v(t);
    calib::Pipeline p(v, {});
    p.align_chain();
    p.calibrate_pi_times();
    return without_stages(p.record());
  };
  CHECK(run() == run());
}

TEST_CASE("checkpoint and resume") {
  const auto path = temp_path("checkpoint.json");
  std::filesystem::remove(path);
  {
    ve::VirtualExperiment v(noiseless_truth());
    FailingBackend fb(v, "zeta_echo");
    calib::Pipeline p(fb, {});
    bool threw = false;
    try {
      p.run_schedule(path);
    } catch (const StageError& e) {
      threw = true;
      CHECK(e.stage == "zeta");
    }
    CHECK(threw);
  }
  REQUIRE(std::filesystem::exists(path));
  auto saved = calib::load_record(path);
  CHECK(saved.completed == std::vector<std::string>{"align", "pi_times", "sidebands", "symmetric_detuning"});

  ve::VirtualExperiment v(noiseless_truth());
  calib::Pipeline p(v, {}, saved);
  p.run_schedule(path);
  CHECK(p.record().completed == calib::Pipeline::stage_names());
  // resumed calibration matches the uninterrupted one
  const auto& ref = calibrated().p.record();
  CHECK(p.record().well == ref.well);
  CHECK(p.record().pairs[0].kappa == doctest::Approx(ref.pairs[0].kappa).epsilon(1e-9));
  CHECK(calib::load_record(path).done("fidelity"));
}

TEST_CASE("kappa refinement is idempotent") {
  auto& cal = calibrated();
  calib::Pipeline p(cal.v, cal.p.options(), cal.p.record());
  const double k0 = p.record().pairs[0].kappa;
  const double k1 = p.calibrate_kappa(0, 1, true);
  CHECK(std::abs(k1 / k0 - 1.0) < 1e-3);
}

TEST_CASE("ramsey zeta diagnostic") {
  auto& cal = calibrated();
  calib::Pipeline p(cal.v, cal.p.options(), cal.p.record());
  // close enough to zeta* that the phase per gate stays inside (-pi, pi)
  const std::vector<double> zetas{1.0, 1.05, 1.1, 1.15, 1.2};
  const auto pts = p.ramsey_zeta_diagnostic(0, zetas);
  REQUIRE(pts.size() == zetas.size());
  std::size_t best = 0;
  for (std::size_t k = 1; k < pts.size(); ++k)
    if (pts[k].coherence_gates > pts[best].coherence_gates) best = k;
  CHECK(zetas[best] == doctest::Approx(1.1));
  // the comb shift is monotone in zeta, so is the accumulated phase
  for (std::size_t k = 1; k < pts.size(); ++k) CHECK(pts[k].phase_per_gate < pts[k - 1].phase_per_gate);
}

TEST_CASE("virtual experiment comb model") {
  ve::VirtualExperiment v(noiseless_truth());
  const auto spec = comb::CombSpec::reference_defaults();
  for (double z : {0.6, 1.0, 1.2, 1.5}) {
    const double direct = comb::total_shift(comb::with_zeta(spec, z)).total;
    CHECK(v.comb_breakdown_total(z) == doctest::Approx(direct).epsilon(1e-9));
  }
  // at the truth balance point the comb part vanishes; Rabi scaling is quadratic
  const double rabi = c::two_pi * 122.1e3;
  CHECK(std::abs(v.comb_shift(0, rabi, v.truth().zeta_star[0])) < 1e-6);
  const double s1 = v.comb_shift(1, rabi, 0.8);
  CHECK(v.comb_shift(1, 2 * rabi, 0.8) == doctest::Approx(4 * s1).epsilon(1e-12));
  CHECK(v.residual_shift(2 * rabi) == doctest::Approx(4 * v.residual_shift(rabi)).epsilon(1e-12));
}

TEST_CASE("virtual experiment behind the job protocol") {
  ve::VirtualExperiment v(noiseless_truth());
  protocol::ExperimentJob job;
  job.label = "flip";
  job.shots = 100;
  job.circuits = {json::array({json{{"op", "mw"}, {"angle_rad", c::pi}, {"phase_rad", 0.0}}}), json::array()};
  std::stringstream in, out;
  protocol::write_frame(in, {{"type", "hello"}, {"schema_version", protocol::kSchemaVersion}});
  protocol::write_frame(in, protocol::to_json(job));
  protocol::write_frame(in, {{"type", "job"}, {"label", "broken"}});
  protocol::write_frame(in, {{"type", "bye"}});
  protocol::serve(v, in, out);

  json reply;
  REQUIRE(protocol::read_frame(out, reply));
  CHECK(reply.at("ion_count") == 2);
  REQUIRE(protocol::read_frame(out, reply));
  const auto r = protocol::result_from_json(reply);
  CHECK(r.error.empty());
  REQUIRE(r.counts.size() == 2);
  CHECK(r.bright(0, 0) > 95);
  CHECK(r.bright(1, 0) < 5);
  REQUIRE(protocol::read_frame(out, reply));
  CHECK_FALSE(protocol::result_from_json(reply).error.empty());
  CHECK_FALSE(protocol::read_frame(out, reply));
}

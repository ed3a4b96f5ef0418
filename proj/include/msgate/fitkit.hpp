#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

namespace msgate::fit {

struct ShotData {
  std::vector<double> x;
  std::vector<long long> successes;
  std::vector<long long> trials;
  std::string outcome_label = "P";

  std::size_t size() const { return x.size(); }
  double p(std::size_t i) const { return double(successes[i]) / double(trials[i]); }
  // Laplace-smoothed binomial standard error, never zero
  double sigma(std::size_t i) const;
  void validate() const;
  void push(double xv, long long s, long long n);
};

struct FitResult {
  std::vector<std::string> names;
  Eigen::VectorXd values;
  Eigen::MatrixXd covariance;
  std::map<std::string, std::pair<double, double>> ci95;
  double residual_norm = 0.0;
  bool converged = false;
  std::string message;
  std::map<std::string, bool> stage_converged;
  std::map<std::string, double> extra;

  double get(const std::string& name) const;
  double sigma(const std::string& name) const;
  bool has(const std::string& name) const;
};

// saturated Rabi model: P1 = (1 - exp(-Omega t / xi) cos(Omega t)) / 2, Omega = Xi sin(pi a / 2 a_sat)
double amplitude_scan_model(double a, double t, double a_sat, double Xi, double xi);
FitResult fit_amplitude_scan(const ShotData& data, double pulse_time);

double parity_odd_model(double M, double A, double m_sigma_odd);
double population_11_model(double M, double A, double m_sigma_odd, double m_sigma_even, double theta);
double population_00_model(double M, double A, double m_sigma_odd, double m_sigma_even, double theta);
FitResult fit_parity_decay(const ShotData& odd, const ShotData& p11);

double gaussian_model(double x, double center, double sigma, double amplitude, double offset);
FitResult fit_gaussian_peak(const ShotData& data);

std::vector<double> moving_average3(const std::vector<double>& y);
FitResult mle_upper_half_gaussian(const ShotData& data);

std::pair<double, double> wilson_interval(long long successes, long long trials, double z = 1.0);

double fidelity_estimate(double p00, double p11, double parity_amplitude, double theta);
struct FidelityInterval {
  double value = 0.0;
  double err_lo = 0.0;  // combined in quadrature
  double err_hi = 0.0;
};
// each input carries (lower error, upper error)
FidelityInterval fidelity_with_errors(double p00, std::pair<double, double> e00, double p11,
                                      std::pair<double, double> e11, double parity_amplitude,
                                      std::pair<double, double> ea, double theta);

// weighted lines through each series; parameters x0 and slopes
FitResult linear_crossing(const ShotData& d00, const ShotData& d11);

// P = offset + amplitude/2 cos(omega x + phase): parity oscillation contrast
FitResult fit_parity_oscillation(const ShotData& parity_even, double omega = 2.0);

nlohmann::json to_json(const ShotData& d);
ShotData shot_data_from_json(const nlohmann::json& j);
nlohmann::json to_json(const FitResult& r);
ShotData read_shot_csv(const std::string& path);
void write_shot_csv(const ShotData& d, const std::string& path, const std::string& x_header = "x");

}  // namespace msgate::fit

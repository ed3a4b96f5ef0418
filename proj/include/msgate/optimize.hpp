#pragma once

#include <functional>

#include <Eigen/Dense>

namespace msgate::opt {

using ResidualFn = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;
using ScalarFn = std::function<double(const Eigen::VectorXd&)>;

struct Bounds {
  Eigen::VectorXd lower, upper;  // empty = unbounded
  Eigen::VectorXd clamp(const Eigen::VectorXd& x) const;
};

struct LmOptions {
  int max_iter = 300;
  double ftol = 1e-15;   // relative chi2 change
  double xtol = 1e-13;   // relative step
  double lambda0 = 1e-3;
};

struct LmResult {
  Eigen::VectorXd x;
  Eigen::MatrixXd jtj;  // at the solution, in natural units
  Eigen::VectorXd residual;
  double chi2 = 0.0;
  int iterations = 0;
  bool converged = false;
};

// damped Gauss-Newton on sum r_i^2; `scale` sets the natural size of each parameter
LmResult levenberg_marquardt(const ResidualFn& f, const Eigen::VectorXd& x0, const Eigen::VectorXd& scale,
                             const Bounds& bounds = {}, const LmOptions& options = {});

Eigen::MatrixXd numerical_jacobian(const ResidualFn& f, const Eigen::VectorXd& x, const Eigen::VectorXd& scale,
                                   const Bounds& bounds = {});

struct NmOptions {
  int max_eval = 20000;
  double ftol = 1e-13;
  double xtol = 1e-11;
};

struct NmResult {
  Eigen::VectorXd x;
  double value = 0.0;
  int evaluations = 0;
  bool converged = false;
};

NmResult nelder_mead(const ScalarFn& f, const Eigen::VectorXd& x0, const Eigen::VectorXd& step,
                     const NmOptions& options = {});

}  // namespace msgate::opt

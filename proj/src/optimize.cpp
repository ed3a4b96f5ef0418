#include "msgate/optimize.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

namespace msgate::opt {

Eigen::VectorXd Bounds::clamp(const Eigen::VectorXd& x) const {
  Eigen::VectorXd y = x;
  if (lower.size() == x.size()) y = y.cwiseMax(lower);
  if (upper.size() == x.size()) y = y.cwiseMin(upper);
  return y;
}

Eigen::MatrixXd numerical_jacobian(const ResidualFn& f, const Eigen::VectorXd& x, const Eigen::VectorXd& scale,
                                   const Bounds& bounds) {
  const Eigen::VectorXd r0 = f(x);
  Eigen::MatrixXd J(r0.size(), x.size());
  for (int p = 0; p < x.size(); ++p) {
    const double h = 1e-6 * std::max(std::abs(x(p)), scale(p));
    Eigen::VectorXd xp = x, xm = x;
    xp(p) += h;
    xm(p) -= h;
    // one-sided at an active bound
    const bool hit_lo = bounds.lower.size() == x.size() && xm(p) < bounds.lower(p);
    const bool hit_hi = bounds.upper.size() == x.size() && xp(p) > bounds.upper(p);
    if (hit_lo && !hit_hi)
      J.col(p) = (f(xp) - r0) / h;
    else if (hit_hi && !hit_lo)
      J.col(p) = (r0 - f(xm)) / h;
    else
      J.col(p) = (f(xp) - f(xm)) / (2 * h);
  }
  return J;
}

LmResult levenberg_marquardt(const ResidualFn& f, const Eigen::VectorXd& x0, const Eigen::VectorXd& scale,
                             const Bounds& bounds, const LmOptions& o) {
  LmResult res;
  Eigen::VectorXd x = bounds.clamp(x0);
  Eigen::VectorXd r = f(x);
  double chi2 = r.squaredNorm();
  double lambda = o.lambda0;
  int small_steps = 0;
  for (int it = 0; it < o.max_iter; ++it) {
    res.iterations = it + 1;
    const Eigen::MatrixXd J = numerical_jacobian(f, x, scale, bounds);
    // work in scaled coordinates u = x / scale
    const Eigen::MatrixXd Js = J * scale.asDiagonal();
    const Eigen::MatrixXd A = Js.transpose() * Js;
    const Eigen::VectorXd g = Js.transpose() * r;
    bool accepted = false;
    for (int tries = 0; tries < 40; ++tries) {
      Eigen::MatrixXd Ad = A;
      for (int p = 0; p < A.rows(); ++p) Ad(p, p) += lambda * std::max(A(p, p), 1e-12);
      const Eigen::VectorXd du = Ad.ldlt().solve(-g);
      const Eigen::VectorXd xn = bounds.clamp(x + scale.cwiseProduct(du));
      const Eigen::VectorXd rn = f(xn);
      const double chi2n = rn.squaredNorm();
      if (std::isfinite(chi2n) && chi2n <= chi2) {
        const double dchi = chi2 - chi2n;
        const double step = (xn - x).cwiseQuotient(scale).norm();
        x = xn;
        r = rn;
        chi2 = chi2n;
        lambda = std::max(lambda / 3.0, 1e-12);
        accepted = true;
        if (dchi <= o.ftol * std::max(chi2, 1e-300) || step <= o.xtol * (1.0 + x.cwiseQuotient(scale).norm()))
          ++small_steps;
        else
          small_steps = 0;
        break;
      }
      lambda *= 4.0;
      if (lambda > 1e16) break;
    }
    if (!accepted || small_steps >= 2 || chi2 == 0.0) {
      res.converged = true;
      break;
    }
  }
  const Eigen::MatrixXd J = numerical_jacobian(f, x, scale, bounds);
  res.x = x;
  res.residual = r;
  res.chi2 = chi2;
  res.jtj = J.transpose() * J;
  if (!res.x.allFinite() || !std::isfinite(chi2)) res.converged = false;
  return res;
}

NmResult nelder_mead(const ScalarFn& f, const Eigen::VectorXd& x0, const Eigen::VectorXd& step,
                     const NmOptions& o) {
  const int n = static_cast<int>(x0.size());
  std::vector<Eigen::VectorXd> s(n + 1, x0);
  std::vector<double> v(n + 1);
  for (int i = 0; i < n; ++i) s[i + 1](i) += step(i);
  int evals = 0;
  auto eval = [&](const Eigen::VectorXd& x) {
    ++evals;
    const double y = f(x);
    return std::isfinite(y) ? y : std::numeric_limits<double>::max();
  };
  for (int i = 0; i <= n; ++i) v[i] = eval(s[i]);
  std::vector<int> idx(n + 1);
  NmResult res;
  while (evals < o.max_eval) {
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return v[a] < v[b]; });
    {
      std::vector<Eigen::VectorXd> s2;
      std::vector<double> v2;
      for (int i : idx) {
        s2.push_back(s[i]);
        v2.push_back(v[i]);
      }
      s = std::move(s2);
      v = std::move(v2);
    }
    double xspread = 0.0;
    for (int i = 1; i <= n; ++i) xspread = std::max(xspread, (s[i] - s[0]).cwiseAbs().maxCoeff());
    if (std::abs(v[n] - v[0]) <= o.ftol * (std::abs(v[0]) + 1e-300) + 1e-300 &&
        xspread <= o.xtol * (1.0 + s[0].cwiseAbs().maxCoeff())) {
      res.converged = true;
      break;
    }
    Eigen::VectorXd c = Eigen::VectorXd::Zero(n);
    for (int i = 0; i < n; ++i) c += s[i];
    c /= n;
    const Eigen::VectorXd xr = c + (c - s[n]);
    const double fr = eval(xr);
    if (fr < v[0]) {
      const Eigen::VectorXd xe = c + 2.0 * (c - s[n]);
      const double fe = eval(xe);
      if (fe < fr) {
        s[n] = xe;
        v[n] = fe;
      } else {
        s[n] = xr;
        v[n] = fr;
      }
    } else if (fr < v[n - 1]) {
      s[n] = xr;
      v[n] = fr;
    } else {
      const bool outside = fr < v[n];
      const Eigen::VectorXd xc = outside ? Eigen::VectorXd(c + 0.5 * (xr - c)) : Eigen::VectorXd(c + 0.5 * (s[n] - c));
      const double fc = eval(xc);
      if (fc < (outside ? fr : v[n])) {
        s[n] = xc;
        v[n] = fc;
      } else {
        for (int i = 1; i <= n; ++i) {
          s[i] = s[0] + 0.5 * (s[i] - s[0]);
          v[i] = eval(s[i]);
        }
      }
    }
  }
  const auto best = std::min_element(v.begin(), v.end()) - v.begin();
  res.x = s[best];
  res.value = v[best];
  res.evaluations = evals;
  return res;
}

}  // namespace msgate::opt

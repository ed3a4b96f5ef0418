#include "msgate/fitkit.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "msgate/constants.hpp"
#include "msgate/errors.hpp"
#include "msgate/optimize.hpp"

namespace msgate::fit {

namespace c = msgate::constants;

namespace {

constexpr int kStarts = 8;

double clamp01(double p) { return std::clamp(p, 0.0, 1.0); }

FitResult finish(const std::vector<std::string>& names, const opt::LmResult& lm, int n_points,
                 const std::string& msg = {}) {
  FitResult r;
  r.names = names;
  r.values = lm.x;
  r.residual_norm = std::sqrt(lm.chi2);
  r.converged = lm.converged;
  r.message = msg;
  const int dof = std::max(1, n_points - static_cast<int>(lm.x.size()));
  Eigen::FullPivLU<Eigen::MatrixXd> lu(lm.jtj);
  if (lu.isInvertible()) {
    // 1 sigma from the covariance, scaled by the reduced chi2
    r.covariance = lm.jtj.inverse() * std::max(lm.chi2 / dof, 1e-300);
    r.covariance = 0.5 * (r.covariance + r.covariance.transpose());
  } else {
    r.covariance = Eigen::MatrixXd::Constant(lm.x.size(), lm.x.size(), std::nan(""));
    r.converged = false;
    if (r.message.empty()) r.message = "singular normal matrix";
  }
  for (std::size_t p = 0; p < names.size(); ++p) {
    const double s = std::sqrt(std::max(r.covariance(p, p), 0.0));
    r.ci95[names[p]] = {r.values(p) - 1.96 * s, r.values(p) + 1.96 * s};
  }
  return r;
}

struct Start {
  double chi2;
  Eigen::VectorXd x;
};

// best kStarts grid points, ordered by chi2 then by grid order
std::vector<Eigen::VectorXd> best_starts(std::vector<Start> grid) {
  std::stable_sort(grid.begin(), grid.end(), [](const Start& a, const Start& b) { return a.chi2 < b.chi2; });
  std::vector<Eigen::VectorXd> out;
  for (std::size_t i = 0; i < grid.size() && static_cast<int>(out.size()) < kStarts; ++i) out.push_back(grid[i].x);
  return out;
}

opt::LmResult multi_start(const opt::ResidualFn& f, const std::vector<Eigen::VectorXd>& starts,
                          const Eigen::VectorXd& scale, const opt::Bounds& b) {
  opt::LmResult best;
  best.chi2 = std::numeric_limits<double>::infinity();
  for (const auto& s : starts) {
    auto r = opt::levenberg_marquardt(f, s, scale, b);
    if (r.chi2 < best.chi2 || (!best.converged && r.converged && r.chi2 <= best.chi2)) best = r;
  }
  return best;
}

std::vector<double> linspace(double a, double b, int n) {
  std::vector<double> v(n);
  for (int i = 0; i < n; ++i) v[i] = n == 1 ? a : a + (b - a) * i / (n - 1);
  return v;
}

std::vector<double> logspace(double a, double b, int n) {
  auto v = linspace(std::log(a), std::log(b), n);
  for (auto& x : v) x = std::exp(x);
  return v;
}

}  // namespace

double ShotData::sigma(std::size_t i) const {
  const double n = double(trials[i]);
  const double ph = (double(successes[i]) + 1.0) / (n + 2.0);
  return std::sqrt(ph * (1.0 - ph) / n);
}

void ShotData::validate() const {
  if (x.size() != successes.size() || x.size() != trials.size()) throw ConfigError("shot data lengths differ");
  for (std::size_t i = 0; i < x.size(); ++i)
    if (trials[i] < 1 || successes[i] < 0 || successes[i] > trials[i])
      throw RangeError("shot data outside 0 <= successes <= trials");
}

void ShotData::push(double xv, long long s, long long n) {
  x.push_back(xv);
  successes.push_back(s);
  trials.push_back(n);
}

double FitResult::get(const std::string& name) const {
  for (std::size_t i = 0; i < names.size(); ++i)
    if (names[i] == name) return values(i);
  auto it = extra.find(name);
  if (it != extra.end()) return it->second;
  throw RangeError("no fit parameter " + name);
}

double FitResult::sigma(const std::string& name) const {
  for (std::size_t i = 0; i < names.size(); ++i)
    if (names[i] == name) return std::sqrt(std::max(covariance(i, i), 0.0));
  throw RangeError("no fit parameter " + name);
}

bool FitResult::has(const std::string& name) const {
  return std::find(names.begin(), names.end(), name) != names.end() || extra.count(name);
}

// ---------------------------------------------------------------- amplitude scan

double amplitude_scan_model(double a, double t, double a_sat, double Xi, double xi) {
  const double w = Xi * std::sin(0.5 * c::pi * a / a_sat) * t;
  return clamp01(0.5 * (1.0 - std::exp(-std::abs(w) / xi) * std::cos(w)));
}

FitResult fit_amplitude_scan(const ShotData& data, double t) {
  data.validate();
  if (data.size() < 10) throw InsufficientDataError("amplitude scan needs at least 10 points");
  std::vector<double> y(data.size()), s(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    y[i] = data.p(i);
    s[i] = data.sigma(i);
  }
  const double amax = *std::max_element(data.x.begin(), data.x.end());
  const auto [ymin, ymax] = std::minmax_element(y.begin(), y.end());
  // parameters: a_sat, u = Xi t, g = 1/xi
  auto resid = [&](const Eigen::VectorXd& p) {
    Eigen::VectorXd r(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double w = p(1) * std::sin(0.5 * c::pi * data.x[i] / p(0));
      r(i) = (y[i] - clamp01(0.5 * (1.0 - std::exp(-std::abs(w) * p(2)) * std::cos(w)))) / s[i];
    }
    return r;
  };
  std::vector<Start> grid;
  for (double as : linspace(0.4 * amax, 3.0 * amax, 40))
    for (double u : linspace(0.1 * c::pi, 24.0 * c::pi, 240))
      for (double g : {0.0, 0.05, 0.2}) {
        Eigen::Vector3d p(as, u, g);
        grid.push_back({resid(p).squaredNorm(), p});
      }
  opt::Bounds b;
  b.lower = Eigen::Vector3d(1e-3 * amax, 1e-6, 0.0);
  b.upper = Eigen::Vector3d(100.0 * amax, 1e3, 1e3);
  const auto lm = multi_start(resid, best_starts(grid), Eigen::Vector3d(amax, c::pi, 0.1), b);
  FitResult r0 = finish({"a_sat", "u", "g"}, lm, static_cast<int>(data.size()));
  // natural parameters: Xi = u / t, xi = 1 / g
  FitResult r;
  r.names = {"a_sat", "Xi", "xi"};
  r.values = Eigen::Vector3d(lm.x(0), lm.x(1) / t, lm.x(2) > 0 ? 1.0 / lm.x(2) : std::numeric_limits<double>::infinity());
  Eigen::Matrix3d J = Eigen::Matrix3d::Zero();
  J(0, 0) = 1.0;
  J(1, 1) = 1.0 / t;
  J(2, 2) = lm.x(2) > 0 ? -1.0 / (lm.x(2) * lm.x(2)) : 0.0;
  r.covariance = J * r0.covariance * J.transpose();
  r.residual_norm = r0.residual_norm;
  r.converged = r0.converged;
  r.message = r0.message;
  for (int p = 0; p < 3; ++p) {
    const double sg = std::sqrt(std::max(r.covariance(p, p), 0.0));
    r.ci95[r.names[p]] = {r.values(p) - 1.96 * sg, r.values(p) + 1.96 * sg};
  }
  if (*ymax - *ymin < 0.2) {
    r.converged = false;
    r.message = "degenerate scan: no oscillation";
  }
  return r;
}

// ---------------------------------------------------------------- parity decay

double parity_odd_model(double M, double A, double ms) {
  const double e = std::isinf(ms) ? 1.0 : std::exp(-M * M / (2 * ms * ms));
  return clamp01(0.5 * (1.0 - A * e));
}

double population_11_model(double M, double A, double mo, double me, double th) {
  const double even = 1.0 - parity_odd_model(M, A, mo);
  const double e = std::isinf(me) ? 1.0 : std::exp(-M * M / (2 * me * me));
  return clamp01(0.5 * even * (1.0 - e * std::cos(th * M)));
}

double population_00_model(double M, double A, double mo, double me, double th) {
  const double even = 1.0 - parity_odd_model(M, A, mo);
  const double e = std::isinf(me) ? 1.0 : std::exp(-M * M / (2 * me * me));
  return clamp01(0.5 * even * (1.0 + e * std::cos(th * M)));
}

FitResult fit_parity_decay(const ShotData& odd, const ShotData& p11) {
  odd.validate();
  p11.validate();
  if (odd.size() < 4 || p11.size() < 4) throw InsufficientDataError("parity decay needs at least 4 points per curve");
  const double mmax = std::max(*std::max_element(odd.x.begin(), odd.x.end()),
                               *std::max_element(p11.x.begin(), p11.x.end()));
  // stage 1: A and k_o = 1 / M_sigma_odd
  auto r1 = [&](const Eigen::VectorXd& p) {
    Eigen::VectorXd r(odd.size());
    for (std::size_t i = 0; i < odd.size(); ++i) {
      const double m = odd.x[i] * p(1);
      r(i) = (odd.p(i) - clamp01(0.5 * (1.0 - p(0) * std::exp(-0.5 * m * m)))) / odd.sigma(i);
    }
    return r;
  };
  std::vector<Start> g1;
  for (double A : linspace(0.8, 1.05, 11))
    for (double ms : logspace(0.3 * mmax / 10, 100 * mmax, 30)) {
      Eigen::Vector2d p(A, 1.0 / ms);
      g1.push_back({r1(p).squaredNorm(), p});
    }
  opt::Bounds b1;
  b1.lower = Eigen::Vector2d(0.0, 0.0);
  b1.upper = Eigen::Vector2d(1.5, 10.0);
  const auto lm1 = multi_start(r1, best_starts(g1), Eigen::Vector2d(1.0, 1.0 / mmax), b1);
  const double A = lm1.x(0), ko = lm1.x(1);
  FitResult s1 = finish({"A", "k_odd"}, lm1, static_cast<int>(odd.size()));

  // stage 2: k_e = 1 / M_sigma_even and theta, with A, k_o frozen
  auto r2 = [&](const Eigen::VectorXd& p) {
    Eigen::VectorXd r(p11.size());
    for (std::size_t i = 0; i < p11.size(); ++i) {
      const double M = p11.x[i];
      const double mo = M * ko, me = M * p(0);
      const double even = 1.0 - clamp01(0.5 * (1.0 - A * std::exp(-0.5 * mo * mo)));
      r(i) = (p11.p(i) - clamp01(0.5 * even * (1.0 - std::exp(-0.5 * me * me) * std::cos(p(1) * M)))) / p11.sigma(i);
    }
    return r;
  };
  std::vector<Start> g2;
  for (double th : linspace(0.002, c::pi, 1200))
    for (double ms : logspace(1.0, 50 * mmax, 16)) {
      Eigen::Vector2d p(1.0 / ms, th);
      g2.push_back({r2(p).squaredNorm(), p});
    }
  opt::Bounds b2;
  b2.lower = Eigen::Vector2d(0.0, 0.0);
  b2.upper = Eigen::Vector2d(10.0, c::pi);
  const auto lm2 = multi_start(r2, best_starts(g2), Eigen::Vector2d(1.0 / mmax, 0.01), b2);
  FitResult s2 = finish({"k_even", "theta"}, lm2, static_cast<int>(p11.size()));

  FitResult r;
  r.names = {"A", "M_sigma_odd", "M_sigma_even", "theta"};
  const double inf = std::numeric_limits<double>::infinity();
  r.values = Eigen::Vector4d(A, ko > 0 ? 1.0 / ko : inf, lm2.x(0) > 0 ? 1.0 / lm2.x(0) : inf, lm2.x(1));
  r.covariance = Eigen::Matrix4d::Zero();
  // stages are fitted separately; cross-stage covariance is not estimated
  Eigen::Matrix2d J1 = Eigen::Matrix2d::Identity(), J2 = Eigen::Matrix2d::Identity();
  J1(1, 1) = ko > 0 ? -1.0 / (ko * ko) : 0.0;
  J2(0, 0) = lm2.x(0) > 0 ? -1.0 / (lm2.x(0) * lm2.x(0)) : 0.0;
  r.covariance.block<2, 2>(0, 0) = J1 * s1.covariance * J1.transpose();
  r.covariance.block<2, 2>(2, 2) = J2 * s2.covariance * J2.transpose();
  r.residual_norm = std::hypot(s1.residual_norm, s2.residual_norm);
  r.stage_converged["odd"] = s1.converged;
  r.stage_converged["even"] = s2.converged;
  r.converged = s1.converged && s2.converged;
  if (!s1.converged) r.message = "odd-parity stage did not converge";
  if (!s2.converged) r.message += (r.message.empty() ? "" : "; ") + std::string("even-parity stage did not converge");
  for (int p = 0; p < 4; ++p) {
    const double sg = std::sqrt(std::max(r.covariance(p, p), 0.0));
    r.ci95[r.names[p]] = {r.values(p) - 1.96 * sg, r.values(p) + 1.96 * sg};
  }
  return r;
}

// ---------------------------------------------------------------- Gaussian peak

double gaussian_model(double x, double c0, double s, double a, double o) {
  const double z = (x - c0) / s;
  return o + a * std::exp(-0.5 * z * z);
}

FitResult fit_gaussian_peak(const ShotData& data) {
  data.validate();
  if (data.size() < 5) throw InsufficientDataError("Gaussian peak needs at least 5 points");
  const std::size_t n = data.size();
  std::vector<double> y(n), w(n);
  for (std::size_t i = 0; i < n; ++i) {
    y[i] = data.p(i);
    w[i] = 1.0 / data.sigma(i);
  }
  const auto [xmin_it, xmax_it] = std::minmax_element(data.x.begin(), data.x.end());
  const double xmin = *xmin_it, xmax = *xmax_it, span = xmax - xmin;
  auto resid = [&](const Eigen::VectorXd& p) {
    Eigen::VectorXd r(n);
    for (std::size_t i = 0; i < n; ++i) r(i) = (y[i] - gaussian_model(data.x[i], p(0), p(1), p(2), p(3))) * w[i];
    return r;
  };
  // grid over center and width, amplitude and offset solved linearly
  std::vector<Start> grid;
  for (std::size_t ic = 0; ic < n; ++ic)
    for (double sw : {span / 40, span / 20, span / 10, span / 5, span / 2.5}) {
      Eigen::MatrixXd M(n, 2);
      Eigen::VectorXd rhs(n);
      for (std::size_t i = 0; i < n; ++i) {
        const double z = (data.x[i] - data.x[ic]) / sw;
        M(i, 0) = std::exp(-0.5 * z * z) * w[i];
        M(i, 1) = w[i];
        rhs(i) = y[i] * w[i];
      }
      const Eigen::VectorXd ao = M.colPivHouseholderQr().solve(rhs);
      Eigen::Vector4d p(data.x[ic], sw, ao(0), ao(1));
      grid.push_back({resid(p).squaredNorm(), p});
    }
  opt::Bounds b;
  b.lower = Eigen::Vector4d(xmin - span, span * 1e-4, -2.0, -1.0);
  b.upper = Eigen::Vector4d(xmax + span, 10 * span, 2.0, 2.0);
  const auto lm = multi_start(resid, best_starts(grid), Eigen::Vector4d(span / 10, span / 10, 0.1, 0.1), b);
  FitResult r = finish({"center", "sigma", "amplitude", "offset"}, lm, static_cast<int>(n));
  // flat data: amplitude not distinguishable from zero
  const double amp = lm.x(2);
  double ysd = 0.0, ym = std::accumulate(y.begin(), y.end(), 0.0) / n, sig_mean = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    ysd += (y[i] - ym) * (y[i] - ym);
    sig_mean += data.sigma(i);
  }
  ysd = std::sqrt(ysd / n);
  sig_mean /= n;
  if (ysd < 2.0 * sig_mean && ysd < 1e-3 + 2.0 * sig_mean) {
    r.converged = false;
    r.message = "flat data: no peak";
  } else {
    // likelihood-ratio style check against a constant; amplitude alone is degenerate for broad peaks
    double wsum = 0.0, wy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      wsum += w[i] * w[i];
      wy += w[i] * w[i] * y[i];
    }
    double chi_flat = 0.0;
    for (std::size_t i = 0; i < n; ++i) chi_flat += std::pow((y[i] - wy / wsum) * w[i], 2);
    r.extra["delta_chi2"] = chi_flat - lm.chi2;
    if (!(amp > 0) || chi_flat - lm.chi2 < 16.0) {
      r.converged = false;
      r.message = "peak amplitude not significant";
    }
  }
  if (lm.x(0) < xmin || lm.x(0) > xmax) {
    r.converged = false;
    r.message = "center outside sweep range";
  }
  return r;
}

// ---------------------------------------------------------------- upper-half MLE

std::vector<double> moving_average3(const std::vector<double>& y) {
  std::vector<double> s(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) {
    const std::size_t lo = i == 0 ? 0 : i - 1, hi = std::min(y.size() - 1, i + 1);
    double acc = 0.0;
    for (std::size_t k = lo; k <= hi; ++k) acc += y[k];
    s[i] = acc / double(hi - lo + 1);
  }
  return s;
}

FitResult mle_upper_half_gaussian(const ShotData& data) {
  data.validate();
  // sort by x
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return data.x[a] < data.x[b]; });
  std::vector<double> y;
  for (auto i : order) y.push_back(data.p(i));
  const auto sm = moving_average3(y);
  const auto [mn, mx] = std::minmax_element(sm.begin(), sm.end());
  const double half = 0.5 * (*mn + *mx);
  std::vector<double> xs, ks, ns;
  for (std::size_t k = 0; k < order.size(); ++k)
    if (sm[k] > half) {
      xs.push_back(data.x[order[k]]);
      ks.push_back(double(data.successes[order[k]]));
      ns.push_back(double(data.trials[order[k]]));
    }
  if (xs.size() < 4) throw InsufficientDataError("fewer than 4 points above half maximum");

  const double span = std::max(xs.back() - xs.front(), 1e-12);
  auto nll_full = [&](double c0, double s, double a) {
    if (s <= 0) return std::numeric_limits<double>::infinity();
    const double amp = std::min(a, 1.0);
    double acc = a > 1.0 ? 1e6 * (a - 1.0) * (a - 1.0) : 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
      const double z = (xs[i] - c0) / s;
      const double p = std::clamp(amp * std::exp(-0.5 * z * z), 1e-15, 1.0 - 1e-15);
      acc -= ks[i] * std::log(p) + (ns[i] - ks[i]) * std::log1p(-p);
    }
    return acc;
  };
  // start from the weighted centroid of the selected points
  double wsum = 0, c0 = 0, amax = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double p = ks[i] / ns[i];
    wsum += p;
    c0 += p * xs[i];
    amax = std::max(amax, p);
  }
  c0 /= wsum;
  // parameters: center, log sigma, amplitude
  auto f = [&](const Eigen::VectorXd& p) { return nll_full(p(0), std::exp(p(1)), p(2)); };
  opt::NmResult best;
  best.value = std::numeric_limits<double>::infinity();
  for (double sf : {0.3, 0.6, 1.2}) {
    Eigen::Vector3d x0(c0, std::log(sf * span), std::min(amax, 0.999));
    auto r = opt::nelder_mead(f, x0, Eigen::Vector3d(0.1 * span, 0.3, 0.02));
    r = opt::nelder_mead(f, r.x, Eigen::Vector3d(0.01 * span, 0.05, 0.005));
    if (r.value < best.value) best = r;
  }
  const double cen = best.x(0), sig = std::exp(best.x(1)), amp = std::min(best.x(2), 1.0);

  // 2 sigma profile: delta NLL = 2
  auto profile = [&](int which, double value) {
    opt::NmResult r;
    if (which == 0) {
      auto g = [&](const Eigen::VectorXd& q) { return nll_full(value, std::exp(q(0)), q(1)); };
      r = opt::nelder_mead(g, Eigen::Vector2d(best.x(1), best.x(2)), Eigen::Vector2d(0.05, 0.005));
    } else {
      auto g = [&](const Eigen::VectorXd& q) { return nll_full(q(0), std::exp(q(1)), value); };
      r = opt::nelder_mead(g, Eigen::Vector2d(best.x(0), best.x(1)), Eigen::Vector2d(0.01 * span, 0.05));
    }
    return r.value - best.value;
  };
  auto edge = [&](int which, double x0, double dir, double step, double limit) {
    double lo = x0, hi = x0 + dir * step;
    int guard = 0;
    while (profile(which, hi) < 2.0 && guard++ < 40) {
      lo = hi;
      hi = x0 + dir * step * std::pow(2.0, guard);
      if (std::abs(hi - x0) > limit) return x0 + dir * limit;
    }
    for (int it = 0; it < 40; ++it) {
      const double mid = 0.5 * (lo + hi);
      (profile(which, mid) < 2.0 ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
  };
  FitResult r;
  r.names = {"center", "amplitude", "sigma"};
  r.values = Eigen::Vector3d(cen, amp, sig);
  r.covariance = Eigen::Matrix3d::Zero();
  const double c_lo = edge(0, cen, -1.0, 0.01 * sig, 10 * span);
  const double c_hi = edge(0, cen, +1.0, 0.01 * sig, 10 * span);
  const double a_lo = edge(1, amp, -1.0, 0.002, amp);
  const double a_hi = amp >= 1.0 ? 1.0 : std::min(1.0, edge(1, amp, +1.0, 0.002, 1.0 - amp));
  r.ci95["center"] = {c_lo, c_hi};
  r.ci95["amplitude"] = {a_lo, a_hi};
  // profile half-widths stand in for 2 sigma
  r.covariance(0, 0) = std::pow(0.25 * (c_hi - c_lo), 2);
  r.covariance(1, 1) = std::pow(0.25 * (a_hi - a_lo), 2);
  r.residual_norm = best.value;
  r.converged = best.converged;
  r.extra["points_used"] = double(xs.size());
  r.extra["half_max"] = half;
  r.message = "intervals are 2 sigma likelihood profiles";
  return r;
}

// ---------------------------------------------------------------- intervals and estimators

std::pair<double, double> wilson_interval(long long k, long long n, double z) {
  if (n < 1) throw RangeError("wilson interval needs at least one trial");
  const double p = double(k) / double(n), z2 = z * z, nn = double(n);
  const double den = 1.0 + z2 / nn;
  const double mid = (p + z2 / (2 * nn)) / den;
  const double half = z * std::sqrt(p * (1 - p) / nn + z2 / (4 * nn * nn)) / den;
  double lo = mid - half, hi = mid + half;
  if (k == 0) lo = 0.0;
  if (k == n) hi = 1.0;
  return {std::max(0.0, lo), std::min(1.0, hi)};
}

double fidelity_estimate(double p00, double p11, double a, double th) {
  const double cs = std::cos(th / 2), sn = std::sin(th / 2);
  return std::clamp(p00 * cs * cs + p11 * sn * sn + a * cs * sn, 0.0, 1.0);
}

FidelityInterval fidelity_with_errors(double p00, std::pair<double, double> e00, double p11,
                                      std::pair<double, double> e11, double a, std::pair<double, double> ea,
                                      double th) {
  const double cs = std::cos(th / 2), sn = std::sin(th / 2);
  FidelityInterval f;
  f.value = fidelity_estimate(p00, p11, a, th);
  const double w0 = cs * cs, w1 = sn * sn, wa = cs * sn;
  auto comb = [&](double d0, double d1, double da) {
    return std::sqrt(std::pow(w0 * d0, 2) + std::pow(w1 * d1, 2) + std::pow(std::abs(wa) * da, 2));
  };
  f.err_lo = comb(e00.first, e11.first, wa >= 0 ? ea.first : ea.second);
  f.err_hi = comb(e00.second, e11.second, wa >= 0 ? ea.second : ea.first);
  f.err_hi = std::min(f.err_hi, 1.0 - f.value);
  f.err_lo = std::min(f.err_lo, f.value);
  return f;
}

FitResult linear_crossing(const ShotData& d00, const ShotData& d11) {
  d00.validate();
  d11.validate();
  if (d00.size() < 2 || d11.size() < 2) throw InsufficientDataError("linear crossing needs two points per series");
  auto line = [](const ShotData& d) {
    Eigen::MatrixXd M(d.size(), 2);
    Eigen::VectorXd y(d.size());
    for (std::size_t i = 0; i < d.size(); ++i) {
      const double w = 1.0 / d.sigma(i);
      M(i, 0) = w;
      M(i, 1) = w * d.x[i];
      y(i) = w * d.p(i);
    }
    const Eigen::Matrix2d N = M.transpose() * M;
    const Eigen::Vector2d beta = N.ldlt().solve(M.transpose() * y);
    const double chi2 = (M * beta - y).squaredNorm();
    const int dof = std::max<int>(1, static_cast<int>(d.size()) - 2);
    Eigen::Matrix2d cov = N.inverse() * std::max(chi2 / dof, 1e-300);
    return std::make_tuple(beta, cov, chi2);
  };
  const auto [b0, c0, chi0] = line(d00);
  const auto [b1, c1, chi1] = line(d11);
  const double dm = b0(1) - b1(1);
  const double scale = std::abs(b0(1)) + std::abs(b1(1));
  if (!(std::abs(dm) > 1e-9 * scale) || scale == 0.0) throw NoRootError("lines are parallel: no crossing");
  const double x0 = (b1(0) - b0(0)) / dm;
  // gradient of x0 wrt (i0, s0, i1, s1)
  Eigen::Vector4d g(-1.0 / dm, -x0 / dm, 1.0 / dm, x0 / dm);
  Eigen::Matrix4d C = Eigen::Matrix4d::Zero();
  C.block<2, 2>(0, 0) = c0;
  C.block<2, 2>(2, 2) = c1;
  FitResult r;
  r.names = {"x0", "intercept_00", "slope_00", "intercept_11", "slope_11"};
  r.values.resize(5);
  r.values << x0, b0(0), b0(1), b1(0), b1(1);
  r.covariance = Eigen::MatrixXd::Zero(5, 5);
  r.covariance(0, 0) = g.dot(C * g);
  r.covariance.block<2, 2>(1, 1) = c0;
  r.covariance.block<2, 2>(3, 3) = c1;
  r.residual_norm = std::sqrt(chi0 + chi1);
  r.converged = true;
  for (int p = 0; p < 5; ++p) {
    const double sg = std::sqrt(std::max(r.covariance(p, p), 0.0));
    r.ci95[r.names[p]] = {r.values(p) - 1.96 * sg, r.values(p) + 1.96 * sg};
  }
  return r;
}

FitResult fit_parity_oscillation(const ShotData& d, double omega) {
  d.validate();
  if (d.size() < 4) throw InsufficientDataError("parity oscillation needs at least 4 phases");
  // binomial likelihood for P_even = clamp(o + (a cos + b sin)/2)
  auto model = [&](const Eigen::VectorXd& p, double x) {
    return 0.5 * (1.0 + p(0) * std::cos(omega * x) + p(1) * std::sin(omega * x)) + p(2);
  };
  // linear start
  Eigen::MatrixXd M(d.size(), 3);
  Eigen::VectorXd y(d.size());
  for (std::size_t i = 0; i < d.size(); ++i) {
    const double w = 1.0 / d.sigma(i);
    M(i, 0) = 0.5 * std::cos(omega * d.x[i]) * w;
    M(i, 1) = 0.5 * std::sin(omega * d.x[i]) * w;
    M(i, 2) = w;
    y(i) = (d.p(i) - 0.5) * w;
  }
  const Eigen::Vector3d lin = M.colPivHouseholderQr().solve(y);
  auto nll = [&](const Eigen::VectorXd& p) {
    double acc = 0.0;
    for (std::size_t i = 0; i < d.size(); ++i) {
      const double q = std::clamp(model(p, d.x[i]), 1e-15, 1 - 1e-15);
      acc -= double(d.successes[i]) * std::log(q) + double(d.trials[i] - d.successes[i]) * std::log1p(-q);
    }
    return acc;
  };
  auto r1 = opt::nelder_mead(nll, lin, Eigen::Vector3d(0.05, 0.05, 0.01));
  r1 = opt::nelder_mead(nll, r1.x, Eigen::Vector3d(0.005, 0.005, 0.001));
  // observed information for the covariance
  Eigen::Matrix3d H;
  const double h = 1e-4;
  for (int a = 0; a < 3; ++a)
    for (int b = 0; b < 3; ++b) {
      Eigen::VectorXd pp = r1.x, pm = r1.x, mp = r1.x, mm = r1.x;
      pp(a) += h; pp(b) += h;
      pm(a) += h; pm(b) -= h;
      mp(a) -= h; mp(b) += h;
      mm(a) -= h; mm(b) -= h;
      H(a, b) = (nll(pp) - nll(pm) - nll(mp) + nll(mm)) / (4 * h * h);
    }
  FitResult r;
  r.names = {"a_cos", "a_sin", "offset"};
  r.values = r1.x;
  r.covariance = H.inverse();
  const double A = std::hypot(r1.x(0), r1.x(1));
  const double gA0 = A > 0 ? r1.x(0) / A : 0.0, gA1 = A > 0 ? r1.x(1) / A : 0.0;
  const double varA = gA0 * gA0 * r.covariance(0, 0) + 2 * gA0 * gA1 * r.covariance(0, 1) + gA1 * gA1 * r.covariance(1, 1);
  r.extra["contrast"] = std::min(A, 1.0);
  r.extra["contrast_sigma"] = std::sqrt(std::max(varA, 0.0));
  r.extra["phase"] = std::atan2(-r1.x(1), r1.x(0));
  r.residual_norm = r1.value;
  r.converged = r1.converged;
  for (int p = 0; p < 3; ++p) {
    const double sg = std::sqrt(std::max(r.covariance(p, p), 0.0));
    r.ci95[r.names[p]] = {r.values(p) - 1.96 * sg, r.values(p) + 1.96 * sg};
  }
  return r;
}

// ---------------------------------------------------------------- I/O

nlohmann::json to_json(const ShotData& d) {
  return {{"x", d.x}, {"successes", d.successes}, {"trials", d.trials}, {"outcome_label", d.outcome_label}};
}

ShotData shot_data_from_json(const nlohmann::json& j) {
  ShotData d;
  d.x = j.at("x").get<std::vector<double>>();
  d.successes = j.at("successes").get<std::vector<long long>>();
  d.trials = j.at("trials").get<std::vector<long long>>();
  if (j.contains("outcome_label")) d.outcome_label = j.at("outcome_label").get<std::string>();
  d.validate();
  return d;
}

nlohmann::json to_json(const FitResult& r) {
  nlohmann::json params = nlohmann::json::object(), sig = nlohmann::json::object(), ci = nlohmann::json::object();
  for (std::size_t i = 0; i < r.names.size(); ++i) {
    params[r.names[i]] = r.values(i);
    sig[r.names[i]] = std::sqrt(std::max(r.covariance(i, i), 0.0));
  }
  for (const auto& [k, v] : r.ci95) ci[k] = {v.first, v.second};
  std::vector<std::vector<double>> cov(r.covariance.rows(), std::vector<double>(r.covariance.cols()));
  for (int a = 0; a < r.covariance.rows(); ++a)
    for (int b = 0; b < r.covariance.cols(); ++b) cov[a][b] = r.covariance(a, b);
  nlohmann::json j = {{"params", params}, {"sigma", sig},       {"ci95", ci},
                      {"covariance", cov}, {"residual_norm", r.residual_norm}, {"converged", r.converged}};
  if (!r.message.empty()) j["message"] = r.message;
  if (!r.stage_converged.empty()) j["stage_converged"] = r.stage_converged;
  if (!r.extra.empty()) j["extra"] = r.extra;
  return j;
}

ShotData read_shot_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path);
  ShotData d;
  std::string line;
  bool header = true;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (header) {
      header = false;
      if (line.find_first_of("abcdefghijklmnopqrstuvwxyz") != std::string::npos) continue;
    }
    std::stringstream ss(line);
    std::string a, b, cc;
    if (!std::getline(ss, a, ',') || !std::getline(ss, b, ',') || !std::getline(ss, cc, ','))
      throw ConfigError("bad CSV row: " + line);
    d.push(std::stod(a), std::stoll(b), std::stoll(cc));
  }
  d.validate();
  return d;
}

void write_shot_csv(const ShotData& d, const std::string& path, const std::string& x_header) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path);
  out << x_header << ",successes,trials\n";
  out.precision(17);
  for (std::size_t i = 0; i < d.size(); ++i) out << d.x[i] << ',' << d.successes[i] << ',' << d.trials[i] << '\n';
}

}  // namespace msgate::fit

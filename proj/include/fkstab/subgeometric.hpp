#ifndef FKSTAB_SUBGEOMETRIC_HPP
#define FKSTAB_SUBGEOMETRIC_HPP

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "contraction.hpp"
#include "core.hpp"
#include "linalg.hpp"

namespace fkstab {

// phi(v) = kappa0 v^delta, phi1(v) = kappa1 v^{1 - upsilon delta}, phi2(v) = kappa2 v (phi1(v)/v)^{1+chi}.
struct SubGeoDrift {
  double delta = 0, upsilon = 0, kappa0 = 0, kappa1 = 1;
  double kappa2 = 0, chi = 0;

  double phi(double v) const { return kappa0 * std::pow(v, delta); }
  double phi1(double v) const { return kappa1 * std::pow(v, 1 - upsilon * delta); }
  double dphi1(double v) const { return kappa1 * (1 - upsilon * delta) * std::pow(v, -upsilon * delta); }
  double phi2(double v) const { return kappa2 * v * std::pow(phi1(v) / v, 1 + chi); }
};

inline SubGeoDrift prototype_drift(double delta, double upsilon, double kappa0, double kappa1) {
  if (!(delta > 0 && delta < 1)) throw error("prototype_drift: delta must lie in (0,1)");
  if (!(upsilon > 0 && upsilon < 1)) throw error("prototype_drift: upsilon must lie in (0,1)");
  if (!(kappa0 > 0)) throw error("prototype_drift: kappa0 must be positive");
  if (!(kappa1 >= 1)) throw error("prototype_drift: kappa1 must be >= 1");
  SubGeoDrift d{delta, upsilon, kappa0, kappa1};
  d.chi = (1 - delta) / (upsilon * delta);
  d.kappa2 = kappa0 * std::pow(kappa1, -d.chi) * (1 - upsilon * delta);
  return d;
}

struct JensenReport {
  bool hypothesis_ok = false;  // P(V) <= V - phi(V) + c
  Eigen::Index worst_hypothesis = -1;
  double worst_hypothesis_gap = 0;
  double c1 = 0;
  bool holds = false;  // P(phi1(V)) <= phi1(V) - phi2(V) + c1
  Eigen::Index worst = -1;
  double worst_gap = 0;
};

inline JensenReport jensen_drift_check(const Eigen::MatrixXd& P, const Eigen::VectorXd& V, const SubGeoDrift& d,
                                       double c, double tol = 1e-12) {
  JensenReport rep;
  Eigen::VectorXd PV = P * V;
  Eigen::VectorXd hyp = PV - V + V.unaryExpr([&](double v) { return d.phi(v); }) - Eigen::VectorXd::Constant(V.size(), c);
  rep.worst_hypothesis_gap = hyp.maxCoeff(&rep.worst_hypothesis);
  rep.hypothesis_ok = rep.worst_hypothesis_gap <= tol * std::max(1.0, PV.cwiseAbs().maxCoeff());
  rep.c1 = c * d.dphi1(1.0);
  if (!rep.hypothesis_ok) return rep;
  Eigen::VectorXd F1 = V.unaryExpr([&](double v) { return d.phi1(v); });
  Eigen::VectorXd F2 = V.unaryExpr([&](double v) { return d.phi2(v); });
  Eigen::VectorXd gap = P * F1 - F1 + F2 - Eigen::VectorXd::Constant(V.size(), rep.c1);
  rep.worst_gap = gap.maxCoeff(&rep.worst);
  rep.holds = rep.worst_gap <= tol * std::max(1.0, F1.maxCoeff());
  return rep;
}

// Smallest c with P(V) <= V - phi(V) + c on the grid.
inline double measured_drift_constant(const Eigen::MatrixXd& P, const Eigen::VectorXd& V,
                                      const std::function<double(double)>& phi) {
  return std::max(0.0, (P * V - V + V.unaryExpr(phi)).maxCoeff());
}

// integral of f over [a,b] with a,b > 0, computed in log coordinates by composite Gauss-Legendre.
inline double log_integral(const std::function<double(double)>& f, double a, double b) {
  if (a == b) return 0;
  double la = std::log(a), lb = std::log(b);
  int cells = std::max(16, static_cast<int>(std::ceil(std::abs(lb - la) * 20)));
  auto q = gauss_legendre(la, lb, cells);
  double s = 0;
  for (Eigen::Index i = 0; i < q.nodes.size(); ++i) {
    double v = std::exp(q.nodes(i));
    s += q.weights(i) * v * f(v);
  }
  return s;
}

// Inverse of the decreasing map u -> F(u) on (0, top], by bisection in log u.
inline double invert_decreasing(const std::function<double(double)>& F, double target, double top) {
  double lo = top, hi = top;
  int guard = 0;
  while (F(lo) < target) {
    hi = lo;
    lo /= 2;
    if (++guard > 2000 || lo == 0) return 0;
  }
  for (int it = 0; it < 200 && hi - lo > 1e-13 * hi; ++it) {
    double mid = std::sqrt(lo * hi);
    if (F(mid) >= target) lo = mid;
    else hi = mid;
  }
  return std::sqrt(lo * hi);
}

// u_t <= I^{-1}(t), I(u) = int_u^{u0} dv / varsigma(v), for t = 0..T.
inline Eigen::VectorXd ode_majorant(double u0, const std::function<double(double)>& varsigma, int T) {
  if (!(u0 > 0)) throw error("ode_majorant: u0 must be positive");
  double s0 = varsigma(u0);
  if (!(s0 > 0) || !std::isfinite(s0)) throw error("ode_majorant: varsigma(u0) must be positive and finite");
  auto I = [&](double u) { return log_integral([&](double v) { return 1 / varsigma(v); }, u, u0); };
  Eigen::VectorXd out(T + 1);
  out(0) = u0;
  for (int t = 1; t <= T; ++t) out(t) = invert_decreasing(I, t, u0);
  return out;
}

// psi_rho(v) = psi(rho^2 v/(1+rho)^2)/(1+rho).
inline std::function<double(double)> rescaled_psi(std::function<double(double)> psi, double rho) {
  return [psi, rho](double v) { return psi(rho * rho * v / ((1 + rho) * (1 + rho))) / (1 + rho); };
}

struct RateBound {
  double value = 0;
  bool vacuous = false;
};

// J^{-1}(t) with J(u) = int_u^iota dv / psi_rho(v).
inline RateBound general_rate_bound(const std::function<double(double)>& psi, double rho, double iota, double t) {
  if (!(rho > 0) || !(iota > 0)) throw error("general_rate_bound: rho and iota must be positive");
  if (t <= 0) return {iota, true};
  auto pr = rescaled_psi(psi, rho);
  auto J = [&](double u) { return log_integral([&](double v) { return 1 / pr(v); }, u, iota); };
  return {invert_decreasing(J, t, iota), false};
}

struct SubGeoWindow {
  bool found = false;
  double r = 0, rho = 0, alpha1 = 0, alpha2 = 0, delta_rho = 0, omega = 0, c_rho_chi = 0;
  std::string reason;
};

// Searches (r, rho) satisfying rho (c1 ^ c) <= alpha1 ^ alpha2 and
// delta_rho = kappa2 (rho - 2 (alpha1 v alpha2)/r) > 0, maximizing omega(rho).
inline SubGeoWindow subgeometric_window(const Eigen::MatrixXd& P, const Eigen::VectorXd& V, const SubGeoDrift& d,
                                        double c) {
  SubGeoWindow best;
  Eigen::VectorXd F = V.unaryExpr([&](double v) { return d.phi(v); });
  Eigen::VectorXd F2 = V.unaryExpr([&](double v) { return d.phi2(v); });
  double c1 = c * d.dphi1(1.0);
  double cmin = std::min(c1, c);
  double lo = std::max(F.minCoeff(), F2.minCoeff());
  double hi = std::max(F.maxCoeff(), F2.maxCoeff());
  std::vector<double> radii;
  for (int k = 0; k <= 40; ++k) radii.push_back(lo * std::pow(hi / lo, k / 40.0));
  for (int k = 1; k <= 12; ++k) radii.push_back(hi * std::pow(2.0, k));
  best.reason = "no admissible (r, rho) on the grid";
  for (double r : radii) {
    double a1, a2;
    try {
      a1 = local_minorization(P, F, r);
      a2 = local_minorization(P, F2, r);
    } catch (const error&) {
      continue;
    }
    double amin = std::min(a1, a2), amax = std::max(a1, a2);
    if (!(amin > 0)) continue;
    double rho_hi = cmin > 0 ? amin / cmin : 1e6;
    double rho_lo = 2 * amax / r;
    if (!(rho_hi > rho_lo)) continue;
    for (int k = 1; k <= 50; ++k) {
      double rho = rho_lo + (rho_hi - rho_lo) * k / 50.0;
      double dr = d.kappa2 * (rho - 2 * amax / r);
      double om = std::pow(rho, d.chi) * dr / std::pow(1 + rho, 1 + d.chi);
      if (dr > 0 && om > best.omega) {
        best.found = true;
        best.r = r;
        best.rho = rho;
        best.alpha1 = a1;
        best.alpha2 = a2;
        best.delta_rho = dr;
        best.omega = om;
        best.c_rho_chi = std::pow(d.chi * om, -1 / d.chi);
        best.reason.clear();
      }
    }
  }
  return best;
}

struct PolynomialRateReport {
  Eigen::VectorXd norms;     // |mu P^t|_{1 + rho phi1(V)}, t = 0..T
  Eigen::VectorXd tv;        // ||mu P^t||_tv
  Eigen::VectorXd envelope;  // c t^{-1/chi} |mu|_{1 + rho V}, t >= 1 (0 at t = 0)
  bool certified = false;
  bool dominated = false;
  SubGeoWindow window;
  std::string note;
};

inline PolynomialRateReport polynomial_rate_check(const Eigen::MatrixXd& P, const Eigen::VectorXd& V,
                                                  const SubGeoDrift& d, double c, const Eigen::VectorXd& mu, int T,
                                                  double rho = 0) {
  PolynomialRateReport rep;
  auto jr = jensen_drift_check(P, V, d, c);
  if (jr.hypothesis_ok && jr.holds) {
    rep.window = subgeometric_window(P, V, d, c);
    rep.certified = rep.window.found;
    if (!rep.certified) rep.note = rep.window.reason;
  } else {
    rep.note = jr.hypothesis_ok ? "Jensen drift inequality fails" : "drift hypothesis P(V) <= V - phi(V) + c fails";
  }
  if (rho <= 0) rho = rep.certified ? rep.window.rho : 0.1;
  else if (rep.certified && rho != rep.window.rho) {
    rep.certified = false;
    rep.note = "requested rho differs from the certified window";
  }
  Eigen::VectorXd F1 = V.unaryExpr([&](double v) { return d.phi1(v); });
  Eigen::VectorXd W1 = (1 + rho * F1.array()).matrix();
  Eigen::VectorXd W = (1 + rho * V.array()).matrix();
  double base = v_norm_measure(mu, W);
  rep.norms.resize(T + 1);
  rep.tv.resize(T + 1);
  rep.envelope = Eigen::VectorXd::Zero(T + 1);
  Eigen::VectorXd m = mu;
  for (int t = 0; t <= T; ++t) {
    rep.norms(t) = v_norm_measure(m, W1);
    rep.tv(t) = tv_norm(m);
    m = P.transpose() * m;
  }
  if (rep.certified) {
    rep.dominated = true;
    for (int t = 1; t <= T; ++t) {
      rep.envelope(t) = rep.window.c_rho_chi * std::pow(t, -1 / d.chi) * base;
      if (rep.norms(t) > rep.envelope(t) * (1 + 1e-9)) rep.dominated = false;
    }
  }
  return rep;
}

// Least-squares slope of log y against log t over t in [t0, t1], skipping y <= floor.
inline double loglog_slope(const Eigen::VectorXd& y, int t0, int t1, double floor = 0) {
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  int n = 0;
  for (int t = std::max(1, t0); t <= t1 && t < y.size(); ++t) {
    if (!(y(t) > floor)) continue;
    double a = std::log(t), b = std::log(y(t));
    sx += a, sy += b, sxx += a * a, sxy += a * b;
    ++n;
  }
  if (n < 2) return std::numeric_limits<double>::quiet_NaN();
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

}  // namespace fkstab

#endif

#ifndef FKSTAB_CONTRACTION_HPP
#define FKSTAB_CONTRACTION_HPP

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "core.hpp"
#include "kernels.hpp"

namespace fkstab {

struct ContractionReport {
  double beta = 0;
  Eigen::Index x = 0, y = 0;  // witness pair
  std::string V_used;
};

// sup over grid pairs of |delta_x P - delta_y P|(V) / (V(x) + V(y)).
inline ContractionReport v_dobrushin(const Eigen::MatrixXd& P, const Eigen::VectorXd& V, int threads = 1) {
  if (P.rows() != P.cols() || P.rows() != V.size()) throw error("v_dobrushin: shape mismatch");
  Eigen::Index n = P.rows();
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> R = P;
  int workers = std::max(1, std::min<int>(threads, static_cast<int>(n)));
  std::vector<ContractionReport> best(workers);
  std::size_t chunk = (n + workers - 1) / workers;
  parallel_for(static_cast<std::size_t>(n), workers, [&](std::size_t b, std::size_t e) {
    ContractionReport local;
    local.beta = -1;
    for (std::size_t i = b; i < e; ++i)
      for (Eigen::Index j = i + 1; j < n; ++j) {
        double s = ((R.row(i) - R.row(j)).cwiseAbs().array() * V.transpose().array()).sum();
        double ratio = s / (V(i) + V(j));
        if (ratio > local.beta) local = {ratio, static_cast<Eigen::Index>(i), j, ""};
      }
    best[b / chunk] = local;
  });
  ContractionReport out;
  out.beta = 0;
  for (const auto& r : best)
    if (r.beta > out.beta) out = r;
  return out;
}

inline ContractionReport v_dobrushin(const DiscreteOperator& P, const LyapunovSpec& V, int threads = 1) {
  if (!P.grid) throw error("v_dobrushin: operator has no grid");
  auto r = v_dobrushin(P.matrix, V.on(P.grid).values, threads);
  r.V_used = V.to_string();
  return r;
}

// 1 - max total variation distance between rows started in {V <= r}.
inline double local_minorization(const Eigen::MatrixXd& P, const Eigen::VectorXd& V, double r) {
  std::vector<Eigen::Index> S;
  for (Eigen::Index i = 0; i < V.size(); ++i)
    if (V(i) <= r) S.push_back(i);
  if (S.empty()) throw error("local_minorization: empty sub-level set; smallest V is " + std::to_string(V.minCoeff()));
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> R = P;
  double worst = 0;
  for (std::size_t a = 0; a < S.size(); ++a)
    for (std::size_t b = a + 1; b < S.size(); ++b)
      worst = std::max(worst, (R.row(S[a]) - R.row(S[b])).cwiseAbs().sum() / 2);
  return 1 - worst;
}

inline double local_minorization(const DiscreteOperator& P, const LyapunovSpec& V, double r) {
  if (!P.grid) throw error("local_minorization: operator has no grid");
  return local_minorization(P.matrix, V.on(P.grid).values, r);
}

// V -> (1 + eps V / c)/2 turns P(V) <= eps V + c into the same bound with c = 1/2.
inline LyapunovSpec normalize_drift(const LyapunovSpec& V, double eps, double c) {
  if (!(c > 0)) throw error("normalize_drift: c must be positive");
  return LyapunovSpec::affine_rescale(V, 0.5, eps / (2 * c));
}
inline Eigen::VectorXd normalize_drift(const Eigen::VectorXd& V, double eps, double c) {
  if (!(c > 0)) throw error("normalize_drift: c must be positive");
  return (0.5 + eps / (2 * c) * V.array()).matrix();
}

struct RescaledLyapunov {
  double eps = 0, alpha_r = 0, r = 0;
  double r_eps = 0;
  double alpha_eps = 0;   // contraction margin: beta <= 1 - alpha_eps
  double scale = 0;       // V_{eps,r} = (1 + scale V)/2
  double c_theorem = 0;   // 1 + 2r(1+eps)/alpha(r)
  LyapunovSpec V_rescaled = LyapunovSpec::constant(0.5);

  Eigen::VectorXd apply(const Eigen::VectorXd& V) const { return (0.5 * (1 + scale * V.array())).matrix(); }
};

// V must already satisfy P(V) <= eps V + 1/2; alpha_r is measured on its sub-level set {V <= r}.
inline RescaledLyapunov rescaled_lyapunov(double eps, double alpha_r, double r, const LyapunovSpec& V) {
  if (!(eps > 0 && eps < 1)) throw error("rescaled_lyapunov: eps must lie in (0,1)");
  if (!(alpha_r > 0 && alpha_r <= 1)) throw error("rescaled_lyapunov: alpha(r) must lie in (0,1]");
  RescaledLyapunov out;
  out.eps = eps;
  out.alpha_r = alpha_r;
  out.r = r;
  out.r_eps = 1 / (1 - eps);
  if (!(r > out.r_eps)) throw error("rescaled_lyapunov: r must exceed r_eps = 1/(1-eps); bound is vacuous");
  out.alpha_eps = alpha_r / 2 * (1 - eps) / ((1 + eps) + alpha_r / 2) * (1 - out.r_eps / r);
  out.scale = alpha_r / ((1 + eps) * r);
  out.c_theorem = 1 + 2 * r * (1 + eps) / alpha_r;
  out.V_rescaled = LyapunovSpec::affine_rescale(V, 0.5, out.scale / 2);
  return out;
}

inline RescaledLyapunov rescaled_lyapunov(double eps, double c, double alpha_r, double r, const LyapunovSpec& V) {
  return rescaled_lyapunov(eps, alpha_r, r, normalize_drift(V, eps, c));
}

struct DriftPair {
  double eps = 0, c = 0;
  Eigen::Index k_size = 0;  // number of grid points in K_eps = {theta >= eps}
};

struct DriftCertificate {
  bool ok = false;
  std::string failure;
  double epsilon = 0, c = 0, r = 0, alpha_r = 0;
  Eigen::VectorXd theta;
  std::vector<DriftPair> pairs;
  bool edge_decay = false;
  double theta_v_sup = 0;  // sup theta V, the constant c_t in theta <= c_t / V
  Eigen::VectorXd V_normalized;
};

// theta = P(V)/V; for eps below sup theta, P(V) <= eps V + 1_{K_eps} c_eps with
// K_eps = {theta >= eps} and c_eps = sup theta * sup_{K_eps} V.
inline DriftCertificate foster_lyapunov_verify(const Eigen::MatrixXd& P, const Eigen::VectorXd& V) {
  DriftCertificate cert;
  Eigen::VectorXd PV = P * V;
  cert.theta = PV.cwiseQuotient(V);
  cert.edge_decay = edge_decay(cert.theta);
  cert.theta_v_sup = PV.maxCoeff();
  double lo = cert.theta.minCoeff(), sup = cert.theta.maxCoeff();
  if (lo >= 1) {
    cert.failure = "no eps < 1 achievable: P(V)/V >= 1 at every grid point";
    return cert;
  }
  double top = std::min(1.0, sup);
  for (int k = 1; k <= 9; ++k) {
    double eps = lo + (top - lo) * k / 10;
    if (!(eps > 0)) continue;
    DriftPair pr;
    pr.eps = eps;
    double vmax = 0;
    for (Eigen::Index i = 0; i < V.size(); ++i)
      if (cert.theta(i) >= eps) {
        ++pr.k_size;
        vmax = std::max(vmax, V(i));
      }
    pr.c = sup * vmax;
    for (Eigen::Index i = 0; i < V.size(); ++i)
      if (PV(i) > eps * V(i) + (cert.theta(i) >= eps ? pr.c : 0.0) + 1e-12 * std::abs(PV(i)))
        throw error("foster_lyapunov_verify: internal inequality check failed");
    cert.pairs.push_back(pr);
  }
  if (cert.pairs.empty()) {
    cert.failure = "no positive eps below min(1, sup theta)";
    return cert;
  }
  const DriftPair& mid = cert.pairs[cert.pairs.size() / 2];
  cert.epsilon = mid.eps;
  cert.c = mid.c;
  if (!(cert.c > 0)) cert.c = 0.5;
  cert.V_normalized = normalize_drift(V, cert.epsilon, cert.c);
  double r_eps = 1 / (1 - cert.epsilon);
  cert.r = std::max(2 * r_eps, cert.V_normalized.minCoeff() * 1.000001);
  cert.alpha_r = local_minorization(P, cert.V_normalized, cert.r);
  cert.ok = cert.alpha_r > 0;
  if (!cert.ok) cert.failure = "local minorization vanishes on the chosen sub-level set";
  return cert;
}

inline DriftCertificate foster_lyapunov_verify(const DiscreteOperator& P, const LyapunovSpec& V) {
  if (!P.grid) throw error("foster_lyapunov_verify: operator has no grid");
  return foster_lyapunov_verify(P.matrix, V.on(P.grid).values);
}

// Least-squares slope of log(values) against index over the tail half,
// ignoring entries below `floor` times the first value.
inline double fit_log_slope(const Eigen::VectorXd& values, double floor = 1e-12) {
  Eigen::Index n = values.size();
  double ref = values.cwiseAbs().maxCoeff();
  std::vector<double> xs, ys;
  for (Eigen::Index t = n / 2; t < n; ++t)
    if (values(t) > floor * ref && values(t) > 0) {
      xs.push_back(static_cast<double>(t));
      ys.push_back(std::log(values(t)));
    }
  if (xs.size() < 2) return -std::numeric_limits<double>::infinity();
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) mx += xs[i], my += ys[i];
  mx /= xs.size();
  my /= xs.size();
  double sxy = 0, sxx = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sxy += (xs[i] - mx) * (ys[i] - my);
    sxx += (xs[i] - mx) * (xs[i] - mx);
  }
  return sxy / sxx;
}

struct DecayCurve {
  Eigen::VectorXd values;    // |(mu - eta) P^t|(V), t = 0..T
  double rate_per_step = 0;  // b with values ~ e^{-b t}
  double rate_per_time = 0;  // b / time_step
  bool certified = false;
  Eigen::VectorXd normalized_values, envelope;  // in the normalized V' of the certificate
  double beta = 0;
  bool dominated = false;
};

inline DecayCurve geometric_decay_curve(const Eigen::MatrixXd& P, const Eigen::VectorXd& V, const Eigen::VectorXd& mu,
                                        const Eigen::VectorXd& eta, int T, double time_step = 1.0,
                                        const DriftCertificate* cert = nullptr) {
  DecayCurve out;
  out.values.resize(T + 1);
  Eigen::VectorXd d = mu - eta;
  std::vector<Eigen::VectorXd> path;
  for (int t = 0; t <= T; ++t) {
    out.values(t) = v_norm_measure(d, V);
    path.push_back(d);
    d = P.transpose() * d;
  }
  out.rate_per_step = -fit_log_slope(out.values);
  out.rate_per_time = out.rate_per_step / time_step;
  if (cert && cert->ok) {
    auto rl = rescaled_lyapunov(cert->epsilon, cert->alpha_r, cert->r, LyapunovSpec::constant(1));
    Eigen::VectorXd Vn = cert->V_normalized;
    out.beta = v_dobrushin(P, rl.apply(Vn)).beta;
    out.normalized_values.resize(T + 1);
    out.envelope.resize(T + 1);
    double d0 = v_norm_measure(path[0], Vn);
    out.dominated = true;
    for (int t = 0; t <= T; ++t) {
      out.normalized_values(t) = v_norm_measure(path[t], Vn);
      out.envelope(t) = rl.c_theorem * std::pow(out.beta, t) * d0;
      if (out.normalized_values(t) > out.envelope(t) * (1 + 1e-9) + 1e-300) out.dominated = false;
    }
    out.certified = true;
  }
  return out;
}

struct NonexpansiveReport {
  bool hypothesis_ok = false;  // P(V) <= V - phi(V) + c with the reported c
  double c = 0, alpha1 = 0;
  bool window_ok = false;
  std::string violation;
  double worst_ratio = 0;  // sup_t |mu P^t|_{1+rho V} / |mu|_{1+rho V}
  bool nonexpansive = false;
  bool phi_ratio_decays = false;
};

inline NonexpansiveReport nonexpansive_check(const Eigen::MatrixXd& P, const Eigen::VectorXd& V,
                                             const std::function<double(double)>& phi, double rho, double r,
                                             int T = 50, std::uint64_t seed = 1) {
  NonexpansiveReport rep;
  Eigen::Index n = V.size();
  Eigen::VectorXd phiV = V.unaryExpr(phi);
  Eigen::VectorXd PV = P * V;
  rep.c = std::max(0.0, (PV - V + phiV).maxCoeff());
  rep.hypothesis_ok = true;
  Eigen::Index imax, imin;
  V.maxCoeff(&imax);
  V.minCoeff(&imin);
  rep.phi_ratio_decays = phiV(imax) / V(imax) < phiV(imin) / V(imin);
  Eigen::VectorXd level = phiV;
  rep.alpha1 = local_minorization(P, level, r);
  if (rho * rep.c > rep.alpha1)
    rep.violation = "rho c <= alpha1(r) fails: " + std::to_string(rho * rep.c) + " > " + std::to_string(rep.alpha1);
  else if (rho < 2 * rep.alpha1 / r)
    rep.violation = "rho >= 2 alpha1(r)/r fails: " + std::to_string(rho) + " < " + std::to_string(2 * rep.alpha1 / r);
  rep.window_ok = rep.violation.empty();
  Eigen::VectorXd W = (1 + rho * V.array()).matrix();
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0, 1);
  for (int k = 0; k < 50; ++k) {
    Eigen::VectorXd a(n), b(n);
    for (Eigen::Index i = 0; i < n; ++i) a(i) = u(rng), b(i) = u(rng);
    Eigen::VectorXd mu = a / a.sum() - b / b.sum();
    double base = v_norm_measure(mu, W);
    for (int t = 1; t <= T; ++t) {
      mu = P.transpose() * mu;
      rep.worst_ratio = std::max(rep.worst_ratio, v_norm_measure(mu, W) / base);
    }
  }
  rep.nonexpansive = rep.worst_ratio <= 1 + 1e-12;
  return rep;
}

}  // namespace fkstab

#endif

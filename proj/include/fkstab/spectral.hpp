#ifndef FKSTAB_SPECTRAL_HPP
#define FKSTAB_SPECTRAL_HPP

#include <Eigen/Dense>

#include <cmath>
#include <queue>
#include <string>
#include <vector>

#include "contraction.hpp"
#include "core.hpp"
#include "kernels.hpp"

namespace fkstab {

struct NormalizedFlow {
  std::vector<Eigen::VectorXd> measures;  // Phi_{k tau}(eta0), k = 0..n (fewer if absorbed)
  std::vector<double> masses;             // Phi_{k tau}(eta0)(Q(1)), k = 0..n-1
  bool absorbed = false;
  int absorbed_step = -1;
};

inline NormalizedFlow normalized_flow(const Eigen::MatrixXd& Q, const Eigen::VectorXd& eta0, int n) {
  if (!is_probability(eta0)) throw error("normalized_flow: eta0 must be a probability vector");
  NormalizedFlow out;
  out.measures.push_back(eta0);
  Eigen::VectorXd eta = eta0;
  for (int k = 0; k < n; ++k) {
    Eigen::VectorXd next = Q.transpose() * eta;
    double m = next.sum();
    if (!(m > 0)) {
      out.absorbed = true;
      out.absorbed_step = k;
      break;
    }
    out.masses.push_back(m);
    eta = next / m;
    out.measures.push_back(eta);
  }
  return out;
}

// Every grid point reaches every other through positive entries.
inline bool irreducible(const Eigen::MatrixXd& Q) {
  Eigen::Index n = Q.rows();
  if ((Q.rowwise().sum().array() <= 0).any()) return false;
  auto reach_all = [&](bool transpose) {
    std::vector<char> seen(n, 0);
    std::queue<Eigen::Index> q;
    q.push(0);
    seen[0] = 1;
    Eigen::Index count = 1;
    while (!q.empty()) {
      Eigen::Index i = q.front();
      q.pop();
      for (Eigen::Index j = 0; j < n; ++j) {
        double v = transpose ? Q(j, i) : Q(i, j);
        if (v > 0 && !seen[j]) {
          seen[j] = 1;
          ++count;
          q.push(j);
        }
      }
    }
    return count == n;
  };
  return reach_all(false) && reach_all(true);
}

struct EigenTriple {
  double rho = 0;        // from the left mass ratio
  double rho_right = 0;  // from the right growth ratio
  double tau = 1;
  Eigen::VectorXd h, eta;  // eta(h) = 1
  bool converged = false;
  int iterations = 0;
  double residual_h = 0, residual_eta = 0;
};

inline EigenTriple leading_eigentriple(const Eigen::MatrixXd& Q, double tau, double tol = 1e-10,
                                       int max_iter = 20000) {
  if (!irreducible(Q)) throw error("leading_eigentriple: operator is not irreducible on the grid");
  Eigen::Index n = Q.rows();
  EigenTriple tr;
  tr.tau = tau;
  Eigen::VectorXd h = Eigen::VectorXd::Ones(n), eta = Eigen::VectorXd::Constant(n, 1.0 / n);
  Eigen::MatrixXd Qt = Q.transpose();
  for (int it = 1; it <= max_iter; ++it) {
    Eigen::VectorXd Qh = Q * h;
    double gh = Qh.cwiseAbs().maxCoeff() / h.cwiseAbs().maxCoeff();
    Eigen::VectorXd etaQ = Qt * eta;
    double m = etaQ.sum();
    tr.residual_h = (Qh - gh * h).cwiseAbs().maxCoeff() / (gh * h.cwiseAbs().maxCoeff());
    tr.residual_eta = tv_norm(Eigen::VectorXd(etaQ / m - eta));
    h = Qh / Qh.cwiseAbs().maxCoeff();
    eta = etaQ / m;
    tr.rho = std::log(m) / tau;
    tr.rho_right = std::log(gh) / tau;
    tr.iterations = it;
    if (tr.residual_h <= tol && tr.residual_eta <= tol) {
      tr.converged = true;
      break;
    }
  }
  tr.h = h / eta.dot(h);
  tr.eta = eta;
  return tr;
}

inline EigenTriple leading_eigentriple(const DiscreteOperator& Q, double tol = 1e-10, int max_iter = 20000) {
  return leading_eigentriple(Q.matrix, Q.time_step, tol, max_iter);
}

struct GroundStateProduct {
  double value = 0;
  std::vector<double> factors;
  bool ok = true;
  int failed_at = -1;
};

// prod_{n<N} (1 + e^{-rho tau}[Phi_n(delta_x)(Q1) - Phi_n(eta)(Q1)]).
inline GroundStateProduct ground_state_product(const Eigen::MatrixXd& Q, const EigenTriple& tr, Eigen::Index x,
                                               int N) {
  GroundStateProduct out;
  Eigen::VectorXd q1 = Q.rowwise().sum();
  Eigen::VectorXd dx = Eigen::VectorXd::Zero(Q.rows());
  dx(x) = 1;
  auto fx = normalized_flow(Q, dx, N);
  auto fe = normalized_flow(Q, tr.eta, N);
  double s = std::exp(-tr.rho * tr.tau);
  double logp = 0;
  for (int k = 0; k < N; ++k) {
    double f = 1 + s * (fx.measures[k].dot(q1) - fe.measures[k].dot(q1));
    out.factors.push_back(f);
    if (!(f > 0)) {
      out.ok = false;
      out.failed_at = k;
      return out;
    }
    logp += std::log(f);
  }
  out.value = std::exp(logp);
  return out;
}

struct GapCurve {
  Eigen::VectorXd gap;  // t = 1..T in units of tau (index 0 is t = 0)
  double rate_per_time = 0;
};

// V-operator-norm distance between Q_t / mu Q_t(1) and T^{mu,H}_t.
inline GapCurve finite_rank_gap(const Eigen::MatrixXd& Q, double tau, const Eigen::VectorXd& mu,
                                const Eigen::VectorXd& H, const Eigen::VectorXd& V, int T) {
  if ((H.array() <= 0).any()) throw error("finite_rank_gap: H must be positive");
  GapCurve out;
  out.gap.resize(T + 1);
  Eigen::Index n = Q.rows();
  Eigen::MatrixXd Qt = Eigen::MatrixXd::Identity(n, n);
  Eigen::VectorXd mut = mu;
  for (int t = 0; t <= T; ++t) {
    double z = mu.dot(Qt.rowwise().sum());
    Eigen::MatrixXd K = Qt / z - (Qt * H) * mut.transpose() / z;
    out.gap(t) = v_operator_norm_signed(K, V);
    Qt = Qt * Q;
    Eigen::VectorXd next = Q.transpose() * mut;
    mut = next / next.sum();
  }
  out.rate_per_time = -fit_log_slope(out.gap, 1e-13) / tau;
  return out;
}

struct SpectralDecayReport {
  double lhs = 0, rhs = 0;
  double nu_f2 = 0, nu_hf = 0;
  bool holds = false;
};

// L2(nu) distance between e^{-rho t}Q_t f and h eta(f)/eta(h) against e^{rho_2^h t}(nu(f^2) - nu(hf)^2)^{1/2}.
inline SpectralDecayReport spectral_decay_check(const ClosedFormKernel& model, const grid_ptr& grid,
                                                const Eigen::VectorXd& f, double t, double slack = 1e-6) {
  if (!model.self_adjoint()) throw error("spectral_decay_check: model " + model.name() + " is not self-adjoint");
  auto ex = model.exact_spectrum();
  Eigen::VectorXd h = grid->xs().unaryExpr(ex.h);
  const Eigen::VectorXd& w = grid->weights();
  auto Q = discretize(model, grid, t);
  SpectralDecayReport rep;
  rep.nu_f2 = (w.array() * f.array().square()).sum();
  rep.nu_hf = (w.array() * h.array() * f.array()).sum();
  double nu_h2 = (w.array() * h.array().square()).sum();
  Eigen::VectorXd d = std::exp(-ex.rho * t) * (Q.matrix * f) - h * (rep.nu_hf / nu_h2);
  rep.lhs = std::sqrt((w.array() * d.array().square()).sum());
  rep.rhs = std::exp(ex.gap_rate * t) * std::sqrt(std::max(0.0, rep.nu_f2 - rep.nu_hf * rep.nu_hf / nu_h2));
  rep.holds = rep.lhs <= rep.rhs + slack;
  return rep;
}

struct CommuteReport {
  std::vector<int> steps;
  std::vector<double> tv;
  double worst = 0;
};

// Psi_h(Phi_t(eta)) against Psi_h(eta) P^h_t at t = k tau.
inline CommuteReport h_transform_commute(const DiscreteOperator& Q, const EigenTriple& tr, const Eigen::VectorXd& eta,
                                         std::vector<int> steps = {1, 2, 5}) {
  auto P = doob_h_transform(Q, tr.h, tr.rho);
  CommuteReport rep;
  int kmax = 0;
  for (int k : steps) kmax = std::max(kmax, k);
  auto flow = normalized_flow(Q.matrix, eta, kmax);
  Eigen::VectorXd right = boltzmann_gibbs(tr.h, eta);
  for (int k = 1; k <= kmax; ++k) {
    right = P.matrix.transpose() * right;
    if (std::find(steps.begin(), steps.end(), k) == steps.end()) continue;
    Eigen::VectorXd left = boltzmann_gibbs(tr.h, flow.measures[k]);
    double d = tv_norm(Eigen::VectorXd(left - right));
    rep.steps.push_back(k);
    rep.tv.push_back(d);
    rep.worst = std::max(rep.worst, d);
  }
  return rep;
}

}  // namespace fkstab

#endif

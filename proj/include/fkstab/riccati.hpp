#ifndef FKSTAB_RICCATI_HPP
#define FKSTAB_RICCATI_HPP

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "core.hpp"
#include "linalg.hpp"
#include "rng.hpp"

namespace fkstab {

// Ricc(z) = a0 + a1 z - b z^2
struct ScalarRiccati {
  double a0 = 0, a1 = 0, b = 1;

  double operator()(double z) const { return a0 + a1 * z - b * z * z; }
  double fixed_point() const { return (a1 + std::sqrt(a1 * a1 + 4 * a0 * b)) / (2 * b); }
  void validate() const {
    if (!(a0 >= 0)) throw error("ScalarRiccati: a0 must be >= 0");
    if (!(b > 0)) throw error("ScalarRiccati: b must be > 0");
    if (!std::isfinite(a1)) throw error("ScalarRiccati: a1 must be finite");
  }
};

namespace detail {

inline bool scalar_riccati_run(const ScalarRiccati& spec, double z0, const std::vector<double>& times, double dt,
                               std::vector<double>& out) {
  out.clear();
  double z = z0, t = 0;
  for (double target : times) {
    if (target < t) throw error("scalar_riccati: times must be ascending and >= 0");
    int steps = target > t ? step_count(target - t, dt) : 0;
    double h = steps ? (target - t) / steps : 0;
    for (int k = 0; k < steps; ++k) {
      double k1 = spec(z), k2 = spec(z + h / 2 * k1), k3 = spec(z + h / 2 * k2), k4 = spec(z + h * k3);
      z += h / 6 * (k1 + 2 * k2 + 2 * k3 + k4);
      if (!std::isfinite(z) || z < -1e-9) return false;
    }
    t = target;
    out.push_back(z);
  }
  return true;
}

}  // namespace detail

// Values of the flow at each of `times` (ascending). RK4 at step dt checked against dt/2
// (Richardson); the step is halved until both agree to `tol`.
inline std::vector<double> scalar_riccati_path(const ScalarRiccati& spec, double z0, const std::vector<double>& times,
                                               double dt = 1e-3, double tol = 1e-11) {
  spec.validate();
  if (!(z0 >= 0)) throw error("scalar_riccati: z0 must be >= 0");
  std::vector<double> coarse, fine;
  for (int attempt = 0; attempt < 12; ++attempt, dt /= 2) {
    if (!detail::scalar_riccati_run(spec, z0, times, dt, coarse)) continue;
    if (!detail::scalar_riccati_run(spec, z0, times, dt / 2, fine)) continue;
    bool ok = true;
    for (std::size_t k = 0; k < fine.size() && ok; ++k) ok = std::abs(fine[k] - coarse[k]) <= tol * (1 + std::abs(fine[k]));
    if (ok) return fine;
  }
  throw error("scalar_riccati: no stable step after 12 halvings");
}

inline double scalar_riccati(const ScalarRiccati& spec, double z0, double t, double dt = 1e-3) {
  return scalar_riccati_path(spec, z0, {t}, dt).front();
}

// dp/dt = A p + p A' + R - p S p
struct MatrixRiccati {
  Eigen::MatrixXd A, R, S, p0;

  Eigen::MatrixXd rhs(const Eigen::MatrixXd& p) const { return A * p + p * A.transpose() + R - p * S * p; }

  void validate() const {
    Eigen::Index n = A.rows();
    if (A.cols() != n || R.rows() != n || R.cols() != n || S.rows() != n || S.cols() != n)
      throw error("MatrixRiccati: A, R, S must be n x n");
    Eigen::MatrixXd p = p0.size() ? p0 : Eigen::MatrixXd::Zero(n, n);
    if (p.rows() != n || p.cols() != n) throw error("MatrixRiccati: p0 must be n x n");
    auto check = [](const Eigen::MatrixXd& M, const char* name) {
      if ((M - M.transpose()).cwiseAbs().maxCoeff() > 1e-12 * (1 + M.cwiseAbs().maxCoeff()))
        throw error(std::string("MatrixRiccati: ") + name + " must be symmetric");
      if (min_eigenvalue(M) < -1e-12) throw error(std::string("MatrixRiccati: ") + name + " must be PSD");
    };
    check(R, "R");
    check(S, "S");
    check(p, "p0");
  }
  Eigen::MatrixXd initial() const { return p0.size() ? p0 : Eigen::MatrixXd::Zero(A.rows(), A.rows()); }
};

inline Eigen::MatrixXd matrix_riccati_step(const MatrixRiccati& spec, const Eigen::MatrixXd& p, double h) {
  Eigen::MatrixXd k1 = symmetrize(spec.rhs(p));
  Eigen::MatrixXd k2 = symmetrize(spec.rhs(symmetrize(p + h / 2 * k1)));
  Eigen::MatrixXd k3 = symmetrize(spec.rhs(symmetrize(p + h / 2 * k2)));
  Eigen::MatrixXd k4 = symmetrize(spec.rhs(symmetrize(p + h * k3)));
  return symmetrize(p + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4));
}

using RiccatiObserver = std::function<void(double, const Eigen::MatrixXd&)>;

inline Eigen::MatrixXd matrix_riccati(const MatrixRiccati& spec, double t, double dt = 1e-3,
                                      const RiccatiObserver& observe = {}) {
  spec.validate();
  Eigen::MatrixXd p = spec.initial();
  int steps = t > 0 ? step_count(t, dt) : 0;
  double h = steps ? t / steps : 0;
  for (int k = 1; k <= steps; ++k) {
    p = matrix_riccati_step(spec, p, h);
    double lam = min_eigenvalue(p);
    if (lam < -1e-8 || !p.allFinite()) {
      std::ostringstream os;
      os << "matrix_riccati: PSD violation at step " << k << " (t=" << k * h << ", min eigenvalue " << lam << ")";
      throw error(os.str());
    }
    if (observe) observe(k * h, p);
  }
  return p;
}

inline double algebraic_residual(const MatrixRiccati& spec, const Eigen::MatrixXd& p) {
  return spec.rhs(p).cwiseAbs().maxCoeff();
}

struct RiccatiFixedPoint {
  Eigen::MatrixXd p;
  double residual = 0;
  double t = 0;
  bool converged = false;
};

// Long-time integration until the vector field vanishes.
inline RiccatiFixedPoint riccati_fixed_point(const MatrixRiccati& spec, double dt = 1e-3, double tol = 1e-12,
                                             double t_max = 1e4) {
  spec.validate();
  RiccatiFixedPoint out;
  out.p = spec.initial();
  int chunk = step_count(1.0, dt);
  double h = 1.0 / chunk;
  while (out.t < t_max) {
    for (int k = 0; k < chunk; ++k) out.p = matrix_riccati_step(spec, out.p, h);
    out.t += 1.0;
    if (!out.p.allFinite()) throw error("riccati_fixed_point: flow diverged");
    out.residual = algebraic_residual(spec, out.p);
    if (out.residual <= tol * (1 + out.p.cwiseAbs().maxCoeff())) {
      out.converged = true;
      break;
    }
  }
  return out;
}

struct CoupledOscillator {
  Eigen::VectorXd m;
  Eigen::MatrixXd p, F;
  Eigen::MatrixXd int_FSF;  // int_0^t F_s' S F_s ds
  double int_trSp = 0;      // int_0^t Tr(S p_s) ds
  double logQ1 = 0;
  double rho_hat = 0;
};

// Joint RK4 for (m, p, F) and the accumulators; rho_hat averages -Tr(S p_s)/2 over the last tenth of [0,t].
inline CoupledOscillator coupled_oscillator_semigroup(const Eigen::MatrixXd& A, const Eigen::MatrixXd& Sigma,
                                                      const Eigen::MatrixXd& S, const Eigen::VectorXd& x, double t,
                                                      double dt = 1e-3) {
  Eigen::Index n = A.rows();
  if (Sigma.rows() != n || x.size() != n) throw error("coupled_oscillator_semigroup: dimension mismatch");
  Eigen::MatrixXd R = Sigma * Sigma.transpose();
  MatrixRiccati spec{A, R, S, Eigen::MatrixXd::Zero(n, n)};
  spec.validate();
  if (controllability_rank(A, psd_sqrt(R)) < n)
    throw error("coupled_oscillator_semigroup: (A, R^{1/2}) is not controllable");
  if (controllability_rank(A.transpose(), psd_sqrt(S)) < n)
    throw error("coupled_oscillator_semigroup: (A', S^{1/2}) is not controllable");
  if (!(t > 0)) throw error("coupled_oscillator_semigroup: t must be > 0");

  Eigen::Index nn = n * n;
  auto pack = [&](const Eigen::VectorXd& m, const Eigen::MatrixXd& p, const Eigen::MatrixXd& F,
                  const Eigen::MatrixXd& G, double tr) {
    Eigen::VectorXd y(n + 3 * nn + 1);
    y.head(n) = m;
    y.segment(n, nn) = p.reshaped();
    y.segment(n + nn, nn) = F.reshaped();
    y.segment(n + 2 * nn, nn) = G.reshaped();
    y(n + 3 * nn) = tr;
    return y;
  };
  auto pmat = [&](const Eigen::VectorXd& y) {
    return symmetrize(y.segment(n, nn).reshaped(n, n));
  };
  auto rhs = [&](double, const Eigen::VectorXd& y) -> Eigen::VectorXd {
    Eigen::MatrixXd p = pmat(y);
    Eigen::MatrixXd F = y.segment(n + nn, nn).reshaped(n, n);
    Eigen::MatrixXd K = A - p * S;
    return pack(K * y.head(n), symmetrize(spec.rhs(p)), K * F, F.transpose() * S * F, (S * p).trace());
  };

  Eigen::VectorXd y = pack(x, Eigen::MatrixXd::Zero(n, n), Eigen::MatrixXd::Identity(n, n),
                           Eigen::MatrixXd::Zero(n, n), 0.0);
  int steps = step_count(t, dt);
  double h = t / steps;
  int tail_start = steps - std::max(1, steps / 10);
  double tail_sum = 0, prev = 0;
  for (int k = 1; k <= steps; ++k) {
    if (k - 1 == tail_start) prev = -(S * pmat(y)).trace() / 2;
    y = rk4_step(y, (k - 1) * h, h, rhs);
    y.segment(n, nn) = pmat(y).reshaped();
    if (k > tail_start) {
      double cur = -(S * pmat(y)).trace() / 2;
      tail_sum += (prev + cur) / 2 * h;
      prev = cur;
    }
  }
  CoupledOscillator out;
  out.m = y.head(n);
  out.p = pmat(y);
  out.F = y.segment(n + nn, nn).reshaped(n, n);
  out.int_FSF = symmetrize(y.segment(n + 2 * nn, nn).reshaped(n, n));
  out.int_trSp = y(n + 3 * nn);
  out.logQ1 = -0.5 * (x.dot(out.int_FSF * x) + out.int_trSp);
  out.rho_hat = tail_sum / ((steps - tail_start) * h);
  return out;
}

// Birth-death chains with V(x) = |x|. Logistic: state space {1,2,...}.
// Multivariate: state space N^n minus the origin.
struct BirthDeathSpec {
  enum class kind { logistic, multivariate };
  kind type = kind::logistic;
  double lambda_b = 0, upsilon_b = 0, lambda_d = 0, lambda_l = 0, upsilon_d = 0;
  Eigen::VectorXd lambda, mu, upsilon, varsigma;
  Eigen::MatrixXd C, D;
  long state_cap = 1000000;

  static BirthDeathSpec logistic(double lambda_b, double upsilon_b, double lambda_d, double lambda_l,
                                 double upsilon_d) {
    BirthDeathSpec s;
    s.lambda_b = lambda_b, s.upsilon_b = upsilon_b, s.lambda_d = lambda_d, s.lambda_l = lambda_l,
    s.upsilon_d = upsilon_d;
    s.validate();
    return s;
  }

  static BirthDeathSpec multivariate(Eigen::VectorXd lambda, Eigen::VectorXd mu, Eigen::VectorXd upsilon,
                                     Eigen::VectorXd varsigma, Eigen::MatrixXd C, Eigen::MatrixXd D) {
    BirthDeathSpec s;
    s.type = kind::multivariate;
    s.lambda = std::move(lambda), s.mu = std::move(mu), s.upsilon = std::move(upsilon);
    s.varsigma = std::move(varsigma), s.C = std::move(C), s.D = std::move(D);
    s.validate();
    return s;
  }

  int dim() const { return type == kind::logistic ? 1 : static_cast<int>(lambda.size()); }

  // smallest eigenvalue of the symmetric part of D - C
  double b_coercive() const { return min_eigenvalue(D - C); }

  void validate() const {
    if (type == kind::logistic) {
      if (!(lambda_b >= 0 && upsilon_b >= 0 && lambda_d >= 0 && upsilon_d >= 0))
        throw error("BirthDeathSpec: logistic rates must be >= 0");
      if (!(lambda_l > 0)) throw error("BirthDeathSpec: lambda_l must be > 0");
      return;
    }
    Eigen::Index n = lambda.size();
    if (n < 1 || mu.size() != n || upsilon.size() != n || varsigma.size() != n || C.rows() != n || C.cols() != n ||
        D.rows() != n || D.cols() != n)
      throw error("BirthDeathSpec: multivariate dimensions mismatch");
    if ((upsilon.array() < 0).any() || (varsigma.array() < 0).any())
      throw error("BirthDeathSpec: upsilon and varsigma must be >= 0");
    if (upsilon.sum() < varsigma.sum()) throw error("BirthDeathSpec: need |upsilon| >= |varsigma|");
    if (!(b_coercive() > 0)) throw error("BirthDeathSpec: D - C must be positive definite");
  }

  // Rates of the moves x -> x + e_i and x -> x - e_i; moves leaving the state space are suppressed.
  void rates(const Eigen::VectorXi& x, Eigen::VectorXd& up, Eigen::VectorXd& down) const {
    int n = dim();
    up.resize(n);
    down.resize(n);
    if (type == kind::logistic) {
      double v = x(0);
      up(0) = lambda_b * v + upsilon_b;
      down(0) = x(0) >= 2 ? lambda_d * v + lambda_l * v * (v - 1) + upsilon_d : 0.0;
    } else {
      Eigen::VectorXd xd = x.cast<double>();
      Eigen::VectorXd Cx = C * xd, Dx = D * xd;
      int total = x.sum();
      for (int i = 0; i < n; ++i) {
        up(i) = upsilon(i) + xd(i) * (lambda(i) + Cx(i));
        down(i) = (x(i) >= 1 && total >= 2) ? varsigma(i) + xd(i) * (mu(i) + Dx(i)) : 0.0;
      }
    }
    for (int i = 0; i < n; ++i)
      if (up(i) < 0 || down(i) < 0) {
        std::ostringstream os;
        os << "BirthDeathSpec: negative rate at state (" << x.transpose() << ")";
        throw error(os.str());
      }
  }

  // Riccati majorant for t -> E V(X_t)
  ScalarRiccati majorant() const {
    if (type == kind::logistic) return {upsilon_b + lambda_d, lambda_b + lambda_l - lambda_d, lambda_l};
    int n = dim();
    double a0 = upsilon.sum() - varsigma.sum();
    double a0p = a0 + varsigma.sum();
    for (int j = 0; j < n; ++j) a0p += varsigma.sum() + mu(j) + D(j, j);
    double a1 = (lambda - mu).maxCoeff();
    return {a0p, a1, b_coercive() / n};
  }

  // Quadratic form a0 + (lambda-mu)'x - x'Bx (logistic: F(x)).
  double quadratic_drift(const Eigen::VectorXi& x) const {
    if (type == kind::logistic) {
      double z = x(0);
      return (upsilon_b - upsilon_d) + (lambda_b + lambda_l - lambda_d) * z - lambda_l * z * z;
    }
    Eigen::VectorXd xd = x.cast<double>();
    return upsilon.sum() - varsigma.sum() + (lambda - mu).dot(xd) - xd.dot((D - C) * xd);
  }
};

inline void check_state(const BirthDeathSpec& spec, const Eigen::VectorXi& x) {
  if (x.size() != spec.dim()) throw error("birth-death: state has wrong dimension");
  if ((x.array() < 0).any() || x.sum() < 1) throw error("birth-death: state outside the state space");
}

// L(V)(x) with V = |x|.
inline double bd_generator_drift(const BirthDeathSpec& spec, const Eigen::VectorXi& x) {
  check_state(spec, x);
  Eigen::VectorXd up, down;
  spec.rates(x, up, down);
  return up.sum() - down.sum();
}

struct MomentBoundReport {
  std::vector<double> times, mean, stderr_, majorant;
  std::vector<bool> pass;
  bool holds = true;
  bool truncated = false;
  long max_state = 0;
};

// Exact Gillespie simulation; path k draws from CounterRng(seed, k).
inline MomentBoundReport bd_moment_bound(const BirthDeathSpec& spec, const Eigen::VectorXi& x0, double T,
                                         int n_paths, std::uint64_t seed, int threads = 1, int checkpoints = 10) {
  spec.validate();
  check_state(spec, x0);
  if (!(T > 0) || n_paths < 2) throw error("bd_moment_bound: need T > 0 and n_paths >= 2");
  int n = spec.dim();
  MomentBoundReport rep;
  for (int k = 1; k <= checkpoints; ++k) rep.times.push_back(T * k / checkpoints);
  Eigen::MatrixXd values(n_paths, checkpoints);
  std::vector<char> truncated(n_paths, 0);
  std::vector<long> peak(n_paths, 0);
  parallel_for(n_paths, threads, [&](std::size_t b, std::size_t e) {
    Eigen::VectorXd up, down;
    for (std::size_t path = b; path < e; ++path) {
      CounterRng rng(seed, path);
      Eigen::VectorXi x = x0;
      double t = 0;
      int next = 0;
      long top = x.sum();
      while (next < checkpoints) {
        spec.rates(x, up, down);
        double total = up.sum() + down.sum();
        double tn = total > 0 ? t + rng.exponential(total) : std::numeric_limits<double>::infinity();
        while (next < checkpoints && rep.times[next] < tn) values(path, next++) = x.sum();
        if (next >= checkpoints) break;
        t = tn;
        double u = rng.uniform() * total;
        int pick = -1, last = -1;
        for (int j = 0; j < 2 * n; ++j) {
          double r = j < n ? up(j) : down(j - n);
          if (r <= 0) continue;
          last = j;
          if (u < r) {
            pick = j;
            break;
          }
          u -= r;
        }
        if (pick < 0) pick = last;
        bool birth = pick < n;
        int i = birth ? pick : pick - n;
        x(i) += birth ? 1 : -1;
        top = std::max<long>(top, x.sum());
        if (x.sum() >= spec.state_cap) {
          truncated[path] = 1;
          x(i) -= 1;
        }
      }
      peak[path] = top;
    }
  });
  auto maj = scalar_riccati_path(spec.majorant(), x0.sum(), rep.times);
  for (int k = 0; k < checkpoints; ++k) {
    double m = values.col(k).mean();
    double var = (values.col(k).array() - m).square().sum() / (n_paths - 1);
    double se = std::sqrt(var / n_paths);
    rep.mean.push_back(m);
    rep.stderr_.push_back(se);
    rep.majorant.push_back(maj[k]);
    bool ok = m <= maj[k] + 3 * se;
    rep.pass.push_back(ok);
    rep.holds = rep.holds && ok;
  }
  for (int p = 0; p < n_paths; ++p) {
    rep.truncated = rep.truncated || truncated[p];
    rep.max_state = std::max(rep.max_state, peak[p]);
  }
  return rep;
}

}  // namespace fkstab

#endif

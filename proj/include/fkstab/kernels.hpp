#ifndef FKSTAB_KERNELS_HPP
#define FKSTAB_KERNELS_HPP

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "core.hpp"
#include "linalg.hpp"

namespace fkstab {

// Harmonic oscillator: Brownian motion killed at rate x^2/2.
inline double mehler_mass(double t, double x) {
  if (!(t > 0)) throw error("mehler: t must be positive");
  return std::exp(-x * x * std::tanh(t) / 2) / std::sqrt(std::cosh(t));
}

inline double mehler_mean(double t, double x) { return x / std::cosh(t); }

inline double mehler_kernel(double t, double x, double y) {
  if (!(t > 0)) throw error("mehler: t must be positive");
  double p = std::tanh(t);
  return mehler_mass(t, x) * normal_pdf(y, x / std::cosh(t), p);
}

// Physicists' Hermite polynomial by the three-term recurrence.
inline double hermite_polynomial(int n, double x) {
  if (n < 0) throw error("hermite: negative degree");
  double h0 = 1, h1 = 2 * x;
  if (n == 0) return h0;
  for (int k = 1; k < n; ++k) {
    double h2 = 2 * x * h1 - 2 * k * h0;
    h0 = h1;
    h1 = h2;
  }
  return h1;
}

// Orthonormal Hermite functions psi_0..psi_{N-1}; psi_k = phi_{k+1}.
inline std::vector<double> hermite_functions(int N, double x) {
  std::vector<double> psi(N);
  psi[0] = std::pow(M_PI, -0.25) * std::exp(-x * x / 2);
  if (N > 1) psi[1] = std::sqrt(2.0) * x * psi[0];
  for (int k = 1; k + 1 < N; ++k)
    psi[k + 1] = std::sqrt(2.0 / (k + 1)) * x * psi[k] - std::sqrt(static_cast<double>(k) / (k + 1)) * psi[k - 1];
  return psi;
}

inline double hermite_series_kernel(double t, double x, double y, int N) {
  if (!(t > 0)) throw error("hermite_series: t must be positive");
  if (N < 1 || N > 200) throw error("hermite_series: N must lie in [1,200]");
  auto px = hermite_functions(N, x), py = hermite_functions(N, y);
  double s = 0;
  for (int k = N - 1; k >= 0; --k) s += std::exp(-(k + 0.5) * t) * px[k] * py[k];
  return s;
}

// Harmonic oscillator absorbed at the origin, on (0, inf).
inline double half_harmonic_density(double t, double x, double y) {
  if (!(x > 0)) throw error("half_harmonic: x must be positive (absorbing boundary)");
  if (!(y > 0)) return 0;
  double p = std::tanh(t), m = x / std::cosh(t);
  return mehler_mass(t, x) * (normal_pdf(y, m, p) - normal_pdf(y, -m, p));
}

struct HalfHarmonicLaw {
  double mass = 0;
  double mean = 0, var = 0;  // parameters of the reflected Gaussian pair
  // Normalized density on (0,inf):
  // sqrt(2/(pi p)) exp(-(y^2+m^2)/2p) sinh(y m/p) / (2 P(0 <= Z <= m/sqrt p)).
  double density(double y) const {
    if (!(y > 0)) return 0;
    double z = std::erf(mean / std::sqrt(2 * var));
    double diff = std::exp(-(y - mean) * (y - mean) / (2 * var)) - std::exp(-(y + mean) * (y + mean) / (2 * var));
    return diff / std::sqrt(2 * M_PI * var) / z;
  }
};

inline HalfHarmonicLaw half_harmonic(double t, double x) {
  if (!(t > 0)) throw error("half_harmonic: t must be positive");
  if (!(x > 0)) throw error("half_harmonic: x must be positive (absorbing boundary)");
  HalfHarmonicLaw law;
  law.var = std::tanh(t);
  law.mean = x / std::cosh(t);
  law.mass = mehler_mass(t, x) * std::erf(law.mean / std::sqrt(2 * law.var));
  return law;
}

// Brownian motion on (0,1) killed at the endpoints.
inline double dirichlet_heat(double t, double x, double y, int N) {
  if (!(t > 0)) throw error("dirichlet_heat: t must be positive");
  if (N < 1) throw error("dirichlet_heat: N must be >= 1");
  if (!(x > 0 && x < 1 && y > 0 && y < 1)) throw error("dirichlet_heat: x, y must lie in (0,1)");
  double s = 0;
  for (int n = N; n >= 1; --n) {
    double k = n * M_PI;
    s += 2 * std::exp(-k * k * t / 2) * std::sin(k * x) * std::sin(k * y);
  }
  return s;
}

inline double dirichlet_survival(double t, double x, int N) {
  if (!(t > 0)) throw error("dirichlet_survival: t must be positive");
  if (!(x > 0 && x < 1)) throw error("dirichlet_survival: x must lie in (0,1)");
  double s = 0;
  for (int n = N; n >= 1; --n) {
    if (n % 2 == 0) continue;
    double k = n * M_PI;
    s += 4 / k * std::exp(-k * k * t / 2) * std::sin(k * x);
  }
  return s;
}

inline double dirichlet_eigenvalue(int n) { return -(n * M_PI) * (n * M_PI) / 2; }

// Covariance C_t = int_0^t e^{sA} R e^{sA'} ds by RK4 on C' = AC + CA' + R.
inline Eigen::MatrixXd ou_covariance(double t, const Eigen::MatrixXd& A, const Eigen::MatrixXd& R, double dt = 1e-3) {
  int steps = step_count(t, dt);
  double h = t / steps;
  Eigen::MatrixXd C = Eigen::MatrixXd::Zero(A.rows(), A.cols());
  auto rhs = [&](double, const Eigen::MatrixXd& c) -> Eigen::MatrixXd { return A * c + c * A.transpose() + R; };
  for (int k = 0; k < steps; ++k) C = symmetrize(rk4_step(C, k * h, h, rhs));
  return C;
}

struct GaussianLaw {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
};

inline GaussianLaw gauss_ou_kernel(double t, const Eigen::MatrixXd& A, const Eigen::MatrixXd& Sigma,
                                   const Eigen::VectorXd& x) {
  if (!(t > 0)) throw error("gauss_ou: t must be positive");
  if (A.rows() != A.cols() || Sigma.rows() != A.rows() || x.size() != A.rows())
    throw error("gauss_ou: inconsistent dimensions");
  return {expm(t * A) * x, ou_covariance(t, A, Sigma * Sigma.transpose())};
}

inline bool gauss_ou_controllable(const Eigen::MatrixXd& A, const Eigen::MatrixXd& Sigma) {
  return controllability_rank(A, Sigma) == A.rows();
}

// dX = aX dt + dB killed at rate varsigma X^2/2 and at the origin. The mean
// factor F_t, variance p_t and the two mass accumulators come from one RK4
// pass.
struct HalfHarmonicLinearFlow {
  double F = 1, p = 0, pbar = 0, chi = 0;
  int steps = 0;
  double dt = 0;
};

inline HalfHarmonicLinearFlow half_harmonic_linear_flow(double t, double a, double varsigma, double dt = 1e-3) {
  if (!(varsigma > 0)) throw error("half_harmonic_linear: varsigma must be positive");
  if (!(t > 0)) throw error("half_harmonic_linear: t must be positive");
  HalfHarmonicLinearFlow out;
  out.steps = step_count(t, dt);
  out.dt = t / out.steps;
  Eigen::Vector4d y(1, 0, 0, 0);
  auto rhs = [&](double, const Eigen::Vector4d& s) -> Eigen::Vector4d {
    return {(a - s(1) * varsigma) * s(0), 2 * a * s(1) + 1 - varsigma * s(1) * s(1), s(1), s(0) * s(0)};
  };
  for (int k = 0; k < out.steps; ++k) {
    y = rk4_step(y, k * out.dt, out.dt, rhs);
    if (!y.allFinite())
      throw error("half_harmonic_linear: ODE blew up at step " + std::to_string(k) + " with dt " +
                  std::to_string(out.dt));
  }
  out.F = y(0);
  out.p = y(1);
  out.pbar = y(2);
  out.chi = y(3);
  return out;
}

struct HalfHarmonicLinearLaw {
  HalfHarmonicLinearFlow flow;
  double x = 0, varsigma = 0;
  double unabsorbed_mass() const { return std::exp(-varsigma / 2 * (flow.pbar + flow.chi * x * x)); }
  double mass() const {
    double m = flow.F * x;
    return unabsorbed_mass() * std::erf(m / std::sqrt(2 * flow.p));
  }
  // Unnormalized density of Q_t(x, dy) on (0,inf).
  double density(double y) const {
    if (!(y > 0)) return 0;
    double m = flow.F * x;
    return unabsorbed_mass() * (normal_pdf(y, m, flow.p) - normal_pdf(y, -m, flow.p));
  }
};

inline HalfHarmonicLinearLaw half_harmonic_linear(double t, double x, double a, double varsigma) {
  if (!(x > 0)) throw error("half_harmonic_linear: x must be positive");
  return {half_harmonic_linear_flow(t, a, varsigma), x, varsigma};
}

inline double half_harmonic_linear_beta(double a, double varsigma) { return a + std::sqrt(a * a + varsigma); }

class ClosedFormKernel {
 public:
  enum class model { harmonic, half_harmonic, dirichlet_heat, gauss_ou, half_harmonic_linear };

  static ClosedFormKernel harmonic() { return ClosedFormKernel(model::harmonic); }
  static ClosedFormKernel half_harmonic() { return ClosedFormKernel(model::half_harmonic); }
  static ClosedFormKernel dirichlet(int n_terms = 50) {
    if (n_terms < 1) throw error("dirichlet: N_terms must be >= 1");
    ClosedFormKernel k(model::dirichlet_heat);
    k.n_terms_ = n_terms;
    return k;
  }
  static ClosedFormKernel gauss_ou(Eigen::MatrixXd A, Eigen::MatrixXd Sigma) {
    if (A.rows() != A.cols() || Sigma.rows() != A.rows()) throw error("gauss_ou: inconsistent dimensions");
    ClosedFormKernel k(model::gauss_ou);
    k.A_ = std::move(A);
    k.Sigma_ = std::move(Sigma);
    return k;
  }
  static ClosedFormKernel half_harmonic_linear(double a, double varsigma) {
    if (!(varsigma > 0)) throw error("half_harmonic_linear: varsigma must be positive");
    ClosedFormKernel k(model::half_harmonic_linear);
    k.a_ = a;
    k.varsigma_ = varsigma;
    return k;
  }

  model kind() const { return model_; }
  std::string name() const {
    switch (model_) {
      case model::harmonic: return "harmonic";
      case model::half_harmonic: return "half_harmonic";
      case model::dirichlet_heat: return "dirichlet_heat";
      case model::gauss_ou: return "gauss_ou";
      case model::half_harmonic_linear: return "half_harmonic_linear";
    }
    return "";
  }
  int n_terms() const { return n_terms_; }
  const Eigen::MatrixXd& A() const { return A_; }
  const Eigen::MatrixXd& Sigma() const { return Sigma_; }
  double a() const { return a_; }
  double varsigma() const { return varsigma_; }
  int dim() const { return model_ == model::gauss_ou ? static_cast<int>(A_.rows()) : 1; }
  bool markov() const { return model_ == model::gauss_ou; }
  bool self_adjoint() const {
    return model_ == model::harmonic || model_ == model::half_harmonic || model_ == model::dirichlet_heat;
  }

  // Exact (rho, h, rho_2^h) for the self-adjoint models, h normalized in L2(dx).
  struct ExactSpectrum {
    double rho, gap_rate;
    std::function<double(double)> h;
  };
  ExactSpectrum exact_spectrum() const {
    switch (model_) {
      case model::harmonic:
        return {-0.5, -1.0, [](double x) { return std::pow(M_PI, -0.25) * std::exp(-x * x / 2); }};
      case model::half_harmonic:
        return {-1.5, -2.0, [](double x) { return 2 * std::pow(M_PI, -0.25) * x * std::exp(-x * x / 2); }};
      case model::dirichlet_heat:
        return {-M_PI * M_PI / 2, -1.5 * M_PI * M_PI,
                [](double x) { return std::sqrt(2.0) * std::sin(M_PI * x); }};
      default: throw error("exact spectrum: model " + name() + " is not self-adjoint");
    }
  }

  // Transition density at time t, prepared once for repeated evaluation.
  using density_fn = std::function<double(std::span<const double>, std::span<const double>)>;
  density_fn prepare(double t) const {
    if (!(t > 0)) throw error("kernel: t must be positive");
    switch (model_) {
      case model::harmonic:
        return [t](auto x, auto y) { return mehler_kernel(t, x[0], y[0]); };
      case model::half_harmonic:
        return [t](auto x, auto y) { return half_harmonic_density(t, x[0], y[0]); };
      case model::dirichlet_heat: {
        int N = n_terms_;
        return [t, N](auto x, auto y) { return dirichlet_heat(t, x[0], y[0], N); };
      }
      case model::gauss_ou: {
        Eigen::MatrixXd M = expm(t * A_);
        Eigen::MatrixXd C = ou_covariance(t, A_, Sigma_ * Sigma_.transpose());
        Eigen::LLT<Eigen::MatrixXd> llt(C);
        if (llt.info() != Eigen::Success || min_eigenvalue(C) <= 0)
          throw error("gauss_ou: covariance not positive definite (uncontrollable pair?)");
        Eigen::MatrixXd L = llt.matrixL();
        double logdet = 2 * L.diagonal().array().log().sum();
        double norm = -0.5 * (C.rows() * std::log(2 * M_PI) + logdet);
        return [M, llt, norm](auto x, auto y) {
          Eigen::Map<const Eigen::VectorXd> xv(x.data(), x.size()), yv(y.data(), y.size());
          Eigen::VectorXd d = yv - M * xv;
          return std::exp(norm - 0.5 * d.dot(llt.solve(d)));
        };
      }
      case model::half_harmonic_linear: {
        auto flow = half_harmonic_linear_flow(t, a_, varsigma_);
        double vs = varsigma_;
        return [flow, vs](auto x, auto y) {
          if (!(x[0] > 0)) throw error("half_harmonic_linear: x must be positive");
          HalfHarmonicLinearLaw law{flow, x[0], vs};
          return law.density(y[0]);
        };
      }
    }
    throw error("kernel: unknown model");
  }

  double density(double t, double x, double y) const {
    return prepare(t)(std::span<const double>(&x, 1), std::span<const double>(&y, 1));
  }

  // Closed-form Q_t(1)(x) (1D models).
  double mass(double t, double x) const {
    switch (model_) {
      case model::harmonic: return mehler_mass(t, x);
      case model::half_harmonic: return fkstab::half_harmonic(t, x).mass;
      case model::dirichlet_heat: return dirichlet_survival(t, x, n_terms_);
      case model::gauss_ou: return 1.0;
      case model::half_harmonic_linear: return fkstab::half_harmonic_linear(t, x, a_, varsigma_).mass();
    }
    return 0;
  }

 private:
  explicit ClosedFormKernel(model m) : model_(m) {}
  model model_;
  int n_terms_ = 50;
  Eigen::MatrixXd A_, Sigma_;
  double a_ = 0, varsigma_ = 1;
};

inline DiscreteOperator discretize(const ClosedFormKernel& K, const grid_ptr& grid, double t,
                                   int threads = 1) {
  if (!grid) throw error("discretize: null grid");
  if (K.dim() != grid->dim()) throw error("discretize: kernel and grid dimensions differ");
  auto q = K.prepare(t);
  Eigen::Index n = grid->size();
  Eigen::MatrixXd M(n, n);
  const Eigen::MatrixXd& pts = grid->points();
  const Eigen::VectorXd& w = grid->weights();
  parallel_for(static_cast<std::size_t>(n), threads, [&](std::size_t b, std::size_t e) {
    std::vector<double> xb(grid->dim()), yb(grid->dim());
    for (std::size_t i = b; i < e; ++i) {
      for (int d = 0; d < grid->dim(); ++d) xb[d] = pts(i, d);
      for (Eigen::Index j = 0; j < n; ++j) {
        for (int d = 0; d < grid->dim(); ++d) yb[d] = pts(j, d);
        double v = q(xb, yb);
        if (!std::isfinite(v))
          throw error("discretize: non-finite density at grid indices (" + std::to_string(i) + "," +
                      std::to_string(j) + ")");
        M(i, j) = std::max(0.0, v) * w(j);
      }
    }
  });
  return {M, grid, t, K.markov()};
}

inline DiscreteOperator doob_h_transform(const DiscreteOperator& Q, const Eigen::VectorXd& h, double rho) {
  if (h.size() != Q.size()) throw error("doob_h_transform: size mismatch");
  if ((h.array() <= 0).any()) throw error("doob_h_transform: h must be positive everywhere");
  double s = std::exp(-rho * Q.time_step);
  Eigen::MatrixXd P = s * h.cwiseInverse().asDiagonal() * Q.matrix * h.asDiagonal();
  DiscreteOperator out{P, Q.grid, Q.time_step, false};
  out.markov = ((out.mass().array() - 1).abs() <= 1e-6).all();
  return out;
}

inline DiscreteOperator doob_h_inverse(const DiscreteOperator& P, const Eigen::VectorXd& h, double rho) {
  if ((h.array() <= 0).any()) throw error("doob_h_inverse: h must be positive everywhere");
  double s = std::exp(rho * P.time_step);
  Eigen::MatrixXd Q = s * h.asDiagonal() * P.matrix * h.cwiseInverse().asDiagonal();
  return {Q, P.grid, P.time_step, false};
}

struct GeneratorValue {
  double LV = 0;
  double gamma = 0;           // carre du champ Gamma(V,V)
  double richardson_delta = 0; // |L_h V - Richardson(h, 2h)|
};

using vector_field = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;
using matrix_field = std::function<Eigen::MatrixXd(const Eigen::VectorXd&)>;
using scalar_field = std::function<double(const Eigen::VectorXd&)>;

namespace detail {
inline void fd_derivatives(const scalar_field& V, const Eigen::VectorXd& x, double h, Eigen::VectorXd& grad,
                           Eigen::MatrixXd& hess) {
  Eigen::Index n = x.size();
  grad.resize(n);
  hess.resize(n, n);
  double f0 = V(x);
  for (Eigen::Index i = 0; i < n; ++i) {
    Eigen::VectorXd xp = x, xm = x;
    xp(i) += h;
    xm(i) -= h;
    double fp = V(xp), fm = V(xm);
    grad(i) = (fp - fm) / (2 * h);
    hess(i, i) = (fp - 2 * f0 + fm) / (h * h);
    for (Eigen::Index j = 0; j < i; ++j) {
      Eigen::VectorXd a = x, b = x, c = x, d = x;
      a(i) += h, a(j) += h;
      b(i) += h, b(j) -= h;
      c(i) -= h, c(j) += h;
      d(i) -= h, d(j) -= h;
      hess(i, j) = hess(j, i) = (V(a) - V(b) - V(c) + V(d)) / (4 * h * h);
    }
  }
}
}  // namespace detail

// L(V) = b'grad V + Tr(R hess V)/2 with R = sigma sigma'.
inline GeneratorValue generator_apply(const vector_field& drift, const matrix_field& sigma, const scalar_field& V,
                                      const Eigen::VectorXd& x, double fd_step = 1e-4) {
  Eigen::VectorXd b = drift(x);
  Eigen::MatrixXd s = sigma(x);
  Eigen::MatrixXd R = s * s.transpose();
  auto eval = [&](double h, Eigen::VectorXd& g) {
    Eigen::MatrixXd H;
    detail::fd_derivatives(V, x, h, g, H);
    return b.dot(g) + 0.5 * (R.cwiseProduct(H)).sum();
  };
  Eigen::VectorXd g, g2;
  GeneratorValue out;
  out.LV = eval(fd_step, g);
  double L2 = eval(2 * fd_step, g2);
  out.richardson_delta = std::abs(out.LV - (4 * out.LV - L2) / 3);
  out.gamma = g.dot(R * g);
  return out;
}

inline GeneratorValue generator_apply(const vector_field& drift, const matrix_field& sigma, const LyapunovSpec& V,
                                      const Eigen::VectorXd& x, double fd_step = 1e-4) {
  for (Eigen::Index i = 0; i < x.size(); ++i)
    for (double s : {-2.0, 0.0, 2.0}) {
      Eigen::VectorXd y = x;
      y(i) += s * fd_step;
      if (V.singular(std::span<const double>(y.data(), y.size())))
        throw error("generator_apply: stencil touches a singular point of " + V.to_string());
    }
  scalar_field f = [&](const Eigen::VectorXd& y) { return V(std::span<const double>(y.data(), y.size())); };
  return generator_apply(drift, sigma, f, x, fd_step);
}

struct DominationReport {
  double max_holder_ratio = 0;  // sup Q(V^{1/p}) / (Q(1)^{1-1/p} Q(V)^{1/p}); Hoelder says <= 1
  bool holder_ok = false;
  Eigen::VectorXd theta;        // Q(V_p)/V_p
  Eigen::VectorXd bound;        // c_t(p) Q(1)^{1-1/p} / ... per point
  double c_p = 0;               // op-norm of Q in V, to the power 1/p
  std::vector<Eigen::Index> excluded;
  bool edge_decay = false;      // see edge_decay()
};

// Surrogate for membership in B_0: theta on the outermost 5% of points stays
// below half its overall maximum.
inline bool edge_decay(const Eigen::VectorXd& theta) {
  Eigen::Index n = theta.size();
  Eigen::Index k = std::max<Eigen::Index>(1, n / 40);
  if (n < 2 * k + 1) return false;
  double peak = theta.maxCoeff();
  double edge = std::max(theta.head(k).maxCoeff(), theta.tail(k).maxCoeff());
  return edge < peak / 2;
}

inline DominationReport domination_transfer(const DiscreteOperator& Q, const Eigen::VectorXd& V, double p) {
  if (!(p > 1)) throw error("domination_transfer: p must exceed 1");
  if (V.size() != Q.size()) throw error("domination_transfer: size mismatch");
  DominationReport r;
  Eigen::VectorXd Vp = V.array().pow(1 / p);
  Eigen::VectorXd Q1 = Q.mass(), QV = Q.apply(V), QVp = Q.apply(Vp);
  r.c_p = std::pow(v_operator_norm(Q.matrix, V), 1 / p);
  r.theta = QVp.cwiseQuotient(Vp);
  r.bound = Eigen::VectorXd::Zero(V.size());
  for (Eigen::Index i = 0; i < V.size(); ++i) {
    if (!(Q1(i) > 0)) {
      r.excluded.push_back(i);
      continue;
    }
    double denom = std::pow(Q1(i), 1 - 1 / p) * std::pow(QV(i), 1 / p);
    r.max_holder_ratio = std::max(r.max_holder_ratio, QVp(i) / denom);
    r.bound(i) = r.c_p * std::pow(Q1(i), 1 - 1 / p);
  }
  r.holder_ok = r.max_holder_ratio <= 1 + 1e-9;
  r.edge_decay = edge_decay(r.theta);
  return r;
}

}  // namespace fkstab

#endif

#ifndef FKSTAB_LINALG_HPP
#define FKSTAB_LINALG_HPP

#include <Eigen/Dense>
#include <unsupported/Eigen/MatrixFunctions>

#include <cmath>
#include <functional>

#include "core.hpp"

namespace fkstab {

inline Eigen::MatrixXd expm(const Eigen::MatrixXd& A) { return A.exp(); }

inline Eigen::MatrixXd symmetrize(const Eigen::MatrixXd& M) { return (M + M.transpose()) / 2; }

inline double min_eigenvalue(const Eigen::MatrixXd& M) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(symmetrize(M), Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

// Symmetric PSD square root.
inline Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& M) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(symmetrize(M));
  Eigen::VectorXd ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

// Kalman rank of [B, AB, ..., A^{n-1}B].
inline int controllability_rank(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B, double tol = 1e-9) {
  Eigen::Index n = A.rows();
  Eigen::MatrixXd K(n, n * B.cols());
  Eigen::MatrixXd blk = B;
  for (Eigen::Index k = 0; k < n; ++k) {
    K.middleCols(k * B.cols(), B.cols()) = blk;
    blk = A * blk;
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(K);
  const auto& s = svd.singularValues();
  if (s.size() == 0 || s(0) == 0) return 0;
  int r = 0;
  for (Eigen::Index i = 0; i < s.size(); ++i)
    if (s(i) > tol * s(0)) ++r;
  return r;
}

// Classical RK4 on a vector state.
template <class State, class Rhs>
State rk4_step(const State& y, double t, double dt, const Rhs& f) {
  State k1 = f(t, y);
  State k2 = f(t + dt / 2, State(y + dt / 2 * k1));
  State k3 = f(t + dt / 2, State(y + dt / 2 * k2));
  State k4 = f(t + dt, State(y + dt * k3));
  return y + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4);
}

inline int step_count(double t, double dt) {
  return std::max(1, static_cast<int>(std::ceil(t / dt - 1e-12)));
}

inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

inline double normal_pdf(double x, double mean, double var) {
  double d = x - mean;
  return std::exp(-d * d / (2 * var)) / std::sqrt(2 * M_PI * var);
}

// Composite Gauss-Legendre nodes/weights on [a,b] with `cells` panels.
struct Quadrature {
  Eigen::VectorXd nodes, weights;
};

inline Quadrature gauss_legendre(double a, double b, int cells, int order = 8) {
  static const double x8[] = {-0.9602898564975363, -0.7966664774136267, -0.5255324099163290,
                              -0.1834346424956498, 0.1834346424956498,  0.5255324099163290,
                              0.7966664774136267,  0.9602898564975363};
  static const double w8[] = {0.1012285362903763, 0.2223810344533745, 0.3137066458778873,
                              0.3626837833783620, 0.3626837833783620, 0.3137066458778873,
                              0.2223810344533745, 0.1012285362903763};
  if (order != 8) throw error("gauss_legendre: only the 8-point rule is tabulated");
  Quadrature q;
  q.nodes.resize(cells * 8);
  q.weights.resize(cells * 8);
  double h = (b - a) / cells;
  for (int c = 0; c < cells; ++c) {
    double mid = a + (c + 0.5) * h;
    for (int k = 0; k < 8; ++k) {
      q.nodes(c * 8 + k) = mid + h / 2 * x8[k];
      q.weights(c * 8 + k) = h / 2 * w8[k];
    }
  }
  return q;
}

}  // namespace fkstab

#endif

#ifndef FKSTAB_FIXTURES_HPP
#define FKSTAB_FIXTURES_HPP

#include <Eigen/Dense>

#include <cmath>
#include <random>

#include "core.hpp"

namespace fkstab {

// Markov chain with Lyapunov function and measured drift constants P(V) <= eps V + c.
struct CertifiedChain {
  Eigen::MatrixXd P;
  Eigen::VectorXd V;
  double eps = 0, c = 0;
};

// Random chain on n states: a regeneration law nu mixed with random rows that
// push mass toward low V. eps is drawn in [0.1, 0.9] and c is then measured.
inline CertifiedChain random_certified_chain(std::mt19937_64& rng, int n = 50) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  CertifiedChain ch;
  ch.V.resize(n);
  double growth = 0.2 + 2 * u(rng);
  for (int i = 0; i < n; ++i) ch.V(i) = 1 + growth * i * i / n;
  Eigen::VectorXd nu(n);
  for (int j = 0; j < n; ++j) nu(j) = u(rng) * std::exp(-0.3 * j);
  nu /= nu.sum();
  double regen = 0.05 + 0.5 * u(rng);
  ch.P.resize(n, n);
  for (int i = 0; i < n; ++i) {
    int reach = std::max(1, std::min(n, i / 2 + 2 + static_cast<int>(3 * u(rng))));
    Eigen::VectorXd row = Eigen::VectorXd::Zero(n);
    for (int j = 0; j < reach; ++j) row(j) = u(rng);
    row /= row.sum();
    ch.P.row(i) = (regen * nu + (1 - regen) * row).transpose();
  }
  ch.eps = 0.1 + 0.8 * u(rng);
  Eigen::VectorXd PV = ch.P * ch.V;
  ch.c = std::max(1e-3, (PV - ch.eps * ch.V).maxCoeff());
  return ch;
}

// Reflected walk on {1..n}: with probability g regenerate at 1, otherwise jump
// down by ceil(x^delta) w.p. 1/2, up by one w.p. 1/4, stay w.p. 1/4. V(x) = x.
struct SubGeoChain {
  Eigen::MatrixXd P;
  Eigen::VectorXd V;
  double delta = 0.5, regen = 0;
};

inline SubGeoChain subgeometric_test_chain(int n = 200, double delta = 0.5, double regen = 0.02) {
  SubGeoChain ch;
  ch.delta = delta;
  ch.regen = regen;
  ch.P = Eigen::MatrixXd::Zero(n, n);
  ch.V.resize(n);
  for (int i = 0; i < n; ++i) {
    int x = i + 1;
    ch.V(i) = x;
    int down = std::max(1, x - static_cast<int>(std::ceil(std::pow(x, delta)))) - 1;
    int up = std::min(n, x + 1) - 1;
    ch.P(i, 0) += regen;
    ch.P(i, down) += (1 - regen) / 2;
    ch.P(i, up) += (1 - regen) / 4;
    ch.P(i, i) += (1 - regen) / 4;
  }
  return ch;
}

}  // namespace fkstab

#endif

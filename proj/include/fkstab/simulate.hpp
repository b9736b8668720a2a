#ifndef FKSTAB_SIMULATE_HPP
#define FKSTAB_SIMULATE_HPP

#include <Eigen/Dense>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "core.hpp"
#include "kernels.hpp"
#include "rng.hpp"

namespace fkstab {

// dX = b(X) dt + sigma dB; sigma is a constant matrix or a scalar field times the identity.
struct SDEModel {
  using Drift = std::function<void(std::span<const double>, std::span<double>)>;
  int n = 1;
  Drift drift;
  Eigen::MatrixXd sigma;                                  // n x n, used when sigma_scalar is empty
  std::function<double(std::span<const double>)> sigma_scalar;

  static SDEModel brownian(int n = 1) {
    SDEModel m;
    m.n = n;
    m.drift = [](std::span<const double>, std::span<double> b) { std::fill(b.begin(), b.end(), 0.0); };
    m.sigma = Eigen::MatrixXd::Identity(n, n);
    return m;
  }
  // dX = -theta X dt + s dB
  static SDEModel ou(double theta = 1, double s = 1) {
    SDEModel m;
    m.drift = [theta](std::span<const double> x, std::span<double> b) { b[0] = -theta * x[0]; };
    m.sigma = Eigen::MatrixXd::Constant(1, 1, s);
    return m;
  }
  void validate() const {
    if (n < 1) throw error("SDEModel: dimension must be >= 1");
    if (!drift) throw error("SDEModel: drift is required");
    if (!sigma_scalar && (sigma.rows() != n || sigma.cols() != n)) throw error("SDEModel: sigma must be n x n");
  }
};

// Soft potential U >= 0 and an optional hard domain. When `distance` to the boundary is supplied,
// exits between grid times are accounted for with the Brownian-bridge crossing probability.
struct AbsorptionSpec {
  std::function<double(std::span<const double>)> potential;
  std::function<bool(std::span<const double>)> inside;
  std::function<double(std::span<const double>)> distance;
  bool bridge = true;

  static AbsorptionSpec interval(double lo, double hi, bool bridge = true) {
    AbsorptionSpec a;
    a.inside = [lo, hi](std::span<const double> x) { return x[0] > lo && x[0] < hi; };
    a.distance = [lo, hi](std::span<const double> x) { return std::min(x[0] - lo, hi - x[0]); };
    a.bridge = bridge;
    return a;
  }
  static AbsorptionSpec quadratic(double c = 0.5) {
    AbsorptionSpec a;
    a.potential = [c](std::span<const double> x) {
      double s = 0;
      for (double v : x) s += v * v;
      return c * s;
    };
    return a;
  }
};

struct ParticleEnsemble {
  Eigen::MatrixXd positions;  // particles x n
  Eigen::VectorXd log_weights;
  std::vector<char> alive;
  std::vector<CounterRng> rng;
  long nonfinite = 0;

  Eigen::Index size() const { return positions.rows(); }
  long alive_count() const { return std::count(alive.begin(), alive.end(), 1); }
};

inline ParticleEnsemble make_ensemble(int n_particles, const Eigen::VectorXd& x0, std::uint64_t seed) {
  if (n_particles < 1) throw error("ensemble: need at least one particle");
  ParticleEnsemble e;
  e.positions = x0.transpose().replicate(n_particles, 1);
  e.log_weights = Eigen::VectorXd::Zero(n_particles);
  e.alive.assign(n_particles, 1);
  e.rng.reserve(n_particles);
  for (int i = 0; i < n_particles; ++i) e.rng.emplace_back(seed, static_cast<std::uint64_t>(i));
  return e;
}

namespace detail {

// One Euler-Maruyama step for particle i with the killing/weighting of `absorb`.
inline void advance(const SDEModel& model, const AbsorptionSpec* absorb, ParticleEnsemble& e, Eigen::Index i,
                    double dt, std::vector<double>& x, std::vector<double>& b, std::vector<double>& xi,
                    long& nonfinite) {
  if (!e.alive[i]) return;
  int n = model.n;
  for (int k = 0; k < n; ++k) x[k] = e.positions(i, k);
  std::span<const double> xs(x.data(), n);
  model.drift(xs, std::span<double>(b.data(), n));
  for (int k = 0; k < n; ++k) xi[k] = e.rng[i].normal();
  double sd = std::sqrt(dt), s_scalar = 0;
  double u0 = absorb && absorb->potential ? absorb->potential(xs) : 0;
  double d0 = absorb && absorb->inside && absorb->distance && absorb->bridge ? absorb->distance(xs) : 0;
  if (model.sigma_scalar) s_scalar = model.sigma_scalar(xs);
  bool finite = true;
  for (int k = 0; k < n; ++k) {
    double noise = 0;
    if (model.sigma_scalar)
      noise = s_scalar * xi[k];
    else
      for (int j = 0; j < n; ++j) noise += model.sigma(k, j) * xi[j];
    double v = x[k] + b[k] * dt + sd * noise;
    finite = finite && std::isfinite(v);
    e.positions(i, k) = v;
  }
  if (!finite) {
    e.alive[i] = 0;
    ++nonfinite;
    return;
  }
  if (!absorb) return;
  for (int k = 0; k < n; ++k) x[k] = e.positions(i, k);
  std::span<const double> ys(x.data(), n);
  if (absorb->inside && !absorb->inside(ys)) {
    e.alive[i] = 0;
    return;
  }
  if (absorb->potential) e.log_weights(i) -= dt * (u0 + absorb->potential(ys)) / 2;
  if (absorb->inside && absorb->distance && absorb->bridge) {
    double d1 = absorb->distance(ys);
    double var = model.sigma_scalar ? s_scalar * s_scalar : model.sigma.row(0).squaredNorm();
    double p = std::exp(-2 * d0 * d1 / (var * dt));
    e.log_weights(i) += std::log1p(-std::min(p, 1.0));
  }
}

}  // namespace detail

// x <- x + b(x) dt + sigma sqrt(dt) xi for every live particle; particle i draws from its own stream.
inline void sde_step(const SDEModel& model, ParticleEnsemble& e, double dt, int threads = 1,
                     const AbsorptionSpec* absorb = nullptr) {
  model.validate();
  if (!(dt > 0)) throw error("sde_step: dt must be > 0");
  if (e.positions.cols() != model.n) throw error("sde_step: ensemble dimension differs from the model");
  std::atomic<long> bad{0};
  parallel_for(e.size(), threads, [&](std::size_t lo, std::size_t hi) {
    std::vector<double> x(model.n), b(model.n), xi(model.n);
    long nf = 0;
    for (std::size_t i = lo; i < hi; ++i) detail::advance(model, absorb, e, i, dt, x, b, xi, nf);
    bad += nf;
  });
  e.nonfinite += bad;
}

struct FKEstimate {
  double Q1 = 0, Q1_stderr = 0;
  std::vector<double> Qf, Qf_stderr;
  std::vector<double> times, mass, mass_stderr;  // mass curve at the requested checkpoints
  double alive_fraction = 0;
  bool all_dead = false;
  long nonfinite = 0;
};

inline std::pair<double, double> mean_stderr(const Eigen::VectorXd& v) {
  double m = v.mean();
  double var = v.size() > 1 ? (v.array() - m).square().sum() / (v.size() - 1) : 0.0;
  return {m, std::sqrt(var / v.size())};
}

inline FKEstimate feynman_kac_estimate(const SDEModel& model, const AbsorptionSpec& absorb, const Eigen::VectorXd& x0,
                                       double t, int n_particles, double dt, std::uint64_t seed,
                                       const std::vector<std::function<double(std::span<const double>)>>& fs = {},
                                       int threads = 1, int checkpoints = 10) {
  model.validate();
  if (x0.size() != model.n) throw error("feynman_kac_estimate: x0 has wrong dimension");
  if (!(t > 0) || !(dt > 0)) throw error("feynman_kac_estimate: t and dt must be > 0");
  if (absorb.inside && !absorb.inside(std::span<const double>(x0.data(), x0.size())))
    throw error("feynman_kac_estimate: x0 outside the domain");
  auto e = make_ensemble(n_particles, x0, seed);
  int steps = static_cast<int>(std::llround(t / dt));
  if (steps < 1 || std::abs(steps * dt - t) > 1e-9 * t) throw error("feynman_kac_estimate: t must be a multiple of dt");
  FKEstimate out;
  auto weights = [&]() {
    Eigen::VectorXd w(n_particles);
    for (int i = 0; i < n_particles; ++i) w(i) = e.alive[i] ? std::exp(e.log_weights(i)) : 0.0;
    return w;
  };
  int every = std::max(1, steps / std::max(1, checkpoints));
  for (int k = 1; k <= steps; ++k) {
    sde_step(model, e, dt, threads, &absorb);
    if (k % every == 0 || k == steps) {
      auto [m, se] = mean_stderr(weights());
      out.times.push_back(k * dt);
      out.mass.push_back(m);
      out.mass_stderr.push_back(se);
    }
  }
  Eigen::VectorXd w = weights();
  std::tie(out.Q1, out.Q1_stderr) = mean_stderr(w);
  for (const auto& f : fs) {
    Eigen::VectorXd v(n_particles);
    for (int i = 0; i < n_particles; ++i) {
      Eigen::VectorXd row = e.positions.row(i).transpose();
      v(i) = w(i) > 0 ? w(i) * f(std::span<const double>(row.data(), row.size())) : 0.0;
    }
    auto [m, se] = mean_stderr(v);
    out.Qf.push_back(m);
    out.Qf_stderr.push_back(se);
  }
  out.alive_fraction = static_cast<double>(e.alive_count()) / n_particles;
  out.all_dead = e.alive_count() == 0;
  out.nonfinite = e.nonfinite;
  return out;
}

struct QSDEstimate {
  Eigen::MatrixXd positions;
  Eigen::VectorXd weights;  // normalized
  double rho_hat = 0, rho_stderr = 0;
  double mean = 0, variance = 0;  // first coordinate under the weighted empirical measure
  std::vector<double> log_decrements;
  bool extinct = false;
  int resamplings = 0;
};

// Multinomial resampling every `period` steps with full weight reset.
inline QSDEstimate qsd_particle_estimate(const SDEModel& model, const AbsorptionSpec& absorb,
                                         const std::function<void(CounterRng&, std::span<double>)>& eta0, double t,
                                         int n_particles, int period, double dt, std::uint64_t seed,
                                         double burn_in = 0.5, int threads = 1) {
  model.validate();
  if (period < 1) throw error("qsd_particle_estimate: period must be >= 1 step");
  if (!(t > 0) || !(dt > 0)) throw error("qsd_particle_estimate: t and dt must be > 0");
  auto e = make_ensemble(n_particles, Eigen::VectorXd::Zero(model.n), seed);
  for (int i = 0; i < n_particles; ++i) {
    CounterRng init(seed ^ 0x5DEECE66DULL, static_cast<std::uint64_t>(i));
    Eigen::VectorXd x(model.n);
    eta0(init, std::span<double>(x.data(), x.size()));
    e.positions.row(i) = x.transpose();
  }
  int steps = static_cast<int>(std::llround(t / dt));
  int epochs = steps / period;
  if (epochs < 2) throw error("qsd_particle_estimate: horizon shorter than two resampling periods");
  int burn = static_cast<int>(std::floor(burn_in * epochs));
  QSDEstimate out;
  Eigen::VectorXd w(n_particles);
  for (int ep = 0; ep < epochs; ++ep) {
    for (int k = 0; k < period; ++k) sde_step(model, e, dt, threads, &absorb);
    for (int i = 0; i < n_particles; ++i) w(i) = e.alive[i] ? std::exp(e.log_weights(i)) : 0.0;
    double m = w.mean();
    if (!(m > 0)) {
      out.extinct = true;
      throw error("qsd_particle_estimate: extinction between resamplings; increase n_particles or shorten period");
    }
    if (ep >= burn) out.log_decrements.push_back(std::log(m));
    if (ep == epochs - 1) break;
    // multinomial draw from the normalized weights
    CounterRng pick(seed, (1ULL << 63) + ep);
    Eigen::VectorXd cum(n_particles);
    double acc = 0;
    for (int i = 0; i < n_particles; ++i) cum(i) = (acc += w(i));
    Eigen::MatrixXd next(n_particles, model.n);
    for (int i = 0; i < n_particles; ++i) {
      double u = pick.uniform() * acc;
      Eigen::Index j = std::upper_bound(cum.data(), cum.data() + n_particles, u) - cum.data();
      if (j >= n_particles) j = n_particles - 1;
      while (w(j) == 0 && j > 0) --j;
      next.row(i) = e.positions.row(j);
    }
    e.positions = next;
    e.log_weights.setZero();
    std::fill(e.alive.begin(), e.alive.end(), 1);
    ++out.resamplings;
  }
  double span = period * dt;
  Eigen::Map<const Eigen::VectorXd> ld(out.log_decrements.data(), out.log_decrements.size());
  auto [m, se] = mean_stderr(ld);
  out.rho_hat = m / span;
  out.rho_stderr = se / span;
  out.positions = e.positions;
  out.weights = w / w.sum();
  out.mean = out.weights.dot(e.positions.col(0));
  out.variance = out.weights.dot((e.positions.col(0).array() - out.mean).square().matrix());
  return out;
}

struct MCBudget {
  int n_particles = 100000;
  double dt = 1e-3;
  std::uint64_t seed = 1;
  int threads = 1;
};

struct MCReport {
  std::string name;
  double estimate = 0, oracle = 0, stderr_ = 0, z = 0;
  double band = 0;  // absolute tolerance; 0 means the 3-standard-error test
  bool pass = false;
};

inline std::vector<std::string> mc_case_names() {
  return {"harmonic_mass_t1", "dirichlet_survival_t03", "ou_stationary_var", "harmonic_qsd_rho",
          "dirichlet_qsd_rho"};
}

inline MCReport mc_validate(const std::string& name, const MCBudget& b = {}) {
  MCReport r;
  r.name = name;
  Eigen::VectorXd zero = Eigen::VectorXd::Zero(1);
  auto finish = [&](double band) {
    r.band = band;
    r.z = r.stderr_ > 0 ? (r.estimate - r.oracle) / r.stderr_ : (r.estimate == r.oracle ? 0.0 : INFINITY);
    r.pass = band > 0 ? std::abs(r.estimate - r.oracle) <= band : std::abs(r.z) <= 3;
    return r;
  };
  if (name == "harmonic_mass_t1") {
    auto est = feynman_kac_estimate(SDEModel::brownian(), AbsorptionSpec::quadratic(), zero, 1.0, b.n_particles, b.dt,
                                    b.seed, {}, b.threads);
    r.estimate = est.Q1, r.stderr_ = est.Q1_stderr, r.oracle = ClosedFormKernel::harmonic().mass(1.0, 0.0);
    return finish(0);
  }
  if (name == "dirichlet_survival_t03") {
    Eigen::VectorXd x0 = Eigen::VectorXd::Constant(1, 0.5);
    auto est = feynman_kac_estimate(SDEModel::brownian(), AbsorptionSpec::interval(0, 1), x0, 0.3, b.n_particles,
                                    b.dt, b.seed, {}, b.threads);
    r.estimate = est.Q1, r.stderr_ = est.Q1_stderr, r.oracle = dirichlet_survival(0.3, 0.5, 50);
    return finish(0);
  }
  if (name == "ou_stationary_var") {
    AbsorptionSpec none;
    auto sq = [](std::span<const double> x) { return x[0] * x[0]; };
    auto q4 = [](std::span<const double> x) { return x[0] * x[0] * x[0] * x[0]; };
    auto est = feynman_kac_estimate(SDEModel::ou(), none, zero, 5.0, b.n_particles, b.dt, b.seed,
                                    {[](std::span<const double> x) { return x[0]; }, sq, q4}, b.threads);
    double m = est.Qf[0], m2 = est.Qf[1], m4 = est.Qf[2];
    r.estimate = m2 - m * m;
    r.stderr_ = std::sqrt(std::max(0.0, m4 - m2 * m2) / b.n_particles);
    r.oracle = 0.5;
    return finish(0);
  }
  if (name == "harmonic_qsd_rho" || name == "dirichlet_qsd_rho") {
    bool harm = name == "harmonic_qsd_rho";
    auto absorb = harm ? AbsorptionSpec::quadratic() : AbsorptionSpec::interval(0, 1);
    auto eta0 = [harm](CounterRng& g, std::span<double> x) { x[0] = harm ? g.normal() : g.uniform(); };
    int n = std::max(1000, b.n_particles / 10);
    auto est = qsd_particle_estimate(SDEModel::brownian(), absorb, eta0, harm ? 10.0 : 2.0, n, 10, b.dt, b.seed, 0.5,
                                     b.threads);
    r.estimate = est.rho_hat, r.stderr_ = est.rho_stderr;
    r.oracle = harm ? -0.5 : -M_PI * M_PI / 2;
    return finish(harm ? 0.02 : 0.1);
  }
  std::string known;
  for (const auto& c : mc_case_names()) known += (known.empty() ? "" : ", ") + c;
  throw error("mc_validate: unknown case '" + name + "' (available: " + known + ")");
}

}  // namespace fkstab

#endif

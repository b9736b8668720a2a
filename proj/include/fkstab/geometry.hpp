#ifndef FKSTAB_GEOMETRY_HPP
#define FKSTAB_GEOMETRY_HPP

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "core.hpp"
#include "linalg.hpp"

namespace fkstab {

// Hypersurface {x : x[axis] = phi(x without axis)} in R^n, n in {2,3}, over a box chart.
struct MongeSurface {
  using Scalar = std::function<double(const Eigen::VectorXd&)>;
  using Gradient = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;
  using Hessian = std::function<Eigen::MatrixXd(const Eigen::VectorXd&)>;

  std::string name;
  int n = 2;
  int axis = -1;
  double epsilon = 1;
  Eigen::VectorXd lo, hi;
  Scalar phi;
  Gradient grad;  // optional
  Hessian hess;   // optional
  double fd_step = 1e-5;

  int m() const { return n - 1; }
  int graph_axis() const { return axis < 0 ? n - 1 : axis; }

  void validate() const {
    if (n != 2 && n != 3) throw error("MongeSurface: n must be 2 or 3");
    if (graph_axis() >= n) throw error("MongeSurface: axis out of range");
    if (epsilon != 1 && epsilon != -1) throw error("MongeSurface: epsilon must be +1 or -1");
    if (lo.size() != m() || hi.size() != m() || ((hi - lo).array() <= 0).any())
      throw error("MongeSurface: chart box must have n-1 increasing sides");
    if (!phi) throw error("MongeSurface: phi is required");
  }

  bool contains(const Eigen::VectorXd& th) const {
    return th.size() == m() && (th.array() >= lo.array()).all() && (th.array() <= hi.array()).all();
  }
  void require(const Eigen::VectorXd& th) const {
    if (!contains(th)) {
      std::ostringstream os;
      os << "MongeSurface " << name << ": theta (" << th.transpose() << ") outside the chart";
      throw error(os.str());
    }
  }

  Eigen::VectorXd gradient(const Eigen::VectorXd& th) const {
    if (grad) return grad(th);
    Eigen::VectorXd g(m());
    for (int i = 0; i < m(); ++i) {
      Eigen::VectorXd a = th, b = th;
      a(i) += fd_step, b(i) -= fd_step;
      g(i) = (phi(a) - phi(b)) / (2 * fd_step);
    }
    return g;
  }

  Eigen::MatrixXd hessian(const Eigen::VectorXd& th) const {
    if (hess) return hess(th);
    Eigen::MatrixXd H(m(), m());
    double h = fd_step;
    if (grad) {
      for (int i = 0; i < m(); ++i) {
        Eigen::VectorXd a = th, b = th;
        a(i) += h, b(i) -= h;
        H.col(i) = (grad(a) - grad(b)) / (2 * h);
      }
    } else {
      double f0 = phi(th);
      for (int i = 0; i < m(); ++i)
        for (int j = 0; j < m(); ++j) {
          if (i == j) {
            Eigen::VectorXd a = th, b = th;
            a(i) += h, b(i) -= h;
            H(i, i) = (phi(a) - 2 * f0 + phi(b)) / (h * h);
          } else {
            Eigen::VectorXd pp = th, pm = th, mp = th, mm = th;
            pp(i) += h, pp(j) += h, pm(i) += h, pm(j) -= h, mp(i) -= h, mp(j) += h, mm(i) -= h, mm(j) -= h;
            H(i, j) = (phi(pp) - phi(pm) - phi(mp) + phi(mm)) / (4 * h * h);
          }
        }
    }
    return symmetrize(H);
  }

  // ambient coordinate index of chart parameter i
  int ambient(int i) const { return i < graph_axis() ? i : i + 1; }

  Eigen::VectorXd point(const Eigen::VectorXd& th) const {
    Eigen::VectorXd x(n);
    for (int i = 0; i < m(); ++i) x(ambient(i)) = th(i);
    x(graph_axis()) = phi(th);
    return x;
  }

  // chart parameter of an ambient point (drops the graph coordinate)
  Eigen::VectorXd project(const Eigen::VectorXd& x) const {
    Eigen::VectorXd th(m());
    for (int i = 0; i < m(); ++i) th(i) = x(ambient(i));
    return th;
  }
};

struct BoundaryFrame {
  Eigen::VectorXd point;
  Eigen::MatrixXd T;  // n x (n-1), columns are the tangent vectors
  Eigen::VectorXd N;
  Eigen::MatrixXd g, Omega, W;
};

inline BoundaryFrame frame(const MongeSurface& s, const Eigen::VectorXd& th) {
  s.validate();
  s.require(th);
  BoundaryFrame f;
  Eigen::VectorXd dphi = s.gradient(th);
  int ax = s.graph_axis();
  f.point = s.point(th);
  f.T = Eigen::MatrixXd::Zero(s.n, s.m());
  f.N.resize(s.n);
  for (int i = 0; i < s.m(); ++i) {
    f.T(s.ambient(i), i) = 1;
    f.T(ax, i) = dphi(i);
    f.N(s.ambient(i)) = dphi(i);
  }
  f.N(ax) = -1;
  f.N *= s.epsilon / std::sqrt(1 + dphi.squaredNorm());
  f.g = Eigen::MatrixXd::Identity(s.m(), s.m()) + dphi * dphi.transpose();
  return f;
}

inline BoundaryFrame fundamental_forms(const MongeSurface& s, const Eigen::VectorXd& th) {
  BoundaryFrame f = frame(s, th);
  Eigen::VectorXd dphi = s.gradient(th);
  f.Omega = -s.epsilon * s.hessian(th) / std::sqrt(1 + dphi.squaredNorm());
  f.W = f.g.ldlt().solve(f.Omega);
  return f;
}

// Principal curvatures: eigenvalues of W, which is similar to g^{-1/2} Omega g^{-1/2}.
inline Eigen::VectorXd principal_curvatures(const BoundaryFrame& f) {
  Eigen::MatrixXd gi = psd_sqrt(f.g).inverse();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(symmetrize(gi * f.Omega * gi), Eigen::EigenvaluesOnly);
  return es.eigenvalues();
}

// max_i |d_i N + sum_k W_{k,i} T_k| with d_i N by central differences.
inline double weingarten_identity_check(const MongeSurface& s, const Eigen::VectorXd& th, double fd_step = 1e-5) {
  auto f = fundamental_forms(s, th);
  double worst = 0;
  for (int i = 0; i < s.m(); ++i) {
    Eigen::VectorXd a = th, b = th;
    a(i) += fd_step, b(i) -= fd_step;
    Eigen::VectorXd dN = (frame(s, a).N - frame(s, b).N) / (2 * fd_step);
    worst = std::max(worst, (dN + f.T * f.W.col(i)).norm());
  }
  return worst;
}

// |det(I - u W)|; rejects u at or beyond the first focal distance.
inline double offset_jacobian(const MongeSurface& s, const Eigen::VectorXd& th, double u) {
  auto f = fundamental_forms(s, th);
  Eigen::VectorXd k = principal_curvatures(f);
  for (Eigen::Index i = 0; i < k.size(); ++i)
    if (1 - u * k(i) <= 0) {
      std::ostringstream os;
      os << "offset_jacobian: u = " << u << " crosses the focal distance " << 1 / k(i);
      throw error(os.str());
    }
  return std::abs((Eigen::MatrixXd::Identity(s.m(), s.m()) - u * f.W).determinant());
}

struct SignedDistance {
  double d = 0;
  Eigen::VectorXd foot;
  double round_trip = 0;
};

namespace detail {

struct LocalMin {
  Eigen::VectorXd th;
  double value = 0;
  bool on_edge = false;
};

inline LocalMin newton_foot(const MongeSurface& s, const Eigen::VectorXd& x, Eigen::VectorXd th) {
  auto objective = [&](const Eigen::VectorXd& t) { return 0.5 * (x - s.point(t)).squaredNorm(); };
  auto clamp = [&](Eigen::VectorXd t) { return Eigen::VectorXd(t.cwiseMax(s.lo).cwiseMin(s.hi)); };
  double val = objective(th);
  int ax = s.graph_axis();
  for (int it = 0; it < 200; ++it) {
    auto fr = frame(s, th);
    Eigen::VectorXd r = x - fr.point;
    Eigen::VectorXd grad = -fr.T.transpose() * r;
    if (grad.norm() <= 1e-15 * (1 + x.norm())) break;
    Eigen::MatrixXd H = fr.g - r(ax) * s.hessian(th);
    Eigen::VectorXd step;
    Eigen::LLT<Eigen::MatrixXd> llt(H);
    if (llt.info() == Eigen::Success)
      step = -llt.solve(grad);
    else
      step = -grad / std::max(1.0, fr.g.norm());
    double lam = 1;
    Eigen::VectorXd next = clamp(th + step);
    double nv = objective(next);
    while (nv > val && lam > 1e-12) {
      lam /= 2;
      next = clamp(th + lam * step);
      nv = objective(next);
    }
    if (nv > val) break;
    bool stalled = (next - th).norm() <= 1e-16 * (1 + th.norm());
    th = next;
    val = nv;
    if (stalled) break;
  }
  LocalMin out{th, val, false};
  double tol = 1e-9;
  for (int i = 0; i < s.m(); ++i)
    if (th(i) - s.lo(i) <= tol * (1 + std::abs(s.lo(i))) || s.hi(i) - th(i) <= tol * (1 + std::abs(s.hi(i))))
      out.on_edge = true;
  return out;
}

inline std::vector<Eigen::VectorXd> start_lattice(const MongeSurface& s) {
  std::vector<Eigen::VectorXd> out;
  auto at = [&](int i, double frac) { return s.lo(i) + frac * (s.hi(i) - s.lo(i)); };
  if (s.m() == 1) {
    for (int k = 0; k < 9; ++k) out.push_back(Eigen::VectorXd::Constant(1, at(0, (k + 0.5) / 9)));
  } else {
    for (int a = 0; a < 3; ++a)
      for (int b = 0; b < 3; ++b) {
        Eigen::VectorXd t(2);
        t << at(0, (a + 0.5) / 3), at(1, (b + 0.5) / 3);
        out.push_back(t);
      }
  }
  return out;
}

inline LocalMin closest_point(const MongeSurface& s, const Eigen::VectorXd& x) {
  s.validate();
  if (x.size() != s.n) throw error("signed_distance: point has wrong dimension");
  LocalMin best;
  best.value = std::numeric_limits<double>::infinity();
  std::vector<Eigen::VectorXd> starts = {Eigen::VectorXd(s.project(x).cwiseMax(s.lo).cwiseMin(s.hi))};
  for (auto& st : start_lattice(s)) starts.push_back(st);
  for (const auto& st : starts) {
    auto c = newton_foot(s, x, st);
    if (best.th.size() == 0 || c.value < best.value - 1e-14 * (1 + best.value)) best = c;
  }
  return best;
}

}  // namespace detail

// Inverse of the normal coordinate map z + r N(z) on the alpha-tube.
inline SignedDistance signed_distance(const MongeSurface& s, const Eigen::VectorXd& x, double tube_alpha) {
  auto best = detail::closest_point(s, x);
  if (best.on_edge) throw error("signed_distance: closest chart point lies on the chart boundary");
  auto fr = frame(s, best.th);
  SignedDistance out;
  out.foot = best.th;
  out.d = (x - fr.point).dot(fr.N);
  out.round_trip = (fr.point + out.d * fr.N - x).norm();
  if (std::abs(out.d) > tube_alpha) {
    std::ostringstream os;
    os << "signed_distance: point at distance " << std::abs(out.d) << " lies outside the tube of radius " << tube_alpha;
    throw error(os.str());
  }
  if (out.round_trip > 1e-8) throw error("signed_distance: normal coordinate round trip failed");
  return out;
}

// Unsigned distance to the chart image, without a tube restriction.
inline double distance_to_surface(const MongeSurface& s, const Eigen::VectorXd& x) {
  return std::sqrt(2 * detail::closest_point(s, x).value);
}

struct ChartQuadrature {
  std::vector<Eigen::VectorXd> nodes;
  std::vector<double> weights;
};

inline ChartQuadrature chart_quadrature(const MongeSurface& s, int cells) {
  ChartQuadrature q;
  if (s.m() == 1) {
    auto g = gauss_legendre(s.lo(0), s.hi(0), cells);
    for (Eigen::Index i = 0; i < g.nodes.size(); ++i) {
      q.nodes.push_back(Eigen::VectorXd::Constant(1, g.nodes(i)));
      q.weights.push_back(g.weights(i));
    }
  } else {
    auto g0 = gauss_legendre(s.lo(0), s.hi(0), cells), g1 = gauss_legendre(s.lo(1), s.hi(1), cells);
    for (Eigen::Index i = 0; i < g0.nodes.size(); ++i)
      for (Eigen::Index j = 0; j < g1.nodes.size(); ++j) {
        Eigen::VectorXd t(2);
        t << g0.nodes(i), g1.nodes(j);
        q.nodes.push_back(t);
        q.weights.push_back(g0.weights(i) * g1.weights(j));
      }
  }
  return q;
}

// Evaluates fn at every node in parallel, then sums in node order.
inline double ordered_sum(std::size_t n, int threads, const std::function<double(std::size_t)>& fn) {
  std::vector<double> vals(n);
  parallel_for(n, threads, [&](std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i) vals[i] = fn(i);
  });
  double total = 0;
  for (double v : vals) total += v;
  return total;
}

inline double surface_area(const MongeSurface& s, int cells = 64, int threads = 1) {
  auto q = chart_quadrature(s, cells);
  return ordered_sum(q.nodes.size(), threads,
                     [&](std::size_t i) { return q.weights[i] * std::sqrt(frame(s, q.nodes[i]).g.determinant()); });
}

struct CoareaReport {
  double alpha = 0;
  double chart_volume = 0;   // Fermi-chart quadrature with |det(I - rW)| sqrt(det g)
  double coarea_volume = 0;  // iterated r-integral of offset-surface areas
  double rel_diff = 0;
  bool agree = false;
  bool shrunk = false;
};

// Tube {psi(theta) + r N(theta) : 0 < r < alpha} over the chart box, f = f(r).
inline CoareaReport coarea_check(const MongeSurface& s, const std::function<double(double)>& f, double alpha,
                                 int n_r = 16, int cells = 32, int threads = 1, double tol = 1e-3) {
  s.validate();
  if (!(alpha > 0)) throw error("coarea_check: alpha must be > 0");
  CoareaReport rep;
  auto q = chart_quadrature(s, cells);
  double kmax = 0;
  for (const auto& th : q.nodes) {
    Eigen::VectorXd k = principal_curvatures(fundamental_forms(s, th));
    kmax = std::max(kmax, k.maxCoeff());
  }
  if (kmax > 0 && alpha >= 1 / kmax) {
    alpha = 0.9 / kmax;
    rep.shrunk = true;
  }
  rep.alpha = alpha;

  // r = alpha s^2 on (0,1)
  auto gs = gauss_legendre(0, 1, n_r);
  std::vector<double> rs, rw;
  for (Eigen::Index k = 0; k < gs.nodes.size(); ++k) {
    rs.push_back(alpha * gs.nodes(k) * gs.nodes(k));
    rw.push_back(2 * alpha * gs.nodes(k) * gs.weights(k));
  }
  rep.chart_volume = ordered_sum(q.nodes.size(), threads, [&](std::size_t i) {
    auto fr = fundamental_forms(s, q.nodes[i]);
    Eigen::MatrixXd I = Eigen::MatrixXd::Identity(s.m(), s.m());
    double sg = std::sqrt(fr.g.determinant()), acc = 0;
    for (std::size_t k = 0; k < rs.size(); ++k) acc += rw[k] * f(rs[k]) * std::abs((I - rs[k] * fr.W).determinant());
    return q.weights[i] * sg * acc;
  });

  // geometric panels toward r = 0
  std::vector<double> pr, pw;
  int levels = 40;
  for (int lvl = 0; lvl <= levels; ++lvl) {
    double b = alpha * std::pow(0.5, lvl), a = lvl == levels ? 0.0 : b / 2;
    auto g = gauss_legendre(a, b, lvl == 0 ? std::max(1, n_r / 4) : 1);
    for (Eigen::Index k = 0; k < g.nodes.size(); ++k) {
      pr.push_back(g.nodes(k));
      pw.push_back(g.weights(k));
    }
  }
  double h = 1e-5;
  auto offset = [&](const Eigen::VectorXd& th, double r) {
    auto fr = frame(s, th);
    return Eigen::VectorXd(fr.point + r * fr.N);
  };
  std::vector<double> areas(pr.size());
  parallel_for(pr.size(), threads, [&](std::size_t b, std::size_t e) {
    for (std::size_t k = b; k < e; ++k) {
      double acc = 0;
      for (std::size_t i = 0; i < q.nodes.size(); ++i) {
        Eigen::MatrixXd J(s.n, s.m());
        for (int j = 0; j < s.m(); ++j) {
          Eigen::VectorXd a = q.nodes[i], c = q.nodes[i];
          a(j) += h, c(j) -= h;
          J.col(j) = (offset(a, pr[k]) - offset(c, pr[k])) / (2 * h);
        }
        acc += q.weights[i] * std::sqrt((J.transpose() * J).determinant());
      }
      areas[k] = acc;
    }
  });
  for (std::size_t k = 0; k < pr.size(); ++k) rep.coarea_volume += pw[k] * f(pr[k]) * areas[k];
  rep.rel_diff = std::abs(rep.chart_volume - rep.coarea_volume) / std::max(std::abs(rep.chart_volume), 1e-300);
  rep.agree = rep.rel_diff <= tol;
  return rep;
}

// q(x, y) <= c exp(-|y - m(x)|^2 / (2 sigma^2))
struct SubGaussianKernel {
  double c = 1, sigma = 1;
  std::function<Eigen::VectorXd(const Eigen::VectorXd&)> mean;

  static SubGaussianKernel gaussian(int n, double sigma) {
    SubGaussianKernel k;
    k.sigma = sigma;
    k.c = std::pow(2 * M_PI * sigma * sigma, -n / 2.0);
    k.mean = [](const Eigen::VectorXd& x) { return x; };
    return k;
  }
  double operator()(const Eigen::VectorXd& x, const Eigen::VectorXd& y) const {
    return c * std::exp(-(y - mean(x)).squaredNorm() / (2 * sigma * sigma));
  }
};

// Chart quadrature of q(x, psi + r N) |det(I - rW)| sqrt(det g), refined until two levels agree.
inline double level_set_density(const SubGaussianKernel& k, const MongeSurface& s, const Eigen::VectorXd& x, double r,
                                int threads = 1, double tol = 1e-9) {
  s.validate();
  auto eval = [&](int cells) {
    auto q = chart_quadrature(s, cells);
    return ordered_sum(q.nodes.size(), threads, [&](std::size_t i) {
      auto fr = fundamental_forms(s, q.nodes[i]);
      Eigen::MatrixXd I = Eigen::MatrixXd::Identity(s.m(), s.m());
      return q.weights[i] * k(x, Eigen::VectorXd(fr.point + r * fr.N)) * std::abs((I - r * fr.W).determinant()) *
             std::sqrt(fr.g.determinant());
    });
  };
  int cells = s.m() == 1 ? 16 : 8;
  double prev = eval(cells);
  for (int level = 0; level < (s.m() == 1 ? 8 : 4); ++level) {
    cells *= 2;
    double cur = eval(cells);
    if (std::abs(cur - prev) <= tol * std::max(std::abs(cur), 1e-300) + 1e-300) return cur;
    prev = cur;
  }
  throw error("level_set_density: quadrature did not converge");
}

struct LevelSetBound {
  double value = 0;
  double varpi = 0, iota = 0, kappa = 0, kappa_minus = 0, eps = 0;
};

// varpi iota(alpha) kappa^- kappa / alpha with the Gaussian domination; iota minimized over the splitting epsilon.
inline LevelSetBound level_set_bound(const SubGaussianKernel& k, const MongeSurface& s, double alpha,
                                     int cells = 16) {
  s.validate();
  LevelSetBound b;
  int n = s.n;
  double s2 = k.sigma * k.sigma;
  b.varpi = k.c * std::pow(2 * M_PI * s2, n / 2.0);
  b.iota = std::numeric_limits<double>::infinity();
  for (int j = 1; j < 200; ++j) {
    double e = j / 200.0;
    double io = std::pow(1 - e, -n / 2.0) * std::exp(alpha * alpha * (1 - e) / (2 * e * s2));
    if (io < b.iota) b.iota = io, b.eps = e;
  }
  auto q = chart_quadrature(s, cells);
  Eigen::MatrixXd I = Eigen::MatrixXd::Identity(s.m(), s.m());
  for (const auto& th : q.nodes) {
    auto fr = fundamental_forms(s, th);
    for (int j = 0; j <= 50; ++j) {
      double r = alpha * j / 50;
      double d = std::abs((I - r * fr.W).determinant());
      if (!(d > 0)) throw error("level_set_bound: focal point inside the tube");
      b.kappa = std::max(b.kappa, d);
      b.kappa_minus = std::max(b.kappa_minus, 1 / d);
    }
  }
  b.value = b.varpi * b.iota * b.kappa_minus * b.kappa / alpha;
  return b;
}

// chi(u) = u^{-(1-eps)}
struct BoundaryProfile {
  double eps = 0.5;
  double alpha = 1;

  void validate() const {
    if (!(eps > 0 && eps < 1)) throw error("BoundaryProfile: epsilon must lie in (0,1)");
    if (!(alpha > 0)) throw error("BoundaryProfile: alpha must be > 0");
  }
  double chi(double u) const {
    if (!(u > 0)) throw error("BoundaryProfile: distance must be > 0");
    return std::pow(u, -(1 - eps));
  }
  double chi_bar(double a) const { return std::pow(a, eps) / eps; }
};

struct Interval {
  double lo = 0, hi = 1;
};

inline double boundary_lyapunov(const BoundaryProfile& p, const Interval& E, double x) {
  p.validate();
  if (!(x > E.lo && x < E.hi)) throw error("boundary_lyapunov: x outside the open interval");
  return p.chi(std::min(x - E.lo, E.hi - x));
}

inline double boundary_lyapunov(const BoundaryProfile& p, const MongeSurface& s, const Eigen::VectorXd& x) {
  p.validate();
  return p.chi(distance_to_surface(s, x));
}

// V_E^{1-1/p} V_boundary^{1/p}
inline double product_lyapunov(double VE, double Vb, double p) {
  if (!(p > 1)) throw error("product_lyapunov: p must be > 1");
  return std::pow(VE, 1 - 1 / p) * std::pow(Vb, 1 / p);
}

// Charts glued by normalized bump weights.
struct Atlas {
  std::vector<MongeSurface> charts;

  // log of the product bump prod exp(1 - 1/(1 - u_i^2)), u_i the box coordinate in (-1,1)
  static double log_bump(const MongeSurface& s, const Eigen::VectorXd& th) {
    double w = 0;
    for (int i = 0; i < s.m(); ++i) {
      double u = (2 * th(i) - s.lo(i) - s.hi(i)) / (s.hi(i) - s.lo(i));
      if (std::abs(u) >= 1) return -std::numeric_limits<double>::infinity();
      w += 1 - 1 / (1 - u * u);
    }
    return w;
  }

  // normalized weight of each chart at an ambient point of the surface
  std::vector<double> weights(const Eigen::VectorXd& x, double tol = 1e-9) const {
    std::vector<double> lw(charts.size(), -std::numeric_limits<double>::infinity());
    double top = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < charts.size(); ++c) {
      Eigen::VectorXd th = charts[c].project(x);
      if (!charts[c].contains(th) || (charts[c].point(th) - x).norm() > tol * (1 + x.norm())) continue;
      lw[c] = log_bump(charts[c], th);
      top = std::max(top, lw[c]);
    }
    if (!std::isfinite(top)) throw error("Atlas: point is not covered by any chart interior");
    std::vector<double> w(charts.size());
    double total = 0;
    for (std::size_t c = 0; c < charts.size(); ++c) total += (w[c] = std::exp(lw[c] - top));
    for (double& v : w) v /= total;
    return w;
  }

  double integrate(const std::function<double(const Eigen::VectorXd&)>& f, int cells = 64) const {
    double total = 0;
    for (std::size_t c = 0; c < charts.size(); ++c) {
      auto q = chart_quadrature(charts[c], cells);
      for (std::size_t i = 0; i < q.nodes.size(); ++i) {
        auto fr = frame(charts[c], q.nodes[i]);
        total += q.weights[i] * weights(fr.point)[c] * f(fr.point) * std::sqrt(fr.g.determinant());
      }
    }
    return total;
  }
};

// phi(z) = sum_k coeffs[k] z^k
inline MongeSurface polynomial_curve(const std::vector<double>& coeffs, double lo, double hi, double epsilon = 1,
                                     std::string name = "polynomial") {
  MongeSurface s;
  s.name = std::move(name);
  s.n = 2;
  s.epsilon = epsilon;
  s.lo = Eigen::VectorXd::Constant(1, lo);
  s.hi = Eigen::VectorXd::Constant(1, hi);
  auto eval = [coeffs](double z, int der) {
    double v = 0;
    for (int k = static_cast<int>(coeffs.size()) - 1; k >= der; --k) {
      double c = coeffs[k];
      for (int j = 0; j < der; ++j) c *= (k - j);
      v = v * z + c;
    }
    return v;
  };
  s.phi = [eval](const Eigen::VectorXd& t) { return eval(t(0), 0); };
  s.grad = [eval](const Eigen::VectorXd& t) { return Eigen::VectorXd::Constant(1, eval(t(0), 1)); };
  s.hess = [eval](const Eigen::VectorXd& t) { return Eigen::MatrixXd::Constant(1, 1, eval(t(0), 2)); };
  s.validate();
  return s;
}

// phi(t1, t2) = sum c t1^i t2^j
struct PolyTerm {
  double c;
  int i, j;
};

inline MongeSurface polynomial_surface(const std::vector<PolyTerm>& terms, const Eigen::Vector2d& lo,
                                       const Eigen::Vector2d& hi, double epsilon = 1,
                                       std::string name = "polynomial") {
  MongeSurface s;
  s.name = std::move(name);
  s.n = 3;
  s.epsilon = epsilon;
  s.lo = lo;
  s.hi = hi;
  auto mono = [](double z, int p, int der) {
    if (der > p) return 0.0;
    double c = 1;
    for (int k = 0; k < der; ++k) c *= (p - k);
    return c * std::pow(z, p - der);
  };
  s.phi = [terms, mono](const Eigen::VectorXd& t) {
    double v = 0;
    for (const auto& m : terms) v += m.c * mono(t(0), m.i, 0) * mono(t(1), m.j, 0);
    return v;
  };
  s.grad = [terms, mono](const Eigen::VectorXd& t) {
    Eigen::VectorXd g = Eigen::VectorXd::Zero(2);
    for (const auto& m : terms) {
      g(0) += m.c * mono(t(0), m.i, 1) * mono(t(1), m.j, 0);
      g(1) += m.c * mono(t(0), m.i, 0) * mono(t(1), m.j, 1);
    }
    return g;
  };
  s.hess = [terms, mono](const Eigen::VectorXd& t) {
    Eigen::MatrixXd H = Eigen::MatrixXd::Zero(2, 2);
    for (const auto& m : terms) {
      H(0, 0) += m.c * mono(t(0), m.i, 2) * mono(t(1), m.j, 0);
      H(1, 1) += m.c * mono(t(0), m.i, 0) * mono(t(1), m.j, 2);
      H(0, 1) += m.c * mono(t(0), m.i, 1) * mono(t(1), m.j, 1);
    }
    H(1, 0) = H(0, 1);
    return H;
  };
  s.validate();
  return s;
}

// Side chart of the parabola x2 = x1^2 seen as x1 = -branch sqrt(x2), x2 in (lo, hi).
inline MongeSurface parabola_side_chart(double branch, double lo = 1, double hi = 50, double epsilon = 1) {
  if (branch != 1 && branch != -1) throw error("parabola_side_chart: branch must be +1 or -1");
  MongeSurface s;
  s.name = branch > 0 ? "parabola_side_plus" : "parabola_side_minus";
  s.n = 2;
  s.axis = 0;
  s.epsilon = epsilon;
  s.lo = Eigen::VectorXd::Constant(1, lo);
  s.hi = Eigen::VectorXd::Constant(1, hi);
  s.phi = [branch](const Eigen::VectorXd& t) { return -branch * std::sqrt(t(0)); };
  s.grad = [branch](const Eigen::VectorXd& t) { return Eigen::VectorXd::Constant(1, -branch / (2 * std::sqrt(t(0)))); };
  s.hess = [branch](const Eigen::VectorXd& t) {
    return Eigen::MatrixXd::Constant(1, 1, branch / (4 * std::pow(t(0), 1.5)));
  };
  s.validate();
  return s;
}

inline std::vector<std::string> surface_fixture_names() {
  return {"parabola", "paraboloid", "graph_example_8_4", "flat"};
}

inline MongeSurface surface_fixture(const std::string& name, double epsilon = 1) {
  if (name == "parabola" || name == "graph_example_8_4") {
    auto s = polynomial_curve({0, 0, 1}, -2, 2, epsilon, name);
    return s;
  }
  if (name == "paraboloid")
    return polynomial_surface({{1, 2, 0}, {1, 0, 2}}, Eigen::Vector2d(-1.4, -1.4), Eigen::Vector2d(1.4, 1.4), epsilon,
                              name);
  if (name == "flat") return polynomial_curve({0}, -10, 10, epsilon, name);
  throw error("unknown surface fixture '" + name + "'");
}

// The parabola covered by a central chart and the two side charts.
inline Atlas parabola_atlas(double side_hi = 9) {
  Atlas a;
  a.charts.push_back(surface_fixture("graph_example_8_4"));
  a.charts.push_back(parabola_side_chart(1, 1, side_hi));
  a.charts.push_back(parabola_side_chart(-1, 1, side_hi));
  return a;
}

}  // namespace fkstab

#endif

#ifndef FKSTAB_CORE_HPP
#define FKSTAB_CORE_HPP

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

namespace fkstab {

class error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Runs fn(begin, end) over contiguous blocks; block boundaries depend only on
// n and the worker count, so any per-block output is reproducible.
inline void parallel_for(std::size_t n, int threads,
                         const std::function<void(std::size_t, std::size_t)>& fn) {
  int workers = std::max(1, threads);
  if (workers == 1 || n < 2) {
    fn(0, n);
    return;
  }
  workers = static_cast<int>(std::min<std::size_t>(workers, n));
  std::vector<std::thread> pool;
  std::size_t chunk = (n + workers - 1) / workers;
  for (int w = 0; w < workers; ++w) {
    std::size_t b = w * chunk, e = std::min(n, b + chunk);
    if (b >= e) break;
    pool.emplace_back(fn, b, e);
  }
  for (auto& t : pool) t.join();
}

inline int default_threads() {
  unsigned hc = std::thread::hardware_concurrency();
  return hc == 0 ? 1 : static_cast<int>(hc);
}

// Quadrature grid. 1D grids may drop an endpoint where every function of
// interest vanishes (absorbing boundary); that node keeps its half-cell as
// phantom_volume so the weight bookkeeping still matches the interval length.
class GridDomain {
 public:
  enum class kind { trapezoid, counting, tensor };

  static GridDomain uniform(double lo, double hi, int n, bool open_lo = false,
                            bool open_hi = false) {
    if (!(hi > lo) || n < 2) throw error("grid: need hi > lo and n >= 2");
    int gaps = n - 1 + (open_lo ? 1 : 0) + (open_hi ? 1 : 0);
    double h = (hi - lo) / gaps;
    GridDomain g;
    g.kind_ = kind::trapezoid;
    g.dim_ = 1;
    g.points_.resize(n, 1);
    g.weights_.resize(n);
    for (int i = 0; i < n; ++i) {
      g.points_(i, 0) = lo + h * (i + (open_lo ? 1 : 0));
      g.weights_(i) = h;
    }
    if (!open_lo) g.weights_(0) = h / 2;
    if (!open_hi) g.weights_(n - 1) = h / 2;
    g.phantom_ = (open_lo ? h / 2 : 0.0) + (open_hi ? h / 2 : 0.0);
    g.lo_ = Eigen::VectorXd::Constant(1, lo);
    g.hi_ = Eigen::VectorXd::Constant(1, hi);
    g.open_lo_ = open_lo;
    g.open_hi_ = open_hi;
    g.spacing_ = h;
    if (open_lo) g.boundary_.push_back(lo);
    if (open_hi) g.boundary_.push_back(hi);
    g.validate();
    return g;
  }

  // States first, first+1, ..., first+n-1 with unit (counting) weights.
  static GridDomain counting(int first, int n) {
    if (n < 1) throw error("grid: counting grid needs n >= 1");
    GridDomain g;
    g.kind_ = kind::counting;
    g.dim_ = 1;
    g.points_.resize(n, 1);
    for (int i = 0; i < n; ++i) g.points_(i, 0) = first + i;
    g.weights_ = Eigen::VectorXd::Ones(n);
    g.lo_ = Eigen::VectorXd::Constant(1, first);
    g.hi_ = Eigen::VectorXd::Constant(1, first + n - 1);
    g.spacing_ = 1;
    g.validate();
    return g;
  }

  // Lexicographic product of two 1D grids.
  static GridDomain tensor(const GridDomain& a, const GridDomain& b) {
    if (a.dim_ != 1 || b.dim_ != 1) throw error("grid: tensor of 1D grids only");
    GridDomain g;
    g.kind_ = kind::tensor;
    g.dim_ = 2;
    Eigen::Index n = a.size() * b.size();
    g.points_.resize(n, 2);
    g.weights_.resize(n);
    Eigen::Index k = 0;
    for (Eigen::Index i = 0; i < a.size(); ++i)
      for (Eigen::Index j = 0; j < b.size(); ++j, ++k) {
        g.points_(k, 0) = a.points_(i, 0);
        g.points_(k, 1) = b.points_(j, 0);
        g.weights_(k) = a.weights_(i) * b.weights_(j);
      }
    g.lo_ = Eigen::Vector2d(a.lo_(0), b.lo_(0));
    g.hi_ = Eigen::Vector2d(a.hi_(0), b.hi_(0));
    double full = (a.volume() + a.phantom_) * (b.volume() + b.phantom_);
    g.phantom_ = full - g.weights_.sum();
    g.validate();
    return g;
  }

  Eigen::Index size() const { return points_.rows(); }
  int dim() const { return dim_; }
  kind grid_kind() const { return kind_; }
  const Eigen::MatrixXd& points() const { return points_; }
  const Eigen::VectorXd& weights() const { return weights_; }
  double x(Eigen::Index i) const { return points_(i, 0); }
  std::span<const double> point(Eigen::Index i, std::vector<double>& buf) const {
    buf.resize(dim_);
    for (int d = 0; d < dim_; ++d) buf[d] = points_(i, d);
    return {buf.data(), buf.size()};
  }
  Eigen::VectorXd xs() const { return points_.col(0); }
  const Eigen::VectorXd& lo() const { return lo_; }
  const Eigen::VectorXd& hi() const { return hi_; }
  bool open_lo() const { return open_lo_; }
  bool open_hi() const { return open_hi_; }
  double spacing() const { return spacing_; }
  double phantom_volume() const { return phantom_; }
  const std::vector<double>& boundary_points() const { return boundary_; }
  double volume() const { return weights_.sum(); }
  double nominal_volume() const {
    if (kind_ == kind::counting) return static_cast<double>(size());
    return (hi_ - lo_).prod();
  }

  void validate() const {
    if ((weights_.array() <= 0).any()) throw error("grid: non-positive cell weight");
    if (dim_ == 1)
      for (Eigen::Index i = 1; i < size(); ++i)
        if (!(points_(i, 0) > points_(i - 1, 0))) throw error("grid: points not increasing");
    double total = volume() + phantom_;
    if (std::abs(total - nominal_volume()) > 1e-12 * nominal_volume())
      throw error("grid: weights do not sum to the domain volume");
  }

 private:
  kind kind_ = kind::trapezoid;
  int dim_ = 1;
  Eigen::MatrixXd points_;
  Eigen::VectorXd weights_;
  Eigen::VectorXd lo_, hi_;
  bool open_lo_ = false, open_hi_ = false;
  double spacing_ = 0;
  double phantom_ = 0;
  std::vector<double> boundary_;
};

using grid_ptr = std::shared_ptr<const GridDomain>;

inline grid_ptr make_grid(GridDomain g) { return std::make_shared<const GridDomain>(std::move(g)); }

struct MeasureVec {
  Eigen::VectorXd masses;
  grid_ptr grid;

  MeasureVec() = default;
  MeasureVec(Eigen::VectorXd m, grid_ptr g = nullptr) : masses(std::move(m)), grid(std::move(g)) {
    if (grid && grid->size() != masses.size()) throw error("measure: length differs from grid size");
    if (!masses.allFinite()) throw error("measure: non-finite mass");
  }
  Eigen::Index size() const { return masses.size(); }
  double total() const { return masses.sum(); }

  static MeasureVec dirac(Eigen::Index n, Eigen::Index i, grid_ptr g = nullptr) {
    Eigen::VectorXd m = Eigen::VectorXd::Zero(n);
    m(i) = 1;
    return {m, std::move(g)};
  }
  // Atoms from a density sampled at the grid points.
  static MeasureVec from_density(const Eigen::VectorXd& density, grid_ptr g) {
    if (!g) throw error("measure: density ingestion needs a grid");
    return {density.cwiseProduct(g->weights()), g};
  }
};

struct FunctionVec {
  Eigen::VectorXd values;
  grid_ptr grid;

  FunctionVec() = default;
  FunctionVec(Eigen::VectorXd v, grid_ptr g = nullptr) : values(std::move(v)), grid(std::move(g)) {
    if (grid && grid->size() != values.size()) throw error("function: length differs from grid size");
    if (!values.allFinite()) throw error("function: non-finite value");
  }
  Eigen::Index size() const { return values.size(); }
};

inline void check_same(const grid_ptr& a, const grid_ptr& b, Eigen::Index na, Eigen::Index nb) {
  if (na != nb) throw error("size mismatch between measure/function/operator");
  if (a && b && a != b && (a->size() != b->size() || a->points() != b->points()))
    throw error("mismatched grids");
}

// Positive kernel matrix; row = source point, column = target point.
struct DiscreteOperator {
  Eigen::MatrixXd matrix;
  grid_ptr grid;
  double time_step = 1.0;
  bool markov = false;

  Eigen::Index size() const { return matrix.rows(); }

  Eigen::VectorXd apply(const Eigen::VectorXd& f) const { return matrix * f; }
  FunctionVec apply(const FunctionVec& f) const {
    check_same(grid, f.grid, size(), f.size());
    return {matrix * f.values, grid};
  }
  Eigen::VectorXd act(const Eigen::VectorXd& mu) const { return matrix.transpose() * mu; }
  MeasureVec act(const MeasureVec& mu) const {
    check_same(grid, mu.grid, size(), mu.size());
    return {matrix.transpose() * mu.masses, grid};
  }
  Eigen::VectorXd mass() const { return matrix.rowwise().sum(); }

  DiscreteOperator then(const DiscreteOperator& other) const {
    if (other.size() != size()) throw error("operator: composition size mismatch");
    return {matrix * other.matrix, grid, time_step + other.time_step, markov && other.markov};
  }
  DiscreteOperator power(int k) const {
    if (k < 1) throw error("operator: power needs k >= 1");
    DiscreteOperator r = *this;
    for (int i = 1; i < k; ++i) r = r.then(*this);
    return r;
  }

  void validate(double quad_tol = 1e-6) const {
    if (matrix.rows() != matrix.cols()) throw error("operator: matrix not square");
    if ((matrix.array() < 0).any()) throw error("operator: negative entry");
    Eigen::VectorXd rs = mass();
    if (markov) {
      if (((rs.array() - 1).abs() > quad_tol).any()) throw error("operator: Markov rows do not sum to 1");
    } else if ((rs.array() > 1 + 1e-9).any()) {
      throw error("operator: sub-Markov row sum exceeds 1");
    }
  }
};

// Lyapunov function families; see parse() for the text spellings.
class LyapunovSpec {
 public:
  enum class family { poly, exp, inv_plus_poly, boundary, affine, product, constant };

  static LyapunovSpec poly(double k) { return leaf(family::poly, {{"k", k}}); }
  static LyapunovSpec exponential(double v) { return leaf(family::exp, {{"v", v}}); }
  static LyapunovSpec inv_plus_poly(double n) { return leaf(family::inv_plus_poly, {{"n", n}}); }
  static LyapunovSpec boundary_profile(double eps, double lo = 0, double hi = 1) {
    if (!(eps > 0 && eps < 1)) throw error("lyapunov: boundary exponent must lie in (0,1)");
    return leaf(family::boundary, {{"eps", eps}, {"lo", lo}, {"hi", hi}});
  }
  static LyapunovSpec constant(double c) { return leaf(family::constant, {{"c", c}}); }
  static LyapunovSpec affine_rescale(const LyapunovSpec& base, double a, double b) {
    LyapunovSpec s = leaf(family::affine, {{"a", a}, {"b", b}});
    s.children_.push_back(base);
    return s;
  }
  static LyapunovSpec product(std::vector<LyapunovSpec> factors, std::vector<double> exponents = {}) {
    if (factors.empty()) throw error("lyapunov: empty product");
    if (exponents.empty()) exponents.assign(factors.size(), 1.0);
    if (exponents.size() != factors.size()) throw error("lyapunov: exponent count mismatch");
    LyapunovSpec s = leaf(family::product, {});
    s.children_ = std::move(factors);
    s.exponents_ = std::move(exponents);
    return s;
  }

  family kind() const { return family_; }
  double param(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw error("lyapunov: missing parameter " + name);
    return it->second;
  }

  bool singular(std::span<const double> x) const {
    switch (family_) {
      case family::inv_plus_poly: return x[0] <= 0;
      case family::boundary: return x[0] <= param("lo") || x[0] >= param("hi");
      case family::affine: return children_[0].singular(x);
      case family::product:
        return std::any_of(children_.begin(), children_.end(), [&](const auto& c) { return c.singular(x); });
      default: return false;
    }
  }

  double operator()(std::span<const double> x) const {
    if (singular(x)) throw error("lyapunov: evaluation at a singular point of " + to_string());
    switch (family_) {
      case family::poly: return 1 + std::pow(norm(x), param("k"));
      case family::exp: return std::exp(param("v") * norm(x));
      case family::inv_plus_poly: return std::pow(x[0], param("n")) + 1 / x[0];
      case family::boundary: {
        double d = std::min(x[0] - param("lo"), param("hi") - x[0]);
        return std::pow(d, -(1 - param("eps")));
      }
      case family::constant: return param("c");
      case family::affine: return param("a") + param("b") * children_[0](x);
      case family::product: {
        double v = 1;
        for (std::size_t i = 0; i < children_.size(); ++i) v *= std::pow(children_[i](x), exponents_[i]);
        return v;
      }
    }
    return 0;
  }
  double operator()(double x) const { return (*this)(std::span<const double>(&x, 1)); }

  FunctionVec on(const grid_ptr& g) const {
    Eigen::VectorXd v(g->size());
    std::vector<double> buf;
    for (Eigen::Index i = 0; i < g->size(); ++i) v(i) = (*this)(g->point(i, buf));
    if (!v.allFinite()) throw error("lyapunov: non-finite value on grid");
    return {v, g};
  }

  // Surrogate for compact sub-level sets: the outermost 5% of points exceed
  // the interior median.
  static bool diverges_at_edges(const Eigen::VectorXd& v) {
    Eigen::Index n = v.size();
    Eigen::Index k = std::max<Eigen::Index>(1, n / 40);
    std::vector<double> inner(v.data() + k, v.data() + n - k);
    if (inner.empty()) return false;
    std::nth_element(inner.begin(), inner.begin() + inner.size() / 2, inner.end());
    double med = inner[inner.size() / 2];
    for (Eigen::Index i = 0; i < k; ++i)
      if (!(v(i) > med) || !(v(n - 1 - i) > med)) return false;
    return true;
  }

  std::string to_string() const {
    std::ostringstream os;
    os.precision(17);
    switch (family_) {
      case family::poly: os << "poly:" << param("k"); break;
      case family::exp: os << "exp:" << param("v"); break;
      case family::inv_plus_poly: os << "inv_plus_poly:" << param("n"); break;
      case family::boundary:
        os << "boundary:" << param("eps") << ':' << param("lo") << ':' << param("hi");
        break;
      case family::constant: os << "const:" << param("c"); break;
      case family::affine:
        os << "affine:" << param("a") << ':' << param("b") << ':' << children_[0].to_string();
        break;
      case family::product:
        os << "product:[";
        for (std::size_t i = 0; i < children_.size(); ++i) {
          if (i) os << ',';
          os << children_[i].to_string();
          if (exponents_[i] != 1) os << '^' << exponents_[i];
        }
        os << ']';
        break;
    }
    return os.str();
  }

  // "poly:4", "exp:0.5", "inv_plus_poly:2", "boundary:0.5[:lo:hi]", "const:0.5",
  // "affine:a:b:<spec>", "product:[<spec>^e,<spec>]".
  static LyapunovSpec parse(const std::string& text) {
    auto colon = text.find(':');
    if (colon == std::string::npos) throw error("lyapunov: expected family:parameters in '" + text + "'");
    std::string name = text.substr(0, colon), rest = text.substr(colon + 1);
    auto num = [&](const std::string& s) {
      std::size_t used = 0;
      double v = 0;
      try {
        v = std::stod(s, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != s.size() || s.empty()) throw error("lyapunov: bad number '" + s + "' in '" + text + "'");
      return v;
    };
    auto fields = [](const std::string& s, std::size_t max_parts) {
      std::vector<std::string> out;
      std::size_t start = 0;
      while (out.size() + 1 < max_parts) {
        auto p = s.find(':', start);
        if (p == std::string::npos) break;
        out.push_back(s.substr(start, p - start));
        start = p + 1;
      }
      out.push_back(s.substr(start));
      return out;
    };
    if (name == "poly") return poly(num(rest));
    if (name == "exp") return exponential(num(rest));
    if (name == "inv_plus_poly") return inv_plus_poly(num(rest));
    if (name == "const") return constant(num(rest));
    if (name == "boundary") {
      auto f = fields(rest, 3);
      if (f.size() == 1) return boundary_profile(num(f[0]));
      if (f.size() == 3) return boundary_profile(num(f[0]), num(f[1]), num(f[2]));
      throw error("lyapunov: boundary takes eps or eps:lo:hi");
    }
    if (name == "affine") {
      auto f = fields(rest, 3);
      if (f.size() != 3) throw error("lyapunov: affine takes a:b:<spec>");
      return affine_rescale(parse(f[2]), num(f[0]), num(f[1]));
    }
    if (name == "product") {
      if (rest.size() < 2 || rest.front() != '[' || rest.back() != ']')
        throw error("lyapunov: product takes [<spec>,...]");
      std::string body = rest.substr(1, rest.size() - 2);
      std::vector<LyapunovSpec> factors;
      std::vector<double> exps;
      int depth = 0;
      std::size_t start = 0;
      for (std::size_t i = 0; i <= body.size(); ++i) {
        if (i < body.size() && body[i] == '[') ++depth;
        if (i < body.size() && body[i] == ']') --depth;
        if (i == body.size() || (body[i] == ',' && depth == 0)) {
          std::string item = body.substr(start, i - start);
          double e = 1;
          auto caret = item.rfind('^');
          if (caret != std::string::npos && item.find(']', caret) == std::string::npos) {
            e = num(item.substr(caret + 1));
            item = item.substr(0, caret);
          }
          factors.push_back(parse(item));
          exps.push_back(e);
          start = i + 1;
        }
      }
      return product(std::move(factors), std::move(exps));
    }
    throw error("lyapunov: unknown family '" + name + "'");
  }

 private:
  static LyapunovSpec leaf(family f, std::map<std::string, double> p) {
    LyapunovSpec s;
    s.family_ = f;
    s.params_ = std::move(p);
    return s;
  }
  static double norm(std::span<const double> x) {
    double s = 0;
    for (double v : x) s += v * v;
    return std::sqrt(s);
  }

  family family_ = family::constant;
  std::map<std::string, double> params_;
  std::vector<LyapunovSpec> children_;
  std::vector<double> exponents_;
};

inline double tv_norm(const Eigen::VectorXd& mu) { return mu.cwiseAbs().sum() / 2; }
inline double tv_norm(const MeasureVec& mu) { return tv_norm(mu.masses); }

inline double v_norm_measure(const Eigen::VectorXd& mu, const Eigen::VectorXd& V) {
  if (mu.size() != V.size()) throw error("v_norm_measure: size mismatch");
  if (!V.allFinite()) throw error("v_norm_measure: non-finite V value");
  return mu.cwiseAbs().dot(V);
}
inline double v_norm_measure(const MeasureVec& mu, const FunctionVec& V) {
  check_same(mu.grid, V.grid, mu.size(), V.size());
  return v_norm_measure(mu.masses, V.values);
}
inline double v_norm_measure(const MeasureVec& mu, const LyapunovSpec& V) {
  if (!mu.grid) throw error("v_norm_measure: measure has no grid to evaluate V on");
  return v_norm_measure(mu.masses, V.on(mu.grid).values);
}

// max_i (Q V)_i / V_i
inline double v_operator_norm(const Eigen::MatrixXd& Q, const Eigen::VectorXd& V) {
  if (Q.cols() != V.size() || Q.rows() != V.size()) throw error("v_operator_norm: shape mismatch");
  return ((Q * V).array() / V.array()).maxCoeff();
}
inline double v_operator_norm(const DiscreteOperator& Q, const FunctionVec& V) {
  check_same(Q.grid, V.grid, Q.size(), V.size());
  return v_operator_norm(Q.matrix, V.values);
}
inline double v_operator_norm(const DiscreteOperator& Q, const LyapunovSpec& V) {
  if (!Q.grid) throw error("v_operator_norm: operator has no grid");
  return v_operator_norm(Q.matrix, V.on(Q.grid).values);
}

// Operator V-norm of a signed matrix: max_i sum_j |K_ij| V_j / V_i.
inline double v_operator_norm_signed(const Eigen::MatrixXd& K, const Eigen::VectorXd& V) {
  return ((K.cwiseAbs() * V).array() / V.array()).maxCoeff();
}

inline Eigen::VectorXd boltzmann_gibbs(const Eigen::VectorXd& h, const Eigen::VectorXd& mu) {
  if (h.size() != mu.size()) throw error("boltzmann_gibbs: size mismatch");
  double z = mu.dot(h);
  if (!(z > 0)) throw error("boltzmann_gibbs: degenerate normalization, mu(h) <= 0");
  Eigen::VectorXd out = h.cwiseProduct(mu) / z;
  return out / out.sum();
}
inline MeasureVec boltzmann_gibbs(const FunctionVec& h, const MeasureVec& mu) {
  check_same(h.grid, mu.grid, h.size(), mu.size());
  return {boltzmann_gibbs(h.values, mu.masses), mu.grid};
}

struct CouplingResult {
  bool coupled = false;
  Eigen::VectorXd witness;
  double tv = 0;
};

inline bool is_probability(const Eigen::VectorXd& m, double tol = 1e-9) {
  return (m.array() >= -tol).all() && std::abs(m.sum() - 1) <= tol;
}

inline CouplingResult coupling_equivalence(const Eigen::VectorXd& mu1, const Eigen::VectorXd& mu2, double eps) {
  if (mu1.size() != mu2.size()) throw error("coupling_equivalence: size mismatch");
  if (!is_probability(mu1) || !is_probability(mu2)) throw error("coupling_equivalence: inputs must be probabilities");
  if (!(eps > 0 && eps <= 1)) throw error("coupling_equivalence: eps must lie in (0,1]");
  CouplingResult r;
  r.tv = tv_norm(Eigen::VectorXd(mu1 - mu2));
  if (r.tv > 1 - eps + 1e-12) return r;
  Eigen::VectorXd m = mu1.cwiseMin(mu2);
  r.coupled = true;
  r.witness = m / m.sum();
  return r;
}

}  // namespace fkstab

#endif

#ifndef FKSTAB_TOOLS_EXPERIMENT_HPP
#define FKSTAB_TOOLS_EXPERIMENT_HPP

#include <json.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "fkstab/contraction.hpp"
#include "fkstab/fixtures.hpp"
#include "fkstab/geometry.hpp"
#include "fkstab/riccati.hpp"
#include "fkstab/simulate.hpp"
#include "fkstab/spectral.hpp"
#include "fkstab/subgeometric.hpp"

namespace fkstab::cli {

using json = nlohmann::ordered_json;

// Bad config or usage; exit code 1.
class config_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline std::string join_path(const std::string& path, const std::string& key) { return path + "/" + key; }

// A config object together with its schema path.
class Node {
 public:
  Node(const json& j, std::string path) : j_(&j), path_(std::move(path)) {
    if (!j.is_object()) throw config_error(where() + ": expected an object");
  }

  const std::string& path() const { return path_; }
  std::string where() const { return path_.empty() ? "/" : path_; }

  void allow(const std::set<std::string>& keys) const {
    for (auto it = j_->begin(); it != j_->end(); ++it)
      if (!keys.count(it.key())) throw config_error(join_path(path_, it.key()) + ": unknown key");
  }
  bool has(const std::string& k) const { return j_->contains(k); }
  const json& raw(const std::string& k) const {
    if (!has(k)) throw config_error(join_path(path_, k) + ": required key missing");
    return j_->at(k);
  }

  double num(const std::string& k) const {
    const auto& v = raw(k);
    if (!v.is_number()) throw config_error(join_path(path_, k) + ": expected a number");
    return v.get<double>();
  }
  double num(const std::string& k, double def) const { return has(k) ? num(k) : def; }
  long integer(const std::string& k, long def) const {
    if (!has(k)) return def;
    const auto& v = raw(k);
    if (!v.is_number_integer()) throw config_error(join_path(path_, k) + ": expected an integer");
    return v.get<long>();
  }
  bool flag(const std::string& k, bool def) const {
    if (!has(k)) return def;
    if (!raw(k).is_boolean()) throw config_error(join_path(path_, k) + ": expected true or false");
    return raw(k).get<bool>();
  }
  std::string str(const std::string& k) const {
    const auto& v = raw(k);
    if (!v.is_string()) throw config_error(join_path(path_, k) + ": expected a string");
    return v.get<std::string>();
  }
  std::string str(const std::string& k, const std::string& def) const { return has(k) ? str(k) : def; }
  Node child(const std::string& k) const { return Node(raw(k), join_path(path_, k)); }
  std::optional<Node> maybe(const std::string& k) const {
    if (!has(k)) return std::nullopt;
    return child(k);
  }

  Eigen::VectorXd vec(const std::string& k) const {
    const auto& v = raw(k);
    if (v.is_number()) return Eigen::VectorXd::Constant(1, v.get<double>());
    if (!v.is_array() || v.empty()) throw config_error(join_path(path_, k) + ": expected a number array");
    Eigen::VectorXd out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (!v[i].is_number()) throw config_error(join_path(path_, k) + "/" + std::to_string(i) + ": expected a number");
      out(i) = v[i].get<double>();
    }
    return out;
  }
  // A number (1x1) or an array of equal-length rows.
  Eigen::MatrixXd matrix(const std::string& k) const {
    const auto& v = raw(k);
    std::string p = join_path(path_, k);
    if (v.is_number()) return Eigen::MatrixXd::Constant(1, 1, v.get<double>());
    if (!v.is_array() || v.empty() || !v[0].is_array()) throw config_error(p + ": expected a matrix (array of rows)");
    Eigen::MatrixXd M(v.size(), v[0].size());
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (!v[i].is_array() || v[i].size() != v[0].size()) throw config_error(p + "/" + std::to_string(i) + ": ragged row");
      for (std::size_t j = 0; j < v[i].size(); ++j) {
        if (!v[i][j].is_number())
          throw config_error(p + "/" + std::to_string(i) + "/" + std::to_string(j) + ": expected a number");
        M(i, j) = v[i][j].get<double>();
      }
    }
    return M;
  }

 private:
  const json* j_;
  std::string path_;
};

struct Assertion {
  std::string name;
  double lhs = 0, rhs = 0;  // pass iff lhs <= rhs
  bool pass = false;
};

struct Curve {
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;
};

struct Report {
  std::string command;
  json inputs;
  json results = json::object();
  std::vector<Assertion> assertions;
  std::optional<Curve> curve;
  std::string key;  // headline result for the summary line

  void check(const std::string& name, double lhs, double rhs) {
    assertions.push_back({name, lhs, rhs, lhs <= rhs});
  }
  bool passed() const {
    return std::all_of(assertions.begin(), assertions.end(), [](const Assertion& a) { return a.pass; });
  }
};

struct Overrides {
  std::optional<std::string> out;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
};

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.16e", v);
  return buf;
}

inline json to_json(const Eigen::VectorXd& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

inline json to_json(const Eigen::MatrixXd& M) {
  json a = json::array();
  for (Eigen::Index i = 0; i < M.rows(); ++i) a.push_back(to_json(Eigen::VectorXd(M.row(i).transpose())));
  return a;
}

// JSON with every float in 17-significant-digit scientific notation.
inline void write_json(std::ostream& os, const json& j, int indent = 0) {
  std::string pad(indent, ' '), inner(indent + 2, ' ');
  switch (j.type()) {
    case json::value_t::object: {
      if (j.empty()) {
        os << "{}";
        return;
      }
      os << "{\n";
      bool first = true;
      for (auto it = j.begin(); it != j.end(); ++it) {
        if (!first) os << ",\n";
        first = false;
        os << inner << json(it.key()).dump() << ": ";
        write_json(os, it.value(), indent + 2);
      }
      os << "\n" << pad << "}";
      return;
    }
    case json::value_t::array: {
      if (j.empty()) {
        os << "[]";
        return;
      }
      bool flat = std::none_of(j.begin(), j.end(), [](const json& e) { return e.is_structured(); });
      os << "[";
      if (!flat) os << "\n" << inner;
      for (std::size_t i = 0; i < j.size(); ++i) {
        if (i) os << (flat ? ", " : ",\n" + inner);
        write_json(os, j[i], indent + 2);
      }
      if (!flat) os << "\n" << pad;
      os << "]";
      return;
    }
    case json::value_t::number_float: {
      double v = j.get<double>();
      if (!std::isfinite(v))
        os << json(std::isnan(v) ? "nan" : (v > 0 ? "inf" : "-inf")).dump();
      else
        os << format_double(v);
      return;
    }
    default: os << j.dump();
  }
}

inline std::string render_json(const Report& r) {
  json doc = json::object();
  doc["inputs"] = r.inputs;
  doc["results"] = r.results;
  json as = json::array();
  for (const auto& a : r.assertions) as.push_back({{"name", a.name}, {"lhs", a.lhs}, {"rhs", a.rhs}, {"pass", a.pass}});
  doc["assertions"] = as;
  std::ostringstream os;
  write_json(os, doc);
  os << "\n";
  return os.str();
}

inline std::string render_csv(const Curve& c) {
  std::ostringstream os;
  for (std::size_t i = 0; i < c.columns.size(); ++i) os << (i ? "," : "") << c.columns[i];
  os << "\n";
  for (const auto& row : c.rows) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (!std::isfinite(row[i])) throw error("csv: non-finite value in column " + c.columns[i]);
      os << (i ? "," : "") << format_double(row[i]);
    }
    os << "\n";
  }
  return os.str();
}

// ---- models

struct KernelSetup {
  ClosedFormKernel kernel = ClosedFormKernel::harmonic();
  grid_ptr grid;
  double tau = 0.5;
};

inline std::vector<std::string> kernel_model_names() {
  return {"harmonic", "half_harmonic", "dirichlet_heat", "gauss_ou", "half_harmonic_linear"};
}

inline KernelSetup kernel_setup(const Node& cfg) {
  KernelSetup ks;
  Node model = cfg.child("model");
  model.allow({"name", "params"});
  std::string name = model.str("name");
  json empty = json::object();
  Node params = model.has("params") ? model.child("params") : Node(empty, join_path(model.path(), "params"));
  double lo = -8, hi = 8;
  int n = 400;
  bool open_lo = false, open_hi = false;
  if (name == "harmonic") {
    params.allow({});
    ks.kernel = ClosedFormKernel::harmonic();
  } else if (name == "half_harmonic") {
    params.allow({});
    ks.kernel = ClosedFormKernel::half_harmonic();
    lo = 0, open_lo = true;
  } else if (name == "dirichlet_heat") {
    params.allow({"n_terms"});
    ks.kernel = ClosedFormKernel::dirichlet(static_cast<int>(params.integer("n_terms", 50)));
    lo = 0, hi = 1, n = 200, open_lo = open_hi = true;
  } else if (name == "gauss_ou") {
    params.allow({"A", "Sigma"});
    ks.kernel = ClosedFormKernel::gauss_ou(params.matrix("A"), params.matrix("Sigma"));
    lo = -6, hi = 6;
  } else if (name == "half_harmonic_linear") {
    params.allow({"a", "varsigma"});
    ks.kernel = ClosedFormKernel::half_harmonic_linear(params.num("a"), params.num("varsigma"));
    lo = 0, open_lo = true;
  } else {
    std::string known;
    for (const auto& k : kernel_model_names()) known += (known.empty() ? "" : ", ") + k;
    throw config_error(join_path(model.path(), "name") + ": unknown model '" + name + "' (available: " + known + ")");
  }
  if (auto g = cfg.maybe("grid")) {
    g->allow({"min", "max", "n", "open"});
    lo = g->num("min", lo);
    hi = g->num("max", hi);
    n = static_cast<int>(g->integer("n", n));
    if (g->has("open")) {
      const auto& o = g->raw("open");
      if (!o.is_array() || o.size() != 2 || !o[0].is_boolean() || !o[1].is_boolean())
        throw config_error(join_path(g->path(), "open") + ": expected [bool, bool]");
      open_lo = o[0].get<bool>(), open_hi = o[1].get<bool>();
    }
  }
  ks.grid = make_grid(GridDomain::uniform(lo, hi, n, open_lo, open_hi));
  if (auto t = cfg.maybe("time")) {
    t->allow({"tau", "t_max"});
    ks.tau = t->num("tau", ks.tau);
  }
  return ks;
}

inline std::optional<ClosedFormKernel::ExactSpectrum> exact_spectrum_of(const ClosedFormKernel& k) {
  if (!k.self_adjoint()) return std::nullopt;
  return k.exact_spectrum();
}

// Markov operator: Q itself or its h-transform by the leading eigentriple.
inline DiscreteOperator markov_operator(const DiscreteOperator& Q, json& results) {
  if (Q.markov) return Q;
  auto tr = leading_eigentriple(Q);
  if (!tr.converged) throw error("leading eigentriple did not converge; cannot form the h-transform");
  results["rho"] = tr.rho;
  return doob_h_transform(Q, tr.h, tr.rho);
}

inline Eigen::Index nearest_index(const GridDomain& g, double x) {
  Eigen::Index best = 0;
  (g.xs().array() - x).abs().minCoeff(&best);
  return best;
}

// ---- commands

inline void run_eigen(const Node& cfg, Report& rep, int threads) {
  auto ks = kernel_setup(cfg);
  auto Q = discretize(ks.kernel, ks.grid, ks.tau, threads);
  auto tr = leading_eigentriple(Q);
  const auto& g = *ks.grid;
  Eigen::VectorXd w = g.weights();
  double nh = std::sqrt((w.array() * tr.h.array().square()).sum());
  Eigen::VectorXd h = tr.h / nh;
  rep.results["rho"] = tr.rho;
  rep.results["rho_right"] = tr.rho_right;
  rep.results["iterations"] = tr.iterations;
  rep.results["converged"] = tr.converged;
  rep.results["residual"] = std::max(tr.residual_h, tr.residual_eta);
  if (auto ex = exact_spectrum_of(ks.kernel)) {
    Eigen::VectorXd he = g.xs().unaryExpr(ex->h);
    he /= std::sqrt((w.array() * he.array().square()).sum());
    rep.results["rho_exact"] = ex->rho;
    rep.results["rho_error"] = std::abs(tr.rho - ex->rho);
    rep.results["h_l2_error"] = std::sqrt((w.array() * (h - he).array().square()).sum());
  }
  rep.check("power_iteration_converged", std::max(tr.residual_h, tr.residual_eta), 1e-10);
  Curve c{{"x", "value"}, {}};
  for (Eigen::Index i = 0; i < h.size(); ++i) c.rows.push_back({g.xs()(i), h(i)});
  rep.curve = c;
  rep.key = "rho";
}

inline void run_contract(const Node& cfg, Report& rep, int threads) {
  auto ks = kernel_setup(cfg);
  auto V = LyapunovSpec::parse(cfg.str("lyapunov", "poly:4"));
  auto P = markov_operator(discretize(ks.kernel, ks.grid, ks.tau, threads), rep.results);
  auto cert = foster_lyapunov_verify(P, V);
  rep.results["certified"] = cert.ok;
  rep.results["beta_V"] = v_dobrushin(P, V, threads).beta;
  rep.key = "beta_V";
  if (!cert.ok) {
    rep.results["failure"] = cert.failure;
    rep.check("drift_certificate", 1, 0);
    return;
  }
  auto rl = rescaled_lyapunov(cert.epsilon, cert.alpha_r, cert.r, LyapunovSpec::constant(1));
  double beta = v_dobrushin(P.matrix, rl.apply(cert.V_normalized), threads).beta;
  rep.results["epsilon"] = cert.epsilon;
  rep.results["c"] = cert.c;
  rep.results["r"] = cert.r;
  rep.results["alpha_r"] = cert.alpha_r;
  rep.results["alpha_eps"] = rl.alpha_eps;
  rep.results["c_theorem"] = rl.c_theorem;
  rep.results["beta"] = beta;
  rep.key = "beta";
  rep.check("rescaled_contraction", beta, 1 - rl.alpha_eps + 1e-12);
}

inline void run_decay(const Node& cfg, Report& rep, int threads) {
  auto ks = kernel_setup(cfg);
  auto V = LyapunovSpec::parse(cfg.str("lyapunov", "poly:2"));
  auto P = markov_operator(discretize(ks.kernel, ks.grid, ks.tau, threads), rep.results);
  const auto& g = *ks.grid;
  double lo = g.xs().minCoeff(), hi = g.xs().maxCoeff();
  double from = lo + (hi - lo) / 4, to = hi - (hi - lo) / 4;
  int steps = 40;
  if (auto t = cfg.maybe("time"); t && t->has("t_max"))
    steps = std::max(1, static_cast<int>(std::llround(t->num("t_max") / ks.tau)));
  if (auto d = cfg.maybe("decay")) {
    d->allow({"from", "to", "steps"});
    from = d->num("from", from);
    to = d->num("to", to);
    steps = static_cast<int>(d->integer("steps", steps));
  }
  Eigen::VectorXd mu = Eigen::VectorXd::Zero(g.size()), eta = mu;
  mu(nearest_index(g, from)) = 1;
  eta(nearest_index(g, to)) = 1;
  Eigen::VectorXd Vv = V.on(P.grid).values;
  auto cert = foster_lyapunov_verify(P.matrix, Vv);
  auto curve = geometric_decay_curve(P.matrix, Vv, mu, eta, steps, ks.tau, cert.ok ? &cert : nullptr);
  rep.results["rate_per_time"] = curve.rate_per_time;
  rep.results["certified"] = curve.certified;
  if (auto ex = exact_spectrum_of(ks.kernel)) rep.results["spectral_gap"] = -ex->gap_rate;
  if (curve.certified) {
    rep.results["beta"] = curve.beta;
    rep.check("envelope_dominates", curve.dominated ? 0 : 1, 0);
  }
  Curve c{{"t", "value"}, {}};
  for (int t = 0; t <= steps; ++t) c.rows.push_back({t * ks.tau, curve.values(t)});
  rep.curve = c;
  rep.key = "rate_per_time";
}

inline void run_rate(const Node& cfg, Report& rep, int) {
  int n = 200, T = 500;
  double delta = 0.5, regen = 0.02;
  if (auto m = cfg.maybe("model")) {
    m->allow({"name", "params"});
    if (m->str("name") != "subgeometric_chain")
      throw config_error(join_path(m->path(), "name") + ": rate supports model 'subgeometric_chain'");
    if (auto p = m->maybe("params")) {
      p->allow({"n", "delta", "regen"});
      n = static_cast<int>(p->integer("n", n));
      delta = p->num("delta", delta);
      regen = p->num("regen", regen);
    }
  }
  auto ch = subgeometric_test_chain(n, delta, regen);
  double dd = delta, ups = 0.5, k0 = 0.25, k1 = 1;
  if (auto d = cfg.maybe("drift")) {
    d->allow({"delta", "upsilon", "kappa0", "kappa1"});
    dd = d->num("delta", dd), ups = d->num("upsilon", ups), k0 = d->num("kappa0", k0), k1 = d->num("kappa1", k1);
  }
  if (auto t = cfg.maybe("time")) {
    t->allow({"t_max"});
    T = static_cast<int>(t->num("t_max", T));
  }
  auto d = prototype_drift(dd, ups, k0, k1);
  double c = measured_drift_constant(ch.P, ch.V, [&](double v) { return d.phi(v); });
  Eigen::VectorXd mu = Eigen::VectorXd::Zero(n);
  mu(n - 1) = 1;
  mu(0) = -1;
  auto r = polynomial_rate_check(ch.P, ch.V, d, c, mu, T);
  rep.results["chi"] = d.chi;
  rep.results["inverse_chi"] = 1 / d.chi;
  rep.results["drift_constant"] = c;
  rep.results["certified"] = r.certified;
  if (!r.note.empty()) rep.results["note"] = r.note;
  double floor = 1e-12 * r.tv.maxCoeff();
  double slope = loglog_slope(r.tv, std::min(50, T / 10), T, floor);
  int last = T;
  while (last > 0 && !(r.tv(last) > floor)) --last;
  rep.results["fit_last_t"] = last;
  rep.results["tv_loglog_slope"] = slope;
  if (r.certified) rep.check("envelope_dominates", r.dominated ? 0 : 1, 0);
  Curve cv{{"t", "value"}, {}};
  for (int t = 0; t <= T; ++t) cv.rows.push_back({static_cast<double>(t), r.tv(t)});
  rep.curve = cv;
  rep.key = "tv_loglog_slope";
}

inline void run_riccati(const Node& cfg, Report& rep, std::uint64_t seed, int threads) {
  Node rc = cfg.child("riccati");
  std::string kind = rc.str("kind");
  double t_max = 10, dt = 1e-3;
  if (auto t = cfg.maybe("time")) {
    t->allow({"t_max", "dt"});
    t_max = t->num("t_max", t_max);
    dt = t->num("dt", dt);
  }
  if (kind == "scalar") {
    rc.allow({"kind", "a0", "a1", "b", "z0"});
    ScalarRiccati s{rc.num("a0"), rc.num("a1"), rc.num("b")};
    double z0 = rc.num("z0", 0);
    std::vector<double> times;
    for (int k = 0; k <= 100; ++k) times.push_back(t_max * k / 100);
    auto path = scalar_riccati_path(s, z0, times, dt);
    double zinf = s.fixed_point(), worst = 0;
    for (std::size_t k = 1; k < path.size(); ++k)
      worst = std::max(worst, std::abs(path[k] - zinf) - std::abs(path[k - 1] - zinf));
    rep.results["z_final"] = path.back();
    rep.results["z_inf"] = zinf;
    rep.results["distance_to_fixed_point"] = std::abs(path.back() - zinf);
    rep.check("monotone_approach", worst, 1e-12);
    Curve c{{"t", "value"}, {}};
    for (std::size_t k = 0; k < times.size(); ++k) c.rows.push_back({times[k], path[k]});
    rep.curve = c;
    rep.key = "z_final";
  } else if (kind == "matrix") {
    rc.allow({"kind", "A", "R", "S", "p0"});
    MatrixRiccati m{rc.matrix("A"), rc.matrix("R"), rc.matrix("S"), rc.has("p0") ? rc.matrix("p0") : Eigen::MatrixXd()};
    Curve c{{"t", "value"}, {}};
    int every = std::max(1, step_count(t_max, dt) / 100), k = 0;
    auto p = matrix_riccati(m, t_max, dt, [&](double t, const Eigen::MatrixXd& pt) {
      if (k++ % every == 0) c.rows.push_back({t, pt.trace()});
    });
    auto fp = riccati_fixed_point(m, dt);
    rep.results["p_final"] = to_json(p);
    rep.results["p_inf"] = to_json(fp.p);
    rep.results["residual"] = fp.residual;
    rep.results["min_eigenvalue"] = min_eigenvalue(p);
    rep.check("fixed_point_residual", fp.residual, 1e-8);
    rep.check("psd", -min_eigenvalue(p), 1e-8);
    rep.curve = c;
    rep.results["trace_final"] = p.trace();
    rep.key = "trace_final";
  } else if (kind == "coupled") {
    rc.allow({"kind", "A", "Sigma", "S", "x"});
    Eigen::MatrixXd A = rc.matrix("A"), Sig = rc.matrix("Sigma"), S = rc.matrix("S");
    auto co = coupled_oscillator_semigroup(A, Sig, S, rc.vec("x"), t_max, dt);
    auto fp = riccati_fixed_point({A, Sig * Sig.transpose(), S, {}}, dt);
    double rho = -(fp.p * S).trace() / 2;
    rep.results["rho_hat"] = co.rho_hat;
    rep.results["rho_fixed_point"] = rho;
    rep.results["logQ1"] = co.logQ1;
    rep.results["m"] = to_json(co.m);
    rep.check("rho_matches_fixed_point", std::abs(co.rho_hat - rho), 1e-6);
    rep.key = "rho_hat";
  } else if (kind == "birth_death") {
    rc.allow({"kind", "model", "params", "x0", "paths"});
    std::string model = rc.str("model", "logistic");
    Node p = rc.child("params");
    BirthDeathSpec spec;
    if (model == "logistic") {
      p.allow({"lambda_b", "upsilon_b", "lambda_d", "lambda_l", "upsilon_d"});
      spec = BirthDeathSpec::logistic(p.num("lambda_b"), p.num("upsilon_b"), p.num("lambda_d"), p.num("lambda_l"),
                                      p.num("upsilon_d"));
    } else if (model == "multivariate") {
      p.allow({"lambda", "mu", "upsilon", "varsigma", "C", "D"});
      spec = BirthDeathSpec::multivariate(p.vec("lambda"), p.vec("mu"), p.vec("upsilon"), p.vec("varsigma"),
                                          p.matrix("C"), p.matrix("D"));
    } else {
      throw config_error(join_path(rc.path(), "model") + ": expected 'logistic' or 'multivariate'");
    }
    Eigen::VectorXd x = rc.vec("x0");
    Eigen::VectorXi x0 = x.unaryExpr([](double v) { return std::round(v); }).cast<int>();
    auto r = bd_moment_bound(spec, x0, t_max, static_cast<int>(rc.integer("paths", 10000)), seed, threads);
    auto maj = spec.majorant();
    rep.results["z_inf"] = maj.fixed_point();
    rep.results["mean_final"] = r.mean.back();
    rep.results["majorant_final"] = r.majorant.back();
    rep.results["truncated"] = r.truncated;
    rep.results["max_state"] = r.max_state;
    rep.check("moment_below_majorant", r.holds ? 0 : 1, 0);
    Curve c{{"t", "value", "stderr"}, {}};
    for (std::size_t k = 0; k < r.times.size(); ++k) c.rows.push_back({r.times[k], r.mean[k], r.stderr_[k]});
    rep.curve = c;
    rep.key = "mean_final";
  } else {
    throw config_error(join_path(rc.path(), "kind") + ": expected scalar, matrix, coupled or birth_death");
  }
}

// A named fixture, {"coeffs": [...], "lo", "hi"} for a curve, or {"terms": [[c, i, j], ...], "lo": [..], "hi": [..]}.
inline MongeSurface surface_from(const Node& gc) {
  double eps = gc.num("epsilon", 1);
  const auto& raw = gc.raw("surface");
  if (raw.is_string()) {
    std::string name = raw.get<std::string>();
    auto names = surface_fixture_names();
    if (std::find(names.begin(), names.end(), name) == names.end()) {
      std::string known;
      for (const auto& k : names) known += (known.empty() ? "" : ", ") + k;
      throw config_error(join_path(gc.path(), "surface") + ": unknown surface '" + name + "' (available: " + known +
                         ")");
    }
    return surface_fixture(name, eps);
  }
  Node sf = gc.child("surface");
  if (sf.has("coeffs")) {
    sf.allow({"coeffs", "lo", "hi"});
    Eigen::VectorXd c = sf.vec("coeffs");
    return polynomial_curve(std::vector<double>(c.data(), c.data() + c.size()), sf.num("lo"), sf.num("hi"), eps);
  }
  sf.allow({"terms", "lo", "hi"});
  Eigen::MatrixXd t = sf.matrix("terms");
  if (t.cols() != 3) throw config_error(join_path(sf.path(), "terms") + ": expected rows [c, i, j]");
  std::vector<PolyTerm> terms;
  for (Eigen::Index r = 0; r < t.rows(); ++r) {
    if (t(r, 1) != std::round(t(r, 1)) || t(r, 2) != std::round(t(r, 2)) || t(r, 1) < 0 || t(r, 2) < 0)
      throw config_error(join_path(sf.path(), "terms") + "/" + std::to_string(r) + ": exponents must be integers >= 0");
    terms.push_back({t(r, 0), static_cast<int>(t(r, 1)), static_cast<int>(t(r, 2))});
  }
  Eigen::VectorXd lo = sf.vec("lo"), hi = sf.vec("hi");
  if (lo.size() != 2 || hi.size() != 2) throw config_error(sf.path() + ": lo and hi need two entries");
  return polynomial_surface(terms, lo, hi, eps);
}

inline void run_geometry(const Node& cfg, Report& rep, int threads) {
  Node gc = cfg.child("geometry");
  gc.allow({"op", "surface", "epsilon", "theta", "point", "alpha", "sigma", "r", "profile"});
  std::string op = gc.str("op");
  auto s = surface_from(gc);
  if (op == "shape") {
    Eigen::VectorXd th = gc.vec("theta");
    if (th.size() != s.m()) throw config_error(join_path(gc.path(), "theta") + ": wrong number of chart coordinates");
    auto f = fundamental_forms(s, th);
    rep.results["point"] = to_json(f.point);
    rep.results["N"] = to_json(f.N);
    rep.results["g"] = to_json(f.g);
    rep.results["Omega"] = to_json(f.Omega);
    rep.results["W"] = to_json(f.W);
    rep.results["principal_curvatures"] = to_json(principal_curvatures(f));
    double res = weingarten_identity_check(s, th);
    rep.results["weingarten_residual"] = res;
    rep.results["trace_W"] = f.W.trace();
    rep.check("weingarten_identity", res, 1e-5);
    rep.key = "trace_W";
  } else if (op == "distance") {
    auto sd = signed_distance(s, gc.vec("point"), gc.num("alpha"));
    rep.results["d"] = sd.d;
    rep.results["foot"] = to_json(sd.foot);
    rep.results["round_trip"] = sd.round_trip;
    rep.check("round_trip", sd.round_trip, 1e-8);
    rep.key = "d";
  } else if (op == "coarea") {
    double p = gc.num("profile", 0);
    auto r = coarea_check(s, [p](double u) { return std::pow(u, p); }, gc.num("alpha"), 16, 32, threads);
    rep.results["alpha"] = r.alpha;
    rep.results["chart_volume"] = r.chart_volume;
    rep.results["coarea_volume"] = r.coarea_volume;
    rep.results["rel_diff"] = r.rel_diff;
    rep.results["shrunk"] = r.shrunk;
    rep.check("two_way_agreement", r.rel_diff, 1e-3);
    rep.key = "rel_diff";
  } else if (op == "level_set") {
    auto k = SubGaussianKernel::gaussian(s.n, gc.num("sigma", 0.5));
    double alpha = gc.num("alpha");
    auto b = level_set_bound(k, s, alpha);
    rep.results["bound"] = b.value;
    rep.results["varpi"] = b.varpi;
    rep.results["iota"] = b.iota;
    rep.results["kappa"] = b.kappa;
    rep.results["kappa_minus"] = b.kappa_minus;
    rep.key = "bound";
    if (gc.has("point")) {
      double r = gc.num("r", alpha / 2);
      double dens = level_set_density(k, s, gc.vec("point"), r, threads);
      rep.results["density"] = dens;
      rep.check("density_below_bound", dens, b.value);
    }
  } else {
    throw config_error(join_path(gc.path(), "op") + ": expected shape, distance, coarea or level_set");
  }
}

inline void run_simulate(const Node& cfg, Report& rep, std::uint64_t seed, int threads) {
  Node sc = cfg.child("simulate");
  sc.allow({"sde", "theta", "sigma", "potential", "interval", "bridge", "x0", "t", "n_particles", "dt", "qsd",
            "period"});
  std::string sde = sc.str("sde", "brownian");
  SDEModel m;
  if (sde == "brownian") {
    m = SDEModel::brownian();
    m.sigma(0, 0) = sc.num("sigma", 1);
  } else if (sde == "ou") {
    m = SDEModel::ou(sc.num("theta", 1), sc.num("sigma", 1));
  } else {
    throw config_error(join_path(sc.path(), "sde") + ": expected brownian or ou");
  }
  AbsorptionSpec a;
  if (sc.has("interval")) {
    Eigen::VectorXd iv = sc.vec("interval");
    if (iv.size() != 2) throw config_error(join_path(sc.path(), "interval") + ": expected [lo, hi]");
    a = AbsorptionSpec::interval(iv(0), iv(1), sc.flag("bridge", true));
  }
  if (sc.has("potential")) a.potential = AbsorptionSpec::quadratic(sc.num("potential")).potential;
  double t = sc.num("t", 1), dt = sc.num("dt", 1e-3);
  int n = static_cast<int>(sc.integer("n_particles", 10000));
  if (sc.flag("qsd", false)) {
    Eigen::VectorXd x0 = sc.vec("x0");
    auto eta0 = [x0](CounterRng&, std::span<double> x) { x[0] = x0(0); };
    auto q = qsd_particle_estimate(m, a, eta0, t, n, static_cast<int>(sc.integer("period", 10)), dt, seed, 0.5, threads);
    rep.results["rho_hat"] = q.rho_hat;
    rep.results["rho_stderr"] = q.rho_stderr;
    rep.results["mean"] = q.mean;
    rep.results["variance"] = q.variance;
    rep.results["resamplings"] = q.resamplings;
    Curve c{{"t", "value"}, {}};
    double span = sc.integer("period", 10) * dt;
    double t0 = t - span * q.log_decrements.size();
    for (std::size_t k = 0; k < q.log_decrements.size(); ++k)
      c.rows.push_back({t0 + (k + 1) * span, q.log_decrements[k] / span});
    rep.curve = c;
    rep.key = "rho_hat";
    return;
  }
  auto est = feynman_kac_estimate(m, a, sc.vec("x0"), t, n, dt, seed, {}, threads, 20);
  rep.results["Q1"] = est.Q1;
  rep.results["Q1_stderr"] = est.Q1_stderr;
  rep.results["alive_fraction"] = est.alive_fraction;
  rep.results["all_dead"] = est.all_dead;
  rep.results["nonfinite"] = est.nonfinite;
  rep.check("finite_paths", static_cast<double>(est.nonfinite), 0);
  Curve c{{"t", "value", "stderr"}, {}};
  for (std::size_t k = 0; k < est.times.size(); ++k) c.rows.push_back({est.times[k], est.mass[k], est.mass_stderr[k]});
  rep.curve = c;
  rep.key = "Q1";
}

inline void run_validate(const Node& cfg, Report& rep, std::uint64_t seed, int threads) {
  MCBudget b;
  b.seed = seed;
  b.threads = threads;
  std::vector<std::string> cases = mc_case_names();
  if (auto v = cfg.maybe("validate")) {
    v->allow({"cases", "n_particles", "dt"});
    b.n_particles = static_cast<int>(v->integer("n_particles", b.n_particles));
    b.dt = v->num("dt", b.dt);
    if (v->has("cases")) {
      const auto& c = v->raw("cases");
      if (!c.is_array()) throw config_error(join_path(v->path(), "cases") + ": expected an array of case names");
      cases.clear();
      for (std::size_t i = 0; i < c.size(); ++i) {
        if (!c[i].is_string())
          throw config_error(join_path(v->path(), "cases") + "/" + std::to_string(i) + ": expected a string");
        auto names = mc_case_names();
        if (std::find(names.begin(), names.end(), c[i].get<std::string>()) == names.end())
          throw config_error(join_path(v->path(), "cases") + "/" + std::to_string(i) + ": unknown case '" +
                             c[i].get<std::string>() + "'");
        cases.push_back(c[i].get<std::string>());
      }
    }
  }
  int passed = 0;
  for (const auto& name : cases) {
    auto r = mc_validate(name, b);
    rep.results[name] = {{"estimate", r.estimate}, {"oracle", r.oracle}, {"stderr", r.stderr_}, {"z", r.z}};
    if (r.band > 0)
      rep.check(name, std::abs(r.estimate - r.oracle), r.band);
    else
      rep.check(name, std::abs(r.z), 3);
    passed += r.pass;
  }
  rep.results["passed"] = passed;
  rep.results["cases"] = static_cast<int>(cases.size());
  rep.key = "passed";
}

inline const std::vector<std::string>& command_names() {
  static const std::vector<std::string> c{"eigen", "contract", "decay", "rate", "riccati", "geometry", "simulate",
                                          "validate"};
  return c;
}

// Executes a config; throws config_error for schema problems and fkstab::error for rejected inputs.
inline Report run_experiment(const json& config, const Overrides& ov = {}) {
  Node cfg(config, "");
  cfg.allow({"command", "model", "grid", "lyapunov", "time", "output", "seed", "threads", "expect", "decay", "drift",
             "riccati", "geometry", "simulate", "validate"});
  Report rep;
  rep.command = cfg.str("command");
  const auto& cmds = command_names();
  if (std::find(cmds.begin(), cmds.end(), rep.command) == cmds.end())
    throw config_error("/command: unknown command '" + rep.command + "'");
  std::set<std::string> section{"decay", "drift", "riccati", "geometry", "simulate", "validate"};
  std::map<std::string, std::set<std::string>> own{
      {"decay", {"decay"}}, {"rate", {"drift"}}, {"riccati", {"riccati"}}, {"geometry", {"geometry"}},
      {"simulate", {"simulate"}}, {"validate", {"validate"}}};
  for (const auto& s : section)
    if (cfg.has(s) && !own[rep.command].count(s))
      throw config_error("/" + s + ": section not used by command '" + rep.command + "'");
  long seed_l = cfg.integer("seed", 1);
  if (seed_l < 0) throw config_error("/seed: must be non-negative");
  std::uint64_t seed = ov.seed ? *ov.seed : static_cast<std::uint64_t>(seed_l);
  int threads = ov.threads ? *ov.threads : static_cast<int>(cfg.integer("threads", 1));
  if (threads < 1) throw config_error("/threads: must be >= 1");
  if (auto o = cfg.maybe("output")) {
    o->allow({"path", "format"});
    std::string fmt = o->str("format", "both");
    if (fmt != "json" && fmt != "csv" && fmt != "both")
      throw config_error("/output/format: expected json, csv or both");
  }
  rep.inputs = config;
  rep.inputs.erase("output");
  rep.inputs["seed"] = seed;
  rep.inputs.erase("threads");

  const auto& c = rep.command;
  if (c == "eigen") run_eigen(cfg, rep, threads);
  else if (c == "contract") run_contract(cfg, rep, threads);
  else if (c == "decay") run_decay(cfg, rep, threads);
  else if (c == "rate") run_rate(cfg, rep, threads);
  else if (c == "riccati") run_riccati(cfg, rep, seed, threads);
  else if (c == "geometry") run_geometry(cfg, rep, threads);
  else if (c == "simulate") run_simulate(cfg, rep, seed, threads);
  else run_validate(cfg, rep, seed, threads);

  if (auto ex = cfg.maybe("expect")) {
    for (auto it = config.at("expect").begin(); it != config.at("expect").end(); ++it) {
      Node e = ex->child(it.key());
      e.allow({"value", "tol"});
      if (!rep.results.contains(it.key()) || !rep.results[it.key()].is_number())
        throw config_error(join_path(ex->path(), it.key()) + ": no numeric result of that name");
      double got = rep.results[it.key()].get<double>();
      rep.check("expect:" + it.key(), std::abs(got - e.num("value")), e.num("tol"));
    }
  }
  return rep;
}

struct Artifacts {
  std::vector<std::filesystem::path> files;
};

inline Artifacts write_artifacts(const json& config, const Report& rep, const Overrides& ov = {}) {
  namespace fs = std::filesystem;
  std::string stem = rep.command, fmt = "both";
  if (config.contains("output")) {
    stem = config["output"].value("path", stem);
    fmt = config["output"].value("format", fmt);
  }
  fs::path base = stem;
  if (ov.out) base = fs::path(*ov.out) / base.filename();
  if (base.has_parent_path()) fs::create_directories(base.parent_path());
  Artifacts a;
  auto put = [&](const fs::path& p, const std::string& text) {
    std::ofstream f(p, std::ios::binary);
    if (!f) throw error("cannot write " + p.string());
    f << text;
    a.files.push_back(p);
  };
  if (fmt != "csv") put(fs::path(base.string() + ".json"), render_json(rep));
  if (fmt != "json" && rep.curve) put(fs::path(base.string() + ".csv"), render_csv(*rep.curve));
  return a;
}

inline std::string summary_line(const Report& rep, double ms) {
  std::ostringstream os;
  os << rep.command;
  if (!rep.key.empty() && rep.results.contains(rep.key)) {
    const auto& v = rep.results[rep.key];
    os << " " << rep.key << "=" << (v.is_number_float() ? format_double(v.get<double>()) : v.dump());
  }
  int failed = std::count_if(rep.assertions.begin(), rep.assertions.end(), [](const Assertion& a) { return !a.pass; });
  os << " assertions=" << rep.assertions.size() - failed << "/" << rep.assertions.size();
  char buf[32];
  std::snprintf(buf, sizeof buf, " (%.1f ms)", ms);
  os << buf;
  return os.str();
}

}  // namespace fkstab::cli

#endif

#include <sys/wait.h>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <unistd.h>

#include "fkstab/contraction.hpp"
#include "fkstab/fixtures.hpp"
#include "fkstab/geometry.hpp"
#include "fkstab/riccati.hpp"
#include "fkstab/simulate.hpp"
#include "fkstab/spectral.hpp"
#include "fkstab/subgeometric.hpp"

using namespace fkstab;
namespace fs = std::filesystem;

namespace {

using clock_type = std::chrono::steady_clock;

double seconds_since(clock_type::time_point t0) {
  return std::chrono::duration<double>(clock_type::now() - t0).count();
}

// Collects sub-checks of one criterion; any failing sub-check fails the criterion.
struct Criterion {
  std::ostringstream detail;
  bool ok = true;

  void require(bool cond, const std::string& what) {
    if (!cond) {
      ok = false;
      detail << " [failed: " << what << "]";
    }
  }
  // Runs fn and requires it to finish within the budget.
  void timed(const std::string& what, double budget, const std::function<void()>& fn) {
    auto t0 = clock_type::now();
    try {
      fn();
    } catch (const std::exception& e) {
      require(false, what + " threw: " + e.what());
    }
    double s = seconds_since(t0);
    char buf[64];
    std::snprintf(buf, sizeof buf, " %s %.2fs", what.c_str(), s);
    detail << buf;
    require(s <= budget, what + " exceeded " + std::to_string(budget) + " s");
  }
  void note(const char* fmt, double v) {
    char buf[128];
    std::snprintf(buf, sizeof buf, fmt, v);
    detail << " " << buf;
  }
};

int failures = 0;

void report(int id, const std::string& name, const std::function<void(Criterion&)>& body) {
  Criterion c;
  auto t0 = clock_type::now();
  try {
    body(c);
  } catch (const std::exception& e) {
    c.require(false, std::string("exception: ") + e.what());
  }
  std::printf("%s criterion %d (%s):%s | total %.2fs\n", c.ok ? "PASS" : "FAIL", id, name.c_str(),
              c.detail.str().c_str(), seconds_since(t0));
  std::fflush(stdout);
  failures += !c.ok;
}

double l2_error(const GridDomain& g, Eigen::VectorXd h, const std::function<double(double)>& exact) {
  Eigen::VectorXd w = g.weights(), he = g.xs().unaryExpr(exact);
  h /= std::sqrt((w.array() * h.array().square()).sum());
  he /= std::sqrt((w.array() * he.array().square()).sum());
  if (h.dot(he) < 0) h = -h;
  return std::sqrt((w.array() * (h - he).array().square()).sum());
}

void eigen_recovery(Criterion& c) {
  struct Case {
    const char* name;
    ClosedFormKernel k;
    GridDomain g;
    double exact, tol;
  };
  std::vector<Case> cases{
      {"harmonic", ClosedFormKernel::harmonic(), GridDomain::uniform(-8, 8, 400), -0.5, 1e-3},
      {"dirichlet", ClosedFormKernel::dirichlet(50), GridDomain::uniform(0, 1, 200, true, true), -M_PI * M_PI / 2,
       1e-2},
      {"half_harmonic", ClosedFormKernel::half_harmonic(), GridDomain::uniform(0, 8, 400, true, false), -1.5, 5e-3},
  };
  for (auto& cs : cases) {
    c.timed(cs.name, 10, [&] {
      auto g = make_grid(cs.g);
      auto tr = leading_eigentriple(discretize(cs.k, g, 0.5));
      c.require(tr.converged, std::string(cs.name) + " power iteration converged");
      double err = std::abs(tr.rho - cs.exact);
      c.note("|drho|=%.2e", err);
      c.require(err <= cs.tol, std::string(cs.name) + " eigenvalue");
      if (std::string(cs.name) == "harmonic") {
        double e = l2_error(*g, tr.h, [](double x) { return std::pow(M_PI, -0.25) * std::exp(-x * x / 2); });
        c.note("h_L2=%.2e", e);
        c.require(e <= 1e-3, "harmonic ground state L2 error");
      }
    });
  }
}

void kernel_identities(Criterion& c) {
  c.timed("all", 5, [&] {
    double worst = 0;
    for (double t : {0.5, 1.0, 2.0})
      for (int i = 0; i <= 80; ++i)
        for (int j = 0; j <= 80; ++j) {
          double x = -4 + 0.1 * i, y = -4 + 0.1 * j;
          worst = std::max(worst, std::abs(hermite_series_kernel(t, x, y, 40) - mehler_kernel(t, x, y)));
        }
    c.note("mehler_vs_hermite=%.2e", worst);
    c.require(worst <= 1e-8, "Mehler vs Hermite series");
    auto ck = [](const ClosedFormKernel& k, const GridDomain& gd, double t) {
      auto g = make_grid(gd);
      auto Q = discretize(k, g, t), Q2 = discretize(k, g, 2 * t);
      return (Q.matrix * Q.matrix - Q2.matrix).cwiseAbs().maxCoeff();
    };
    double e1 = ck(ClosedFormKernel::harmonic(), GridDomain::uniform(-8, 8, 400), 0.5);
    double e2 = ck(ClosedFormKernel::dirichlet(50), GridDomain::uniform(0, 1, 200, true, true), 0.05);
    double e3 = ck(ClosedFormKernel::half_harmonic(), GridDomain::uniform(0, 8, 400, true, false), 0.5);
    c.note("ck_harmonic=%.2e", e1);
    c.note("ck_dirichlet=%.2e", e2);
    c.note("ck_half=%.2e", e3);
    c.require(std::max({e1, e2, e3}) <= 1e-4, "Chapman-Kolmogorov");
  });
}

Eigen::MatrixXd random_matrix(std::mt19937_64& rng, int n) {
  std::normal_distribution<double> nd;
  Eigen::MatrixXd M(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) M(i, j) = nd(rng);
  return M;
}

void riccati_checks(Criterion& c) {
  c.timed("scalar", 30, [&] {
    std::mt19937_64 rng(301);
    std::uniform_real_distribution<double> u(0.1, 3.0), s(-2.0, 2.0);
    double worst = 0;
    for (int k = 0; k < 20; ++k) {
      ScalarRiccati r{u(rng), s(rng), u(rng)};
      double zinf = (r.a1 + std::sqrt(r.a1 * r.a1 + 4 * r.a0 * r.b)) / (2 * r.b);
      worst = std::max(worst, std::abs(scalar_riccati(r, 5 * u(rng), 60) - zinf));
    }
    c.note("scalar=%.2e", worst);
    c.require(worst <= 1e-8, "scalar Riccati reaches z_inf");
  });
  c.timed("tanh", 30, [&] {
    MatrixRiccati m{Eigen::MatrixXd::Zero(1, 1), Eigen::MatrixXd::Ones(1, 1), Eigen::MatrixXd::Ones(1, 1), {}};
    double worst = 0;
    matrix_riccati(m, 5, 1e-3, [&](double t, const Eigen::MatrixXd& p) {
      worst = std::max(worst, std::abs(p(0, 0) - std::tanh(t)));
    });
    c.note("tanh=%.2e", worst);
    c.require(worst <= 1e-8, "p_t = tanh t");
  });
  c.timed("coupled", 30, [&] {
    std::mt19937_64 rng(302);
    for (int attempt = 0;; ++attempt) {
      Eigen::MatrixXd A = random_matrix(rng, 2), Sg = random_matrix(rng, 2), Sh = random_matrix(rng, 2);
      Eigen::MatrixXd S = Sh * Sh.transpose();
      if (controllability_rank(A, Sg) < 2 || controllability_rank(A.transpose(), psd_sqrt(S)) < 2) continue;
      Eigen::VectorXd x(2);
      x << 1, -1;
      auto r = coupled_oscillator_semigroup(A, Sg, S, x, 40);
      auto fp = riccati_fixed_point({A, Sg * Sg.transpose(), S, {}});
      double e = std::abs(r.rho_hat + (fp.p * S).trace() / 2);
      c.note("coupled=%.2e", e);
      c.require(e <= 1e-6, "coupled rho_hat = -Tr(p S)/2");
      break;
    }
    Eigen::MatrixXd one = Eigen::MatrixXd::Ones(1, 1);
    auto h = coupled_oscillator_semigroup(one * 0, one, one, Eigen::VectorXd::Constant(1, 0.7), 30);
    c.note("n1=%.2e", std::abs(h.rho_hat + 0.5));
    c.require(std::abs(h.rho_hat + 0.5) <= 1e-6, "n=1 reduction gives -1/2");
  });
}

void contraction_suite(Criterion& c) {
  c.timed("all", 30, [&] {
    std::mt19937_64 rng(401);
    std::uniform_real_distribution<double> u(0.05, 3.0);
    int held = 0;
    for (int k = 0; k < 200; ++k) {
      auto ch = random_certified_chain(rng);
      Eigen::VectorXd Vn = normalize_drift(ch.V, ch.eps, ch.c);
      double r_eps = 1 / (1 - ch.eps);
      double r = std::max(r_eps * (1 + u(rng)), Vn.minCoeff());
      if (r <= r_eps) r = r_eps * 1.01;
      double alpha = local_minorization(ch.P, Vn, r);
      if (!(alpha > 0)) continue;
      auto rl = rescaled_lyapunov(ch.eps, alpha, r, LyapunovSpec::constant(1));
      held += v_dobrushin(ch.P, rl.apply(Vn)).beta <= 1 - rl.alpha_eps + 1e-12;
    }
    c.note("held=%.0f/200", held);
    c.require(held == 200, "beta <= 1 - alpha on all chains");

    auto Q = discretize(ClosedFormKernel::harmonic(), make_grid(GridDomain::uniform(-8, 8, 400)), 0.5);
    auto tr = leading_eigentriple(Q);
    auto P = doob_h_transform(Q, tr.h, tr.rho);
    auto V = LyapunovSpec::poly(2).on(Q.grid).values;
    const auto& g = *Q.grid;
    Eigen::VectorXd mu = Eigen::VectorXd::Zero(g.size()), eta = mu;
    Eigen::Index im = 0, ip = 0;
    (g.xs().array() + 2).abs().minCoeff(&im);
    (g.xs().array() - 2).abs().minCoeff(&ip);
    mu(im) = 1;
    eta(ip) = 1;
    auto curve = geometric_decay_curve(P.matrix, V, mu, eta, 40, 0.5);
    c.note("mehler_rate=%.4f", curve.rate_per_time);
    c.require(std::abs(curve.rate_per_time - 1.0) <= 0.1, "decay rate within 10% of the gap");
  });
}

void subgeometric_suite(Criterion& c) {
  c.timed("all", 30, [&] {
    std::mt19937_64 rng(501);
    std::uniform_real_distribution<double> w(0.0, 1.0);
    auto vs = [](double v) { return 0.3 * std::pow(v, 1.5); };
    auto b = ode_majorant(1.0, vs, 40);
    int bad = 0;
    for (int k = 0; k < 500; ++k) {
      double u = 1.0;
      for (int t = 1; t <= 40; ++t) {
        u = std::max(1e-300, u - std::min(vs(u) * (1 + 2 * w(rng)), u * 0.999));
        bad += u > b(t) * (1 + 1e-9);
      }
    }
    c.note("majorant_violations=%.0f", bad);
    c.require(bad == 0, "ODE majorant on 500 sequences");

    auto ch = subgeometric_test_chain();
    auto d = prototype_drift(0.5, 0.5, 0.25, 1.0);
    c.require(std::abs(d.chi - 2) < 1e-12, "test chain drift has chi = 2");
    double cc = measured_drift_constant(ch.P, ch.V, [&](double v) { return d.phi(v); });
    Eigen::VectorXd mu = Eigen::VectorXd::Zero(ch.V.size());
    mu(ch.V.size() - 1) = 1;
    mu(0) = -1;
    auto rep = polynomial_rate_check(ch.P, ch.V, d, cc, mu, 500);
    c.require(rep.certified, "polynomial chain certified: " + rep.note);
    c.require(rep.dominated, "envelope dominates");
    double slope = loglog_slope(rep.tv, 50, 500, 1e-12 * rep.tv.maxCoeff());
    c.note("tv_slope=%.3f", slope);
    c.require(slope <= -0.4, "log-log tv slope");

    for (auto [n, i] : std::vector<std::pair<int, int>>{{4, 2}, {4, 3}, {5, 4}}) {
      auto p = prototype_drift((n - 1.0) / n, (i - 1.0) / (n - 1), 1, 1);
      c.require(std::abs(1 / p.chi - (i - 1)) <= 1e-12, "1/chi = i-1 at n=" + std::to_string(n));
    }
  });
}

void geometry_suite(Criterion& c) {
  c.timed("all", 10, [&] {
    std::mt19937_64 rng(601);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    auto theta = [&](const MongeSurface& s) {
      Eigen::VectorXd th(s.m());
      for (int i = 0; i < s.m(); ++i) th(i) = s.lo(i) + (s.hi(i) - s.lo(i)) * (0.025 + 0.95 * u(rng));
      return th;
    };
    double wres = 0, lres = 0;
    for (const char* name : {"parabola", "paraboloid"}) {
      auto s = surface_fixture(name);
      for (int k = 0; k < 100; ++k) {
        Eigen::VectorXd th = theta(s);
        wres = std::max(wres, weingarten_identity_check(s, th));
        double h = 1e-4;
        double dlog = (std::log(offset_jacobian(s, th, h)) - std::log(offset_jacobian(s, th, -h))) / (2 * h);
        lres = std::max(lres, std::abs(dlog + fundamental_forms(s, th).W.trace()));
      }
    }
    c.note("weingarten=%.2e", wres);
    c.note("offset_logdet=%.2e", lres);
    c.require(wres <= 1e-5, "Weingarten residual");
    c.require(lres <= 1e-6, "offset log-derivative");

    BoundaryProfile prof{0.5, 0.2};
    auto co = coarea_check(surface_fixture("parabola"), [&](double r) { return prof.chi(r); }, 0.2);
    c.note("coarea=%.2e", co.rel_diff);
    c.require(co.rel_diff <= 1e-3, "co-area two-way agreement");

    auto center = surface_fixture("graph_example_8_4");
    double cross = 0;
    for (double branch : {1.0, -1.0}) {
      auto side = parabola_side_chart(branch, 1, 50, 1);
      for (double th : {1.1, 1.5, 2.0, 3.0, 3.9}) {
        Eigen::VectorXd a = Eigen::VectorXd::Constant(1, th), bb = Eigen::VectorXd::Constant(1, -branch * std::sqrt(th));
        auto es = principal_curvatures(fundamental_forms(side, a));
        auto ec = principal_curvatures(fundamental_forms(center, bb));
        cross = std::max(cross, std::abs(std::abs(es(0)) - std::abs(ec(0))));
      }
    }
    c.note("cross_chart=%.2e", cross);
    c.require(cross <= 1e-8, "cross-chart eigenvalues");
  });
}

void monte_carlo(Criterion& c) {
  MCBudget b{100000, 1e-3, 1, 1};
  for (const auto& name : mc_case_names()) {
    c.timed(name, 60, [&] {
      auto r = mc_validate(name, b);
      if (r.band > 0)
        c.note("|err|=%.3g", std::abs(r.estimate - r.oracle));
      else
        c.note("z=%.2f", r.z);
      c.require(r.pass, name);
    });
  }
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), {}};
}

int run_cli(const fs::path& cfg, const fs::path& out) {
  std::string cmd = std::string(FKSTAB_CLI_PATH) + " run " + cfg.string() + " --out " + out.string() + " > /dev/null";
  int st = std::system(cmd.c_str());
  return WIFEXITED(st) ? WEXITSTATUS(st) : -1;
}

void determinism(Criterion& c) {
  fs::path root = fs::temp_directory_path() / ("fkstab_acceptance_" + std::to_string(::getpid()));
  fs::remove_all(root);
  fs::create_directories(root);
  std::ofstream(root / "validate_small.json")
      << R"({"command":"validate","validate":{"n_particles":20000,"dt":1e-3},"seed":5,"output":{"path":"validate_small"}})";
  std::vector<fs::path> configs;
  for (const char* n : {"eigen_harmonic", "eigen_dirichlet", "riccati_tanh", "riccati_coupled", "riccati_logistic",
                        "contract_mehler", "decay_mehler", "rate_polynomial", "geometry_shape", "geometry_coarea",
                        "simulate_harmonic"})
    configs.push_back(fs::path(FKSTAB_CONFIG_DIR) / (std::string(n) + ".json"));
  configs.push_back(root / "validate_small.json");
  int files = 0, same = 0;
  for (const auto& cfg : configs) {
    int ra = run_cli(cfg, root / "a"), rb = run_cli(cfg, root / "b");
    c.require(ra == rb && (ra == 0 || ra == 2), cfg.filename().string() + " ran");
    for (const char* ext : {".json", ".csv"}) {
      fs::path a = root / "a" / (cfg.stem().string() + ext), bb = root / "b" / (cfg.stem().string() + ext);
      if (!fs::exists(a)) continue;
      ++files;
      bool eq = fs::exists(bb) && slurp(a) == slurp(bb);
      same += eq;
      c.require(eq, a.filename().string() + " byte-identical");
    }
  }
  c.note("identical_files=%.0f", same);
  c.note("of=%.0f", files);
  c.require(files >= configs.size(), "every config produced an artifact");
  fs::remove_all(root);
}

}  // namespace

int main() {
  report(1, "eigenvalue recovery", eigen_recovery);
  report(2, "kernel identities", kernel_identities);
  report(3, "Riccati", riccati_checks);
  report(4, "contraction suite", contraction_suite);
  report(5, "subgeometric suite", subgeometric_suite);
  report(6, "geometry suite", geometry_suite);
  report(7, "Monte Carlo validation", monte_carlo);
  report(8, "determinism", determinism);
  std::printf("%d of 8 criteria passed\n", 8 - failures);
  return failures == 0 ? 0 : 1;
}

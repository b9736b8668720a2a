#include <CLI11.hpp>

#include <iostream>

#include "experiment.hpp"

using namespace fkstab;

namespace {

int run(const std::string& path, const cli::Overrides& ov) {
  std::ifstream in(path);
  if (!in) {
    std::cerr << "error: cannot open config " << path << "\n";
    return 1;
  }
  cli::json config;
  try {
    config = cli::json::parse(in);
  } catch (const cli::json::parse_error& e) {
    std::cerr << "error: " << path << ": malformed JSON: " << e.what() << "\n";
    return 1;
  }
  auto start = std::chrono::steady_clock::now();
  cli::Report rep;
  try {
    rep = cli::run_experiment(config, ov);
    cli::write_artifacts(config, rep, ov);
  } catch (const cli::config_error& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  std::cout << cli::summary_line(rep, ms) << "\n";
  for (const auto& a : rep.assertions)
    if (!a.pass) std::cout << "  FAILED " << a.name << ": " << cli::format_double(a.lhs) << " > "
                           << cli::format_double(a.rhs) << "\n";
  return rep.passed() ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Feynman-Kac stability experiments"};
  app.require_subcommand(1);

  std::string config;
  cli::Overrides ov;
  std::string out;
  std::uint64_t seed = 0;
  int threads = 0;
  auto* run_cmd = app.add_subcommand("run", "run an experiment config");
  run_cmd->add_option("config", config, "config.json")->required();
  auto* out_opt = run_cmd->add_option("--out", out, "output directory");
  auto* seed_opt = run_cmd->add_option("--seed", seed, "random seed");
  auto* threads_opt = run_cmd->add_option("--threads", threads, "worker threads")->check(CLI::PositiveNumber);

  auto* models = app.add_subcommand("list-models", "list model, surface and SDE names");
  auto* cases = app.add_subcommand("list-cases", "list Monte Carlo validation cases");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  if (*run_cmd) {
    if (*out_opt) ov.out = out;
    if (*seed_opt) ov.seed = seed;
    if (*threads_opt) ov.threads = threads;
    return run(config, ov);
  }
  if (*models) {
    std::cout << "kernels:";
    for (const auto& m : cli::kernel_model_names()) std::cout << " " << m;
    std::cout << "\nchains: subgeometric_chain\nriccati: scalar matrix coupled birth_death\nsurfaces:";
    for (const auto& s : surface_fixture_names()) std::cout << " " << s;
    std::cout << "\nsde: brownian ou\n";
    return 0;
  }
  if (*cases) {
    for (const auto& c : mc_case_names()) std::cout << c << "\n";
    return 0;
  }
  return 1;
}

#include "experiment.hpp"

#include <CLI11.hpp>

#include <iostream>

using namespace psvn;

namespace {

struct Flags {
  std::string config;
  std::vector<std::string> methods;
  std::vector<Index> dims;
  std::vector<Index> particles;
  int trials = 0;
  std::uint64_t seed = 0;
  int workers = 0;
  double eps_lambda = 0.0;
  std::string output;
};

void add_common(CLI::App* cmd, Flags& f) {
  cmd->add_option("config", f.config, "JSON experiment config (or a manifest.json to rerun)");
  cmd->add_option("--method", f.methods, "psvn, svn or svgd; repeat or comma-separate")->delimiter(',');
  cmd->add_option("--dim", f.dims, "node counts d; repeat or comma-separate")->delimiter(',');
  cmd->add_option("--particles", f.particles, "ensemble sizes N; repeat or comma-separate")->delimiter(',');
  cmd->add_option("--trials", f.trials, "independent trials per (method, d, N)");
  cmd->add_option("--seed", f.seed, "base seed; trial t uses seed + t");
  cmd->add_option("--workers", f.workers, "worker threads for pSVN");
  cmd->add_option("--eps-lambda", f.eps_lambda, "eigenvalue truncation tolerance");
  cmd->add_option("--output", f.output, "output directory");
}

cli::ExperimentConfig resolve(CLI::App* cmd, const Flags& f) {
  cli::ExperimentConfig c;
  if (!f.config.empty()) c = cli::load_config(f.config);
  cli::Overrides o;
  if (cmd->count("--method")) o.methods = f.methods;
  if (cmd->count("--dim")) o.dims = f.dims;
  if (cmd->count("--particles")) o.particles = f.particles;
  if (cmd->count("--trials")) o.trials = f.trials;
  if (cmd->count("--seed")) o.seed = f.seed;
  if (cmd->count("--workers")) o.workers = f.workers;
  if (cmd->count("--eps-lambda")) o.eps_lambda = f.eps_lambda;
  if (cmd->count("--output")) o.output = f.output;
  cli::apply_overrides(c, o);
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Projected Stein variational Newton: experiment driver"};
  app.require_subcommand(1);
  Flags run_f, eigen_f, oracle_f;
  auto* run = app.add_subcommand("run", "run transport experiments and write CSVs and a manifest");
  auto* eigen = app.add_subcommand("eigen", "subspace eigenvalue report");
  auto* oracle = app.add_subcommand("oracle", "reference moments (analytic or pCN)");
  auto* check = app.add_subcommand("check", "invariant smoke suite");
  add_common(run, run_f);
  add_common(eigen, eigen_f);
  add_common(oracle, oracle_f);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*run) cli::run_experiment(resolve(run, run_f), std::cout);
    if (*eigen) cli::run_eigen(resolve(eigen, eigen_f), std::cout);
    if (*oracle) cli::run_oracle(resolve(oracle, oracle_f), std::cout);
    if (*check) return cli::run_check(std::cout) ? 0 : 1;
  } catch (const ConfigInvalid& e) {
    std::cerr << "invalid configuration: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "run failed: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

// dtdlab: command-line driver for distributed TD(lambda) experiments.

#include "dtdlab/harness.hpp"
#include "dtdlab/io.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

namespace {

using namespace dtdlab;

struct Overrides {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::vector<double> lambdas;
  std::optional<std::size_t> steps;
  std::optional<std::size_t> threads;
};

void add_common(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--config", o.config, "JSON experiment configuration")->required()->check(CLI::ExistingFile);
  cmd->add_option("--seed", o.seed, "override base_seed");
  cmd->add_option("--out", o.out, "override the output directory");
  cmd->add_option("--lambda", o.lambdas, "override the lambda list (repeatable)");
  cmd->add_option("--steps", o.steps, "override the number of iterations");
  cmd->add_option("--threads", o.threads, "worker threads (0: all cores)");
}

RunConfig load(const Overrides& o) {
  RunConfig cfg = load_config(o.config);
  if (o.seed) cfg.base_seed = *o.seed;
  if (o.out) cfg.out_dir = *o.out;
  if (!o.lambdas.empty()) {
    for (double l : o.lambdas)
      if (!(l >= 0.0 && l <= 1.0)) throw Error("--lambda values must lie in [0, 1]");
    cfg.lambdas = o.lambdas;
  }
  if (o.steps) {
    if (*o.steps < 1) throw Error("--steps must be at least 1");
    cfg.num_steps = *o.steps;
  }
  if (o.threads) cfg.threads = *o.threads;
  return cfg;
}

int cmd_run(const Overrides& o) {
  const RunConfig cfg = load(o);
  const auto result = run_experiment(cfg);
  write_summary(std::cout, cfg, result);
  return result.ok() ? 0 : 1;
}

int cmd_compare(const Overrides& o) {
  const RunConfig cfg = load(o);
  const auto table = compare_schedules(cfg);
  for (std::size_t i = 0; i < table.size(); ++i) {
    const auto& c = table[i];
    std::cout << "lambda " << format_double(c.lambda) << ": constant alpha " << format_double(c.alpha)
              << (c.constant_plateaus ? " plateaus" : " still moving") << "; diminishing alpha0 "
              << format_double(c.alpha0) << (c.diminishing_decreasing ? " decreasing" : " not decreasing") << '\n';
    if (!cfg.out_dir.empty()) {
      std::filesystem::create_directories(cfg.out_dir);
      std::ofstream f(std::filesystem::path(cfg.out_dir) / ("compare_lambda_" + std::to_string(i) + ".csv"));
      if (!f) throw Error("cannot write comparison table");
      write_comparison_csv(f, c);
    } else {
      write_comparison_csv(std::cout, c);
    }
  }
  return 0;
}

int cmd_validate(const Overrides& o) {
  const RunConfig cfg = load(o);
  const Instance inst = build_instance(cfg);
  int status = 0;
  auto report = [&](const std::string& what, const Validation& v) {
    std::cout << what << ": " << (v.ok ? "ok" : v.describe()) << '\n';
    if (!v.ok) status = 1;
  };
  report("mdp", inst.mdp.validate());
  report("chain", validate_chain(inst.mdp.chain));
  report("features", validate_features(inst.fm.Phi()));
  report("consensus", validate_consensus(inst.W.W, inst.graph));
  std::cout << "sigma2 " << format_double(inst.W.sigma2) << '\n';
  for (double l : cfg.lambdas) {
    try {
      const auto oracle = build_oracle(inst.mdp, inst.fm, l);
      approximation_quality(oracle, oracle.J, inst.fm, oracle.dist);
      norm_bound_check(oracle, inst.mdp.gamma, l, inst.mdp.reward_bound);
      std::cout << "lambda " << format_double(l) << ": ok, sigma_min " << format_double(oracle.sigma_min) << '\n';
    } catch (const InvariantError& e) {
      std::cout << "lambda " << format_double(l) << ": " << e.what() << '\n';
      status = 1;
    }
  }
  return status;
}

int cmd_oracle(const Overrides& o) {
  const RunConfig cfg = load(o);
  const Instance inst = build_instance(cfg);
  for (double l : cfg.lambdas) write_oracle(std::cout, build_oracle(inst.mdp, inst.fm, l));
  return 0;
}

int cmd_mixing(const Overrides& o, const std::vector<double>& alphas) {
  const RunConfig cfg = load(o);
  const Instance inst = build_instance(cfg);
  write_mixing_table(std::cout, inst.mdp.chain, alphas);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Distributed TD(lambda) simulator and bound checker"};
  app.require_subcommand(1);
  Overrides o;
  auto* run = app.add_subcommand("run", "simulate and check every bound");
  auto* compare = app.add_subcommand("compare", "constant vs diminishing step sizes");
  auto* validate = app.add_subcommand("validate", "validate the instance and its fixed points");
  auto* oracle = app.add_subcommand("oracle", "dump theta*, A and b for each lambda");
  auto* mixing = app.add_subcommand("mixing", "tabulate tau(alpha)");
  for (auto* c : {run, compare, validate, oracle, mixing}) add_common(c, o);
  std::vector<double> alphas{0.5, 0.2, 0.1, 0.05, 0.02, 0.01, 0.005, 0.002, 0.001, 1e-4, 1e-5, 1e-6};
  mixing->add_option("--alpha", alphas, "alpha values to tabulate");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*run) return cmd_run(o);
    if (*compare) return cmd_compare(o);
    if (*validate) return cmd_validate(o);
    if (*oracle) return cmd_oracle(o);
    if (*mixing) return cmd_mixing(o, alphas);
  } catch (const std::exception& e) {
    std::cerr << "dtdlab: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
